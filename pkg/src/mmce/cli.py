"""``mmce`` command-line entry point.

Exit codes: 0 success, 64 usage error, 65 data error, 69 provider
unavailable.  ``validate`` keeps its own contract: 1 for an invalid
dataset, 2 for a missing file.
"""
from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import Config, ConfigError, load_config, make_backend, make_vision
from .dataset import DatasetError, PairFilter, filter_dataset, format_summary, load_dataset
from .extraction import (
    DEFAULT_IMAGE_BUDGET,
    DEFAULT_SHOTS,
    ExtractionConfig,
    Method,
    build_pipeline,
    read_extractions,
    read_jsonl,
    run_batch,
    write_jsonl,
)
from .experiments import BenchmarkSpec, TemporalSpec, run_benchmark, run_temporal
from .gateway import GatewayError
from .judge import ClaimEvaluation, judge_batch
from .metrics import (
    NOMINAL_3CLASS,
    ORDINAL_1_4,
    FailedCell,
    ReportTable,
    aggregate,
    group_evaluations,
    human_human_stats,
    llm_human_stats,
    read_rater_csv,
    render_alignment,
    render_csv,
    render_markdown,
)

EX_OK = 0
EX_USAGE = 64
EX_DATAERR = 65
EX_UNAVAILABLE = 69

log = logging.getLogger("mmce")


class UsageError(Exception):
    pass


class _Help(argparse.HelpFormatter):
    """Append real (non-None) defaults unless the help text already states one."""

    def _get_help_string(self, action):
        text = action.help or ""
        if "default" in text or action.default in (None, False, "", argparse.SUPPRESS) or action.required:
            return text
        return f"{text} (default: %(default)s)".strip()


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EX_USAGE, f"{self.prog}: error: {message}\n")


def _methods(text: str) -> list[Method]:
    out = []
    for name in text.split(","):
        try:
            out.append(Method(name.strip()))
        except ValueError:
            raise argparse.ArgumentTypeError(
                f"unknown method {name.strip()!r} (choose from {', '.join(m.value for m in Method)})") from None
    return out


def _date(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a YYYY-MM-DD date: {text!r}") from None


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML config file")
    p.add_argument("--mode", choices=("live", "replay"), help="backend mode (default: replay)")
    p.add_argument("--cache-dir", type=Path, help="response cache / fixture store (default: .mmce-cache)")
    p.add_argument("--workers", type=int, help="pair-level worker pool size (default: 4)")
    p.epilog = "Model requests always use temperature 0."


def _add_extract_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--shots", type=int, help=f"ICL demonstrations per query (default: {DEFAULT_SHOTS})")
    p.add_argument("--image-budget", type=int,
                   help=f"max images per request incl. demonstrations; 0 disables (default: {DEFAULT_IMAGE_BUDGET})")


def build_parser() -> argparse.ArgumentParser:
    fmt = _Help
    parser = _Parser(prog="mmce", description="Multimodal claim extraction and LLM-as-judge evaluation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="check a dataset file and print its tallies", formatter_class=fmt)
    p.add_argument("dataset", type=Path)

    p = sub.add_parser("extract", help="run one extraction method over a dataset", formatter_class=fmt)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--method", type=Method, required=True, choices=list(Method), metavar="{" + ",".join(m.value for m in Method) + "}")
    p.add_argument("--model", required=True, help="extractor model id")
    p.add_argument("--out", type=Path, required=True, help="extractions JSONL to write")
    p.add_argument("--pool", type=Path, help="dataset whose train split supplies demonstrations (default: --dataset)")
    p.add_argument("--intent-critical", action="store_true", help="only the intent-critical subset")
    p.add_argument("--split", choices=("train", "dev"))
    _add_extract_options(p)
    _add_run_options(p)

    p = sub.add_parser("judge", help="score extractions with the LLM judge", formatter_class=fmt)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--extractions", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="evaluations JSONL to write")
    p.add_argument("--judge-model", help="judge model id (default from config)")
    _add_run_options(p)

    p = sub.add_parser("report", help="aggregate evaluations into a results table", formatter_class=fmt)
    p.add_argument("evaluations", type=Path, nargs="+")
    p.add_argument("--out-md", type=Path)
    p.add_argument("--out-csv", type=Path)

    p = sub.add_parser("agreement", help="LLM-human and human-human agreement from rating CSVs", formatter_class=fmt)
    p.add_argument("--reference", type=Path, help="CSV of 1-4 reference scores")
    p.add_argument("--entailment", type=Path, help="CSV of entailment labels")
    p.add_argument("--decontext", type=Path, help="CSV of decontextualization labels")
    p.add_argument("--llm-column", default="llm", help="rater column holding the LLM judge")
    p.add_argument("--level", choices=("nominal", "ordinal", "interval"),
                   help="alpha difference function (default: ordinal for scores, nominal for labels)")
    p.add_argument("--out", type=Path, help="write the Markdown table here as well")
    p.add_argument("--json", type=Path, help="write full-precision statistics as JSON")

    p = sub.add_parser("benchmark", help="methods x models benchmark with judging and reports", formatter_class=fmt)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--methods", type=_methods, default=list(Method), help="comma-separated (default: all four)")
    p.add_argument("--models", help="comma-separated extractor ids (default from config)")
    p.add_argument("--judge-model")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--intent-critical", action="store_true")
    p.add_argument("--split", choices=("train", "dev"))
    p.add_argument("--section", default="", help="section title in the report table")
    p.add_argument("--force", action="store_true", help="recompute cells that already completed")
    _add_extract_options(p)
    _add_run_options(p)

    p = sub.add_parser("temporal", help="compare two models on a date-windowed subset", formatter_class=fmt)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--model-a", required=True)
    p.add_argument("--model-b", required=True)
    p.add_argument("--start", type=_date, required=True)
    p.add_argument("--end", type=_date, required=True)
    p.add_argument("--method", type=Method, default=Method.IMAGE_TEXT_ICL, choices=list(Method),
                   metavar="{" + ",".join(m.value for m in Method) + "}")
    p.add_argument("--pool", type=Path, help="dataset whose train split supplies demonstrations")
    p.add_argument("--judge-model")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--force", action="store_true")
    _add_extract_options(p)
    _add_run_options(p)
    return parser


def _config(args) -> Config:
    config = load_config(getattr(args, "config", None))
    return config.override(
        mode=getattr(args, "mode", None),
        cache_dir=getattr(args, "cache_dir", None),
        workers=getattr(args, "workers", None),
        shots=getattr(args, "shots", None),
        image_budget=getattr(args, "image_budget", None),
    )


def _subset(args) -> PairFilter:
    return PairFilter(split=args.split, intent_critical=True if args.intent_critical else None)


def cmd_validate(args) -> int:
    try:
        dataset = load_dataset(args.dataset)
    except FileNotFoundError:
        print(f"error: no such file: {args.dataset}", file=sys.stderr)
        return 2
    except DatasetError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 1
    print(format_summary(dataset))
    return EX_OK


def cmd_extract(args) -> int:
    config = _config(args)
    dataset = load_dataset(args.dataset)
    pool = load_dataset(args.pool) if args.pool else None
    queries = filter_dataset(dataset, _subset(args))
    backend = make_backend(config)
    vision = make_vision(config) if args.method is Method.MICE else None
    pipeline = build_pipeline(dataset, ExtractionConfig(args.model, config.shots, config.image_budget, workers=config.workers),
                              backend, vision, pool)
    batch = run_batch(queries, args.method, pipeline)
    write_jsonl(batch.results, args.out)
    write_jsonl(batch.failures, args.out.with_suffix(".failures.jsonl"))
    print(f"{len(batch.results)} extracted, {len(batch.failures)} failed -> {args.out}")
    for f in batch.failures:
        print(f"  failed {f.pair_id} [{f.stage}]: {f.error}", file=sys.stderr)
    if len(queries) and not batch.results:
        return EX_UNAVAILABLE
    return EX_OK


def cmd_judge(args) -> int:
    config = _config(args)
    dataset = load_dataset(args.dataset)
    results = read_extractions(args.extractions)
    backend = make_backend(config)
    judge_model = args.judge_model or config.judge
    missing = [r.pair_id for r in results if r.pair_id not in dataset.by_id()]
    if missing:
        raise DatasetError(f"extractions reference unknown pairs: {missing[:5]}")
    batch = judge_batch(results, dataset.by_id(), backend, judge_model, config.workers, base_dir=dataset.base_dir)
    write_jsonl(batch.results, args.out)
    write_jsonl(batch.failures, args.out.with_suffix(".failures.jsonl"))
    print(f"{len(batch.results)} evaluated, {len(batch.failures)} failed -> {args.out}")
    if results and not batch.results:
        return EX_UNAVAILABLE
    return EX_OK


def cmd_report(args) -> int:
    evaluations = [ClaimEvaluation.from_dict(d) for path in args.evaluations for d in read_jsonl(path)]
    if not evaluations:
        raise DatasetError("no evaluations to report")
    table = ReportTable()
    for (method, model_id), group in group_evaluations(evaluations).items():
        table.add("", aggregate(group, method, model_id))
    md = render_markdown(table)
    if args.out_md:
        args.out_md.write_text(md, encoding="utf-8")
    if args.out_csv:
        args.out_csv.write_text(render_csv(table), encoding="utf-8")
    print(md, end="")
    return EX_OK


def cmd_agreement(args) -> int:
    inputs = [("Reference-Based", args.reference, ORDINAL_1_4), ("Entailment", args.entailment, NOMINAL_3CLASS),
              ("Decontextualization", args.decontext, NOMINAL_3CLASS)]
    inputs = [(name, path, scale) for name, path, scale in inputs if path is not None]
    if not inputs:
        raise UsageError("give at least one of --reference, --entailment, --decontext")
    stats = {}
    for name, path, scale in inputs:
        matrix = read_rater_csv(path, scale)
        if args.llm_column not in matrix.raters:
            raise DatasetError(f"{path}: no rater column named {args.llm_column!r}")
        humans = [r for r in matrix.raters if r != args.llm_column]
        per = {"LLM-Human": llm_human_stats(matrix, args.llm_column, args.level)}
        if len(humans) >= 2:
            per["Human-Human"] = human_human_stats(matrix, humans, args.level)
        stats[name] = per
    md = render_alignment(stats)
    if args.out:
        args.out.write_text(md, encoding="utf-8")
    if args.json:
        args.json.write_text(json.dumps({m: {c: s.to_dict() for c, s in per.items()} for m, per in stats.items()},
                                        indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(md, end="")
    return EX_OK


def cmd_benchmark(args) -> int:
    config = _config(args)
    models = [m.strip() for m in args.models.split(",")] if args.models else list(config.extractors)
    spec = BenchmarkSpec(args.dataset, tuple(args.methods), tuple(models), args.judge_model or config.judge, args.out,
                         config.shots, config.image_budget, config.mode, config.workers, _subset(args), args.section,
                         args.force)
    backend = make_backend(config)
    vision = make_vision(config) if Method.MICE in spec.methods else None
    result = run_benchmark(spec, backend, vision)
    print((spec.out_dir / "report.md").read_text(encoding="utf-8"), end="")
    if all(isinstance(row, FailedCell) for row in result.cells.values()):
        return EX_UNAVAILABLE
    return EX_OK


def cmd_temporal(args) -> int:
    config = _config(args)
    spec = TemporalSpec(args.dataset, args.model_a, args.model_b, args.start, args.end, args.judge_model or config.judge,
                        args.out, args.method, args.pool, config.shots, config.image_budget, config.workers, args.force)
    backend = make_backend(config)
    vision = make_vision(config) if spec.method is Method.MICE else None
    result = run_temporal(spec, backend, vision)
    print((spec.out_dir / "report.md").read_text(encoding="utf-8"), end="")
    print(f"excluded: {len(result.excluded)}; improved under {spec.model_b}: {len(result.improved)}")
    return EX_OK


COMMANDS = {
    "validate": cmd_validate,
    "extract": cmd_extract,
    "judge": cmd_judge,
    "report": cmd_report,
    "agreement": cmd_agreement,
    "benchmark": cmd_benchmark,
    "temporal": cmd_temporal,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"mmce {args.command}: {exc}", file=sys.stderr)
        return EX_USAGE
    except (DatasetError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"mmce {args.command}: data error: {exc}", file=sys.stderr)
        return EX_DATAERR
    except GatewayError as exc:
        print(f"mmce {args.command}: provider error: {exc}", file=sys.stderr)
        return EX_UNAVAILABLE


if __name__ == "__main__":
    sys.exit(main())
