"""Benchmark (methods x models) and temporal-leakage runs.

Artifacts::

    <out>/<model>/<method>/extractions.jsonl
    <out>/<model>/<method>/evaluations.jsonl
    <out>/<model>/<method>/failures.jsonl
    <out>/<model>/<method>/cell.json        # written last; marks the cell complete
    <out>/report.md, <out>/report.csv, <out>/manifest.json

Nothing time-dependent goes into these files, so a replay run
reproduces them byte for byte.
"""
from __future__ import annotations

import dataclasses
import datetime as dt
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import templates
from .dataset import Dataset, PairFilter, PostClaimPair, filter_dataset, load_dataset
from .extraction import (
    DEFAULT_IMAGE_BUDGET,
    DEFAULT_SHOTS,
    ExtractionConfig,
    Failure,
    Method,
    build_pipeline,
    read_jsonl,
    run_batch,
    write_jsonl,
)
from .gateway import Backend
from .judge import ClaimEvaluation, judge_batch
from .metrics import AggregateReport, FailedCell, ReportTable, aggregate, render_csv, render_markdown
from .vision import VisionClient

log = logging.getLogger(__name__)


def model_slug(model_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", model_id)


@dataclass(frozen=True)
class BenchmarkSpec:
    dataset: Path
    methods: tuple[Method, ...]
    models: tuple[str, ...]
    judge_model: str
    out_dir: Path
    shots: int = DEFAULT_SHOTS
    image_budget: Optional[int] = DEFAULT_IMAGE_BUDGET
    mode: str = "replay"
    workers: int = 4
    subset: PairFilter = field(default_factory=PairFilter)
    section: str = ""
    force: bool = False

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(Method(m) for m in self.methods))
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "dataset", Path(self.dataset))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if not self.methods:
            raise ValueError("at least one method is required")
        if not self.models:
            raise ValueError("at least one model is required")
        if self.shots < 0:
            raise ValueError("shots must be >= 0")
        if self.mode not in ("live", "replay"):
            raise ValueError(f"mode must be live or replay, got {self.mode!r}")

    def snapshot(self) -> dict:
        subset = {k: (v.isoformat() if isinstance(v, dt.date) else v) for k, v in dataclasses.asdict(self.subset).items()}
        if self.subset.date_range:
            subset["date_range"] = [d.isoformat() for d in self.subset.date_range]
        return {
            "dataset": self.dataset.as_posix(),
            "methods": [m.value for m in self.methods],
            "models": list(self.models),
            "judge_model": self.judge_model,
            "shots": self.shots,
            "image_budget": self.image_budget,
            "mode": self.mode,
            "subset": subset,
            "section": self.section,
        }


@dataclass
class CellOutcome:
    evaluations: list[ClaimEvaluation]
    failures: list[Failure]
    skipped: bool = False


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def run_cell(queries: Sequence[PostClaimPair], method: Method, model_id: str, judge_model: str, dataset: Dataset,
             backend: Backend, vision: Optional[VisionClient], cell_dir: Path, shots: int, image_budget: Optional[int],
             workers: int, force: bool = False, pool: Optional[Dataset] = None) -> CellOutcome:
    """Extract, judge and persist one (model, method) cell; reuse it if already complete."""
    marker = cell_dir / "cell.json"
    if marker.exists() and not force:
        evaluations = [ClaimEvaluation.from_dict(d) for d in read_jsonl(cell_dir / "evaluations.jsonl")]
        failures = [Failure(**d) for d in read_jsonl(cell_dir / "failures.jsonl")]
        log.info("skipping completed cell %s", cell_dir)
        return CellOutcome(evaluations, failures, skipped=True)

    config = ExtractionConfig(model_id, shots, image_budget, workers=workers)
    pipeline = build_pipeline(dataset, config, backend, vision, pool=pool)
    extracted = run_batch(queries, method, pipeline)
    write_jsonl(extracted.results, cell_dir / "extractions.jsonl")

    by_id = {p.id: p for p in queries}
    judged = judge_batch(extracted.results, by_id, backend, judge_model, workers, base_dir=dataset.base_dir)
    write_jsonl(judged.results, cell_dir / "evaluations.jsonl")

    failures = extracted.failures + judged.failures
    order = {p.id: i for i, p in enumerate(queries)}
    failures.sort(key=lambda f: order.get(f.pair_id, len(order)))
    write_jsonl(failures, cell_dir / "failures.jsonl")
    _write_json(marker, {
        "method": method.value,
        "model_id": model_id,
        "judge_model": judge_model,
        "pairs": len(queries),
        "evaluated": len(judged.results),
        "failed": len(failures),
    })
    return CellOutcome(judged.results, failures)


def cell_row(outcome: CellOutcome, method: Method, model_id: str):
    if not outcome.evaluations:
        reason = outcome.failures[0].error if outcome.failures else "no pairs"
        return FailedCell(method.value, model_id, reason)
    return aggregate(outcome.evaluations, method, model_id, failures=len(outcome.failures))


def manifest(config: dict, backend: Backend, extra: Optional[dict] = None) -> dict:
    out = {
        "config": config,
        "template_sha256": templates.checksums(),
        "fixture_store": {"keys": len(backend.store.keys()), "sha256": backend.store.digest()},
    }
    out.update(extra or {})
    return out


@dataclass
class BenchmarkResult:
    cells: dict[tuple[str, str], object]
    table: ReportTable


def run_benchmark(spec: BenchmarkSpec, backend: Backend, vision: Optional[VisionClient] = None) -> BenchmarkResult:
    dataset = load_dataset(spec.dataset)
    queries = filter_dataset(dataset, spec.subset).pairs
    table = ReportTable()
    cells = {}
    for model_id in spec.models:
        for method in spec.methods:
            cell_dir = spec.out_dir / model_slug(model_id) / method.value
            try:
                outcome = run_cell(queries, method, model_id, spec.judge_model, dataset, backend, vision, cell_dir,
                                   spec.shots, spec.image_budget, spec.workers, spec.force)
                row = cell_row(outcome, method, model_id)
            except (ValueError, RuntimeError, OSError) as exc:
                log.error("cell %s/%s failed: %s", model_id, method.value, exc)
                row = FailedCell(method.value, model_id, f"{type(exc).__name__}: {exc}")
            cells[(model_id, method.value)] = row

    # rows grouped by method, models in spec order
    for method in spec.methods:
        for model_id in spec.models:
            table.add(spec.section, cells[(model_id, method.value)])
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    (spec.out_dir / "report.md").write_text(render_markdown(table), encoding="utf-8")
    (spec.out_dir / "report.csv").write_text(render_csv(table), encoding="utf-8")
    _write_json(spec.out_dir / "manifest.json", manifest(spec.snapshot(), backend, {"pairs": len(queries)}))
    return BenchmarkResult(cells, table)


# ------------------------------------------------------------------ temporal


@dataclass(frozen=True)
class TemporalSpec:
    dataset: Path
    model_a: str
    model_b: str
    start: dt.date
    end: dt.date
    judge_model: str
    out_dir: Path
    method: Method = Method.IMAGE_TEXT_ICL
    pool: Optional[Path] = None
    shots: int = DEFAULT_SHOTS
    image_budget: Optional[int] = DEFAULT_IMAGE_BUDGET
    workers: int = 4
    force: bool = False

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "dataset", Path(self.dataset))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if not self.start < self.end:
            raise ValueError("window start must precede its end")

    def snapshot(self) -> dict:
        return {
            "dataset": self.dataset.as_posix(),
            "pool": self.pool.as_posix() if self.pool else None,
            "model_a": self.model_a,
            "model_b": self.model_b,
            "window": [self.start.isoformat(), self.end.isoformat()],
            "judge_model": self.judge_model,
            "method": self.method.value,
            "shots": self.shots,
            "image_budget": self.image_budget,
        }


@dataclass
class TemporalResult:
    rows: list
    deltas: list[dict]
    excluded: list[str]

    @property
    def improved(self) -> list[dict]:
        """Pairs where the second model's reference score beats the first's."""
        return [d for d in self.deltas if d["delta"] > 0]


def run_temporal(spec: TemporalSpec, backend: Backend, vision: Optional[VisionClient] = None) -> TemporalResult:
    dataset = load_dataset(spec.dataset)
    pool = load_dataset(spec.pool) if spec.pool else None
    queries, excluded = [], []
    for pair in dataset.pairs:
        if pair.post_date is None:
            log.warning("%s has no post_date; excluded", pair.id)
            excluded.append(pair.id)
        elif not spec.start <= pair.post_date <= spec.end:
            log.warning("%s dated %s falls outside the window; excluded", pair.id, pair.post_date)
            excluded.append(pair.id)
        else:
            queries.append(pair)

    rows, scores = [], []
    for model_id in (spec.model_a, spec.model_b):
        cell_dir = spec.out_dir / model_slug(model_id) / spec.method.value
        outcome = run_cell(queries, spec.method, model_id, spec.judge_model, dataset, backend, vision, cell_dir,
                           spec.shots, spec.image_budget, spec.workers, spec.force, pool=pool)
        rows.append(cell_row(outcome, spec.method, model_id))
        scores.append({e.pair_id: e.reference.score for e in outcome.evaluations})

    a, b = scores
    deltas = [
        {"pair_id": p.id, "score_a": a[p.id], "score_b": b[p.id], "delta": b[p.id] - a[p.id]}
        for p in queries if p.id in a and p.id in b
    ]
    table = ReportTable()
    for row in rows:
        table.add("", row)
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    (spec.out_dir / "report.md").write_text(render_markdown(table), encoding="utf-8")
    (spec.out_dir / "report.csv").write_text(render_csv(table), encoding="utf-8")
    write_jsonl(deltas, spec.out_dir / "deltas.jsonl")
    _write_json(spec.out_dir / "manifest.json",
                manifest(spec.snapshot(), backend, {"pairs": len(queries), "excluded": excluded}))
    return TemporalResult(rows, deltas, excluded)
