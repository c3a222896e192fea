"""Table rows from judge outputs, and agreement statistics against humans."""
from __future__ import annotations

import csv
import io
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Hashable, Optional, Sequence

import numpy as np

from .extraction import Method
from .judge import ClaimEvaluation, Decontext, Entailment, label_rank

log = logging.getLogger(__name__)

ORDINAL_1_4 = "ordinal_1_4"
NOMINAL_3CLASS = "nominal_3class"
SCALES = (ORDINAL_1_4, NOMINAL_3CLASS)

COLUMNS = (
    ("mean_reference", "Reference-Based (1-4)"),
    ("entailment_strict_pct", "Entailment Strict (%)"),
    ("entailment_lenient_pct", "Entailment Lenient (%)"),
    ("decontext_strict_pct", "Decontextualization Strict (%)"),
    ("decontext_lenient_pct", "Decontextualization Lenient (%)"),
)


@dataclass(frozen=True)
class AggregateReport:
    method: str
    model_id: str
    n: int
    mean_reference: float
    entailment_strict_pct: float
    entailment_lenient_pct: float
    decontext_strict_pct: float
    decontext_lenient_pct: float
    failures: int = 0

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "model_id": self.model_id,
            "n": self.n,
            "failures": self.failures,
            **{name: getattr(self, name) for name, _ in COLUMNS},
        }


def aggregate(evaluations: Sequence[ClaimEvaluation], method: str, model_id: str, failures: int = 0) -> AggregateReport:
    """Strict counts only the top category; lenient adds the middle one."""
    if not evaluations:
        raise ValueError("cannot aggregate an empty evaluation list")
    n = len(evaluations)
    ent = Counter(e.entailment for e in evaluations)
    dec = Counter(e.decontext for e in evaluations)
    mean_ref = math.fsum(e.reference.score for e in evaluations) / n
    return AggregateReport(
        method=getattr(method, "value", method),
        model_id=model_id,
        n=n,
        mean_reference=mean_ref,
        entailment_strict_pct=100.0 * ent[Entailment.ENTAILED] / n,
        entailment_lenient_pct=100.0 * (ent[Entailment.ENTAILED] + ent[Entailment.PARTIALLY_ENTAILED]) / n,
        decontext_strict_pct=100.0 * dec[Decontext.FULLY] / n,
        decontext_lenient_pct=100.0 * (dec[Decontext.FULLY] + dec[Decontext.PARTIALLY]) / n,
        failures=failures,
    )


# ---------------------------------------------------------------- agreement


@dataclass(frozen=True)
class RaterMatrix:
    """Items x raters grid; ``None`` marks a missing rating."""

    items: tuple[str, ...]
    raters: tuple[str, ...]
    values: tuple[tuple[Optional[Hashable], ...], ...]
    scale: str = ORDINAL_1_4

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        object.__setattr__(self, "raters", tuple(self.raters))
        object.__setattr__(self, "values", tuple(tuple(row) for row in self.values))
        if self.scale not in SCALES:
            raise ValueError(f"unknown scale {self.scale!r}")
        if len(self.raters) < 2:
            raise ValueError("need at least two raters")
        if len(self.values) != len(self.items):
            raise ValueError("one row of values per item")
        for item, row in zip(self.items, self.values):
            if len(row) != len(self.raters):
                raise ValueError(f"item {item}: expected {len(self.raters)} ratings, got {len(row)}")
            if all(v is None for v in row):
                raise ValueError(f"item {item} has no ratings")
        present = {v for row in self.values for v in row if v is not None}
        if self.scale == ORDINAL_1_4:
            bad = [v for v in present if isinstance(v, bool) or v not in (1, 2, 3, 4)]
            if bad:
                raise ValueError(f"ratings outside 1..4: {sorted(map(str, bad))}")
        elif len(present) > 3:
            raise ValueError(f"a 3-class scale cannot hold {len(present)} distinct labels")

    def units(self) -> list[list]:
        return [[v for v in row if v is not None] for row in self.values]

    def columns(self, raters: Sequence[str]) -> "RaterMatrix":
        idx = [self.raters.index(r) for r in raters]
        keep = [(item, tuple(row[i] for i in idx)) for item, row in zip(self.items, self.values)]
        keep = [(item, row) for item, row in keep if any(v is not None for v in row)]
        return RaterMatrix(tuple(i for i, _ in keep), tuple(raters), tuple(r for _, r in keep), self.scale)


def _ordinal_value(v) -> float:
    if isinstance(v, (Entailment, Decontext)):
        return float(label_rank(v))
    if isinstance(v, str):
        for cls in (Entailment, Decontext):
            try:
                return float(label_rank(cls(v)))
            except ValueError:
                pass
        raise ValueError(f"no ordinal encoding for label {v!r}")
    return float(v)


def coincidence_matrix(units: Sequence[Sequence]) -> tuple[list, np.ndarray]:
    """Values (sorted) and the coincidence matrix over pairable units."""
    values = sorted({v for u in units if len(u) >= 2 for v in u}, key=lambda v: (str(type(v)), v))
    index = {v: i for i, v in enumerate(values)}
    o = np.zeros((len(values), len(values)))
    for u in units:
        m = len(u)
        if m < 2:
            continue
        counts = Counter(u)
        for c, nc in counts.items():
            for k, nk in counts.items():
                pairs = nc * (nc - 1) if c == k else nc * nk
                o[index[c], index[k]] += pairs / (m - 1)
    return values, o


def _delta(values: Sequence, marginals: np.ndarray, level: str) -> np.ndarray:
    size = len(values)
    if level == "nominal":
        return 1.0 - np.eye(size)
    if level == "interval":
        x = np.array([_ordinal_value(v) for v in values])
        return (x[:, None] - x[None, :]) ** 2
    if level == "ordinal":
        order = np.argsort([_ordinal_value(v) for v in values], kind="stable")
        n_sorted = marginals[order]
        cum = np.concatenate([[0.0], np.cumsum(n_sorted)])
        d_sorted = np.zeros((size, size))
        for a in range(size):
            for b in range(size):
                lo, hi = min(a, b), max(a, b)
                d_sorted[a, b] = (cum[hi + 1] - cum[lo] - (n_sorted[a] + n_sorted[b]) / 2.0) ** 2
        d = np.empty_like(d_sorted)
        d[np.ix_(order, order)] = d_sorted
        return d
    raise ValueError(f"unknown level {level!r}")


@dataclass(frozen=True)
class AlphaResult:
    alpha: float
    degenerate: bool = False
    pairable_values: int = 0


def default_level(scale: str) -> str:
    return "ordinal" if scale == ORDINAL_1_4 else "nominal"


def krippendorff_alpha_detail(matrix: RaterMatrix, level: Optional[str] = None) -> AlphaResult:
    return alpha_from_units(matrix.units(), level or default_level(matrix.scale))


def alpha_from_units(units: Sequence[Sequence], level: str = "nominal") -> AlphaResult:
    """Alpha straight from per-unit rating lists (missing ratings already dropped)."""
    values, o = coincidence_matrix(units)
    n_c = o.sum(axis=1)
    n = n_c.sum()
    if n < 2:
        raise ValueError("alpha needs at least one item with two or more ratings")
    delta = _delta(values, n_c, level)
    observed = (o * delta).sum()
    expected = (np.outer(n_c, n_c) * delta).sum()
    if expected == 0.0:
        return AlphaResult(1.0, True, int(round(n)))
    return AlphaResult(float(1.0 - (n - 1) * observed / expected), False, int(round(n)))


def krippendorff_alpha(matrix: RaterMatrix, level: Optional[str] = None) -> float:
    """Krippendorff's alpha; ordinal for the 1-4 scale, nominal for labels by default.

    All-identical ratings give zero expected disagreement; that case is
    reported as 1.0 (see :func:`krippendorff_alpha_detail` for the flag).
    """
    result = krippendorff_alpha_detail(matrix, level)
    if result.degenerate:
        log.warning("alpha undefined (no expected disagreement); reporting 1.0")
    return result.alpha


class UndefinedCorrelationError(ValueError):
    pass


def average_ranks(x: Sequence[float]) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of average ranks."""
    if len(x) != len(y):
        raise ValueError("sequences differ in length")
    if len(x) < 2:
        raise ValueError("need at least two observations")
    rx, ry = average_ranks(x), average_ranks(y)
    dx, dy = rx - rx.mean(), ry - ry.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant sequence")
    rho = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, rho))


def percent_agreement(matrix: RaterMatrix) -> float:
    """Mean over items of the share of agreeing rater pairs, in percent."""
    fractions = []
    for item, unit in zip(matrix.items, matrix.units()):
        if len(unit) < 2:
            log.warning("item %s has fewer than two ratings; excluded from agreement", item)
            continue
        pairs = list(combinations(unit, 2))
        fractions.append(sum(a == b for a, b in pairs) / len(pairs))
    if not fractions:
        raise ValueError("no item has two or more ratings")
    return 100.0 * math.fsum(fractions) / len(fractions)


# ------------------------------------------------------- human-LLM alignment


@dataclass(frozen=True)
class AgreementStats:
    alpha: float
    rho: Optional[float]
    agreement_pct: float
    n_pairs: int
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "rho": self.rho, "agreement_pct": self.agreement_pct,
                "n_pairs": self.n_pairs, "degenerate": self.degenerate}


def _rho_or_none(x, y) -> Optional[float]:
    try:
        return spearman_rho(x, y)
    except (UndefinedCorrelationError, ValueError):
        return None


def llm_human_stats(matrix: RaterMatrix, llm_rater: str, level: Optional[str] = None) -> AgreementStats:
    """LLM judge against each human rating of the same item, pooled as pairs."""
    li = matrix.raters.index(llm_rater)
    units, xs, ys = [], [], []
    for item, row in zip(matrix.items, matrix.values):
        if row[li] is None:
            continue
        for hi, h in enumerate(row):
            if hi == li or h is None:
                continue
            units.append((f"{item}:{matrix.raters[hi]}", (row[li], h)))
            xs.append(_ordinal_value(row[li]))
            ys.append(_ordinal_value(h))
    if not units:
        raise ValueError("no item rated by both the LLM and a human")
    paired = RaterMatrix(tuple(u for u, _ in units), ("llm", "human"), tuple(v for _, v in units), matrix.scale)
    a = krippendorff_alpha_detail(paired, level)
    return AgreementStats(a.alpha, _rho_or_none(xs, ys), percent_agreement(paired), len(units), a.degenerate)


def human_human_stats(matrix: RaterMatrix, humans: Sequence[str], level: Optional[str] = None) -> AgreementStats:
    """Alpha and % agreement over the human columns; rho over every co-rating human pair."""
    sub = matrix.columns(humans)
    xs, ys = [], []
    for row in sub.values:
        rated = [v for v in row if v is not None]
        for a, b in combinations(rated, 2):
            xs.append(_ordinal_value(a))
            ys.append(_ordinal_value(b))
    if not xs:
        raise ValueError("no item rated by two humans")
    alpha = krippendorff_alpha_detail(sub, level)
    return AgreementStats(alpha.alpha, _rho_or_none(xs, ys), percent_agreement(sub), len(xs), alpha.degenerate)


def _normalize_label(cell: str) -> str:
    return "_".join(cell.strip().lower().replace("-", " ").split())


def read_rater_csv(path, scale: str, item_column: Optional[str] = None) -> RaterMatrix:
    """Items x raters CSV; the first column (or ``item_column``) names the item, empty cells are missing."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    header = rows[0]
    key = header.index(item_column) if item_column else 0
    raters = [h for i, h in enumerate(header) if i != key]
    items, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not any(c.strip() for c in row):
            continue
        row = row + [""] * (len(header) - len(row))
        items.append(row[key])
        out = []
        for i, cell in enumerate(row[:len(header)]):
            if i == key:
                continue
            cell = cell.strip()
            if not cell:
                out.append(None)
            elif scale == ORDINAL_1_4:
                try:
                    out.append(int(float(cell)))
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: not a 1-4 score: {cell!r}") from None
            else:
                out.append(_normalize_label(cell))
        values.append(tuple(out))
    return RaterMatrix(tuple(items), tuple(raters), tuple(values), scale)


# ------------------------------------------------------------------ reports


@dataclass
class ReportTable:
    """Rows of reports (or failed cells) grouped in sections."""

    sections: dict[str, list] = field(default_factory=dict)

    def add(self, section: str, row) -> None:
        self.sections.setdefault(section, []).append(row)


@dataclass(frozen=True)
class FailedCell:
    method: str
    model_id: str
    error: str


def _method_label(method: str) -> str:
    try:
        return Method(method).label
    except ValueError:
        return method


def render_markdown(table: ReportTable) -> str:
    header = ["Method", "Model", "n", "Failed"] + [title for _, title in COLUMNS]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for section, rows in table.sections.items():
        if section:
            lines.append(f"| **{section}** |" + " |" * (len(header) - 1))
        ok = [r for r in rows if isinstance(r, AggregateReport)]
        best = {name: max(getattr(r, name) for r in ok) for name, _ in COLUMNS} if ok else {}
        for r in rows:
            if isinstance(r, FailedCell):
                cells = [_method_label(r.method), r.model_id, "-", "-"] + ["failed"] * len(COLUMNS)
            else:
                cells = [_method_label(r.method), r.model_id, str(r.n), str(r.failures)]
                for name, _ in COLUMNS:
                    value = getattr(r, name)
                    text = f"{value:.2f}" if name == "mean_reference" else f"{value:.1f}"
                    cells.append(f"**{text}**" if value == best[name] else text)
            lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def render_csv(table: ReportTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["section", "method", "model_id", "n", "failures"] + [name for name, _ in COLUMNS] + ["error"])
    for section, rows in table.sections.items():
        for r in rows:
            if isinstance(r, FailedCell):
                writer.writerow([section, r.method, r.model_id, "", ""] + [""] * len(COLUMNS) + [r.error])
            else:
                writer.writerow([section, r.method, r.model_id, r.n, r.failures] + [repr(getattr(r, n)) for n, _ in COLUMNS] + [""])
    return buf.getvalue()


def render_alignment(stats: dict[str, dict[str, AgreementStats]]) -> str:
    """Markdown table: metric columns, (comparison, statistic) rows."""
    metrics = list(stats)
    lines = ["| Comparison | Statistic | " + " | ".join(metrics) + " |", "|" + "---|" * (len(metrics) + 2)]
    comparisons = []
    for per_metric in stats.values():
        for c in per_metric:
            if c not in comparisons:
                comparisons.append(c)
    for comp in comparisons:
        for attr, title, fmt in (("alpha", "Krippendorff's alpha", "{:.2f}"), ("rho", "Spearman rho", "{:.2f}"),
                                 ("agreement_pct", "Agreement (%)", "{:.1f}")):
            cells = []
            for m in metrics:
                s = stats[m].get(comp)
                v = getattr(s, attr) if s else None
                cells.append("n/a" if v is None else fmt.format(v))
            lines.append(f"| {comp} | {title} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def group_evaluations(evaluations: Sequence[ClaimEvaluation]) -> dict[tuple[str, str], list[ClaimEvaluation]]:
    groups: dict = defaultdict(list)
    for e in evaluations:
        groups[(e.method or "", e.model_id or "")].append(e)
    return dict(groups)
