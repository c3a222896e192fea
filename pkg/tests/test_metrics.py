import csv
import io
import math
import random
from collections import Counter

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from mmce.judge import Decontext, Entailment
from mmce.metrics import (
    NOMINAL_3CLASS,
    ORDINAL_1_4,
    AggregateReport,
    FailedCell,
    RaterMatrix,
    ReportTable,
    UndefinedCorrelationError,
    aggregate,
    alpha_from_units,
    average_ranks,
    human_human_stats,
    krippendorff_alpha,
    krippendorff_alpha_detail,
    llm_human_stats,
    percent_agreement,
    read_rater_csv,
    render_csv,
    render_markdown,
    spearman_rho,
)

from conftest import make_eval

ENT = list(Entailment)
DEC = list(Decontext)
LABELS = ["entailed", "partially_entailed", "not_entailed"]


# ------------------------------------------------------------------- oracles

def oracle_aggregate(evals):
    n = len(evals)
    strict_e = lenient_e = strict_d = lenient_d = 0
    total = 0
    for e in evals:
        total += e.reference.score
        if e.entailment.value == "entailed":
            strict_e += 1
        if e.entailment.value in ("entailed", "partially_entailed"):
            lenient_e += 1
        if e.decontext.value == "fully_decontextualized":
            strict_d += 1
        if e.decontext.value in ("fully_decontextualized", "partially_decontextualized"):
            lenient_d += 1
    return (total / n, 100 * strict_e / n, 100 * lenient_e / n, 100 * strict_d / n, 100 * lenient_d / n)


def rank_of(v):
    if v in LABELS:
        return 3 - LABELS.index(v)
    return v


def oracle_alpha(units, level):
    """Pairwise form: alpha = 1 - D_o / D_e over pairable values, no coincidence matrix."""
    units = [u for u in units if len(u) >= 2]
    pooled = [v for u in units for v in u]
    n = len(pooled)
    freq = Counter(pooled)
    ordered = sorted(freq, key=rank_of)

    def delta(a, b):
        if level == "nominal":
            return 0.0 if a == b else 1.0
        if level == "interval":
            return float(rank_of(a) - rank_of(b)) ** 2
        i, j = sorted((ordered.index(a), ordered.index(b)))
        between = sum(freq[ordered[g]] for g in range(i, j + 1))
        return (between - (freq[a] + freq[b]) / 2) ** 2

    d_o = 0.0
    for u in units:
        m = len(u)
        d_o += sum(delta(u[i], u[j]) for i in range(m) for j in range(m) if i != j) / (m - 1)
    d_o /= n
    d_e = sum(delta(pooled[i], pooled[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    return 1.0 if d_e == 0 else 1.0 - d_o / d_e


def oracle_ranks(xs):
    return [1 + sum(y < x for y in xs) + (sum(y == x for y in xs) - 1) / 2 for x in xs]


def oracle_rho(x, y):
    rx, ry = oracle_ranks(x), oracle_ranks(y)
    mx, my = math.fsum(rx) / len(rx), math.fsum(ry) / len(ry)
    num = math.fsum((a - mx) * (b - my) for a, b in zip(rx, ry))
    den = math.sqrt(math.fsum((a - mx) ** 2 for a in rx) * math.fsum((b - my) ** 2 for b in ry))
    return num / den


def random_matrix(rng, scale, missing=0.25):
    n_raters, n_items = rng.randint(2, 4), rng.randint(5, 30)
    domain = [1, 2, 3, 4] if scale == ORDINAL_1_4 else LABELS
    rows = []
    for _ in range(n_items):
        row = [None if rng.random() < missing else rng.choice(domain) for _ in range(n_raters)]
        if all(v is None for v in row):
            row[rng.randrange(n_raters)] = rng.choice(domain)
        rows.append(tuple(row))
    if all(sum(v is not None for v in r) < 2 for r in rows):
        rows[0] = tuple(rng.choice(domain) for _ in range(n_raters))
    return RaterMatrix(tuple(f"i{k}" for k in range(n_items)), tuple(f"r{k}" for k in range(n_raters)), tuple(rows), scale)


# ----------------------------------------------------------------- aggregate

def test_aggregate_caption_example():
    evals = [make_eval(ent=e) for e in (ENT[0], ENT[1], ENT[2], ENT[0])]
    r = aggregate(evals, "mice", "m")
    assert (r.entailment_strict_pct, r.entailment_lenient_pct) == (50.0, 75.0)


def test_aggregate_all_fours():
    r = aggregate([make_eval(4) for _ in range(5)], "mice", "m")
    assert r.mean_reference == 4.0
    assert r.entailment_strict_pct == r.entailment_lenient_pct == r.decontext_strict_pct == r.decontext_lenient_pct


def test_aggregate_empty():
    with pytest.raises(ValueError):
        aggregate([], "mice", "m")


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 4), st.sampled_from(ENT), st.sampled_from(DEC)), min_size=1, max_size=40),
       st.randoms())
def test_aggregate_properties(spec, rnd):
    evals = [make_eval(s, e, d) for s, e, d in spec]
    r = aggregate(evals, "image_text", "m")
    assert r.entailment_strict_pct <= r.entailment_lenient_pct
    assert r.decontext_strict_pct <= r.decontext_lenient_pct
    assert 1 <= r.mean_reference <= 4
    shuffled = list(evals)
    rnd.shuffle(shuffled)
    assert aggregate(shuffled, "image_text", "m") == r
    got = (r.mean_reference, r.entailment_strict_pct, r.entailment_lenient_pct, r.decontext_strict_pct,
           r.decontext_lenient_pct)
    assert got == pytest.approx(oracle_aggregate(evals), abs=1e-12)


# --------------------------------------------------------------------- alpha

# reliability data widely used to illustrate alpha: 4 coders, 12 units, values 1-5
TEXTBOOK_UNITS = [[1, 1, 1], [2, 2, 3, 2], [3, 3, 3, 3], [3, 3, 3, 3], [2, 2, 2, 2], [1, 2, 3, 4], [4, 4, 4, 4],
                  [1, 1, 2, 1], [2, 2, 2, 2], [5, 5, 5], [1, 1], [3]]


@pytest.mark.parametrize("level,expected", [("nominal", 0.743), ("ordinal", 0.815), ("interval", 0.849)])
def test_alpha_textbook_values(level, expected):
    assert alpha_from_units(TEXTBOOK_UNITS, level).alpha == pytest.approx(expected, abs=5e-4)
    assert oracle_alpha(TEXTBOOK_UNITS, level) == pytest.approx(expected, abs=5e-4)


@pytest.mark.parametrize("seed", range(25))
@pytest.mark.parametrize("scale,level", [(ORDINAL_1_4, "ordinal"), (ORDINAL_1_4, "nominal"), (ORDINAL_1_4, "interval"),
                                         (NOMINAL_3CLASS, "nominal"), (NOMINAL_3CLASS, "ordinal")])
def test_alpha_matches_pairwise_oracle(seed, scale, level):
    m = random_matrix(random.Random(seed * 7 + len(level)), scale)
    expected = oracle_alpha(m.units(), level)
    assert krippendorff_alpha(m, level) == pytest.approx(expected, abs=1e-9)


def test_alpha_perfect_agreement_is_one():
    m = RaterMatrix(("a", "b", "c", "d", "e"), ("r1", "r2"), ((1, 1), (2, 2), (3, 3), (4, 4), (2, 2)))
    assert krippendorff_alpha(m) == 1.0
    assert krippendorff_alpha(m, "nominal") == 1.0
    assert not krippendorff_alpha_detail(m).degenerate


def test_alpha_degenerate_single_value():
    m = RaterMatrix(("a", "b"), ("r1", "r2"), ((3, 3), (3, 3)))
    d = krippendorff_alpha_detail(m)
    assert d.alpha == 1.0 and d.degenerate


def test_alpha_needs_pairable_item():
    m = RaterMatrix(("a", "b"), ("r1", "r2"), ((1, None), (None, 2)))
    with pytest.raises(ValueError):
        krippendorff_alpha(m)


def test_alpha_matches_reference_package():
    kd = pytest.importorskip("krippendorff")
    import numpy as np
    for seed in range(10):
        m = random_matrix(random.Random(seed), ORDINAL_1_4)
        data = np.array([[np.nan if row[r] is None else row[r] for row in m.values] for r in range(len(m.raters))])
        if sum(sum(v is not None for v in row) >= 2 for row in m.values) == 0:
            continue
        for level in ("nominal", "ordinal", "interval"):
            assert krippendorff_alpha(m, level) == pytest.approx(
                kd.alpha(reliability_data=data, level_of_measurement=level), abs=1e-9)


matrices = st.builds(lambda seed, scale: random_matrix(random.Random(seed), scale),
                     st.integers(0, 10**6), st.sampled_from([ORDINAL_1_4, NOMINAL_3CLASS]))


@settings(max_examples=100, deadline=None)
@given(matrices, st.randoms())
def test_alpha_invariances(m, rnd):
    base = krippendorff_alpha_detail(m).alpha
    raters = list(range(len(m.raters)))
    rnd.shuffle(raters)
    items = list(range(len(m.items)))
    rnd.shuffle(items)
    permuted = RaterMatrix(tuple(m.items[i] for i in items), tuple(m.raters[r] for r in raters),
                           tuple(tuple(m.values[i][r] for r in raters) for i in items), m.scale)
    assert krippendorff_alpha_detail(permuted).alpha == pytest.approx(base, abs=1e-12)
    # nominal alpha ignores which names the categories carry
    domain = sorted({v for row in m.values for v in row if v is not None}, key=str)
    target = list(domain)
    rnd.shuffle(target)
    relabel = dict(zip(domain, target))
    renamed = RaterMatrix(m.items, m.raters, tuple(tuple(None if v is None else relabel[v] for v in row) for row in m.values),
                          m.scale)
    assert krippendorff_alpha_detail(renamed, "nominal").alpha == pytest.approx(
        krippendorff_alpha_detail(m, "nominal").alpha, abs=1e-12)


@pytest.mark.parametrize("bad", [
    dict(raters=("r1",), values=((1,),)),
    dict(values=((1, 5),)),
    dict(values=((None, None),)),
    dict(values=((1,),)),
])
def test_matrix_validation(bad):
    kw = dict(items=("a",), raters=("r1", "r2"), values=((1, 2),), scale=ORDINAL_1_4)
    kw.update(bad)
    with pytest.raises(ValueError):
        RaterMatrix(**kw)


# ------------------------------------------------------------------ spearman

def test_spearman_exact_extremes():
    x = [0.3, 1.5, 2.0, 7.0, 11.0]
    assert spearman_rho(x, x) == 1.0
    assert spearman_rho(x, list(reversed(x))) == -1.0
    assert spearman_rho(x, [v ** 3 + 1 for v in x]) == 1.0


def test_spearman_tied_example():
    assert spearman_rho([1, 2, 2, 3], [2, 1, 3, 3]) == pytest.approx(oracle_rho([1, 2, 2, 3], [2, 1, 3, 3]), abs=1e-12)
    assert list(average_ranks([1, 2, 2, 3])) == [1.0, 2.5, 2.5, 4.0]


@pytest.mark.parametrize("seed", range(20))
def test_spearman_tied_vectors_vs_oracle(seed):
    rng = random.Random(seed)
    n = rng.randint(4, 30)
    x = [rng.randint(1, 4) for _ in range(n)]
    y = [rng.randint(1, 4) for _ in range(n)]
    if len(set(x)) < 2 or len(set(y)) < 2:
        x[0], x[1], y[0], y[1] = 1, 4, 1, 4
    assert spearman_rho(x, y) == pytest.approx(oracle_rho(x, y), abs=1e-12)


def test_spearman_matches_scipy():
    stats = pytest.importorskip("scipy.stats")
    rng = random.Random(1)
    for _ in range(20):
        x = [rng.randint(1, 5) for _ in range(15)]
        y = [rng.random() for _ in range(15)]
        if len(set(x)) < 2:
            continue
        assert spearman_rho(x, y) == pytest.approx(stats.spearmanr(x, y).statistic, abs=1e-12)


def test_spearman_errors():
    with pytest.raises(UndefinedCorrelationError):
        spearman_rho([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        spearman_rho([1], [1])
    with pytest.raises(ValueError):
        spearman_rho([1, 2], [1, 2, 3])


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(st.integers(-20, 20), st.integers(-20, 20)), min_size=3, max_size=25))
def test_spearman_monotone_invariance(pairs):
    x, y = [p[0] for p in pairs], [p[1] for p in pairs]
    assume(len(set(x)) > 1 and len(set(y)) > 1)
    rho = spearman_rho(x, y)
    assert -1.0 <= rho <= 1.0
    assert spearman_rho([3 * v ** 3 - 7 for v in x], y) == pytest.approx(rho, abs=1e-12)
    assert spearman_rho(x, [math.exp(v / 10) for v in y]) == pytest.approx(rho, abs=1e-12)
    assert spearman_rho([-v for v in x], y) == pytest.approx(-rho, abs=1e-12)


# ----------------------------------------------------------------- agreement

def test_percent_agreement_cases():
    same = RaterMatrix(("a", "b"), ("r1", "r2"), ((1, 1), (4, 4)))
    assert percent_agreement(same) == 100.0
    half = RaterMatrix(tuple("abcd"), ("r1", "r2"), ((1, 1), (2, 2), (3, 4), (4, 1)))
    assert percent_agreement(half) == 50.0
    dissent = RaterMatrix(tuple("abc"), ("r1", "r2", "r3"), ((1, 1, 2), (3, 4, 3), (2, 1, 1)))
    assert percent_agreement(dissent) == pytest.approx(100 / 3)


def test_percent_agreement_skips_single_ratings(caplog):
    m = RaterMatrix(("a", "b"), ("r1", "r2"), ((1, 1), (2, None)))
    assert percent_agreement(m) == 100.0
    assert "fewer than two ratings" in caplog.text


def test_llm_human_pools_pairs():
    # one annotator rated everything, three others split the items
    m = RaterMatrix(tuple("abcd"), ("llm", "h1", "h2", "h3"),
                    ((4, 4, 3, None), (2, 2, None, 2), (3, 1, None, None), (1, None, 1, 2)))
    s = llm_human_stats(m, "llm")
    assert s.n_pairs == 7
    pairs = [(4, 4), (4, 3), (2, 2), (2, 2), (3, 1), (1, 1), (1, 2)]
    assert s.agreement_pct == pytest.approx(100 * 4 / 7)
    assert s.alpha == pytest.approx(oracle_alpha([list(p) for p in pairs], "ordinal"), abs=1e-12)
    assert s.rho == pytest.approx(oracle_rho([p[0] for p in pairs], [p[1] for p in pairs]), abs=1e-12)


def test_human_human_uses_only_humans():
    m = RaterMatrix(tuple("abc"), ("llm", "h1", "h2"), ((1, 1, 1), (4, 2, 3), (2, 2, None)))
    s = human_human_stats(m, ["h1", "h2"])
    assert s.n_pairs == 2
    assert s.agreement_pct == pytest.approx(50.0)


def test_read_rater_csv(tmp_path):
    path = tmp_path / "ent.csv"
    path.write_text("item,llm,h1,h2\n1,Entailed,partially entailed,\n2,not_entailed,Not-Entailed,entailed\n\n")
    m = read_rater_csv(path, NOMINAL_3CLASS)
    assert m.raters == ("llm", "h1", "h2")
    assert m.values == (("entailed", "partially_entailed", None), ("not_entailed", "not_entailed", "entailed"))
    bad = tmp_path / "bad.csv"
    bad.write_text("item,a,b\n1,3,x\n")
    with pytest.raises(ValueError, match="bad.csv:2"):
        read_rater_csv(bad, ORDINAL_1_4)


# ------------------------------------------------------------------- reports

def report(method, model, ref, es, el, ds, dl, n=10):
    return AggregateReport(method, model, n, ref, es, el, ds, dl)


def test_markdown_bolds_best_per_column_and_section():
    table = ReportTable()
    table.add("Full", report("image_text", "m1", 2.5, 40.0, 80.0, 90.0, 100.0))
    table.add("Full", report("mice", "m1", 3.25, 54.9, 74.6, 98.8, 100.0))
    table.add("Full", FailedCell("text_only", "m1", "boom"))
    table.add("Intent", report("mice", "m1", 1.0, 1.0, 1.0, 1.0, 1.0))
    md = render_markdown(table).splitlines()
    assert md[2].startswith("| **Full** |")
    assert md[3] == "| MLLM | m1 | 10 | 0 | 2.50 | 40.0 | **80.0** | 90.0 | **100.0** |"
    assert md[4] == "| MICE | m1 | 10 | 0 | **3.25** | **54.9** | 74.6 | **98.8** | **100.0** |"
    assert "failed" in md[5]
    assert md[7] == "| MICE | m1 | 10 | 0 | **1.00** | **1.0** | **1.0** | **1.0** | **1.0** |"


def test_csv_keeps_full_precision():
    table = ReportTable()
    table.add("", report("mice", "m", 10 / 3, 100 / 7, 50.0, 0.0, 12.5))
    rows = list(csv.DictReader(io.StringIO(render_csv(table))))
    assert float(rows[0]["mean_reference"]) == 10 / 3
    assert float(rows[0]["entailment_strict_pct"]) == 100 / 7
