"""Acceptance criteria, each at its stated tolerance.

Every test records a PASS/FAIL line through the ``criterion`` fixture; the
lines are printed together in the pytest terminal summary.
"""

import bisect
import io
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from aggrisk.bench import (
    Workload,
    bench_layouts,
    bench_oversubscription,
    bench_scaling,
    dense_lookup_latency,
    latency_spread,
    physical_cores,
)
from aggrisk.datagen import GenSpec, generate_elt, generate_portfolio, generate_yet
from aggrisk.engine import RunConfig, run_analysis, run_precision_comparison
from aggrisk.io import (
    load_workload,
    read_elt_csv,
    read_yet,
    read_ylt_csv,
    write_elt_csv,
    write_workload,
    write_yet,
    write_ylt_csv,
)
from aggrisk.lookup import Layout, build_layout, memory_footprint, zero_entry_count
from aggrisk.metrics import exceedance_curve, pml, tvar, var
from aggrisk.model import YearLossTable
from aggrisk.oracle import oracle_analyze

pytestmark = pytest.mark.slow

# desk workload: the reference layer shape (16 ELTs x 10k entries over a 1e6 catalog)
# on 10k trials of 800-1500 events
DESK = GenSpec(seed=7, num_trials=10_000, events_per_trial=(800, 1500), catalog_size=1_000_000,
               elt_entry_count=10_000)


@pytest.fixture(scope="module")
def desk():
    return Workload.generate(DESK, 1, 1, 16)


def _ylt_bytes(ylt: YearLossTable) -> bytes:
    buf = io.StringIO()
    write_ylt_csv(ylt, buf)
    return buf.getvalue().encode()


def test_c01_oracle_equivalence(criterion):
    t0 = time.perf_counter()
    mismatches, nonzero = [], 0
    for seed in range(1, 21):
        spec = GenSpec(seed=seed, num_trials=1_000, events_per_trial=(100, 100), catalog_size=100_000,
                       elt_entry_count=10_000)
        portfolio, elts = generate_portfolio(spec, 1, 1, 4)
        yet = generate_yet(spec)
        got = run_analysis(portfolio, yet, elts)
        nonzero += int(np.count_nonzero(got.total.losses))
        if not got.same_losses(oracle_analyze(portfolio, yet, elts)):
            mismatches.append(f"seed {seed}")
    spec = GenSpec(seed=7, num_trials=10_000, events_per_trial=(1_000, 1_000), catalog_size=1_000_000,
                   elt_entry_count=10_000)
    portfolio, elts = generate_portfolio(spec, 1, 1, 16)
    yet = generate_yet(spec)
    big = run_analysis(portfolio, yet, elts)
    if not big.same_losses(oracle_analyze(portfolio, yet, elts)):
        mismatches.append("10k x 1000 x 16")
    elapsed = time.perf_counter() - t0
    ok = not mismatches and elapsed < 120 and nonzero > 0 and np.count_nonzero(big.total.losses) > 0
    criterion(1, ok, f"20 small + 1 large instance bitwise equal to oracle; mismatches={mismatches} "
                     f"runtime={elapsed:.1f}s (< 120s)")
    assert ok


def test_c02_parallel_invariance(desk, criterion):
    t0 = time.perf_counter()
    lookups = desk.lookups(Layout.DIRECT, RunConfig().precision)
    files = {}
    for workers in (1, 2, 4, 8):
        for chunk in (1, 64, 256, 1024):
            result = run_analysis(desk.portfolio, desk.yet, desk.elts,
                                  RunConfig(workers=workers, chunk_size=chunk), lookups)
            files[(workers, chunk)] = b"".join(_ylt_bytes(y) for y in [*result.layers.values(), result.total])
    distinct = len(set(files.values()))
    elapsed = time.perf_counter() - t0
    ok = distinct == 1 and elapsed < 300
    criterion(2, ok, f"16 worker/chunk configs -> {distinct} distinct YLT file contents; runtime={elapsed:.1f}s")
    assert ok


def test_c03_worked_example(worked_example, criterion):
    portfolio, yet, elts = worked_example
    got = float(run_analysis(portfolio, yet, elts).total.losses[0])
    ok = got == 140.0
    criterion(3, ok, f"hand-traced two-event trial -> {got!r} (expected 140.0 exactly)")
    assert ok


def test_c04_scaling(criterion):
    cores = physical_cores()
    if cores < 4:
        criterion(4, False, f"not applicable: {cores} physical core(s) < 4, speedup threshold not measurable here",
                  skipped=True)
        pytest.skip(f"needs >= 4 physical cores, machine has {cores}")
    spec = GenSpec(seed=7, num_trials=100_000, events_per_trial=(1_000, 1_000))
    report = bench_scaling(Workload.generate(spec, 1, 1, 16), [1, 4], repetitions=3)
    row = report.rows[1]
    ok = row.speedup >= 3.0
    criterion(4, ok, f"speedup at 4 workers = {row.speedup:.2f} (>= 3.0), efficiency {row.efficiency:.2f}")
    assert ok


def test_c05_oversubscription(desk, criterion):
    report = bench_oversubscription(desk, [2, 4], repetitions=5)
    base = report.baseline.median
    detail = ", ".join(f"slots={r.config.threads_per_worker_slot}: {r.median:.3f}s" for r in report.rows)
    beats = [r for r in report.rows[1:] if r.extra["beats_baseline"]]
    criterion(5, not beats, f"workers={report.baseline.config.workers}; {detail}; baseline {base:.3f}s; "
                            f"rows >5% faster than 1/slot: {len(beats)}", soft=True)
    # soft criterion: reported, never fatal
    assert len({r.checksum for r in report.rows}) == 1


def test_c06_layout_equivalence_and_dense_latency(desk, criterion):
    report = bench_layouts(desk, list(Layout), repetitions=1)
    sums = {str(r.config.layout): r.checksum[:12] for r in report.rows}
    latency = dense_lookup_latency([1_000, 10_000, 100_000], catalog_size=1_000_000)
    spread = latency_spread(latency)
    ok = len(set(sums.values())) == 1 and spread <= 0.10
    lat = ", ".join(f"{n}: {s * 1e9:.2f}ns" for n, s in latency.items())
    criterion(6, ok, f"checksums {sums}; dense lookup latency {lat}; spread {spread:.1%} (<= 10%)")
    assert ok


def test_c07_memory_accounting(criterion):
    spec = GenSpec(seed=7, catalog_size=1_000_000, elt_entry_count=10_000)
    elts = [generate_elt(spec, i) for i in range(1, 17)]
    direct = build_layout(elts, 1_000_000, Layout.DIRECT)
    footprint = memory_footprint(direct)
    zeros15 = zero_entry_count(build_layout(elts[:15], 1_000_000, Layout.DIRECT))
    ok = footprint == 16 * 1_000_001 * 8 and zeros15 == 14_850_000
    criterion(7, ok, f"direct footprint {footprint} (expected {16 * 1_000_001 * 8}); "
                     f"15-ELT zero entries {zeros15} (expected 14850000)")
    assert ok


def test_c08_precision(desk, criterion):
    cmp = run_precision_comparison(desk.portfolio, desk.yet, desk.elts)
    wide, narrow = cmp.wide.total, cmp.narrow.total
    metric_diff = 0.0
    for rp in (2, 5, 10, 50, 100, 250, 1000):
        a, b = pml(wide, rp), pml(narrow, rp)
        metric_diff = max(metric_diff, abs(a - b) / max(abs(a), 1.0))
    for alpha in (0.9, 0.99, 0.995, 0.999):
        a, b = tvar(wide, alpha), tvar(narrow, alpha)
        metric_diff = max(metric_diff, abs(a - b) / max(abs(a), 1.0))
    ok = cmp.max_relative_diff <= 1e-3 and metric_diff <= 1e-3
    criterion(8, ok, f"max YLT relative deviation {cmp.max_relative_diff:.2e}; "
                     f"max PML/TVaR relative deviation {metric_diff:.2e} (both <= 1e-3)")
    assert ok


# -- independent sort-and-count oracles for the metrics criterion

def _ep_oracle(ordered):
    n = len(ordered)
    return [(v, (n - bisect.bisect_left(ordered, v)) / n) for v in sorted(set(ordered))]


def _pml_oracle(ordered, rp):
    rank = math.ceil(Fraction(len(ordered)) / Fraction(str(rp)))
    return ordered[len(ordered) - rank]


def _var_oracle(ordered, alpha):
    n, a = len(ordered), Fraction(str(alpha))
    for v in ordered:
        if Fraction(bisect.bisect_right(ordered, v), n) >= a:
            return v


def _tvar_oracle(ordered, alpha):
    k = math.ceil((1 - Fraction(str(alpha))) * len(ordered))
    return float(sum(Fraction(x) for x in ordered[len(ordered) - k:]) / k)


def _random_ylt(rng, n):
    kind = rng.integers(0, 4)
    if kind == 0:
        losses = rng.lognormal(10, 2, n)
    elif kind == 1:
        losses = np.where(rng.random(n) < 0.7, 0.0, rng.lognormal(8, 1, n))
    elif kind == 2:
        losses = rng.integers(0, 20, n).astype(float)
    else:
        losses = np.round(rng.exponential(1e6, n), 2)
    return losses


def test_c09_metrics_oracle(criterion):
    rng = np.random.default_rng(909)
    sizes = [1, 2, 3, 10, 10_000] + rng.integers(1, 10_001, 95).tolist()
    failures = []
    for i, n in enumerate(sizes):
        losses = _random_ylt(rng, n)
        ordered = sorted(losses.tolist())
        ep = exceedance_curve(losses)
        if ep.points != _ep_oracle(ordered):
            failures.append((i, "ep"))
        if np.any(np.diff(ep.probabilities) > 0):
            failures.append((i, "ep monotone"))
        rps = [rp for rp in (1.5, 2, 5, 10, 50, 100, 250, 1000) if rp <= n]
        pmls = [pml(losses, rp) for rp in rps]
        if pmls != [_pml_oracle(ordered, rp) for rp in rps]:
            failures.append((i, "pml"))
        if pmls != sorted(pmls):
            failures.append((i, "pml monotone"))
        for alpha in (0.5, 0.8, 0.9, 0.99, 0.995):
            v, t = var(losses, alpha), tvar(losses, alpha)
            if v != _var_oracle(ordered, alpha) or t != _tvar_oracle(ordered, alpha):
                failures.append((i, f"var/tvar {alpha}"))
            if t < v:
                failures.append((i, f"tvar < var at {alpha}"))
    ok = not failures
    criterion(9, ok, f"{len(sizes)} random YLTs (sizes 1-10000) vs sort/count oracles; failures={failures[:5]}")
    assert ok


def test_c10_round_trips(tmp_path, criterion):
    failures = []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        lo = int(rng.integers(1, 30))
        spec = GenSpec(seed=seed, num_trials=int(rng.integers(1, 400)), events_per_trial=(lo, lo + int(rng.integers(0, 60))),
                       catalog_size=int(rng.integers(500, 20_000)), elt_entry_count=int(rng.integers(1, 400)),
                       loss_scale=float(rng.choice([1.0, 1e3, 1e5])))
        portfolio, elts = generate_portfolio(spec, int(rng.integers(1, 3)), int(rng.integers(1, 3)),
                                             int(rng.integers(1, 5)))
        yet = generate_yet(spec)
        d = tmp_path / f"s{seed}"
        d.mkdir()
        write_yet(yet, d / "yet.bin")
        if read_yet(d / "yet.bin") != yet:
            failures.append((seed, "yet"))
        config = write_workload(portfolio, elts, d)
        if load_workload(config) != (portfolio, elts):
            failures.append((seed, "portfolio/elt"))
        for elt in elts.values():
            buf = io.StringIO()
            write_elt_csv(elt, buf)
            if read_elt_csv(io.StringIO(buf.getvalue()), elt.elt_id, elt.terms) != elt:
                failures.append((seed, f"elt {elt.elt_id}"))
        for precision in ("wide", "narrow"):
            result = run_analysis(portfolio, yet, elts, RunConfig(precision=precision))
            for ylt in [*result.layers.values(), result.total]:
                back = read_ylt_csv(io.StringIO(_ylt_bytes(ylt).decode()), ylt.scope, ylt.losses.dtype)
                if back != ylt:
                    failures.append((seed, f"ylt {precision}"))
    ok = not failures
    criterion(10, ok, f"50 seeded instances: YET binary, ELT CSV, YLT CSV (both precisions), config; "
                      f"failures={failures[:5]}")
    assert ok
