"""Benchmark harness: thread scaling, oversubscription, layouts, chunk sizes, precision.

Each configuration gets one discarded warm-up run and ``repetitions`` timed
runs, interleaved round-robin across configurations; rows report the median
and minimum compute time. Every timed run's result
checksum is compared against the experiment's baseline and a mismatch aborts
the report, so no timing is ever published for a wrong answer.
"""

from __future__ import annotations

import csv
import os
import platform
import statistics
import time
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence, TextIO

import numba
import numpy as np
import psutil

from .datagen import GenSpec, generate_elt, generate_portfolio, generate_yet
from .engine import AnalysisResult, Precision, RunConfig, max_relative_diff, resolve_elts, run_analysis
from .lookup import PROBES, Layout, build_layout, memory_footprint
from .model import EventLossTable, Portfolio, YearEventTable

EXPERIMENTS = ("scaling", "oversubscription", "layouts", "chunks", "precision")

# soft threshold: a config "beats" the baseline only if >5% faster
BEAT_MARGIN = 0.05
PRECISION_TOLERANCE = 1e-3


class ChecksumMismatch(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Workload:
    portfolio: Portfolio
    yet: YearEventTable
    elts: Mapping[int, EventLossTable]
    label: str = ""

    @classmethod
    def generate(cls, spec: GenSpec, num_programs: int = 1, layers_per_program: int = 1,
                 elts_per_layer: int = 16) -> "Workload":
        portfolio, elts = generate_portfolio(spec, num_programs, layers_per_program, elts_per_layer)
        label = (f"seed={spec.seed} trials={spec.num_trials} events={spec.events_per_trial[0]}-"
                 f"{spec.events_per_trial[1]} catalog={spec.catalog_size} "
                 f"elts={num_programs * layers_per_program * elts_per_layer}x{spec.elt_entry_count}")
        return cls(portfolio, generate_yet(spec), elts, label)

    @property
    def num_layers(self) -> int:
        return sum(1 for _ in self.portfolio.iter_layers())

    def lookups(self, layout: Layout, precision: Precision):
        return [build_layout(resolve_elts(layer, self.elts), self.yet.catalog_size, layout, precision.dtype)
                for _, layer in self.portfolio.iter_layers()]


def physical_cores() -> int:
    return psutil.cpu_count(logical=False) or os.cpu_count() or 1


def machine_descriptor() -> dict:
    freq = None
    try:
        f = psutil.cpu_freq()
        freq = round(f.current) if f else None
    except (NotImplementedError, OSError, FileNotFoundError):
        pass
    return {
        "physical_cores": physical_cores(),
        "logical_cores": psutil.cpu_count(logical=True) or os.cpu_count() or 1,
        "clock_mhz": freq,
        "processor": platform.processor() or platform.machine(),
        "python": platform.python_version(),
    }


@dataclass
class BenchRow:
    label: str
    config: RunConfig
    times: list[float]
    checksum: str
    events: int
    speedup: float = 1.0
    efficiency: float = 1.0
    extra: dict = field(default_factory=dict)

    @property
    def median(self) -> float:
        return statistics.median(self.times)

    @property
    def minimum(self) -> float:
        return min(self.times)

    @property
    def throughput(self) -> float:
        return self.events / self.median if self.median > 0 else float("inf")


@dataclass
class BenchReport:
    experiment: str
    workload: str
    machine: dict
    repetitions: int
    rows: list[BenchRow] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    COLUMNS = ("experiment", "label", "workers", "threads_per_slot", "chunk_size", "precision", "layout",
               "repetitions", "median_s", "min_s", "speedup", "efficiency", "throughput_eps", "checksum")

    @property
    def baseline(self) -> BenchRow:
        return self.rows[0]

    def _extra_keys(self) -> list[str]:
        keys: dict[str, None] = {}
        for row in self.rows:
            keys.update(dict.fromkeys(row.extra))
        return list(keys)

    def records(self) -> list[dict]:
        out = []
        for row in self.rows:
            c = row.config
            rec = {
                "experiment": self.experiment, "label": row.label, "workers": c.workers,
                "threads_per_slot": c.threads_per_worker_slot, "chunk_size": c.chunk_size,
                "precision": str(c.precision), "layout": str(c.layout), "repetitions": len(row.times),
                "median_s": f"{row.median:.6f}", "min_s": f"{row.minimum:.6f}",
                "speedup": f"{row.speedup:.4f}", "efficiency": f"{row.efficiency:.4f}",
                "throughput_eps": f"{row.throughput:.0f}", "checksum": row.checksum[:16],
            }
            rec.update({k: row.extra.get(k, "") for k in self._extra_keys()})
            out.append(rec)
        return out

    def to_csv(self, sink: TextIO) -> None:
        writer = csv.DictWriter(sink, fieldnames=[*self.COLUMNS, *self._extra_keys()], lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.records())

    def to_table(self) -> str:
        recs = self.records()
        cols = ["label", "median_s", "min_s", "speedup", "efficiency", "throughput_eps", *self._extra_keys()]
        widths = {c: max(len(c), *(len(str(r[c])) for r in recs)) for c in cols}
        lines = [
            f"experiment: {self.experiment}   workload: {self.workload}",
            "machine: " + ", ".join(f"{k}={v}" for k, v in self.machine.items()),
            "  ".join(c.ljust(widths[c]) for c in cols),
            "  ".join("-" * widths[c] for c in cols),
        ]
        lines += ["  ".join(str(r[c]).rjust(widths[c]) for c in cols) for r in recs]
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines)


def _timed(workload: Workload, config: RunConfig, repetitions: int, lookups=None,
           expected: str | None = None) -> tuple[list[float], AnalysisResult]:
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if lookups is None:
        lookups = workload.lookups(config.layout, config.precision)
    result = run_analysis(workload.portfolio, workload.yet, workload.elts, config, lookups)  # warm-up
    times = []
    for _ in range(repetitions):
        result = run_analysis(workload.portfolio, workload.yet, workload.elts, config, lookups)
        if expected is not None and result.checksum() != expected:
            raise ChecksumMismatch(f"{config.as_dict()} produced checksum {result.checksum()[:16]}, "
                                   f"baseline {expected[:16]}")
        times.append(result.timing.compute_seconds)
    return times, result


def _run_rows(experiment: str, workload: Workload, configs: Sequence[tuple[str, RunConfig]],
              repetitions: int) -> BenchReport:
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    report = BenchReport(experiment, workload.label, machine_descriptor(), repetitions)
    cache: dict = {}
    events = workload.yet.num_events * workload.num_layers

    def run(config: RunConfig) -> AnalysisResult:
        key = (config.layout, config.precision)
        if key not in cache:
            cache[key] = workload.lookups(config.layout, config.precision)
        return run_analysis(workload.portfolio, workload.yet, workload.elts, config, cache[key])

    first = configs[0][1]
    expected = run(replace(first, workers=1, threads_per_worker_slot=1)).checksum()
    times: list[list[float]] = [[] for _ in configs]
    for _, config in configs:
        run(config)  # warm-up
    # round-robin over configs so machine drift during the sweep hits every row alike
    for _ in range(repetitions):
        for i, (_, config) in enumerate(configs):
            result = run(config)
            if result.checksum() != expected:
                raise ChecksumMismatch(f"{config.as_dict()} produced checksum {result.checksum()[:16]}, "
                                       f"baseline {expected[:16]}")
            times[i].append(result.timing.compute_seconds)
    for (label, config), t in zip(configs, times):
        report.rows.append(BenchRow(label, config, t, expected, events))
    base = report.baseline
    for row in report.rows:
        row.speedup = base.median / row.median if row.median > 0 else float("inf")
        row.efficiency = row.speedup * base.config.threads / row.config.threads
    return report


def bench_scaling(workload: Workload, worker_counts: Sequence[int], repetitions: int = 3,
                  base: RunConfig = RunConfig()) -> BenchReport:
    """One row per worker count; speedup relative to the first count, efficiency = speedup / workers."""
    if not worker_counts or min(worker_counts) < 1:
        raise ValueError("worker counts must be >= 1")
    configs = [(f"workers={w}", replace(base, workers=w, threads_per_worker_slot=1)) for w in worker_counts]
    report = _run_rows("scaling", workload, configs, repetitions)
    w0 = report.baseline.config.workers
    for row in report.rows:
        row.efficiency = row.speedup * w0 / row.config.workers
    return report


def bench_oversubscription(workload: Workload, threads_per_slot: Sequence[int], repetitions: int = 3,
                           workers: int | None = None, base: RunConfig = RunConfig()) -> BenchReport:
    """Fix workers (default: physical cores) and vary threads per slot; flags rows >5% faster than 1/slot."""
    workers = workers or physical_cores()
    slots = list(threads_per_slot)
    if 1 in slots:
        slots.remove(1)
    slots.insert(0, 1)
    configs = [(f"threads_per_slot={s}", replace(base, workers=workers, threads_per_worker_slot=s)) for s in slots]
    report = _run_rows("oversubscription", workload, configs, repetitions)
    base_median = report.baseline.median
    for row in report.rows:
        row.efficiency = row.speedup
        row.extra["beats_baseline"] = row.median < (1.0 - BEAT_MARGIN) * base_median
    report.notes.append("any config beats 1 thread/slot by >5%: "
                        + str(any(r.extra["beats_baseline"] for r in report.rows)))
    return report


def bench_layouts(workload: Workload, kinds: Sequence[Layout | str], repetitions: int = 3,
                  base: RunConfig = RunConfig()) -> BenchReport:
    kinds = [Layout(k) for k in kinds]
    configs = [(f"layout={k}", replace(base, layout=k)) for k in kinds]
    report = _run_rows("layouts", workload, configs, repetitions)
    ranking = sorted(report.rows, key=lambda r: r.median)
    for row in report.rows:
        row.efficiency = row.speedup
        row.extra["memory_bytes"] = sum(memory_footprint(lk) for lk in
                                        workload.lookups(row.config.layout, row.config.precision))
        row.extra["rank"] = ranking.index(row) + 1
    return report


def bench_chunk_sweep(workload: Workload, chunk_sizes: Sequence[int], repetitions: int = 3,
                      base: RunConfig = RunConfig()) -> BenchReport:
    configs = [(f"chunk={c}", replace(base, chunk_size=c)) for c in chunk_sizes]
    report = _run_rows("chunks", workload, configs, repetitions)
    for row in report.rows:
        row.efficiency = row.speedup
    return report


def bench_precision(workload: Workload, repetitions: int = 3, base: RunConfig = RunConfig(),
                    tolerance: float = PRECISION_TOLERANCE) -> BenchReport:
    """Wide vs narrow; the correctness gate is the max relative deviation, not equal checksums."""
    report = BenchReport("precision", workload.label, machine_descriptor(), repetitions)
    events = workload.yet.num_events * workload.num_layers
    results = {}
    for precision in (Precision.WIDE, Precision.NARROW):
        config = replace(base, precision=precision)
        first = run_analysis(workload.portfolio, workload.yet, workload.elts, config)
        times, result = _timed(workload, config, repetitions, expected=first.checksum())
        results[precision] = result
        report.rows.append(BenchRow(f"precision={precision}", config, times, result.checksum(), events))
    wide, narrow = results[Precision.WIDE], results[Precision.NARROW]
    diff = max(max_relative_diff(wide.total.losses, narrow.total.losses),
               *(max_relative_diff(wide.layers[s].losses, narrow.layers[s].losses) for s in wide.layers))
    if diff > tolerance:
        raise ChecksumMismatch(f"narrow precision deviates by {diff:.3g} > {tolerance:g}")
    base_median = report.baseline.median
    for row in report.rows:
        row.speedup = base_median / row.median if row.median > 0 else float("inf")
        row.efficiency = row.speedup
        row.extra["max_rel_diff"] = f"{diff if row.config.precision is Precision.NARROW else 0.0:.3e}"
    return report


@numba.njit(nogil=True, cache=True)
def _probe_loop(probe, keys, values, offsets, events):
    acc = values.ravel()[0] * 0.0
    for i in range(events.shape[0]):
        acc += probe(keys, values, offsets, events[i], 0)
    return acc


def dense_lookup_latency(entry_counts: Sequence[int], catalog_size: int = 1_000_000,
                         kind: Layout | str = Layout.DIRECT, probes: int = 250_000,
                         repetitions: int = 81, seed: int = 7) -> dict[int, float]:
    """Best-of-``repetitions`` seconds per lookup on a one-ELT table, per ELT entry count.

    Probe keys are the same uniform random event ids for every entry count, so
    the memory access pattern is identical and only the table contents change.
    Many short rounds with a best-of reduction filter out scheduler noise better
    than a few long ones.
    """
    kind = Layout(kind)
    rng = np.random.Generator(np.random.Philox(seed))
    events = rng.integers(1, catalog_size + 1, probes).astype(np.uint32)
    args = {}
    for n in entry_counts:
        elt = generate_elt(GenSpec(seed=seed, catalog_size=catalog_size, elt_entry_count=n), 1)
        table = build_layout([elt], catalog_size, kind)
        args[n] = (PROBES[kind], table.keys, table.values, table.offsets, events)
        _probe_loop(*args[n])  # warm-up and compile
    times: dict[int, list[float]] = {n: [] for n in args}
    # round-robin over entry counts so machine drift hits all of them alike
    for _ in range(repetitions):
        for n, a in args.items():
            t0 = time.perf_counter()
            _probe_loop(*a)
            times[n].append(time.perf_counter() - t0)
    return {n: min(t) / probes for n, t in times.items()}


def latency_spread(latencies: Mapping[int, float]) -> float:
    """(max - min) / min over the measured latencies."""
    values = list(latencies.values())
    return (max(values) - min(values)) / min(values)
