"""Trial-parallel aggregate risk analysis.

For every layer and every trial: each event's raw losses are looked up in the
layer's ELTs, netted of the ELT terms and summed in ELT order; the event total
is netted of the occurrence terms; the trial's occurrence-net losses are summed
in event order and the aggregate terms applied once to that sum.

Trials are split into contiguous blocks, one per thread, and every trial writes
only its own output slot. The accumulation order inside a trial never depends
on the block split or the chunk size, so results are bitwise reproducible for
any ``workers`` / ``chunk_size``.
"""

from __future__ import annotations

import enum
import hashlib
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numba
import numpy as np

from .lookup import PROBES, Layout, LossLookup, build_layout
from .model import (
    PORTFOLIO_TOTAL,
    EventLossTable,
    Layer,
    Portfolio,
    Trial,
    YearEventTable,
    YearLossTable,
    layer_scope,
)

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 256


class Precision(str, enum.Enum):
    WIDE = "wide"
    NARROW = "narrow"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float64 if self is Precision.WIDE else np.float32)

    def __str__(self) -> str:
        return self.value


class EngineError(RuntimeError):
    pass


class UnresolvedEltError(EngineError, KeyError):
    pass


class WorkerError(EngineError):
    """A worker thread failed; ``trial_block`` is the half-open position range it owned."""

    def __init__(self, trial_block: tuple[int, int], cause: BaseException):
        super().__init__(f"worker failed on trial block [{trial_block[0]}, {trial_block[1]}): {cause!r}")
        self.trial_block = trial_block


class BoundsViolation(EngineError):
    pass


@dataclass(frozen=True)
class RunConfig:
    workers: int = 1
    threads_per_worker_slot: int = 1
    chunk_size: int = DEFAULT_CHUNK_SIZE
    precision: Precision = Precision.WIDE
    layout: Layout = Layout.DIRECT
    checked: bool = False

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.threads_per_worker_slot < 1:
            raise ValueError("threads_per_worker_slot must be >= 1")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        object.__setattr__(self, "precision", Precision(self.precision))
        object.__setattr__(self, "layout", Layout(self.layout))

    @property
    def threads(self) -> int:
        return self.workers * self.threads_per_worker_slot

    def as_dict(self) -> dict:
        return {"workers": self.workers, "threads_per_worker_slot": self.threads_per_worker_slot,
                "chunk_size": self.chunk_size, "precision": str(self.precision),
                "layout": str(self.layout), "checked": self.checked}


@dataclass(frozen=True)
class Timing:
    load_seconds: float
    compute_seconds: float
    events_processed: int

    @property
    def events_per_second(self) -> float:
        return self.events_processed / self.compute_seconds if self.compute_seconds > 0 else math.inf


@dataclass(frozen=True, eq=False)
class AnalysisResult:
    """Layer YLTs keyed by scope label (``portfolio/program/layer``) plus the portfolio total."""

    layers: dict[str, YearLossTable]
    total: YearLossTable
    timing: Timing | None = None

    def checksum(self) -> str:
        h = hashlib.sha256()
        for scope, ylt in [*self.layers.items(), (PORTFOLIO_TOTAL, self.total)]:
            h.update(scope.encode())
            h.update(str(ylt.losses.dtype).encode())
            h.update(ylt.trial_ids.tobytes())
            h.update(ylt.losses.tobytes())
        return h.hexdigest()

    def same_losses(self, other: "AnalysisResult") -> bool:
        return (list(self.layers) == list(other.layers)
                and all(self.layers[k] == other.layers[k] for k in self.layers)
                and self.total == other.total)


@numba.njit(nogil=True, cache=True)
def _analyze_block(probe, keys, values, lk_offsets, elt_ret, elt_lim,
                   occ_ret, occ_lim, agg_ret, agg_lim,
                   trial_offsets, event_ids, lo, hi, chunk, buf, out, checked, flags):
    zero = occ_ret - occ_ret
    n_elts = elt_ret.shape[0]
    for t in range(lo, hi):
        first = trial_offsets[t]
        last = trial_offsets[t + 1]
        total = zero
        for start in range(first, last, chunk):
            stop = min(start + chunk, last)
            # event-level pass over the block, then fold into the trial sum
            for k in range(start, stop):
                e = event_ids[k]
                event_loss = zero
                for j in range(n_elts):
                    raw = probe(keys, values, lk_offsets, e, j)
                    event_loss += min(max(raw - elt_ret[j], zero), elt_lim[j])
                occ = min(max(event_loss - occ_ret, zero), occ_lim)
                if checked and (occ < zero or occ > occ_lim):
                    flags[0] += 1
                buf[k - start] = occ
            for k in range(stop - start):
                total += buf[k]
        loss = min(max(total - agg_ret, zero), agg_lim)
        if checked and (loss < zero or loss > agg_lim):
            flags[1] += 1
        out[t] = loss


def _layer_args(layer: Layer, lookup: LossLookup, dtype: np.dtype):
    return (
        PROBES[lookup.kind], lookup.keys, lookup.values, lookup.offsets,
        lookup.retention, lookup.limit,
        dtype.type(layer.occurrence.retention), dtype.type(layer.occurrence.limit),
        dtype.type(layer.aggregate.retention), dtype.type(layer.aggregate.limit),
    )


def _check_lookup(lookup: LossLookup, dtype: np.dtype, yet: YearEventTable) -> None:
    if lookup.dtype != dtype:
        raise ValueError(f"lookup holds {lookup.dtype}, precision needs {dtype}")
    if yet.num_events and int(yet.event_ids.max()) > lookup.catalog_size:
        raise ValueError(f"YET references event {int(yet.event_ids.max())} beyond lookup catalog "
                         f"size {lookup.catalog_size}")


def analyze_trial(trial: Trial, layer: Layer, lookup: LossLookup,
                  precision: Precision | str = Precision.WIDE, chunk_size: int = DEFAULT_CHUNK_SIZE) -> float:
    """Loss of one trial under one layer; ``lookup`` must be built from ``layer.elt_refs`` in order."""
    dtype = Precision(precision).dtype
    if lookup.num_elts != len(layer.elt_refs):
        raise ValueError("lookup does not match the layer's ELT count")
    yet = YearEventTable.from_trials([trial], catalog_size=lookup.catalog_size)
    _check_lookup(lookup, dtype, yet)
    out = np.zeros(1, dtype=dtype)
    flags = np.zeros(2, dtype=np.int64)
    _analyze_block(*_layer_args(layer, lookup, dtype), yet.offsets, yet.event_ids,
                   0, 1, chunk_size, np.empty(chunk_size, dtype=dtype), out, False, flags)
    return float(out[0])


def resolve_elts(layer: Layer, elts: Mapping[int, EventLossTable] | Sequence[EventLossTable]) -> list[EventLossTable]:
    by_id = elts if isinstance(elts, Mapping) else {e.elt_id: e for e in elts}
    missing = [ref for ref in layer.elt_refs if ref not in by_id]
    if missing:
        raise UnresolvedEltError(f"layer {layer.layer_id} references unknown ELT ids {missing}")
    return [by_id[ref] for ref in layer.elt_refs]


def partition(n: int, parts: int) -> list[tuple[int, int]]:
    """Split ``range(n)`` into at most ``parts`` contiguous, near-equal, non-empty blocks."""
    parts = max(1, min(parts, n))
    base, extra = divmod(n, parts)
    blocks, lo = [], 0
    for i in range(parts):
        hi = lo + base + (1 if i < extra else 0)
        blocks.append((lo, hi))
        lo = hi
    return blocks


def run_analysis(portfolio: Portfolio, yet: YearEventTable,
                 elts: Mapping[int, EventLossTable] | Sequence[EventLossTable],
                 config: RunConfig = RunConfig(),
                 lookups: Sequence[LossLookup] | None = None) -> AnalysisResult:
    """Run every layer of ``portfolio`` over every trial of ``yet``.

    ``lookups`` may supply prebuilt tables (one per layer, portfolio order);
    otherwise they are built here and counted as load time.
    """
    dtype = config.precision.dtype
    pairs = list(portfolio.iter_layers())
    t0 = time.perf_counter()
    if lookups is None:
        lookups = [build_layout(resolve_elts(layer, elts), yet.catalog_size, config.layout, dtype)
                   for _, layer in pairs]
    elif len(lookups) != len(pairs):
        raise ValueError("need one lookup per layer")
    for lk in lookups:
        _check_lookup(lk, dtype, yet)
    args = [_layer_args(layer, lk, dtype) for (_, layer), lk in zip(pairs, lookups)]
    load_seconds = time.perf_counter() - t0

    n = yet.num_trials
    out = np.zeros((len(pairs), n), dtype=dtype)
    flags = np.zeros(2, dtype=np.int64)
    blocks = partition(n, config.threads)

    def work(block: tuple[int, int]) -> np.ndarray:
        lo, hi = block
        local = np.zeros(2, dtype=np.int64)
        buf = np.empty(config.chunk_size, dtype=dtype)
        try:
            for i, layer_args in enumerate(args):
                _analyze_block(*layer_args, yet.offsets, yet.event_ids, lo, hi,
                               config.chunk_size, buf, out[i], config.checked, local)
        except Exception as exc:
            raise WorkerError(block, exc) from exc
        return local

    t1 = time.perf_counter()
    if len(blocks) == 1:
        flags += work(blocks[0])
    else:
        with ThreadPoolExecutor(max_workers=len(blocks), thread_name_prefix="aggrisk") as pool:
            for local in pool.map(work, blocks):
                flags += local
    compute_seconds = time.perf_counter() - t1
    if config.checked and flags.any():
        raise BoundsViolation(f"{int(flags[0])} occurrence and {int(flags[1])} aggregate bound violations")

    layers = {}
    total = np.zeros(n, dtype=dtype)
    for i, (program, layer) in enumerate(pairs):
        layers[layer_scope(portfolio, program, layer)] = YearLossTable(yet.trial_ids, out[i],
                                                                       layer_scope(portfolio, program, layer))
        total += out[i]
    timing = Timing(load_seconds, compute_seconds, yet.num_events * len(pairs))
    logger.debug("analysis: %d trials x %d layers in %.3fs", n, len(pairs), compute_seconds)
    return AnalysisResult(layers, YearLossTable(yet.trial_ids, total, PORTFOLIO_TOTAL), timing)


def max_relative_diff(reference: np.ndarray, other: np.ndarray) -> float:
    """Largest elementwise relative difference; absolute difference where ``|reference| < 1``."""
    ref = np.asarray(reference, dtype=np.float64)
    diff = np.abs(np.asarray(other, dtype=np.float64) - ref)
    denom = np.where(np.abs(ref) < 1.0, 1.0, np.abs(ref))
    return float((diff / denom).max()) if diff.size else 0.0


@dataclass(frozen=True, eq=False)
class PrecisionComparison:
    wide: AnalysisResult
    narrow: AnalysisResult
    max_relative_diff: float
    per_scope: dict[str, float] = field(default_factory=dict)


def run_precision_comparison(portfolio: Portfolio, yet: YearEventTable,
                             elts: Mapping[int, EventLossTable] | Sequence[EventLossTable],
                             config: RunConfig = RunConfig()) -> PrecisionComparison:
    wide = run_analysis(portfolio, yet, elts, replace(config, precision=Precision.WIDE))
    narrow = run_analysis(portfolio, yet, elts, replace(config, precision=Precision.NARROW))
    per_scope = {scope: max_relative_diff(wide.layers[scope].losses, narrow.layers[scope].losses)
                 for scope in wide.layers}
    per_scope[PORTFOLIO_TOTAL] = max_relative_diff(wide.total.losses, narrow.total.losses)
    return PrecisionComparison(wide, narrow, max(per_scope.values()), per_scope)
