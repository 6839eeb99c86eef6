"""Seeded synthetic YETs, ELTs and portfolios.

All randomness comes from numpy's Philox4x64-10 counter-based generator, keyed
explicitly as ``key = (seed, stream_tag << 32 | unit)`` with the counter starting
at zero. Only ``random_raw`` is used; the conversions to integers, uniforms and
log-normals are defined below, so the bit stream does not depend on numpy's
``Generator`` method implementations:

* uniform float in [0, 1): ``(x >> 11) * 2**-53``
* integer in [lo, hi]: ``lo + (((x >> 32) * (hi - lo + 1)) >> 32)`` (span < 2**32)
* standard normal: Box-Muller on two uniforms, cosine branch only

Integer streams are bit-exact everywhere; float transforms go through libm
``log``/``cos``/``exp`` and may differ in the last ulp across platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import (
    INF,
    MAX_ELTS_PER_LAYER,
    MAX_PROGRAMS,
    AggregateTerms,
    EltTerms,
    EventLossTable,
    Layer,
    OccurrenceTerms,
    Portfolio,
    Program,
    YearEventTable,
)

_MASK64 = (1 << 64) - 1

# stream tags, one per kind of generated unit
_YET_BLOCK = 1
_ELT = 2
_PORTFOLIO = 3

# trials generated per independently keyed stream
TRIAL_BLOCK = 4096
_TS_BITS = 52
_LOG_SIGMA = 1.0


@dataclass(frozen=True)
class GenSpec:
    """Shape of a synthetic workload.

    Term ranges are ``(low, high)`` multiples of ``loss_scale``; a high of
    ``inf`` on a limit range means the limit is sampled as unlimited.
    """

    seed: int = 7
    num_trials: int = 100_000
    events_per_trial: tuple[int, int] = (800, 1500)
    catalog_size: int = 1_000_000
    elt_entry_count: int = 10_000
    loss_scale: float = 100_000.0
    elt_retention: tuple[float, float] = (0.0, 0.2)
    elt_limit: tuple[float, float] = (2.0, 10.0)
    occurrence_retention: tuple[float, float] = (0.0, 1.0)
    occurrence_limit: tuple[float, float] = (3.0, 8.0)
    aggregate_retention: tuple[float, float] = (5.0, 20.0)
    aggregate_limit: tuple[float, float] = (60.0, 150.0)

    def __post_init__(self) -> None:
        lo, hi = self.events_per_trial
        problems = []
        if not 0 <= self.seed <= _MASK64:
            problems.append("seed must be a 64-bit unsigned integer")
        if self.num_trials < 1:
            problems.append("num_trials must be >= 1")
        if not 1 <= lo <= hi:
            problems.append("events_per_trial must satisfy 1 <= min <= max")
        if self.catalog_size < 1 or self.catalog_size >= 2**32:
            problems.append("catalog_size must be in [1, 2**32)")
        if not 1 <= self.elt_entry_count <= self.catalog_size:
            problems.append("elt_entry_count must be in [1, catalog_size]")
        if not self.loss_scale > 0:
            problems.append("loss_scale must be > 0")
        for name in ("elt_retention", "elt_limit", "occurrence_retention", "occurrence_limit",
                     "aggregate_retention", "aggregate_limit"):
            a, b = getattr(self, name)
            if not 0 <= a <= b:
                problems.append(f"{name} must satisfy 0 <= low <= high")
            if name.endswith("limit") and a <= 0:
                problems.append(f"{name} low must be > 0")
            if name.endswith("retention") and math.isinf(b):
                problems.append(f"{name} must be finite")
        if problems:
            raise ValueError("invalid GenSpec: " + "; ".join(problems))


def _stream(seed: int, tag: int, unit: int) -> np.random.Philox:
    return np.random.Philox(key=np.array([seed & _MASK64, (tag << 32) | (unit & 0xFFFFFFFF)],
                                         dtype=np.uint64))


def _uniform(bits: np.ndarray) -> np.ndarray:
    return (bits >> np.uint64(11)).astype(np.float64) * 2.0**-53


def _integers(bits: np.ndarray, lo: int, hi: int) -> np.ndarray:
    span = np.uint64(hi - lo + 1)
    return (((bits >> np.uint64(32)) * span) >> np.uint64(32)).astype(np.int64) + lo


def _lognormal(bitgen: np.random.Philox, n: int, mean: float, sigma: float) -> np.ndarray:
    u1 = 1.0 - _uniform(bitgen.random_raw(n))  # (0, 1]
    u2 = _uniform(bitgen.random_raw(n))
    z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
    mu = math.log(mean) - 0.5 * sigma * sigma
    return np.exp(mu + sigma * z)


def _scaled(bitgen: np.random.Philox, bounds: tuple[float, float], scale: float) -> float:
    lo, hi = bounds
    u = float(_uniform(bitgen.random_raw(1))[0])
    if math.isinf(hi):
        return INF
    return (lo + (hi - lo) * u) * scale


def _trial_block(spec: GenSpec, block: int, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    bitgen = _stream(spec.seed, _YET_BLOCK, block)
    lo, hi = spec.events_per_trial
    counts = _integers(bitgen.random_raw(n), lo, hi)
    total = int(counts.sum())
    event_ids = _integers(bitgen.random_raw(total), 1, spec.catalog_size).astype(np.uint32)
    # trial index in the high bits, timestamp bits below: one sort orders
    # every trial's timestamps and keeps trials contiguous
    owner = np.repeat(np.arange(n, dtype=np.uint64), counts)
    keys = (owner << np.uint64(_TS_BITS)) | (bitgen.random_raw(total) >> np.uint64(64 - _TS_BITS))
    keys.sort()
    frac = keys & np.uint64((1 << _TS_BITS) - 1)
    timestamps = (frac.astype(np.float64) * 2.0**-_TS_BITS).astype(np.float32)
    return counts, event_ids, timestamps


def generate_yet(spec: GenSpec) -> YearEventTable:
    """Trials with uniform event counts, uniform event ids and sorted uniform timestamps.

    Trials are produced in blocks of ``TRIAL_BLOCK``, each block from its own
    keyed stream, so blocks can be generated independently.
    """
    if spec.num_trials >= (1 << (64 - _TS_BITS)) * (1 << 32):
        raise ValueError("num_trials too large")
    parts = []
    for block, start in enumerate(range(0, spec.num_trials, TRIAL_BLOCK)):
        parts.append(_trial_block(spec, block, min(TRIAL_BLOCK, spec.num_trials - start)))
    counts = np.concatenate([p[0] for p in parts])
    offsets = np.zeros(spec.num_trials + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return YearEventTable(
        trial_ids=np.arange(1, spec.num_trials + 1, dtype=np.int64),
        offsets=offsets,
        event_ids=np.concatenate([p[1] for p in parts]),
        timestamps=np.concatenate([p[2] for p in parts]),
        catalog_size=spec.catalog_size,
    )


def generate_elt(spec: GenSpec, elt_id: int) -> EventLossTable:
    """``elt_entry_count`` distinct events with log-normal losses of mean ``loss_scale``."""
    if elt_id < 1:
        raise ValueError("elt_id must be >= 1")
    bitgen = _stream(spec.seed, _ELT, elt_id)
    # sampling without replacement: rank the whole catalog by random keys
    order = np.argsort(bitgen.random_raw(spec.catalog_size), kind="stable")
    event_ids = np.sort(order[: spec.elt_entry_count]) + 1
    losses = _lognormal(bitgen, spec.elt_entry_count, spec.loss_scale, _LOG_SIGMA)
    # log-normal draws are > 0 mathematically; guard float underflow
    losses = np.maximum(losses, np.nextafter(0.0, 1.0))
    terms = EltTerms(
        retention=_scaled(bitgen, spec.elt_retention, spec.loss_scale),
        limit=_scaled(bitgen, spec.elt_limit, spec.loss_scale),
    )
    return EventLossTable.from_arrays(elt_id, event_ids, losses, terms)


@dataclass(frozen=True)
class GeneratedPortfolio:
    portfolio: Portfolio
    elts: dict[int, EventLossTable] = field(default_factory=dict)

    def __iter__(self):
        # allows ``portfolio, elts = generate_portfolio(...)``
        return iter((self.portfolio, self.elts))


def generate_portfolio(spec: GenSpec, num_programs: int = 1, layers_per_program: int = 1,
                       elts_per_layer: int = 16) -> GeneratedPortfolio:
    """Portfolio tree plus the ELTs it references.

    Every layer gets its own ELTs, numbered 1, 2, ... in program/layer order.
    """
    if not 1 <= num_programs <= MAX_PROGRAMS:
        raise ValueError(f"num_programs must be in [1, {MAX_PROGRAMS}], got {num_programs}")
    if layers_per_program < 1:
        raise ValueError(f"layers_per_program must be >= 1, got {layers_per_program}")
    if not 1 <= elts_per_layer <= MAX_ELTS_PER_LAYER:
        raise ValueError(f"elts_per_layer must be in [1, {MAX_ELTS_PER_LAYER}], got {elts_per_layer}")

    bitgen = _stream(spec.seed, _PORTFOLIO, 0)
    scale = spec.loss_scale
    programs = []
    elts: dict[int, EventLossTable] = {}
    next_elt = 1
    for p in range(1, num_programs + 1):
        layers = []
        for la in range(1, layers_per_program + 1):
            refs = tuple(range(next_elt, next_elt + elts_per_layer))
            next_elt += elts_per_layer
            for ref in refs:
                elts[ref] = generate_elt(spec, ref)
            layers.append(Layer(
                layer_id=la,
                elt_refs=refs,
                occurrence=OccurrenceTerms(_scaled(bitgen, spec.occurrence_retention, scale),
                                           _scaled(bitgen, spec.occurrence_limit, scale)),
                aggregate=AggregateTerms(_scaled(bitgen, spec.aggregate_retention, scale),
                                         _scaled(bitgen, spec.aggregate_limit, scale)),
            ))
        programs.append(Program(program_id=p, layers=tuple(layers)))
    return GeneratedPortfolio(Portfolio(portfolio_id=1, programs=tuple(programs)), elts)
