"""Domain types for aggregate risk analysis and the financial-term transforms.

A Year Event Table (YET) holds simulated years ("trials"), each an ordered run of
catastrophe event occurrences. Event Loss Tables (ELTs) map event ids to losses.
A Portfolio groups Programs, a Program groups Layers, and a Layer binds a set of
ELTs to occurrence and aggregate terms. The analysis output is a Year Loss Table.

Every container here is immutable after construction. The YET stores its events
in flat numpy arrays (CSR style) because realistic tables hold ~10^8 events.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from types import MappingProxyType
from typing import Iterator, Mapping, Sequence

import numpy as np

INF = math.inf

MAX_ELTS_PER_LAYER = 30
MAX_PROGRAMS = 10

PORTFOLIO_TOTAL = "portfolio-total"


def _xs_clamp(loss: float, retention: float, limit: float) -> float:
    # excess-of-loss: pay the part above retention, capped at limit
    return min(max(loss - retention, 0.0), limit)


@dataclass(frozen=True)
class _Terms:
    retention: float = 0.0
    limit: float = INF

    def __post_init__(self) -> None:
        retention = float(self.retention)
        limit = float(self.limit)
        if math.isnan(retention) or retention < 0.0 or math.isinf(retention):
            raise ValueError(f"retention must be finite and >= 0, got {self.retention!r}")
        if math.isnan(limit) or limit <= 0.0:
            raise ValueError(f"limit must be > 0 (or inf), got {self.limit!r}")
        object.__setattr__(self, "retention", retention)
        object.__setattr__(self, "limit", limit)

    @property
    def is_identity(self) -> bool:
        return self.retention == 0.0 and self.limit == INF


class EltTerms(_Terms):
    """Per-ELT financial terms, applied to each raw event loss before summation."""


class OccurrenceTerms(_Terms):
    """Layer terms applied to each event's loss combined across the layer's ELTs."""


class AggregateTerms(_Terms):
    """Layer terms applied once to a trial's summed occurrence-net losses."""


def apply_elt_terms(raw_loss: float, terms: EltTerms) -> float:
    return _xs_clamp(raw_loss, terms.retention, terms.limit)


def apply_occurrence_terms(event_loss: float, terms: OccurrenceTerms) -> float:
    return _xs_clamp(event_loss, terms.retention, terms.limit)


def apply_aggregate_terms(trial_sum: float, terms: AggregateTerms) -> float:
    """Net a trial's cumulative occurrence loss of the aggregate retention and limit.

    Applying this once to the final sum gives the same answer as eroding the
    aggregate layer event by event and summing the increments; see
    :func:`aggregate_increments`.
    """
    return _xs_clamp(trial_sum, terms.retention, terms.limit)


def aggregate_increments(occurrence_losses: Sequence[float], terms: AggregateTerms) -> list[float]:
    """Per-event recoveries under the aggregate terms, in trial order.

    The i-th increment is the change in the aggregate-netted running total
    caused by the i-th event, so each event's recovery depends on the events
    before it.
    """
    out = []
    running = 0.0
    previous = 0.0
    for loss in occurrence_losses:
        running += loss
        current = apply_aggregate_terms(running, terms)
        out.append(current - previous)
        previous = current
    return out


@dataclass(frozen=True)
class Trial:
    trial_id: int
    events: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "events", tuple((int(e), float(t)) for e, t in self.events))

    @property
    def event_ids(self) -> list[int]:
        return [e for e, _ in self.events]

    def __len__(self) -> int:
        return len(self.events)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class YearEventTable:
    """Trials stored as flat arrays.

    Trial ``i`` (0-based position) owns ``event_ids[offsets[i]:offsets[i + 1]]``
    and the matching ``timestamps`` slice; its id is ``trial_ids[i]``.
    """

    trial_ids: np.ndarray
    offsets: np.ndarray
    event_ids: np.ndarray
    timestamps: np.ndarray
    catalog_size: int

    def __post_init__(self) -> None:
        trial_ids = np.ascontiguousarray(self.trial_ids, dtype=np.int64)
        offsets = np.ascontiguousarray(self.offsets, dtype=np.int64)
        event_ids = np.ascontiguousarray(self.event_ids, dtype=np.uint32)
        timestamps = np.ascontiguousarray(self.timestamps, dtype=np.float32)
        if int(self.catalog_size) < 1:
            raise ValueError("catalog_size must be >= 1")
        if offsets.ndim != 1 or offsets.shape[0] != trial_ids.shape[0] + 1:
            raise ValueError("offsets must have one entry per trial plus one")
        if offsets[0] != 0 or offsets[-1] != event_ids.shape[0] or np.any(np.diff(offsets) < 0):
            raise ValueError("offsets must start at 0, be non-decreasing and end at the event count")
        if timestamps.shape != event_ids.shape:
            raise ValueError("event_ids and timestamps must have equal length")
        for name, arr in (("trial_ids", trial_ids), ("offsets", offsets),
                          ("event_ids", event_ids), ("timestamps", timestamps)):
            object.__setattr__(self, name, _frozen(arr))
        object.__setattr__(self, "catalog_size", int(self.catalog_size))

    @classmethod
    def from_trials(cls, trials: Sequence[Trial], catalog_size: int) -> "YearEventTable":
        counts = [len(t) for t in trials]
        offsets = np.zeros(len(trials) + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        event_ids = np.fromiter((e for t in trials for e, _ in t.events), dtype=np.int64,
                                count=int(offsets[-1]))
        if event_ids.size and (event_ids.min() < 0 or event_ids.max() > np.iinfo(np.uint32).max):
            raise ValueError("event ids must fit in an unsigned 32-bit integer")
        timestamps = np.fromiter((ts for t in trials for _, ts in t.events), dtype=np.float64,
                                 count=int(offsets[-1]))
        return cls(
            trial_ids=np.array([t.trial_id for t in trials], dtype=np.int64),
            offsets=offsets,
            event_ids=event_ids.astype(np.uint32),
            timestamps=timestamps.astype(np.float32),
            catalog_size=catalog_size,
        )

    @property
    def num_trials(self) -> int:
        return int(self.trial_ids.shape[0])

    @property
    def num_events(self) -> int:
        return int(self.event_ids.shape[0])

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def __len__(self) -> int:
        return self.num_trials

    def trial(self, index: int) -> Trial:
        lo, hi = int(self.offsets[index]), int(self.offsets[index + 1])
        return Trial(
            int(self.trial_ids[index]),
            tuple(zip(self.event_ids[lo:hi].tolist(), self.timestamps[lo:hi].tolist())),
        )

    @property
    def trials(self) -> Iterator[Trial]:
        return (self.trial(i) for i in range(self.num_trials))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, YearEventTable):
            return NotImplemented
        return (
            self.catalog_size == other.catalog_size
            and np.array_equal(self.trial_ids, other.trial_ids)
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.event_ids, other.event_ids)
            and np.array_equal(self.timestamps, other.timestamps)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Violation:
    trial_id: int
    rule: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.rule} @ trial {self.trial_id}" + (f": {self.detail}" if self.detail else "")


def _owners(yet: YearEventTable, positions: np.ndarray) -> np.ndarray:
    # trial position owning each flagged event position
    return np.unique(np.searchsorted(yet.offsets, positions, side="right") - 1)


def validate_yet(yet: YearEventTable, max_events_per_trial: int | None = None) -> list[Violation]:
    """Check every trial; returns an empty list for a well-formed table.

    Rules reported: ``empty``, ``too-long``, ``out-of-order``, ``bad-timestamp``,
    ``id-range``, ``duplicate-trial-id`` and ``non-contiguous-trial-id`` (ids must
    run 1..N in table order). At most one violation per (trial, rule) pair.
    Temporaries are one byte per event.
    """
    violations: list[Violation] = []
    n = yet.num_trials
    if n == 0:
        return [Violation(0, "empty-table", "a YET needs at least one trial")]
    ids = yet.trial_ids
    counts = yet.counts

    for i in np.flatnonzero(counts == 0):
        violations.append(Violation(int(ids[i]), "empty"))
    if max_events_per_trial is not None:
        for i in np.flatnonzero(counts > max_events_per_trial):
            violations.append(Violation(int(ids[i]), "too-long",
                                        f"{int(counts[i])} > {max_events_per_trial} events"))

    ts = yet.timestamps
    if ts.size > 1:
        decreasing = ts[1:] < ts[:-1]
        # ignore the step from one trial's last event to the next trial's first
        boundaries = yet.offsets[1:-1] - 1
        decreasing[boundaries[(boundaries >= 0) & (boundaries < decreasing.size)]] = False
        for i in _owners(yet, np.flatnonzero(decreasing) + 1):
            violations.append(Violation(int(ids[i]), "out-of-order", "timestamps decrease"))
    bad_ts = ~np.isfinite(ts) | (ts < 0)
    for i in _owners(yet, np.flatnonzero(bad_ts)):
        violations.append(Violation(int(ids[i]), "bad-timestamp", "negative or non-finite"))

    ev = yet.event_ids
    for i in _owners(yet, np.flatnonzero((ev < 1) | (ev > yet.catalog_size))):
        violations.append(Violation(int(ids[i]), "id-range",
                                    f"event id outside [1, {yet.catalog_size}]"))

    uniq, seen = np.unique(ids, return_counts=True)
    for tid in uniq[seen > 1]:
        violations.append(Violation(int(tid), "duplicate-trial-id"))
    expected = np.arange(1, n + 1)
    for i in np.flatnonzero(ids != expected):
        violations.append(Violation(int(ids[i]), "non-contiguous-trial-id",
                                    f"position {i + 1} holds id {int(ids[i])}"))
    return violations


def check_trial(position: int, trial_id: int, event_ids: np.ndarray, timestamps: np.ndarray,
                catalog_size: int) -> list[Violation]:
    """Per-trial subset of :func:`validate_yet` for streaming readers (duplicates
    are implied by the contiguity rule)."""
    out = []
    if event_ids.size == 0:
        out.append(Violation(trial_id, "empty"))
    if timestamps.size > 1 and np.any(timestamps[1:] < timestamps[:-1]):
        out.append(Violation(trial_id, "out-of-order", "timestamps decrease"))
    if timestamps.size and not (np.all(np.isfinite(timestamps)) and timestamps.min() >= 0):
        out.append(Violation(trial_id, "bad-timestamp", "negative or non-finite"))
    if event_ids.size and (event_ids.min() < 1 or event_ids.max() > catalog_size):
        out.append(Violation(trial_id, "id-range", f"event id outside [1, {catalog_size}]"))
    if trial_id != position + 1:
        out.append(Violation(trial_id, "non-contiguous-trial-id", f"position {position + 1} holds id {trial_id}"))
    return out


@dataclass(frozen=True, eq=False)
class EventLossTable:
    elt_id: int
    entries: Mapping[int, float]
    terms: EltTerms = field(default_factory=EltTerms)

    def __post_init__(self) -> None:
        if int(self.elt_id) < 1:
            raise ValueError("elt_id must be a positive integer")
        clean = {}
        for event, loss in self.entries.items():
            event, loss = int(event), float(loss)
            if event < 1:
                raise ValueError(f"ELT {self.elt_id}: event id {event} must be >= 1")
            if not loss > 0.0 or math.isinf(loss):
                raise ValueError(f"ELT {self.elt_id}: loss for event {event} must be finite and > 0")
            clean[event] = loss
        object.__setattr__(self, "elt_id", int(self.elt_id))
        object.__setattr__(self, "entries", MappingProxyType(clean))

    @classmethod
    def from_arrays(cls, elt_id: int, event_ids, losses, terms: EltTerms | None = None) -> "EventLossTable":
        event_ids = np.asarray(event_ids)
        if np.unique(event_ids).size != event_ids.size:
            raise ValueError(f"ELT {elt_id}: duplicate event ids")
        return cls(elt_id, dict(zip(event_ids.tolist(), np.asarray(losses, dtype=np.float64).tolist())),
                   terms or EltTerms())

    @cached_property
    def sorted_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(event_ids ascending as uint32, losses as float64)."""
        keys = np.fromiter(self.entries.keys(), dtype=np.int64, count=len(self.entries))
        vals = np.fromiter(self.entries.values(), dtype=np.float64, count=len(self.entries))
        order = np.argsort(keys, kind="stable")
        return _frozen(keys[order].astype(np.uint32)), _frozen(vals[order])

    @property
    def max_event_id(self) -> int:
        return max(self.entries, default=0)

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EventLossTable):
            return NotImplemented
        return (self.elt_id == other.elt_id and dict(self.entries) == dict(other.entries)
                and self.terms == other.terms)

    __hash__ = None  # type: ignore[assignment]


def _check_unique(ids: Sequence, what: str) -> None:
    if len(set(ids)) != len(ids):
        raise ValueError(f"{what} ids must be unique, got {list(ids)}")


@dataclass(frozen=True)
class Layer:
    layer_id: int
    elt_refs: tuple[int, ...]
    occurrence: OccurrenceTerms = field(default_factory=OccurrenceTerms)
    aggregate: AggregateTerms = field(default_factory=AggregateTerms)

    def __post_init__(self) -> None:
        refs = tuple(int(r) for r in self.elt_refs)
        if not 1 <= len(refs) <= MAX_ELTS_PER_LAYER:
            raise ValueError(f"layer {self.layer_id}: needs 1..{MAX_ELTS_PER_LAYER} ELTs, got {len(refs)}")
        _check_unique(refs, f"layer {self.layer_id} ELT")
        object.__setattr__(self, "elt_refs", refs)


@dataclass(frozen=True)
class Program:
    program_id: int
    layers: tuple[Layer, ...]

    def __post_init__(self) -> None:
        layers = tuple(self.layers)
        if not layers:
            raise ValueError(f"program {self.program_id}: needs at least one layer")
        _check_unique([la.layer_id for la in layers], f"program {self.program_id} layer")
        object.__setattr__(self, "layers", layers)


@dataclass(frozen=True)
class Portfolio:
    portfolio_id: int
    programs: tuple[Program, ...]

    def __post_init__(self) -> None:
        programs = tuple(self.programs)
        if not 1 <= len(programs) <= MAX_PROGRAMS:
            raise ValueError(f"portfolio needs 1..{MAX_PROGRAMS} programs, got {len(programs)}")
        _check_unique([p.program_id for p in programs], "program")
        object.__setattr__(self, "programs", programs)

    def iter_layers(self) -> Iterator[tuple[Program, Layer]]:
        for program in self.programs:
            for layer in program.layers:
                yield program, layer

    @property
    def elt_ids(self) -> list[int]:
        seen: dict[int, None] = {}
        for _, layer in self.iter_layers():
            seen.update(dict.fromkeys(layer.elt_refs))
        return list(seen)


def layer_scope(portfolio: Portfolio, program: Program, layer: Layer) -> str:
    return f"{portfolio.portfolio_id}/{program.program_id}/{layer.layer_id}"


@dataclass(frozen=True, eq=False)
class YearLossTable:
    """One loss per trial. ``losses`` keeps the precision it was computed in."""

    trial_ids: np.ndarray
    losses: np.ndarray
    scope: str = PORTFOLIO_TOTAL

    def __post_init__(self) -> None:
        trial_ids = np.ascontiguousarray(self.trial_ids, dtype=np.int64)
        losses = np.ascontiguousarray(self.losses)
        if losses.dtype not in (np.float32, np.float64):
            losses = losses.astype(np.float64)
        if trial_ids.shape != losses.shape or losses.ndim != 1:
            raise ValueError("trial_ids and losses must be 1-D and of equal length")
        if losses.size and (np.any(~np.isfinite(losses)) or np.any(losses < 0)):
            raise ValueError("YLT losses must be finite and >= 0")
        object.__setattr__(self, "trial_ids", _frozen(trial_ids))
        object.__setattr__(self, "losses", _frozen(losses))

    def __len__(self) -> int:
        return int(self.losses.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, YearLossTable):
            return NotImplemented
        return (self.scope == other.scope and self.losses.dtype == other.losses.dtype
                and np.array_equal(self.trial_ids, other.trial_ids)
                and np.array_equal(self.losses, other.losses))

    __hash__ = None  # type: ignore[assignment]
