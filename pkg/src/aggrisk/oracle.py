"""Brute-force reference for the engine.

Deliberately shares nothing with :mod:`aggrisk.lookup` or the compiled kernel:
event losses are found by searching each ELT's sorted key array for the whole
YET at once, terms are applied with numpy elementwise ops, and each trial's
occurrence losses are summed in event order one position at a time. No chunking,
no threads. Accumulation order matches the engine's contract (ELTs in layer
order, events in trial order, layers in portfolio order), so results compare
bitwise.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .engine import AnalysisResult, Precision
from .model import PORTFOLIO_TOTAL, EventLossTable, Portfolio, YearEventTable, YearLossTable, layer_scope


def _net(x, retention, limit, dtype):
    zero = dtype.type(0)
    return np.minimum(np.maximum(x - dtype.type(retention), zero), dtype.type(limit))


def _raw_losses(elt: EventLossTable, events: np.ndarray, dtype) -> np.ndarray:
    keys, vals = elt.sorted_arrays
    if keys.size == 0:
        return np.zeros(events.shape, dtype=dtype)
    pos = np.searchsorted(keys, events)
    pos = np.minimum(pos, keys.size - 1)
    hit = keys[pos] == events
    return np.where(hit, vals[pos].astype(dtype), dtype.type(0))


def _trial_sums(values: np.ndarray, offsets: np.ndarray, dtype) -> np.ndarray:
    """Left-to-right per-trial sums, one event position per step."""
    starts = offsets[:-1]
    counts = np.diff(offsets)
    acc = np.zeros(counts.shape, dtype=dtype)
    live = np.arange(counts.size)
    for k in range(int(counts.max(initial=0))):
        live = live[counts[live] > k]
        acc[live] += values[starts[live] + k]
    return acc


def oracle_analyze(portfolio: Portfolio, yet: YearEventTable,
                   elts: Mapping[int, EventLossTable] | Sequence[EventLossTable],
                   precision: Precision | str = Precision.WIDE) -> AnalysisResult:
    dtype = Precision(precision).dtype
    by_id = elts if isinstance(elts, Mapping) else {e.elt_id: e for e in elts}
    events = yet.event_ids
    layers = {}
    total = np.zeros(yet.num_trials, dtype=dtype)
    for program, layer in portfolio.iter_layers():
        event_loss = np.zeros(events.shape, dtype=dtype)
        for ref in layer.elt_refs:
            elt = by_id[ref]
            event_loss = event_loss + _net(_raw_losses(elt, events, dtype),
                                           elt.terms.retention, elt.terms.limit, dtype)
        occ = _net(event_loss, layer.occurrence.retention, layer.occurrence.limit, dtype)
        trial_loss = _net(_trial_sums(occ, yet.offsets, dtype),
                          layer.aggregate.retention, layer.aggregate.limit, dtype)
        scope = layer_scope(portfolio, program, layer)
        layers[scope] = YearLossTable(yet.trial_ids, trial_loss, scope)
        total = total + trial_loss
    return AnalysisResult(layers, YearLossTable(yet.trial_ids, total, PORTFOLIO_TOTAL))
