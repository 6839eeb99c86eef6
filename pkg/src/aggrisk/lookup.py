"""Per-layer event-loss lookup structures.

Four layouts answer ``(event_id, elt_index) -> raw loss`` (0.0 when absent):

``DIRECT``    one dense array per ELT, indexed by event id (shape ``[n_elts, catalog + 1]``)
``COMBINED``  one dense row-major matrix, one row per event (shape ``[catalog + 1, n_elts]``)
``SORTED``    per-ELT sorted event ids + losses, binary search
``HASH``      per-ELT open-addressing table, linear probing

Each layout is stored as three arrays ``(keys, values, offsets)`` so the engine
can drive all of them through one compiled kernel; the numba probe function for
a layout is ``PROBES[kind]``. Unused slots hold a one-element dummy.

Payload sizes reported by :func:`memory_footprint` (``s`` = loss item size):

* direct / combined: ``n_elts * (catalog_size + 1) * s``
* sorted: ``sum(entries) * (4 + s)``
* hash: ``sum(capacity) * (4 + s)``, capacity = next power of two >= 2 * entries
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .model import EventLossTable

class Layout(str, enum.Enum):
    DIRECT = "direct"
    COMBINED = "combined"
    SORTED = "sorted"
    HASH = "hash"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True, eq=False)
class LossLookup:
    kind: Layout
    catalog_size: int
    num_elts: int
    keys: np.ndarray
    values: np.ndarray
    offsets: np.ndarray
    retention: np.ndarray
    limit: np.ndarray

    @property
    def dtype(self) -> np.dtype:
        return self.values.dtype

    def __len__(self) -> int:
        return self.num_elts


def _dummy(dtype) -> np.ndarray:
    return np.zeros(1, dtype=dtype)


def _hash_capacity(n: int) -> int:
    cap = 1
    while cap < 2 * n:
        cap <<= 1
    return max(cap, 2)


def _build_hash(elts, dtype):
    caps = [_hash_capacity(len(elt)) for elt in elts]
    offsets = np.zeros(len(elts) + 1, dtype=np.int64)
    np.cumsum(caps, out=offsets[1:])
    keys = np.zeros(int(offsets[-1]), dtype=np.uint32)
    values = np.zeros(int(offsets[-1]), dtype=dtype)
    for j, elt in enumerate(elts):
        ev, loss = elt.sorted_arrays
        _hash_insert(keys, values, np.int64(offsets[j]), np.int64(caps[j] - 1), ev, loss.astype(dtype))
    return keys, values, offsets


@numba.njit(nogil=True, cache=True, inline="always")
def _hash_home(event, mask):
    # Fibonacci hashing on the low 32 bits
    return np.int64((np.uint64(event) * np.uint64(0x9E3779B1)) & np.uint64(0xFFFFFFFF)) & mask


@numba.njit(cache=True)
def _hash_insert(keys, values, base, mask, ev, loss):
    for i in range(ev.shape[0]):
        key = ev[i]
        slot = _hash_home(key, mask)
        while keys[base + slot] != 0:
            slot = (slot + 1) & mask
        keys[base + slot] = key
        values[base + slot] = loss[i]


def build_layout(elts: Sequence[EventLossTable], catalog_size: int,
                 kind: Layout | str = Layout.DIRECT, dtype=np.float64) -> LossLookup:
    """Build a lookup over ``elts``; ``elt_index`` follows the order given."""
    kind = Layout(kind)
    dtype = np.dtype(dtype)
    if catalog_size < 1:
        raise ValueError("catalog_size must be >= 1")
    if not elts:
        raise ValueError("need at least one ELT")
    for elt in elts:
        if elt.max_event_id > catalog_size:
            raise ValueError(f"ELT {elt.elt_id} holds event {elt.max_event_id} > catalog_size {catalog_size}")

    n = len(elts)
    retention = np.array([elt.terms.retention for elt in elts], dtype=dtype)
    limit = np.array([elt.terms.limit for elt in elts], dtype=dtype)
    idx_dummy = np.zeros(1, dtype=np.int64)

    if kind in (Layout.DIRECT, Layout.COMBINED):
        # np.full writes every page; np.zeros would leave untouched pages mapped to the
        # kernel's shared zero page, making sparse tables look faster than they are
        dense = np.full((n, catalog_size + 1), 0, dtype=dtype)
        for j, elt in enumerate(elts):
            ev, loss = elt.sorted_arrays
            dense[j, ev] = loss
        if kind is Layout.COMBINED:
            dense = np.ascontiguousarray(dense.T)
        keys, values, offsets = _dummy(np.uint32), dense, idx_dummy
    elif kind is Layout.SORTED:
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum([len(elt) for elt in elts], out=offsets[1:])
        keys = np.concatenate([elt.sorted_arrays[0] for elt in elts])
        values = np.concatenate([elt.sorted_arrays[1] for elt in elts]).astype(dtype)
        if keys.size == 0:
            keys, values = _dummy(np.uint32), _dummy(dtype)
    else:
        keys, values, offsets = _build_hash(elts, dtype)

    for a in (keys, values, offsets, retention, limit):
        a.flags.writeable = False
    return LossLookup(kind, int(catalog_size), n, keys, values, offsets, retention, limit)


def lookup_loss(table: LossLookup, event: int, elt_index: int) -> float:
    if not 0 <= elt_index < table.num_elts:
        raise IndexError(f"elt_index {elt_index} out of range [0, {table.num_elts})")
    if not 0 <= event <= table.catalog_size:
        raise IndexError(f"event {event} out of range [0, {table.catalog_size}]")
    return float(PROBES[table.kind](table.keys, table.values, table.offsets, event, elt_index))


def memory_footprint(table: LossLookup) -> int:
    """Payload bytes of the lookup arrays, excluding per-object overhead and terms."""
    item = table.values.dtype.itemsize
    if table.kind in (Layout.DIRECT, Layout.COMBINED):
        return table.num_elts * (table.catalog_size + 1) * item
    return int(table.offsets[-1]) * (np.dtype(np.uint32).itemsize + item)


def zero_entry_count(table: LossLookup) -> int:
    """Events in [1, catalog_size] stored as absent (zero loss), summed over ELTs."""
    if table.kind is Layout.DIRECT:
        return int(np.count_nonzero(table.values[:, 1:] == 0))
    if table.kind is Layout.COMBINED:
        return int(np.count_nonzero(table.values[1:, :] == 0))
    stored = int(np.count_nonzero(table.keys)) if table.kind is Layout.HASH else int(table.offsets[-1])
    return table.num_elts * table.catalog_size - stored


# -- compiled probes: (keys, values, offsets, event, elt_index) -> raw loss

@numba.njit(nogil=True, cache=True, inline="always")
def probe_direct(keys, values, offsets, event, j):
    return values[j, event]


@numba.njit(nogil=True, cache=True, inline="always")
def probe_combined(keys, values, offsets, event, j):
    return values[event, j]


@numba.njit(nogil=True, cache=True)
def probe_sorted(keys, values, offsets, event, j):
    lo = offsets[j]
    hi = offsets[j + 1]
    while lo < hi:
        mid = (lo + hi) >> 1
        if keys[mid] < event:
            lo = mid + 1
        else:
            hi = mid
    if lo < offsets[j + 1] and keys[lo] == event:
        return values[lo]
    # a zero of the table's dtype; ``values[0] * 0`` would widen float32 to float64
    return values[0] - values[0]


@numba.njit(nogil=True, cache=True)
def probe_hash(keys, values, offsets, event, j):
    base = offsets[j]
    mask = offsets[j + 1] - base - 1
    slot = _hash_home(event, mask)
    while True:
        k = keys[base + slot]
        if k == event:
            return values[base + slot]
        if k == 0:
            return values[0] - values[0]
        slot = (slot + 1) & mask


PROBES = {
    Layout.DIRECT: probe_direct,
    Layout.COMBINED: probe_combined,
    Layout.SORTED: probe_sorted,
    Layout.HASH: probe_hash,
}
