import numpy as np
import pytest

from aggrisk.datagen import GenSpec, generate_elt
from aggrisk.lookup import Layout, build_layout, lookup_loss, memory_footprint, zero_entry_count
from aggrisk.model import EventLossTable

ALL = list(Layout)


def _scan(elt: EventLossTable, event: int) -> float:
    # linear scan of the source table, the reference for every layout
    for ev, loss in elt.entries.items():
        if ev == event:
            return loss
    return 0.0


@pytest.mark.parametrize("kind", ALL)
def test_single_entry(kind):
    table = build_layout([EventLossTable(1, {42: 100.5})], 100, kind)
    assert lookup_loss(table, 42, 0) == 100.5
    assert lookup_loss(table, 43, 0) == 0.0
    assert lookup_loss(table, 100, 0) == 0.0


@pytest.mark.parametrize("kind", ALL)
def test_exhaustive_against_linear_scan(kind):
    spec = GenSpec(seed=3, catalog_size=300, elt_entry_count=40)
    elts = [generate_elt(spec, i) for i in range(1, 6)] + [EventLossTable(9, {300: 1.25, 1: 7.0})]
    table = build_layout(elts, 300, kind)
    for j, elt in enumerate(elts):
        for e in range(0, 301):
            assert lookup_loss(table, e, j) == _scan(elt, e)


@pytest.mark.parametrize("kind", ALL)
def test_narrow_values(kind):
    elt = EventLossTable(1, {5: 0.1})
    table = build_layout([elt], 10, kind, np.float32)
    assert lookup_loss(table, 5, 0) == float(np.float32(0.1))


def test_layouts_agree_on_random_keys(rng):
    spec = GenSpec(seed=8, catalog_size=50_000, elt_entry_count=2_000)
    elts = [generate_elt(spec, i) for i in range(1, 4)]
    tables = {k: build_layout(elts, spec.catalog_size, k) for k in ALL}
    present = [int(e) for e in elts[0].sorted_arrays[0][:100]]
    for e in present + rng.integers(1, spec.catalog_size + 1, 300).tolist():
        for j in range(3):
            answers = {lookup_loss(t, e, j) for t in tables.values()}
            assert len(answers) == 1


def test_hash_full_collision_chain():
    # events congruent under the hash still resolve via probing
    elt = EventLossTable(1, {e: float(e) for e in range(1, 65)})
    table = build_layout([elt], 64, Layout.HASH)
    assert all(lookup_loss(table, e, 0) == float(e) for e in range(1, 65))


@pytest.mark.parametrize("kind", ALL)
def test_index_errors(kind):
    table = build_layout([EventLossTable(1, {2: 1.0})], 10, kind)
    with pytest.raises(IndexError):
        lookup_loss(table, 11, 0)
    with pytest.raises(IndexError):
        lookup_loss(table, 2, 1)
    with pytest.raises(IndexError):
        lookup_loss(table, -1, 0)


def test_build_errors():
    with pytest.raises(ValueError):
        build_layout([EventLossTable(1, {2: 1.0})], 0)
    with pytest.raises(ValueError):
        build_layout([], 10)
    with pytest.raises(ValueError):
        build_layout([EventLossTable(1, {20: 1.0})], 10)


def test_tables_are_read_only():
    table = build_layout([EventLossTable(1, {2: 1.0})], 10)
    with pytest.raises(ValueError):
        table.values[0, 2] = 5.0


def _reference_elts(n):
    spec = GenSpec(seed=7, catalog_size=1_000_000, elt_entry_count=10_000)
    return [generate_elt(spec, i) for i in range(1, n + 1)]


@pytest.fixture(scope="module")
def sixteen():
    return _reference_elts(16)


def test_direct_footprint_and_zero_count(sixteen):
    table = build_layout(sixteen, 1_000_000, Layout.DIRECT)
    assert table.values.shape == (16, 1_000_001)
    assert memory_footprint(table) == 16 * 1_000_001 * 8
    assert zero_entry_count(table) == 15_840_000


def test_fifteen_elt_zero_count(sixteen):
    for kind in ALL:
        assert zero_entry_count(build_layout(sixteen[:15], 1_000_000, kind)) == 14_850_000


def test_combined_footprint_equals_direct(sixteen):
    direct = build_layout(sixteen[:4], 1_000_000, Layout.DIRECT)
    combined = build_layout(sixteen[:4], 1_000_000, Layout.COMBINED)
    assert memory_footprint(combined) == memory_footprint(direct) == 4 * 1_000_001 * 8
    assert combined.values.shape == (1_000_001, 4)
    assert np.array_equal(combined.values, direct.values.T)


def test_sorted_and_hash_footprints(sixteen):
    assert memory_footprint(build_layout(sixteen[:1], 1_000_000, Layout.SORTED)) == 10_000 * (4 + 8)
    assert memory_footprint(build_layout(sixteen[:1], 1_000_000, Layout.SORTED, np.float32)) == 10_000 * 8
    hashed = build_layout(sixteen, 1_000_000, Layout.HASH)
    assert memory_footprint(hashed) == 16 * 32_768 * 12
    assert memory_footprint(hashed) < memory_footprint(build_layout(sixteen[:1], 1_000_000)) * 16


def test_narrow_direct_footprint():
    table = build_layout([EventLossTable(1, {2: 1.0})], 1_000_000, Layout.DIRECT, np.float32)
    assert memory_footprint(table) == 1_000_001 * 4
