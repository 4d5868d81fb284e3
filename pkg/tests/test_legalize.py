import numpy as np
import pytest

from src.config import AnnealingSettings
from src.evaluate import check_legality
from src.legalize import (
    LegalizationFailure,
    free_row_area,
    legalize_and_detail,
    legalize_macros_sa,
    macro_overlap,
)
from src.model import CellKind, Netlist, Placement, Region3D, StateError
from src.wirelength import hpwl
from conftest import unit_rows

QUICK_SA = AnnealingSettings(moves_per_macro=20, cooling=0.8, prologue_samples=50)


def macros(*sides):
    return Netlist.build([(f"m{i}", w, h, CellKind.MACRO) for i, (w, h) in enumerate(sides)], [])


def test_macro_overlap_counts_pairs_once():
    netlist = macros((0.4, 0.4), (0.4, 0.4))
    region = Region3D(tiers=2)
    coords = np.array([[0.4, 0.5, 0.25], [0.6, 0.5, 0.25]])
    same = Placement(coords=coords, tier_of=np.array([0, 0]))
    assert macro_overlap(same, netlist, region) == pytest.approx(0.2 * 0.4 * 0.5)
    apart = Placement(coords=coords, tier_of=np.array([0, 1]))
    assert macro_overlap(apart, netlist, region) == pytest.approx(0.0)
    # without tiers, z decides
    assert macro_overlap(Placement(coords=coords), netlist, region) == pytest.approx(0.04)


def test_macro_overlap_includes_area_outside_the_region():
    netlist = macros((0.4, 0.4))
    region = Region3D(tiers=2)
    placement = Placement(coords=np.array([[0.1, 0.5, 0.25]]), tier_of=np.array([0]))
    assert macro_overlap(placement, netlist, region) == pytest.approx(0.1 * 0.4 * 0.5)


def test_macro_overlap_with_fixed_blocks():
    netlist = Netlist.build([("m", 0.4, 0.4, CellKind.MACRO), ("blk", 0.2, 0.2, CellKind.FIXED)], [])
    coords = np.array([[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]])
    placement = Placement(coords=coords, tier_of=np.array([0, 0]))
    assert macro_overlap(placement, netlist, Region3D(tiers=1)) == pytest.approx(0.04)


def test_annealing_separates_stacked_macros():
    netlist = macros((0.3, 0.3), (0.3, 0.3), (0.3, 0.3))
    region = Region3D(tiers=2)
    coords = np.array([[0.5, 0.5, 0.25], [0.52, 0.5, 0.25], [0.5, 0.48, 0.25]])
    placement = Placement(coords=coords, tier_of=np.zeros(3, dtype=np.int64))
    result = legalize_macros_sa(placement, netlist, region, QUICK_SA, seed=4)
    assert macro_overlap(result, netlist, region) == pytest.approx(0.0)
    assert np.allclose(result.z, region.tier_center(result.tier_of))
    assert set(result.tier_of.tolist()) <= {0, 1}


def test_overlap_free_macros_are_left_alone():
    netlist = macros((0.3, 0.3), (0.3, 0.3))
    coords = np.array([[0.2, 0.2, 0.5], [0.8, 0.8, 0.5]])
    placement = Placement(coords=coords, tier_of=np.array([0, 0]))
    assert legalize_macros_sa(placement, netlist, Region3D(tiers=1)) is placement


def test_macro_legalization_needs_tiers():
    netlist = macros((0.3, 0.3))
    with pytest.raises(StateError):
        legalize_macros_sa(Placement(coords=np.full((1, 3), 0.5)), netlist, Region3D(tiers=1))


def test_oversized_macro_fails_after_every_fallback():
    netlist = macros((1.2, 0.3))
    placement = Placement(coords=np.array([[0.5, 0.5, 0.5]]), tier_of=np.array([0]))
    settings = AnnealingSettings(moves_per_macro=5, cooling=0.5, prologue_samples=10, max_retries=1)
    with pytest.raises(LegalizationFailure):
        legalize_macros_sa(placement, netlist, Region3D(tiers=1), settings)


def row_design(rng, per_tier, tiers=2, extra=()):
    cells = [(f"c{i}", 0.1, 0.1, CellKind.STDCELL) for i in range(sum(per_tier))] + list(extra)
    nets = [(f"n{i}", 1.0, [(f"c{i}", 0.0, 0.0), (f"c{i + 1}", 0.0, 0.0)]) for i in range(sum(per_tier) - 1)]
    netlist = Netlist.build(cells, nets)
    region = Region3D(tiers=tiers, rows=unit_rows(10))
    tier_of = np.concatenate([np.full(n, t, dtype=np.int64) for t, n in enumerate(per_tier)])
    coords = np.column_stack(
        [rng.uniform(0.05, 0.95, len(tier_of)), rng.uniform(0.05, 0.95, len(tier_of)), region.tier_center(tier_of)]
    )
    return netlist, region, coords, tier_of


def test_row_legalization_is_legal_and_keeps_tiers(rng):
    netlist, region, coords, tier_of = row_design(rng, (20, 15))
    result = legalize_and_detail(Placement(coords=coords, tier_of=tier_of), netlist, region)
    assert np.array_equal(result.tier_of, tier_of)
    assert check_legality(result, netlist, region) == []


def test_row_legalization_avoids_macros(rng):
    block = [("big", 0.4, 0.4, CellKind.MACRO)]
    netlist, region, coords, tier_of = row_design(rng, (30,), tiers=1, extra=block)
    coords = np.vstack([coords, [0.5, 0.5, 0.5]])
    tier_of = np.append(tier_of, 0)
    result = legalize_and_detail(Placement(coords=coords, tier_of=tier_of), netlist, region)
    assert check_legality(result, netlist, region) == []
    assert np.array_equal(result.coords[-1], [0.5, 0.5, 0.5])


def test_fillers_are_dropped_by_row_legalization(rng):
    netlist, region, coords, tier_of = row_design(rng, (10, 10))
    filled = netlist.with_fillers(3, 0.1, 0.1)
    coords = np.vstack([coords, np.full((3, 3), 0.25)])
    tier_of = np.append(tier_of, [0, 0, 0])
    result = legalize_and_detail(Placement(coords=coords, tier_of=tier_of), filled, region)
    assert len(result.coords) == netlist.num_cells


def test_refinement_never_lengthens_wires(rng):
    netlist, region, coords, tier_of = row_design(rng, (25, 25))
    placement = Placement(coords=coords, tier_of=tier_of)
    plain = legalize_and_detail(placement, netlist, region, refine=False)
    refined = legalize_and_detail(placement, netlist, region, refine=True)
    assert hpwl(refined, netlist, region.beta) <= hpwl(plain, netlist, region.beta) + 1e-12
    assert check_legality(refined, netlist, region) == []


def test_full_tier_reports_the_tier(rng):
    netlist, region, coords, tier_of = row_design(rng, (101, 5))
    with pytest.raises(LegalizationFailure) as info:
        legalize_and_detail(Placement(coords=coords, tier_of=tier_of), netlist, region)
    assert info.value.tier == 0
    assert info.value.residual_overlap > 0


def test_rowless_region_cannot_hold_cells(rng):
    netlist, _, coords, tier_of = row_design(rng, (3,), tiers=1)
    with pytest.raises(LegalizationFailure):
        legalize_and_detail(Placement(coords=coords, tier_of=tier_of), netlist, Region3D(tiers=1))


def test_free_row_area_subtracts_macros_on_the_tier():
    netlist = Netlist.build(
        [("big", 0.4, 0.4, CellKind.MACRO), ("c0", 0.1, 0.1, CellKind.STDCELL)], []
    )
    placement = Placement(coords=np.array([[0.5, 0.5, 0.25], [0.2, 0.2, 0.25]]), tier_of=np.array([0, 0]))
    rows = Region3D(tiers=2, rows=unit_rows(10))
    assert free_row_area(placement, netlist, rows, 0) == pytest.approx(0.84)
    assert free_row_area(placement, netlist, rows, 1) == pytest.approx(1.0)
    assert free_row_area(placement, netlist, Region3D(tiers=2), 0) == pytest.approx(0.84)
    with pytest.raises(StateError):
        free_row_area(placement.with_tiers(None), netlist, rows, 0)
