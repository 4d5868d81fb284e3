import numpy as np
import pytest

from src.config import FlowConfig
from src.evaluate import check_legality, evaluate
from src.flow import flow_region, global_place_3d, initial_placement, insert_fillers, run_flow
from src.model import compute_vi_weight
from src.synthetic import make_synthetic
from src.wirelength import hpwl

pytestmark = pytest.mark.slow

QUICK = dict(grid_3d=16, grid_2d=16, tau_stop_3d=0.15, tau_stop_2d=0.15)


@pytest.fixture(scope="module")
def kilo_design():
    return make_synthetic(num_cells=1000, num_macros=0, seed=11)


def physical_hpwl(result):
    return evaluate(result.placement, result.netlist, result.region).hpwl_physical


def test_volume_preconditioner_reaches_low_overflow_sooner():
    design = make_synthetic(num_cells=2000, num_macros=20, seed=7, macro_area_fraction=0.3)
    instance = design.instance(tiers=2)
    config = FlowConfig(tiers=2, tau_stop_3d=0.10)
    region = flow_region(instance, config)
    placement = initial_placement(instance.netlist, region, instance.placement, seed=config.seed)
    netlist, placement = insert_fillers(instance.netlist, region, placement, seed=config.seed + 1)
    fillers = netlist.num_cells - instance.netlist.num_cells
    assert fillers > 0

    runs = {}
    for name in ("3d", "2d"):
        settings = config.with_overrides(**{"optimizer.preconditioner": name})
        runs[name] = global_place_3d(netlist, region, placement, settings)
    volume, planar = runs["3d"], runs["2d"]
    assert volume.converged
    assert volume.iterations <= planar.iterations
    assert hpwl(volume.placement, netlist, region.beta) <= 1.02 * hpwl(planar.placement, netlist, region.beta)


def test_more_tiers_shorten_wires(kilo_design):
    results = {t: run_flow(kilo_design.instance(tiers=t), FlowConfig(tiers=t)) for t in (1, 2, 3)}
    wl = {t: physical_hpwl(r) for t, r in results.items()}
    vi = {t: r.reports[-1].vi for t, r in results.items()}
    assert wl[1] > wl[2] > wl[3]
    assert wl[3] <= 0.95 * wl[1]
    assert vi[1] == 0 < vi[2] < vi[3]


def test_cheaper_vias_trade_vias_for_wirelength(kilo_design):
    instance = kilo_design.instance(tiers=2)
    base = compute_vi_weight(2, instance.num_rows)
    heavy = run_flow(instance, FlowConfig(tiers=2, vi_weight=base))
    light = run_flow(instance, FlowConfig(tiers=2, vi_weight=base / 32))
    assert light.reports[-1].vi >= 1.5 * heavy.reports[-1].vi
    assert physical_hpwl(light) < physical_hpwl(heavy)


@pytest.mark.parametrize("tiers", [1, 2, 3, 4])
def test_random_designs_come_out_legal(tiers):
    design = make_synthetic(num_cells=600, num_macros=3, seed=40 + tiers, macro_area_fraction=0.15)
    config = FlowConfig(tiers=tiers, seed=tiers, **QUICK)
    result = run_flow(design.instance(tiers=tiers), config)
    assert check_legality(result.placement, result.netlist, result.region) == []
    by_stage = {r.stage: r for r in result.reports}
    assert by_stage["lgdp"].vi == by_stage["cgp"].vi
    assert by_stage["lgdp"].macro_overlap == pytest.approx(0.0)
    assert np.all(np.isfinite(result.placement.coords))
