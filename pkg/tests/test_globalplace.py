import numpy as np
import pytest

import src.globalplace as globalplace
from src.config import OptimizerSettings
from src.globalplace import GlobalPlacer, GlobalPlaceProblem
from src.model import BinGridSpec, CellKind, Netlist, Placement, Region3D


def chained_blocks(count, side):
    cells = [(f"c{i}", side, side, CellKind.STDCELL) for i in range(count)]
    cells += [("pad_l", 0.0, 0.0, CellKind.IO), ("pad_r", 0.0, 0.0, CellKind.IO)]
    names = ["pad_l"] + [f"c{i}" for i in range(count)] + ["pad_r"]
    nets = [(f"n{i}", 1.0, [(a, 0.0, 0.0), (b, 0.0, 0.0)]) for i, (a, b) in enumerate(zip(names, names[1:]))]
    return Netlist.build(cells, nets)


def clustered_start(rng, netlist, count):
    coords = np.column_stack(
        [rng.uniform(0.4, 0.6, count), rng.uniform(0.4, 0.6, count), rng.uniform(0.3, 0.7, count)]
    )
    return Placement(coords=np.vstack([coords, [[0.0, 0.5, 0.5], [1.0, 0.5, 0.5]]]))


def problem_for(netlist, count, max_iters, **kwargs):
    return GlobalPlaceProblem(
        netlist=netlist,
        region=Region3D(tiers=2),
        grid=BinGridSpec.cubic(8),
        mobile=np.arange(count),
        axes=(0, 1, 2),
        tau_stop=0.01,
        max_iters=max_iters,
        **kwargs,
    )


def test_each_step_starts_from_the_gradient_under_current_schedules(rng, monkeypatch):
    netlist = chained_blocks(60, 0.08)
    placer = GlobalPlacer(problem_for(netlist, 60, 12), OptimizerSettings())
    original = globalplace.nesterov_iterate
    seen = []

    def checked_iterate(state, gradient_fn, *args, **kwargs):
        fresh = placer._gradient(state.u, state.lam, state.gamma)
        seen.append((state.iteration, np.allclose(state.grad, fresh, rtol=1e-9, atol=1e-12)))
        return original(state, gradient_fn, *args, **kwargs)

    monkeypatch.setattr("src.globalplace.nesterov_iterate", checked_iterate)
    result = placer.run(clustered_start(rng, netlist, 60))
    assert len(seen) == result.iterations
    assert len(seen) > 2
    assert all(ok for _, ok in seen)
    # penalty and smoothing both moved during the run
    lams = {round(r.lam, 12) for r in result.history}
    gammas = {round(r.gamma, 12) for r in result.history}
    assert len(lams) > 1 and len(gammas) > 1


def test_spreading_lowers_overflow_and_keeps_fixed_pads(rng):
    netlist = chained_blocks(60, 0.08)
    start = clustered_start(rng, netlist, 60)
    result = GlobalPlacer(problem_for(netlist, 60, 60), OptimizerSettings()).run(start)
    assert result.tau < result.history[0].tau
    assert np.array_equal(result.placement.coords[60:], start.coords[60:])
    half = 0.04
    xy = result.placement.coords[:60, :2]
    assert np.all((xy >= half - 1e-12) & (xy <= 1 - half + 1e-12))


def test_nothing_to_move_converges_immediately():
    netlist = chained_blocks(2, 0.1)
    problem = problem_for(netlist, 0, 10)
    start = Placement(coords=np.array([[0.3, 0.5, 0.25], [0.7, 0.5, 0.75], [0.0, 0.5, 0.5], [1.0, 0.5, 0.5]]))
    result = GlobalPlacer(problem, OptimizerSettings()).run(start)
    assert result.converged
    assert result.iterations == 0
    assert result.placement is start


@pytest.mark.parametrize("preconditioner", ["3d", "2d"])
def test_both_preconditioners_keep_gradients_finite(rng, preconditioner):
    netlist = chained_blocks(40, 0.08)
    settings = OptimizerSettings(preconditioner=preconditioner)
    result = GlobalPlacer(problem_for(netlist, 40, 20), settings).run(clustered_start(rng, netlist, 40))
    assert result.restarts == 0
    assert np.all(np.isfinite(result.placement.coords))
