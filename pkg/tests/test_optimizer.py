import math

import numpy as np
import pytest

from src.optimizer import (
    DivergenceError,
    OptimizerState,
    estimate_steplength,
    gamma_schedule,
    initial_lambda,
    initial_steplength,
    lambda_schedule,
    nesterov_iterate,
    next_nesterov_parameter,
    precondition_2d,
    precondition_3d,
)


def test_nesterov_parameter_sequence():
    assert next_nesterov_parameter(1.0) == pytest.approx((1 + math.sqrt(5)) / 2)
    a = 1.0
    for _ in range(50):
        b = next_nesterov_parameter(a)
        assert b > a
        a = b


def test_nesterov_converges_on_a_quadratic():
    x0 = np.array([[0.8, -0.4], [0.3, 0.9], [-0.7, 0.2]])
    grad = lambda x: 2.0 * x
    state = OptimizerState.start(x0, grad(x0), alpha0=0.1)
    for _ in range(10):
        state = nesterov_iterate(state, grad)
    assert np.linalg.norm(state.v) < 1e-6 * np.linalg.norm(x0)
    # steplength prediction recovers 1 / L
    assert state.alpha == pytest.approx(0.5)


def test_backtracking_shrinks_an_oversized_step():
    x0 = np.array([[1.0, 1.0]])
    grad = lambda x: 100.0 * x
    state = OptimizerState.start(x0, grad(x0), alpha0=1.0)
    nxt = nesterov_iterate(state, grad, max_backtracks=10)
    assert nxt.alpha == pytest.approx(0.01)
    assert nxt.iteration == 1
    assert np.all(np.abs(nxt.v) < np.abs(x0))


def test_projection_is_applied_to_every_iterate():
    x0 = np.array([[0.1, 0.9]])
    grad = lambda x: np.array([[1.0, -1.0]])
    state = OptimizerState.start(x0, grad(x0), alpha0=1.0)
    state = nesterov_iterate(state, grad, project=lambda x: np.clip(x, 0.0, 1.0))
    assert state.v.min() >= 0.0
    assert state.u.max() <= 1.0


def test_non_finite_gradient_raises_divergence():
    x0 = np.zeros((2, 3))
    state = OptimizerState.start(x0, np.ones_like(x0), alpha0=0.1)
    with pytest.raises(DivergenceError):
        nesterov_iterate(state, lambda x: np.full_like(x, np.nan))
    bad = OptimizerState.start(x0, np.full_like(x0, np.inf), alpha0=0.1)
    with pytest.raises(DivergenceError):
        nesterov_iterate(bad, lambda x: x)


def test_state_rejects_nonpositive_step_and_penalty():
    with pytest.raises(ValueError):
        OptimizerState.start(np.zeros(2), np.zeros(2), alpha0=0.0)
    with pytest.raises(ValueError):
        OptimizerState.start(np.zeros(2), np.zeros(2), alpha0=1.0, lam=0.0)


def test_steplength_helpers():
    u0 = np.zeros(3)
    u1 = np.ones(3)
    assert estimate_steplength(u0, u1, u0, 4 * u1, 0.3) == pytest.approx(0.25)
    assert estimate_steplength(u0, u1, u1, u1, 0.3) == 0.3
    assert initial_steplength(np.array([[1.0, -4.0]]), 0.1) == pytest.approx(0.025)
    assert initial_steplength(np.zeros((2, 2)), 0.1) == 0.1


def test_initial_lambda_balances_gradients():
    wl = np.array([[1.0, -1.0], [2.0, 0.0]])
    dens = np.array([[0.5, 0.5], [0.0, -1.0]])
    assert initial_lambda(wl, dens) == pytest.approx(2.0)
    assert initial_lambda(wl, np.zeros_like(dens)) == 1.0


def test_lambda_schedule_clamps_the_multiplier():
    assert lambda_schedule(1.0, 0.0, 10.0) == pytest.approx(1.1)
    assert lambda_schedule(1.0, 10.0, 10.0) == pytest.approx(1.0)
    assert lambda_schedule(2.0, 1e9, 10.0) == pytest.approx(1.5)
    assert lambda_schedule(1.0, -1e9, 10.0) == pytest.approx(1.1)
    assert lambda_schedule(1.0, 5.0, 0.0) == pytest.approx(1.1)
    mu = lambda_schedule(1.0, 20.0, 10.0)
    assert mu == pytest.approx(1.1 ** -1.0)


def test_gamma_schedule_tracks_overflow():
    dims = (1 / 32, 1 / 16, 1 / 8)
    fine = gamma_schedule(0.0, dims, 0.25)
    coarse = gamma_schedule(1.0, dims, 0.25)
    assert fine.as_tuple() == pytest.approx((1 / 32, 1 / 16, 0.25))
    assert coarse.gamma_x == pytest.approx(100 / 32)
    assert gamma_schedule(0.5, dims, 0.25).gamma_y == pytest.approx(10 / 16)
    assert gamma_schedule(3.0, dims, 0.25).gamma_z == pytest.approx(coarse.gamma_z)


def test_volume_preconditioner_with_floor():
    g = np.array([[2.0, 2.0, 2.0], [4.0, 4.0, 4.0], [1.0, 1.0, 1.0]])
    out = precondition_3d(g, np.array([1.0, 2.0, 0.0]), lam=2.0)
    assert np.allclose(out[0], 1.0)
    assert np.allclose(out[1], 1.0)
    assert np.allclose(out[2], 1.0 / 3e-4)
    assert np.allclose(precondition_3d(g, np.array([1.0, 2.0, 0.0]), lam=2.0, h_min=1.0)[2], 1.0)


def test_degree_area_preconditioner():
    g = np.array([[3.0, 6.0], [2.0, 2.0]])
    out = precondition_2d(g, degree=np.array([2.0, 0.0]), area=np.array([0.5, 1.0]), lam=2.0)
    assert np.allclose(out, [[1.0, 2.0], [1.0, 1.0]])
