"""Global placement engine: wirelength plus lambda-weighted field energy, driven by Nesterov."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from src.config import OptimizerSettings
from src.edensity import (
    charge_view,
    charged_cells,
    density_force,
    energy,
    overflow,
    remove_mean,
    sample_field,
    solve_field,
    splat_view,
)
from src.model import BinGridSpec, Netlist, Placement, Region3D
from src.optimizer import (
    DivergenceError,
    OptimizerState,
    gamma_schedule,
    initial_lambda,
    initial_steplength,
    lambda_schedule,
    nesterov_iterate,
    precondition_2d,
    precondition_3d,
)
from src.schemas import IterationRecord, format_iteration_line
from src.wirelength import SmoothingParams, hpwl, hpwl_3d, wa_value_and_gradient


@dataclass
class GlobalPlaceProblem:
    netlist: Netlist
    region: Region3D
    grid: BinGridSpec
    mobile: np.ndarray
    axes: Tuple[int, ...]
    tau_stop: float
    max_iters: int
    label: str = "gp"
    use_wirelength: bool = True
    sampling: str = "overlap"
    workers: int = 1

    @property
    def mobile_mask(self) -> np.ndarray:
        mask = np.zeros(self.netlist.num_cells, dtype=bool)
        mask[self.mobile] = True
        return mask


@dataclass
class GlobalPlaceResult:
    placement: Placement
    history: List[IterationRecord] = field(default_factory=list)
    iterations: int = 0
    tau: float = 0.0
    converged: bool = False
    restarts: int = 0


@dataclass
class _Evaluation:
    wl: float
    energy: float
    grad_wl: np.ndarray
    grad_density: np.ndarray


class GlobalPlacer:
    """Runs one placement stage on a fixed set of mobile cells and active axes."""

    def __init__(self, problem: GlobalPlaceProblem, settings: OptimizerSettings):
        self._problem = problem
        self._settings = settings
        netlist, region = problem.netlist, problem.region
        self._axes = list(problem.axes)
        self._volume = netlist.volume(region.tier_depth)[problem.mobile]
        self._area = netlist.area[problem.mobile]
        self._degree = netlist.degree[problem.mobile]
        half = np.stack(
            [netlist.width / 2, netlist.height / 2, np.full(netlist.num_cells, region.tier_depth / 2)], axis=1
        )
        half = np.minimum(half[problem.mobile][:, self._axes], 0.5)
        self._lo = half
        self._hi = 1.0 - half
        self._bin_width = min(problem.grid.bin_dims[a] for a in problem.axes)
        self._last: Optional[_Evaluation] = None
        self._last_x: Optional[np.ndarray] = None
        self._last_gamma: Optional[SmoothingParams] = None
        self._coords: Optional[np.ndarray] = None
        self._tier_of: Optional[np.ndarray] = None
        self._charged: Optional[np.ndarray] = None

    def _project(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self._lo, self._hi)

    def _full_coords(self, x: np.ndarray) -> np.ndarray:
        coords = self._coords.copy()
        coords[np.ix_(self._problem.mobile, self._axes)] = x
        return coords

    def _evaluate(self, x: np.ndarray, gamma: SmoothingParams) -> _Evaluation:
        p = self._problem
        coords = self._full_coords(x)
        view = charge_view(coords, p.netlist, p.region, p.grid, self._charged, self._tier_of, p.sampling)
        density = remove_mean(splat_view(view, p.grid))
        field_state = solve_field(density, workers=p.workers)
        sample = sample_field(field_state, view)
        grad_u = np.zeros((p.netlist.num_cells, 3))
        grad_u[view.index] = -density_force(field_state, view, sample)
        u_value = energy(field_state, view, sample)
        if p.use_wirelength:
            wl, grad_w = wa_value_and_gradient(coords, p.netlist, gamma, p.region.beta, dims=p.axes)
        else:
            wl, grad_w = 0.0, np.zeros_like(grad_u)
        rows = np.ix_(p.mobile, self._axes)
        self._last = _Evaluation(wl, u_value, grad_w[rows], grad_u[rows])
        self._last_x = x.copy()
        self._last_gamma = gamma
        return self._last

    def _precondition(self, gradient: np.ndarray, lam: float) -> np.ndarray:
        s = self._settings
        if s.preconditioner == "2d":
            return precondition_2d(gradient, self._degree, self._area, lam, h_min_ratio=s.h_min_ratio)
        return precondition_3d(gradient, self._volume, lam, h_min_ratio=s.h_min_ratio)

    def _gradient(self, x: np.ndarray, lam: float, gamma: SmoothingParams) -> np.ndarray:
        ev = self._evaluate(x, gamma)
        return self._precondition(ev.grad_wl + lam * ev.grad_density, lam)

    def _refresh(self, x: np.ndarray, lam: float, gamma: SmoothingParams) -> np.ndarray:
        """Gradient at x under new schedule values; the field solve at x is reused."""
        ev = self._last
        if ev is None or self._last_x is None or not np.array_equal(self._last_x, x):
            return self._gradient(x, lam, gamma)
        p = self._problem
        if p.use_wirelength and gamma != self._last_gamma:
            wl, grad_w = wa_value_and_gradient(self._full_coords(x), p.netlist, gamma, p.region.beta, dims=p.axes)
            ev = replace(ev, wl=wl, grad_wl=grad_w[np.ix_(p.mobile, self._axes)])
            self._last = ev
            self._last_gamma = gamma
        return self._precondition(ev.grad_wl + lam * ev.grad_density, lam)

    def _tau(self, x: np.ndarray) -> float:
        p = self._problem
        placement = Placement(coords=self._full_coords(x), tier_of=self._tier_of)
        return overflow(placement, p.netlist, p.region, p.grid, mobile=p.mobile_mask)

    def _gamma(self, tau: float) -> SmoothingParams:
        s = self._settings
        return gamma_schedule(tau, self._problem.grid.bin_dims, self._problem.region.tier_depth, s.gamma_k, s.gamma_b)

    def run(self, placement: Placement) -> GlobalPlaceResult:
        p = self._problem
        self._coords = placement.coords.copy()
        self._tier_of = placement.tier_of
        self._charged = charged_cells(p.netlist, p.region, self._coords)
        self._start = self._coords[np.ix_(p.mobile, self._axes)]
        self._alpha_scale = 1.0
        self._lam: Optional[float] = None
        self._history: List[IterationRecord] = []
        self._restarts = 0

        if len(p.mobile) == 0:
            return GlobalPlaceResult(placement=placement, tau=0.0, converged=True)

        result = None
        for attempt in Retrying(
            stop=stop_after_attempt(self._settings.max_restarts + 1),
            retry=retry_if_exception_type(DivergenceError),
            reraise=True,
        ):
            with attempt:
                result = self._descend()
        return result

    def _record(self, state: OptimizerState, x: np.ndarray) -> IterationRecord:
        p = self._problem
        placement = Placement(coords=self._full_coords(x), tier_of=self._tier_of)
        last = self._last
        record = IterationRecord(
            stage=p.label,
            iter=state.iteration,
            hpwl=hpwl(placement, p.netlist, p.region.beta),
            wl=last.wl if last else 0.0,
            energy=last.energy if last else 0.0,
            lam=state.lam,
            gamma=state.gamma.gamma_x if state.gamma else 0.0,
            tau=state.tau,
            alpha=state.alpha,
        )
        self._history.append(record)
        if state.iteration % self._settings.log_every == 0 or state.tau <= p.tau_stop:
            logging.info("[%s] %s", p.label, format_iteration_line(record))
        return record

    def _descend(self) -> GlobalPlaceResult:
        p = self._problem
        s = self._settings
        x0 = self._project(self._start)
        tau = self._tau(x0)
        if tau <= p.tau_stop:
            logging.info("[%s] overflow %.4f already below %.4f", p.label, tau, p.tau_stop)
            final = Placement(coords=self._full_coords(x0), tier_of=self._tier_of)
            return GlobalPlaceResult(final, list(self._history), 0, tau, True, self._restarts)

        gamma = self._gamma(tau)
        ev = self._evaluate(x0, gamma)
        if self._lam is None:
            self._lam = initial_lambda(ev.grad_wl, ev.grad_density) if p.use_wirelength else 1.0
        lam = self._lam
        g0 = self._precondition(ev.grad_wl + lam * ev.grad_density, lam)
        if not np.all(np.isfinite(g0)):
            raise DivergenceError(f"[{p.label}] non-finite initial gradient")
        alpha0 = initial_steplength(g0, self._bin_width) * self._alpha_scale
        state = OptimizerState.start(x0, g0, alpha0, lam=lam, gamma=gamma, tau=tau)

        start_placement = Placement(coords=self._full_coords(x0), tier_of=self._tier_of)
        prev = hpwl_3d(start_placement, p.netlist, p.region.beta)
        floor = p.netlist.num_nets * self._bin_width * (p.region.beta[0] + p.region.beta[1])
        ref = s.lambda_ref_fraction * max(prev, floor, 1e-12)
        self._record(state, x0)

        converged = False
        while state.iteration < p.max_iters:
            current = state
            try:
                state = nesterov_iterate(
                    current,
                    lambda u: self._gradient(u, current.lam, current.gamma),
                    self._project,
                    max_backtracks=s.max_backtracks,
                )
            except DivergenceError:
                self._start = current.v
                self._alpha_scale /= 10.0
                self._lam = current.lam
                self._restarts += 1
                logging.warning(
                    "[%s] divergence at iteration %d; restarting with steplength x%.0e",
                    p.label, current.iteration, self._alpha_scale,
                )
                raise
            tau = self._tau(state.v)
            now = hpwl_3d(Placement(coords=self._full_coords(state.v)), p.netlist, p.region.beta)
            lam = state.lam
            if p.use_wirelength:
                lam = lambda_schedule(state.lam, now - prev, ref, s.lambda_mu_min, s.lambda_mu_max)
            prev = now
            gamma = self._gamma(tau)
            state = replace(state, lam=lam, gamma=gamma, tau=tau, grad=self._refresh(state.u, lam, gamma))
            self._record(state, state.v)
            if tau <= p.tau_stop:
                converged = True
                break

        if not converged:
            logging.warning("[%s] stopped at %d iterations with overflow %.4f", p.label, state.iteration, state.tau)
        final = Placement(coords=self._full_coords(state.v), tier_of=self._tier_of)
        return GlobalPlaceResult(final, list(self._history), state.iteration, state.tau, converged, self._restarts)
