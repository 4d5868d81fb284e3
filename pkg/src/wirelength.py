"""Exact HPWL / VI metrics and the weighted-average smooth wirelength."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from src.model import InvalidInputError, Netlist, Placement, StateError


@dataclass(frozen=True)
class SmoothingParams:
    gamma_x: float
    gamma_y: float
    gamma_z: float

    def __post_init__(self) -> None:
        if min(self.gamma_x, self.gamma_y, self.gamma_z) <= 0:
            raise InvalidInputError(f"smoothing parameters must be positive: {self}")

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.gamma_x, self.gamma_y, self.gamma_z)


def pin_positions(coords: np.ndarray, netlist: Netlist) -> np.ndarray:
    pos = coords[netlist.pin_cell].copy()
    pos[:, 0] += netlist.pin_dx
    pos[:, 1] += netlist.pin_dy
    return pos


def net_spans(placement: Placement, netlist: Netlist) -> np.ndarray:
    """Per-net (span_x, span_y, span_z) of pin positions."""
    if netlist.num_nets == 0:
        return np.zeros((0, 3))
    pos = pin_positions(placement.coords, netlist)
    starts = netlist.net_start[:-1]
    hi = np.maximum.reduceat(pos, starts, axis=0)
    lo = np.minimum.reduceat(pos, starts, axis=0)
    return hi - lo


def hpwl_per_dim(placement: Placement, netlist: Netlist) -> Tuple[float, float]:
    spans = net_spans(placement, netlist)
    if len(spans) == 0:
        return 0.0, 0.0
    weighted = spans * netlist.net_weight[:, None]
    return float(weighted[:, 0].sum()), float(weighted[:, 1].sum())


def hpwl(placement: Placement, netlist: Netlist, beta: Sequence[float] = (1.0, 1.0, 1.0)) -> float:
    """Weighted planar half-perimeter wirelength; z is reported through vi_count."""
    hx, hy = hpwl_per_dim(placement, netlist)
    return beta[0] * hx + beta[1] * hy


def hpwl_3d(placement: Placement, netlist: Netlist, beta: Sequence[float]) -> float:
    """HPWL including the beta-weighted continuous z span (used to pace the penalty)."""
    spans = net_spans(placement, netlist)
    if len(spans) == 0:
        return 0.0
    return float((spans @ np.asarray(beta, dtype=float)) @ netlist.net_weight)


def vi_count(placement: Placement, netlist: Netlist) -> int:
    """Number of tier boundaries crossed, summed over nets."""
    if placement.tier_of is None:
        raise StateError("vertical interconnects need a tier assignment")
    if netlist.num_nets == 0:
        return 0
    tiers = placement.tier_of[netlist.pin_cell]
    starts = netlist.net_start[:-1]
    span = np.maximum.reduceat(tiers, starts) - np.minimum.reduceat(tiers, starts)
    return int(span.sum())


def _wa_axis(c: np.ndarray, netlist: Netlist, gamma: float) -> Tuple[np.ndarray, np.ndarray]:
    """Per-net WA span and per-pin derivative along one axis."""
    starts = netlist.net_start[:-1]
    pin_net = netlist.pin_net
    hi = np.maximum.reduceat(c, starts)[pin_net]
    lo = np.minimum.reduceat(c, starts)[pin_net]
    # shifted so that every exponent is <= 0
    up = c - hi
    dn = c - lo
    ep = np.exp(up / gamma)
    em = np.exp(-dn / gamma)
    sp = np.add.reduceat(ep, starts)
    sm = np.add.reduceat(em, starts)
    xp = np.add.reduceat(up * ep, starts) / sp
    xm = np.add.reduceat(dn * em, starts) / sm
    value = (xp + hi[starts]) - (xm + lo[starts])
    deriv = ep / sp[pin_net] * (1.0 + (up - xp[pin_net]) / gamma) - em / sm[pin_net] * (
        1.0 - (dn - xm[pin_net]) / gamma
    )
    return value, deriv


def _wa(
    coords: np.ndarray,
    netlist: Netlist,
    params: SmoothingParams,
    beta: Sequence[float],
    dims: Sequence[int],
    with_grad: bool,
):
    total = 0.0
    grad = np.zeros((netlist.num_cells, 3)) if with_grad else None
    if netlist.num_nets == 0:
        return total, grad
    pos = pin_positions(coords, netlist)
    gammas = params.as_tuple()
    for d in dims:
        if beta[d] == 0:
            continue
        value, deriv = _wa_axis(pos[:, d], netlist, gammas[d])
        total += beta[d] * float(value @ netlist.net_weight)
        if with_grad:
            pin_w = beta[d] * netlist.net_weight[netlist.pin_net] * deriv
            grad[:, d] = np.bincount(netlist.pin_cell, weights=pin_w, minlength=netlist.num_cells)
    return total, grad


def wa_wirelength(
    placement: Placement,
    netlist: Netlist,
    params: SmoothingParams,
    beta: Sequence[float] = (1.0, 1.0, 1.0),
    dims: Sequence[int] = (0, 1, 2),
) -> float:
    total, _ = _wa(placement.coords, netlist, params, beta, dims, with_grad=False)
    return total


def wa_gradient(
    placement: Placement,
    netlist: Netlist,
    params: SmoothingParams,
    beta: Sequence[float] = (1.0, 1.0, 1.0),
    dims: Sequence[int] = (0, 1, 2),
) -> np.ndarray:
    """d(WA)/d(center) per cell, shape (cells, 3); fixed cells are zeroed."""
    _, grad = _wa(placement.coords, netlist, params, beta, dims, with_grad=True)
    grad[~netlist.movable] = 0.0
    return grad


def wa_value_and_gradient(
    coords: np.ndarray,
    netlist: Netlist,
    params: SmoothingParams,
    beta: Sequence[float],
    dims: Sequence[int] = (0, 1, 2),
) -> Tuple[float, np.ndarray]:
    total, grad = _wa(coords, netlist, params, beta, dims, with_grad=True)
    return total, grad


class NetCost:
    """Weighted HPWL over a subset of nets, for move-based optimizers.

    beta entries that are zero drop their axis from the cost.
    """

    def __init__(self, netlist: Netlist, beta: Sequence[float]):
        self._netlist = netlist
        self._beta = np.asarray(beta, dtype=float)
        order = np.argsort(netlist.pin_cell, kind="stable")
        self._cell_pins = order
        self._cell_ptr = np.searchsorted(netlist.pin_cell[order], np.arange(netlist.num_cells + 1))
        self._cache = {}

    def nets_of(self, cells) -> np.ndarray:
        """Sorted unique nets incident to the given cells."""
        key = tuple(int(c) for c in np.atleast_1d(cells))
        nets = self._cache.get(key)
        if nets is None:
            pins = np.concatenate(
                [self._cell_pins[self._cell_ptr[c]: self._cell_ptr[c + 1]] for c in key]
            ) if key else np.zeros(0, dtype=np.int64)
            nets = np.unique(self._netlist.pin_net[pins])
            if len(key) == 1:
                self._cache[key] = nets
        return nets

    def per_net(self, coords: np.ndarray, nets: np.ndarray) -> np.ndarray:
        nl = self._netlist
        if len(nets) == 0:
            return np.zeros(0)
        starts = nl.net_start[nets]
        lengths = nl.net_start[nets + 1] - starts
        offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]])
        idx = np.repeat(starts - offsets, lengths) + np.arange(int(lengths.sum()))
        pos = coords[nl.pin_cell[idx]].copy()
        pos[:, 0] += nl.pin_dx[idx]
        pos[:, 1] += nl.pin_dy[idx]
        spans = np.maximum.reduceat(pos, offsets, axis=0) - np.minimum.reduceat(pos, offsets, axis=0)
        return (spans @ self._beta) * nl.net_weight[nets]

    def cost(self, coords: np.ndarray, nets: np.ndarray) -> float:
        return float(self.per_net(coords, nets).sum())
