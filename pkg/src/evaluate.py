"""Independent legality checker and metric report."""
from __future__ import annotations

from typing import List, Optional

import numpy as np

from src.edensity import overflow
from src.model import (
    BinGridSpec,
    CellKind,
    Netlist,
    Placement,
    Region3D,
    StateError,
    clamp_to_region,
    half_extents,
    size_bin_grid_2d,
)
from src.schemas import EvalReport, Violation
from src.wirelength import hpwl, hpwl_per_dim, vi_count

_TOL = 1e-9


def default_eval_grid(netlist: Netlist, region: Region3D, m: Optional[int] = None) -> BinGridSpec:
    """Layered per-tier grid; sized from the average standard-cell area unless m is given."""
    if m is not None:
        return BinGridSpec(m, m, region.tiers, layered=True)
    std = netlist.kind == CellKind.STDCELL
    if not np.any(std):
        return BinGridSpec(8, 8, region.tiers, layered=True)
    return size_bin_grid_2d(region, float(netlist.area[std].mean()), region.rho_t)


def _strip_fillers(placement: Placement, netlist: Netlist):
    base, keep = netlist.without_fillers()
    if len(keep) == netlist.num_cells:
        return placement, netlist
    return placement.take(keep), base


def _overlaps(
    index: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    fixed: np.ndarray,
    netlist: Netlist,
    area_scale: float,
) -> List[Violation]:
    """Sweep over x-sorted half-open boxes of one tier."""
    found: List[Violation] = []
    order = np.argsort(lo[:, 0], kind="stable")
    lo, hi, index, fixed = lo[order], hi[order], index[order], fixed[order]
    for a in range(len(index)):
        end = int(np.searchsorted(lo[:, 0], hi[a, 0] - _TOL, side="left"))
        if end <= a + 1:
            continue
        cand = np.arange(a + 1, end)
        ox = np.minimum(hi[a, 0], hi[cand, 0]) - np.maximum(lo[a, 0], lo[cand, 0])
        oy = np.minimum(hi[a, 1], hi[cand, 1]) - np.maximum(lo[a, 1], lo[cand, 1])
        hit = (ox > _TOL) & (oy > _TOL) & ~(fixed[a] & fixed[cand])
        for b, x, y in zip(cand[hit], ox[hit], oy[hit]):
            found.append(
                Violation(
                    kind="overlap",
                    cells=[netlist.names[index[a]], netlist.names[index[b]]],
                    amount=float(x * y * area_scale),
                )
            )
    return found


def check_legality(placement: Placement, netlist: Netlist, region: Region3D) -> List[Violation]:
    """Bounds, overlap, row and tier violations of a tiered placement.

    Overlap amounts are areas in physical units of one tier. Fillers and IO pads are ignored.
    """
    if placement.tier_of is None:
        raise StateError("legality needs a tier assignment")
    placement, netlist = _strip_fillers(placement, netlist)
    coords = placement.coords
    tiers = placement.tier_of
    violations: List[Violation] = []
    sized = np.flatnonzero(netlist.kind != CellKind.IO)
    movable = netlist.movable
    half = np.stack([netlist.width / 2, netlist.height / 2], axis=1)
    lo = coords[:, :2] - half
    hi = coords[:, :2] + half
    area_scale = region.scale[0] * region.scale[1]

    for i in sized[movable[sized]]:
        inside = np.prod(np.clip(np.minimum(hi[i], 1.0) - np.maximum(lo[i], 0.0), 0.0, None))
        outside = float(netlist.area[i] - inside)
        if outside > _TOL * max(netlist.area[i], 1.0) or np.any(lo[i] < -_TOL) or np.any(hi[i] > 1 + _TOL):
            violations.append(Violation(kind="bounds", cells=[netlist.names[i]], amount=outside * area_scale))

    for i in sized[movable[sized]]:
        t = int(tiers[i])
        if not 0 <= t < region.tiers or abs(coords[i, 2] - region.tier_center(t)) > _TOL:
            violations.append(Violation(kind="tier", cells=[netlist.names[i]], amount=0.0))

    if region.rows:
        row_y = np.asarray([r.y for r in region.rows])
        row_lo = np.asarray([r.x_min for r in region.rows])
        row_hi = np.asarray([r.x_max for r in region.rows])
        for i in np.flatnonzero(netlist.kind == CellKind.STDCELL):
            on_row = np.abs(row_y - lo[i, 1]) <= _TOL
            within = on_row & (lo[i, 0] >= row_lo - _TOL) & (hi[i, 0] <= row_hi + _TOL)
            if not within.any():
                violations.append(Violation(kind="row", cells=[netlist.names[i]], amount=0.0))

    fixed = ~movable
    for t in range(region.tiers):
        on = sized[tiers[sized] == t]
        if len(on) > 1:
            violations.extend(_overlaps(on, lo[on], hi[on], fixed[on], netlist, area_scale))
    return violations


def tier_utilization(placement: Placement, netlist: Netlist, region: Region3D) -> List[float]:
    """Movable cell area per tier over the area left free by fixed blocks."""
    placement, netlist = _strip_fillers(placement, netlist)
    tiers = placement.tier_of
    if tiers is None:
        return [0.0] * region.tiers
    movable = netlist.movable
    fixed = netlist.kind == CellKind.FIXED
    out = []
    for t in range(region.tiers):
        on = tiers == t
        free = 1.0 - float(netlist.area[fixed & on].sum())
        used = float(netlist.area[movable & on].sum())
        out.append(used / free if free > 0 else 0.0)
    return out


def evaluate(
    placement: Placement,
    netlist: Netlist,
    region: Region3D,
    grid: Optional[BinGridSpec] = None,
) -> EvalReport:
    """Read-only metric report: HPWL, #VI, overflow on the given grid, legality and utilization."""
    if placement.tier_of is None:
        raise StateError("evaluation needs a tier assignment")
    placement, netlist = _strip_fillers(placement, netlist)
    grid = grid or default_eval_grid(netlist, region)
    hx, hy = hpwl_per_dim(placement, netlist)
    violations = check_legality(placement, netlist, region)
    # overflow is measured on the part of each cell inside the region
    clamped = placement.coords.copy()
    movable = netlist.movable
    clamped[movable] = clamp_to_region(clamped[movable], half_extents(netlist, region)[movable])
    return EvalReport(
        hpwl=hpwl(placement, netlist, region.beta),
        hpwl_x=hx,
        hpwl_y=hy,
        hpwl_physical=hx * region.scale[0] + hy * region.scale[1],
        vi=vi_count(placement, netlist),
        tau=overflow(placement.with_coords(clamped), netlist, region, grid),
        grid=grid.m_x,
        legal=not violations,
        violations=violations,
        tier_utilization=tier_utilization(placement, netlist, region),
    )
