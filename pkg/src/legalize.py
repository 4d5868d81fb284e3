"""Macro legalization by simulated annealing, row legalization and local refinement."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from src.config import AnnealingSettings
from src.model import CellKind, Netlist, Placement, Region3D, StateError
from src.wirelength import NetCost, hpwl

_TOL = 1e-12
_MIN_RANGE = 0.02
_GREEDY_STEPS = 32


class LegalizationFailure(RuntimeError):
    """Raised when a legalizer cannot remove every overlap."""

    def __init__(self, message: str, tier: Optional[int] = None, residual_overlap: float = 0.0):
        super().__init__(message)
        self.tier = tier
        self.residual_overlap = residual_overlap


def _overlap_len(lo_a, hi_a, lo_b, hi_b) -> np.ndarray:
    length = np.minimum(hi_a, hi_b) - np.maximum(lo_a, lo_b)
    return np.where(length > _TOL, length, 0.0)


def _inside_region(coords: np.ndarray, netlist: Netlist, index: np.ndarray) -> np.ndarray:
    hw = netlist.width[index] / 2
    hh = netlist.height[index] / 2
    x, y = coords[index, 0], coords[index, 1]
    return (x - hw >= -1e-9) & (x + hw <= 1 + 1e-9) & (y - hh >= -1e-9) & (y + hh <= 1 + 1e-9)


@dataclass
class _MacroSet:
    """Macros plus the fixed blocks they must avoid, in normalized units."""

    index: np.ndarray
    half: np.ndarray
    obs_lo: np.ndarray
    obs_hi: np.ndarray
    obs_tier: np.ndarray
    depth: float

    @classmethod
    def build(cls, placement: Placement, netlist: Netlist, region: Region3D) -> "_MacroSet":
        index = np.flatnonzero(netlist.kind == CellKind.MACRO)
        half = np.stack([netlist.width[index] / 2, netlist.height[index] / 2], axis=1)
        fixed = np.flatnonzero(netlist.kind == CellKind.FIXED)
        fixed = fixed[_inside_region(placement.coords, netlist, fixed)]
        fhalf = np.stack([netlist.width[fixed] / 2, netlist.height[fixed] / 2], axis=1)
        obs_tier = placement.tier_of[fixed] if placement.tier_of is not None else np.zeros(len(fixed), dtype=np.int64)
        return cls(
            index=index,
            half=half,
            obs_lo=placement.coords[fixed, :2] - fhalf,
            obs_hi=placement.coords[fixed, :2] + fhalf,
            obs_tier=obs_tier,
            depth=region.tier_depth,
        )

    def _outside(self, lo: np.ndarray, hi: np.ndarray) -> float:
        area = float(np.prod(hi - lo))
        inside = float(np.prod(_overlap_len(lo, hi, 0.0, 1.0)))
        return max(area - inside, 0.0)

    def parts(self, xy: np.ndarray, tiers: np.ndarray, i: int) -> Tuple[float, float]:
        """(area shared with other macros, area on fixed blocks or outside) for macro i."""
        lo = xy - self.half
        hi = xy + self.half
        same = tiers == tiers[i]
        same[i] = False
        ox = _overlap_len(lo[i, 0], hi[i, 0], lo[same, 0], hi[same, 0])
        oy = _overlap_len(lo[i, 1], hi[i, 1], lo[same, 1], hi[same, 1])
        pair = float((ox * oy).sum())
        on_tier = self.obs_tier == tiers[i]
        fx = _overlap_len(lo[i, 0], hi[i, 0], self.obs_lo[on_tier, 0], self.obs_hi[on_tier, 0])
        fy = _overlap_len(lo[i, 1], hi[i, 1], self.obs_lo[on_tier, 1], self.obs_hi[on_tier, 1])
        other = float((fx * fy).sum()) + self._outside(lo[i], hi[i])
        return pair, other

    def of(self, xy: np.ndarray, tiers: np.ndarray, i: int) -> float:
        pair, other = self.parts(xy, tiers, i)
        return (pair + other) * self.depth

    def total(self, xy: np.ndarray, tiers: np.ndarray) -> float:
        area = 0.0
        for i in range(len(self.index)):
            pair, other = self.parts(xy, tiers, i)
            area += 0.5 * pair + other
        return area * self.depth


def macro_overlap(placement: Placement, netlist: Netlist, region: Region3D) -> float:
    """Total macro overlap volume Om: macro pairs, macros on fixed blocks, and volume outside the region."""
    ms = _MacroSet.build(placement, netlist, region)
    if len(ms.index) == 0:
        return 0.0
    tiers = placement.tier_of
    if tiers is None:
        tiers = np.clip(np.floor(placement.z / region.tier_depth).astype(np.int64), 0, region.tiers - 1)
    return ms.total(placement.coords[ms.index, :2], tiers[ms.index])


class _Annealer:
    """One annealing run over macro positions and tiers; standard cells stay put."""

    def __init__(
        self,
        placement: Placement,
        netlist: Netlist,
        region: Region3D,
        settings: AnnealingSettings,
        macros: _MacroSet,
        costs: NetCost,
    ):
        self._placement = placement
        self._netlist = netlist
        self._region = region
        self._settings = settings
        self._ms = macros
        self._costs = costs
        self._clip_lo = np.minimum(macros.half, 0.5)
        self._clip_hi = 1.0 - self._clip_lo

    def _xy(self, coords: np.ndarray) -> np.ndarray:
        return coords[self._ms.index, :2]

    def _propose(self, rng: np.random.Generator, temperature: float, t_init: float):
        k = len(self._ms.index)
        roll = rng.random()
        if k >= 2 and roll < 0.2:
            i, j = rng.choice(k, size=2, replace=False)
            return ("swap", int(i), int(j), None)
        if self._region.tiers > 1 and roll < 0.4:
            return ("retier", int(rng.integers(k)), None, 1 if rng.random() < 0.5 else -1)
        reach = 0.5 * max(temperature / t_init if t_init > 0 else 1.0, _MIN_RANGE)
        return ("translate", int(rng.integers(k)), None, rng.uniform(-reach, reach, size=2))

    def _apply(self, coords: np.ndarray, tiers: np.ndarray, move) -> None:
        kind, i, j, arg = move
        cells = self._ms.index
        depth = self._region.tier_depth
        if kind == "translate":
            c = cells[i]
            coords[c, :2] = np.clip(coords[c, :2] + arg, self._clip_lo[i], self._clip_hi[i])
        elif kind == "retier":
            c = cells[i]
            tiers[c] = min(max(tiers[c] + arg, 0), self._region.tiers - 1)
            coords[c, 2] = (tiers[c] + 0.5) * depth
        else:
            a, b = cells[i], cells[j]
            pa, pb = coords[a].copy(), coords[b].copy()
            ta, tb = tiers[a], tiers[b]
            coords[a, :2] = np.clip(pb[:2], self._clip_lo[i], self._clip_hi[i])
            coords[b, :2] = np.clip(pa[:2], self._clip_lo[j], self._clip_hi[j])
            tiers[a], tiers[b] = tb, ta
            coords[a, 2] = (tb + 0.5) * depth
            coords[b, 2] = (ta + 0.5) * depth

    def _delta(self, coords: np.ndarray, tiers: np.ndarray, move, penalty: float):
        """Apply the move in place; return (cost delta, overlap delta, undo record)."""
        kind, i, j, _ = move
        cells = self._ms.index
        moved = [cells[i]] if kind != "swap" else [cells[i], cells[j]]
        nets = self._costs.nets_of(moved)
        undo = (moved, coords[moved].copy(), tiers[moved].copy())
        wl_before = self._costs.cost(coords, nets)
        if kind == "swap":
            om_before = self._ms.total(self._xy(coords), tiers[cells])
        else:
            om_before = self._ms.of(self._xy(coords), tiers[cells], i)
        self._apply(coords, tiers, move)
        wl_after = self._costs.cost(coords, nets)
        if kind == "swap":
            om_after = self._ms.total(self._xy(coords), tiers[cells])
        else:
            om_after = self._ms.of(self._xy(coords), tiers[cells], i)
        d_om = om_after - om_before
        return (wl_after - wl_before) + penalty * d_om, d_om, undo

    @staticmethod
    def _undo(coords: np.ndarray, tiers: np.ndarray, undo) -> None:
        moved, saved_coords, saved_tiers = undo
        coords[moved] = saved_coords
        tiers[moved] = saved_tiers

    def initial_temperature(self, penalty: float, rng: np.random.Generator) -> float:
        """Temperature at which half of the sampled uphill moves would be accepted."""
        coords = self._placement.coords.copy()
        tiers = self._placement.tier_of.copy()
        uphill = []
        for _ in range(self._settings.prologue_samples):
            move = self._propose(rng, 1.0, 1.0)
            delta, _, undo = self._delta(coords, tiers, move, penalty)
            self._undo(coords, tiers, undo)
            if delta > 0:
                uphill.append(delta)
        if not uphill:
            return 1.0
        return float(np.mean(uphill)) / math.log(2.0)

    def run(self, penalty: float, rng: np.random.Generator) -> Placement:
        s = self._settings
        ms = self._ms
        coords = self._placement.coords.copy()
        tiers = self._placement.tier_of.copy()
        t_init = s.t_init or self.initial_temperature(penalty, rng)
        t_final = s.t_final_ratio * t_init
        moves = s.moves_per_macro * len(ms.index)
        all_nets = self._costs.nets_of(ms.index)

        om = 0.0
        best: Optional[Tuple[float, np.ndarray, np.ndarray]] = None
        temperature = t_init
        steps = 0
        while temperature > t_final:
            accepted = 0
            for _ in range(moves):
                move = self._propose(rng, temperature, t_init)
                delta, _, undo = self._delta(coords, tiers, move, penalty)
                if delta <= 0 or rng.random() < math.exp(-delta / temperature):
                    accepted += 1
                else:
                    self._undo(coords, tiers, undo)
            om = ms.total(self._xy(coords), tiers[ms.index])
            if om <= _TOL:
                wl = self._costs.cost(coords, all_nets)
                if best is None or wl < best[0]:
                    best = (wl, coords[ms.index].copy(), tiers[ms.index].copy())
            steps += 1
            if accepted == 0:
                break
            temperature *= s.cooling

        if best is not None:
            coords[ms.index] = best[1]
            tiers[ms.index] = best[2]
            om = 0.0
        logging.info("[sa] %d temperatures from %.4g, residual overlap %.4g", steps, t_init, om)
        if om > _TOL:
            raise LegalizationFailure(f"macro overlap {om:.4g} remains after annealing", residual_overlap=om)
        return Placement(coords=coords, tier_of=tiers)


def _greedy_resolve(placement: Placement, netlist: Netlist, region: Region3D, ms: _MacroSet) -> Placement:
    """Place macros largest-first at the nearest overlap-free grid slot of any tier."""
    coords = placement.coords.copy()
    tiers = placement.tier_of.copy()
    sx, sy = region.scale
    local = np.argsort(-(ms.half[:, 0] * ms.half[:, 1]), kind="stable")
    placed: List[int] = []
    for i in local:
        c = ms.index[i]
        hx, hy = ms.half[i]
        if hx > 0.5 + _TOL or hy > 0.5 + _TOL:
            raise LegalizationFailure(f"macro {netlist.names[c]} is larger than the region")
        xs = np.unique(np.append(np.linspace(hx, 1 - hx, _GREEDY_STEPS), coords[c, 0]))
        ys = np.unique(np.append(np.linspace(hy, 1 - hy, _GREEDY_STEPS), coords[c, 1]))
        gx, gy = np.meshgrid(np.clip(xs, hx, 1 - hx), np.clip(ys, hy, 1 - hy), indexing="ij")
        gx, gy = gx.ravel(), gy.ravel()
        best = None
        for t in range(region.tiers):
            blocked = np.zeros(len(gx), dtype=bool)
            same = [j for j in placed if tiers[ms.index[j]] == t]
            lo_list = [coords[ms.index[j], :2] - ms.half[j] for j in same]
            hi_list = [coords[ms.index[j], :2] + ms.half[j] for j in same]
            on_tier = ms.obs_tier == t
            lo_list.extend(ms.obs_lo[on_tier])
            hi_list.extend(ms.obs_hi[on_tier])
            for lo, hi in zip(lo_list, hi_list):
                ox = _overlap_len(gx - hx, gx + hx, lo[0], hi[0])
                oy = _overlap_len(gy - hy, gy + hy, lo[1], hi[1])
                blocked |= (ox * oy) > 0
            if blocked.all():
                continue
            dist = sx * np.abs(gx - coords[c, 0]) + sy * np.abs(gy - coords[c, 1]) + (sx + sy) * abs(t - tiers[c])
            dist[blocked] = np.inf
            k = int(np.argmin(dist))
            if best is None or dist[k] < best[0]:
                best = (dist[k], gx[k], gy[k], t)
        if best is None:
            raise LegalizationFailure(
                f"no overlap-free slot for macro {netlist.names[c]}",
                residual_overlap=float(4 * hx * hy * region.tier_depth),
            )
        _, x, y, t = best
        coords[c] = (x, y, (t + 0.5) * region.tier_depth)
        tiers[c] = t
        placed.append(int(i))
    return Placement(coords=coords, tier_of=tiers)


def legalize_macros_sa(
    placement: Placement,
    netlist: Netlist,
    region: Region3D,
    settings: Optional[AnnealingSettings] = None,
    seed: int = 0,
) -> Placement:
    """Remove macro overlap by annealing translate, retier and swap moves.

    Overlap-free inputs come back unchanged. Each retry doubles the overlap penalty;
    when every run leaves overlap, a greedy slot search takes over.
    """
    settings = settings or AnnealingSettings()
    if placement.tier_of is None:
        raise StateError("macro legalization needs a tier assignment")
    ms = _MacroSet.build(placement, netlist, region)
    if len(ms.index) == 0:
        return placement
    om0 = ms.total(placement.coords[ms.index, :2], placement.tier_of[ms.index])
    if om0 <= _TOL:
        logging.info("[sa] %d macros already overlap-free", len(ms.index))
        return placement

    costs = NetCost(netlist, region.beta)
    wl0 = costs.cost(placement.coords, costs.nets_of(ms.index))
    volume = float((4 * ms.half[:, 0] * ms.half[:, 1]).sum() * region.tier_depth)
    penalty = settings.overlap_weight * max(wl0, 1e-9) / max(volume, 1e-12)
    logging.info("[sa] %d macros, overlap %.4g, penalty %.4g", len(ms.index), om0, penalty)

    annealer = _Annealer(placement, netlist, region, settings, ms, costs)
    try:
        for attempt in Retrying(
            stop=stop_after_attempt(settings.max_retries + 1),
            retry=retry_if_exception_type(LegalizationFailure),
            reraise=True,
        ):
            with attempt:
                n = attempt.retry_state.attempt_number
                rng = np.random.default_rng(seed + n - 1)
                return annealer.run(penalty * 2 ** (n - 1), rng)
    except LegalizationFailure as exc:
        logging.warning("[sa] annealing left overlap %.4g; falling back to greedy slots", exc.residual_overlap)
    return _greedy_resolve(placement, netlist, region, ms)


@dataclass
class _Segments:
    """Free row intervals of one tier."""

    y: np.ndarray
    height: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __len__(self) -> int:
        return len(self.y)


def _row_segments(region: Region3D, obs_lo: np.ndarray, obs_hi: np.ndarray) -> _Segments:
    ys, hs, los, his = [], [], [], []
    for row in region.rows:
        pieces = [(row.x_min, row.x_max)]
        top = row.y + row.height
        for lo, hi in zip(obs_lo, obs_hi):
            if min(top, hi[1]) - max(row.y, lo[1]) <= 1e-9:
                continue
            cut = []
            for a, b in pieces:
                if lo[0] > a:
                    cut.append((a, min(b, lo[0])))
                if hi[0] < b:
                    cut.append((max(a, hi[0]), b))
            pieces = [(a, b) for a, b in cut if b - a > 1e-9]
        for a, b in pieces:
            ys.append(row.y)
            hs.append(row.height)
            los.append(a)
            his.append(b)
    return _Segments(np.asarray(ys), np.asarray(hs), np.asarray(los), np.asarray(his))


def _tetris(
    want_x: np.ndarray,
    want_y: np.ndarray,
    width: np.ndarray,
    height: np.ndarray,
    segs: _Segments,
    scale: Tuple[float, float],
    tier: int,
    volume: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """Greedy left-edge packing; returns left edges and segment ids."""
    order = np.lexsort((want_y, want_x))
    frontier = segs.lo.copy()
    left = np.empty(len(want_x))
    seg_of = np.empty(len(want_x), dtype=np.int64)
    for rank, c in enumerate(order):
        w = width[c]
        fits = (frontier + w <= segs.hi + 1e-9) & (segs.height >= height[c] - 1e-9)
        if not fits.any():
            raise LegalizationFailure(
                f"tier {tier}: rows are full with {len(order) - rank} cells left",
                tier=tier,
                residual_overlap=float(volume[order[rank:]].sum()),
            )
        pos = np.maximum(np.minimum(want_x[c], segs.hi - w), frontier)
        cost = scale[0] * np.abs(pos - want_x[c]) + scale[1] * np.abs(segs.y - want_y[c])
        cost[~fits] = np.inf
        s = int(np.argmin(cost))
        left[c] = pos[s]
        seg_of[c] = s
        frontier[s] = pos[s] + w
    return left, seg_of


def _optimal_center(c: int, coords: np.ndarray, netlist: Netlist, costs: NetCost) -> Optional[float]:
    """Median of the other pins' x bounds over the cell's nets, as a cell center."""
    ends = []
    for n in costs.nets_of([c]):
        lo, hi = netlist.net_start[n], netlist.net_start[n + 1]
        cells = netlist.pin_cell[lo:hi]
        own = cells == c
        if own.all():
            continue
        xs = coords[cells[~own], 0] + netlist.pin_dx[lo:hi][~own]
        dx = float(netlist.pin_dx[lo:hi][own][0])
        ends.extend([xs.min() - dx, xs.max() - dx])
    if not ends:
        return None
    return float(np.median(ends))


def _refine(
    coords: np.ndarray,
    members: Dict[Tuple[int, int], List[int]],
    bounds: Dict[Tuple[int, int], Tuple[float, float]],
    netlist: Netlist,
    costs: NetCost,
) -> int:
    """Adjacent same-size swaps then single-cell shifts, each kept only when HPWL drops."""
    improved = 0
    w = netlist.width
    h = netlist.height
    for key, cells in members.items():
        cells.sort(key=lambda c: coords[c, 0])
        for k in range(len(cells) - 1):
            a, b = cells[k], cells[k + 1]
            if abs(w[a] - w[b]) > 1e-12 or abs(h[a] - h[b]) > 1e-12:
                continue
            nets = costs.nets_of([a, b])
            before = costs.cost(coords, nets)
            coords[a, 0], coords[b, 0] = coords[b, 0], coords[a, 0]
            if costs.cost(coords, nets) < before - 1e-15:
                cells[k], cells[k + 1] = b, a
                improved += 1
            else:
                coords[a, 0], coords[b, 0] = coords[b, 0], coords[a, 0]

        seg_lo, seg_hi = bounds[key]
        for k, c in enumerate(cells):
            target = _optimal_center(c, coords, netlist, costs)
            if target is None:
                continue
            left = seg_lo if k == 0 else coords[cells[k - 1], 0] + w[cells[k - 1]] / 2
            right = seg_hi if k == len(cells) - 1 else coords[cells[k + 1], 0] - w[cells[k + 1]] / 2
            new_x = min(max(target, left + w[c] / 2), right - w[c] / 2)
            if abs(new_x - coords[c, 0]) <= 1e-15:
                continue
            nets = costs.nets_of([c])
            before = costs.cost(coords, nets)
            old_x = coords[c, 0]
            coords[c, 0] = new_x
            if costs.cost(coords, nets) < before - 1e-15:
                improved += 1
            else:
                coords[c, 0] = old_x
    return improved


def _row_blockers(coords: np.ndarray, netlist: Netlist) -> np.ndarray:
    """Macros plus fixed blocks inside the region: the obstacles of row placement."""
    blocking = netlist.kind == CellKind.MACRO
    fixed = np.flatnonzero(netlist.kind == CellKind.FIXED)
    blocking[fixed[_inside_region(coords, netlist, fixed)]] = True
    return blocking


def free_row_area(placement: Placement, netlist: Netlist, region: Region3D, tier: int) -> float:
    """Normalized row area of a tier not covered by its macros and fixed blocks."""
    if placement.tier_of is None:
        raise StateError("free row area needs a tier assignment")
    coords = placement.coords
    obs = np.flatnonzero(_row_blockers(coords, netlist) & (placement.tier_of == tier))
    if not region.rows:
        return max(1.0 - float(netlist.area[obs].sum()), 0.0)
    half = np.stack([netlist.width[obs] / 2, netlist.height[obs] / 2], axis=1)
    segs = _row_segments(region, coords[obs, :2] - half, coords[obs, :2] + half)
    return float(((segs.hi - segs.lo) * segs.height).sum())


def legalize_and_detail(
    placement: Placement,
    netlist: Netlist,
    region: Region3D,
    refine: bool = True,
) -> Placement:
    """Row-legalize standard cells tier by tier, bottom up, then refine locally.

    Fillers are dropped: the result indexes ``netlist.without_fillers()``. Macros and
    fixed blocks are obstacles; tiers never change.
    """
    if placement.tier_of is None:
        raise StateError("row legalization needs a tier assignment")
    base, keep = netlist.without_fillers()
    coords = placement.coords[keep].copy()
    tiers = placement.tier_of[keep].copy()
    if not region.rows and np.any(base.kind == CellKind.STDCELL):
        raise LegalizationFailure("region has no placement rows", tier=0)

    std = base.kind == CellKind.STDCELL
    blocking = _row_blockers(coords, base)
    half = np.stack([base.width / 2, base.height / 2], axis=1)
    volume = base.volume(region.tier_depth)
    costs = NetCost(base, (region.beta[0], region.beta[1], 0.0))

    members: Dict[Tuple[int, int], List[int]] = {}
    bounds: Dict[Tuple[int, int], Tuple[float, float]] = {}
    for t in range(region.tiers):
        cells = np.flatnonzero(std & (tiers == t))
        if len(cells) == 0:
            continue
        obs = np.flatnonzero(blocking & (tiers == t))
        segs = _row_segments(region, coords[obs, :2] - half[obs], coords[obs, :2] + half[obs])
        if len(segs) == 0:
            raise LegalizationFailure(f"tier {t}: no free row space", tier=t, residual_overlap=float(volume[cells].sum()))
        want_x = coords[cells, 0] - half[cells, 0]
        want_y = coords[cells, 1] - half[cells, 1]
        left, seg_of = _tetris(
            want_x, want_y, base.width[cells], base.height[cells], segs, region.scale, t, volume[cells]
        )
        moved = np.abs(left - want_x) * region.scale[0] + np.abs(segs.y[seg_of] - want_y) * region.scale[1]
        coords[cells, 0] = left + half[cells, 0]
        coords[cells, 1] = segs.y[seg_of] + half[cells, 1]
        coords[cells, 2] = region.tier_center(t)
        for c, s in zip(cells, seg_of):
            members.setdefault((t, int(s)), []).append(int(c))
            bounds[(t, int(s))] = (float(segs.lo[s]), float(segs.hi[s]))
        logging.info("[lg] tier %d: %d cells legalized, mean displacement %.4g", t, len(cells), float(moved.mean()))

    result = Placement(coords=coords, tier_of=tiers)
    if refine and members:
        before = hpwl(result, base, region.beta)
        improved = _refine(coords, members, bounds, base, costs)
        result = Placement(coords=coords, tier_of=tiers)
        logging.info(
            "[lg] refinement: %d moves kept, hpwl %.6g -> %.6g", improved, before, hpwl(result, base, region.beta)
        )
    return result
