"""The placement pipeline: initial placement, mixed-size GP, tiers, macro LG, cell GP, LG/DP."""
from __future__ import annotations

import logging
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg

from src.bookshelf import Instance3D, write_placement_3d
from src.config import FlowConfig
from src.edensity import charged_cells, overflow, remove_mean, solve_field, splat_density, write_heatmaps
from src.globalplace import GlobalPlacer, GlobalPlaceProblem, GlobalPlaceResult
from src.legalize import free_row_area, legalize_and_detail, legalize_macros_sa, macro_overlap
from src.model import (
    BinGridSpec,
    CellKind,
    Netlist,
    Placement,
    Region3D,
    StateError,
    average_stdcell_dims,
    clamp_to_region,
    compute_vi_weight,
    half_extents,
    size_bin_grid,
    size_bin_grid_2d,
)
from src.schemas import IterationRecord, StageReport
from src.wirelength import hpwl, vi_count

_CLIQUE_MAX = 3
_ANCHOR = 1e-6
_JITTER = 1e-3


class StageError(RuntimeError):
    """Raised when a flow stage fails; carries the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


# --- Initial placement ---

def _net_terms(netlist: Netlist, variable: np.ndarray) -> Tuple[np.ndarray, ...]:
    """Pairwise quadratic terms: (pin_u, pin_v or -1 for a star node, star id, weight)."""
    pin_u: List[int] = []
    pin_v: List[int] = []
    star: List[int] = []
    weight: List[float] = []
    stars = 0
    for n in range(netlist.num_nets):
        lo, hi = int(netlist.net_start[n]), int(netlist.net_start[n + 1])
        p = hi - lo
        w = float(netlist.net_weight[n])
        if p < 2 or w == 0 or not variable[netlist.pin_cell[lo:hi]].any():
            continue
        if p <= _CLIQUE_MAX:
            for a in range(lo, hi):
                for b in range(a + 1, hi):
                    pin_u.append(a)
                    pin_v.append(b)
                    star.append(-1)
                    weight.append(w / (p - 1))
        else:
            for a in range(lo, hi):
                pin_u.append(a)
                pin_v.append(-1)
                star.append(stars)
                weight.append(p * w / (p - 1))
            stars += 1
    return (
        np.asarray(pin_u, dtype=np.int64),
        np.asarray(pin_v, dtype=np.int64),
        np.asarray(star, dtype=np.int64),
        np.asarray(weight, dtype=float),
        stars,
    )


def _solve_axis(
    netlist: Netlist,
    coords: np.ndarray,
    cells: np.ndarray,
    terms: Tuple[np.ndarray, ...],
    offsets: np.ndarray,
    axis: int,
) -> np.ndarray:
    pin_u, pin_v, star, weight, stars = terms
    n = netlist.num_cells
    var_of = np.full(n + stars, -1, dtype=np.int64)
    var_of[cells] = np.arange(len(cells))
    var_of[n:] = np.arange(len(cells), len(cells) + stars)
    size = len(cells) + stars

    node_u = netlist.pin_cell[pin_u]
    off_u = offsets[pin_u]
    is_star = pin_v < 0
    node_v = np.where(is_star, n + star, netlist.pin_cell[np.maximum(pin_v, 0)])
    off_v = np.where(is_star, 0.0, offsets[np.maximum(pin_v, 0)])
    vu, vv = var_of[node_u], var_of[node_v]
    pos = np.concatenate([coords[:, axis], np.zeros(stars)])

    rows, cols, vals = [], [], []
    b = np.zeros(size)
    both = (vu >= 0) & (vv >= 0)
    rows += [vu[both], vv[both], vu[both], vv[both]]
    cols += [vu[both], vv[both], vv[both], vu[both]]
    vals += [weight[both], weight[both], -weight[both], -weight[both]]
    np.add.at(b, vu[both], weight[both] * (off_v[both] - off_u[both]))
    np.add.at(b, vv[both], weight[both] * (off_u[both] - off_v[both]))
    only_u = (vu >= 0) & (vv < 0)
    rows.append(vu[only_u])
    cols.append(vu[only_u])
    vals.append(weight[only_u])
    np.add.at(b, vu[only_u], weight[only_u] * (pos[node_v[only_u]] + off_v[only_u] - off_u[only_u]))
    only_v = (vv >= 0) & (vu < 0)
    rows.append(vv[only_v])
    cols.append(vv[only_v])
    vals.append(weight[only_v])
    np.add.at(b, vv[only_v], weight[only_v] * (pos[node_u[only_v]] + off_u[only_v] - off_v[only_v]))

    matrix = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    ).tocsr()
    diag = matrix.diagonal()
    anchor = _ANCHOR * (float(diag[diag > 0].mean()) if np.any(diag > 0) else 1.0)
    matrix = matrix + sparse.identity(size, format="csr") * anchor
    b += anchor * 0.5

    x0 = np.concatenate([coords[cells, axis], np.full(stars, 0.5)])
    solution, info = cg(matrix, b, x0=x0, maxiter=10 * size + 100)
    if info != 0:
        logging.warning("[ip] conjugate gradient stopped early on axis %d (info=%d)", axis, info)
    return solution[: len(cells)]


def initial_placement(
    netlist: Netlist,
    region: Region3D,
    placement: Placement,
    seed: int = 0,
) -> Placement:
    """Minimize quadratic wirelength per axis; fixed objects anchor the system."""
    cells = np.flatnonzero(netlist.movable & (netlist.kind != CellKind.FILLER))
    if len(cells) == 0:
        return placement
    variable = np.zeros(netlist.num_cells, dtype=bool)
    variable[cells] = True
    terms = _net_terms(netlist, variable)
    anchored = bool(np.any(~variable[netlist.pin_cell[terms[0]]])) or bool(
        np.any((terms[1] >= 0) & ~variable[netlist.pin_cell[np.maximum(terms[1], 0)]])
    )
    coords = placement.coords.copy()
    if not anchored:
        rng = np.random.default_rng(seed)
        coords[cells] = 0.5 + rng.uniform(-_JITTER / 2, _JITTER / 2, size=(len(cells), 3))
        if region.tiers == 1:
            coords[cells, 2] = 0.5
        logging.info("[ip] no fixed anchors; %d cells jittered around the center", len(cells))
    else:
        offsets = (netlist.pin_dx, netlist.pin_dy, np.zeros(netlist.num_pins))
        axes = (0, 1, 2) if region.tiers > 1 else (0, 1)
        for axis in axes:
            coords[cells, axis] = _solve_axis(netlist, coords, cells, terms, offsets[axis], axis)
    coords[cells] = clamp_to_region(coords[cells], half_extents(netlist, region)[cells])
    result = placement.with_coords(coords)
    logging.info("[ip] %d cells, %d terms, hpwl %.6g", len(cells), len(terms[0]), hpwl(result, netlist, region.beta))
    return result


# --- Fillers and tiers ---

def _blocking_volume(netlist: Netlist, region: Region3D, placement: Placement, frozen: np.ndarray) -> np.ndarray:
    """Per-cell volume of objects that take space away from movable cells."""
    vol = netlist.volume(region.tier_depth)
    charged = np.zeros(netlist.num_cells, dtype=bool)
    charged[charged_cells(netlist, region, placement.coords)] = True
    blocking = charged & ((netlist.kind == CellKind.FIXED) | frozen) & (netlist.kind != CellKind.FILLER)
    return np.where(blocking, vol, 0.0)


def filler_count(movable_volume: float, placeable_volume: float, rho_t: float, filler_volume: float) -> int:
    """floor((rho_t * placeable - movable) / filler volume), never negative."""
    if filler_volume <= 0:
        return 0
    return max(int(math.floor((rho_t * placeable_volume - movable_volume) / filler_volume + 1e-9)), 0)


def insert_fillers(
    netlist: Netlist,
    region: Region3D,
    placement: Placement,
    rho_t: Optional[float] = None,
    seed: int = 0,
    frozen: Optional[np.ndarray] = None,
    per_tier: bool = False,
    filler_dims: Optional[Tuple[float, float]] = None,
) -> Tuple[Netlist, Placement]:
    """Top up fillers so movable volume reaches rho_t of the placeable volume.

    Existing fillers keep their positions; surplus ones are dropped. With per_tier the
    count is balanced on each tier and new fillers land on that tier.
    """
    rho_t = region.rho_t if rho_t is None else rho_t
    frozen = np.zeros(netlist.num_cells, dtype=bool) if frozen is None else frozen
    width, height = filler_dims or average_stdcell_dims(netlist)
    if width <= 0 or height <= 0:
        return netlist, placement
    depth = region.tier_depth
    filler_volume = width * height * depth
    vol = netlist.volume(depth)
    real = netlist.movable & ~frozen & (netlist.kind != CellKind.FILLER)
    blocking = _blocking_volume(netlist, region, placement, frozen)
    is_filler = netlist.kind == CellKind.FILLER
    rng = np.random.default_rng(seed)

    base, keep = netlist.without_fillers()
    filler_idx = np.flatnonzero(is_filler)
    kept: List[np.ndarray] = []
    kept_tiers: List[np.ndarray] = []
    new_coords: List[np.ndarray] = []
    new_tiers: List[np.ndarray] = []

    def _spawn(count: int, tier: Optional[int]) -> None:
        xy = np.stack(
            [rng.uniform(width / 2, 1 - width / 2, count), rng.uniform(height / 2, 1 - height / 2, count)], axis=1
        )
        if tier is None:
            z = rng.uniform(depth / 2, 1 - depth / 2, count) if region.tiers > 1 else np.full(count, 0.5)
        else:
            z = np.full(count, region.tier_center(tier))
        new_coords.append(np.column_stack([xy, z]))
        new_tiers.append(np.full(count, -1 if tier is None else tier, dtype=np.int64))

    if per_tier:
        if placement.tier_of is None:
            raise ValueError("per-tier fillers need a tier assignment")
        tiers = placement.tier_of
        for t in range(region.tiers):
            on = tiers == t
            target = filler_count(
                float(vol[real & on].sum()), depth - float(blocking[on].sum()), rho_t, filler_volume
            )
            existing = filler_idx[tiers[filler_idx] == t]
            kept.append(existing[:target])
            kept_tiers.append(np.full(min(len(existing), target), t, dtype=np.int64))
            if target > len(existing):
                _spawn(target - len(existing), t)
    else:
        target = filler_count(float(vol[real].sum()), 1.0 - float(blocking.sum()), rho_t, filler_volume)
        kept.append(filler_idx[:target])
        if placement.tier_of is not None:
            kept_tiers.append(placement.tier_of[filler_idx[:target]])
        if target > len(filler_idx):
            _spawn(target - len(filler_idx), None)

    kept_idx = np.concatenate(kept) if kept else np.zeros(0, dtype=np.int64)
    coords_parts = [placement.coords[keep], placement.coords[kept_idx]] + new_coords
    coords = np.concatenate(coords_parts, axis=0) if coords_parts else placement.coords
    count = len(kept_idx) + sum(len(c) for c in new_coords)
    out = base.with_fillers(count, width, height)

    tier_of = None
    if placement.tier_of is not None:
        spawned = [np.where(t < 0, np.clip(np.ceil(c[:, 2] / depth).astype(np.int64) - 1, 0, region.tiers - 1), t)
                   for t, c in zip(new_tiers, new_coords)]
        parts = [placement.tier_of[keep]] + (kept_tiers if kept_tiers else [np.zeros(0, dtype=np.int64)]) + spawned
        tier_of = np.concatenate(parts)
    logging.info("[flow] fillers: %d kept, %d new (%.4g x %.4g)", len(kept_idx), count - len(kept_idx), width, height)
    return out, Placement(coords=coords, tier_of=tier_of)


def assign_tiers(placement: Placement, region: Region3D, index: Optional[np.ndarray] = None) -> Placement:
    """Snap z to the closest tier center; boundary ties go to the lower tier."""
    coords = placement.coords.copy()
    n = len(coords)
    tier_of = np.zeros(n, dtype=np.int64) if placement.tier_of is None else placement.tier_of.copy()
    index = np.arange(n) if index is None else np.asarray(index, dtype=np.int64)
    z = coords[index, 2] / region.tier_depth
    tiers = np.clip(np.ceil(z).astype(np.int64) - 1, 0, region.tiers - 1)
    tier_of[index] = tiers
    coords[index, 2] = region.tier_center(tiers)
    return Placement(coords=coords, tier_of=tier_of)


def _spill(
    cells: np.ndarray, tier_of: np.ndarray, z: np.ndarray, area: np.ndarray, load: np.ndarray,
    cap: np.ndarray, source: int, target: int,
) -> int:
    """Move the cells of source nearest to target until source fits its capacity."""
    excess = load[source] - cap[source]
    if excess <= 0:
        return 0
    on = cells[tier_of[cells] == source]
    if len(on) == 0:
        return 0
    rank = -z[on] if target > source else z[on]
    order = on[np.argsort(rank, kind="stable")]
    count = min(int(np.searchsorted(np.cumsum(area[order]), excess)) + 1, len(order))
    moved = order[:count]
    tier_of[moved] = target
    shifted = float(area[moved].sum())
    load[source] -= shifted
    load[target] += shifted
    return count


def balance_tiers(
    placement: Placement,
    netlist: Netlist,
    region: Region3D,
    z: np.ndarray,
    index: Optional[np.ndarray] = None,
    balance: float = 1.10,
) -> Placement:
    """Spill standard cells off tiers whose row area is overused, ranked by continuous z.

    A tier may hold ``balance`` times the average row utilization of its free row area.
    Excess moves up from the highest cells first; whatever the top tier cannot hold then
    moves down from its lowest cells.
    """
    if placement.tier_of is None:
        raise StateError("tier balancing needs a tier assignment")
    if region.tiers == 1:
        return placement
    index = np.arange(netlist.num_cells) if index is None else np.asarray(index, dtype=np.int64)
    cells = index[netlist.kind[index] == CellKind.STDCELL]
    if len(cells) == 0:
        return placement
    tier_of = placement.tier_of.copy()
    area = netlist.area
    free = np.array([free_row_area(placement, netlist, region, t) for t in range(region.tiers)])
    load = np.bincount(tier_of[cells], weights=area[cells], minlength=region.tiers).astype(float)
    if free.sum() <= 0:
        return placement
    util = float(load.sum() / free.sum())
    cap = free * max(util, min(1.0, util * balance))

    moved = 0
    for t in range(region.tiers - 1):
        moved += _spill(cells, tier_of, z, area, load, cap, t, t + 1)
    for t in range(region.tiers - 1, 0, -1):
        moved += _spill(cells, tier_of, z, area, load, cap, t, t - 1)
    if moved == 0:
        return placement
    coords = placement.coords.copy()
    changed = np.flatnonzero(tier_of != placement.tier_of)
    coords[changed, 2] = region.tier_center(tier_of[changed])
    logging.info(
        "[flow] tier balance moved %d cells; row utilization %s",
        moved, " ".join(f"{u:.3f}" for u in load / np.maximum(free, 1e-12)),
    )
    return Placement(coords=coords, tier_of=tier_of)


def assign_balanced_tiers(
    placement: Placement,
    netlist: Netlist,
    region: Region3D,
    index: Optional[np.ndarray] = None,
    balance: float = 1.10,
) -> Placement:
    """Nearest-tier assignment followed by capacity balancing of the standard cells."""
    z = placement.coords[:, 2].copy()
    assigned = assign_tiers(placement, region, index=index)
    return balance_tiers(assigned, netlist, region, z, index=index, balance=balance)


# --- Global placement stages ---

def _reference_cells(netlist: Netlist) -> np.ndarray:
    for kinds in ((CellKind.STDCELL,), (CellKind.MACRO,), (CellKind.FILLER,)):
        mask = netlist.is_kind(*kinds)
        if np.any(mask):
            return mask
    return np.zeros(netlist.num_cells, dtype=bool)


def grid_3d(netlist: Netlist, region: Region3D, config: FlowConfig) -> BinGridSpec:
    if config.grid_3d is not None:
        return BinGridSpec.cubic(config.grid_3d)
    ref = _reference_cells(netlist)
    if not np.any(ref):
        return BinGridSpec.cubic(8)
    avg = float(netlist.volume(region.tier_depth)[ref].mean())
    return size_bin_grid(region, avg, region.rho_t, config.bin_k, m_max=config.grid_max_3d)


def grid_2d(netlist: Netlist, region: Region3D, config: FlowConfig) -> BinGridSpec:
    if config.grid_2d is not None:
        return BinGridSpec(config.grid_2d, config.grid_2d, region.tiers, layered=True)
    ref = _reference_cells(netlist)
    if not np.any(ref):
        return BinGridSpec(8, 8, region.tiers, layered=True)
    avg = float(netlist.area[ref].mean())
    return size_bin_grid_2d(region, avg, region.rho_t, 1.0, m_max=config.grid_max_2d)


def _mobile(netlist: Netlist, kinds: Sequence[CellKind]) -> np.ndarray:
    return np.flatnonzero(netlist.is_kind(*kinds))


def global_place_3d(
    netlist: Netlist,
    region: Region3D,
    placement: Placement,
    config: FlowConfig,
    mobile: Optional[np.ndarray] = None,
    grid: Optional[BinGridSpec] = None,
    label: str = "gp3d",
    use_wirelength: Optional[bool] = None,
) -> GlobalPlaceResult:
    """Spread in x, y and z with beta-weighted WA wirelength plus the field energy."""
    if mobile is None:
        mobile = _mobile(netlist, (CellKind.STDCELL, CellKind.MACRO, CellKind.FILLER))
    grid = grid or grid_3d(netlist, region, config)
    if use_wirelength is None:
        use_wirelength = not config.density_only
    problem = GlobalPlaceProblem(
        netlist=netlist,
        region=region,
        grid=grid,
        mobile=mobile,
        axes=(0, 1, 2),
        tau_stop=config.tau_stop_3d,
        max_iters=config.optimizer.max_iters_3d,
        label=label,
        use_wirelength=use_wirelength,
        sampling=config.field_sampling,
        workers=config.threads,
    )
    logging.info("[%s] grid %s, %d mobile objects", label, grid.shape, len(mobile))
    return GlobalPlacer(problem, config.optimizer).run(placement.with_tiers(None))


def global_place_2d_multitier(
    netlist: Netlist,
    region: Region3D,
    placement: Placement,
    config: FlowConfig,
    mobile: Optional[np.ndarray] = None,
    grid: Optional[BinGridSpec] = None,
    label: str = "gp2d",
) -> GlobalPlaceResult:
    """Planar placement of all tiers at once on a layered grid; z and tiers stay frozen."""
    if placement.tier_of is None:
        raise ValueError("planar multi-tier placement needs a tier assignment")
    if mobile is None:
        mobile = _mobile(netlist, (CellKind.STDCELL, CellKind.MACRO, CellKind.FILLER))
    grid = grid or grid_2d(netlist, region, config)
    problem = GlobalPlaceProblem(
        netlist=netlist,
        region=region,
        grid=grid,
        mobile=mobile,
        axes=(0, 1),
        tau_stop=config.tau_stop_2d,
        max_iters=config.optimizer.max_iters_2d,
        label=label,
        use_wirelength=True,
        sampling=config.field_sampling,
        workers=config.threads,
    )
    logging.info("[%s] grid %s, %d mobile objects", label, grid.shape, len(mobile))
    return GlobalPlacer(problem, config.optimizer).run(placement)


def place_stdcells(
    netlist: Netlist,
    region: Region3D,
    placement: Placement,
    config: FlowConfig,
) -> Tuple[Netlist, Placement, List[GlobalPlaceResult]]:
    """Cell-only GP around frozen macros: 3D, tier re-assignment, then per-tier 2D."""
    results: List[GlobalPlaceResult] = []
    kinds = (CellKind.STDCELL, CellKind.FILLER)
    mobile = _mobile(netlist, kinds)
    frozen = netlist.kind == CellKind.MACRO
    first = global_place_3d(netlist, region, placement, config, mobile=mobile, label="cgp3d")
    results.append(first)
    placement = assign_balanced_tiers(
        first.placement.with_tiers(placement.tier_of), netlist, region, index=mobile, balance=config.tier_balance
    )
    if config.fillers.enabled:
        netlist, placement = insert_fillers(
            netlist, region, placement, seed=config.seed + 3, frozen=frozen, per_tier=True
        )
    mobile = _mobile(netlist, kinds)
    second = global_place_2d_multitier(netlist, region, placement, config, mobile=mobile, label="cgp2d")
    results.append(second)
    return netlist, second.placement, results


# --- Orchestration ---

@dataclass
class FlowResult:
    netlist: Netlist
    placement: Placement
    reports: List[StageReport] = field(default_factory=list)
    history: List[IterationRecord] = field(default_factory=list)
    stage_times: Dict[str, float] = field(default_factory=dict)
    region: Optional[Region3D] = None


@contextmanager
def _stage(name: str, times: Dict[str, float]) -> Iterator[None]:
    start = time.perf_counter()
    logging.info("[flow] stage %s started", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        logging.error("[flow] stage %s failed: %s", name, exc)
        raise StageError(name, str(exc)) from exc
    finally:
        times[name] = time.perf_counter() - start


def flow_region(instance: Instance3D, config: FlowConfig) -> Region3D:
    """Instance region with the configured target density and VI weight."""
    region = instance.region
    beta_z = config.vi_weight
    if beta_z is None:
        beta_z = compute_vi_weight(region.tiers, max(len(region.rows), 1), config.c_vi, config.c_row)
    return region.with_beta_z(beta_z).with_rho(config.target_density)


def _snapshot(
    out_dir: Optional[Path], stage: str, netlist: Netlist, region: Region3D, placement: Placement, grid: BinGridSpec
) -> None:
    if out_dir is None:
        return
    out_dir = Path(out_dir)
    write_placement_3d(placement, netlist, region, out_dir / f"{stage}.pl")
    density = splat_density(placement, netlist, region, grid)
    write_heatmaps(density, solve_field(remove_mean(density)), out_dir / stage, prefix="")


def run_flow(instance: Instance3D, config: FlowConfig, snapshot_dir: Optional[Path] = None) -> FlowResult:
    """Run every stage in order; the returned placement indexes the filler-free netlist."""
    region = flow_region(instance, config)
    netlist = instance.netlist
    placement = instance.placement
    result = FlowResult(netlist=netlist, placement=placement, region=region)
    times = result.stage_times
    grid3 = grid_3d(netlist, region, config)
    logging.info(
        "[flow] %s: %d cells, %d nets, %d tiers, beta_z %.4g, grid %s",
        instance.name, netlist.num_cells, netlist.num_nets, region.tiers, region.beta[2], grid3.shape,
    )

    def report(stage: str, nl: Netlist, pl: Placement, grid: BinGridSpec, iterations: int = 0) -> None:
        om = macro_overlap(pl, nl, region) if pl.tier_of is not None else 0.0
        entry = StageReport(
            stage=stage,
            hpwl=hpwl(pl, nl, region.beta),
            vi=vi_count(pl, nl) if pl.tier_of is not None else None,
            tau=overflow(pl, nl, region, grid),
            macro_overlap=om,
            wall_time=times.get(stage, 0.0),
            iterations=iterations,
        )
        result.reports.append(entry)
        logging.info(
            "[flow] %s: hpwl %.6g vi %s tau %.4f overlap %.4g time %.2fs",
            stage, entry.hpwl, entry.vi, entry.tau, entry.macro_overlap, entry.wall_time,
        )
        _snapshot(snapshot_dir, stage, nl, region, pl, grid)

    def absorb(gp: GlobalPlaceResult) -> None:
        result.history.extend(gp.history)

    with _stage("ip", times):
        if config.density_only:
            movable = netlist.movable
            coords = placement.coords.copy()
            coords[movable, 2] = region.tier_center(0)
            placement = placement.with_coords(coords)
        else:
            placement = initial_placement(netlist, region, placement, seed=config.seed)
    report("ip", netlist, placement, grid3)

    with _stage("gp3d", times):
        if config.fillers.enabled:
            netlist, placement = insert_fillers(netlist, region, placement, seed=config.seed + 1)
        gp = global_place_3d(netlist, region, placement, config, grid=grid3)
        absorb(gp)
        placement = gp.placement
    report("gp3d", netlist, placement, grid3, gp.iterations)

    with _stage("tiers", times):
        placement = assign_balanced_tiers(placement, netlist, region, balance=config.tier_balance)
    report("tiers", netlist, placement, grid3)

    grid2 = grid_2d(netlist, region, config)
    if config.stages.global_2d:
        with _stage("gp2d", times):
            if config.fillers.enabled:
                netlist, placement = insert_fillers(netlist, region, placement, seed=config.seed + 2, per_tier=True)
            gp = global_place_2d_multitier(netlist, region, placement, config, grid=grid2)
            absorb(gp)
            placement = gp.placement
        report("gp2d", netlist, placement, grid2, gp.iterations)

    with _stage("mlg", times):
        placement = legalize_macros_sa(placement, netlist, region, config.annealing, seed=config.seed)
    report("mlg", netlist, placement, grid2)

    if config.stages.stdcell_gp:
        with _stage("cgp", times):
            netlist, placement, gps = place_stdcells(netlist, region, placement, config)
            for gp in gps:
                absorb(gp)
        report("cgp", netlist, placement, grid2, sum(gp.iterations for gp in gps))

    with _stage("lgdp", times):
        base, _ = netlist.without_fillers()
        placement = legalize_and_detail(placement, netlist, region, refine=config.stages.detail)
        netlist = base
    report("lgdp", netlist, placement, grid2)

    result.netlist = netlist
    result.placement = placement
    return result
