"""Electrostatic density model: charge splatting, spectral Poisson solve, energy and overflow.

Objects are charges (q = volume) on a uniform bin grid over the unit cube. The potential
satisfies a Poisson equation with Neumann boundaries, solved with cosine/sine transforms.
A layered grid holds one 2D problem per tier and solves over x and y only.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import fft as sfft

from src.model import BinGridSpec, CellKind, Netlist, Placement, Region3D, StateError

_BOUNDS_TOL = 1e-9
_DIMS = 3


@dataclass(frozen=True)
class _Block:
    """Objects sharing one per-axis bin span, stored as dense (objects, bins) arrays."""

    rows: np.ndarray
    idx: np.ndarray
    w: np.ndarray
    # (objects, axes, bins): d(weight)/d(center) per axis, None when not differentiable
    dw: Optional[np.ndarray] = None


@dataclass(frozen=True)
class Footprint:
    """Per-object bin weights (fractions of the object's charge per bin)."""

    num_bins: int
    count: int = 0
    blocks: Tuple[_Block, ...] = ()
    differentiable: bool = False

    def scatter(self, values: np.ndarray) -> np.ndarray:
        """Distribute per-object values over bins (flat array)."""
        out = np.zeros(self.num_bins)
        for b in self.blocks:
            weights = values[b.rows][:, None] * b.w
            out += np.bincount(b.idx.ravel(), weights=weights.ravel(), minlength=self.num_bins)
        return out

    def gather(self, grid_values: np.ndarray) -> np.ndarray:
        """Weighted average of a flat bin array over each object's footprint."""
        flat = grid_values.ravel()
        out = np.zeros(self.count)
        for b in self.blocks:
            out[b.rows] = (flat[b.idx] * b.w).sum(axis=1)
        return out

    def gather_gradient(self, grid_values: np.ndarray) -> np.ndarray:
        """Derivative of gather() with respect to each object's center, shape (count, 3)."""
        if not self.differentiable:
            raise StateError("footprint has no weight derivatives")
        flat = grid_values.ravel()
        out = np.zeros((self.count, _DIMS))
        for b in self.blocks:
            axes = b.dw.shape[1]
            out[b.rows, :axes] = np.einsum("kp,kap->ka", flat[b.idx], b.dw)
        return out


@dataclass(frozen=True)
class ChargeView:
    """Charges of a subset of cells together with their bin footprints."""

    index: np.ndarray
    q: np.ndarray
    footprint: Footprint
    sampling: Footprint

    @property
    def count(self) -> int:
        return len(self.index)


@dataclass(frozen=True)
class DensityMap:
    grid: BinGridSpec
    rho: np.ndarray
    mean_removed: bool = False

    def charge(self) -> np.ndarray:
        return self.rho * self.grid.bin_volume


@dataclass(frozen=True)
class FieldState:
    grid: BinGridSpec
    phi: np.ndarray
    e_x: np.ndarray
    e_y: np.ndarray
    e_z: np.ndarray
    coeffs: np.ndarray

    def component(self, axis: int) -> np.ndarray:
        return (self.e_x, self.e_y, self.e_z)[axis]

    def magnitude(self) -> np.ndarray:
        return np.sqrt(self.e_x**2 + self.e_y**2 + self.e_z**2)


@dataclass(frozen=True)
class FieldSample:
    """Potential and field felt by each object of a ChargeView.

    With overlap sampling e is the negative gradient of the sampled potential; with
    center sampling it is E read at the center bin.
    """

    phi: np.ndarray
    e: np.ndarray


def _first_bin(lo: np.ndarray, m: int) -> np.ndarray:
    return np.clip(np.floor(lo * m).astype(np.int64), 0, m - 1)


def _axis_weights(lo: np.ndarray, ext: np.ndarray, m: int, span: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bin indices, overlap fractions and their derivatives along one axis.

    Shifting a box moves overlap out of the bin holding its lower edge and into the
    bin holding its upper edge.
    """
    delta = 1.0 / m
    first = _first_bin(lo, m)
    idx = first[:, None] + np.arange(span)[None, :]
    left = np.maximum(lo[:, None], idx * delta)
    right = np.minimum((lo + ext)[:, None], (idx + 1) * delta)
    inside = idx < m
    w = np.where(inside, np.clip(right - left, 0.0, None) / ext[:, None], 0.0)
    top = np.floor((lo + ext) * m).astype(np.int64)
    dw = ((idx == top[:, None]).astype(float) - (idx == first[:, None])) / ext[:, None]
    dw = np.where(inside, dw, 0.0)
    return np.minimum(idx, m - 1), w, dw


def _expand(arrays: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Reshape per-axis (objects, span) arrays so they broadcast to (objects, s0, s1[, s2])."""
    out = []
    for a, arr in enumerate(arrays):
        shape = [arr.shape[0]] + [1] * len(arrays)
        shape[a + 1] = arr.shape[1]
        out.append(arr.reshape(shape))
    return out


def _product(arrays: Sequence[np.ndarray]) -> np.ndarray:
    result = arrays[0]
    for arr in arrays[1:]:
        result = result * arr
    return result


def _block(
    lo: np.ndarray,
    ext: np.ndarray,
    free: np.ndarray,
    rows: np.ndarray,
    spans: np.ndarray,
    grid: BinGridSpec,
    layer: Optional[np.ndarray],
    gradient: bool,
) -> _Block:
    shape = grid.shape
    axes = len(spans)
    parts = [_axis_weights(lo[rows, a], ext[rows, a], shape[a], int(spans[a])) for a in range(axes)]
    idx = _expand([p[0] for p in parts])
    w = _expand([p[1] for p in parts])
    strides = (shape[1] * shape[2], shape[2], 1)
    flat = sum(idx[a] * strides[a] for a in range(axes))
    if grid.layered:
        flat = flat + layer[rows][:, None, None]
    k = len(rows)
    weight = _product(w)
    flat = np.broadcast_to(flat, weight.shape)
    dw = None
    if gradient:
        d = _expand([p[2] * free[rows, a][:, None] for a, p in enumerate(parts)])
        dw = np.stack(
            [_product([d[b] if b == a else w[b] for b in range(axes)]).reshape(k, -1) for a in range(axes)],
            axis=1,
        )
    return _Block(rows=rows, idx=flat.reshape(k, -1), w=weight.reshape(k, -1), dw=dw)


def build_footprint(
    lo: np.ndarray,
    ext: np.ndarray,
    grid: BinGridSpec,
    inflate: bool = True,
    layer: Optional[np.ndarray] = None,
) -> Footprint:
    """Overlap weights of axis-aligned boxes (lower corners lo, extents ext) on the grid.

    With inflate, boxes thinner than a bin along an axis are widened to one bin around
    their center and pushed back inside the region, so their total charge is unchanged.
    Inflated footprints also carry weight derivatives; a box pinned against the region
    boundary has zero derivative along that axis. Objects are grouped by their bin span
    per axis, so each group is handled with dense array operations.
    """
    lo = np.asarray(lo, dtype=float)
    ext = np.asarray(ext, dtype=float)
    n = len(lo)
    shape = grid.shape
    axes = 2 if grid.layered else 3
    if n == 0:
        return Footprint(grid.num_bins, 0, (), inflate)
    hi = lo + ext
    outside = np.any(lo[:, :axes] < -_BOUNDS_TOL, axis=1) | np.any(hi[:, :axes] > 1.0 + _BOUNDS_TOL, axis=1)
    if np.any(outside):
        bad = np.flatnonzero(outside)
        raise StateError(f"{len(bad)} objects lie outside the placement region (first row {int(bad[0])})")
    if grid.layered and layer is None:
        raise StateError("a layered grid needs per-object tier indices")

    lo = lo.copy()
    ext = ext.copy()
    free = np.ones((n, axes), dtype=float)
    for a in range(axes):
        delta = 1.0 / shape[a]
        if inflate:
            center = lo[:, a] + ext[:, a] / 2
            ext[:, a] = np.maximum(ext[:, a], delta)
            raw = center - ext[:, a] / 2
            free[:, a] = (raw > 0.0) & (raw < 1.0 - ext[:, a])
            lo[:, a] = np.clip(raw, 0.0, 1.0 - ext[:, a])
        else:
            lo[:, a] = np.clip(lo[:, a], 0.0, 1.0)
            ext[:, a] = np.minimum(ext[:, a], 1.0 - lo[:, a])

    spans = np.ones((n, axes), dtype=np.int64)
    for a in range(axes):
        m = shape[a]
        first = _first_bin(lo[:, a], m)
        last = np.clip(np.ceil((lo[:, a] + ext[:, a]) * m).astype(np.int64) - 1, first, m - 1)
        spans[:, a] = last - first + 1

    keys, inverse = np.unique(spans, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    blocks = tuple(
        _block(lo, ext, free, np.flatnonzero(inverse == g), keys[g], grid, layer, inflate)
        for g in range(len(keys))
    )
    return Footprint(grid.num_bins, n, blocks, inflate)


def _center_footprint(center: np.ndarray, grid: BinGridSpec, layer: Optional[np.ndarray]) -> Footprint:
    n = len(center)
    shape = grid.shape
    ix = np.clip(np.floor(center[:, 0] * shape[0]).astype(np.int64), 0, shape[0] - 1)
    iy = np.clip(np.floor(center[:, 1] * shape[1]).astype(np.int64), 0, shape[1] - 1)
    if grid.layered:
        iz = np.asarray(layer, dtype=np.int64)
    else:
        iz = np.clip(np.floor(center[:, 2] * shape[2]).astype(np.int64), 0, shape[2] - 1)
    flat = (ix * shape[1] + iy) * shape[2] + iz
    block = _Block(rows=np.arange(n), idx=flat[:, None], w=np.ones((n, 1)))
    return Footprint(grid.num_bins, n, (block,) if n else (), False)


def object_boxes(
    coords: np.ndarray, netlist: Netlist, region: Region3D, index: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    ext = np.stack(
        [netlist.width[index], netlist.height[index], np.full(len(index), region.tier_depth)], axis=1
    )
    return coords[index] - ext / 2, ext


def charge_view(
    coords: np.ndarray,
    netlist: Netlist,
    region: Region3D,
    grid: BinGridSpec,
    index: np.ndarray,
    tier_of: Optional[np.ndarray] = None,
    sampling: str = "overlap",
) -> ChargeView:
    """Charges q = volume for the given cells, with inflated splat footprints."""
    index = np.asarray(index, dtype=np.int64)
    lo, ext = object_boxes(coords, netlist, region, index)
    layer = None if tier_of is None else tier_of[index]
    footprint = build_footprint(lo, ext, grid, inflate=True, layer=layer)
    if sampling == "center":
        sample_fp = _center_footprint(coords[index], grid, layer)
    else:
        sample_fp = footprint
    q = netlist.volume(region.tier_depth)[index]
    return ChargeView(index=index, q=q, footprint=footprint, sampling=sample_fp)


def charged_cells(netlist: Netlist, region: Region3D, coords: np.ndarray) -> np.ndarray:
    """Cells that carry charge: every movable cell plus fixed blocks inside the region."""
    vol = netlist.volume(region.tier_depth) > 0
    fixed = netlist.kind == CellKind.FIXED
    if np.any(fixed):
        half_w = netlist.width / 2
        half_h = netlist.height / 2
        inside = (
            (coords[:, 0] - half_w >= -_BOUNDS_TOL)
            & (coords[:, 0] + half_w <= 1 + _BOUNDS_TOL)
            & (coords[:, 1] - half_h >= -_BOUNDS_TOL)
            & (coords[:, 1] + half_h <= 1 + _BOUNDS_TOL)
        )
        fixed = fixed & inside
    return np.flatnonzero(vol & (netlist.movable | fixed))


def splat_view(view: ChargeView, grid: BinGridSpec) -> DensityMap:
    charge = view.footprint.scatter(view.q).reshape(grid.shape)
    return DensityMap(grid=grid, rho=charge / grid.bin_volume, mean_removed=False)


def splat_density(
    placement: Placement,
    netlist: Netlist,
    region: Region3D,
    grid: BinGridSpec,
    index: Optional[np.ndarray] = None,
) -> DensityMap:
    """Density of all charged cells (or the given subset) on the grid."""
    if index is None:
        index = charged_cells(netlist, region, placement.coords)
    view = charge_view(placement.coords, netlist, region, grid, index, tier_of=placement.tier_of)
    return splat_view(view, grid)


def remove_mean(density: DensityMap) -> DensityMap:
    axes = density.grid.spectral_axes
    rho = density.rho - density.rho.mean(axis=axes, keepdims=True)
    return DensityMap(grid=density.grid, rho=rho, mean_removed=True)


def _frequencies(grid: BinGridSpec) -> List[np.ndarray]:
    """Angular frequencies pi*j/d per axis, shaped for broadcasting."""
    freqs = []
    for a, m in enumerate(grid.shape):
        w = np.pi * np.arange(m) if a in grid.spectral_axes else np.zeros(m)
        shape = [1, 1, 1]
        shape[a] = m
        freqs.append(w.reshape(shape))
    return freqs


def _index_zero(a: int) -> Tuple:
    sl = [slice(None)] * 3
    sl[a] = 0
    return tuple(sl)


def _cos_synthesis(coef: np.ndarray, axes: Sequence[int], workers: int) -> np.ndarray:
    """f(n) = sum_k c_k cos(pi k (2n+1) / 2m) along every listed axis."""
    scaled = coef / 2 ** len(axes)
    for a in axes:
        scaled[_index_zero(a)] *= 2
    return sfft.dctn(scaled, type=3, axes=list(axes), workers=workers)


def _sin_synthesis(coef: np.ndarray, axis: int, workers: int) -> np.ndarray:
    """g(n) = sum_k c_k sin(pi k (2n+1) / 2m) along one axis (k = 1..m-1)."""
    shifted = np.zeros_like(coef)
    src = [slice(None)] * 3
    dst = [slice(None)] * 3
    src[axis] = slice(1, None)
    dst[axis] = slice(0, -1)
    shifted[tuple(dst)] = coef[tuple(src)] / 2
    return sfft.dst(shifted, type=3, axis=axis, workers=workers)


def solve_field(density: DensityMap, workers: int = 1) -> FieldState:
    """Potential and field of a mean-free density, sampled at bin centers."""
    if not density.mean_removed:
        raise StateError("density mean must be removed before the field solve")
    grid = density.grid
    axes = grid.spectral_axes
    coeffs = sfft.dctn(density.rho, type=2, axes=list(axes), workers=workers)
    for a in axes:
        coeffs = coeffs / grid.shape[a]
        coeffs[_index_zero(a)] /= 2

    w = _frequencies(grid)
    w2 = w[0] ** 2 + w[1] ** 2 + w[2] ** 2
    dc = w2 == 0
    phi_coef = np.where(dc, 0.0, coeffs / np.where(dc, 1.0, w2))

    phi = _cos_synthesis(phi_coef.copy(), axes, workers)
    fields = []
    for a in range(3):
        if a not in axes:
            fields.append(np.zeros(grid.shape))
            continue
        others = [b for b in axes if b != a]
        partial = _cos_synthesis((phi_coef * w[a]).copy(), others, workers) if others else phi_coef * w[a]
        fields.append(_sin_synthesis(partial, a, workers))
    return FieldState(grid=grid, phi=phi, e_x=fields[0], e_y=fields[1], e_z=fields[2], coeffs=coeffs)


def evaluate_series(field_state: FieldState, points: np.ndarray, quantity: str = "phi") -> np.ndarray:
    """Evaluate the continuous series for phi or a field component at arbitrary points.

    Only for spot checks on small grids; cost grows with points x bins.
    """
    grid = field_state.grid
    points = np.atleast_2d(np.asarray(points, dtype=float))
    w = [wa.ravel() for wa in _frequencies(grid)]
    w2 = w[0][:, None, None] ** 2 + w[1][None, :, None] ** 2 + w[2][None, None, :] ** 2
    dc = w2 == 0
    phi_coef = np.where(dc, 0.0, field_state.coeffs / np.where(dc, 1.0, w2))
    axis = {"phi": None, "e_x": 0, "e_y": 1, "e_z": 2}[quantity]
    coef = phi_coef if axis is None else phi_coef * w[axis].reshape([-1 if a == axis else 1 for a in range(3)])
    bases = []
    for a in range(3):
        if grid.layered and a == 2:
            idx = np.clip(np.floor(points[:, 2] * grid.shape[2]).astype(np.int64), 0, grid.shape[2] - 1)
            bases.append(np.eye(grid.shape[2])[idx])
            continue
        arg = np.outer(points[:, a], w[a])
        bases.append(np.sin(arg) if a == axis else np.cos(arg))
    return np.einsum("pj,pk,pl,jkl->p", bases[0], bases[1], bases[2], coef)


def sample_field(field_state: FieldState, view: ChargeView) -> FieldSample:
    fp = view.sampling
    phi = fp.gather(field_state.phi)
    if fp.differentiable:
        return FieldSample(phi=phi, e=-fp.gather_gradient(field_state.phi))
    e = np.stack([fp.gather(field_state.e_x), fp.gather(field_state.e_y), fp.gather(field_state.e_z)], axis=1)
    return FieldSample(phi=phi, e=e)


def energy(field_state: FieldState, view: ChargeView, sample: Optional[FieldSample] = None) -> float:
    """System potential energy U = sum_i q_i * phi_i."""
    sample = sample or sample_field(field_state, view)
    return float(view.q @ sample.phi)


def density_force(field_state: FieldState, view: ChargeView, sample: Optional[FieldSample] = None) -> np.ndarray:
    """Electric force q_i * E_i on each object of the view, shape (count, 3).

    The force points downhill in potential; the energy gradient is its negation.
    """
    sample = sample or sample_field(field_state, view)
    return view.q[:, None] * sample.e


def overflow_maps(
    placement: Placement,
    netlist: Netlist,
    region: Region3D,
    grid: BinGridSpec,
    mobile: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray, float]:
    """Exact (uninflated) movable-volume and whitespace maps plus the movable total."""
    coords = placement.coords
    vol = netlist.volume(region.tier_depth)
    if mobile is None:
        mobile = netlist.movable
    real = mobile & (netlist.kind != CellKind.FILLER) & (vol > 0)
    charged = np.zeros(netlist.num_cells, dtype=bool)
    charged[charged_cells(netlist, region, coords)] = True
    blocking = charged & ~mobile & (netlist.kind != CellKind.FILLER)

    layer = placement.tier_of if grid.layered else None

    def _volume_map(index: np.ndarray) -> np.ndarray:
        lo, ext = object_boxes(coords, netlist, region, index)
        fp = build_footprint(lo, ext, grid, inflate=False, layer=None if layer is None else layer[index])
        return fp.scatter(vol[index]).reshape(grid.shape)

    movable_map = _volume_map(np.flatnonzero(real))
    fixed_map = _volume_map(np.flatnonzero(blocking))
    whitespace = np.clip(grid.bin_volume - fixed_map, 0.0, None)
    return movable_map, whitespace, float(vol[real].sum())


def overflow(
    placement: Placement,
    netlist: Netlist,
    region: Region3D,
    grid: BinGridSpec,
    mobile: Optional[np.ndarray] = None,
) -> float:
    """Normalized excess of movable non-filler volume over rho_t times bin whitespace."""
    movable_map, whitespace, total = overflow_maps(placement, netlist, region, grid, mobile)
    if total <= 0:
        return 0.0
    excess = np.clip(movable_map - region.rho_t * whitespace, 0.0, None)
    return float(excess.sum() / total)


def write_heatmaps(density: DensityMap, field_state: Optional[FieldState], out_dir: Path, prefix: str = "") -> List[Path]:
    """Dump per-z-slice density and |E| matrices as text plus grayscale PNG panels."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    magnitude = field_state.magnitude() if field_state is not None else None
    for s in range(density.grid.m_z):
        dens_path = out_dir / f"{prefix}density_z{s}.txt"
        np.savetxt(dens_path, density.rho[:, :, s].T, fmt="%.10g")
        written.append(dens_path)
        fig, axes = plt.subplots(1, 2 if magnitude is not None else 1, figsize=(8, 4), squeeze=False)
        axes[0][0].imshow(density.rho[:, :, s].T, origin="lower", cmap="gray_r", extent=(0, 1, 0, 1))
        axes[0][0].set_title(f"density z{s}")
        if magnitude is not None:
            field_path = out_dir / f"{prefix}field_z{s}.txt"
            np.savetxt(field_path, magnitude[:, :, s].T, fmt="%.10g")
            written.append(field_path)
            axes[0][1].imshow(magnitude[:, :, s].T, origin="lower", cmap="gray_r", extent=(0, 1, 0, 1))
            m_x, m_y = density.grid.m_x, density.grid.m_y
            cx = (np.arange(m_x) + 0.5) / m_x
            cy = (np.arange(m_y) + 0.5) / m_y
            gx, gy = np.meshgrid(cx, cy, indexing="ij")
            axes[0][1].quiver(gx, gy, field_state.e_x[:, :, s], field_state.e_y[:, :, s], color="red")
            axes[0][1].set_title(f"|E| z{s}")
        png = out_dir / f"{prefix}slice_z{s}.png"
        fig.savefig(png, dpi=80)
        plt.close(fig)
        written.append(png)
    logging.info("[heatmap] wrote %d files to %s", len(written), out_dir)
    return written
