"""Seeded mixed-size benchmark generator with locality-structured nets."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from src.bookshelf import (
    BookshelfBundle,
    Instance3D,
    Region2D,
    Row2D,
    Transform3DSpec,
    transform_2d_to_3d,
    write_bookshelf,
)
from src.model import CellKind, Netlist

# (degree range, probability)
_DEGREES = (((2, 2), 0.55), ((3, 3), 0.20), ((4, 4), 0.10), ((5, 8), 0.10), ((9, 16), 0.05))
_NEIGHBORS = 16


@dataclass(frozen=True)
class SyntheticDesign:
    name: str
    netlist: Netlist
    region: Region2D
    positions: np.ndarray

    def bundle(self) -> BookshelfBundle:
        return BookshelfBundle(Path(f"{self.name}.aux"), self.netlist, self.region, self.positions)

    def instance(self, tiers: int = 1, whitespace: float = 0.10, rho_t: float = 1.0, beta_z: float = 1.0) -> Instance3D:
        """Transform straight to a normalized 3D instance without touching the filesystem."""
        spec = Transform3DSpec(tiers=tiers, extra_whitespace=whitespace if tiers > 1 else 0.0)
        return transform_2d_to_3d(self.bundle(), spec, rho_t=rho_t, beta_z=beta_z)

    def write(self, out_dir: Path) -> Path:
        return write_bookshelf(out_dir, self.name, self.netlist, self.region, self.positions)


def _degree(rng: np.random.Generator) -> int:
    probs = np.array([p for _, p in _DEGREES])
    lo, hi = _DEGREES[int(rng.choice(len(_DEGREES), p=probs / probs.sum()))][0]
    return int(rng.integers(lo, hi + 1))


def _macro_dims(
    rng: np.random.Generator, count: int, total_area: float, row_height: float, site_width: float
) -> Tuple[np.ndarray, np.ndarray]:
    if count == 0:
        return np.zeros(0), np.zeros(0)
    per = total_area / count
    aspect = rng.uniform(0.6, 1.6, count)
    heights = np.maximum(np.round(np.sqrt(per * aspect) / row_height), 2) * row_height
    widths = np.maximum(np.round(per / heights / site_width), 1) * site_width
    return widths, heights


def make_synthetic(
    num_cells: int = 1000,
    num_macros: int = 0,
    seed: int = 0,
    utilization: float = 0.6,
    macro_area_fraction: float = 0.2,
    num_pads: Optional[int] = None,
    row_height: float = 12.0,
    site_width: float = 1.0,
    name: Optional[str] = None,
) -> SyntheticDesign:
    """Rows of unit sites, cells 2-10 sites wide, optional movable macros and boundary pads."""
    if num_cells < 1:
        raise ValueError("a synthetic design needs at least one cell")
    if not 0 < utilization < 1:
        raise ValueError(f"utilization must be in (0, 1), got {utilization}")
    rng = np.random.default_rng(seed)
    cell_w = rng.integers(2, 11, size=num_cells) * site_width
    cell_area = float(cell_w.sum() * row_height)
    macro_area = cell_area * macro_area_fraction / (1 - macro_area_fraction) if num_macros else 0.0
    macro_w, macro_h = _macro_dims(rng, num_macros, macro_area, row_height, site_width)

    core_area = (cell_area + float((macro_w * macro_h).sum())) / utilization
    n_rows = max(int(math.ceil(math.sqrt(core_area) / row_height)), 1)
    core_h = n_rows * row_height
    n_sites = max(int(math.ceil(core_area / core_h / site_width)), 1)
    core_w = n_sites * site_width
    if num_macros:
        cap_rows = max(math.floor(0.25 * n_rows), 2)
        macro_h = np.minimum(macro_h, cap_rows * row_height)
        macro_w = np.minimum(macro_w, max(math.floor(0.25 * n_sites), 1) * site_width)
    rows = tuple(Row2D(r * row_height, row_height, 0.0, n_sites, site_width) for r in range(n_rows))
    region = Region2D(0.0, 0.0, core_w, core_h, rows)

    pads = num_pads if num_pads is not None else max(4, int(2 * math.sqrt(num_cells)))
    t = (np.arange(pads) + 0.5) / pads * 2 * (core_w + core_h)
    pad_xy = np.empty((pads, 2))
    for k, s in enumerate(t):
        if s < core_w:
            pad_xy[k] = (s, -0.5)
        elif s < core_w + core_h:
            pad_xy[k] = (core_w + 0.5, s - core_w)
        elif s < 2 * core_w + core_h:
            pad_xy[k] = (2 * core_w + core_h - s, core_h + 0.5)
        else:
            pad_xy[k] = (-0.5, 2 * (core_w + core_h) - s)

    cells = [(f"o{i}", float(cell_w[i]), row_height, CellKind.STDCELL) for i in range(num_cells)]
    cells += [(f"m{i}", float(macro_w[i]), float(macro_h[i]), CellKind.MACRO) for i in range(num_macros)]
    cells += [(f"p{i}", 1.0, 1.0, CellKind.IO) for i in range(pads)]
    width = np.array([c[1] for c in cells])
    height = np.array([c[2] for c in cells])
    movable = num_cells + num_macros

    # intended locations give every net a spatial neighborhood
    points = np.concatenate(
        [rng.uniform((0, 0), (core_w, core_h), size=(movable, 2)), pad_xy], axis=0
    )
    tree = cKDTree(points / (core_w, core_h))
    k = min(_NEIGHBORS, len(points))
    _, near = tree.query(points / (core_w, core_h), k=k)
    near = np.atleast_2d(near)

    def _pin(c: int) -> Tuple[str, float, float]:
        if c < num_cells:
            return cells[c][0], float(rng.uniform(-0.45, 0.45) * width[c]), 0.0
        if c < movable:
            return cells[c][0], float(rng.uniform(-0.45, 0.45) * width[c]), float(rng.uniform(-0.45, 0.45) * height[c])
        return cells[c][0], 0.0, 0.0

    nets: List[Tuple[str, float, List[Tuple[str, float, float]]]] = []
    for e in range(int(1.2 * movable)):
        driver = int(rng.integers(movable))
        pool = [int(c) for c in near[driver] if c != driver]
        p = min(_degree(rng), len(pool) + 1)
        members = [driver] + [int(c) for c in rng.choice(pool, size=p - 1, replace=False)] if pool else [driver]
        nets.append((f"n{e}", 1.0, [_pin(c) for c in members]))
    for j in range(pads):
        cell = int(next((c for c in near[movable + j] if c < movable), 0))
        nets.append((f"n{len(nets)}", 1.0, [_pin(movable + j), _pin(cell)]))

    netlist = Netlist.build(cells, nets)
    positions = np.concatenate([np.tile((core_w / 2, core_h / 2), (movable, 1)), pad_xy], axis=0)
    name = name or f"synth{num_cells}_m{num_macros}_s{seed}"
    logging.info(
        "[synth] %s: %d cells, %d macros, %d pads, %d nets, %d rows x %d sites",
        name, num_cells, num_macros, pads, len(nets), n_rows, n_sites,
    )
    return SyntheticDesign(name=name, netlist=netlist, region=region, positions=positions)
