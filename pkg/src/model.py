"""Core placement types: netlist, normalized 3D region, placement and bin grids."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import IntEnum
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np


class InvalidRegionError(ValueError):
    """Raised when a placement region has a nonpositive extent or tier count."""


class InvalidInputError(ValueError):
    """Raised when netlist data or model parameters are malformed."""


class StateError(RuntimeError):
    """Raised when an operation is called on a placement in the wrong state."""


class CellKind(IntEnum):
    STDCELL = 0
    MACRO = 1
    FILLER = 2
    FIXED = 3
    IO = 4


MOVABLE_KINDS = (CellKind.STDCELL, CellKind.MACRO, CellKind.FILLER)

# tolerance for pin offsets sitting exactly on a cell edge
_PIN_SLACK = 1e-9


@dataclass(frozen=True)
class Netlist:
    """Cells and nets stored as flat arrays; pins are grouped per net (CSR layout)."""

    names: Tuple[str, ...]
    width: np.ndarray
    height: np.ndarray
    kind: np.ndarray
    pin_cell: np.ndarray
    pin_dx: np.ndarray
    pin_dy: np.ndarray
    net_start: np.ndarray
    net_weight: np.ndarray
    net_names: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        n = len(self.names)
        for attr in ("width", "height", "kind"):
            if len(getattr(self, attr)) != n:
                raise InvalidInputError(f"{attr} has {len(getattr(self, attr))} entries for {n} cells")
        if len(self.pin_dx) != len(self.pin_cell) or len(self.pin_dy) != len(self.pin_cell):
            raise InvalidInputError("pin arrays differ in length")
        if len(self.net_start) != len(self.net_weight) + 1:
            raise InvalidInputError("net_start must have one entry more than net_weight")
        if self.net_start[0] != 0 or self.net_start[-1] != len(self.pin_cell):
            raise InvalidInputError("net_start does not cover the pin array")
        if np.any(np.diff(self.net_start) < 1):
            raise InvalidInputError("every net needs at least one pin")
        if np.any(self.net_weight < 0):
            raise InvalidInputError("net weights must be nonnegative")
        sized = self.kind != CellKind.IO
        if np.any(self.width[sized] <= 0) or np.any(self.height[sized] <= 0):
            bad = int(np.flatnonzero(sized & ((self.width <= 0) | (self.height <= 0)))[0])
            raise InvalidInputError(f"cell {self.names[bad]} has nonpositive dimensions")
        if len(self.pin_cell):
            if self.pin_cell.min() < 0 or self.pin_cell.max() >= n:
                raise InvalidInputError("pin references an unknown cell")
            if np.any(self.kind[self.pin_cell] == CellKind.FILLER):
                raise InvalidInputError("filler cells cannot carry pins")
            half_w = self.width[self.pin_cell] / 2 + _PIN_SLACK * np.maximum(1.0, self.width[self.pin_cell])
            half_h = self.height[self.pin_cell] / 2 + _PIN_SLACK * np.maximum(1.0, self.height[self.pin_cell])
            if np.any(np.abs(self.pin_dx) > half_w) or np.any(np.abs(self.pin_dy) > half_h):
                raise InvalidInputError("pin offset lies outside its cell")

    @classmethod
    def build(
        cls,
        cells: Sequence[Tuple[str, float, float, CellKind]],
        nets: Sequence[Tuple[str, float, Sequence[Tuple[str, float, float]]]],
    ) -> "Netlist":
        """Build from (name, w, h, kind) cells and (name, weight, [(cell, dx, dy)]) nets."""
        index = {name: i for i, (name, *_rest) in enumerate(cells)}
        pin_cell: List[int] = []
        pin_dx: List[float] = []
        pin_dy: List[float] = []
        starts = [0]
        for net_name, _weight, pins in nets:
            for cell_name, dx, dy in pins:
                if cell_name not in index:
                    raise InvalidInputError(f"net {net_name} references unknown cell {cell_name}")
                pin_cell.append(index[cell_name])
                pin_dx.append(dx)
                pin_dy.append(dy)
            starts.append(len(pin_cell))
        return cls(
            names=tuple(c[0] for c in cells),
            width=np.asarray([c[1] for c in cells], dtype=float),
            height=np.asarray([c[2] for c in cells], dtype=float),
            kind=np.asarray([int(c[3]) for c in cells], dtype=np.int8),
            pin_cell=np.asarray(pin_cell, dtype=np.int64),
            pin_dx=np.asarray(pin_dx, dtype=float),
            pin_dy=np.asarray(pin_dy, dtype=float),
            net_start=np.asarray(starts, dtype=np.int64),
            net_weight=np.asarray([n[1] for n in nets], dtype=float),
            net_names=tuple(n[0] for n in nets),
        )

    @property
    def num_cells(self) -> int:
        return len(self.names)

    @property
    def num_nets(self) -> int:
        return len(self.net_weight)

    @property
    def num_pins(self) -> int:
        return len(self.pin_cell)

    @cached_property
    def pin_net(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_nets), np.diff(self.net_start))

    @cached_property
    def movable(self) -> np.ndarray:
        return np.isin(self.kind, [int(k) for k in MOVABLE_KINDS])

    @cached_property
    def degree(self) -> np.ndarray:
        """Number of nets incident to each cell."""
        if self.num_pins == 0:
            return np.zeros(self.num_cells)
        pairs = np.unique(np.stack([self.pin_net, self.pin_cell]), axis=1)
        return np.bincount(pairs[1], minlength=self.num_cells).astype(float)

    @cached_property
    def index(self) -> Dict[str, int]:
        return {name: i for i, name in enumerate(self.names)}

    @property
    def area(self) -> np.ndarray:
        return self.width * self.height

    def is_kind(self, *kinds: CellKind) -> np.ndarray:
        return np.isin(self.kind, [int(k) for k in kinds])

    def volume(self, tier_depth: float) -> np.ndarray:
        vol = self.width * self.height * tier_depth
        return np.where(self.kind == CellKind.IO, 0.0, vol)

    def scaled(self, fx: float, fy: float) -> "Netlist":
        """Divide every x dimension by fx and every y dimension by fy."""
        return replace(
            self,
            width=self.width / fx,
            height=self.height / fy,
            pin_dx=self.pin_dx / fx,
            pin_dy=self.pin_dy / fy,
        )

    def with_fillers(self, count: int, width: float, height: float, prefix: str = "filler") -> "Netlist":
        if count <= 0:
            return self
        names = self.names + tuple(f"{prefix}_{i}" for i in range(count))
        return replace(
            self,
            names=names,
            width=np.concatenate([self.width, np.full(count, width)]),
            height=np.concatenate([self.height, np.full(count, height)]),
            kind=np.concatenate([self.kind, np.full(count, int(CellKind.FILLER), dtype=np.int8)]),
        )

    def without_fillers(self) -> Tuple["Netlist", np.ndarray]:
        """Drop filler cells; returns the trimmed netlist and the indices kept."""
        keep = np.flatnonzero(self.kind != CellKind.FILLER)
        if len(keep) == self.num_cells:
            return self, keep
        # fillers carry no pins, and they are always appended after real cells
        return (
            replace(
                self,
                names=tuple(self.names[i] for i in keep),
                width=self.width[keep],
                height=self.height[keep],
                kind=self.kind[keep],
            ),
            keep,
        )


@dataclass(frozen=True)
class RowSpec:
    """A placement row in normalized coordinates (bottom edge y, x span)."""

    y: float
    height: float
    x_min: float
    x_max: float
    site_width: float = 0.0


@dataclass(frozen=True)
class Region3D:
    """Unit-cube placement domain split into equal-depth tiers."""

    tiers: int
    beta: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    rho_t: float = 1.0
    scale: Tuple[float, float] = (1.0, 1.0)
    origin: Tuple[float, float] = (0.0, 0.0)
    rows: Tuple[RowSpec, ...] = ()

    def __post_init__(self) -> None:
        if self.tiers < 1:
            raise InvalidRegionError(f"tier count must be >= 1, got {self.tiers}")
        if not 0 < self.rho_t <= 1:
            raise InvalidInputError(f"target density must be in (0, 1], got {self.rho_t}")
        if min(self.scale) <= 0:
            raise InvalidRegionError(f"scale factors must be positive, got {self.scale}")

    d_x = 1.0
    d_y = 1.0
    d_z = 1.0

    @property
    def tier_depth(self) -> float:
        return self.d_z / self.tiers

    @property
    def row_height(self) -> float:
        return self.rows[0].height if self.rows else 0.0

    def tier_center(self, tier) -> np.ndarray:
        return (np.asarray(tier, dtype=float) + 0.5) * self.tier_depth

    def with_beta_z(self, beta_z: float) -> "Region3D":
        return replace(self, beta=(self.beta[0], self.beta[1], float(beta_z)))

    def with_rho(self, rho_t: float) -> "Region3D":
        return replace(self, rho_t=rho_t)


def normalize_region(
    extents: Tuple[float, float],
    tiers: int,
    origin: Tuple[float, float] = (0.0, 0.0),
    rows: Iterable[Tuple[float, float, float, float]] = (),
    beta_z: float = 1.0,
    rho_t: float = 1.0,
) -> Region3D:
    """Map a physical (width, height) core with T tiers onto the unit cube.

    rows are physical (y, height, x_min, x_max[, site_width]) tuples.
    """
    width, height = extents
    if width <= 0 or height <= 0:
        raise InvalidRegionError(f"region extents must be positive, got {extents}")
    if tiers < 1:
        raise InvalidRegionError(f"tier count must be >= 1, got {tiers}")
    ox, oy = origin
    norm_rows = tuple(
        RowSpec(
            y=(row[0] - oy) / height,
            height=row[1] / height,
            x_min=(row[2] - ox) / width,
            x_max=(row[3] - ox) / width,
            site_width=(row[4] / width) if len(row) > 4 else 0.0,
        )
        for row in sorted(rows)
    )
    return Region3D(
        tiers=tiers,
        beta=(1.0, 1.0, beta_z),
        rho_t=rho_t,
        scale=(float(width), float(height)),
        origin=(float(ox), float(oy)),
        rows=norm_rows,
    )


def normalize_coords(region: Region3D, coords: np.ndarray) -> np.ndarray:
    """Physical (x, y, z-in-tier-units) centers to unit-cube coordinates."""
    coords = np.asarray(coords, dtype=float)
    out = np.empty_like(coords)
    out[..., 0] = (coords[..., 0] - region.origin[0]) / region.scale[0]
    out[..., 1] = (coords[..., 1] - region.origin[1]) / region.scale[1]
    out[..., 2] = coords[..., 2] / region.tiers
    return out


def denormalize(region: Region3D, coords: np.ndarray) -> np.ndarray:
    """Unit-cube coordinates back to physical units; z is expressed in tiers."""
    coords = np.asarray(coords, dtype=float)
    out = np.empty_like(coords)
    out[..., 0] = coords[..., 0] * region.scale[0] + region.origin[0]
    out[..., 1] = coords[..., 1] * region.scale[1] + region.origin[1]
    out[..., 2] = coords[..., 2] * region.tiers
    return out


@dataclass(frozen=True)
class Placement:
    """Center coordinates for every cell, plus tier indices once assigned."""

    coords: np.ndarray
    tier_of: Optional[np.ndarray] = None

    @property
    def x(self) -> np.ndarray:
        return self.coords[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.coords[:, 1]

    @property
    def z(self) -> np.ndarray:
        return self.coords[:, 2]

    @property
    def has_tiers(self) -> bool:
        return self.tier_of is not None

    def with_coords(self, coords: np.ndarray) -> "Placement":
        return replace(self, coords=np.asarray(coords, dtype=float))

    def with_tiers(self, tier_of: Optional[np.ndarray]) -> "Placement":
        return replace(self, tier_of=None if tier_of is None else np.asarray(tier_of, dtype=np.int64))

    def take(self, index: np.ndarray) -> "Placement":
        tiers = None if self.tier_of is None else self.tier_of[index]
        return Placement(coords=self.coords[index].copy(), tier_of=tiers)


def half_extents(netlist: Netlist, region: Region3D) -> np.ndarray:
    """Per-cell half sizes along x, y and z."""
    return np.stack(
        [netlist.width / 2, netlist.height / 2, np.full(netlist.num_cells, region.tier_depth / 2)],
        axis=1,
    )


def clamp_to_region(coords: np.ndarray, half: np.ndarray) -> np.ndarray:
    """Project centers so that every cell lies inside the unit cube."""
    lo = np.minimum(half, 0.5)
    return np.clip(coords, lo, 1.0 - lo)


@dataclass(frozen=True)
class BinGridSpec:
    """Uniform bin grid over the unit cube.

    A layered grid keeps one z-layer per tier; its spectral solve runs over x and y only.
    """

    m_x: int
    m_y: int
    m_z: int
    layered: bool = False

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (self.m_x, self.m_y, self.m_z)

    @property
    def bin_dims(self) -> Tuple[float, float, float]:
        return (1.0 / self.m_x, 1.0 / self.m_y, 1.0 / self.m_z)

    @property
    def num_bins(self) -> int:
        return self.m_x * self.m_y * self.m_z

    @property
    def bin_volume(self) -> float:
        dx, dy, dz = self.bin_dims
        return dx * dy * dz

    @property
    def spectral_axes(self) -> Tuple[int, ...]:
        return (0, 1) if self.layered else (0, 1, 2)

    @classmethod
    def cubic(cls, m: int) -> "BinGridSpec":
        return cls(m, m, m)


def _pow2_ceil(value: float) -> int:
    if value <= 1:
        return 1
    return 2 ** int(math.ceil(math.log2(value) - 1e-9))


def size_bin_grid(
    region: Region3D,
    avg_std_cell_volume: float,
    rho_t: float,
    k: float = 1.0,
    m_min: int = 8,
    m_max: int = 256,
) -> BinGridSpec:
    """Cubic grid where every k average cells (at target density) share one bin."""
    if avg_std_cell_volume <= 0:
        raise InvalidInputError("average cell volume must be positive")
    if not 0 < rho_t <= 1:
        raise InvalidInputError(f"target density must be in (0, 1], got {rho_t}")
    volume = region.d_x * region.d_y * region.d_z
    bins = volume / (k * avg_std_cell_volume / rho_t)
    m = _pow2_ceil(bins ** (1.0 / 3.0))
    return BinGridSpec.cubic(int(min(max(m, m_min), m_max)))


def size_bin_grid_2d(
    region: Region3D,
    avg_std_cell_area: float,
    rho_t: float,
    k: float = 1.0,
    m_min: int = 8,
    m_max: int = 512,
) -> BinGridSpec:
    """Layered grid: m x m bins per tier, one layer per tier."""
    if avg_std_cell_area <= 0:
        raise InvalidInputError("average cell area must be positive")
    bins = region.d_x * region.d_y / (k * avg_std_cell_area / rho_t)
    m = int(min(max(_pow2_ceil(math.sqrt(bins)), m_min), m_max))
    return BinGridSpec(m, m, region.tiers, layered=True)


def compute_vi_weight(tiers: int, rows: int, c_vi: float = 30.0, c_row: float = 0.3) -> float:
    """Vertical-interconnect weight from VI and per-row wire capacitances (fF)."""
    if rows <= 0:
        raise InvalidInputError("row count must be positive")
    if tiers < 1 or c_vi <= 0 or c_row <= 0:
        raise InvalidInputError("tiers and capacitances must be positive")
    return tiers * c_vi / (rows * c_row)


def average_stdcell_dims(netlist: Netlist) -> Tuple[float, float]:
    std = netlist.kind == CellKind.STDCELL
    if not np.any(std):
        return 0.0, 0.0
    return float(netlist.width[std].mean()), float(netlist.height[std].mean())


__all__ = [
    "BinGridSpec",
    "CellKind",
    "InvalidInputError",
    "InvalidRegionError",
    "MOVABLE_KINDS",
    "Netlist",
    "Placement",
    "Region3D",
    "RowSpec",
    "StateError",
    "average_stdcell_dims",
    "clamp_to_region",
    "compute_vi_weight",
    "denormalize",
    "half_extents",
    "normalize_coords",
    "normalize_region",
    "size_bin_grid",
    "size_bin_grid_2d",
]
