"""Bookshelf bundles: parsing, writing, 2D-to-3D transformation and tiered .pl files."""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from src.model import (
    CellKind,
    InvalidInputError,
    Netlist,
    Placement,
    Region3D,
    denormalize,
    normalize_region,
)

_EPS = 1e-9
_SUFFIXES = ("nodes", "nets", "wts", "pl", "scl")


class ParseError(ValueError):
    """Raised when a Bookshelf file is malformed; carries the file and line number."""

    def __init__(self, message: str, path: Optional[Path] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = f"{path}:{line}: " if path is not None and line is not None else ""
        super().__init__(f"{where}{message}")


class BundleIoError(OSError):
    """Raised when a bundle file is missing or unreadable."""


class FormatError(ValueError):
    """Raised when a placement file does not match the instance it is read against."""


class InfeasibleTransformError(ValueError):
    """Raised when a macro does not fit inside one tier of the transformed region."""

    def __init__(self, macro: str, required_whitespace: float, message: str):
        self.macro = macro
        self.required_whitespace = required_whitespace
        super().__init__(message)


@dataclass(frozen=True)
class Row2D:
    y: float
    height: float
    x_min: float
    num_sites: int
    site_width: float = 1.0

    @property
    def x_max(self) -> float:
        return self.x_min + self.num_sites * self.site_width


@dataclass(frozen=True)
class Region2D:
    xl: float
    yl: float
    xh: float
    yh: float
    rows: Tuple[Row2D, ...] = ()

    @property
    def width(self) -> float:
        return self.xh - self.xl

    @property
    def height(self) -> float:
        return self.yh - self.yl

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def row_height(self) -> float:
        if not self.rows:
            return 0.0
        return Counter(r.height for r in self.rows).most_common(1)[0][0]


@dataclass(frozen=True)
class BookshelfBundle:
    """A parsed bundle in the file's native units; positions are cell centers."""

    aux_path: Path
    netlist: Netlist
    region: Region2D
    positions: np.ndarray
    tiers: Optional[int] = None
    tier_of: Optional[np.ndarray] = None
    files: Dict[str, Path] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.aux_path.stem


@dataclass(frozen=True)
class Transform3DSpec:
    tiers: int
    extra_whitespace: float = 0.10
    preserve_aspect: bool = True

    def __post_init__(self) -> None:
        if self.tiers < 1:
            raise InvalidInputError(f"tiers must be >= 1, got {self.tiers}")
        if not 0 <= self.extra_whitespace < 1:
            raise InvalidInputError(f"extra whitespace must be in [0, 1), got {self.extra_whitespace}")


@dataclass(frozen=True)
class Instance3D:
    """A normalized 3D placement instance ready for the flow."""

    name: str
    netlist: Netlist
    region: Region3D
    placement: Placement

    @property
    def num_rows(self) -> int:
        return len(self.region.rows)


def _lines(path: Path) -> Iterator[Tuple[int, List[str]]]:
    """Yield (line number, tokens) for content lines, skipping headers and comments."""
    try:
        text = path.read_text()
    except OSError as exc:
        raise BundleIoError(f"cannot read {path}: {exc}") from exc
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("UCLA"):
            continue
        yield number, line.replace(":", " : ").split()


def _header_fields(path: Path) -> Dict[str, List[str]]:
    fields: Dict[str, List[str]] = {}
    try:
        text = path.read_text()
    except OSError as exc:
        raise BundleIoError(f"cannot read {path}: {exc}") from exc
    for raw in text.splitlines():
        stripped = raw.strip()
        if stripped.startswith("#") and ":" in stripped:
            key, value = stripped[1:].split(":", 1)
            fields[key.strip().lower()] = value.split()
    return fields


def _number(token: str, path: Path, line: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"expected a number, got {token!r}", path, line) from None


def _read_aux(aux_path: Path) -> Dict[str, Path]:
    if not aux_path.exists():
        raise BundleIoError(f"missing bundle file {aux_path}")
    files: Dict[str, Path] = {}
    for number, tokens in _lines(aux_path):
        for token in tokens:
            suffix = token.rsplit(".", 1)[-1]
            if suffix in _SUFFIXES and "." in token:
                files[suffix] = aux_path.parent / token
    for required in ("nodes", "nets", "pl"):
        if required not in files:
            raise ParseError(f"aux file lists no .{required} file", aux_path, 1)
        if not files[required].exists():
            raise BundleIoError(f"missing bundle file {files[required]}")
    return files


def _parse_nodes(path: Path) -> List[Tuple[str, float, float, str]]:
    nodes = []
    for number, tokens in _lines(path):
        if tokens[0] in ("NumNodes", "NumTerminals"):
            continue
        if len(tokens) < 3:
            raise ParseError(f"node line needs a name, width and height: {' '.join(tokens)}", path, number)
        width = _number(tokens[1], path, number)
        height = _number(tokens[2], path, number)
        if width < 0 or height < 0:
            raise ParseError(f"node {tokens[0]} has negative dimensions", path, number)
        tag = tokens[3] if len(tokens) > 3 else ""
        nodes.append((tokens[0], width, height, tag))
    return nodes


def _parse_nets(path: Path, index: Dict[str, int]):
    nets: List[Tuple[str, List[Tuple[int, float, float]]]] = []
    current: Optional[List[Tuple[int, float, float]]] = None
    remaining = 0
    for number, tokens in _lines(path):
        if tokens[0] in ("NumNets", "NumPins"):
            continue
        if tokens[0] == "NetDegree":
            if remaining:
                raise ParseError(f"previous net is missing {remaining} pins", path, number)
            degree = int(_number(tokens[2], path, number))
            name = tokens[3] if len(tokens) > 3 else f"net{len(nets)}"
            current = []
            nets.append((name, current))
            remaining = degree
            continue
        if current is None or remaining == 0:
            raise ParseError(f"pin line outside a net: {' '.join(tokens)}", path, number)
        node = tokens[0]
        if node not in index:
            raise ParseError(f"net {nets[-1][0]} references undeclared node {node}", path, number)
        dx = dy = 0.0
        if ":" in tokens:
            colon = tokens.index(":")
            if len(tokens) >= colon + 3:
                dx = _number(tokens[colon + 1], path, number)
                dy = _number(tokens[colon + 2], path, number)
        current.append((index[node], dx, dy))
        remaining -= 1
    if remaining:
        raise ParseError(f"last net is missing {remaining} pins", path, None)
    return [(name, pins) for name, pins in nets if pins]


def _parse_weights(path: Optional[Path]) -> Dict[str, float]:
    if path is None or not path.exists():
        return {}
    weights = {}
    for number, tokens in _lines(path):
        if len(tokens) >= 2:
            weights[tokens[0]] = _number(tokens[1], path, number)
    return weights


def _parse_pl(path: Path, index: Dict[str, int]):
    """Lower-left corners, optional tier column and fixed flags per node."""
    corners: Dict[int, Tuple[float, float]] = {}
    tiers: Dict[int, int] = {}
    fixed: Dict[int, bool] = {}
    for number, tokens in _lines(path):
        name = tokens[0]
        if name not in index:
            raise ParseError(f"placement for undeclared node {name}", path, number)
        head = tokens[: tokens.index(":")] if ":" in tokens else tokens
        if len(head) < 3:
            raise ParseError(f"placement line needs x and y: {' '.join(tokens)}", path, number)
        i = index[name]
        corners[i] = (_number(head[1], path, number), _number(head[2], path, number))
        if len(head) >= 4:
            tiers[i] = int(_number(head[3], path, number))
        fixed[i] = any(t.startswith("/FIXED") for t in tokens)
    return corners, tiers, fixed


def _parse_scl(path: Optional[Path]) -> List[Row2D]:
    if path is None or not path.exists():
        return []
    rows: List[Row2D] = []
    block: Dict[str, float] = {}
    for number, tokens in _lines(path):
        key = tokens[0]
        if key == "CoreRow":
            block = {}
        elif key == "End":
            if "Coordinate" not in block or "Height" not in block:
                raise ParseError("row without Coordinate or Height", path, number)
            rows.append(
                Row2D(
                    y=block["Coordinate"],
                    height=block["Height"],
                    x_min=block.get("SubrowOrigin", 0.0),
                    num_sites=int(block.get("NumSites", 0)),
                    site_width=block.get("Sitespacing", block.get("Sitewidth", 1.0)),
                )
            )
        elif key in ("Coordinate", "Height", "Sitewidth", "Sitespacing"):
            block[key] = _number(tokens[2], path, number)
        elif key == "SubrowOrigin":
            block["SubrowOrigin"] = _number(tokens[2], path, number)
            if "NumSites" in tokens:
                block["NumSites"] = _number(tokens[tokens.index("NumSites") + 2], path, number)
    return rows


def parse_bookshelf(aux_path: Path) -> BookshelfBundle:
    """Parse an .aux bundle into a physical-unit netlist, region and positions."""
    aux_path = Path(aux_path)
    files = _read_aux(aux_path)
    nodes = _parse_nodes(files["nodes"])
    index = {name: i for i, (name, *_rest) in enumerate(nodes)}
    if len(index) != len(nodes):
        raise ParseError("duplicate node names", files["nodes"], None)
    nets = _parse_nets(files["nets"], index)
    weights = _parse_weights(files.get("wts"))
    corners, tier_cols, fixed_flags = _parse_pl(files["pl"], index)
    rows = _parse_scl(files.get("scl"))
    header = _header_fields(files["pl"])

    width = np.array([n[1] for n in nodes], dtype=float)
    height = np.array([n[2] for n in nodes], dtype=float)
    positions = np.zeros((len(nodes), 2))
    for i, (x, y) in corners.items():
        positions[i] = (x + width[i] / 2, y + height[i] / 2)

    if "region" in header:
        xl, yl, xh, yh = (float(v) for v in header["region"][:4])
        region = Region2D(xl, yl, xh, yh, tuple(rows))
    elif rows:
        region = Region2D(
            min(r.x_min for r in rows),
            min(r.y for r in rows),
            max(r.x_max for r in rows),
            max(r.y + r.height for r in rows),
            tuple(rows),
        )
    else:
        movable_extent = positions[[i for i, n in enumerate(nodes) if not n[3].startswith("terminal")]]
        if len(movable_extent) == 0:
            raise ParseError("bundle has neither rows nor movable nodes to infer a region", files["pl"], None)
        region = Region2D(0.0, 0.0, float(movable_extent[:, 0].max()) * 2, float(movable_extent[:, 1].max()) * 2)

    row_height = region.row_height
    movable_heights = [n[2] for n in nodes if not n[3].startswith("terminal")]
    if row_height <= 0 and movable_heights:
        row_height = min(movable_heights)

    kinds = []
    for i, (name, w, h, tag) in enumerate(nodes):
        if tag.startswith("terminal") or fixed_flags.get(i, False):
            inside = (
                w * h > 0
                and tag != "terminal_NI"
                and positions[i, 0] - w / 2 >= region.xl - _EPS
                and positions[i, 0] + w / 2 <= region.xh + _EPS
                and positions[i, 1] - h / 2 >= region.yl - _EPS
                and positions[i, 1] + h / 2 <= region.yh + _EPS
            )
            kinds.append(CellKind.FIXED if inside else CellKind.IO)
        elif w <= 0 or h <= 0:
            raise ParseError(f"movable node {name} has zero area", files["nodes"], None)
        elif h > row_height + _EPS:
            kinds.append(CellKind.MACRO)
        else:
            kinds.append(CellKind.STDCELL)

    clipped = 0
    pin_cell: List[int] = []
    pin_dx: List[float] = []
    pin_dy: List[float] = []
    starts = [0]
    for _name, pins in nets:
        for cell, dx, dy in pins:
            cdx = min(max(dx, -width[cell] / 2), width[cell] / 2)
            cdy = min(max(dy, -height[cell] / 2), height[cell] / 2)
            clipped += (cdx != dx) or (cdy != dy)
            pin_cell.append(cell)
            pin_dx.append(cdx)
            pin_dy.append(cdy)
        starts.append(len(pin_cell))
    if clipped:
        logging.warning("[io] clipped %d pin offsets to their cell outlines", clipped)

    netlist = Netlist(
        names=tuple(n[0] for n in nodes),
        width=width,
        height=height,
        kind=np.array([int(k) for k in kinds], dtype=np.int8),
        pin_cell=np.array(pin_cell, dtype=np.int64),
        pin_dx=np.array(pin_dx, dtype=float),
        pin_dy=np.array(pin_dy, dtype=float),
        net_start=np.array(starts, dtype=np.int64),
        net_weight=np.array([weights.get(name, 1.0) for name, _ in nets], dtype=float),
        net_names=tuple(name for name, _ in nets),
    )

    tiers = int(header["tiers"][0]) if "tiers" in header else None
    tier_of = None
    if tier_cols:
        tier_of = np.zeros(len(nodes), dtype=np.int64)
        for i, t in tier_cols.items():
            tier_of[i] = t
    logging.info(
        "[io] parsed %s: %d cells, %d nets, %d pins, %d rows",
        aux_path.name, netlist.num_cells, netlist.num_nets, netlist.num_pins, len(rows),
    )
    return BookshelfBundle(aux_path, netlist, region, positions, tiers, tier_of, files)


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def write_bookshelf(
    out_dir: Path,
    name: str,
    netlist: Netlist,
    region: Region2D,
    positions: np.ndarray,
    tiers: Optional[int] = None,
    tier_of: Optional[np.ndarray] = None,
) -> Path:
    """Write a bundle in physical units; a tier count adds the 3D header and tier column."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    terminal = netlist.is_kind(CellKind.FIXED, CellKind.IO)

    nodes = [
        "UCLA nodes 1.0",
        f"NumNodes : {int((netlist.kind != CellKind.FILLER).sum())}",
        f"NumTerminals : {int(terminal.sum())}",
    ]
    for i, cell in enumerate(netlist.names):
        if netlist.kind[i] == CellKind.FILLER:
            continue
        tag = "  terminal" if terminal[i] else ""
        nodes.append(f"{cell} {_fmt(netlist.width[i])} {_fmt(netlist.height[i])}{tag}")
    (out_dir / f"{name}.nodes").write_text("\n".join(nodes) + "\n")

    nets = ["UCLA nets 1.0", f"NumNets : {netlist.num_nets}", f"NumPins : {netlist.num_pins}"]
    for e in range(netlist.num_nets):
        lo, hi = netlist.net_start[e], netlist.net_start[e + 1]
        net_name = netlist.net_names[e] if netlist.net_names else f"net{e}"
        nets.append(f"NetDegree : {hi - lo} {net_name}")
        for p in range(lo, hi):
            cell = netlist.names[netlist.pin_cell[p]]
            nets.append(f"  {cell} B : {_fmt(netlist.pin_dx[p])} {_fmt(netlist.pin_dy[p])}")
    (out_dir / f"{name}.nets").write_text("\n".join(nets) + "\n")

    wts = ["UCLA wts 1.0"]
    for e in range(netlist.num_nets):
        net_name = netlist.net_names[e] if netlist.net_names else f"net{e}"
        wts.append(f"{net_name} {_fmt(netlist.net_weight[e])}")
    (out_dir / f"{name}.wts").write_text("\n".join(wts) + "\n")

    pl = ["UCLA pl 1.0"]
    if tiers is not None:
        pl.append(f"# tiers : {tiers}")
        pl.append(f"# region : {_fmt(region.xl)} {_fmt(region.yl)} {_fmt(region.xh)} {_fmt(region.yh)}")
    for i, cell in enumerate(netlist.names):
        if netlist.kind[i] == CellKind.FILLER:
            continue
        x = positions[i, 0] - netlist.width[i] / 2
        y = positions[i, 1] - netlist.height[i] / 2
        tier = f" {int(tier_of[i])}" if tiers is not None and tier_of is not None else ""
        flag = " /FIXED" if terminal[i] else ""
        pl.append(f"{cell} {_fmt(x)} {_fmt(y)}{tier} : N{flag}")
    (out_dir / f"{name}.pl").write_text("\n".join(pl) + "\n")

    scl = ["UCLA scl 1.0", f"NumRows : {len(region.rows)}"]
    for row in region.rows:
        scl.extend(
            [
                "CoreRow Horizontal",
                f"  Coordinate : {_fmt(row.y)}",
                f"  Height : {_fmt(row.height)}",
                f"  Sitewidth : {_fmt(row.site_width)}",
                f"  Sitespacing : {_fmt(row.site_width)}",
                "  Siteorient : 1",
                "  Sitesymmetry : 1",
                f"  SubrowOrigin : {_fmt(row.x_min)} NumSites : {row.num_sites}",
                "End",
            ]
        )
    (out_dir / f"{name}.scl").write_text("\n".join(scl) + "\n")

    aux = out_dir / f"{name}.aux"
    aux.write_text(
        f"RowBasedPlacement : {name}.nodes {name}.nets {name}.wts {name}.pl {name}.scl\n"
    )
    return aux


def _required_whitespace(tiers: int, ratio: float) -> float:
    # a macro fits once 1 / (T * (1 - ws)) >= ratio^2
    return 1.0 - 1.0 / (tiers * ratio * ratio)


def _nearest_boundary(x: float, y: float, region: Region2D) -> Tuple[float, float]:
    x = min(max(x, region.xl), region.xh)
    y = min(max(y, region.yl), region.yh)
    gaps = (x - region.xl, region.xh - x, y - region.yl, region.yh - y)
    side = int(np.argmin(gaps))
    if side == 0:
        return region.xl, y
    if side == 1:
        return region.xh, y
    if side == 2:
        return x, region.yl
    return x, region.yh


def transform_2d_to_3d(
    bundle: BookshelfBundle,
    spec: Transform3DSpec,
    rho_t: float = 1.0,
    beta_z: float = 1.0,
) -> Instance3D:
    """Shrink the 2D core into T equal tiers with extra whitespace; fixed objects move to the bottom-tier boundary."""
    netlist = bundle.netlist
    region = bundle.region
    scale = math.sqrt(1.0 / (spec.tiers * (1.0 - spec.extra_whitespace)))
    identity = spec.tiers == 1 and spec.extra_whitespace == 0

    new_w = region.width * scale
    new_h = region.height * scale
    macros = np.flatnonzero(netlist.kind == CellKind.MACRO)
    for i in macros:
        if netlist.width[i] > new_w + _EPS or netlist.height[i] > new_h + _EPS:
            ratio = max(netlist.width[i] / region.width, netlist.height[i] / region.height)
            needed = _required_whitespace(spec.tiers, ratio)
            raise InfeasibleTransformError(
                netlist.names[i],
                needed,
                f"macro {netlist.names[i]} ({netlist.width[i]:g} x {netlist.height[i]:g}) does not fit a "
                f"{new_w:g} x {new_h:g} tier; whitespace of at least {needed:.3f} is required",
            )

    positions = bundle.positions.copy()
    kind = netlist.kind.copy()
    if identity:
        tier_region = region
    else:
        rh = region.row_height
        site = region.rows[0].site_width if region.rows else 1.0
        x_min = region.xl
        rows: Tuple[Row2D, ...] = ()
        if rh > 0:
            count = int(math.floor(new_h / rh + _EPS))
            sites = int(math.floor(new_w / site + _EPS))
            rows = tuple(Row2D(region.yl + r * rh, rh, x_min, sites, site) for r in range(count))
        tier_region = Region2D(region.xl, region.yl, region.xl + new_w, region.yl + new_h, rows)
        positions[:, 0] = region.xl + (positions[:, 0] - region.xl) * scale
        positions[:, 1] = region.yl + (positions[:, 1] - region.yl) * scale
        for i in np.flatnonzero(netlist.is_kind(CellKind.FIXED, CellKind.IO)):
            positions[i] = _nearest_boundary(positions[i, 0], positions[i, 1], tier_region)
            kind[i] = int(CellKind.IO)
    return build_instance(
        bundle.name,
        Netlist(
            names=netlist.names,
            width=netlist.width,
            height=netlist.height,
            kind=kind,
            pin_cell=netlist.pin_cell,
            pin_dx=netlist.pin_dx,
            pin_dy=netlist.pin_dy,
            net_start=netlist.net_start,
            net_weight=netlist.net_weight,
            net_names=netlist.net_names,
        ),
        tier_region,
        positions,
        spec.tiers,
        tier_of=None,
        rho_t=rho_t,
        beta_z=beta_z,
    )


def build_instance(
    name: str,
    netlist: Netlist,
    region: Region2D,
    positions: np.ndarray,
    tiers: int,
    tier_of: Optional[np.ndarray] = None,
    rho_t: float = 1.0,
    beta_z: float = 1.0,
) -> Instance3D:
    """Normalize a one-tier physical region with T tiers onto the unit cube."""
    region3d = normalize_region(
        (region.width, region.height),
        tiers,
        origin=(region.xl, region.yl),
        rows=[(r.y, r.height, r.x_min, r.x_max, r.site_width) for r in region.rows],
        beta_z=beta_z,
        rho_t=rho_t,
    )
    norm_netlist = netlist.scaled(region.width, region.height)
    coords = np.zeros((netlist.num_cells, 3))
    coords[:, 0] = (positions[:, 0] - region.xl) / region.width
    coords[:, 1] = (positions[:, 1] - region.yl) / region.height
    if tier_of is not None:
        tier_of = np.clip(np.asarray(tier_of, dtype=np.int64), 0, tiers - 1)
        coords[:, 2] = region3d.tier_center(tier_of)
    else:
        fixed = ~norm_netlist.movable
        coords[:, 2] = 0.5
        coords[fixed, 2] = region3d.tier_center(0)
    return Instance3D(name, norm_netlist, region3d, Placement(coords=coords, tier_of=tier_of))


def physical_netlist(instance: Instance3D) -> Netlist:
    sx, sy = instance.region.scale
    return instance.netlist.scaled(1.0 / sx, 1.0 / sy)


def physical_region(region: Region3D) -> Region2D:
    sx, sy = region.scale
    ox, oy = region.origin
    rows = tuple(
        Row2D(
            y=oy + r.y * sy,
            height=r.height * sy,
            x_min=ox + r.x_min * sx,
            num_sites=int(round((r.x_max - r.x_min) / r.site_width)) if r.site_width > 0 else int(round((r.x_max - r.x_min) * sx)),
            site_width=r.site_width * sx if r.site_width > 0 else 1.0,
        )
        for r in region.rows
    )
    return Region2D(ox, oy, ox + sx, oy + sy, rows)


def write_instance_3d(instance: Instance3D, out_dir: Path, name: Optional[str] = None) -> Path:
    """Write a transformed instance as a 3D bundle in one tier's physical units."""
    region = instance.region
    phys = denormalize(region, instance.placement.coords)
    tier_of = instance.placement.tier_of
    if tier_of is None:
        tier_of = np.clip(np.floor(instance.placement.z / region.tier_depth).astype(np.int64), 0, region.tiers - 1)
    return write_bookshelf(
        out_dir,
        name or instance.name,
        physical_netlist(instance),
        physical_region(region),
        phys[:, :2],
        tiers=region.tiers,
        tier_of=tier_of,
    )


def load_instance(
    aux_path: Path,
    tiers: Optional[int] = None,
    whitespace: float = 0.10,
    rho_t: float = 1.0,
    beta_z: float = 1.0,
) -> Instance3D:
    """Load a 3D bundle as is, or transform a 2D bundle into the requested tier count."""
    bundle = parse_bookshelf(aux_path)
    if bundle.tiers is not None:
        if tiers is not None and tiers != bundle.tiers:
            raise FormatError(f"bundle was transformed for {bundle.tiers} tiers, not {tiers}")
        return build_instance(
            bundle.name, bundle.netlist, bundle.region, bundle.positions, bundle.tiers,
            tier_of=None, rho_t=rho_t, beta_z=beta_z,
        )
    spec = Transform3DSpec(tiers=tiers or 1, extra_whitespace=whitespace if (tiers or 1) > 1 else 0.0)
    return transform_2d_to_3d(bundle, spec, rho_t=rho_t, beta_z=beta_z)


def write_placement_3d(placement: Placement, netlist: Netlist, region: Region3D, path: Path) -> Path:
    """Bookshelf .pl with a fourth tier column; header records tiers, scale and origin."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sx, sy = region.scale
    phys = denormalize(region, placement.coords)
    tier_of = placement.tier_of
    if tier_of is None:
        tier_of = np.clip(np.floor(placement.z / region.tier_depth).astype(np.int64), 0, region.tiers - 1)
    lines = [
        "UCLA pl 1.0",
        f"# tiers : {region.tiers}",
        f"# scale : {_fmt(sx)} {_fmt(sy)}",
        f"# origin : {_fmt(region.origin[0])} {_fmt(region.origin[1])}",
    ]
    fixed = ~netlist.movable
    for i, cell in enumerate(netlist.names):
        if netlist.kind[i] == CellKind.FILLER:
            continue
        x = phys[i, 0] - netlist.width[i] * sx / 2
        y = phys[i, 1] - netlist.height[i] * sy / 2
        flag = " /FIXED" if fixed[i] else ""
        lines.append(f"{cell} {_fmt(x)} {_fmt(y)} {int(tier_of[i])} : N{flag}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_placement_3d(path: Path, netlist: Netlist, region: Region3D) -> Placement:
    """Read a tiered (or legacy single-tier) .pl written for this instance."""
    path = Path(path)
    if not path.exists():
        raise BundleIoError(f"missing placement file {path}")
    sx, sy = region.scale
    ox, oy = region.origin
    coords = np.full((netlist.num_cells, 3), np.nan)
    tier_of = np.zeros(netlist.num_cells, dtype=np.int64)
    index = netlist.index
    for number, tokens in _lines(path):
        head = tokens[: tokens.index(":")] if ":" in tokens else tokens
        name = head[0]
        if name not in index:
            raise FormatError(f"{path}:{number}: unknown cell {name}")
        if len(head) < 3:
            raise FormatError(f"{path}:{number}: placement line needs x and y")
        i = index[name]
        try:
            x, y = float(head[1]), float(head[2])
            tier = int(head[3]) if len(head) >= 4 else None
        except ValueError:
            raise FormatError(f"{path}:{number}: malformed coordinates") from None
        if tier is None:
            if region.tiers != 1:
                raise FormatError(f"{path}:{number}: missing tier column for a {region.tiers}-tier instance")
            tier = 0
        if not 0 <= tier < region.tiers:
            raise FormatError(f"{path}:{number}: tier {tier} outside [0, {region.tiers})")
        coords[i, 0] = (x + netlist.width[i] * sx / 2 - ox) / sx
        coords[i, 1] = (y + netlist.height[i] * sy / 2 - oy) / sy
        coords[i, 2] = region.tier_center(tier)
        tier_of[i] = tier
    missing = np.flatnonzero(np.isnan(coords[:, 0]) & (netlist.kind != CellKind.FILLER))
    if len(missing):
        raise FormatError(f"{path}: no placement for {len(missing)} cells (first {netlist.names[missing[0]]})")
    return Placement(coords=np.nan_to_num(coords, nan=0.5), tier_of=tier_of)


__all__ = [
    "BookshelfBundle",
    "BundleIoError",
    "FormatError",
    "InfeasibleTransformError",
    "Instance3D",
    "ParseError",
    "Region2D",
    "Row2D",
    "Transform3DSpec",
    "build_instance",
    "load_instance",
    "parse_bookshelf",
    "physical_netlist",
    "physical_region",
    "read_placement_3d",
    "transform_2d_to_3d",
    "write_bookshelf",
    "write_instance_3d",
    "write_placement_3d",
]
