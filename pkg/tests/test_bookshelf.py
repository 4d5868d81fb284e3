from pathlib import Path

import numpy as np
import pytest

from src.bookshelf import (
    BookshelfBundle,
    BundleIoError,
    FormatError,
    InfeasibleTransformError,
    ParseError,
    Region2D,
    Row2D,
    Transform3DSpec,
    load_instance,
    parse_bookshelf,
    read_placement_3d,
    transform_2d_to_3d,
    write_instance_3d,
    write_placement_3d,
)
from src.model import CellKind, InvalidInputError, Netlist, Placement
from src.synthetic import make_synthetic


@pytest.fixture(scope="module")
def design():
    return make_synthetic(num_cells=60, num_macros=2, seed=1)


def test_written_bundle_parses_back(design, tmp_path):
    aux = design.write(tmp_path)
    bundle = parse_bookshelf(aux)
    assert bundle.name == design.name
    assert bundle.netlist.names == design.netlist.names
    assert bundle.netlist.num_nets == design.netlist.num_nets
    assert np.array_equal(bundle.netlist.kind, design.netlist.kind)
    assert np.allclose(bundle.positions, design.positions)
    assert np.allclose(bundle.netlist.pin_dx, design.netlist.pin_dx)
    assert bundle.region.area == pytest.approx(design.region.area)
    assert len(bundle.region.rows) == len(design.region.rows)
    assert bundle.tiers is None


def test_missing_and_malformed_files(design, tmp_path):
    with pytest.raises(BundleIoError):
        parse_bookshelf(tmp_path / "nothing.aux")
    aux = design.write(tmp_path)
    nodes = tmp_path / f"{design.name}.nodes"
    lines = nodes.read_text().splitlines()
    lines[3] = lines[3].split()[0] + " wide 12"
    nodes.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as info:
        parse_bookshelf(aux)
    assert info.value.line == 4


def test_transform_preserves_total_area(design):
    bundle = design.bundle()
    spec = Transform3DSpec(tiers=2, extra_whitespace=0.1)
    instance = transform_2d_to_3d(bundle, spec)
    sx, sy = instance.region.scale
    assert sx * sy * 2 * (1 - 0.1) == pytest.approx(bundle.region.area)
    assert sx / sy == pytest.approx(bundle.region.width / bundle.region.height)
    assert instance.region.tiers == 2
    assert instance.num_rows == int(np.floor(sy / bundle.region.row_height + 1e-9))
    # pads sit on the tier boundary
    pads = instance.netlist.kind == CellKind.IO
    xy = instance.placement.coords[pads, :2]
    on_edge = np.isclose(xy, 0.0) | np.isclose(xy, 1.0)
    assert np.all(on_edge.any(axis=1))
    movable = instance.netlist.movable
    assert np.allclose(instance.placement.z[movable], 0.5)


def test_single_tier_without_whitespace_is_the_identity(design):
    bundle = design.bundle()
    instance = transform_2d_to_3d(bundle, Transform3DSpec(tiers=1, extra_whitespace=0.0))
    assert instance.region.scale == pytest.approx((bundle.region.width, bundle.region.height))
    assert instance.num_rows == len(bundle.region.rows)


def big_macro_bundle():
    cells = [("m0", 90.0, 90.0, CellKind.MACRO), ("c0", 2.0, 10.0, CellKind.STDCELL)]
    netlist = Netlist.build(cells, [("n0", 1.0, [("m0", 0.0, 0.0), ("c0", 0.0, 0.0)])])
    rows = tuple(Row2D(10.0 * r, 10.0, 0.0, 100) for r in range(10))
    region = Region2D(0.0, 0.0, 100.0, 100.0, rows)
    positions = np.array([[50.0, 50.0], [10.0, 5.0]])
    return BookshelfBundle(aux_path=Path("big.aux"), netlist=netlist, region=region, positions=positions)


def test_macro_that_cannot_fit_a_tier():
    bundle = big_macro_bundle()
    with pytest.raises(InfeasibleTransformError) as info:
        transform_2d_to_3d(bundle, Transform3DSpec(tiers=2, extra_whitespace=0.1))
    assert info.value.macro == "m0"
    assert info.value.required_whitespace == pytest.approx(1 - 1 / (2 * 0.81))
    instance = transform_2d_to_3d(bundle, Transform3DSpec(tiers=2, extra_whitespace=0.4))
    assert instance.region.scale[0] >= 90.0


def test_transform_spec_validation():
    with pytest.raises(InvalidInputError):
        Transform3DSpec(tiers=0)
    with pytest.raises(InvalidInputError):
        Transform3DSpec(tiers=2, extra_whitespace=1.0)


def tiered_placement(instance, rng):
    tier_of = rng.integers(0, instance.region.tiers, instance.netlist.num_cells)
    coords = instance.placement.coords.copy()
    coords[:, :2] = rng.uniform(0.1, 0.9, size=(len(coords), 2))
    coords[:, 2] = instance.region.tier_center(tier_of)
    return Placement(coords=coords, tier_of=tier_of)


def test_tiered_pl_round_trip(design, tmp_path, rng):
    instance = design.instance(tiers=3)
    placement = tiered_placement(instance, rng)
    path = write_placement_3d(placement, instance.netlist, instance.region, tmp_path / "out.pl")
    header = path.read_text().splitlines()[1]
    assert header == "# tiers : 3"
    back = read_placement_3d(path, instance.netlist, instance.region)
    assert np.allclose(back.coords, placement.coords)
    assert np.array_equal(back.tier_of, placement.tier_of)


def test_fillers_are_not_written(design, tmp_path, rng):
    instance = design.instance(tiers=2)
    placement = tiered_placement(instance, rng)
    filled = instance.netlist.with_fillers(2, 0.01, 0.01)
    coords = np.vstack([placement.coords, np.full((2, 3), 0.25)])
    tiered = Placement(coords=coords, tier_of=np.append(placement.tier_of, [0, 0]))
    path = write_placement_3d(tiered, filled, instance.region, tmp_path / "out.pl")
    assert "filler" not in path.read_text()


def test_pl_reader_rejects_mismatches(design, tmp_path, rng):
    instance = design.instance(tiers=2)
    placement = tiered_placement(instance, rng)
    path = write_placement_3d(placement, instance.netlist, instance.region, tmp_path / "out.pl")
    lines = path.read_text().splitlines()
    first = lines[4].split()

    def rewrite(new_line, drop=False):
        body = lines[:4] + ([] if drop else [new_line]) + lines[5:]
        path.write_text("\n".join(body) + "\n")

    rewrite(" ".join(first[:3] + first[4:]))
    with pytest.raises(FormatError):
        read_placement_3d(path, instance.netlist, instance.region)
    rewrite(" ".join(first[:3] + ["7"] + first[4:]))
    with pytest.raises(FormatError):
        read_placement_3d(path, instance.netlist, instance.region)
    rewrite(" ".join(["ghost"] + first[1:]))
    with pytest.raises(FormatError):
        read_placement_3d(path, instance.netlist, instance.region)
    rewrite("", drop=True)
    with pytest.raises(FormatError):
        read_placement_3d(path, instance.netlist, instance.region)
    with pytest.raises(BundleIoError):
        read_placement_3d(tmp_path / "absent.pl", instance.netlist, instance.region)


def test_transformed_bundle_loads_as_3d(design, tmp_path):
    instance = design.instance(tiers=2)
    aux = write_instance_3d(instance, tmp_path, name="three_d")
    loaded = load_instance(aux)
    assert loaded.region.tiers == 2
    assert loaded.region.scale == pytest.approx(instance.region.scale)
    assert loaded.num_rows == instance.num_rows
    assert np.array_equal(loaded.netlist.kind, instance.netlist.kind)
    assert np.allclose(loaded.netlist.width, instance.netlist.width)
    with pytest.raises(FormatError):
        load_instance(aux, tiers=3)
