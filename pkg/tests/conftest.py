import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from src.model import CellKind, Netlist, Placement, Region3D, RowSpec
from src.synthetic import make_synthetic


def chain_netlist() -> Netlist:
    """io_l - a - b - io_r with unit-free tiny cells."""
    cells = [
        ("io_l", 0.0, 0.0, CellKind.IO),
        ("a", 0.01, 0.01, CellKind.STDCELL),
        ("b", 0.01, 0.01, CellKind.STDCELL),
        ("io_r", 0.0, 0.0, CellKind.IO),
    ]
    nets = [
        ("n0", 1.0, [("io_l", 0.0, 0.0), ("a", 0.0, 0.0)]),
        ("n1", 1.0, [("a", 0.0, 0.0), ("b", 0.0, 0.0)]),
        ("n2", 1.0, [("b", 0.0, 0.0), ("io_r", 0.0, 0.0)]),
    ]
    return Netlist.build(cells, nets)


def unit_rows(count: int) -> tuple:
    h = 1.0 / count
    return tuple(RowSpec(y=r * h, height=h, x_min=0.0, x_max=1.0) for r in range(count))


@pytest.fixture
def chain():
    netlist = chain_netlist()
    coords = np.array([[0.0, 0.5, 0.5], [0.3, 0.5, 0.5], [0.7, 0.5, 0.5], [1.0, 0.5, 0.5]])
    return netlist, Region3D(tiers=1), Placement(coords=coords)


@pytest.fixture(scope="session")
def small_design():
    return make_synthetic(num_cells=200, num_macros=0, seed=3)


@pytest.fixture(scope="session")
def mixed_design():
    return make_synthetic(num_cells=300, num_macros=4, seed=5, macro_area_fraction=0.25)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full-flow quality tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-flow quality checks on larger synthetic designs")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
