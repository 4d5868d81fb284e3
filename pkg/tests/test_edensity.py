import numpy as np
import pytest

from src.edensity import (
    DensityMap,
    build_footprint,
    charge_view,
    density_force,
    energy,
    evaluate_series,
    overflow,
    remove_mean,
    sample_field,
    solve_field,
    splat_density,
    splat_view,
    write_heatmaps,
)
from src.model import BinGridSpec, CellKind, Netlist, Placement, Region3D, StateError


def bin_centers(grid):
    centers = [(np.arange(m) + 0.5) / m for m in grid.shape]
    return np.meshgrid(*centers, indexing="ij")


def test_spectral_solution_matches_cosine_modes(rng):
    grid = BinGridSpec.cubic(16)
    gx, gy, gz = bin_centers(grid)
    for _ in range(20):
        rho = np.zeros(grid.shape)
        phi = np.zeros(grid.shape)
        ex = np.zeros(grid.shape)
        ey = np.zeros(grid.shape)
        ez = np.zeros(grid.shape)
        for _ in range(int(rng.integers(1, 4))):
            j, k, l = (int(v) for v in rng.integers(0, 16, size=3))
            if j == k == l == 0:
                j = 1
            a = float(rng.uniform(-1.0, 1.0))
            w2 = np.pi**2 * (j * j + k * k + l * l)
            cx, cy, cz = np.cos(np.pi * j * gx), np.cos(np.pi * k * gy), np.cos(np.pi * l * gz)
            sx, sy, sz = np.sin(np.pi * j * gx), np.sin(np.pi * k * gy), np.sin(np.pi * l * gz)
            rho += a * cx * cy * cz
            phi += a * cx * cy * cz / w2
            ex += a * np.pi * j * sx * cy * cz / w2
            ey += a * np.pi * k * cx * sy * cz / w2
            ez += a * np.pi * l * cx * cy * sz / w2
        state = solve_field(DensityMap(grid=grid, rho=rho, mean_removed=True))
        assert np.max(np.abs(state.phi - phi)) < 1e-8
        assert np.max(np.abs(state.e_x - ex)) < 1e-8
        assert np.max(np.abs(state.e_y - ey)) < 1e-8
        assert np.max(np.abs(state.e_z - ez)) < 1e-8


def test_series_evaluates_between_bin_centers():
    grid = BinGridSpec.cubic(8)
    gx, gy, gz = bin_centers(grid)
    rho = np.cos(2 * np.pi * gx) * np.cos(np.pi * gz)
    state = solve_field(DensityMap(grid=grid, rho=rho, mean_removed=True))
    points = np.array([[0.1, 0.3, 0.7], [0.0, 1.0, 0.5], [0.33, 0.9, 0.05]])
    w2 = np.pi**2 * 5
    expected_phi = np.cos(2 * np.pi * points[:, 0]) * np.cos(np.pi * points[:, 2]) / w2
    expected_ex = 2 * np.pi * np.sin(2 * np.pi * points[:, 0]) * np.cos(np.pi * points[:, 2]) / w2
    assert np.allclose(evaluate_series(state, points), expected_phi, atol=1e-10)
    assert np.allclose(evaluate_series(state, points, "e_x"), expected_ex, atol=1e-10)


@pytest.mark.parametrize("m", [16, 32])
def test_poisson_residual_on_smooth_densities(rng, m):
    grid = BinGridSpec.cubic(m)
    gx, gy, gz = bin_centers(grid)
    for _ in range(3):
        rho = np.zeros(grid.shape)
        for j in range(3):
            for k in range(3):
                for l in range(3):
                    if j == k == l == 0:
                        continue
                    rho += rng.normal() * np.cos(np.pi * j * gx) * np.cos(np.pi * k * gy) * np.cos(np.pi * l * gz)
        density = DensityMap(grid=grid, rho=rho, mean_removed=True)
        phi = solve_field(density).phi
        padded = np.pad(phi, 1, mode="edge")
        lap = -6 * phi
        for a in range(3):
            for step in (-1, 1):
                lap = lap + np.roll(padded, step, axis=a)[1:-1, 1:-1, 1:-1]
        lap *= m * m
        residual = np.linalg.norm(lap + rho) / np.linalg.norm(rho)
        assert residual < 0.02


def test_solve_requires_mean_removed_density():
    grid = BinGridSpec.cubic(4)
    with pytest.raises(StateError):
        solve_field(DensityMap(grid=grid, rho=np.ones(grid.shape)))


def random_netlist(rng, count, max_side):
    cells = [
        (f"p{i}", float(rng.uniform(0.3, 1.0) * max_side), float(rng.uniform(0.3, 1.0) * max_side), CellKind.STDCELL)
        for i in range(count)
    ]
    return Netlist.build(cells, [])


def test_density_force_is_the_negative_potential_gradient(rng):
    grid = BinGridSpec.cubic(32)
    region = Region3D(tiers=32)
    gx, gy, gz = bin_centers(grid)
    r2 = (gx - 0.3) ** 2 + (gy - 0.45) ** 2 + (gz - 0.4) ** 2
    background = remove_mean(DensityMap(grid=grid, rho=np.exp(-r2 / (2 * 0.2**2))))
    state = solve_field(background)

    netlist = random_netlist(rng, 200, 1.0 / 32)
    index = np.arange(netlist.num_cells)
    coords = rng.uniform(0.05, 0.95, size=(netlist.num_cells, 3))
    view = charge_view(coords, netlist, region, grid, index)
    force = density_force(state, view)

    h = 1e-7
    grad = np.zeros_like(coords)
    for d in range(3):
        up = coords.copy()
        dn = coords.copy()
        up[:, d] += h
        dn[:, d] -= h
        phi_up = sample_field(state, charge_view(up, netlist, region, grid, index)).phi
        phi_dn = sample_field(state, charge_view(dn, netlist, region, grid, index)).phi
        grad[:, d] = view.q * (phi_up - phi_dn) / (2 * h)
    rel = np.linalg.norm(force + grad, axis=1) / np.linalg.norm(grad, axis=1)
    assert np.mean(rel < 0.05) >= 0.95


def test_moving_along_the_force_lowers_the_energy(rng):
    grid = BinGridSpec.cubic(16)
    region = Region3D(tiers=16)
    netlist = random_netlist(rng, 200, 1.0 / 16)
    coords = np.clip(rng.normal(0.5, 0.08, size=(netlist.num_cells, 3)), 0.1, 0.9)
    index = np.arange(netlist.num_cells)

    def system_energy(c):
        view = charge_view(c, netlist, region, grid, index)
        state = solve_field(remove_mean(splat_view(view, grid)))
        return energy(state, view), density_force(state, view)

    before, force = system_energy(coords)
    step = 1e-4 * force / np.abs(force).max()
    after, _ = system_energy(coords + step)
    assert after < before


def test_center_sampling_reads_the_center_bin():
    grid = BinGridSpec.cubic(8)
    gx, gy, gz = bin_centers(grid)
    state = solve_field(DensityMap(grid=grid, rho=np.cos(np.pi * gx) * np.cos(np.pi * gy), mean_removed=True))
    region = Region3D(tiers=8)
    netlist = Netlist.build([("a", 0.05, 0.05, CellKind.STDCELL)], [])
    coords = np.array([[0.3, 0.6, 0.5]])
    view = charge_view(coords, netlist, region, grid, np.array([0]), sampling="center")
    sample = sample_field(state, view)
    assert sample.e[0, 0] == pytest.approx(state.e_x[2, 4, 4])
    assert sample.phi[0] == pytest.approx(state.phi[2, 4, 4])


def quadrant_case():
    cells = [(f"c{i}", 0.5, 0.5, CellKind.STDCELL) for i in range(3)] + [("blk", 0.5, 0.5, CellKind.FIXED)]
    netlist = Netlist.build(cells, [])
    coords = np.array([[0.25, 0.25, 0.5], [0.75, 0.25, 0.5], [0.25, 0.75, 0.5], [0.75, 0.75, 0.5]])
    return netlist, coords


def test_overflow_of_spread_and_stacked_cells():
    netlist, coords = quadrant_case()
    region = Region3D(tiers=1)
    grid = BinGridSpec(2, 2, 1)
    assert overflow(Placement(coords=coords), netlist, region, grid) == pytest.approx(0.0)
    stacked = coords.copy()
    stacked[:3] = [0.25, 0.25, 0.5]
    assert overflow(Placement(coords=stacked), netlist, region, grid) == pytest.approx(2.0 / 3.0)
    # a cell on top of the fixed block overflows completely
    onto = coords.copy()
    onto[0] = [0.75, 0.75, 0.5]
    assert overflow(Placement(coords=onto), netlist, region, grid) == pytest.approx(1.0 / 3.0)


def test_overflow_respects_target_density():
    netlist, coords = quadrant_case()
    region = Region3D(tiers=1, rho_t=0.5)
    assert overflow(Placement(coords=coords), netlist, region, BinGridSpec(2, 2, 1)) == pytest.approx(0.5)


def test_overflow_ignores_fillers():
    netlist, coords = quadrant_case()
    filled = netlist.with_fillers(2, 0.5, 0.5)
    coords = np.vstack([coords, [[0.25, 0.25, 0.5], [0.25, 0.25, 0.5]]])
    assert overflow(Placement(coords=coords), filled, Region3D(tiers=1), BinGridSpec(2, 2, 1)) == pytest.approx(0.0)


def test_out_of_region_cells_are_rejected():
    netlist, coords = quadrant_case()
    coords[0, 0] = 0.1
    with pytest.raises(StateError):
        overflow(Placement(coords=coords), netlist, Region3D(tiers=1), BinGridSpec(2, 2, 1))


def test_splat_conserves_charge(rng):
    netlist = Netlist.build(
        [("big", 0.4, 0.3, CellKind.MACRO)] + [(f"s{i}", 0.02, 0.05, CellKind.STDCELL) for i in range(40)],
        [],
    )
    region = Region3D(tiers=2)
    coords = np.column_stack([rng.uniform(0.25, 0.75, 41), rng.uniform(0.2, 0.8, 41), np.full(41, 0.25)])
    density = splat_density(Placement(coords=coords), netlist, region, BinGridSpec.cubic(16))
    assert density.charge().sum() == pytest.approx(netlist.volume(region.tier_depth).sum())


def test_single_small_cell_splats_on_a_coarse_grid():
    netlist = Netlist.build([("a", 0.05, 0.05, CellKind.STDCELL)], [])
    region = Region3D(tiers=2)
    placement = Placement(coords=np.array([[0.5, 0.5, 0.25]]))
    density = splat_density(placement, netlist, region, BinGridSpec.cubic(8))
    assert density.charge().sum() == pytest.approx(0.05 * 0.05 * 0.5)


def test_empty_footprint_scatters_nothing():
    fp = build_footprint(np.zeros((0, 3)), np.zeros((0, 3)), BinGridSpec.cubic(4))
    assert fp.count == 0
    assert np.all(fp.scatter(np.zeros(0)) == 0)
    assert fp.gather(np.ones(64)).shape == (0,)


def overlap_weights(lo, ext, grid):
    """Per-object overlap fractions, one bin at a time."""
    weights = np.zeros((len(lo), grid.num_bins))
    edges = [np.arange(m + 1) / m for m in grid.shape]
    for j in range(len(lo)):
        parts = []
        for a in range(3):
            left = np.maximum(lo[j, a], edges[a][:-1])
            right = np.minimum(lo[j, a] + ext[j, a], edges[a][1:])
            parts.append(np.clip(right - left, 0.0, None) / ext[j, a])
        weights[j] = np.einsum("i,j,k->ijk", *parts).ravel()
    return weights


def test_grouped_footprint_matches_per_object_overlap(rng):
    grid = BinGridSpec(8, 8, 4)
    n = 60
    ext = np.column_stack(
        [
            np.where(np.arange(n) < 10, rng.uniform(0.2, 0.45, n), rng.uniform(0.01, 0.2, n)),
            rng.uniform(0.01, 0.4, n),
            np.full(n, 0.25),
        ]
    )
    lo = rng.uniform(0.0, 1.0, (n, 3)) * (1.0 - ext)
    fp = build_footprint(lo, ext, grid, inflate=False)
    assert len(fp.blocks) > 1
    expected = overlap_weights(lo, ext, grid)
    q = rng.uniform(0.5, 2.0, n)
    values = rng.normal(size=grid.num_bins)
    assert np.allclose(fp.scatter(q), q @ expected)
    assert np.allclose(fp.gather(values), expected @ values)


def test_inflated_footprint_gradient_follows_the_sampled_values(rng):
    grid = BinGridSpec.cubic(8)
    n = 40
    ext = np.column_stack([rng.uniform(0.02, 0.4, n), rng.uniform(0.02, 0.4, n), np.full(n, 0.1)])
    center = rng.uniform(0.25, 0.75, (n, 3))
    values = rng.normal(size=grid.num_bins)
    fp = build_footprint(center - ext / 2, ext, grid)
    grad = fp.gather_gradient(values)
    h = 1e-7
    for a in range(3):
        shift = np.zeros(3)
        shift[a] = h
        up = build_footprint(center + shift - ext / 2, ext, grid).gather(values)
        dn = build_footprint(center - shift - ext / 2, ext, grid).gather(values)
        assert np.allclose(grad[:, a], (up - dn) / (2 * h), atol=1e-5)
    with pytest.raises(StateError):
        build_footprint(center - ext / 2, ext, grid, inflate=False).gather_gradient(values)


def test_layered_splat_keeps_tiers_apart():
    netlist = Netlist.build([("a", 0.1, 0.1, CellKind.STDCELL), ("b", 0.2, 0.1, CellKind.STDCELL)], [])
    region = Region3D(tiers=2)
    coords = np.array([[0.5, 0.5, 0.25], [0.5, 0.5, 0.75]])
    placement = Placement(coords=coords, tier_of=np.array([0, 1]))
    grid = BinGridSpec(8, 8, 2, layered=True)
    density = splat_density(placement, netlist, region, grid)
    charge = density.charge()
    assert charge[:, :, 0].sum() == pytest.approx(0.01 * 0.5)
    assert charge[:, :, 1].sum() == pytest.approx(0.02 * 0.5)
    with pytest.raises(StateError):
        splat_density(placement.with_tiers(None), netlist, region, grid)


def test_heatmaps_are_written_per_slice(tmp_path):
    grid = BinGridSpec(4, 4, 2)
    gx, gy, gz = bin_centers(grid)
    density = DensityMap(grid=grid, rho=np.cos(np.pi * gx))
    written = write_heatmaps(density, solve_field(remove_mean(density)), tmp_path)
    names = sorted(p.name for p in written)
    assert names == sorted(
        ["density_z0.txt", "density_z1.txt", "field_z0.txt", "field_z1.txt", "slice_z0.png", "slice_z1.png"]
    )
    assert np.loadtxt(tmp_path / "density_z0.txt").shape == (4, 4)


def test_overflow_matches_a_per_bin_count(rng):
    n = 250
    w = rng.uniform(0.02, 0.3, n)
    h = rng.uniform(0.02, 0.3, n)
    cells = [(f"c{i}", float(w[i]), float(h[i]), CellKind.STDCELL) for i in range(n)]
    cells.append(("blk", 0.5, 0.25, CellKind.FIXED))
    netlist = Netlist.build(cells, [])
    region = Region3D(tiers=2, rho_t=0.8)
    depth = region.tier_depth
    coords = np.column_stack(
        [rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), rng.uniform(depth / 2, 1 - depth / 2, n)]
    )
    coords = np.vstack([coords, [0.25, 0.125, 0.25]])
    grid = BinGridSpec(8, 4, 4)

    ext = np.column_stack([netlist.width, netlist.height, np.full(n + 1, depth)])
    weights = overlap_weights(coords - ext / 2, ext, grid)
    vol = netlist.volume(depth)
    movable = weights[:n].T @ vol[:n]
    fixed = weights[n] * vol[n]
    bin_volume = 1.0 / grid.num_bins
    excess = np.clip(movable - 0.8 * np.clip(bin_volume - fixed, 0.0, None), 0.0, None)
    want = excess.sum() / vol[:n].sum()
    assert overflow(Placement(coords=coords), netlist, region, grid) == pytest.approx(want, rel=1e-9)
