import math

import numpy as np
import pytest
import scipy.linalg as sla

from obslab.discretize import (
    DIRICHLET, NEUMANN, CellMask, DiscreteSpace, RadialCutoff, ResolutionError, TubularCutoff,
    assemble_form, assemble_stencil, build_grid, classify_cells, discrete_h2_seminorm,
    sample_cutoff, smoothstep,
)
from obslab.geometry import ObstacleSet, SeparatedSet, Torus, make_lattice_centers


@pytest.mark.parametrize("L, n, h", [(1.0, 4, 0.25), (2.0, 8, 0.25), (1.0, 7, 1 / 7)])
def test_grid_examples(L, n, h):
    g = build_grid(Torus(2, L), n)
    assert g.h == pytest.approx(h)
    assert g.size == n * n


def test_grid_rejects_tiny_or_fractional():
    with pytest.raises(ResolutionError):
        build_grid(Torus(2), 2)
    with pytest.raises(ResolutionError):
        build_grid(Torus(2), 7.5)


def test_full_torus_all_active(grid128):
    assert classify_cells(grid128, None).count == grid128.size


def test_ball_cell_count_close_to_area(torus2):
    grid = build_grid(torus2, 64)
    center = grid.cell_centers([64 * 32 + 32])
    obs = ObstacleSet(SeparatedSet(torus2, center, 0.25), 0.25)
    removed = grid.size - classify_cells(grid, obs).count
    # exact count of lattice points strictly inside the disk of radius 16 cells
    exact = sum(1 for i in range(-16, 17) for j in range(-16, 17) if i * i + j * j < 256)
    assert removed == exact
    assert abs(removed - math.pi * 0.25 ** 2 * 64 ** 2) <= 0.05 * math.pi * 0.25 ** 2 * 64 ** 2


def test_resolution_guard(torus2):
    grid = build_grid(torus2, 64)
    obs = ObstacleSet(make_lattice_centers(torus2, 0.5), 4 * grid.h)
    with pytest.raises(ResolutionError, match="below guard"):
        classify_cells(grid, obs, min_resolution=8)
    classify_cells(grid, obs, min_resolution=4)


def test_bitmap_round_trip(grid128, unit_box):
    mask = classify_cells(grid128, unit_box, bc=NEUMANN)
    back = CellMask.from_bitmap(mask.to_bitmap())
    assert np.array_equal(back.active, mask.active)
    assert back.bc == NEUMANN and back.grid.n == 128


def torus_form(n, m=2):
    grid = build_grid(Torus(m), n)
    return assemble_form(DiscreteSpace(classify_cells(grid, None)))


def test_torus_n4_smallest_nonzero_eigenvalue():
    form = torus_form(4)
    vals = sla.eigh(form.K.toarray(), np.diag(form.mass), eigvals_only=True)
    assert vals[0] == pytest.approx(0.0, abs=1e-12)
    assert vals[1] == pytest.approx(32.0, rel=1e-13)


@pytest.mark.parametrize("bc", [NEUMANN, DIRICHLET])
@pytest.mark.parametrize("m", [2, 3])
def test_two_assembly_routes_agree(bc, m):
    torus = Torus(m)
    n = 24 if m == 2 else 12
    grid = build_grid(torus, n)
    obs = ObstacleSet(make_lattice_centers(torus, 0.5), 0.2)
    space = DiscreteSpace(classify_cells(grid, obs, min_resolution=2, bc=bc))
    form = assemble_form(space)
    diff = form.K - assemble_stencil(space)
    assert abs(diff).max() == 0.0 if diff.nnz else True
    assert abs(form.K - form.K.T).max() == 0.0 if form.K.nnz else True


def test_neumann_kills_constants_and_dirichlet_is_positive(grid128, unit_box):
    neu = assemble_form(DiscreteSpace(classify_cells(grid128, unit_box, bc=NEUMANN)))
    assert np.abs(neu.K @ np.ones(neu.dim)).max() == 0.0
    dirf = assemble_form(DiscreteSpace(classify_cells(build_grid(unit_box.torus, 16),
                                                      unit_box, bc=DIRICHLET)))
    lowest = sla.eigh(dirf.K.toarray(), np.diag(dirf.mass), eigvals_only=True)[0]
    assert lowest > 0


def test_mask_nesting_for_solid(grid128, unit_box):
    eps = 1 / 16
    from obslab.transplant import solid_centers

    centers = solid_centers(unit_box, eps)
    outer = classify_cells(grid128, unit_box)
    inner = classify_cells(grid128, ObstacleSet(centers, eps))
    assert outer.subset_of(inner)


def test_radial_cutoff_values(torus2):
    centers = SeparatedSet(torus2, [[0.5, 0.5]], 0.25)
    eps, eps_plus = 0.01, 0.09
    cut = RadialCutoff(centers, eps, eps_plus)
    assert cut.profile(math.sqrt(eps * eps_plus), 2) == pytest.approx(0.5)
    assert cut.profile([0.0, eps, eps_plus, 0.2], 2).tolist() == [0.0, 0.0, 1.0, 1.0]
    with pytest.raises(ValueError):
        RadialCutoff(centers, 0.1, 0.1)


def test_sampled_cutoffs_in_unit_interval(grid128, unit_box, torus2):
    centers = make_lattice_centers(torus2, 0.5)
    chi = sample_cutoff(grid128, RadialCutoff(centers, 1 / 16, 1 / 8))
    assert chi.min() == 0.0 and chi.max() == 1.0
    tub = sample_cutoff(grid128, TubularCutoff(unit_box, 0.05))
    sd_inside = unit_box.contains(grid128.cell_centers())
    assert np.all(tub[sd_inside] == 0.0)
    assert np.all((tub >= 0) & (tub <= 1))


def test_smoothstep_profile():
    assert smoothstep(0.5) == pytest.approx(0.5)
    x = np.linspace(0, 1, 10001)
    slope = np.max(np.abs(np.diff(smoothstep(x)) / np.diff(x)))
    assert slope == pytest.approx(1.5, rel=1e-3)
    assert slope <= 2


def test_h2_seminorm_examples(torus2, unit_box):
    grid = build_grid(torus2, 32)
    # keep the box only, so no stencil wraps around
    space = DiscreteSpace(classify_cells(grid, lambda x: ~unit_box.contains(x)))
    form = assemble_form(space)
    x = grid.cell_centers(space.index)
    assert discrete_h2_seminorm(form, np.ones(space.dim)) == 0.0
    assert discrete_h2_seminorm(form, 3 * x[:, 0] - x[:, 1]) == pytest.approx(0.0, abs=1e-9)
    count = np.sum([(space.position[grid.neighbor(space.index, 0, s)] >= 0)
                    for s in (1, -1)], axis=0) == 2
    expected = 2 * math.sqrt(count.sum()) * grid.h
    assert discrete_h2_seminorm(form, x[:, 0] ** 2) == pytest.approx(expected, rel=1e-9)
