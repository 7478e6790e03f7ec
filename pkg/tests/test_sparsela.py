import math

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from obslab import sparsela
from obslab.discretize import DiscreteSpace, assemble_form, build_grid, classify_cells
from obslab.geometry import Torus
from obslab.sparsela import (
    CGSolver, DirectSolver, FourierSolver, MetricNormProblem, SolverError, cg_solve,
    estimate_opnorm, heat_apply, lanczos_smallest, make_solver, metric_opnorm,
    power_of_resolvent_apply,
)


def torus_form(n):
    grid = build_grid(Torus(2), n)
    return assemble_form(DiscreteSpace(classify_cells(grid, None))), grid


def test_cg_examples():
    b = np.array([3.0, -1.0, 2.0])
    assert np.allclose(cg_solve(sp.csr_matrix((3, 3)), 1.0, b), b)
    assert np.allclose(cg_solve(sp.diags([1.0, 3.0]).tocsr(), 1.0, [2.0, 8.0]), [1.0, 2.0])
    form, _ = torus_form(16)
    c = np.full(form.dim, 2.5)
    assert np.allclose(cg_solve(form.K, 1.0, c * form.mass, mass=form.mass), c)


def test_cg_iteration_cap_raises():
    form, _ = torus_form(32)
    b = np.random.default_rng(0).standard_normal(form.dim)
    with pytest.raises(SolverError, match="residual"):
        cg_solve(form.K, 1e-6, b, tol=1e-12, mass=form.mass, maxiter=3)


def test_cg_shape_mismatch():
    with pytest.raises(ValueError):
        cg_solve(sp.eye(3).tocsr(), 1.0, np.ones(4))


def test_solvers_agree(rng):
    form, grid = torus_form(32)
    b = rng.standard_normal(form.dim)
    ref = sla.solve(form.K.toarray() + np.diag(form.mass), b)
    fft = make_solver(form.K, form.mass, 1.0, periodic_shape=grid.shape,
                      edge_weight=form.edge_weight)
    assert isinstance(fft, FourierSolver)
    for solver in (fft, DirectSolver(form.K, form.mass), CGSolver(form.K, form.mass, tol=1e-12)):
        assert np.allclose(solver.solve(b), ref, rtol=1e-9, atol=1e-12)


def test_make_solver_rejects_unknown():
    with pytest.raises(ValueError):
        make_solver(sp.eye(3), np.ones(3), method="magic")


def test_lanczos_diag_example():
    vals, vecs = lanczos_smallest(sp.diags([1.0, 2.0, 3.0]).tocsr(), np.ones(3), 1)
    assert vals[0] == pytest.approx(1.0)
    assert np.allclose(vecs[:, 0], [1.0, 0.0, 0.0])


def test_lanczos_sparse_path_matches_dense(rng):
    form, _ = torus_form(24)
    mass = form.mass * rng.uniform(0.5, 1.5, form.dim)
    ref = sla.eigh(form.K.toarray(), np.diag(mass), eigvals_only=True)[:12]
    vals, vecs = lanczos_smallest(form.K, mass, 12, dense_limit=10)
    assert np.allclose(vals, ref, rtol=1e-9, atol=1e-9)
    gram = vecs.T @ (mass[:, None] * vecs)
    assert np.allclose(gram, np.eye(12), atol=1e-8)


def test_lanczos_rejects_bad_count():
    with pytest.raises(ValueError):
        lanczos_smallest(sp.eye(3).tocsr(), np.ones(3), 0)


@pytest.mark.parametrize("right_scale, expected", [(1.0, 1.0), (2.0, 1 / math.sqrt(2))])
def test_metric_opnorm_examples(right_scale, expected):
    n = 6
    prob = MetricNormProblem.from_matrix(np.eye(n), lambda g: g, lambda g: g / right_scale)
    assert metric_opnorm(prob, tol=1e-12) == pytest.approx(expected, rel=1e-12)


def test_metric_opnorm_zero_operator():
    prob = MetricNormProblem.from_matrix(np.zeros((3, 4)), lambda g: g, lambda g: g)
    est = estimate_opnorm(prob)
    assert est.value == 0.0 and prob.zero


def test_metric_opnorm_matches_dense_svd(rng):
    G = rng.standard_normal((40, 30))
    P = np.diag(rng.uniform(1, 3, 40))
    Q = np.diag(rng.uniform(1, 3, 30))
    prob = MetricNormProblem.from_matrix(G, lambda g: g / np.diag(P), lambda g: g / np.diag(Q))
    exact = np.linalg.svd(np.diag(np.diag(P) ** -0.5) @ G @ np.diag(np.diag(Q) ** -0.5),
                          compute_uv=False)[0]
    est = estimate_opnorm(prob, tol=1e-10, maxiter=5000)
    assert est.value == pytest.approx(exact, rel=1e-6)
    # every iterate is attained, so none exceeds the norm
    assert max(max(h) for h in est.history) <= exact * (1 + 1e-12)


def test_heat_examples():
    v = np.array([1.0, -2.0, 3.0])
    assert np.allclose(heat_apply(sp.csr_matrix((3, 3)), np.ones(3), 0.7, v), v)
    y = heat_apply(sp.diags([1.0]).tocsr(), np.ones(1), math.log(2), np.ones(1))
    assert y[0] == pytest.approx(0.5, rel=1e-12)


@pytest.mark.parametrize("mode, t", [("polynomial", 0.003), ("polynomial", 0.5),
                                     ("rational", 0.05), ("rational", 2.0)])
def test_heat_matches_expm(rng, mode, t):
    form, _ = torus_form(12)
    mass = form.mass * rng.uniform(0.5, 2, form.dim)
    v = rng.standard_normal(form.dim)
    exact = sla.expm(-t * form.K.toarray() / mass[:, None]) @ v
    solver = make_solver(form.K, mass, 1.0, method="direct") if mode == "rational" else None
    y = heat_apply(form.K, mass, t, v, krylov_dim=80, tol=1e-11, solver=solver)
    assert np.linalg.norm(y - exact) <= 1e-8 * np.linalg.norm(exact)


def test_rational_heat_reports_non_convergence(rng):
    # the pole sits at -1, far from 1/t for very short times
    form, _ = torus_form(12)
    solver = make_solver(form.K, form.mass, 1.0, method="direct")
    with pytest.raises(SolverError, match="did not converge"):
        heat_apply(form.K, form.mass, 1e-4, rng.standard_normal(form.dim), krylov_dim=10,
                   tol=1e-12, solver=solver)


def test_fourier_heat_is_exact(rng):
    form, grid = torus_form(8)
    fft = FourierSolver(grid.shape, form.edge_weight, form.mass[0])
    v = rng.standard_normal(form.dim)
    exact = sla.expm(-0.01 * form.K.toarray() / form.mass[0]) @ v
    assert np.allclose(fft.heat(0.01, v), exact, atol=1e-12)


def test_power_of_resolvent_example():
    A = sp.diags([1.0]).tocsr()
    assert power_of_resolvent_apply(A, np.ones(1), 2, np.array([4.0]))[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        power_of_resolvent_apply(A, np.ones(1), 1.5, np.array([4.0]))


def test_csr_matvec_matches_scipy(rng):
    A = sp.random(50, 40, density=0.2, random_state=1, format="csr")
    x = rng.standard_normal(40)
    assert np.allclose(sparsela.csr_matvec(A, x), A @ x, rtol=1e-14, atol=1e-14)


@pytest.mark.parametrize("method", ["fft", "direct"])
def test_lanczos_keeps_full_multiplicity(method):
    # the torus has eight-fold eigenvalues that restarted Lanczos tends to skip
    n = 64
    form, grid = torus_form(n)
    if method == "fft":
        solver = FourierSolver(grid.shape, form.edge_weight, form.mass[0])
    else:
        solver = DirectSolver(form.K, form.mass)
    axis = 4 * n * n * np.sin(np.pi * np.arange(n) / n) ** 2
    exact = np.sort(np.add.outer(axis, axis).ravel())[:30]
    vals, _ = lanczos_smallest(form.K, form.mass, 30, solver=solver)
    assert np.allclose(vals, exact, rtol=1e-9, atol=1e-9)
