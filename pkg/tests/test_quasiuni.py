import numpy as np
import pytest
import scipy.linalg as sla

from obslab import quasiuni as qu
from obslab import theory
from obslab import transplant as tp
from obslab.discretize import build_grid
from obslab.geometry import ObstacleSet, SeparatedSet, SolidRegion, Torus, make_lattice_centers


def small_pairs():
    torus = Torus(2)
    g24, g32 = build_grid(torus, 24), build_grid(torus, 32)
    S = SolidRegion.box(torus, [0.25, 0.25], [0.75, 0.75])
    return {
        "neu": tp.build_neu_fade(0.125, 0.25, g24, min_resolution=3),
        "dir": tp.build_dir_fade(3 / 32, 0.125, 0.5, 0.5, g32, min_resolution=3),
        "solid": tp.build_dir_solid(1 / 16, 1 / 8, None, S, g32, min_resolution=2),
    }


PAIRS = small_pairs()


def spd_power(A, p):
    w, V = np.linalg.eigh(A)
    return (V * w ** p) @ V.T


def weighted_norm(T, out_metric, in_metric):
    """sup |T f|_out / |f|_in for dense SPD metrics."""
    X = spd_power(out_metric, 0.5) @ T @ spd_power(in_metric, -0.5)
    return float(np.linalg.svd(X, compute_uv=False)[0])


def dense_parts(pair):
    M = np.diag(pair.limit.mass)
    Mt = np.diag(pair.perturbed.mass)
    K, Kt = pair.limit.K.toarray(), pair.perturbed.K.toarray()
    maps = (pair.to_perturbed, pair.to_limit, pair.form_to_perturbed, pair.form_to_limit)
    return (M, Mt, K, Kt) + tuple(X.toarray() for X in maps)


def dense_delta(pair):
    M, Mt, K, Kt, fwd, back, fwd1, back1 = dense_parts(pair)
    A, At = K + M, Kt + Mt
    In, Ip = np.eye(len(M)), np.eye(len(Mt))
    fwd_adj = np.linalg.solve(M, fwd.T @ Mt)
    S = Kt @ fwd1 - back1.T @ K
    # bilinear form mismatch against |u|_At and |f|_{A M^-1 A} = |M^-1/2 A f|
    B = spd_power(M, -0.5) @ A
    d = np.linalg.svd(spd_power(At, -0.5) @ S @ np.linalg.inv(B), compute_uv=False)[0]
    return {
        "a_norm": max(0.0, weighted_norm(fwd, Mt, M) - 1),
        "a_adj": weighted_norm(fwd_adj - back, M, Mt),
        "b1": weighted_norm(In - back @ fwd, M, A),
        "b2": weighted_norm(Ip - fwd @ back, Mt, At),
        "c1": weighted_norm(fwd1 - fwd, Mt, A),
        "c2": weighted_norm(back1 - back, M, At),
        "d": d,
    }


@pytest.mark.parametrize("name", list(PAIRS))
def test_delta_components_match_dense(name):
    pair = PAIRS[name]
    est = qu.estimate_delta(pair, tol=1e-10, maxiter=5000)
    exact = dense_delta(pair)
    for comp in qu.COMPONENTS:
        got, want = getattr(est, comp), exact[comp]
        assert got == pytest.approx(want, rel=1e-5, abs=1e-9), comp


@pytest.mark.parametrize("name", list(PAIRS))
def test_resolvent_defect_matches_dense_and_bounds(name):
    pair = PAIRS[name]
    M, Mt, K, Kt, fwd, *_ = dense_parts(pair)
    T = fwd @ np.linalg.solve(K + M, M) - np.linalg.solve(Kt + Mt, Mt) @ fwd
    exact = weighted_norm(T, Mt, M)
    got = qu.resolvent_defect(pair, tol=1e-10, maxiter=5000)
    assert got == pytest.approx(exact, rel=1e-5)
    delta = qu.estimate_delta(pair, tol=1e-10, maxiter=5000)
    assert got <= delta.resolvent_bound * (1 + 1e-6)
    assert delta.resolvent_bound <= 7 * delta.max


@pytest.mark.parametrize("name", ["neu", "solid"])
def test_heat_defect_matches_dense(name):
    pair = PAIRS[name]
    M, Mt, K, Kt, fwd, *_ = dense_parts(pair)
    t = 0.1
    T = fwd @ sla.expm(-t * np.linalg.solve(M, K)) - sla.expm(-t * np.linalg.solve(Mt, Kt)) @ fwd
    got = qu.heat_defect(pair, t, tol=1e-10, maxiter=5000)
    assert got == pytest.approx(weighted_norm(T, Mt, M), rel=1e-5)
    # continuity probe in t
    assert abs(qu.heat_defect(pair, t + 1e-3, tol=1e-10, maxiter=5000) - got) < 0.02 * got


def test_empty_obstacle_pair_is_unitary():
    grid = build_grid(Torus(2), 32)
    pair = tp.build_neu_fade(0.125, 0.25, grid, SeparatedSet.empty(grid.torus))
    delta = qu.estimate_delta(pair)
    assert delta.max <= 1e-8
    assert qu.resolvent_defect(pair) <= 1e-8
    assert qu.heat_defect(pair, 0.5) <= 1e-7
    rows = qu.eigen_transfer(pair, k=10)
    assert max(r.transfer_error for r in rows) <= 1e-6


def test_ground_state_transfer_closed_form():
    pair = PAIRS["neu"]
    rows = qu.eigen_transfer(pair, k=3)
    assert rows[0].lambda_limit == pytest.approx(0, abs=1e-10)
    assert rows[0].lambda_perturbed == pytest.approx(0, abs=1e-10)
    assert rows[0].transfer_error == pytest.approx(qu.ground_state_transfer(pair), rel=1e-8)


@pytest.mark.parametrize("a, b, cut, expected", [([0, 1, 4], [0, 1.1, 4], 5, 0.1),
                                                 ([0, 1, 4], [0, 1, 4], 5, 0.0),
                                                 ([0], [0, 0.5], 1, 0.5)])
def test_hausdorff_examples(a, b, cut, expected):
    assert qu.spectral_hausdorff(a, b, cut) == pytest.approx(expected)


def test_hausdorff_empty_truncation():
    assert qu.spectral_hausdorff([2.0], [0.5], 1.0) is None


def test_windows_and_clusters():
    vals = [0.0, 39.4, 39.4, 39.4, 39.4, 78.9, 78.9]
    assert qu.clusters(vals) == [(0, 1), (1, 5), (5, 7)]
    assert qu.gap_window(vals, 2) == pytest.approx((39.4 + 78.9) / 2)
    assert qu.spectral_window([1.0, 10.0]) == pytest.approx(9.0)
    with pytest.raises(ValueError):
        qu.gap_window(vals, 6)


def test_degenerate_torus_cluster_is_aligned():
    # torus spectrum has multiplicity 4; transfer stays exact after alignment
    grid = build_grid(Torus(2), 32)
    pair = tp.build_neu_fade(0.125, 0.25, grid, SeparatedSet.empty(grid.torus))
    rows = qu.eigen_transfer(pair, k=9)
    assert [r.cluster_size for r in rows[:5]] == [1, 4, 4, 4, 4]
    assert max(max(r.angles) for r in rows) < 1e-6


def ball(center, radius, torus):
    from obslab.geometry import torus_distance

    return lambda x: torus_distance(x, center, torus) < radius


def test_nonconcentration_examples():
    torus = Torus(2)
    grid = build_grid(torus, 64)
    c = np.array([0.5, 0.5])
    outer = ball(c, 0.25, torus)
    assert qu.nonconcentration_constant(outer, outer, grid) == pytest.approx(1.0, abs=1e-6)
    assert qu.nonconcentration_constant(None, outer, grid) == 0.0
    val = qu.nonconcentration_constant(ball(c, 0.25 / 8, torus), outer, grid)
    assert 0 < val <= theory.tau(2, 1 / 8)
    with pytest.raises(ValueError):
        qu.nonconcentration_constant(outer, ball(c, 0.1, torus), grid)


def test_nonconcentration_monotone_in_inner_radius():
    torus = Torus(2)
    grid = build_grid(torus, 64)
    c = np.array([0.5, 0.5])
    outer = ball(c, 0.25, torus)
    vals = [qu.nonconcentration_constant(ball(c, r, torus), outer, grid)
            for r in (0.03, 0.06, 0.09, 0.12)]
    assert all(b >= a - 1e-8 for a, b in zip(vals, vals[1:]))


def test_nonconcentration_union_equals_single_ball():
    torus = Torus(2)
    grid = build_grid(torus, 64)
    centers = make_lattice_centers(torus, 0.5)
    inner, outer = ObstacleSet(centers, 0.0625), ObstacleSet(centers, 0.25)
    union = qu.nonconcentration_constant(inner, outer, grid)
    c = centers.centers[0]
    single = qu.nonconcentration_constant(ball(c, 0.0625, torus), ball(c, 0.25, torus), grid)
    assert union == pytest.approx(single, rel=1e-6)


def test_solid_eigenvalues_rise_toward_limit():
    torus = Torus(2)
    S = SolidRegion.box(torus, [0.25, 0.25], [0.75, 0.75])
    grid = build_grid(torus, 128)
    firsts = []
    for eps in (1 / 8, 1 / 16):
        pair = tp.build_dir_solid(eps, 2 * eps, None, S, grid)
        lim, per = qu.pair_spectra(pair, 5)
        assert np.all(per.values <= lim.values * (1 + 1e-8))
        firsts.append(per.values[0])
    assert firsts[0] < firsts[1] < lim.values[0]
