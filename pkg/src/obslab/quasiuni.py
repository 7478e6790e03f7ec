"""Measured closeness of two forms and its spectral consequences.

The seven closeness components of a :class:`~obslab.transplant.FormPair`
are operator norms between weighted spaces, estimated by power iteration.
With ``A = K + M`` on each side, ``R = A^{-1} M``, and ``P, P1, L, L1``
short for ``to_perturbed, form_to_perturbed, to_limit, form_to_limit``:

========  ==============================  ==================  =========
name      measures                        left metric         right
========  ==============================  ==================  =========
a_norm    ``max(0, |P| - 1)``             perturbed L2        limit L2
a_adj     ``P* - L``                      limit L2            pert. L2
b1        ``(1 - L P) R^1/2``             limit L2            limit A
b2        ``(1 - P L) R~^1/2``            perturbed L2        pert. A
c1        ``(P1 - P) R^1/2``              perturbed L2        limit A
c2        ``(L1 - L) R~^1/2``             limit L2            pert. A
d         form mismatch on ``P1, L1``     perturbed A         limit A M^-1 A
========  ==============================  ==================  =========

The resolvent defect ``|P R - R~ P|`` is bounded by
``2 c1 + d + 2 c2 + 2 a_adj``, hence by seven times the largest component.
"""

from dataclasses import dataclass, field, asdict
import math

import numpy as np
import scipy.sparse as sp

from obslab.discretize import NEUMANN, CellMask, DiscreteSpace, assemble_form
from obslab.geometry import ObstacleSet, SolidRegion, in_obstacle, signed_distance_to_S
from obslab.sparsela import (
    FourierSolver, MetricNormProblem, estimate_opnorm, heat_apply, lanczos_smallest,
    make_solver,
)

COMPONENTS = ("a_norm", "a_adj", "b1", "b2", "c1", "c2", "d")


@dataclass
class DeltaBreakdown:
    a_norm: float
    a_adj: float
    b1: float
    b2: float
    c1: float
    c2: float
    d: float
    iterations: dict = field(default_factory=dict)
    converged: bool = True

    @property
    def max(self):
        return max(getattr(self, c) for c in COMPONENTS)

    @property
    def resolvent_bound(self):
        """``2 c1 + d + 2 c2 + 2 a_adj``."""
        return 2 * self.c1 + self.d + 2 * self.c2 + 2 * self.a_adj

    def as_dict(self):
        out = {c: getattr(self, c) for c in COMPONENTS}
        out["max"] = self.max
        return out


@dataclass
class DefectReport:
    resolvent: float
    delta_max: float
    refined_bound: float
    heat: dict = field(default_factory=dict)
    slack: float = 0.05

    @property
    def seven_delta_bound(self):
        return 7 * self.delta_max

    @property
    def certified(self):
        return self.resolvent <= self.seven_delta_bound * (1 + self.slack) + 1e-14

    def as_dict(self):
        out = asdict(self)
        out["seven_delta_bound"] = self.seven_delta_bound
        out["certified"] = self.certified
        return out


def _diag_solve(mass):
    return lambda g: g / mass


def _norm_opts(tol, restarts, seed, maxiter):
    return dict(tol=tol, restarts=restarts, seed=seed, maxiter=maxiter)


def estimate_delta(pair, tol=1e-6, restarts=3, seed=0, maxiter=500):
    """All seven closeness components of a form pair."""
    lim, per = pair.limit, pair.perturbed
    M, Mt = sp.diags(lim.mass), sp.diags(per.mass)
    In, Ip = sp.eye(lim.dim), sp.eye(per.dim)
    S, St = pair.limit_solver, pair.perturbed_solver
    Ml, Mp = _diag_solve(lim.mass), _diag_solve(per.mass)

    def q_second(g):
        # (A M^{-1} A)^{-1} = A^{-1} M A^{-1}
        return S.solve(lim.mass * S.solve(g))

    problems = {
        "a_norm": (Mt @ pair.to_perturbed, Mp, Ml),
        "a_adj": (pair.to_perturbed.T @ Mt - M @ pair.to_limit, Ml, Mp),
        "b1": (M @ (In - pair.to_limit @ pair.to_perturbed), Ml, S.solve),
        "b2": (Mt @ (Ip - pair.to_perturbed @ pair.to_limit), Mp, St.solve),
        "c1": (Mt @ (pair.form_to_perturbed - pair.to_perturbed), Mp, S.solve),
        "c2": (M @ (pair.form_to_limit - pair.to_limit), Ml, St.solve),
        "d": (per.K @ pair.form_to_perturbed - pair.form_to_limit.T @ lim.K, St.solve, q_second),
    }
    values, iters = {}, {}
    converged = True
    for k, name in enumerate(COMPONENTS):
        G, left, right = problems[name]
        prob = MetricNormProblem.from_matrix(G, left, right)
        est = estimate_opnorm(prob, **_norm_opts(tol, restarts, seed + k, maxiter))
        values[name] = est.value
        iters[name] = est.iterations
        converged &= est.converged
    values["a_norm"] = max(0.0, values["a_norm"] - 1.0)
    return DeltaBreakdown(**values, iterations=iters, converged=converged)


def _resolvent_problem(pair, k):
    lim, per = pair.limit, pair.perturbed
    m, mt = lim.mass, per.mass
    S, St = pair.limit_solver, pair.perturbed_solver
    ident, ident_t = pair.to_perturbed, pair.to_perturbed.T.tocsr()
    extra = (k - 2) // 2

    def smooth(f):
        for _ in range(extra):
            f = S.solve(m * f)
        return f

    def smooth_t(g):
        for _ in range(extra):
            g = m * S.solve(g)
        return g

    def forward(f):
        f = smooth(f)
        return mt * (ident @ S.solve(m * f) - St.solve(mt * (ident @ f)))

    def adjoint(u):
        v = mt * u
        return smooth_t(m * S.solve(ident_t @ v) - ident_t @ (mt * St.solve(v)))

    return MetricNormProblem(forward, adjoint, _diag_solve(mt), _diag_solve(m), per.dim, lim.dim)


def resolvent_defect(pair, k=2, tol=1e-6, restarts=3, seed=100, maxiter=500):
    """``|P R - R~ P|`` in L2, times ``R^((k-2)/2)`` for even ``k > 2``."""
    if k < 2 or k % 2:
        raise ValueError("order must be an even integer >= 2")
    prob = _resolvent_problem(pair, k)
    return estimate_opnorm(prob, **_norm_opts(tol, restarts, seed, maxiter)).value


def _heat_operator(form, solver, t, tol):
    if isinstance(solver, FourierSolver):
        return lambda v: solver.heat(t, v)
    return lambda v: heat_apply(form.K, form.mass, t, v, krylov_dim=80, tol=tol, solver=solver)


def heat_defect(pair, t, tol=1e-6, restarts=3, seed=200, maxiter=500, heat_tol=1e-9):
    """``|P exp(-t H) - exp(-t H~) P|`` in L2, ``H`` the discrete Laplacian."""
    lim, per = pair.limit, pair.perturbed
    m, mt = lim.mass, per.mass
    E = _heat_operator(lim, pair.limit_solver, t, heat_tol)
    Et = _heat_operator(per, pair.perturbed_solver, t, heat_tol)
    ident, ident_t = pair.to_perturbed, pair.to_perturbed.T.tocsr()

    def forward(f):
        return mt * (ident @ E(f) - Et(ident @ f))

    def adjoint(u):
        # E^T = M E M^{-1}
        return m * E(ident_t @ (mt * u) / m) - ident_t @ (mt * Et(u))

    prob = MetricNormProblem(forward, adjoint, _diag_solve(mt), _diag_solve(m), per.dim, lim.dim)
    return estimate_opnorm(prob, **_norm_opts(tol, restarts, seed, maxiter)).value


def defect_report(pair, delta, heat_times=(), k=2, tol=1e-6, restarts=3, seed=0,
                  maxiter=500, slack=0.05):
    res = resolvent_defect(pair, k, tol, restarts, seed + 100, maxiter)
    heat = {float(t): heat_defect(pair, t, tol, restarts, seed + 200, maxiter) for t in heat_times}
    return DefectReport(res, delta.max, delta.resolvent_bound, heat, slack)


@dataclass
class Spectrum:
    values: np.ndarray
    vectors: np.ndarray


def form_spectrum(form, k, solver=None, tol=1e-10):
    k = min(k, form.dim)
    vals, vecs = lanczos_smallest(form.K, form.mass, k, tol=tol, solver=solver)
    return Spectrum(vals, vecs)


def pair_spectra(pair, k, tol=1e-10):
    """Smallest ``k`` eigenpairs of both sides, reusing the cached solvers."""
    lim = form_spectrum(pair.limit, k, pair.limit_solver, tol)
    per = form_spectrum(pair.perturbed, k, pair.perturbed_solver, tol)
    return lim, per


def spectral_window(values, fraction=0.9):
    """Default cut ``fraction * largest computed eigenvalue``."""
    return fraction * float(np.max(values))


def gap_window(values, index, rel_gap=1e-6):
    """Midpoint of the first spectral gap at or after position ``index`` (1-based)."""
    v = np.sort(np.asarray(values, dtype=float))
    for j in range(index - 1, len(v) - 1):
        if v[j + 1] - v[j] > rel_gap * max(abs(v[j + 1]), 1.0):
            return 0.5 * (v[j] + v[j + 1])
    raise ValueError("no spectral gap found after the requested index")


def spectral_hausdorff(spec_a, spec_b, cut):
    """Hausdorff distance of the two spectra truncated to ``[0, cut]``.

    Returns None when either truncation is empty.
    """
    a = np.asarray([x for x in spec_a if x <= cut], dtype=float)
    b = np.asarray([x for x in spec_b if x <= cut], dtype=float)
    if a.size == 0 or b.size == 0:
        return None
    d = np.abs(a[:, None] - b[None, :])
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def clusters(values, rel_gap=1e-6):
    """Index ranges ``[start, stop)`` of eigenvalue clusters."""
    v = np.asarray(values, dtype=float)
    out, start = [], 0
    for j in range(1, len(v) + 1):
        if j == len(v) or v[j] - v[j - 1] > rel_gap * max(abs(v[j]), 1.0):
            out.append((start, j))
            start = j
    return out


@dataclass
class TransferRow:
    index: int
    lambda_limit: float
    lambda_perturbed: float
    transfer_error: float
    cluster: int
    cluster_size: int
    angles: list
    ambiguous: bool


def eigen_transfer(pair, spectra=None, k=10, rel_gap=1e-6):
    """Compare limit eigenvectors carried over by ``to_perturbed`` with perturbed ones.

    Pairing follows the index order. Inside a cluster of the limit spectrum
    the perturbed eigenvectors with the same indices are aligned by an
    orthogonal Procrustes fit; the principal angles between the two
    subspaces are reported as well.
    """
    lim, per = spectra if spectra is not None else pair_spectra(pair, k)
    mt = pair.perturbed.mass
    count = min(len(lim.values), len(per.values))
    rows = []
    per_clusters = clusters(per.values[:count], rel_gap)
    per_edges = {s for s, _ in per_clusters} | {e for _, e in per_clusters}
    for cid, (s, e) in enumerate(clusters(lim.values[:count], rel_gap)):
        X = pair.to_perturbed @ lim.vectors[:, s:e]
        Y = per.vectors[:, s:e]
        C = Y.T @ (mt[:, None] * X)
        U, sig, Vt = np.linalg.svd(C)
        Q = U @ Vt
        aligned = Y @ Q
        err = np.sqrt(np.sum(mt[:, None] * (X - aligned) ** 2, axis=0))
        angles = _principal_angles(X, Y, mt)
        ambiguous = not ({s, e} <= per_edges | {count})
        for j in range(s, e):
            rows.append(TransferRow(j, float(lim.values[j]), float(per.values[j]),
                                    float(err[j - s]), cid, e - s, angles, ambiguous))
    return rows


def _principal_angles(X, Y, weights):
    w = np.sqrt(weights)[:, None]
    qx, _ = np.linalg.qr(w * X)
    qy, _ = np.linalg.qr(w * Y)
    s = np.linalg.svd(qx.T @ qy, compute_uv=False)
    return [float(a) for a in np.arccos(np.clip(s, -1.0, 1.0))]


def _region_mask(grid, region):
    pts = grid.cell_centers()
    if region is None:
        return np.zeros(grid.size, dtype=bool)
    if isinstance(region, np.ndarray) and region.dtype == bool:
        return region.ravel()
    if isinstance(region, ObstacleSet):
        return in_obstacle(pts, region)
    if isinstance(region, SolidRegion):
        return signed_distance_to_S(pts, region) <= 0
    return np.asarray(region(pts), dtype=bool)


def nonconcentration_constant(inner, outer, grid, tol=1e-8, restarts=3, seed=0, maxiter=500,
                              solver_method="auto"):
    """``sup |f|_{L2(inner)} / |f|_{H1(outer)}`` over grid functions on ``outer``.

    Regions are boolean masks, obstacle sets, solid regions or point
    predicates; cells are taken by their centers. The H1 norm uses the
    Neumann form of the outer cell set.
    """
    in_mask = _region_mask(grid, inner)
    out_mask = _region_mask(grid, outer)
    if np.any(in_mask & ~out_mask):
        raise ValueError("inner region must lie inside the outer region")
    if not in_mask.any():
        return 0.0
    space = DiscreteSpace(CellMask(grid, out_mask, NEUMANN))
    form = assemble_form(space)
    sel = space.position[np.flatnonzero(in_mask)]
    w = space.weight
    G = sp.csr_matrix((np.full(len(sel), w), (np.arange(len(sel)), sel)),
                      shape=(len(sel), space.dim))
    solver = make_solver(form.K, form.mass, 1.0, method=solver_method)
    prob = MetricNormProblem.from_matrix(G, lambda g: g / w, solver.solve)
    return estimate_opnorm(prob, tol=tol, restarts=restarts, seed=seed, maxiter=maxiter).value


def extension_norm(pair, tol=1e-6, restarts=3, seed=300, maxiter=500):
    """H1 -> H1 norm of ``form_to_limit`` (the harmonic extension for Neumann fading)."""
    lim = pair.limit
    G = sp.diags(lim.mass) @ pair.form_to_limit + lim.K @ pair.form_to_limit
    prob = MetricNormProblem.from_matrix(G, pair.limit_solver.solve, pair.perturbed_solver.solve)
    return estimate_opnorm(prob, tol=tol, restarts=restarts, seed=seed, maxiter=maxiter).value


def ground_state_transfer(pair):
    """Closed-form transfer error of the constant ground state: ``1 - sqrt(V~/V)``."""
    v_lim = pair.limit.space.weight * pair.limit.dim
    v_per = pair.perturbed.space.weight * pair.perturbed.dim
    return 1.0 - math.sqrt(v_per / v_lim)
