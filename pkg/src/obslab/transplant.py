"""Pairs of discrete forms with their identification operators.

Each builder returns a :class:`FormPair`: the limit form, the perturbed
form, and four sparse maps between them,

* ``to_perturbed``       limit -> perturbed, on functions
* ``to_limit``           perturbed -> limit, on functions
* ``form_to_perturbed``  limit -> perturbed, on form-domain elements
* ``form_to_limit``      perturbed -> limit, on form-domain elements

Three constructions are provided: Neumann balls that fade (restriction and
harmonic extension), Dirichlet balls that fade (restriction and a
capacitary cutoff), and Dirichlet balls that solidify onto a region S
(zero extension and a collar cutoff around S).
"""

from dataclasses import dataclass, field
import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from obslab import theory
from obslab.discretize import (
    DIRICHLET, NEUMANN, DiscreteSpace, RadialCutoff, ResolutionError, TubularCutoff,
    assemble_form, classify_cells, sample_cutoff, stamp_balls,
)
from obslab.geometry import (
    GeometryError, ObstacleSet, SeparatedSet, check_cover_multiplicity,
    make_lattice_centers, signed_distance_to_S,
)
from obslab.sparsela import make_solver

NEU_FADE = "neu_fade"
DIR_FADE = "dir_fade"
DIR_SOLID = "dir_solid"


@dataclass
class FormPair:
    limit: object
    perturbed: object
    to_perturbed: sp.csr_matrix
    to_limit: sp.csr_matrix
    form_to_perturbed: sp.csr_matrix
    form_to_limit: sp.csr_matrix
    kind: str
    info: dict = field(default_factory=dict)
    order: int = 2
    solver_method: str = "auto"
    _solvers: dict = field(default_factory=dict, repr=False)

    def _solver(self, form, key):
        if key not in self._solvers:
            full = form.space.is_full
            self._solvers[key] = make_solver(
                form.K, form.mass, 1.0, method=self.solver_method,
                periodic_shape=form.grid.shape if full else None,
                edge_weight=form.edge_weight)
        return self._solvers[key]

    @property
    def limit_solver(self):
        """Solver for ``K + M`` on the limit side."""
        return self._solver(self.limit, "limit")

    @property
    def perturbed_solver(self):
        return self._solver(self.perturbed, "perturbed")

    def release(self):
        """Drop cached factorizations."""
        self._solvers.clear()


def lattice_for_separation(torus, eta, policy="nearest"):
    """Cubic lattice whose half-spacing approximates ``eta``.

    ``policy="floor"`` guarantees half-spacing >= eta; ``"nearest"`` picks
    the count closest to ``L/(2 eta)``.
    """
    ratio = torus.L / (2 * eta)
    count = math.floor(ratio + 1e-12) if policy == "floor" else max(1, round(ratio))
    if count < 1:
        raise GeometryError(f"separation {eta} too large for the torus")
    return make_lattice_centers(torus, torus.L / count)


def _full_space(grid):
    return DiscreteSpace(classify_cells(grid, None, bc=NEUMANN))


def harmonic_extension(grid, obstacles, space):
    """Extension from the perforated space to the whole grid.

    Values inside each ball solve the discrete Laplace equation with data
    taken from the adjacent active cells; all other cells are copied.
    Balls with identical cell patterns share one local solve.
    Returns a sparse ``(grid.size, space.dim)`` matrix.
    """
    m, n = grid.m, grid.n
    rows = [space.index]
    cols = [np.arange(space.dim)]
    vals = [np.ones(space.dim)]
    c = obstacles.centers.centers
    if len(c):
        flat, _, owner = stamp_balls(grid, obstacles.centers, obstacles.radius)
        base = np.floor(c / grid.h - 0.5).astype(np.int64)
        idx = np.stack(np.unravel_index(flat, grid.shape), axis=1)
        cache = {}
        order = np.argsort(owner, kind="stable")
        bounds = np.searchsorted(owner[order], np.arange(len(c) + 1))
        for b in range(len(c)):
            sel = order[bounds[b]:bounds[b + 1]]
            # offsets from the ball's base cell, undoing the periodic wrap
            rel = np.mod(idx[sel] - base[b] + n // 2, n) - n // 2
            key_order = np.lexsort(rel.T[::-1])
            rel = rel[key_order]
            key = rel.tobytes()
            if key not in cache:
                cache[key] = _local_extension(rel, m)
            ring_rel, E_loc = cache[key]
            cells = np.ravel_multi_index(tuple(np.mod(rel + base[b], n).T), grid.shape)
            ring = np.ravel_multi_index(tuple(np.mod(ring_rel + base[b], n).T), grid.shape)
            ring_pos = space.position[ring]
            if np.any(ring_pos < 0):
                raise GeometryError("extension ring meets another obstacle")
            r_idx, c_idx = np.nonzero(E_loc)
            rows.append(cells[r_idx])
            cols.append(ring_pos[c_idx])
            vals.append(E_loc[r_idx, c_idx])
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(grid.size, space.dim))


def _local_extension(rel, m):
    """Dense map from ring values to interior values for one cell pattern."""
    lookup = {tuple(p): i for i, p in enumerate(rel)}
    ring = {}
    ri, rj, bi, bj = [], [], [], []
    for i, p in enumerate(rel):
        for axis in range(m):
            for step in (1, -1):
                q = p.copy()
                q[axis] += step
                t = tuple(q)
                j = lookup.get(t)
                if j is not None:
                    ri.append(i)
                    rj.append(j)
                else:
                    k = ring.setdefault(t, len(ring))
                    bi.append(i)
                    bj.append(k)
    nb = len(rel)
    L = sp.csc_matrix((np.full(len(ri), -1.0), (ri, rj)), shape=(nb, nb)) + 2 * m * sp.eye(nb)
    B = sp.csc_matrix((np.ones(len(bi)), (bi, bj)), shape=(nb, len(ring))).toarray()
    E = spla.splu(sp.csc_matrix(L)).solve(B)
    ring_rel = np.array(sorted(ring, key=ring.get), dtype=np.int64).reshape(-1, m)
    return ring_rel, E


def _fading_centers(grid, eta, centers):
    if centers is None:
        centers = lattice_for_separation(grid.torus, eta)
    return centers


def build_neu_fade(eps, eta, grid, centers=None, min_resolution=8.0):
    """Neumann balls of radius ``eps`` around an ``eta``-separated set.

    Limit: the whole torus. ``to_perturbed`` restricts, ``to_limit`` extends
    by zero, ``form_to_perturbed`` restricts too and ``form_to_limit`` is the
    harmonic extension.
    """
    centers = _fading_centers(grid, eta, centers)
    obstacles = ObstacleSet(centers, eps)
    limit = assemble_form(_full_space(grid))
    space = DiscreteSpace(classify_cells(grid, obstacles, min_resolution, bc=NEUMANN))
    perturbed = assemble_form(space)
    extend = space.embedding(limit.space)
    restrict = extend.T.tocsr()
    E = harmonic_extension(grid, obstacles, space)
    info = _info(NEU_FADE, grid, eps, centers, eta=eta)
    return FormPair(limit, perturbed, restrict, extend, restrict.copy(), E.tocsr(), NEU_FADE, info)


def build_dir_fade(eps, eps_plus, eta, gamma, grid, centers=None, min_resolution=8.0):
    """Dirichlet balls of radius ``eps`` that fade.

    ``to_perturbed`` restricts, ``to_limit`` and ``form_to_limit`` extend by
    zero, ``form_to_perturbed`` multiplies by the capacitary cutoff that vanishes inside ``eps`` and is 1 beyond
    ``eps_plus`` (default ``eps^(1-gamma) eta^gamma``).
    """
    centers = _fading_centers(grid, eta, centers)
    sep = centers.sep if len(centers) else eta
    if eps_plus is None:
        eps_plus = eps ** (1 - gamma) * sep ** gamma
    if not eps < eps_plus <= sep / 4 * (1 + 1e-12):
        raise GeometryError(
            f"need eps < eps_plus <= eta/4, got eps={eps}, eps_plus={eps_plus}, eta={sep}")
    if eps_plus / grid.h < 4:
        raise ResolutionError(f"eps_plus/h = {eps_plus / grid.h:.3g} below 4")
    obstacles = ObstacleSet(centers, eps)
    limit = assemble_form(_full_space(grid))
    space = DiscreteSpace(classify_cells(grid, obstacles, min_resolution, bc=DIRICHLET))
    perturbed = assemble_form(space)
    extend = space.embedding(limit.space)
    restrict = extend.T.tocsr()
    chi = sample_cutoff(grid, RadialCutoff(centers, eps, eps_plus), space) if len(centers) \
        else np.ones(space.dim)
    cut = (sp.diags(chi) @ restrict).tocsr()
    info = _info(DIR_FADE, grid, eps, centers, eta=eta, eps_plus=eps_plus, gamma=gamma)
    return FormPair(limit, perturbed, restrict, extend, cut, extend.copy(), DIR_FADE, info)


def solid_centers(S, eps, spacing_factor=2.0):
    """Lattice points of spacing ``spacing_factor * eps`` whose eps-ball lies in S."""
    torus = S.torus
    spacing = spacing_factor * eps
    count = round(torus.L / spacing)
    lattice = make_lattice_centers(torus, torus.L / count)
    inside = signed_distance_to_S(lattice.centers, S) <= -eps * (1 - 1e-12)
    return SeparatedSet(torus, lattice.centers[inside], min(lattice.sep, eps))


def band_fit_width(grid, S, centers, eta):
    """Widest collar ``0 < sd < w`` whose cell centers all lie within eta of a center."""
    pts = grid.cell_centers()
    sd = signed_distance_to_S(pts, S)
    near = (sd > 0) & (sd < eta)
    dist, _ = centers.nearest(pts[near])
    uncovered = sd[near][dist > eta]
    return float(uncovered.min()) if len(uncovered) else float(eta)


def build_dir_solid(eps, eta, eps_tilde, S, grid, centers=None, gamma=0.5,
                    min_resolution=8.0, spacing_factor=2.0):
    """Dirichlet balls of radius ``eps`` packed in S, limit ``X \\ S``.

    ``to_perturbed`` and ``form_to_perturbed`` extend by zero from the limit
    into the perforated space, ``to_limit`` restricts, ``form_to_limit``
    multiplies by the collar cutoff of width
    ``eps_tilde`` and restricts. ``eps_tilde=None`` uses the capacity
    scale to the power gamma, clamped to the collar covered by the
    eta-balls.
    """
    if centers is None:
        centers = solid_centers(S, eps, spacing_factor)
    if len(centers) == 0:
        raise GeometryError("no ball fits inside S")
    if np.any(signed_distance_to_S(centers.centers, S) > -eps * (1 - 1e-9)):
        raise GeometryError("obstacle balls must lie inside S")
    covers, mult = check_cover_multiplicity(centers, eta, S)
    if not covers:
        raise GeometryError(f"the {eta}-balls do not cover S")
    fit = band_fit_width(grid, S, centers, eta)
    clamped = False
    if eps_tilde is None:
        eps_tilde = theory.solid_collar_width(grid.m, eps, eta, gamma)
        cap = min(fit, 0.999 * S.collar_width)
        if eps_tilde > cap:
            eps_tilde, clamped = cap, True
    obstacles = ObstacleSet(centers, eps)
    lim_space = DiscreteSpace(classify_cells(grid, S, min_resolution, bc=DIRICHLET))
    per_space = DiscreteSpace(classify_cells(grid, obstacles, min_resolution, bc=DIRICHLET))
    limit = assemble_form(lim_space)
    perturbed = assemble_form(per_space)
    extend = lim_space.embedding(per_space)
    restrict = extend.T.tocsr()
    chi = sample_cutoff(grid, TubularCutoff(S, eps_tilde), per_space)
    cut = (restrict @ sp.diags(chi)).tocsr()
    info = _info(DIR_SOLID, grid, eps, centers, eta=eta, eps_tilde=eps_tilde, gamma=gamma,
                 multiplicity=mult, eps_tilde_clamped=clamped, band_fit=fit)
    return FormPair(limit, perturbed, extend, restrict, extend.copy(), cut, DIR_SOLID, info)


def _info(kind, grid, eps, centers, **extra):
    info = {"scenario": kind, "m": grid.m, "n": grid.n, "L": grid.torus.L, "h": grid.h,
            "eps": eps, "centers": len(centers),
            "sep": centers.sep if len(centers) else None,
            "eps_over_h": eps / grid.h}
    info.update(extra)
    return info


def adjoint_mismatch(pair, trials=100, seed=0):
    """Largest ``|<to_perturbed f, u> - <f, to_limit u>| / (|f| |u|)`` over random pairs."""
    rng = np.random.default_rng(seed)
    lim, per = pair.limit.space, pair.perturbed.space
    worst = 0.0
    for _ in range(trials):
        f = rng.standard_normal(lim.dim)
        u = rng.standard_normal(per.dim)
        lhs = per.inner(pair.to_perturbed @ f, u)
        rhs = lim.inner(f, pair.to_limit @ u)
        worst = max(worst, abs(lhs - rhs) / (lim.norm(f) * per.norm(u)))
    return worst


def composition_defect(pair):
    """Exact identity check: ``to_perturbed to_limit = id`` (fading) or
    ``to_limit to_perturbed = id`` (solidifying).

    For Neumann fading ``to_perturbed form_to_limit = id`` is checked as well.
    Returns the largest entrywise deviation.
    """
    if pair.kind == DIR_SOLID:
        products = [pair.to_limit @ pair.to_perturbed]
    else:
        products = [pair.to_perturbed @ pair.to_limit]
    if pair.kind == NEU_FADE:
        products.append(pair.to_perturbed @ pair.form_to_limit)
    worst = 0.0
    for P in products:
        D = (P - sp.eye(P.shape[0])).tocsr()
        D.eliminate_zeros()
        worst = max(worst, float(abs(D).max()) if D.nnz else 0.0)
    return worst
