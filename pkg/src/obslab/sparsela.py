"""Sparse solvers, smallest eigenpairs, metric operator norms, heat flow.

Operators are ``scipy.sparse`` CSR matrices together with a positive
diagonal mass vector. Shifted systems ``(A + s*M) x = b`` are handled by a
solver object; three are available: exact FFT diagonalisation for the full
periodic grid, a sparse LU factorization, and Jacobi-preconditioned CG.
"""

from dataclasses import dataclass, field
import logging
import math

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from obslab._backend import kernels

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """A linear or eigen solver did not meet its residual contract."""


def _csr_arrays(A):
    A = sp.csr_matrix(A, dtype=float)
    A.sort_indices()
    return (np.ascontiguousarray(A.indptr, dtype=np.intc),
            np.ascontiguousarray(A.indices, dtype=np.intc),
            np.ascontiguousarray(A.data, dtype=float))


def csr_matvec(A, x):
    return kernels.csr_matvec(*_csr_arrays(A), np.ascontiguousarray(x, dtype=float))


def cg_solve(A, shift, b, tol=1e-9, mass=None, x0=None, maxiter=None):
    """Solve ``(A + shift * diag(mass)) x = b`` by preconditioned CG.

    ``mass`` defaults to ones. The relative residual is re-checked after the
    iteration and a SolverError is raised if it exceeds ``tol``.
    """
    b = np.ascontiguousarray(b, dtype=float)
    n = len(b)
    if A.shape != (n, n):
        raise ValueError(f"operator shape {A.shape} does not match rhs length {n}")
    mass = np.ones(n) if mass is None else np.ascontiguousarray(mass, dtype=float)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    maxiter = 10 * n if maxiter is None else maxiter
    arrays = _csr_arrays(A)
    iters, _ = kernels.cg_shifted(*arrays, mass, float(shift), b, x, float(tol), int(maxiter))
    bnorm = np.linalg.norm(b)
    resid = np.linalg.norm(b - A @ x - shift * mass * x)
    if bnorm > 0 and resid > tol * bnorm * (1 + 1e-6):
        raise SolverError(
            f"CG stopped after {iters} iterations at relative residual {resid / bnorm:.3e}")
    return x


class ShiftedSolver:
    """Solves ``(A + shift * M) x = b`` for a fixed operator and shift."""

    shift = 1.0
    dim = 0

    def solve(self, b):
        raise NotImplementedError

    def __call__(self, b):
        return self.solve(b)


class DirectSolver(ShiftedSolver):
    """Sparse LU (minimum degree on A^T + A), residual-checked with one refinement."""

    def __init__(self, A, mass, shift=1.0, rtol=1e-9):
        self.shift = shift
        self.dim = A.shape[0]
        self.rtol = rtol
        self.matrix = (sp.csr_matrix(A) + shift * sp.diags(mass)).tocsc()
        try:
            self.lu = spla.splu(self.matrix, permc_spec="MMD_AT_PLUS_A",
                                diag_pivot_thresh=0.0,
                                options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        x = self.lu.solve(b)
        bnorm = np.linalg.norm(b)
        if bnorm == 0:
            return x
        r = b - self.matrix @ x
        if np.linalg.norm(r) > self.rtol * bnorm:
            x += self.lu.solve(r)
            r = b - self.matrix @ x
            if np.linalg.norm(r) > 10 * self.rtol * bnorm:
                raise SolverError(
                    f"direct solve residual {np.linalg.norm(r) / bnorm:.3e}")
        return x


class CGSolver(ShiftedSolver):
    def __init__(self, A, mass, shift=1.0, tol=1e-9):
        self.A = sp.csr_matrix(A)
        self.mass = np.asarray(mass, dtype=float)
        self.shift = shift
        self.dim = A.shape[0]
        self.tol = tol

    def solve(self, b):
        return cg_solve(self.A, self.shift, b, tol=self.tol, mass=self.mass)


class FourierSolver(ShiftedSolver):
    """Exact solves and heat flow for the periodic 2m-point Laplacian.

    ``edge_weight * graph_laplacian + shift * cell_weight`` is diagonal in
    the discrete Fourier basis.
    """

    def __init__(self, shape, edge_weight, cell_weight, shift=1.0):
        self.shape = tuple(shape)
        self.dim = int(np.prod(self.shape))
        self.shift = shift
        self.cell_weight = cell_weight
        symbol = np.zeros([n for n in self.shape[:-1]] + [self.shape[-1] // 2 + 1])
        for axis, n in enumerate(self.shape):
            k = np.arange(n) if axis < len(self.shape) - 1 else np.arange(n // 2 + 1)
            s = 2.0 - 2.0 * np.cos(2 * np.pi * k / n)
            view = [1] * len(self.shape)
            view[axis] = len(k)
            symbol = symbol + s.reshape(view)
        self.laplacian_symbol = edge_weight * symbol
        self.symbol = self.laplacian_symbol + shift * cell_weight
        if np.any(self.symbol == 0):
            raise SolverError("shifted periodic operator is singular")

    def _apply(self, multiplier, b):
        b = np.asarray(b, dtype=float).reshape(self.shape)
        axes = tuple(range(len(self.shape)))
        out = np.fft.irfftn(np.fft.rfftn(b, axes=axes) * multiplier, s=self.shape, axes=axes)
        return out.ravel()

    def solve(self, b):
        return self._apply(1.0 / self.symbol, b)

    def heat(self, t, v):
        """``exp(-t M^{-1} A) v``."""
        return self._apply(np.exp(-t * self.laplacian_symbol / self.cell_weight), v)


def make_solver(A, mass, shift=1.0, method="auto", periodic_shape=None,
                edge_weight=None, tol=1e-9):
    """Pick a shifted solver.

    ``periodic_shape`` with ``edge_weight`` marks ``A`` as the full periodic
    Laplacian, which enables the FFT route.
    """
    mass = np.asarray(mass, dtype=float)
    if method == "auto":
        if periodic_shape is not None:
            method = "fft"
        elif A.shape[0] <= 3_000_000:
            method = "direct"
        else:
            method = "cg"
    if method == "fft":
        if periodic_shape is None:
            raise ValueError("FFT solver needs the periodic grid shape")
        return FourierSolver(periodic_shape, edge_weight, float(mass[0]), shift)
    if method == "direct":
        return DirectSolver(A, mass, shift)
    if method == "cg":
        return CGSolver(A, mass, shift, tol)
    raise ValueError(f"unknown solver method {method!r}")


def lanczos_smallest(A, mass, k, tol=1e-10, solver=None, dense_limit=400):
    """Smallest ``k`` eigenpairs of ``A v = lam diag(mass) v``.

    Small problems use a dense symmetric eigensolver. Larger ones run
    implicitly restarted Lanczos in shift-invert mode about -1, which needs
    solves with ``A + M``; pass ``solver`` to reuse a factorization.
    Eigenvectors are mass-orthonormal. Returns ``(values, vectors)``.
    """
    n = A.shape[0]
    mass = np.asarray(mass, dtype=float)
    if not 1 <= k <= min(50, n):
        raise ValueError(f"requested {k} eigenpairs from a problem of size {n}")
    if n <= max(dense_limit, 3 * k):
        vals, vecs = sla.eigh(A.toarray() if sp.issparse(A) else np.asarray(A),
                              np.diag(mass), subset_by_index=[0, k - 1])
    else:
        if solver is None:
            solver = make_solver(A, mass, 1.0)
        if solver.shift != 1.0:
            raise ValueError("shift-invert needs a solver for A + M")
        op = spla.LinearOperator((n, n), matvec=solver.solve, dtype=float)
        rng = np.random.default_rng(12345)
        want = min(k + 4, n - 2)
        vals, vecs = spla.eigsh(sp.csr_matrix(A), k=want, M=sp.diags(mass), sigma=-1.0,
                                OPinv=op, which="LM", tol=tol * 1e-2,
                                v0=rng.standard_normal(n), ncv=min(n, max(2 * want + 1, 20)))
        vals, vecs = _fill_degenerate(solver, mass, vals, vecs, k, tol, rng)
    order = np.argsort(vals)[:k]
    vals, vecs = vals[order], vecs[:, order]
    for j in range(k):
        vecs[:, j] /= math.sqrt(float(np.dot(vecs[:, j] * mass, vecs[:, j])))
        lead = np.argmax(np.abs(vecs[:, j]))
        if vecs[lead, j] < 0:
            vecs[:, j] = -vecs[:, j]
    resid = A @ vecs - vecs * vals * mass[:, None]
    rnorm = np.sqrt(np.sum(resid * resid / mass[:, None], axis=0))
    # floor at the rounding level of M^{-1} A itself
    scale = float(np.max(abs(A) @ np.ones(n) / mass)) if sp.issparse(A) else \
        float(np.max(np.abs(np.asarray(A)).sum(axis=1) / mass))
    limit = 10 * tol * (np.abs(vals) + 1.0) + 1e3 * np.finfo(float).eps * scale
    if np.any(rnorm > limit):
        worst = int(np.argmax(rnorm / limit))
        raise SolverError(
            f"eigenpair {worst} residual {rnorm[worst]:.3e} above {limit[worst]:.3e}")
    return vals, vecs


def _fill_degenerate(solver, mass, vals, vecs, k, tol, rng, rounds=10):
    """Recover eigenpairs that restarted Lanczos skipped inside degenerate clusters.

    Looks for the top of ``M^1/2 (A + M)^-1 M^1/2`` on the complement of the
    pairs found so far; anything below the k-th eigenvalue is merged in.
    """
    n = len(mass)
    root = np.sqrt(mass)
    for _ in range(rounds):
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
        basis, _ = np.linalg.qr(root[:, None] * vecs)

        def project(x):
            return x - basis @ (basis.T @ x)

        def apply(x):
            y = project(x)
            return project(root * solver.solve(root * y))

        op = spla.LinearOperator((n, n), matvec=apply, dtype=float)
        probe = min(4, n - vecs.shape[1] - 1)
        if probe < 1:
            break
        mu, w = spla.eigsh(op, k=probe, which="LA", tol=tol * 1e-2,
                           v0=project(rng.standard_normal(n)))
        lam = 1.0 / mu - 1.0
        cut = vals[k - 1] + 10 * tol * (abs(vals[k - 1]) + 1.0)
        new = lam < cut
        if not new.any():
            break
        log.info("eigensolver recovered %d eigenvalues missed in a cluster", int(new.sum()))
        vals = np.concatenate([vals, lam[new]])
        vecs = np.concatenate([vecs, w[:, new] / root[:, None]], axis=1)
    return vals, vecs


@dataclass
class MetricNormProblem:
    """Bilinear pairing ``u^T G f`` between two metric spaces.

    ``forward(f) = G f`` lands in the dual of the left space (metric P) and
    ``adjoint(u) = G^T u`` in the dual of the right space (metric Q).
    ``solve_left`` and ``solve_right`` apply ``P^{-1}`` and ``Q^{-1}``.
    """

    forward: object
    adjoint: object
    solve_left: object
    solve_right: object
    left_dim: int
    right_dim: int
    zero: bool = False

    @classmethod
    def from_matrix(cls, G, solve_left, solve_right):
        G = sp.csr_matrix(G)
        G.eliminate_zeros()
        GT = G.T.tocsr()
        return cls(lambda f: G @ f, lambda u: GT @ u, solve_left, solve_right,
                   G.shape[0], G.shape[1], zero=G.nnz == 0)


@dataclass
class NormEstimate:
    value: float
    per_start: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    history: list = field(default_factory=list)
    converged: bool = True


def estimate_opnorm(problem, tol=1e-6, restarts=3, maxiter=500, seed=0):
    """Two-sided power iteration for ``sup |u^T G f| / (|u|_P |f|_Q)``.

    Each iterate is attained by an explicit ``f``, so every value is a lower
    bound for the norm. The best over ``restarts`` seeded starts is kept.
    """
    if problem.zero:
        return NormEstimate(0.0, [0.0] * restarts, [0] * restarts, [[0.0]] * restarts)
    rng = np.random.default_rng(seed)
    result = NormEstimate(0.0, converged=True)
    for _ in range(restarts):
        u = rng.standard_normal(problem.left_dim)
        sigma_prev = None
        quiet = 0
        hist = []
        it = 0
        sigma = 0.0
        for it in range(1, maxiter + 1):
            g_right = problem.adjoint(u)
            f = problem.solve_right(g_right)
            fq2 = float(np.dot(g_right, f))
            if not fq2 > 0:
                sigma = 0.0
                break
            f /= math.sqrt(fq2)
            g_left = problem.forward(f)
            u = problem.solve_left(g_left)
            s2 = float(np.dot(g_left, u))
            if not s2 > 0:
                sigma = 0.0
                break
            sigma = math.sqrt(s2)
            u /= sigma
            hist.append(sigma)
            if sigma_prev is not None and abs(sigma - sigma_prev) <= tol * sigma:
                quiet += 1
                if quiet >= 3:
                    break
            else:
                quiet = 0
            sigma_prev = sigma
        else:
            result.converged = False
            log.warning("power iteration hit %d iterations (last change %.2e)",
                        maxiter, abs(hist[-1] - hist[-2]) / hist[-1] if len(hist) > 1 else 0)
        result.per_start.append(sigma)
        result.iterations.append(it)
        result.history.append(hist)
    result.value = max(result.per_start)
    return result


def metric_opnorm(problem, tol=1e-6, restarts=3, maxiter=500, seed=0):
    """Operator norm between metric spaces (lower bound by power iteration)."""
    return estimate_opnorm(problem, tol, restarts, maxiter, seed).value


def power_of_resolvent_apply(A, mass, power, v, solver=None):
    """``((M^{-1}A + 1)^{-1})^power v``, i.e. repeated ``(A + M)^{-1} M``."""
    if int(power) != power or power < 0:
        raise ValueError("power must be a non-negative integer")
    mass = np.asarray(mass, dtype=float)
    if solver is None and power > 0:
        solver = make_solver(A, mass, 1.0)
    out = np.array(v, dtype=float)
    for _ in range(int(power)):
        out = solver.solve(mass * out)
    return out


def _phi1_first_column(T, tau):
    k = T.shape[0]
    aug = np.zeros((k + 1, k + 1))
    aug[:k, :k] = -tau * T
    aug[0, k] = 1.0
    E = sla.expm(aug)
    return E[:k, 0], E[:k, k]


def _lanczos(apply, w, kmax, inner):
    """Lanczos with full reorthogonalisation. Returns (V, alpha, beta, beta0)."""
    beta0 = math.sqrt(inner(w, w))
    V = [w / beta0]
    alpha, beta = [], []
    for j in range(kmax):
        z = apply(V[j])
        a = inner(V[j], z)
        z = z - a * V[j] - (beta[-1] * V[j - 1] if j > 0 else 0.0)
        for q in V:
            z = z - inner(q, z) * q
        b = math.sqrt(max(inner(z, z), 0.0))
        alpha.append(a)
        beta.append(b)
        if b <= 1e-14 * max(1.0, abs(a)):
            break
        V.append(z / b)
    return V, np.array(alpha), np.array(beta), beta0


def _tridiag(alpha, beta):
    k = len(alpha)
    return np.diag(alpha) + np.diag(beta[:k - 1], 1) + np.diag(beta[:k - 1], -1)


def _heat_polynomial(A, mass, tau, w, krylov_dim):
    """One step of ``exp(-tau S)`` on ``w`` with ``S = M^{-1/2} A M^{-1/2}``."""
    rs = 1.0 / np.sqrt(mass)
    apply = lambda x: rs * (A @ (rs * x))
    V, alpha, beta, beta0 = _lanczos(apply, w, krylov_dim, lambda a, b: float(np.dot(a, b)))
    k = len(alpha)
    T = _tridiag(alpha, beta)
    expcol, phicol = _phi1_first_column(T, tau)
    y = beta0 * (np.stack(V[:k], axis=1) @ expcol)
    est = beta0 * tau * beta[-1] * abs(phicol[-1])
    return y, est


def heat_apply(A, mass, t, v, krylov_dim=40, tol=1e-8, solver=None, max_substeps=64):
    """Approximate ``exp(-t M^{-1} A) v``.

    Without ``solver``: polynomial Lanczos with an a-posteriori error
    estimate, splitting ``t`` into up to ``max_substeps`` pieces.
    With a solver for ``A + M``: rational Krylov on ``(A + M)^{-1} M``,
    which converges independently of the grid; stops once successive
    approximations agree to ``tol``.
    Raises SolverError if the tolerance cannot be met.
    """
    mass = np.asarray(mass, dtype=float)
    v = np.asarray(v, dtype=float)
    if t < 0:
        raise ValueError("time must be non-negative")
    vnorm = math.sqrt(float(np.dot(v * mass, v)))
    if t == 0 or vnorm == 0:
        return v.copy()
    if solver is not None:
        return _heat_rational(mass, t, v, vnorm, krylov_dim, tol, solver)
    w = np.sqrt(mass) * v
    wnorm = float(np.linalg.norm(w))
    nsub = 1
    while nsub <= max_substeps:
        y = w
        total = 0.0
        for _ in range(nsub):
            y, est = _heat_polynomial(A, mass, t / nsub, y, krylov_dim)
            total += est
            if total > tol * wnorm:
                break
        if total <= tol * wnorm:
            return y / np.sqrt(mass)
        nsub *= 2
    raise SolverError(
        f"heat flow not resolved with {max_substeps} substeps of dimension {krylov_dim}")


def _heat_rational(mass, t, v, vnorm, krylov_dim, tol, solver):
    inner = lambda a, b: float(np.dot(a * mass, b))
    apply = lambda x: solver.solve(mass * x)
    beta0 = vnorm
    V = [v / beta0]
    alpha, beta = [], []
    prev = None
    agreed = 0
    for j in range(krylov_dim):
        z = apply(V[j])
        a = inner(V[j], z)
        z = z - a * V[j] - (beta[-1] * V[j - 1] if j > 0 else 0.0)
        for q in V:
            z = z - inner(q, z) * q
        b = math.sqrt(max(inner(z, z), 0.0))
        alpha.append(a)
        beta.append(b)
        Tz = _tridiag(np.array(alpha), np.array(beta))
        evals, evecs = np.linalg.eigh(Tz)
        evals = np.maximum(evals, 1e-300)
        lam = np.maximum(1.0 / evals - 1.0, 0.0)
        coef = beta0 * (evecs @ (np.exp(-t * lam) * evecs[0]))
        done = b <= 1e-14
        if prev is not None:
            diff = coef.copy()
            diff[:len(prev)] -= prev
            # two consecutive agreements; one alone is optimistic
            agreed = agreed + 1 if math.sqrt(float(np.dot(diff, diff))) <= tol * vnorm else 0
            done = done or agreed >= 2
        prev = coef
        if done:
            return np.stack(V[:len(coef)], axis=1) @ coef
        V.append(z / b)
    raise SolverError(f"rational Krylov heat flow did not converge in {krylov_dim} steps")
