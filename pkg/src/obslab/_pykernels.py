"""Pure-Python versions of the compiled kernels, same signatures and results."""

import math

import numpy as np
import scipy.sparse as sp


def csr_matvec(indptr, indices, data, x):
    n = len(indptr) - 1
    A = sp.csr_matrix((data, indices, indptr), shape=(n, len(x)))
    return A @ np.asarray(x)


def cg_shifted(indptr, indices, data, mass, shift, b, x, tol, maxiter):
    """Jacobi-preconditioned CG for (A + shift*diag(mass)) x = b, in place."""
    n = len(b)
    A = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    mass = np.asarray(mass)
    b = np.asarray(b)
    d = A.diagonal() + shift * mass
    dinv = np.where(d != 0.0, 1.0 / np.where(d != 0.0, d, 1.0), 1.0)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        x[:] = 0.0
        return 0, 0.0
    r = b - (A @ x + shift * mass * x)
    z = dinv * r
    p = z.copy()
    rz = r @ z
    rr = r @ r
    it = 0
    while math.sqrt(rr) > tol * bnorm and it < maxiter:
        q = A @ p + shift * mass * p
        pq = p @ q
        if pq <= 0.0:
            break
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        z = dinv * r
        rz_new = r @ z
        rr = r @ r
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    return it, math.sqrt(rr) / bnorm


def _rhs(s, u, w, lam, m):
    return w * math.exp((2.0 - m) * s), -lam * math.exp(m * s) * u


def radial_shoot(lam, m, r0, r1, nsteps):
    s0 = math.log(r0)
    hs = (math.log(r1) - s0) / nsteps
    s, u, w = s0, 0.0, 1.0
    zeros = 0
    for i in range(nsteps):
        k1u, k1w = _rhs(s, u, w, lam, m)
        k2u, k2w = _rhs(s + 0.5 * hs, u + 0.5 * hs * k1u, w + 0.5 * hs * k1w, lam, m)
        k3u, k3w = _rhs(s + 0.5 * hs, u + 0.5 * hs * k2u, w + 0.5 * hs * k2w, lam, m)
        k4u, k4w = _rhs(s + hs, u + hs * k3u, w + hs * k3w, lam, m)
        u_prev = u
        u = u + hs * (k1u + 2.0 * k2u + 2.0 * k3u + k4u) / 6.0
        w = w + hs * (k1w + 2.0 * k2w + 2.0 * k3w + k4w) / 6.0
        s = s0 + (i + 1) * hs
        if i > 0 and u_prev * u < 0.0:
            zeros += 1
    return u, w, zeros
