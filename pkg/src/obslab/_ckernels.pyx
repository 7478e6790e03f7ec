# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: CSR products, shifted CG, radial shooting."""

import numpy as np
from libc.math cimport sqrt, exp, log


cdef void _matvec(const int[::1] indptr, const int[::1] indices,
                  const double[::1] data, const double[::1] x,
                  double[::1] y) noexcept nogil:
    cdef Py_ssize_t i, k, n = indptr.shape[0] - 1
    cdef double acc
    for i in range(n):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * x[indices[k]]
        y[i] = acc


def csr_matvec(const int[::1] indptr, const int[::1] indices,
               const double[::1] data, const double[::1] x):
    y = np.empty(indptr.shape[0] - 1)
    _matvec(indptr, indices, data, x, y)
    return y


def cg_shifted(const int[::1] indptr, const int[::1] indices,
               const double[::1] data, const double[::1] mass, double shift,
               const double[::1] b, double[::1] x, double tol, long maxiter):
    """Jacobi-preconditioned CG for (A + shift*diag(mass)) x = b, in place.

    Returns (iterations, relative residual).
    """
    cdef Py_ssize_t n = b.shape[0], i, k
    cdef long it = 0
    cdef double[::1] r = np.empty(n)
    cdef double[::1] z = np.empty(n)
    cdef double[::1] p = np.empty(n)
    cdef double[::1] q = np.empty(n)
    cdef double[::1] dinv = np.empty(n)
    cdef double bnorm = 0.0, rz, rz_new, alpha, beta, pq, rr, d
    with nogil:
        for i in range(n):
            d = shift * mass[i]
            for k in range(indptr[i], indptr[i + 1]):
                if indices[k] == i:
                    d = d + data[k]
            dinv[i] = 1.0 / d if d != 0.0 else 1.0
            bnorm += b[i] * b[i]
        bnorm = sqrt(bnorm)
    if bnorm == 0.0:
        x[:] = 0.0
        return 0, 0.0
    with nogil:
        _matvec(indptr, indices, data, x, q)
        rz = 0.0
        rr = 0.0
        for i in range(n):
            r[i] = b[i] - q[i] - shift * mass[i] * x[i]
            z[i] = dinv[i] * r[i]
            p[i] = z[i]
            rz += r[i] * z[i]
            rr += r[i] * r[i]
        while sqrt(rr) > tol * bnorm and it < maxiter:
            _matvec(indptr, indices, data, p, q)
            pq = 0.0
            for i in range(n):
                q[i] = q[i] + shift * mass[i] * p[i]
                pq += p[i] * q[i]
            if pq <= 0.0:
                break
            alpha = rz / pq
            rz_new = 0.0
            rr = 0.0
            for i in range(n):
                x[i] = x[i] + alpha * p[i]
                r[i] = r[i] - alpha * q[i]
                z[i] = dinv[i] * r[i]
                rz_new += r[i] * z[i]
                rr += r[i] * r[i]
            beta = rz_new / rz
            rz = rz_new
            for i in range(n):
                p[i] = z[i] + beta * p[i]
            it += 1
    return it, sqrt(rr) / bnorm


cdef inline void _rhs(double s, double u, double w, double lam, double m,
                      double *du, double *dw) noexcept nogil:
    du[0] = w * exp((2.0 - m) * s)
    dw[0] = -lam * exp(m * s) * u


def radial_shoot(double lam, int m, double r0, double r1, long nsteps):
    """RK4 in s = log r for u' = w r^(1-m), w' = -lam r^(m-1) u.

    Starts from u(r0) = 0, w(r0) = 1. Returns (u(r1), w(r1), interior zeros).
    """
    cdef double s0 = log(r0), s1 = log(r1)
    cdef double hs = (s1 - s0) / nsteps
    cdef double s = s0, u = 0.0, w = 1.0, dm = m
    cdef double k1u, k1w, k2u, k2w, k3u, k3w, k4u, k4w, u_prev
    cdef long i, zeros = 0
    with nogil:
        for i in range(nsteps):
            _rhs(s, u, w, lam, dm, &k1u, &k1w)
            _rhs(s + 0.5 * hs, u + 0.5 * hs * k1u, w + 0.5 * hs * k1w, lam, dm, &k2u, &k2w)
            _rhs(s + 0.5 * hs, u + 0.5 * hs * k2u, w + 0.5 * hs * k2w, lam, dm, &k3u, &k3w)
            _rhs(s + hs, u + hs * k3u, w + hs * k3w, lam, dm, &k4u, &k4w)
            u_prev = u
            u = u + hs * (k1u + 2.0 * k2u + 2.0 * k3u + k4u) / 6.0
            w = w + hs * (k1w + 2.0 * k2w + 2.0 * k3w + k4w) / 6.0
            s = s0 + (i + 1) * hs
            if i > 0 and u_prev * u < 0.0:
                zeros += 1
    return u, w, zeros
