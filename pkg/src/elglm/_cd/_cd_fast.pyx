# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled coordinate descent for L1-penalized quadratic maximization.

Same contract as ``_cd_py.cd_quadratic_l1``; see that module for the math.
"""

import numpy as np

cimport cython
from libc.math cimport fabs, INFINITY


def cd_quadratic_l1(A, s, lam, theta0, int max_sweeps=1000, double tol=1e-8):
    A = np.ascontiguousarray(A, dtype=np.float64)
    s = np.ascontiguousarray(s, dtype=np.float64)
    lam = np.ascontiguousarray(lam, dtype=np.float64)
    theta = np.array(theta0, dtype=np.float64, copy=True)
    g = A @ theta
    n_sweeps, kkt = _sweeps(A, s, lam, theta, g, max_sweeps, tol)
    return theta, n_sweeps, kkt


@cython.boundscheck(False)
@cython.wraparound(False)
cdef _sweeps(const double[:, ::1] A, const double[::1] s, const double[::1] lam,
             double[::1] theta, double[::1] g, int max_sweeps, double tol):
    cdef Py_ssize_t p = s.shape[0]
    cdef Py_ssize_t i, j, sweep
    cdef double ajj, z, new, delta, kkt, r, v
    cdef int n_sweeps = 0
    kkt = INFINITY
    for sweep in range(max_sweeps):
        for j in range(p):
            ajj = A[j, j]
            z = s[j] - g[j] + ajj * theta[j]
            if z > lam[j]:
                new = (z - lam[j]) / ajj
            elif z < -lam[j]:
                new = (z + lam[j]) / ajj
            else:
                new = 0.0
            delta = new - theta[j]
            if delta != 0.0:
                for i in range(p):
                    g[i] += delta * A[i, j]
                theta[j] = new
        n_sweeps = sweep + 1
        kkt = 0.0
        for j in range(p):
            r = s[j] - g[j]
            if theta[j] > 0.0:
                v = fabs(r - lam[j])
            elif theta[j] < 0.0:
                v = fabs(r + lam[j])
            else:
                v = fabs(r) - lam[j]
                if v < 0.0:
                    v = 0.0
            if v > kkt:
                kkt = v
        if kkt <= tol:
            break
    return n_sweeps, kkt
