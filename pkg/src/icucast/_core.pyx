# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot-loop kernels; behavior mirrors ``_kernels_py`` exactly."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, lgamma, log, fabs, INFINITY

cnp.import_array()

cdef double _ETA_CAP = 500.0


def ingarch_mu_path(y, double alpha0, double alpha1, drive, double mu1):
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] dv = np.ascontiguousarray(drive, dtype=np.float64)
    cdef Py_ssize_t n = yv.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] mu = out
    cdef Py_ssize_t t
    mu[0] = mu1
    for t in range(1, n):
        mu[t] = alpha0 * mu[t - 1] + alpha1 * yv[t - 1] + dv[t - 1]
    return out


def ingarch_quasi_loglik(y, double alpha0, double alpha1, drive, double mu1):
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] dv = np.ascontiguousarray(drive, dtype=np.float64)
    cdef Py_ssize_t n = yv.shape[0]
    cdef Py_ssize_t t
    cdef double m = mu1
    cdef double ll = 0.0
    for t in range(1, n):
        m = alpha0 * m + alpha1 * yv[t - 1] + dv[t - 1]
        if not (m > 0.0) or m == INFINITY:
            return -INFINITY
        ll += yv[t] * log(m) - m - lgamma(yv[t] + 1.0)
    return ll


cdef bint _chol3(double* a, double* l) noexcept nogil:
    # lower Cholesky of a 3x3 row-major SPD matrix; returns False if not PD
    cdef double d
    d = a[0]
    if d <= 0.0:
        return False
    l[0] = d ** 0.5
    l[3] = a[3] / l[0]
    l[6] = a[6] / l[0]
    d = a[4] - l[3] * l[3]
    if d <= 0.0:
        return False
    l[4] = d ** 0.5
    l[7] = (a[7] - l[6] * l[3]) / l[4]
    d = a[8] - l[6] * l[6] - l[7] * l[7]
    if d <= 0.0:
        return False
    l[8] = d ** 0.5
    l[1] = l[2] = l[5] = 0.0
    return True


cdef void _chol3_solve(double* l, double* rhs, double* x) noexcept nogil:
    # solve L L^T x = rhs
    cdef double z0, z1, z2
    z0 = rhs[0] / l[0]
    z1 = (rhs[1] - l[3] * z0) / l[4]
    z2 = (rhs[2] - l[6] * z0 - l[7] * z1) / l[8]
    x[2] = z2 / l[8]
    x[1] = (z1 - l[7] * x[2]) / l[4]
    x[0] = (z0 - l[3] * x[1] - l[6] * x[2]) / l[0]


cdef double _joint3(double[::1] yv, double[:, ::1] X, double[::1] ef,
                    double[:, ::1] S, double offset, double* b,
                    double lgam_sum) noexcept nogil:
    cdef Py_ssize_t T = yv.shape[0]
    cdef Py_ssize_t t, i, j
    cdef double eta, acc = 0.0
    for t in range(T):
        eta = ef[t] + offset
        for j in range(3):
            eta += X[t, j] * b[j]
        if eta > _ETA_CAP:
            return -INFINITY
        acc += yv[t] * eta - exp(eta)
    for i in range(3):
        for j in range(3):
            acc -= 0.5 * b[i] * S[i, j] * b[j]
    return acc - lgam_sum


cdef bint _region_mode_c(double[::1] yv, double[:, ::1] X, double offset,
                         double[::1] ef, double[:, ::1] S, double* b,
                         double tol, int maxiter,
                         double* pll_out, double* quad_out,
                         double* logdet_out, bint* conv_out) noexcept nogil:
    """Newton mode search; b holds the start and is overwritten with the
    mode. Returns False on unrecoverable failure (non-finite density)."""
    cdef Py_ssize_t T = yv.shape[0]
    cdef double b_new[3]
    cdef double grad[3]
    cdef double step[3]
    cdef double H[9]
    cdef double L[9]
    cdef Py_ssize_t t, i, j, it, hv
    cdef double eta, m, joint, joint_new, pll, quad, lgam_sum, smax, bmax
    cdef double gmax = INFINITY
    cdef bint converged = False, ok

    lgam_sum = 0.0
    for t in range(T):
        lgam_sum += lgamma(yv[t] + 1.0)

    joint = _joint3(yv, X, ef, S, offset, b, lgam_sum)
    if joint == -INFINITY:
        for i in range(3):
            b[i] = 0.0
        joint = _joint3(yv, X, ef, S, offset, b, lgam_sum)
        if joint == -INFINITY:
            return False

    for it in range(maxiter):
        for i in range(3):
            grad[i] = 0.0
            for j in range(3):
                grad[i] -= S[i, j] * b[j]
        for i in range(9):
            H[i] = S[i // 3, i % 3]
        for t in range(T):
            eta = ef[t] + offset
            for j in range(3):
                eta += X[t, j] * b[j]
            m = exp(eta)
            for i in range(3):
                grad[i] += X[t, i] * (yv[t] - m)
                for j in range(3):
                    H[3 * i + j] += m * X[t, i] * X[t, j]
        gmax = 0.0
        for i in range(3):
            if fabs(grad[i]) > gmax:
                gmax = fabs(grad[i])
        if gmax <= tol:
            converged = True
            break
        if not _chol3(H, L):
            break
        _chol3_solve(L, grad, step)
        # ill-conditioned H can leave the gradient criterion unreachable in
        # doubles; a vanishing Newton step means the mode is located
        smax = 0.0
        bmax = 0.0
        for i in range(3):
            if fabs(step[i]) > smax:
                smax = fabs(step[i])
            if fabs(b[i]) > bmax:
                bmax = fabs(b[i])
        if smax <= 1e-8 * (1.0 + bmax):
            converged = True
            break
        ok = False
        for hv in range(30):
            for i in range(3):
                b_new[i] = b[i] + step[i]
            joint_new = _joint3(yv, X, ef, S, offset, b_new, lgam_sum)
            if joint_new == joint_new and joint_new != -INFINITY and joint_new >= joint - 1e-9 * (1.0 + fabs(joint)):
                ok = True
                break
            for i in range(3):
                step[i] *= 0.5
        if not ok:
            break
        for i in range(3):
            b[i] = b_new[i]
        joint = joint_new
    else:
        converged = gmax <= tol

    # final Hessian, Poisson loglik, quadratic form at the mode
    for i in range(9):
        H[i] = S[i // 3, i % 3]
    pll = -lgam_sum
    for t in range(T):
        eta = ef[t] + offset
        for j in range(3):
            eta += X[t, j] * b[j]
        m = exp(eta)
        pll += yv[t] * eta - m
        for i in range(3):
            for j in range(3):
                H[3 * i + j] += m * X[t, i] * X[t, j]
    if not _chol3(H, L):
        return False
    pll_out[0] = pll
    logdet_out[0] = 2.0 * (log(L[0]) + log(L[4]) + log(L[8]))
    quad = 0.0
    for i in range(3):
        for j in range(3):
            quad += b[i] * S[i, j] * b[j]
    quad_out[0] = quad
    conv_out[0] = converged
    return True


def glmm_region_mode(y, design, double offset, eta_fixed, sigma_inv,
                     b_start, double tol, int maxiter):
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[:, ::1] X = np.ascontiguousarray(design, dtype=np.float64)
    cdef double[::1] ef = np.ascontiguousarray(eta_fixed, dtype=np.float64)
    cdef double[:, ::1] S = np.ascontiguousarray(sigma_inv, dtype=np.float64)
    cdef double[::1] bs = np.ascontiguousarray(b_start, dtype=np.float64)
    cdef double b[3]
    cdef double pll = 0.0, quad = 0.0, logdet_h = 0.0
    cdef bint conv = False
    cdef Py_ssize_t i
    for i in range(3):
        b[i] = bs[i]
    if not _region_mode_c(yv, X, offset, ef, S, b, tol, maxiter,
                          &pll, &quad, &logdet_h, &conv):
        return np.array([b[0], b[1], b[2]]), -INFINITY, 0.0, 0.0, False
    return np.array([b[0], b[1], b[2]]), pll, quad, logdet_h, bool(conv)


def glmm_panel_laplace(Y, design, offsets, eta_fixed, sigma_inv,
                       double logdet_sigma, b_starts, double tol, int maxiter):
    """Sum of per-region Laplace marginal contributions over a whole panel."""
    cdef double[:, ::1] Yv = np.ascontiguousarray(Y, dtype=np.float64)
    cdef double[:, ::1] X = np.ascontiguousarray(design, dtype=np.float64)
    cdef double[::1] off = np.ascontiguousarray(offsets, dtype=np.float64)
    cdef double[::1] ef = np.ascontiguousarray(eta_fixed, dtype=np.float64)
    cdef double[:, ::1] S = np.ascontiguousarray(sigma_inv, dtype=np.float64)
    cdef double[:, ::1] bs = np.ascontiguousarray(b_starts, dtype=np.float64)
    cdef Py_ssize_t I = Yv.shape[0]
    modes = np.zeros((I, 3), dtype=np.float64)
    cdef double[:, ::1] mv = modes
    cdef double b[3]
    cdef double pll = 0.0, quad = 0.0, logdet_h = 0.0, total = 0.0
    cdef bint conv = False, all_ok = True, failed = False
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(I):
            for j in range(3):
                b[j] = bs[i, j]
            if not _region_mode_c(Yv[i], X, off[i], ef, S, b, tol, maxiter,
                                  &pll, &quad, &logdet_h, &conv):
                failed = True
                break
            if not conv:
                all_ok = False
            for j in range(3):
                mv[i, j] = b[j]
            total += pll - 0.5 * quad - 0.5 * logdet_sigma - 0.5 * logdet_h
    if failed:
        return -INFINITY, modes, False
    return total, modes, bool(all_ok)
