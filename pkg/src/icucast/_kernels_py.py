"""Pure-numpy fallback implementations of the hot inner-loop kernels.

Must stay behaviorally identical to the compiled versions in ``_core.pyx``;
``benchmarks/bench_kernels.py`` and the kernel tests compare both backends.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

_ETA_CAP = 500.0


def ingarch_mu_path(y, alpha0, alpha1, drive, mu1):
    """Conditional-mean recursion mu[t] = a0*mu[t-1] + a1*y[t-1] + drive[t-1].

    ``drive`` holds the exogenous (trend) contribution for steps 2..n, i.e.
    drive[k] feeds mu[k+1]. Returns the full path of length n.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    mu = np.empty(n)
    mu[0] = mu1
    for t in range(1, n):
        mu[t] = alpha0 * mu[t - 1] + alpha1 * y[t - 1] + drive[t - 1]
    return mu


def ingarch_quasi_loglik(y, alpha0, alpha1, drive, mu1):
    """Poisson conditional log-likelihood of y[1:] given the recursion.

    Returns -inf if any conditional mean is nonpositive.
    """
    y = np.asarray(y, dtype=float)
    mu = ingarch_mu_path(y, alpha0, alpha1, drive, mu1)
    m = mu[1:]
    if not np.all(np.isfinite(m)) or np.any(m <= 0.0):
        return -np.inf
    yy = y[1:]
    return float(np.sum(yy * np.log(m) - m - gammaln(yy + 1.0)))


def glmm_panel_laplace(Y, design, offsets, eta_fixed, sigma_inv, logdet_sigma,
                       b_starts, tol, maxiter):
    """Sum of per-region Laplace marginal contributions over a whole panel.

    Y is (I, T); b_starts is (I, 3) and is not modified. Returns
    (total, modes (I, 3), all_converged); total is -inf on any failure.
    """
    Y = np.asarray(Y, dtype=float)
    n_regions = Y.shape[0]
    modes = np.zeros((n_regions, 3))
    total = 0.0
    all_ok = True
    for i in range(n_regions):
        b_hat, pll, quad, logdet_h, ok = glmm_region_mode(
            Y[i], design, offsets[i], eta_fixed, sigma_inv, b_starts[i], tol, maxiter
        )
        if not np.isfinite(pll):
            return -np.inf, modes, False
        if not ok:
            all_ok = False
        modes[i] = b_hat
        total += pll - 0.5 * quad - 0.5 * logdet_sigma - 0.5 * logdet_h
    return total, modes, all_ok


def glmm_region_mode(y, design, offset, eta_fixed, sigma_inv, b_start, tol, maxiter):
    """Newton mode of the per-region random-effect joint density.

    Parameters
    ----------
    y : (T,) observed counts
    design : (T, 3) rows (1, t, t^2)
    offset : scalar log-population
    eta_fixed : (T,) fixed-effect part of the linear predictor (design @ beta)
    sigma_inv : (3, 3) inverse random-effect covariance
    b_start : (3,) Newton starting value
    tol : gradient-infinity-norm tolerance
    maxiter : Newton iteration cap

    Returns
    -------
    (b_hat, pois_ll, quad, logdet_h, converged)
      pois_ll : Poisson log-likelihood at the mode (with log y! terms)
      quad : b_hat' sigma_inv b_hat
      logdet_h : log det of the negative joint Hessian at the mode
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(design, dtype=float)
    b = np.asarray(b_start, dtype=float).copy()
    lgam = gammaln(y + 1.0)

    def parts(bv):
        eta = eta_fixed + X @ bv + offset
        if np.any(eta > _ETA_CAP):
            return None, None, -np.inf
        mu = np.exp(eta)
        pll = float(np.sum(y * eta - mu) - np.sum(lgam))
        joint = pll - 0.5 * float(bv @ sigma_inv @ bv)
        return eta, mu, joint

    eta, mu, joint = parts(b)
    if not np.isfinite(joint):
        b[:] = 0.0
        eta, mu, joint = parts(b)
        if not np.isfinite(joint):
            return b, -np.inf, 0.0, 0.0, False

    converged = False
    for _ in range(maxiter):
        grad = X.T @ (y - mu) - sigma_inv @ b
        if np.max(np.abs(grad)) <= tol:
            converged = True
            break
        H = (X.T * mu) @ X + sigma_inv
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            break
        # ill-conditioned H can leave the gradient criterion unreachable in
        # doubles; a vanishing Newton step means the mode is located
        if np.max(np.abs(step)) <= 1e-8 * (1.0 + np.max(np.abs(b))):
            converged = True
            break
        # step halving on joint-density decrease
        ok = False
        for _ in range(30):
            b_new = b + step
            _, mu_new, joint_new = parts(b_new)
            if np.isfinite(joint_new) and joint_new >= joint - 1e-9 * (1.0 + abs(joint)):
                ok = True
                break
            step *= 0.5
        if not ok:
            break
        b, mu, joint = b_new, mu_new, joint_new
    else:
        grad = X.T @ (y - mu) - sigma_inv @ b
        converged = bool(np.max(np.abs(grad)) <= tol)

    H = (X.T * mu) @ X + sigma_inv
    sign, logdet_h = np.linalg.slogdet(H)
    if sign <= 0:
        return b, -np.inf, 0.0, 0.0, False
    eta = eta_fixed + X @ b + offset
    pll = float(np.sum(y * eta - np.exp(eta)) - np.sum(lgam))
    quad = float(b @ sigma_inv @ b)
    return b, pll, quad, float(logdet_h), converged
