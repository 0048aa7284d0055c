"""Shared numerical kernels.

Thin, contract-enforcing wrappers around scipy/numpy: box-constrained
quasi-Newton maximization, Cholesky factorization, empirical quantiles, and
reproducible per-stream random generators.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

__all__ = [
    "OptimResult",
    "RngStream",
    "maximize",
    "central_diff_gradient",
    "cholesky",
    "empirical_quantile",
    "CholeskyError",
]

#: step scale for central differences: cube root of machine epsilon
_H0 = float(np.finfo(float).eps) ** (1.0 / 3.0)

DEFAULT_MAXITER = 500


class CholeskyError(np.linalg.LinAlgError):
    """Matrix is not symmetric positive definite."""


@dataclass(frozen=True)
class OptimResult:
    argmax: np.ndarray
    value: float
    converged: bool
    iterations: int
    gradient_norm: float


def central_diff_gradient(f: Callable, x: np.ndarray, args=()) -> np.ndarray:
    """Central-difference gradient with step h = eps^(1/3) * max(1, |x_j|)."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for j in range(x.size):
        h = _H0 * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        g[j] = (f(xp, *args) - f(xm, *args)) / (2.0 * h)
    return g


def maximize(
    objective: Callable[[np.ndarray], float],
    start: Sequence[float],
    bounds: Sequence[tuple[float | None, float | None]] | None = None,
    tol: float = 1e-6,
    maxiter: int = DEFAULT_MAXITER,
) -> OptimResult:
    """Maximize ``objective`` by L-BFGS-B from ``start``.

    Box constraints are handled natively by the optimizer (projection).
    Gradients are numeric central differences. Hitting the iteration cap
    yields ``converged=False`` rather than an exception.
    """
    x0 = np.atleast_1d(np.asarray(start, dtype=float))
    f0 = objective(x0)
    if not np.isfinite(f0):
        raise ValueError(f"objective non-finite at start: {f0}")
    if bounds is not None:
        for xj, (lo, hi) in zip(x0, bounds):
            if (lo is not None and xj < lo) or (hi is not None and xj > hi):
                raise ValueError("start outside bounds")

    def neg(x):
        v = objective(x)
        # optimizer-safe: treat non-finite excursions as very bad, not fatal
        return -v if np.isfinite(v) else 1e300

    def neg_grad(x):
        return central_diff_gradient(neg, x)

    res = optimize.minimize(
        neg,
        x0,
        jac=neg_grad,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": maxiter, "ftol": 1e-12, "gtol": tol},
    )
    grad_norm = float(np.max(np.abs(res.jac))) if res.jac is not None else np.inf
    return OptimResult(
        argmax=np.asarray(res.x, dtype=float),
        value=-float(res.fun),
        converged=bool(res.success),
        iterations=int(res.nit),
        gradient_norm=grad_norm,
    )


def cholesky(matrix: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L @ L.T == matrix; raises if not SPD."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected square matrix, got shape {m.shape}")
    if not np.allclose(m, m.T, atol=1e-10):
        raise ValueError("matrix is not symmetric")
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise CholeskyError("matrix is not positive definite") from exc


def empirical_quantile(samples: Sequence[float], q: float) -> float:
    """Order-statistic quantile with linear interpolation (the one rule used
    for every interval endpoint in this package)."""
    arr = np.asarray(samples, dtype=float)
    if arr.size == 0:
        raise ValueError("empirical_quantile of empty sample")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must be in [0, 1], got {q}")
    return float(np.quantile(arr, q, method="linear"))


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream keyed by (seed, stream_id).

    Streams derived from the same seed but different ids are statistically
    independent; identical keys give bit-identical draw sequences regardless
    of how work is scheduled across workers.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        return np.random.default_rng(ss)

    def substream(self, k: int) -> "RngStream":
        """Derive a child stream; used to give each bootstrap replicate its own."""
        return RngStream(seed=self.seed, stream_id=self.stream_id * 1_000_003 + k + 1)
