"""Pooled Poisson mixed-effects regression on a quadratic time trend.

Fixed effects are shared across regions; each region gets a Gaussian random
(intercept, slope, curvature) vector with a structured covariance. The
marginal likelihood integral over the random effects has no closed form and
is approximated by a Laplace expansion around each region's posterior mode.
Prediction intervals come from a non-parametric block bootstrap that
resamples whole regions and adds Poisson observation noise on top of the
parameter uncertainty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace as dc_replace

import numpy as np

from . import kernels, numeric
from .data import Panel
from .numeric import RngStream

__all__ = [
    "COVARIANCE_STRUCTURES",
    "GlmmSpec",
    "GlmmFit",
    "GlmmError",
    "laplace_loglik",
    "fit_glmm",
    "select_covariance",
    "predict_glmm",
    "glmm_interval",
    "glmm_bootstrap_intervals",
    "pooled_poisson_irls",
    "beta_standard_errors",
]

LOG_2PI = math.log(2.0 * math.pi)

#: Newton inner-loop settings for the per-region mode search
NEWTON_TOL = 1e-8
NEWTON_MAXITER = 50


class GlmmError(RuntimeError):
    pass


class _Structure:
    """Zero-pattern of the random-effect covariance, log-Cholesky coded."""

    def __init__(self, name: str, n_params: int):
        self.name = name
        self.n_params = n_params

    def build(self, params: np.ndarray) -> np.ndarray:
        """Covariance matrix from the unconstrained parameter vector."""
        p = np.asarray(params, dtype=float)
        if p.shape != (self.n_params,):
            raise ValueError(
                f"{self.name}: expected {self.n_params} parameters, got {p.shape}"
            )
        L = np.zeros((3, 3))
        if self.name == "diagonal":
            L[0, 0], L[1, 1], L[2, 2] = np.exp(np.minimum(p, 40.0))
        elif self.name == "block_01":
            L[0, 0] = math.exp(min(p[0], 40.0))
            L[1, 0] = p[1]
            L[1, 1] = math.exp(min(p[2], 40.0))
            L[2, 2] = math.exp(min(p[3], 40.0))
        elif self.name == "unstructured":
            L[0, 0] = math.exp(min(p[0], 40.0))
            L[1, 0] = p[1]
            L[1, 1] = math.exp(min(p[2], 40.0))
            L[2, 0] = p[3]
            L[2, 1] = p[4]
            L[2, 2] = math.exp(min(p[5], 40.0))
        else:  # pragma: no cover
            raise ValueError(self.name)
        return L @ L.T

    def start(self, sd: float = 0.1) -> np.ndarray:
        p = np.zeros(self.n_params)
        diag_idx = {"diagonal": [0, 1, 2], "block_01": [0, 2, 3], "unstructured": [0, 2, 5]}
        p[diag_idx[self.name]] = math.log(sd)
        return p

    def bounds(self) -> list[tuple[float | None, float | None]]:
        diag_idx = {"diagonal": [0, 1, 2], "block_01": [0, 2, 3], "unstructured": [0, 2, 5]}[self.name]
        out: list[tuple[float | None, float | None]] = []
        for j in range(self.n_params):
            out.append((-12.0, 6.0) if j in diag_idx else (-50.0, 50.0))
        return out


COVARIANCE_STRUCTURES = {
    "diagonal": _Structure("diagonal", 3),
    "block_01": _Structure("block_01", 4),
    "unstructured": _Structure("unstructured", 6),
}


@dataclass(frozen=True)
class GlmmSpec:
    covariance_structure: str = "block_01"
    trend_degree: int = 2  # quadratic trend is the only supported degree

    def __post_init__(self):
        if self.covariance_structure not in COVARIANCE_STRUCTURES:
            raise ValueError(
                f"unknown covariance structure {self.covariance_structure!r}"
            )
        if self.trend_degree != 2:
            raise ValueError("only the quadratic trend is supported")

    @property
    def structure(self) -> _Structure:
        return COVARIANCE_STRUCTURES[self.covariance_structure]


@dataclass(frozen=True)
class GlmmFit:
    beta: tuple[float, float, float]
    sigma_params: tuple[float, ...]
    b_modes: dict[str, tuple[float, float, float]]
    loglik: float
    bic: float
    converged: bool
    spec: GlmmSpec

    @property
    def sigma(self) -> np.ndarray:
        return self.spec.structure.build(np.asarray(self.sigma_params))

    def to_dict(self) -> dict:
        return {
            "beta": list(self.beta),
            "sigma_params": list(self.sigma_params),
            "sigma_matrix": self.sigma.tolist(),
            "b_modes": {r: list(b) for r, b in self.b_modes.items()},
            "loglik": self.loglik,
            "bic": self.bic,
            "converged": self.converged,
            "covariance_structure": self.spec.covariance_structure,
        }


def _design(n_days: int) -> np.ndarray:
    t = np.arange(1, n_days + 1, dtype=float)
    return np.column_stack([np.ones_like(t), t, t * t])


def _require_populations(panel: Panel) -> None:
    for s in panel.series:
        if s.population is None:
            raise GlmmError(f"region {s.region_id} has no population attached")


def _panel_arrays(panel: Panel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(Y counts (I,T), design (T,3), log-population offsets (I,))."""
    X = _design(panel.n_days)
    Y = np.vstack([s.counts_array for s in panel.series])
    off = np.array([math.log(s.population) for s in panel.series])
    return Y, X, off


def _laplace_core(
    panel: Panel,
    beta: np.ndarray,
    sigma: np.ndarray,
    arrays: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
) -> tuple[float, dict[str, np.ndarray], bool]:
    """Sum of per-region Laplace-approximated marginal contributions.

    Returns (loglik, modes, all_converged); loglik is -inf when the mode
    search fails so callers inside an optimizer can treat it as a bad point.
    """
    try:
        L = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        return -math.inf, {}, False
    logdet_sigma = 2.0 * float(np.sum(np.log(np.diag(L))))
    sigma_inv = np.linalg.inv(sigma)

    Y, X, off = arrays if arrays is not None else _panel_arrays(panel)
    eta_fixed = X @ beta
    total, modes_arr, all_ok = kernels.glmm_panel_laplace(
        Y,
        X,
        off,
        eta_fixed,
        sigma_inv,
        logdet_sigma,
        np.zeros((len(panel), 3)),
        NEWTON_TOL,
        NEWTON_MAXITER,
    )
    if not np.isfinite(total):
        return -math.inf, {}, False
    modes = {s.region_id: modes_arr[i] for i, s in enumerate(panel.series)}
    return float(total), modes, bool(all_ok)


def laplace_loglik(
    panel: Panel,
    beta,
    sigma_params,
    spec: GlmmSpec,
) -> tuple[float, dict[str, np.ndarray]]:
    """Laplace-approximated marginal log-likelihood and per-region modes."""
    _require_populations(panel)
    sigma = spec.structure.build(np.asarray(sigma_params, dtype=float))
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise GlmmError("random-effect covariance is not positive definite") from exc
    ll, modes, ok = _laplace_core(panel, np.asarray(beta, dtype=float), sigma)
    if not np.isfinite(ll):
        bad = [r for r in panel.region_ids if r not in modes] or panel.region_ids
        raise GlmmError(f"inner Newton failed for region {bad[0]}")
    if not ok:
        raise GlmmError("inner Newton did not converge for at least one region")
    return ll, modes


def pooled_poisson_irls(
    panel: Panel, tol: float = 1e-10, maxiter: int = 100
) -> np.ndarray:
    """Pooled Poisson GLM (no random effects) with log-population offset,
    fit by iteratively reweighted least squares. Used to initialize beta."""
    _require_populations(panel)
    X = _design(panel.n_days)
    Xs = np.vstack([X] * len(panel))
    y = np.concatenate([s.counts_array for s in panel.series])
    off = np.concatenate(
        [np.full(panel.n_days, math.log(s.population)) for s in panel.series]
    )
    beta = np.array([math.log(max(np.mean(y), 0.5)) - np.mean(off), 0.0, 0.0])
    for _ in range(maxiter):
        eta = Xs @ beta + off
        mu = np.exp(np.minimum(eta, 500.0))
        W = mu
        z = eta - off + (y - mu) / np.maximum(mu, 1e-300)
        XtW = Xs.T * W
        beta_new = np.linalg.solve(XtW @ Xs, XtW @ z)
        if np.max(np.abs(beta_new - beta)) < tol:
            beta = beta_new
            break
        beta = beta_new
    return beta


def fit_glmm(
    panel: Panel,
    spec: GlmmSpec,
    tol: float = 1e-5,
    fixed_sigma_params=None,
    start_beta=None,
    start_sigma_params=None,
    maxiter: int = 500,
) -> GlmmFit:
    """Maximize the Laplace marginal likelihood over (beta, sigma params).

    The covariance is log-Cholesky parameterized under the structure's zero
    pattern, so positive semi-definiteness needs no explicit constraint.
    With ``fixed_sigma_params`` only beta is optimized (used for the
    small-variance limit checks).
    """
    _require_populations(panel)
    if len(panel) < 2:
        raise ValueError("pooled fit needs at least 2 regions")
    if panel.n_days < 3:
        raise ValueError("quadratic trend needs at least 3 days")
    struct = spec.structure
    arrays = _panel_arrays(panel)

    beta0 = (
        np.asarray(start_beta, dtype=float)
        if start_beta is not None
        else pooled_poisson_irls(panel)
    )

    if fixed_sigma_params is not None:
        theta_fixed = np.asarray(fixed_sigma_params, dtype=float)
        sigma_fixed = struct.build(theta_fixed)

        def objective(b):
            ll, _, _ = _laplace_core(panel, b, sigma_fixed, arrays)
            return ll

        res = numeric.maximize(objective, beta0, tol=tol, maxiter=maxiter)
        beta_hat, theta_hat = res.argmax, theta_fixed
        n_free = 3
    else:
        theta0 = (
            np.asarray(start_sigma_params, dtype=float)
            if start_sigma_params is not None
            else struct.start()
        )
        nb = 3

        def objective(x):
            sigma = struct.build(x[nb:])
            ll, _, _ = _laplace_core(panel, x[:nb], sigma, arrays)
            return ll

        x0 = np.concatenate([beta0, theta0])
        bounds = [(None, None)] * nb + struct.bounds()
        res = numeric.maximize(objective, x0, bounds=bounds, tol=tol, maxiter=maxiter)
        beta_hat, theta_hat = res.argmax[:nb], res.argmax[nb:]
        n_free = 3 + struct.n_params

    sigma_hat = struct.build(theta_hat)
    ll, modes, _ = _laplace_core(panel, beta_hat, sigma_hat, arrays)
    if not np.isfinite(ll):
        raise GlmmError("likelihood non-finite at the returned optimum")
    n_obs = len(panel) * panel.n_days
    bic = -2.0 * ll + n_free * math.log(n_obs)
    return GlmmFit(
        beta=tuple(float(b) for b in beta_hat),
        sigma_params=tuple(float(p) for p in theta_hat),
        b_modes={r: tuple(float(v) for v in m) for r, m in modes.items()},
        loglik=float(ll),
        bic=float(bic),
        converged=bool(res.converged),
        spec=spec,
    )


def select_covariance(
    panel: Panel, candidates: list[str] | None = None, tol: float = 1e-5
) -> GlmmSpec:
    """BIC-minimizing covariance structure; ties break toward fewer params."""
    names = candidates if candidates is not None else list(COVARIANCE_STRUCTURES)
    if not names:
        raise ValueError("empty candidate list")
    fits = []
    for name in names:
        spec = GlmmSpec(covariance_structure=name)
        try:
            fit = fit_glmm(panel, spec, tol=tol)
        except (GlmmError, ValueError, np.linalg.LinAlgError):
            continue
        if fit.converged and math.isfinite(fit.bic):
            fits.append((fit.bic, spec.structure.n_params, spec))
    if not fits:
        raise GlmmError("no candidate covariance structure converged")
    fits.sort(key=lambda t: (round(t[0], 9), t[1]))
    return fits[0][2]


def predict_glmm(fit: GlmmFit, panel: Panel, region_id: str, horizon: int) -> float:
    """Plug-in mean forecast exp{(beta + b)' (1, T+h, (T+h)^2) + log pop}."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if region_id not in fit.b_modes:
        raise KeyError(f"region {region_id!r} not in fit")
    series = panel.get(region_id)
    if series.population is None:
        raise GlmmError(f"region {region_id} has no population attached")
    t = panel.n_days + horizon
    beta = np.asarray(fit.beta)
    b = np.asarray(fit.b_modes[region_id])
    eta = (beta[0] + b[0]) + (beta[1] + b[1]) * t + (beta[2] + b[2]) * t * t
    return float(math.exp(eta + math.log(series.population)))


def _eb_mode(series, n_days: int, beta: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Empirical-Bayes random-effect mode for one series under (beta, sigma)."""
    X = _design(n_days)
    sigma_inv = np.linalg.inv(sigma)
    b_hat, pll, _, _, ok = kernels.glmm_region_mode(
        series.counts_array,
        X,
        math.log(series.population),
        X @ beta,
        sigma_inv,
        np.zeros(3),
        NEWTON_TOL,
        NEWTON_MAXITER,
    )
    if not np.isfinite(pll):
        raise GlmmError(f"mode search failed for region {series.region_id}")
    return np.asarray(b_hat)


def glmm_bootstrap_intervals(
    panel: Panel,
    spec: GlmmSpec,
    horizon: int,
    replicates: int = 500,
    level: float = 0.99,
    rng: RngStream | None = None,
    base_fit: GlmmFit | None = None,
    refit_maxiter: int = 60,
    max_failure_frac: float = 0.2,
) -> dict[str, list[tuple[float, float]]]:
    """Block-bootstrap intervals for all regions and steps 1..horizon.

    Each replicate resamples whole regions with replacement (keeping every
    sampled region's full series), refits the model, re-estimates each
    target region's random effect from its own original series under the
    replicate's parameters, and draws one Poisson count per horizon around
    the implied mean. Intervals are empirical quantiles of those draws, so
    they carry both parameter and observation noise.
    """
    _require_populations(panel)
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")
    if replicates < 1:
        raise ValueError(f"replicates must be >= 1, got {replicates}")
    rng = rng or RngStream(seed=0)
    if base_fit is None:
        base_fit = fit_glmm(panel, spec)

    I = len(panel)
    draws: dict[str, list[list[float]]] = {
        r: [[] for _ in range(horizon)] for r in panel.region_ids
    }
    failures = 0
    for k in range(replicates):
        gen = rng.substream(k).generator()
        idx = gen.integers(0, I, size=I)
        resampled = tuple(
            dc_replace(panel.series[j], region_id=f"{panel.series[j].region_id}#{slot}")
            for slot, j in enumerate(idx)
        )
        try:
            refit = fit_glmm(
                Panel(series=resampled),
                spec,
                start_beta=np.asarray(base_fit.beta),
                start_sigma_params=np.asarray(base_fit.sigma_params),
                maxiter=refit_maxiter,
            )
        except (GlmmError, ValueError, np.linalg.LinAlgError):
            failures += 1
            continue
        beta_k = np.asarray(refit.beta)
        sigma_k = refit.sigma
        try:
            np.linalg.cholesky(sigma_k)
        except np.linalg.LinAlgError:
            failures += 1
            continue
        for s in panel.series:
            try:
                b_k = _eb_mode(s, panel.n_days, beta_k, sigma_k)
            except GlmmError:
                failures += 1
                b_k = None
            if b_k is None:
                break
            for h in range(1, horizon + 1):
                t = panel.n_days + h
                eta = (
                    (beta_k[0] + b_k[0])
                    + (beta_k[1] + b_k[1]) * t
                    + (beta_k[2] + b_k[2]) * t * t
                    + math.log(s.population)
                )
                mu = math.exp(min(eta, 500.0))
                draws[s.region_id][h - 1].append(float(gen.poisson(mu)))

    if failures > max_failure_frac * replicates:
        raise GlmmError(
            f"{failures}/{replicates} bootstrap replicates failed to refit"
        )
    qlo, qhi = (1.0 - level) / 2.0, 1.0 - (1.0 - level) / 2.0
    out: dict[str, list[tuple[float, float]]] = {}
    for r, per_h in draws.items():
        out[r] = []
        for h_draws in per_h:
            if not h_draws:
                raise GlmmError(f"no successful bootstrap draws for region {r}")
            out[r].append(
                (
                    numeric.empirical_quantile(h_draws, qlo),
                    numeric.empirical_quantile(h_draws, qhi),
                )
            )
    return out


def glmm_interval(
    panel: Panel,
    spec: GlmmSpec,
    region_id: str,
    horizon: int,
    replicates: int = 500,
    level: float = 0.99,
    rng: RngStream | None = None,
    base_fit: GlmmFit | None = None,
) -> tuple[float, float]:
    """Block-bootstrap interval for one region at T + horizon."""
    if region_id not in panel.region_ids:
        raise KeyError(f"region {region_id!r} not in panel")
    all_iv = glmm_bootstrap_intervals(
        panel, spec, horizon, replicates, level, rng, base_fit
    )
    return all_iv[region_id][horizon - 1]


def beta_standard_errors(panel: Panel, fit: GlmmFit) -> np.ndarray:
    """Approximate standard errors for beta from the numeric Hessian of the
    Laplace log-likelihood at the optimum (full-parameter observed
    information, beta block of the inverse)."""
    struct = fit.spec.structure
    arrays = _panel_arrays(panel)
    x_hat = np.concatenate([np.asarray(fit.beta), np.asarray(fit.sigma_params)])

    def f(x):
        sigma = struct.build(x[3:])
        ll, _, _ = _laplace_core(panel, x[:3], sigma, arrays)
        return ll

    n = x_hat.size
    H = np.zeros((n, n))
    h = np.maximum(1e-4, 1e-4 * np.abs(x_hat))
    f0 = f(x_hat)
    for i in range(n):
        for j in range(i, n):
            xi, xj = h[i], h[j]
            if i == j:
                fp = f(x_hat + 2 * xi * _unit(n, i))
                fm = f(x_hat - 2 * xi * _unit(n, i))
                H[i, i] = (fp - 2 * f0 + fm) / (4 * xi * xi)
            else:
                fpp = f(x_hat + xi * _unit(n, i) + xj * _unit(n, j))
                fpm = f(x_hat + xi * _unit(n, i) - xj * _unit(n, j))
                fmp = f(x_hat - xi * _unit(n, i) + xj * _unit(n, j))
                fmm = f(x_hat - xi * _unit(n, i) - xj * _unit(n, j))
                H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4 * xi * xj)
    info = -H
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(info)
    var = np.clip(np.diag(cov)[:3], 0.0, None)
    return np.sqrt(var)


def _unit(n: int, i: int) -> np.ndarray:
    e = np.zeros(n)
    e[i] = 1.0
    return e
