"""Synthetic data generators for both model families.

Used as estimation-recovery oracles and coverage test beds; each generator
also returns its latent truths (random-effect draws, mean paths) so tests
never have to re-derive them.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .data import Panel, RegionSeries
from .numeric import RngStream

__all__ = ["GlmmGenerator", "IngarchGenerator", "simulate_glmm_panel", "simulate_ingarch_series"]

_EPOCH = dt.date(2020, 3, 1)


@dataclass(frozen=True)
class GlmmGenerator:
    beta: tuple[float, float, float]
    sigma: tuple[tuple[float, ...], ...]  # 3x3 random-effect covariance
    populations: tuple[int, ...]
    days: int
    seed: int
    start_date: dt.date = _EPOCH

    @property
    def regions(self) -> int:
        return len(self.populations)


@dataclass(frozen=True)
class IngarchGenerator:
    alpha0: float
    alpha1: float
    gamma: tuple[float, ...]
    days: int
    mu1: float
    seed: int
    start_date: dt.date = _EPOCH

    def __post_init__(self):
        if self.alpha0 < 0 or self.alpha1 < 0 or self.alpha0 + self.alpha1 >= 1:
            raise ValueError("need alpha0, alpha1 >= 0 and alpha0 + alpha1 < 1")
        if any(g < 0 for g in self.gamma) or self.mu1 <= 0:
            raise ValueError("gamma must be nonnegative and mu1 positive")


def simulate_glmm_panel(gen: GlmmGenerator) -> tuple[Panel, np.ndarray]:
    """Draw a panel from the mixed model; returns (panel, true b draws).

    b[i] ~ N(0, sigma); counts are Poisson around
    exp{(beta + b_i)' (1, t, t^2) + log pop_i} for t = 1..days.
    """
    sigma = np.asarray(gen.sigma, dtype=float)
    if sigma.shape != (3, 3):
        raise ValueError(f"sigma must be 3x3, got {sigma.shape}")
    rng = RngStream(seed=gen.seed).generator()
    try:
        b = rng.multivariate_normal(
            np.zeros(3), sigma, size=gen.regions, method="cholesky"
        )
    except np.linalg.LinAlgError:
        # semi-definite sigma (e.g. all zeros): use an eigh square root
        w, V = np.linalg.eigh(sigma)
        if np.min(w) < -1e-10:
            raise ValueError("sigma must be positive semi-definite") from None
        root = V * np.sqrt(np.clip(w, 0.0, None))
        b = rng.standard_normal((gen.regions, 3)) @ root.T
    t = np.arange(1, gen.days + 1, dtype=float)
    X = np.column_stack([np.ones_like(t), t, t * t])
    dates = tuple(gen.start_date + dt.timedelta(days=k) for k in range(gen.days))
    beta = np.asarray(gen.beta)
    series = []
    for i, pop in enumerate(gen.populations):
        eta = X @ (beta + b[i]) + np.log(pop)
        mu = np.exp(eta)
        counts = rng.poisson(mu)
        series.append(
            RegionSeries(
                region_id=f"R{i:03d}",
                dates=dates,
                counts=tuple(int(c) for c in counts),
                population=int(pop),
            )
        )
    return Panel(series=tuple(series)), b


def simulate_ingarch_series(
    gen: IngarchGenerator, region_id: str = "SIM"
) -> tuple[RegionSeries, np.ndarray]:
    """Iterate the count autoregression with Poisson draws; returns
    (series, latent mean path)."""
    rng = RngStream(seed=gen.seed).generator()
    gamma = np.asarray(gen.gamma, dtype=float)
    mu = np.empty(gen.days)
    y = np.empty(gen.days, dtype=np.int64)
    mu[0] = gen.mu1
    y[0] = rng.poisson(mu[0])
    powers = np.arange(gamma.size)
    for t in range(1, gen.days):
        drive = float(np.sum(gamma * (float(t) ** powers)))  # powers of t = (t+1)-1
        mu[t] = gen.alpha0 * mu[t - 1] + gen.alpha1 * y[t - 1] + drive
        y[t] = rng.poisson(mu[t])
    dates = tuple(gen.start_date + dt.timedelta(days=k) for k in range(gen.days))
    series = RegionSeries(
        region_id=region_id,
        dates=dates,
        counts=tuple(int(c) for c in y),
        population=1,
    )
    return series, mu
