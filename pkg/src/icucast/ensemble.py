"""Combination of the pooled-regression and autoregressive forecasts.

Per-region weights are calibrated by a leave-last-out step: both models are
refit without the final day, and the weight minimizing the absolute error
of the combined prediction for that held-out day is used (per region when
the window is long enough, a single pooled weight otherwise). Interval
limits are combined with the same weights, which is conservative for the
nominal coverage level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import glmm as glmm_mod
from . import ingarch as ingarch_mod
from .data import Panel, drop_last_day
from .glmm import GlmmSpec
from .numeric import RngStream

__all__ = [
    "EnsembleConfig",
    "EnsembleForecast",
    "optimal_weight",
    "pooled_weight",
    "forecast_ensemble",
]

#: per-region weights need at least this many days in the full window
PER_REGION_WEIGHT_MIN_DAYS = 15


@dataclass(frozen=True)
class EnsembleConfig:
    level: float = 0.99
    glmm_replicates: int = 500
    ingarch_replicates: int = 1000
    seed: int = 0
    glmm_spec: GlmmSpec = field(default_factory=GlmmSpec)
    select_structure: bool = False  # re-run covariance selection on this panel
    reselect_trend_leave_last_out: bool = True

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise ValueError(f"level must be in (0, 1), got {self.level}")


@dataclass(frozen=True)
class EnsembleForecast:
    region_id: str
    horizon: int
    point: float
    interval: tuple[float, float]
    weight: float
    component_points: tuple[float, float]  # (pooled-model, autoregressive)
    component_intervals: tuple[tuple[float, float], tuple[float, float]]
    model_flags: str = ""

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"weight must be in [0, 1], got {self.weight}")
        if self.interval[0] > self.interval[1]:
            raise ValueError(f"interval lo > hi: {self.interval}")


def optimal_weight(pred1: float, pred2: float, observed: float) -> float:
    """Weight in [0, 1] minimizing |x*pred1 + (1-x)*pred2 - observed|.

    Ties (pred1 == pred2) return 0.5; otherwise the unconstrained solution
    is clamped to [0, 1].
    """
    if not (math.isfinite(pred1) and math.isfinite(pred2) and math.isfinite(observed)):
        raise ValueError("non-finite input to optimal_weight")
    if pred1 == pred2:
        return 0.5
    x = (observed - pred2) / (pred1 - pred2)
    return min(1.0, max(0.0, x))


def pooled_weight(triples: list[tuple[float, float, float]]) -> float:
    """Single weight minimizing the summed absolute combination error.

    The objective is piecewise linear in x, so the minimum lies at one of
    the per-triple breakpoints or an endpoint; all are evaluated exactly.
    Ties break toward the smaller x.
    """
    if not triples:
        raise ValueError("pooled_weight of empty list")
    for p1, p2, y in triples:
        if not (math.isfinite(p1) and math.isfinite(p2) and math.isfinite(y)):
            raise ValueError("non-finite input to pooled_weight")
    if all(p1 == p2 for p1, p2, _ in triples):
        return 0.5

    candidates = {0.0, 1.0}
    for p1, p2, y in triples:
        if p1 != p2:
            candidates.add(min(1.0, max(0.0, (y - p2) / (p1 - p2))))

    def objective(x):
        return sum(abs(x * p1 + (1.0 - x) * p2 - y) for p1, p2, y in triples)

    best_x, best_val = None, math.inf
    for x in sorted(candidates):
        v = objective(x)
        if v < best_val - 1e-12:
            best_x, best_val = x, v
    return best_x


def _fit_ingarch_region(series, reselect: bool, spec=None):
    if reselect or spec is None:
        spec = ingarch_mod.select_trend_order(series)
    return ingarch_mod.fit_ingarch(series, spec)


def forecast_ensemble(
    panel: Panel,
    horizon: int = 1,
    config: EnsembleConfig | None = None,
    diagnostics: dict | None = None,
) -> list[EnsembleForecast]:
    """Full combined forecast for every region at steps 1..horizon.

    A hard failure of one component for a region degrades that region's
    forecast to the surviving component (weight 0 or 1) instead of aborting
    the panel; the degradation is recorded in ``model_flags``. If a dict is
    passed as ``diagnostics`` it is filled with run details (selected trend
    orders, convergence flags, weight mode) for metadata files.
    """
    config = config or EnsembleConfig()
    if not 1 <= horizon:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if panel.n_days < 2:
        raise ValueError("need at least 2 days to calibrate weights")

    glmm_spec = config.glmm_spec
    if config.select_structure:
        glmm_spec = GlmmSpec(covariance_structure=glmm_mod.select_covariance(panel).covariance_structure)

    shortened, held_out = drop_last_day(panel)

    # leave-last-out component predictions for the held-out day
    llo_glmm: dict[str, float] = {}
    glmm_llo_failed = False
    try:
        fit_short = glmm_mod.fit_glmm(shortened, glmm_spec)
        for r in panel.region_ids:
            llo_glmm[r] = glmm_mod.predict_glmm(fit_short, shortened, r, 1)
    except (glmm_mod.GlmmError, ValueError, np.linalg.LinAlgError):
        glmm_llo_failed = True

    llo_ing: dict[str, float] = {}
    for s in shortened.series:
        try:
            fit = _fit_ingarch_region(s, config.reselect_trend_leave_last_out)
            llo_ing[s.region_id] = ingarch_mod.forecast_ingarch(fit, s, 1)
        except (ingarch_mod.IngarchError, ValueError):
            pass

    # weights from the leave-last-out errors
    weights: dict[str, float] = {}
    both = [
        r for r in panel.region_ids if not glmm_llo_failed and r in llo_glmm and r in llo_ing
    ]
    if panel.n_days >= PER_REGION_WEIGHT_MIN_DAYS:
        for r in both:
            weights[r] = optimal_weight(llo_glmm[r], llo_ing[r], float(held_out[r]))
    elif both:
        w = pooled_weight(
            [(llo_glmm[r], llo_ing[r], float(held_out[r])) for r in both]
        )
        for r in both:
            weights[r] = w

    # full-window fits
    glmm_ok = True
    glmm_points: dict[str, list[float]] = {}
    glmm_ivs: dict[str, list[tuple[float, float]]] = {}
    try:
        fit_full = glmm_mod.fit_glmm(panel, glmm_spec)
        for r in panel.region_ids:
            glmm_points[r] = [
                glmm_mod.predict_glmm(fit_full, panel, r, h) for h in range(1, horizon + 1)
            ]
        glmm_ivs = glmm_mod.glmm_bootstrap_intervals(
            panel,
            glmm_spec,
            horizon,
            replicates=config.glmm_replicates,
            level=config.level,
            rng=RngStream(seed=config.seed, stream_id=1),
            base_fit=fit_full,
        )
    except (glmm_mod.GlmmError, ValueError, np.linalg.LinAlgError):
        glmm_ok = False

    ing_points: dict[str, list[float]] = {}
    ing_ivs: dict[str, list[tuple[float, float]]] = {}
    ing_orders: dict[str, int] = {}
    ing_converged: dict[str, bool] = {}
    for i, s in enumerate(panel.series):
        try:
            fit = _fit_ingarch_region(s, True)
            ing_orders[s.region_id] = fit.spec.trend_order
            ing_converged[s.region_id] = fit.converged
            ing_points[s.region_id] = [
                ingarch_mod.forecast_ingarch(fit, s, h) for h in range(1, horizon + 1)
            ]
            ing_ivs[s.region_id] = [
                (float(lo), float(hi))
                for lo, hi in ingarch_mod.ingarch_interval_path(
                    fit,
                    s,
                    horizon,
                    replicates=config.ingarch_replicates,
                    level=config.level,
                    rng=RngStream(seed=config.seed, stream_id=2).substream(i),
                )
            ]
        except (ingarch_mod.IngarchError, ValueError):
            pass

    if diagnostics is not None:
        diagnostics.update(
            {
                "covariance_structure": glmm_spec.covariance_structure,
                "glmm_converged": glmm_ok and fit_full.converged,
                "ingarch_trend_orders": ing_orders,
                "ingarch_converged": ing_converged,
                "weight_mode": (
                    "per-region"
                    if panel.n_days >= PER_REGION_WEIGHT_MIN_DAYS
                    else "pooled"
                ),
                "weights": dict(weights),
            }
        )

    out: list[EnsembleForecast] = []
    for r in panel.region_ids:
        has_g = glmm_ok and r in glmm_points and r in glmm_ivs
        has_i = r in ing_points and r in ing_ivs
        if not has_g and not has_i:
            raise RuntimeError(f"both component models failed for region {r}")
        flags = []
        if has_g and has_i:
            w = weights.get(r, 0.5)
            if r not in weights:
                flags.append("weight-default")
        elif has_g:
            w = 1.0
            flags.append("autoregressive-failed")
        else:
            w = 0.0
            flags.append("pooled-failed")
        for h in range(1, horizon + 1):
            gp = glmm_points[r][h - 1] if has_g else math.nan
            ip = ing_points[r][h - 1] if has_i else math.nan
            giv = glmm_ivs[r][h - 1] if has_g else (math.nan, math.nan)
            iiv = ing_ivs[r][h - 1] if has_i else (math.nan, math.nan)
            if has_g and has_i:
                point = w * gp + (1.0 - w) * ip
                lo = w * giv[0] + (1.0 - w) * iiv[0]
                hi = w * giv[1] + (1.0 - w) * iiv[1]
            elif has_g:
                point, (lo, hi) = gp, giv
            else:
                point, (lo, hi) = ip, iiv
            out.append(
                EnsembleForecast(
                    region_id=r,
                    horizon=h,
                    point=point,
                    interval=(lo, hi),
                    weight=w,
                    component_points=(gp, ip),
                    component_intervals=(giv, iiv),
                    model_flags=",".join(flags),
                )
            )
    return out
