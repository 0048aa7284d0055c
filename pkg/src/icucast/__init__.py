"""icucast: short-horizon forecasting for panels of nonnegative count series.

Combines a pooled Poisson mixed-effects trend regression with per-series
integer-valued autoregressions through leave-last-out optimal weights, and
backtests itself with rolling-origin evaluation.
"""

from .data import Panel, RegionSeries, attach_population, parse_regional_csv, window
from .ensemble import EnsembleConfig, EnsembleForecast, forecast_ensemble
from .kernels import BACKEND as KERNEL_BACKEND

__all__ = [
    "Panel",
    "RegionSeries",
    "parse_regional_csv",
    "attach_population",
    "window",
    "EnsembleConfig",
    "EnsembleForecast",
    "forecast_ensemble",
    "KERNEL_BACKEND",
]

__version__ = "0.1.0"
