"""Command-line surface: forecast, backtest, simulate, fit.

Exit codes: 0 success, 1 data error, 2 numerical failure with no output.
Output files are written atomically (temp file + rename) and every run
leaves a metadata JSON from which it can be reproduced.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import os
import sys
import tempfile
from importlib.metadata import PackageNotFoundError, version as pkg_version

import numpy as np
import pandas as pd

from . import backtest as backtest_mod
from . import data as data_mod
from . import glmm as glmm_mod
from . import ingarch as ingarch_mod
from . import kernels, simulate
from .data import DataError, attach_population, parse_regional_csv, window
from .ensemble import EnsembleConfig, forecast_ensemble
from .glmm import GlmmSpec

EXIT_OK = 0
EXIT_DATA_ERROR = 1
EXIT_NUMERICAL_ERROR = 2

MAX_HORIZON = 5


def _version() -> str:
    try:
        return pkg_version("icucast")
    except PackageNotFoundError:
        return "unknown"


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-icucast-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_panel(args) -> data_mod.Panel:
    panel = parse_regional_csv(args.counts)
    pop = pd.read_csv(args.population)
    for col in ("region", "population"):
        if col not in pop.columns:
            raise data_mod.SchemaError(f"population file missing column {col!r}")
    table = {str(r): int(p) for r, p in zip(pop["region"], pop["population"])}
    return attach_population(panel, table)


def _common_config(args) -> EnsembleConfig:
    return EnsembleConfig(
        level=args.level,
        glmm_replicates=args.glmm_replicates,
        ingarch_replicates=args.ingarch_replicates,
        seed=args.seed,
        glmm_spec=GlmmSpec(covariance_structure=args.covariance),
        select_structure=args.select_covariance,
    )


def _forecast_frame(records, last_date: dt.date) -> pd.DataFrame:
    rows = []
    for f in records:
        rows.append(
            {
                "region": f.region_id,
                "date_forecast": (last_date + dt.timedelta(days=f.horizon)).isoformat(),
                "horizon": f.horizon,
                "point": f.point,
                "lo": f.interval[0],
                "hi": f.interval[1],
                "weight": f.weight,
                "glmm_point": f.component_points[0],
                "ingarch_point": f.component_points[1],
                "model_flags": f.model_flags,
            }
        )
    return pd.DataFrame(rows)


def cmd_forecast(args) -> int:
    panel = _load_panel(args)
    if len(panel) == 0:
        print("error: empty panel", file=sys.stderr)
        return EXIT_DATA_ERROR
    panel = window(panel, args.window)
    config = _common_config(args)
    diagnostics: dict = {}
    try:
        records = forecast_ensemble(
            panel, horizon=args.horizon, config=config, diagnostics=diagnostics
        )
    except (RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: forecast failed: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL_ERROR

    os.makedirs(args.output, exist_ok=True)
    frame = _forecast_frame(records, panel.common_dates[-1])
    _atomic_write(os.path.join(args.output, "forecast.csv"), frame.to_csv(index=False))
    _atomic_write(
        os.path.join(args.output, "forecast.json"),
        json.dumps(frame.to_dict(orient="records"), indent=2) + "\n",
    )
    meta = {
        "command": "forecast",
        "version": _version(),
        "kernel_backend": kernels.BACKEND,
        "seed": args.seed,
        "window": args.window,
        "horizon": args.horizon,
        "level": args.level,
        "glmm_replicates": args.glmm_replicates,
        "ingarch_replicates": args.ingarch_replicates,
        "window_dates": [
            panel.common_dates[0].isoformat(),
            panel.common_dates[-1].isoformat(),
        ],
        "warnings": sorted({f.model_flags for f in records if f.model_flags}),
        **diagnostics,
    }
    _atomic_write(
        os.path.join(args.output, "run_metadata.json"),
        json.dumps(meta, indent=2, sort_keys=True) + "\n",
    )
    return EXIT_OK


def cmd_backtest(args) -> int:
    panel = _load_panel(args)
    config = _common_config(args)
    report = backtest_mod.rolling_backtest(
        panel,
        start_date=dt.date.fromisoformat(args.start),
        end_date=dt.date.fromisoformat(args.end),
        window=args.window,
        horizon=args.horizon,
        config=config,
    )
    os.makedirs(args.output, exist_ok=True)
    _atomic_write(
        os.path.join(args.output, "backtest.json"),
        json.dumps(report.to_dict(), indent=2) + "\n",
    )
    rows = []
    for s in report.scores:
        for r in s.hits:
            rows.append(
                {
                    "date": s.date.isoformat(),
                    "target_date": s.target_date.isoformat(),
                    "region": r,
                    "abs_error": s.abs_errors[r],
                    "rel_error": s.rel_errors[r],
                    "hit": s.hits[r],
                    "exceedance": s.exceedances[r],
                }
            )
    _atomic_write(
        os.path.join(args.output, "backtest_daily.csv"),
        pd.DataFrame(rows).to_csv(index=False),
    )
    summary = report.summary_text()
    _atomic_write(os.path.join(args.output, "backtest_summary.txt"), summary)
    sys.stdout.write(summary)
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.model == "glmm":
        gen = simulate.GlmmGenerator(
            beta=tuple(args.beta),
            sigma=tuple(
                tuple(row)
                for row in np.diag([s * s for s in args.sigma_diag]).tolist()
            ),
            populations=tuple([args.population] * args.regions),
            days=args.days,
            seed=args.seed,
        )
        panel, _ = simulate.simulate_glmm_panel(gen)
    else:
        gen = simulate.IngarchGenerator(
            alpha0=args.alpha0,
            alpha1=args.alpha1,
            gamma=tuple(args.gamma),
            days=args.days,
            mu1=args.mu1,
            seed=args.seed,
        )
        series, _ = simulate.simulate_ingarch_series(gen)
        panel = data_mod.Panel(series=(series,))
    data_mod.write_panel_csv(panel, args.output)
    pops = pd.DataFrame(
        {"region": panel.region_ids, "population": [s.population or 1 for s in panel.series]}
    )
    if args.population_output:
        _atomic_write(args.population_output, pops.to_csv(index=False))
    return EXIT_OK


def cmd_fit(args) -> int:
    panel = _load_panel(args)
    panel = window(panel, args.window)
    spec = GlmmSpec(covariance_structure=args.covariance)
    if args.select_covariance:
        spec = glmm_mod.select_covariance(panel)
    out: dict = {"glmm": None, "ingarch": {}}
    try:
        out["glmm"] = glmm_mod.fit_glmm(panel, spec).to_dict()
    except (glmm_mod.GlmmError, ValueError) as exc:
        out["glmm_error"] = str(exc)
    for s in panel.series:
        try:
            ispec = ingarch_mod.select_trend_order(s)
            out["ingarch"][s.region_id] = ingarch_mod.fit_ingarch(s, ispec).to_dict()
        except (ingarch_mod.IngarchError, ValueError) as exc:
            out["ingarch"][s.region_id] = {"error": str(exc)}
    os.makedirs(args.output, exist_ok=True)
    _atomic_write(
        os.path.join(args.output, "fits.json"), json.dumps(out, indent=2) + "\n"
    )
    if out["glmm"] is None and all("error" in v for v in out["ingarch"].values()):
        return EXIT_NUMERICAL_ERROR
    return EXIT_OK


def _add_io_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--counts", required=True, help="counts CSV (long format)")
    p.add_argument("--population", required=True, help="CSV with region,population")
    p.add_argument("--output", required=True, help="output directory")


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window", type=int, default=15)
    p.add_argument("--horizon", type=int, default=1)
    p.add_argument("--level", type=float, default=0.99)
    p.add_argument("--glmm-replicates", type=int, default=500)
    p.add_argument("--ingarch-replicates", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--covariance",
        default="block_01",
        choices=sorted(glmm_mod.COVARIANCE_STRUCTURES),
    )
    p.add_argument(
        "--select-covariance",
        action="store_true",
        help="re-run BIC covariance-structure selection on this panel",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icucast",
        description="Short-horizon count-panel forecasting with ensembled "
        "pooled-regression and autoregressive models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forecast", help="fit and forecast the next 1..h days")
    _add_io_args(p)
    _add_model_args(p)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("backtest", help="rolling-origin evaluation")
    _add_io_args(p)
    _add_model_args(p)
    p.add_argument("--start", required=True, help="first origin date (ISO)")
    p.add_argument("--end", required=True, help="last origin date (ISO)")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("simulate", help="write a synthetic panel CSV")
    p.add_argument("--model", choices=["glmm", "ingarch"], default="glmm")
    p.add_argument("--output", required=True, help="panel CSV path")
    p.add_argument("--population-output", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--days", type=int, default=30)
    p.add_argument("--regions", type=int, default=20)
    p.add_argument("--population", type=int, default=1_000_000)
    p.add_argument("--beta", type=float, nargs=3, default=[-9.0, 0.2, -0.01])
    p.add_argument("--sigma-diag", type=float, nargs=3, default=[0.3, 0.02, 0.001])
    p.add_argument("--alpha0", type=float, default=0.3)
    p.add_argument("--alpha1", type=float, default=0.3)
    p.add_argument("--gamma", type=float, nargs="+", default=[5.0])
    p.add_argument("--mu1", type=float, default=10.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit both models and emit serialized fits")
    _add_io_args(p)
    _add_model_args(p)
    p.set_defaults(func=cmd_fit)

    return parser


def _validate(args) -> None:
    if hasattr(args, "horizon") and not 1 <= args.horizon <= MAX_HORIZON:
        raise ValueError(f"horizon must be in 1..{MAX_HORIZON}")
    if hasattr(args, "level") and not 0.0 < args.level < 1.0:
        raise ValueError("level must be in (0, 1)")
    if hasattr(args, "window") and args.window < 2:
        raise ValueError("window must be >= 2")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _validate(args)
        return args.func(args)
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA_ERROR
    except (glmm_mod.GlmmError, ingarch_mod.IngarchError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
