"""Ingestion, validation, alignment and windowing of regional count panels.

A panel is a set of daily, gap-free, nonnegative integer series (one per
region) on a shared date grid, each with a population exposure. Panels and
series are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

__all__ = [
    "RegionSeries",
    "Panel",
    "DataError",
    "SchemaError",
    "DuplicateRecordError",
    "GapError",
    "parse_regional_csv",
    "attach_population",
    "window",
    "drop_last_day",
    "write_panel_csv",
    "read_panel_csv",
]

DEFAULT_COLUMN_MAP = {
    "date": "data",
    "region": "denominazione_regione",
    "count": "terapia_intensiva",
}


class DataError(ValueError):
    """Base class for panel ingestion/validation failures."""


class SchemaError(DataError):
    """A required column is missing from the input file."""


class DuplicateRecordError(DataError):
    """The same (region, date) pair appears more than once."""


class GapError(DataError):
    """A region's dates are not consecutive calendar days."""


@dataclass(frozen=True)
class RegionSeries:
    """One region's dated daily count series plus population exposure.

    ``population`` may be None until :func:`attach_population` runs; all
    model-fitting code requires it to be set.
    """

    region_id: str
    dates: tuple[dt.date, ...]
    counts: tuple[int, ...]
    population: int | None = None

    def __post_init__(self):
        if len(self.dates) != len(self.counts):
            raise DataError(
                f"{self.region_id}: {len(self.counts)} counts for {len(self.dates)} dates"
            )
        if len(self.dates) < 1:
            raise DataError(f"{self.region_id}: empty series")
        for prev, cur in zip(self.dates, self.dates[1:]):
            if (cur - prev).days != 1:
                raise GapError(
                    f"{self.region_id}: missing day between {prev} and {cur}"
                )
        for d, c in zip(self.dates, self.counts):
            if c < 0:
                raise DataError(f"{self.region_id}: negative count {c} on {d}")
        if self.population is not None and self.population < 1:
            raise DataError(
                f"{self.region_id}: population must be >= 1, got {self.population}"
            )

    def __len__(self) -> int:
        return len(self.dates)

    @property
    def counts_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.float64)


@dataclass(frozen=True)
class Panel:
    """Aligned collection of RegionSeries sharing one date grid."""

    series: tuple[RegionSeries, ...]
    common_dates: tuple[dt.date, ...] = field(default=())

    def __post_init__(self):
        ids = [s.region_id for s in self.series]
        if len(set(ids)) != len(ids):
            dupes = sorted({r for r in ids if ids.count(r) > 1})
            raise DataError(f"duplicate region ids: {dupes}")
        if self.series:
            dates = self.series[0].dates
            for s in self.series[1:]:
                if s.dates != dates:
                    raise DataError(
                        f"series {s.region_id} not aligned with {self.series[0].region_id}"
                    )
            if self.common_dates != dates:
                object.__setattr__(self, "common_dates", dates)

    def __len__(self) -> int:
        return len(self.series)

    @property
    def n_days(self) -> int:
        return len(self.common_dates)

    @property
    def region_ids(self) -> list[str]:
        return [s.region_id for s in self.series]

    def get(self, region_id: str) -> RegionSeries:
        for s in self.series:
            if s.region_id == region_id:
                return s
        raise KeyError(f"unknown region: {region_id!r}")


def parse_regional_csv(
    path, column_map: dict[str, str] | None = None
) -> Panel:
    """Read a long-format CSV (one row per region per day) into a Panel.

    ``column_map`` maps the logical names ``date``, ``region``, ``count`` to
    the file's column names; defaults match the Italian Civil-Protection
    schema. Populations are not set (see :func:`attach_population`).
    """
    colmap = dict(DEFAULT_COLUMN_MAP)
    if column_map:
        colmap.update(column_map)
    df = pd.read_csv(path, dtype=str)
    for logical, col in colmap.items():
        if col not in df.columns:
            raise SchemaError(f"missing required column {col!r} (for {logical})")
    if df.empty:
        return Panel(series=())

    date_col, region_col, count_col = colmap["date"], colmap["region"], colmap["count"]
    try:
        parsed_dates = pd.to_datetime(df[date_col], format="ISO8601").dt.date
    except (ValueError, TypeError) as exc:
        raise DataError(f"unparseable date in column {date_col!r}: {exc}") from exc

    counts = np.empty(len(df), dtype=np.int64)
    for i, (raw, row_no) in enumerate(zip(df[count_col], df.index)):
        try:
            val = int(str(raw).strip())
        except (ValueError, TypeError):
            raise DataError(
                f"row {row_no + 2}: non-integer count {raw!r}"
            ) from None
        if val < 0:
            raise DataError(f"row {row_no + 2}: negative count {val}")
        counts[i] = val

    work = pd.DataFrame(
        {"region": df[region_col], "date": parsed_dates, "count": counts}
    )
    dup = work.duplicated(subset=["region", "date"], keep=False)
    if dup.any():
        r = work[dup].iloc[0]
        raise DuplicateRecordError(
            f"duplicate rows for region {r['region']!r} on {r['date']}"
        )

    series = []
    for region, grp in work.groupby("region", sort=True):
        grp = grp.sort_values("date")
        series.append(
            RegionSeries(
                region_id=str(region),
                dates=tuple(grp["date"]),
                counts=tuple(int(c) for c in grp["count"]),
            )
        )
    return Panel(series=tuple(series))


def attach_population(panel: Panel, pop_table: dict[str, int]) -> Panel:
    """Return a copy of ``panel`` with populations set from ``pop_table``."""
    missing = [r for r in panel.region_ids if r not in pop_table]
    if missing:
        raise DataError(f"population table missing regions: {missing}")
    out = []
    for s in panel.series:
        pop = int(pop_table[s.region_id])
        if pop < 1:
            raise DataError(f"{s.region_id}: population must be >= 1, got {pop}")
        out.append(replace(s, population=pop))
    return Panel(series=tuple(out))


def window(panel: Panel, width: int) -> Panel:
    """Keep the last ``width`` days of every series (whole panel if shorter).

    Inside any fitting window the time index runs t = 1..T with t = 1 the
    first kept day; forecasts address t = T + h.
    """
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    if panel.n_days <= width:
        return panel
    out = tuple(
        replace(s, dates=s.dates[-width:], counts=s.counts[-width:])
        for s in panel.series
    )
    return Panel(series=out)


def drop_last_day(panel: Panel) -> tuple[Panel, dict[str, int]]:
    """Shorten the panel by one day; return the removed final observations."""
    if panel.n_days < 2:
        raise DataError("cannot drop last day: series of length 1")
    removed = {s.region_id: s.counts[-1] for s in panel.series}
    out = tuple(
        replace(s, dates=s.dates[:-1], counts=s.counts[:-1]) for s in panel.series
    )
    return Panel(series=out), removed


def write_panel_csv(panel: Panel, path) -> None:
    """Serialize a panel in canonical long format (round-trips via parse)."""
    rows = []
    for s in panel.series:
        for d, c in zip(s.dates, s.counts):
            rows.append((d.isoformat(), s.region_id, c))
    df = pd.DataFrame(rows, columns=list(DEFAULT_COLUMN_MAP.values()))
    df.to_csv(path, index=False)


def read_panel_csv(path) -> Panel:
    """Parse a panel previously written by :func:`write_panel_csv`."""
    return parse_regional_csv(path)
