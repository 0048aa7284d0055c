import datetime as dt

import numpy as np
import pytest

from icucast.data import Panel, RegionSeries


def make_series(counts, region_id="A", population=1000, start=dt.date(2020, 4, 1)):
    dates = tuple(start + dt.timedelta(days=k) for k in range(len(counts)))
    return RegionSeries(
        region_id=region_id,
        dates=dates,
        counts=tuple(int(c) for c in counts),
        population=population,
    )


def make_panel(count_rows, populations=None, population=1000, start=dt.date(2020, 4, 1)):
    """count_rows: dict region_id -> list of counts (all same length).

    ``population`` is the default for every region; ``populations`` overrides
    it per region. Pass ``population=None`` for an unpopulated panel.
    """
    populations = populations or {}
    series = tuple(
        make_series(c, region_id=r, population=populations.get(r, population), start=start)
        for r, c in count_rows.items()
    )
    return Panel(series=series)


@pytest.fixture
def small_panel():
    rng = np.random.default_rng(7)
    rows = {
        f"R{i}": rng.poisson(50 + 5 * np.arange(15)).tolist() for i in range(4)
    }
    return make_panel(rows, populations={f"R{i}": 100_000 for i in range(4)})
