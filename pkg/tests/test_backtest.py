import datetime as dt

import numpy as np
import pytest

from icucast.backtest import BacktestReport, DailyScore, rolling_backtest, score_day
from icucast.ensemble import EnsembleConfig, EnsembleForecast
from icucast.simulate import GlmmGenerator, simulate_glmm_panel

D0 = dt.date(2020, 4, 9)
D1 = dt.date(2020, 4, 10)


def fc(region, point, lo, hi, horizon=1):
    return EnsembleForecast(
        region_id=region,
        horizon=horizon,
        point=point,
        interval=(lo, hi),
        weight=0.5,
        component_points=(point, point),
        component_intervals=((lo, hi), (lo, hi)),
    )


class TestScoreDay:
    def test_single_region_case(self):
        score = score_day([fc("Abruzzo", 57.0, 48.0, 91.0)], {"Abruzzo": 53}, D0, D1)
        assert score.abs_errors["Abruzzo"] == pytest.approx(4.0)
        assert score.rel_errors["Abruzzo"] == pytest.approx(4.0 / 53.0)
        assert score.hits["Abruzzo"] is True
        assert score.exceedances["Abruzzo"] is False

    def test_interval_endpoints_inclusive(self):
        score = score_day(
            [fc("A", 50.0, 48.0, 91.0), fc("B", 50.0, 48.0, 91.0)],
            {"A": 48, "B": 91},
            D0,
            D1,
        )
        assert score.hits == {"A": True, "B": True}
        assert score.exceedances == {"A": False, "B": False}

    def test_miss_below_and_exceedance_above(self):
        score = score_day(
            [fc("A", 50.0, 48.0, 91.0), fc("B", 50.0, 48.0, 91.0)],
            {"A": 47, "B": 92},
            D0,
            D1,
        )
        assert score.hits == {"A": False, "B": False}
        assert score.exceedances == {"A": False, "B": True}

    def test_zero_observation_rel_error_guard(self):
        score = score_day([fc("A", 3.0, 0.0, 8.0)], {"A": 0}, D0, D1)
        assert score.rel_errors["A"] == pytest.approx(3.0)  # denominator floored at 1

    def test_missing_observation_raises(self):
        with pytest.raises(KeyError):
            score_day([fc("A", 3.0, 0.0, 8.0)], {}, D0, D1)


class TestReportAggregates:
    def make_report(self):
        s1 = score_day(
            [fc("A", 57.0, 48.0, 91.0), fc("B", 100.0, 90.0, 130.0)],
            {"A": 53, "B": 120},
            D0,
            D1,
        )
        s2 = score_day(
            [fc("A", 60.0, 50.0, 70.0), fc("B", 110.0, 100.0, 115.0)],
            {"A": 72, "B": 112},
            D1,
            D1 + dt.timedelta(days=1),
        )
        return BacktestReport(scores=(s1, s2), skipped=(("2020-04-08", "x"),))

    def test_recomputed_from_raw_values(self):
        rep = self.make_report()
        agg = rep.aggregates()
        abs_e = [4.0, 20.0, 12.0, 2.0]
        rel_e = [4 / 53, 20 / 120, 12 / 72, 2 / 112]
        assert agg["n_intervals"] == 4
        assert agg["n_skipped"] == 1
        assert agg["abs_error_median"] == pytest.approx(np.median(abs_e))
        assert agg["abs_error_q1"] == pytest.approx(np.quantile(abs_e, 0.25))
        assert agg["rel_error_mean"] == pytest.approx(np.mean(rel_e))
        assert agg["coverage"] == pytest.approx(3 / 4)  # A misses its interval on day 2
        assert agg["exceedance_count"] == 1
        assert agg["exceedance_rate"] == pytest.approx(1 / 4)

    def test_empty_report(self):
        agg = BacktestReport(scores=()).aggregates()
        assert agg == {"n_intervals": 0, "n_skipped": 0}
        assert BacktestReport(scores=()).summary_text() == "no scored forecasts\n"

    def test_summary_text_mentions_key_figures(self):
        text = self.make_report().summary_text()
        assert "4" in text and "coverage" in text

    def test_round_trips_through_dict(self):
        rep = self.make_report()
        d = rep.to_dict()
        assert d["aggregates"] == rep.aggregates()
        assert len(d["daily"]) == 2
        assert d["daily"][0]["date"] == "2020-04-09"
        assert d["skipped"] == [{"date": "2020-04-08", "reason": "x"}]


@pytest.fixture(scope="module")
def long_panel():
    gen = GlmmGenerator(
        beta=(-9.0, 0.12, -0.003),
        sigma=np.diag([0.04, 4e-4, 1e-6]).tolist(),
        populations=(300_000, 800_000, 1_500_000, 600_000),
        days=22,
        seed=55,
    )
    panel, _ = simulate_glmm_panel(gen)
    return panel


CFG = EnsembleConfig(glmm_replicates=30, ingarch_replicates=150, seed=3)


class TestRollingBacktest:
    def test_single_origin(self, long_panel):
        d = long_panel.common_dates[-2]
        rep = rolling_backtest(long_panel, d, d, window=15, horizon=1, config=CFG)
        assert len(rep.scores) == 1
        assert rep.scores[0].date == d
        assert rep.scores[0].target_date == long_panel.common_dates[-1]
        assert set(rep.scores[0].hits) == set(long_panel.region_ids)

    def test_origin_beyond_data_skipped(self, long_panel):
        d = long_panel.common_dates[-1]  # target would be outside the panel
        rep = rolling_backtest(long_panel, d, d, window=15, config=CFG)
        assert rep.scores == ()
        assert rep.skipped[0][1] == "target beyond available data"

    def test_origin_before_data_skipped(self, long_panel):
        d = long_panel.common_dates[0] - dt.timedelta(days=1)
        rep = rolling_backtest(long_panel, d, d, window=15, config=CFG)
        assert rep.skipped[0][1] == "insufficient history"

    def test_multiple_origins_counted(self, long_panel):
        start = long_panel.common_dates[-4]
        end = long_panel.common_dates[-1]
        rep = rolling_backtest(long_panel, start, end, window=15, config=CFG)
        assert len(rep.scores) == 3  # the last origin has no target day
        assert len(rep.skipped) == 1

    def test_deterministic(self, long_panel):
        d = long_panel.common_dates[-2]
        a = rolling_backtest(long_panel, d, d, window=15, config=CFG)
        b = rolling_backtest(long_panel, d, d, window=15, config=CFG)
        assert a == b

    def test_bad_date_order(self, long_panel):
        with pytest.raises(ValueError):
            rolling_backtest(
                long_panel, long_panel.common_dates[-1], long_panel.common_dates[0]
            )
