import math

import numpy as np
import pytest

from icucast.data import Panel
from icucast.glmm import (
    COVARIANCE_STRUCTURES,
    GlmmError,
    GlmmFit,
    GlmmSpec,
    beta_standard_errors,
    fit_glmm,
    glmm_bootstrap_intervals,
    glmm_interval,
    laplace_loglik,
    pooled_poisson_irls,
    predict_glmm,
    select_covariance,
)
from icucast.numeric import RngStream
from icucast.simulate import GlmmGenerator, simulate_glmm_panel

from conftest import make_panel

BETA = (-9.0, 0.2, -0.01)
SIGMA = np.diag([0.09, 1e-3, 1e-5])


@pytest.fixture(scope="module")
def sim_panel():
    gen = GlmmGenerator(
        beta=BETA,
        sigma=SIGMA,
        populations=tuple(int(p) for p in np.linspace(100_000, 2_000_000, 12)),
        days=15,
        seed=42,
    )
    panel, _ = simulate_glmm_panel(gen)
    return panel


@pytest.fixture(scope="module")
def sim_fit(sim_panel):
    return fit_glmm(sim_panel, GlmmSpec("diagonal"))


class TestStructures:
    def test_param_counts(self):
        assert {s.name: s.n_params for s in COVARIANCE_STRUCTURES.values()} == {
            "diagonal": 3,
            "block_01": 4,
            "unstructured": 6,
        }

    def test_diagonal_build(self):
        s = COVARIANCE_STRUCTURES["diagonal"]
        out = s.build(np.log([0.5, 2.0, 3.0]))
        np.testing.assert_allclose(out, np.diag([0.25, 4.0, 9.0]))

    def test_block_01_zero_pattern(self):
        s = COVARIANCE_STRUCTURES["block_01"]
        out = s.build(np.array([0.0, 0.7, -0.3, 0.2]))
        # curvature effect independent of the (intercept, slope) pair
        assert out[0, 2] == out[1, 2] == 0.0
        assert out[0, 1] != 0.0
        np.testing.assert_allclose(out, out.T)

    def test_unstructured_reproduces_arbitrary_spd(self):
        rng = np.random.default_rng(1)
        A = rng.normal(size=(3, 3))
        spd = A @ A.T + np.eye(3)
        L = np.linalg.cholesky(spd)
        params = np.array(
            [math.log(L[0, 0]), L[1, 0], math.log(L[1, 1]), L[2, 0], L[2, 1],
             math.log(L[2, 2])]
        )
        np.testing.assert_allclose(
            COVARIANCE_STRUCTURES["unstructured"].build(params), spd, atol=1e-12
        )

    def test_unknown_structure_rejected(self):
        with pytest.raises(ValueError):
            GlmmSpec("banded")


class TestLaplaceOracle:
    def test_matches_dense_grid_integration(self):
        """Laplace approximation vs brute-force 3D quadrature per region."""
        gen = GlmmGenerator(
            beta=BETA,
            sigma=np.diag([0.04, 4e-4, 4e-6]),
            populations=(200_000, 500_000, 900_000),
            days=8,
            seed=7,
        )
        panel, _ = simulate_glmm_panel(gen)
        beta = np.array(BETA)
        spec = GlmmSpec("diagonal")
        sigma_params = 0.5 * np.log([0.04, 4e-4, 4e-6])
        sigma = spec.structure.build(sigma_params)
        ll, modes = laplace_loglik(panel, beta, sigma_params, spec)

        sigma_inv = np.linalg.inv(sigma)
        logdet = float(np.linalg.slogdet(sigma)[1])
        T = panel.n_days
        t = np.arange(1, T + 1, dtype=float)
        X = np.column_stack([np.ones(T), t, t * t])
        total = 0.0
        n_grid = 41
        for s in panel.series:
            mode = np.asarray(modes[s.region_id])
            # grid spans the Laplace posterior +/- 6 sd on each axis
            eta0 = X @ (beta + mode) + math.log(s.population)
            H = (X.T * np.exp(eta0)) @ X + sigma_inv
            sds = np.sqrt(np.diag(np.linalg.inv(H)))
            axes = [
                np.linspace(mode[k] - 6 * sds[k], mode[k] + 6 * sds[k], n_grid)
                for k in range(3)
            ]
            B0, B1, B2 = np.meshgrid(*axes, indexing="ij")
            B = np.stack([B0.ravel(), B1.ravel(), B2.ravel()], axis=1)
            eta = B @ X.T + (X @ beta + math.log(s.population))
            y = s.counts_array
            from scipy.special import gammaln

            pll = eta @ y - np.exp(eta).sum(axis=1) - gammaln(y + 1.0).sum()
            quad = np.einsum("ij,jk,ik->i", B, sigma_inv, B)
            logf = pll - 0.5 * quad - 0.5 * logdet - 1.5 * math.log(2 * math.pi)
            vol = np.prod([a[1] - a[0] for a in axes])
            region_ll = math.log(np.sum(np.exp(logf - logf.max())) * vol) + logf.max()
            total += region_ll
        assert ll == pytest.approx(total, rel=5e-3)

    def test_singular_sigma_rejected(self):
        panel = make_panel({"A": [3, 4, 5], "B": [6, 5, 7]})
        with pytest.raises(GlmmError):
            laplace_loglik(
                panel, BETA, np.array([-1e9, -1e9, -1e9]), GlmmSpec("diagonal")
            )


class TestIrls:
    def test_matches_statsmodels_glm(self, sim_panel):
        sm = pytest.importorskip("statsmodels.api")
        beta = pooled_poisson_irls(sim_panel)

        T = sim_panel.n_days
        t = np.arange(1, T + 1, dtype=float)
        X = np.column_stack([np.ones(T), t, t * t])
        Xs = np.vstack([X] * len(sim_panel))
        y = np.concatenate([s.counts_array for s in sim_panel.series])
        off = np.concatenate(
            [np.full(T, math.log(s.population)) for s in sim_panel.series]
        )
        ref = sm.GLM(y, Xs, family=sm.families.Poisson(), offset=off).fit()
        np.testing.assert_allclose(beta, ref.params, atol=1e-6)


class TestFit:
    def test_recovers_generating_parameters(self, sim_fit):
        assert sim_fit.converged
        assert sim_fit.beta[0] == pytest.approx(BETA[0], abs=0.5)
        assert sim_fit.beta[1] == pytest.approx(BETA[1], abs=0.1)
        assert sim_fit.beta[2] == pytest.approx(BETA[2], abs=0.01)

    def test_beta_within_three_standard_errors(self, sim_panel, sim_fit):
        se = beta_standard_errors(sim_panel, sim_fit)
        assert np.all(se > 0) and np.all(np.isfinite(se))
        for j in range(3):
            assert abs(sim_fit.beta[j] - BETA[j]) <= 3.5 * se[j]

    def test_tiny_fixed_sigma_matches_pooled_glm(self, sim_panel):
        """As the random-effect variances vanish the model becomes a plain
        pooled Poisson GLM, so beta must match the IRLS solution."""
        spec = GlmmSpec("diagonal")
        tiny = np.full(3, -12.0)
        fit = fit_glmm(sim_panel, spec, fixed_sigma_params=tiny, tol=1e-8)
        glm_beta = pooled_poisson_irls(sim_panel)
        np.testing.assert_allclose(fit.beta, glm_beta, atol=2e-4)

    def test_identical_series_shrink_variances(self):
        counts = [int(round(20 * math.exp(0.05 * t))) for t in range(12)]
        panel = make_panel({f"R{i}": counts for i in range(5)}, population=500_000)
        fit = fit_glmm(panel, GlmmSpec("diagonal"))
        assert fit.sigma[0, 0] < 1e-3

    def test_loglik_nests_across_structures(self, sim_panel):
        """Richer structures contain the simpler ones, so the maximized
        log-likelihood cannot decrease."""
        lls = {
            name: fit_glmm(sim_panel, GlmmSpec(name)).loglik
            for name in COVARIANCE_STRUCTURES
        }
        assert lls["block_01"] >= lls["diagonal"] - 1e-3
        assert lls["unstructured"] >= lls["block_01"] - 1e-3

    def test_bic_formula(self, sim_panel, sim_fit):
        n = len(sim_panel) * sim_panel.n_days
        assert sim_fit.bic == pytest.approx(
            -2 * sim_fit.loglik + 6 * math.log(n), rel=1e-12
        )

    def test_region_order_invariance(self, sim_panel):
        shuffled = Panel(series=tuple(reversed(sim_panel.series)))
        a = fit_glmm(sim_panel, GlmmSpec("diagonal"))
        b = fit_glmm(shuffled, GlmmSpec("diagonal"))
        np.testing.assert_allclose(a.beta, b.beta, atol=1e-5)
        assert a.loglik == pytest.approx(b.loglik, abs=1e-5)

    def test_needs_two_regions(self):
        panel = make_panel({"A": [1, 2, 3]})
        with pytest.raises(ValueError):
            fit_glmm(panel, GlmmSpec())

    def test_needs_population(self):
        panel = make_panel({"A": [1, 2, 3], "B": [2, 3, 4]}, population=None)
        with pytest.raises(GlmmError):
            fit_glmm(panel, GlmmSpec())


class TestSelectCovariance:
    def test_returns_known_structure(self, sim_panel):
        spec = select_covariance(sim_panel)
        assert spec.covariance_structure in COVARIANCE_STRUCTURES

    def test_single_candidate(self, sim_panel):
        spec = select_covariance(sim_panel, candidates=["diagonal"])
        assert spec.covariance_structure == "diagonal"

    def test_empty_candidates_rejected(self, sim_panel):
        with pytest.raises(ValueError):
            select_covariance(sim_panel, candidates=[])


class TestPredict:
    @staticmethod
    def _manual_fit(beta, modes):
        return GlmmFit(
            beta=beta,
            sigma_params=(math.log(0.1),) * 3,
            b_modes=modes,
            loglik=0.0,
            bic=0.0,
            converged=True,
            spec=GlmmSpec("diagonal"),
        )

    def test_closed_form(self):
        panel = make_panel({"A": [5, 6, 7], "B": [2, 3, 4]}, population=1000)
        fit = self._manual_fit((-5.0, 0.1, -0.01), {"A": (0.2, 0.0, 0.0), "B": (0.0,) * 3})
        t = 3 + 2  # T + h
        expected = math.exp(-4.8 + 0.1 * t - 0.01 * t * t + math.log(1000))
        assert predict_glmm(fit, panel, "A", 2) == pytest.approx(expected, rel=1e-14)

    def test_population_scales_prediction(self):
        p1 = make_panel({"A": [5, 6], "B": [2, 3]}, population=1000)
        p2 = make_panel({"A": [5, 6], "B": [2, 3]}, population=2000)
        fit = self._manual_fit((-5.0, 0.1, 0.0), {"A": (0.0,) * 3, "B": (0.0,) * 3})
        assert predict_glmm(fit, p2, "A", 1) == pytest.approx(
            2 * predict_glmm(fit, p1, "A", 1), rel=1e-14
        )

    def test_unknown_region(self):
        panel = make_panel({"A": [5, 6], "B": [2, 3]})
        fit = self._manual_fit((-5.0, 0.0, 0.0), {"A": (0.0,) * 3, "B": (0.0,) * 3})
        with pytest.raises(KeyError):
            predict_glmm(fit, panel, "C", 1)

    def test_bad_horizon(self):
        panel = make_panel({"A": [5, 6], "B": [2, 3]})
        fit = self._manual_fit((-5.0, 0.0, 0.0), {"A": (0.0,) * 3, "B": (0.0,) * 3})
        with pytest.raises(ValueError):
            predict_glmm(fit, panel, "A", 0)


class TestBootstrapIntervals:
    def test_basic_shape_and_order(self, sim_panel, sim_fit):
        iv = glmm_bootstrap_intervals(
            sim_panel,
            sim_fit.spec,
            horizon=3,
            replicates=40,
            rng=RngStream(1),
            base_fit=sim_fit,
        )
        assert set(iv) == set(sim_panel.region_ids)
        for per_h in iv.values():
            assert len(per_h) == 3
            for lo, hi in per_h:
                assert lo <= hi

    def test_interval_contains_point_forecast(self, sim_panel, sim_fit):
        lo, hi = glmm_interval(
            sim_panel,
            sim_fit.spec,
            sim_panel.region_ids[0],
            1,
            replicates=60,
            rng=RngStream(2),
            base_fit=sim_fit,
        )
        point = predict_glmm(sim_fit, sim_panel, sim_panel.region_ids[0], 1)
        assert lo <= point <= hi

    def test_single_replicate_degenerate(self, sim_panel, sim_fit):
        iv = glmm_bootstrap_intervals(
            sim_panel,
            sim_fit.spec,
            horizon=1,
            replicates=1,
            rng=RngStream(3),
            base_fit=sim_fit,
        )
        for per_h in iv.values():
            lo, hi = per_h[0]
            assert lo == hi

    def test_nesting_in_level(self, sim_panel, sim_fit):
        kw = dict(horizon=1, replicates=60, base_fit=sim_fit)
        iv95 = glmm_bootstrap_intervals(
            sim_panel, sim_fit.spec, level=0.95, rng=RngStream(4), **kw
        )
        iv99 = glmm_bootstrap_intervals(
            sim_panel, sim_fit.spec, level=0.99, rng=RngStream(4), **kw
        )
        for r in sim_panel.region_ids:
            assert iv99[r][0][0] <= iv95[r][0][0]
            assert iv95[r][0][1] <= iv99[r][0][1]

    def test_seeded_runs_identical(self, sim_panel, sim_fit):
        kw = dict(horizon=2, replicates=25, base_fit=sim_fit)
        a = glmm_bootstrap_intervals(
            sim_panel, sim_fit.spec, rng=RngStream(5), **kw
        )
        b = glmm_bootstrap_intervals(
            sim_panel, sim_fit.spec, rng=RngStream(5), **kw
        )
        assert a == b

    def test_bad_level(self, sim_panel, sim_fit):
        with pytest.raises(ValueError):
            glmm_bootstrap_intervals(
                sim_panel, sim_fit.spec, 1, level=1.0, base_fit=sim_fit
            )
