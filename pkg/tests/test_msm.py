"""MSM fitting, standardization, and bootstrap behavior."""

import warnings

import numpy as np
import pytest

from rcds import (
    ConfigError,
    DegenerateResponse,
    DgpParams,
    MsmSpec,
    StrategyGrid,
    WeightOptions,
    analyze_cohort,
    bootstrap_pipeline,
    expand,
    fit_outcome_msm,
    fit_resource_msm,
    simulate_cohort,
    standardize,
)
from rcds.glm import predict, DesignMatrix
from rcds.msm import _BootstrapEngine, _curves_for, attach_weights_unit
from rcds.strategies import horizon_matrix
from rcds.weights import attach_weights, fit_monitor_model


@pytest.fixture(scope="module")
def small_grid():
    return StrategyGrid.default(x_step=50)


@pytest.fixture(scope="module")
def sim_cohort():
    return simulate_cohort(DgpParams(), 3000, seed=71)


@pytest.fixture(scope="module")
def weighted(sim_cohort, small_grid):
    model = fit_monitor_model(sim_cohort)
    return attach_weights(expand(sim_cohort, small_grid), model,
                          numerator="one", scheme="censoring")


class TestMsmFits:
    def test_outcome_and_resource_fit(self, weighted, small_grid, sim_cohort):
        spec = MsmSpec()
        fy = fit_outcome_msm(weighted, spec)
        fd = fit_resource_msm(weighted, spec)
        assert fy.converged and fd.converged
        risk = standardize(fy, sim_cohort, small_grid, spec)
        usage = standardize(fd, sim_cohort, small_grid, spec)
        assert np.all((risk > 0) & (risk < 1))
        assert np.all(usage > 1.0)

    def test_single_threshold_grid_rejected(self, sim_cohort):
        grid = StrategyGrid(strategies=(StrategyGrid.default()[15],))
        model = fit_monitor_model(sim_cohort)
        wds = attach_weights(expand(sim_cohort, grid), model)
        with pytest.raises(ConfigError):
            fit_outcome_msm(wds, MsmSpec())

    def test_all_zero_outcomes_warn_and_pin_curve(self, sim_cohort, small_grid):
        model = fit_monitor_model(sim_cohort)
        wds = attach_weights(expand(sim_cohort, small_grid), model)
        wds.ds.response_y[:] = np.where(
            np.isnan(wds.ds.response_y), np.nan, 0.0)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            fit = fit_outcome_msm(wds, MsmSpec())
        assert any(issubclass(w.category, DegenerateResponse) for w in caught)
        risk = standardize(fit, sim_cohort, small_grid, MsmSpec())
        assert np.all(risk < 1e-8)

    def test_flat_curve_when_clock_inert(self):
        # no mechanism for monitoring to move the outcome: fitted curve flat
        # within twice its bootstrap SE
        p = DgpParams(fail_clock=0.0)
        cohort = simulate_cohort(p, 4000, seed=72)
        grid = StrategyGrid.default(x_step=100)
        point = bootstrap_pipeline(cohort, grid,
                                   MsmSpec(baseline_terms=["sex", "age"]),
                                   WeightOptions(numerator="one"),
                                   B=60, seed=3)
        t = point.table
        spread = t.risk.max() - t.risk.min()
        assert spread <= 2 * (t.risk_se.max() + t.risk_se.min())

    def test_flat_usage_when_windows_coincide(self):
        p = DgpParams()
        cohort = simulate_cohort(p, 4000, seed=73)
        grid = StrategyGrid.default(x_step=100, window_below=(3, 8),
                                    window_above=(3, 8), override_window=(3, 8))
        point = bootstrap_pipeline(cohort, grid, MsmSpec(),
                                   WeightOptions(numerator="one"),
                                   B=60, seed=4)
        t = point.table
        spread = t.usage.max() - t.usage.min()
        assert spread <= 2 * (t.usage_se.max() + t.usage_se.min())


class TestStandardize:
    def test_no_baseline_terms_equals_direct_prediction(self, weighted,
                                                        sim_cohort, small_grid):
        spec = MsmSpec(baseline_terms=None)
        fit = fit_outcome_msm(weighted, spec)
        out = standardize(fit, sim_cohort, small_grid, spec)
        knots = spec.knots_for(small_grid)
        from rcds.msm import _strategy_basis
        sb, snames = _strategy_basis(small_grid.xs, knots)
        design = DesignMatrix(
            np.column_stack([np.ones(len(small_grid)), sb]),
            ["intercept", *snames])
        direct = predict(fit, design)
        assert np.allclose(out, direct, rtol=1e-12)

    def test_standardize_matches_explicit_predict_average(self, weighted,
                                                          sim_cohort,
                                                          small_grid):
        spec = MsmSpec()
        fit = fit_outcome_msm(weighted, spec)
        out = standardize(fit, sim_cohort, small_grid, spec)
        from rcds.cohort import baseline_design
        from rcds.msm import _strategy_basis
        knots = spec.knots_for(small_grid)
        base_X, base_names = baseline_design(sim_cohort, "all")
        sb, snames = _strategy_basis(small_grid.xs, knots)
        n = sim_cohort.n_subjects
        for j in (0, len(small_grid) - 1):
            X = np.column_stack([
                np.ones(n), np.tile(sb[j], (n, 1)), base_X])
            design = DesignMatrix(X, ["intercept", *snames, *base_names])
            want = predict(fit, design).mean()
            assert out[j] == pytest.approx(want, rel=1e-10)

    def test_one_subject_cohort(self, small_grid):
        cohort = simulate_cohort(DgpParams(dropout_hazard=0.0), 1, seed=2)
        # standardizing over one subject equals that subject's prediction
        big = simulate_cohort(DgpParams(), 2000, seed=74)
        model = fit_monitor_model(big)
        wds = attach_weights(expand(big, small_grid), model)
        spec = MsmSpec(baseline_terms=None)
        fit = fit_outcome_msm(wds, spec)
        one = standardize(fit, cohort, small_grid, spec)
        full = standardize(fit, big, small_grid, spec)
        assert np.allclose(one, full, rtol=1e-12)  # no baseline terms

    def test_curve_continuity_in_x(self, weighted, sim_cohort):
        # evaluate the fitted spline on a dense grid: adjacent values close
        spec = MsmSpec()
        fit = fit_outcome_msm(weighted, spec)
        dense = StrategyGrid.default(x_step=1.0)
        vals = standardize(fit, sim_cohort, dense, spec)
        steps = np.abs(np.diff(vals))
        assert steps.max() < 0.01


class TestBootstrap:
    def test_b1_degenerate_interval(self, sim_cohort, small_grid):
        point = bootstrap_pipeline(sim_cohort, small_grid, MsmSpec(),
                                   WeightOptions(numerator="one"),
                                   B=1, seed=11)
        t = point.table
        assert np.allclose(t.risk_lo, t.risk_hi)

    def test_duplication_leaves_point_estimates_unchanged(self, sim_cohort,
                                                          small_grid):
        doubled_records = sim_cohort.records() + [
            r for r in sim_cohort.records()]
        for i, r in enumerate(doubled_records):
            r.subject_id = f"d{i}"
        from rcds import Cohort
        from rcds.simulate import SIM_SCHEMA
        doubled = Cohort.from_records(doubled_records, SIM_SCHEMA,
                                      sim_cohort.horizon)
        wopts = WeightOptions(numerator="one")
        a = analyze_cohort(sim_cohort, small_grid, MsmSpec(), wopts).table
        b = analyze_cohort(doubled, small_grid, MsmSpec(), wopts).table
        assert np.allclose(a.risk, b.risk, atol=1e-9)
        assert np.allclose(a.usage, b.usage, atol=1e-9)

    def test_monitor_model_varies_across_replicates(self, sim_cohort,
                                                    small_grid):
        wopts = WeightOptions(numerator="one")
        horizons = horizon_matrix(sim_cohort, small_grid)
        engine = _BootstrapEngine(sim_cohort, small_grid, MsmSpec(), wopts,
                                  horizons)
        coefs = []
        for seed in range(3):
            rng = np.random.default_rng(seed)
            mult = np.bincount(
                rng.integers(0, sim_cohort.n_subjects, sim_cohort.n_subjects),
                minlength=sim_cohort.n_subjects).astype(float)
            coefs.append(engine._fit_monitor(mult).coef)
        assert not np.allclose(coefs[0], coefs[1])
        assert not np.allclose(coefs[1], coefs[2])

    def test_engine_matches_reference_replicate(self, sim_cohort, small_grid):
        wopts = WeightOptions(numerator="one")
        spec = MsmSpec()
        horizons = horizon_matrix(sim_cohort, small_grid)
        engine = _BootstrapEngine(sim_cohort, small_grid, spec, wopts,
                                  horizons)
        rng = np.random.default_rng(21)
        mult = np.bincount(
            rng.integers(0, sim_cohort.n_subjects, sim_cohort.n_subjects),
            minlength=sim_cohort.n_subjects).astype(float)
        r1, u1 = engine.run(mult)
        r2, u2 = _curves_for(sim_cohort, small_grid, spec, wopts, horizons,
                             mult)
        assert np.allclose(r1, r2, rtol=1e-8)
        assert np.allclose(u1, u2, rtol=1e-8)

    def test_engine_point_matches_row_level_analysis(self, sim_cohort,
                                                     small_grid):
        wopts = WeightOptions(numerator="one")
        spec = MsmSpec()
        horizons = horizon_matrix(sim_cohort, small_grid)
        engine = _BootstrapEngine(sim_cohort, small_grid, spec, wopts,
                                  horizons)
        r, u = engine.run(None)
        pt = analyze_cohort(sim_cohort, small_grid, spec, wopts).table
        assert np.allclose(r, pt.risk, rtol=1e-8)
        assert np.allclose(u, pt.usage, rtol=1e-8)

    def test_deterministic_given_seed(self, sim_cohort, small_grid):
        wopts = WeightOptions(numerator="one")
        a = bootstrap_pipeline(sim_cohort, small_grid, MsmSpec(), wopts,
                               B=20, seed=5).table
        b = bootstrap_pipeline(sim_cohort, small_grid, MsmSpec(), wopts,
                               B=20, seed=5).table
        assert np.array_equal(a.risk_lo, b.risk_lo)
        assert np.array_equal(a.usage_hi, b.usage_hi)

    def test_weighted_matches_unweighted_under_randomized_monitoring(self):
        # decision-scheme weights are flat when monitoring ignores history
        from scipy.special import logit

        p = DgpParams(mon_intercept=float(logit(0.25)), mon_marker=0.0,
                      mon_gap=0.0, mon_override=0.0)
        cohort = simulate_cohort(p, 4000, seed=75)
        grid = StrategyGrid.default(x_step=100)
        spec = MsmSpec(baseline_terms=None)
        weighted = bootstrap_pipeline(
            cohort, grid, spec,
            WeightOptions(numerator="marginal", scheme="decision"),
            B=60, seed=6).table
        unweighted = analyze_cohort(
            cohort, grid, spec, WeightOptions(weighting="none")).table
        gap = np.abs(weighted.risk - unweighted.risk)
        assert np.all(gap <= 2 * np.maximum(weighted.risk_se, 1e-3))
