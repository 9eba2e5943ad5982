import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lcph.data import Dataset, ModelConfig, Parameters, StepFunction
from lcph.prediction import (
    SurvivalCurve,
    brier_scores,
    cross_validated_brier,
    cv_brier_folds,
    kaplan_meier,
    predicted_survival,
    survival_matrix,
)
from lcph.simulation import generate, scenario

import oracles


def _toy_params(rng, L=2, q=2):
    event_times = np.array([0.5, 1.0, 2.0])
    baseline = StepFunction(event_times, np.array([0.2, 0.3, 0.4]))
    alpha = rng.normal(scale=0.5, size=(L - 1, 3))
    gamma = rng.normal(scale=0.5, size=q * L + L - 1)
    return Parameters(alpha, gamma, baseline)


class TestPredictedSurvival:
    def test_time_zero_is_one(self, rng):
        params = _toy_params(rng)
        config = ModelConfig(num_classes=2)
        assert predicted_survival([0.3, -0.2], 0.0, params, config) == 1.0

    def test_single_class_reduction(self, rng):
        config = ModelConfig(num_classes=1)
        baseline = StepFunction([1.0, 2.0], [0.3, 0.2])
        zeta = np.array([0.4, -0.7])
        params = Parameters(np.zeros((0, 3)), zeta, baseline)
        x = np.array([0.5, 1.2])
        t = 1.5
        expected = np.exp(-0.3 * np.exp(x @ zeta))
        assert predicted_survival(x, t, params, config) == pytest.approx(expected)

    def test_two_class_toy_direct_sum(self, rng):
        config = ModelConfig(num_classes=2)
        params = _toy_params(rng)
        x = np.array([0.8, -0.3])
        t = 1.2
        probs = oracles.membership_probs_direct(x, params.alpha)
        cumhaz = params.baseline(t)
        expected = sum(
            probs[l - 1]
            * np.exp(-cumhaz * np.exp(oracles.build_class_design(x, l, 2) @ params.gamma))
            for l in (1, 2)
        )
        assert predicted_survival(x, t, params, config) == pytest.approx(
            expected, rel=1e-12
        )

    @settings(max_examples=30, deadline=None)
    @given(st.data())
    def test_nonincreasing_in_time(self, data):
        rng = np.random.default_rng(data.draw(st.integers(0, 10_000)))
        params = _toy_params(rng)
        config = ModelConfig(num_classes=2)
        x = rng.normal(size=2)
        grid = np.sort(rng.uniform(0.0, 5.0, size=40))
        values = predicted_survival(x, grid, params, config)
        assert np.all(np.diff(values) <= 1e-12)
        assert np.all((values >= 0.0) & (values <= 1.0))

    def test_matrix_shape(self, rng):
        params = _toy_params(rng)
        config = ModelConfig(num_classes=2)
        S = survival_matrix([0.5, 1.5], rng.normal(size=(7, 2)), params, config)
        assert S.shape == (7, 2)


class TestKaplanMeier:
    def test_all_events_no_censoring(self):
        data = Dataset([1.0, 2.0, 3.0], [1, 1, 1], np.zeros((3, 1)))
        curve = kaplan_meier(data)
        np.testing.assert_array_equal(curve.times, [1.0, 2.0, 3.0])
        np.testing.assert_allclose(curve.values, [2 / 3, 1 / 3, 0.0])

    def test_all_censored_event_mode(self):
        data = Dataset([1.0, 2.0], [0, 0], np.zeros((2, 1)))
        curve = kaplan_meier(data, target="event")
        assert curve(5.0) == 1.0

    def test_mixed_censoring_hand_value(self):
        # times 1+, 2, 3+ : only the event at 2 moves the curve, risk set 2
        data = Dataset([1.0, 2.0, 3.0], [0, 1, 0], np.zeros((3, 1)))
        curve = kaplan_meier(data)
        assert curve(2.0) == pytest.approx(0.5)
        assert curve(1.5) == 1.0

    def test_censoring_mode_flips_status(self):
        data = Dataset([1.0, 2.0, 3.0], [0, 1, 0], np.zeros((3, 1)))
        reverse = kaplan_meier(data, target="censoring")
        # censoring events at 1 and 3: S_C(1) = 2/3, S_C(3) = 0
        assert reverse(1.0) == pytest.approx(2 / 3)
        assert reverse(3.0) == pytest.approx(0.0)

    def test_matches_direct_product_limit(self, rng):
        times = rng.exponential(1.0, 50)
        status = rng.integers(0, 2, 50)
        status[0] = 1
        data = Dataset(times, status, np.zeros((50, 1)))
        curve = kaplan_meier(data)
        pts, vals = oracles.km_direct(times, status)
        np.testing.assert_allclose(curve(pts), vals, rtol=1e-12)

    def test_empirical_survival_when_uncensored(self, rng):
        times = rng.exponential(1.0, 80)
        data = Dataset(times, np.ones(80, dtype=int), np.zeros((80, 1)))
        curve = kaplan_meier(data)
        grid = np.quantile(times, [0.1, 0.4, 0.8])
        empirical = [(times > t).mean() for t in grid]
        np.testing.assert_allclose(curve(grid), empirical, atol=1e-12)

    def test_left_limit(self):
        curve = SurvivalCurve([1.0, 2.0], [0.6, 0.2])
        assert curve.left_limit(1.0) == 1.0
        assert curve.left_limit(1.5) == 0.6
        assert curve(1.0) == 0.6

    def test_invalid_target(self, rng):
        data = Dataset([1.0], [1], np.zeros((1, 1)))
        with pytest.raises(ValueError):
            kaplan_meier(data, target="other")


def _constant_predictor(value):
    def predictor(times, X):
        return np.full((np.atleast_2d(X).shape[0], len(np.atleast_1d(times))), value)

    return predictor


class TestBrierScores:
    def test_oracle_predictor_scores_zero(self):
        times = np.array([1.0, 2.0, 3.0, 4.0])
        data = Dataset(times, [1, 1, 1, 1], np.zeros((4, 1)))
        G = kaplan_meier(data, target="censoring")

        def oracle_predictor(grid, X):
            # predicts each subject's indicator I(T > t) exactly
            return (times[:, None] > np.atleast_1d(grid)[None, :]).astype(float)

        curve = brier_scores(data, oracle_predictor, G, [0.5, 1.5, 2.5, 3.5])
        np.testing.assert_allclose(curve.bs1, 0.0, atol=1e-12)
        np.testing.assert_allclose(curve.bs2, 0.0, atol=1e-12)

    def test_constant_half_scores_quarter(self):
        data = Dataset([1.0, 2.0, 3.0, 4.0], [1, 1, 1, 1], np.zeros((4, 1)))
        G = kaplan_meier(data, target="censoring")
        curve = brier_scores(data, _constant_predictor(0.5), G, [0.5, 2.5])
        np.testing.assert_allclose(curve.bs1, 0.25, atol=1e-12)
        np.testing.assert_allclose(curve.bs2, 0.25, atol=1e-12)

    def test_four_subject_fixture_vs_direct(self, rng):
        times = np.array([0.8, 1.5, 2.5, 3.5])
        status = np.array([1, 0, 1, 1])
        data = Dataset(times, status, np.zeros((4, 1)))
        G = kaplan_meier(data, target="censoring")
        rng_local = np.random.default_rng(7)
        S_matrix = np.sort(rng_local.uniform(0.2, 0.99, size=(4, 3)))[:, ::-1]
        grid = np.array([1.0, 2.0, 3.0])

        def predictor(ts, X):
            ts = np.atleast_1d(ts)
            cols = []
            # piecewise-constant interpolation of the fixture matrix
            for t in ts:
                idx = np.searchsorted(grid, t, side="right") - 1
                idx = np.clip(idx, 0, 2)
                col = S_matrix[:, idx] if t >= grid[0] else np.ones(4)
                cols.append(col)
            return np.column_stack(cols)

        curve = brier_scores(data, predictor, G, grid)
        surv_own = np.array(
            [predictor([t], np.zeros((4, 1)))[i, 0] for i, t in enumerate(times)]
        )
        expected_bs1, expected_bs2 = oracles.brier_direct(
            times, status, S_matrix, surv_own, G.times, G.values, grid
        )
        np.testing.assert_allclose(curve.bs1, expected_bs1, rtol=1e-12)
        np.testing.assert_allclose(curve.bs2, expected_bs2, rtol=1e-12)

    def test_bs1_equals_bs2_uncensored(self, rng):
        times = rng.exponential(1.0, 30)
        data = Dataset(times, np.ones(30, dtype=int), rng.normal(size=(30, 2)))
        G = kaplan_meier(data, target="censoring")  # no censoring: G == 1
        rng_local = np.random.default_rng(3)

        def predictor(ts, X):
            k = len(np.atleast_1d(ts))
            base = rng_local.uniform(0.1, 0.9, size=(30, 1))
            return np.tile(base, (1, k))

        grid = np.quantile(times, [0.2, 0.5, 0.8])
        curve = brier_scores(data, predictor, G, grid)
        np.testing.assert_allclose(curve.bs1, curve.bs2, rtol=1e-12)

    def test_exhausted_censoring_mass_is_nan(self):
        # the last subject is censored, so the reverse estimator hits zero
        data = Dataset([1.0, 2.0, 3.0], [1, 1, 0], np.zeros((3, 1)))
        G = kaplan_meier(data, target="censoring")
        assert G(3.0) == 0.0
        curve = brier_scores(data, _constant_predictor(0.5), G, [2.5, 3.5])
        assert np.isfinite(curve.bs1[0])
        assert np.isnan(curve.bs1[1])
        assert np.isfinite(curve.bs2).all()


@pytest.fixture(scope="module")
def sim_data():
    data, _ = generate(scenario("I", n=400, seed=21))
    return data


class TestCrossValidatedBrier:
    def test_deterministic_given_seed(self, sim_data):
        config = ModelConfig(num_classes=2, seed=0)
        grid = np.array([0.5, 1.0, 2.0])
        first = cross_validated_brier(sim_data, config, folds=3, grid=grid, seed=9)
        second = cross_validated_brier(sim_data, config, folds=3, grid=grid, seed=9)
        np.testing.assert_array_equal(first[0].bs1, second[0].bs1)
        np.testing.assert_array_equal(first[1].bs2, second[1].bs2)

    def test_output_structure(self, sim_data):
        config = ModelConfig(num_classes=2, seed=0)
        grid = np.array([0.5, 1.0, 2.0])
        result = cv_brier_folds(sim_data, config, folds=3, grid=grid, seed=9)
        assert result["folds_used"] == 3
        assert len(result["per_fold"]) == 3
        assert result["latent_class"].bs1.shape == (3,)
        assert result["metadata"]["censoring_estimate"].startswith("kaplan-meier")
        assert np.all(result["latent_class"].bs1 >= 0.0)

    def test_stratification_keeps_events_in_folds(self, sim_data):
        from lcph.prediction import _stratified_folds

        rng = np.random.default_rng(4)
        assignment = _stratified_folds(sim_data.status, 5, rng)
        for f in range(5):
            train = sim_data.subset(assignment != f)
            assert train.n_events > 0

    def test_too_few_folds_rejected(self, sim_data):
        with pytest.raises(ValueError):
            cross_validated_brier(sim_data, ModelConfig(num_classes=2), folds=1)
