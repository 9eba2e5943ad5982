import numpy as np
import pytest
import scipy.stats

from lcph.likelihood import class_membership_probs
from lcph.simulation import (
    SCENARIO_IDS,
    ScenarioSpec,
    _estimation_replicate,
    generate,
    perturbed_truth_weights,
    run_brier_study,
    run_replicates,
    run_selection_study,
    scenario,
    theta_names,
    true_cumulative_hazard,
)


class TestScenarioRegistry:
    def test_ids(self):
        assert SCENARIO_IDS == ("I", "II", "III", "IV", "V")

    def test_benchmark_parameter_values(self):
        s1 = scenario("I")
        assert s1.censor_rate == 0.1
        np.testing.assert_allclose(s1.alpha_true, [[np.log(2.0), 0.0, 0.0]])
        np.testing.assert_array_equal(s1.gamma_true, [-2, 0, 2, 2, 2])
        assert scenario("II").gamma_true[2] == 0.0  # no hazard offset
        assert scenario("III").censor_rate == 0.6
        s4 = scenario("IV")
        np.testing.assert_array_equal(s4.alpha_true, [[2.0, -4.0, 0.0]])
        np.testing.assert_array_equal(s4.gamma_true, [0, -3, 0.5, 0, 6])
        s5 = scenario("V")
        assert s5.L_true == 3
        np.testing.assert_array_equal(
            s5.alpha_true, [[0.0, -0.5, 0.0], [0.0, 0.0, 0.5]]
        )
        np.testing.assert_array_equal(s5.gamma_true, [-2, -2, 2, 2, 2, 4, 4, 4])
        assert s5.t_star == 5.75

    def test_unknown_scenario(self):
        with pytest.raises(KeyError):
            scenario("VI")

    def test_dimension_validation(self):
        with pytest.raises(ValueError):
            ScenarioSpec(
                id="bad",
                L_true=2,
                censor_rate=0.1,
                alpha_true=np.zeros((1, 2)),
                gamma_true=np.zeros(5),
            )

    def test_theta_true_matches_names(self):
        spec = scenario("V")
        names = theta_names(3, 2, 2)
        assert len(names) == spec.theta_true.shape[0] == 14
        assert names[0] == "alpha_2_0"
        assert names[5] == "alpha_3_2"
        assert names[6] == "zeta_1_1"
        assert names[8] == "a_2"
        assert names[11] == "a_3"


class TestGenerate:
    def test_deterministic(self):
        spec = scenario("I", n=200, seed=7)
        d1, l1 = generate(spec)
        d2, l2 = generate(spec)
        np.testing.assert_array_equal(d1.times, d2.times)
        np.testing.assert_array_equal(l1, l2)

    def test_covariate_marginals(self):
        spec = scenario("I", n=50_000, seed=1)
        data, _ = generate(spec)
        x1, x2 = data.covariates[:, 0], data.covariates[:, 1]
        assert set(np.unique(x1)) == {0.0, 1.0}
        assert x1.mean() == pytest.approx(0.5, abs=0.01)
        assert x2.min() >= 0.0 and x2.max() <= 1.0
        assert x2.mean() == pytest.approx(0.5, abs=0.01)

    def test_class_frequencies_match_membership_model(self):
        spec = scenario("I", n=50_000, seed=3)
        data, labels = generate(spec)
        expected = np.array(
            [
                class_membership_probs(x, spec.alpha_true)
                for x in data.covariates[:500]
            ]
        ).mean(axis=0)
        observed = np.bincount(labels, minlength=2) / len(labels)
        # three Monte-Carlo standard errors on the class-1 frequency
        se = np.sqrt(expected[0] * (1 - expected[0]) / len(labels))
        assert abs(observed[0] - expected[0]) < 3 * se + 0.005

    def test_event_time_distribution_matches_closed_form(self):
        # all coefficients zero: relative risk is one for every subject
        spec = ScenarioSpec(
            id="flat",
            L_true=2,
            censor_rate=1e-9,  # essentially no random censoring
            alpha_true=np.zeros((1, 3)),
            gamma_true=np.zeros(5),
            n=100_000,
            seed=5,
        )
        data, _ = generate(spec)
        events = data.times[data.status == 1]

        def cdf(t):
            return 1.0 - np.exp(0.1 * (1.0 - np.exp(t)))

        statistic, _ = scipy.stats.kstest(events, cdf)
        # KS tolerance at alpha ~ 0.01 for the retained uncensored draws
        assert statistic < 1.63 / np.sqrt(len(events))
        median = np.median(data.times[data.status == 1])
        assert median == pytest.approx(np.log1p(np.log(2.0) / 0.1), abs=0.02)

    def test_censoring_rates_match_reported_values(self):
        data1, _ = generate(scenario("I", n=40_000, seed=11))
        assert 0.09 < 1 - data1.status.mean() < 0.13
        data3, _ = generate(scenario("III", n=40_000, seed=11))
        assert 0.35 < 1 - data3.status.mean() < 0.41

    def test_administrative_cutoff(self):
        data, _ = generate(scenario("I", n=20_000, seed=2))
        assert data.times.max() < 6.0

    def test_perturbed_truth_weights(self):
        W = perturbed_truth_weights(np.array([0, 1, 2]), 3)
        np.testing.assert_allclose(W.sum(axis=1), 1.0)
        np.testing.assert_allclose(np.diag(W), [0.9, 0.9, 0.9])

    def test_true_cumulative_hazard(self):
        assert true_cumulative_hazard(0.0) == 0.0
        assert true_cumulative_hazard(3.0) == pytest.approx(0.1 * (np.exp(3.0) - 1.0))


class TestRunReplicates:
    def test_identical_seeds_zero_sd(self):
        spec = scenario("I", n=150, seed=9)
        args = (spec, 4, "perturbed", False, 0.95, 2000)
        first = _estimation_replicate(args)
        second = _estimation_replicate(args)
        assert first["ok"] and second["ok"]
        np.testing.assert_array_equal(first["theta"], second["theta"])
        assert np.std([first["theta"][0], second["theta"][0]], ddof=1) == 0.0

    def test_small_study_structure(self):
        spec = scenario("I", n=200, seed=13)
        summary = run_replicates(spec, R=4, compute_covariance=False)
        assert summary.replicates == 4
        assert summary.median_bias.shape == (8,)
        assert summary.median_see is None
        assert 0.0 <= summary.convergence_rate <= 1.0
        assert summary.baseline_at["truth"] == pytest.approx(
            0.1 * (np.exp(3.0) - 1.0)
        )

    def test_determinism_of_summary(self):
        spec = scenario("I", n=150, seed=3)
        a = run_replicates(spec, R=3, compute_covariance=False)
        b = run_replicates(spec, R=3, compute_covariance=False)
        np.testing.assert_array_equal(a.median_bias, b.median_bias)
        assert a.median_entropy == b.median_entropy

    def test_covariance_branch_produces_coverage(self):
        spec = scenario("I", n=300, seed=5)
        summary = run_replicates(spec, R=3, compute_covariance=True)
        assert summary.median_see is not None
        assert summary.coverage.shape == (8,)
        assert np.all((summary.coverage >= 0) & (summary.coverage <= 1))

    def test_replicate_count_validation(self):
        with pytest.raises(ValueError):
            run_replicates(scenario("I", n=100), R=1)
        with pytest.raises(ValueError):
            run_replicates(scenario("I", n=100), R=5, init_mode="bogus")


class TestStudies:
    def test_selection_study_one_replicate_one_hot(self):
        spec = scenario("I", n=300, seed=17)
        study = run_selection_study(spec, R=1, L_range=(2, 3))
        for criterion, freq in study["frequencies"].items():
            assert sum(freq.values()) == pytest.approx(1.0)
            assert set(freq) == {2, 3}
            # single replicate: every criterion picks exactly one L
            assert sorted(freq.values()) == [0.0, 1.0]

    def test_brier_study_structure(self):
        spec = scenario("I", n=250, seed=23)
        grid = np.array([0.5, 1.0, 2.0])
        study = run_brier_study(spec, R=2, folds=3, grid=grid)
        assert study["latent_class_bs1"].shape == (2, 3)
        assert study["competitor_median_bs1"].shape == (3,)
        assert np.all(study["latent_class_bs1"] >= 0)

    def test_brier_study_deterministic(self):
        spec = scenario("I", n=250, seed=23)
        grid = np.array([0.5, 1.5])
        a = run_brier_study(spec, R=2, folds=3, grid=grid)
        b = run_brier_study(spec, R=2, folds=3, grid=grid)
        np.testing.assert_array_equal(
            a["latent_class_median_bs1"], b["latent_class_median_bs1"]
        )
