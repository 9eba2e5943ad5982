import numpy as np
import pytest

from lcph.data import Dataset, ModelConfig, Parameters, PosteriorWeights, StepFunction
from lcph.em import EmState, fit
from lcph.selection import criteria, num_parameters, select_L
from lcph.simulation import generate, scenario

from conftest import random_survival_data


def _state_with_weights(data, weights, loglik):
    baseline = StepFunction(data.event_times(), np.full(len(data.event_times()), 0.1))
    L = weights.shape[1]
    params = Parameters(np.zeros((L - 1, 3)), np.zeros(2 * L + L - 1), baseline)
    return EmState(
        params=params,
        weights=PosteriorWeights(weights),
        loglik_history=[loglik],
        iteration=1,
        converged=True,
    )


class TestCriteria:
    def test_parameter_count(self):
        assert num_parameters(L=2, pm=2, q=2) == 8
        assert num_parameters(L=1, pm=2, q=2) == 2
        assert num_parameters(L=3, pm=2, q=2) == 14

    def test_crisp_weights(self, rng):
        data = random_survival_data(rng, n=30, p=2)
        W = np.zeros((30, 2))
        W[:15, 0] = 1.0
        W[15:, 1] = 1.0
        state = _state_with_weights(data, W, loglik=-100.0)
        report = criteria(state, data, ModelConfig(num_classes=2))
        assert report.entropy_index == 1.0
        assert report.icl_bic == pytest.approx(report.bic)

    def test_uniform_weights(self, rng):
        data = random_survival_data(rng, n=30, p=2)
        W = np.full((30, 2), 0.5)
        state = _state_with_weights(data, W, loglik=-100.0)
        report = criteria(state, data, ModelConfig(num_classes=2))
        assert report.entropy_index == pytest.approx(0.0, abs=1e-12)
        assert report.icl_bic == pytest.approx(report.bic + 2 * 30 * np.log(2))

    def test_aic_bic_formulas(self, rng):
        data = random_survival_data(rng, n=40, p=2)
        W = np.full((40, 2), 0.5)
        state = _state_with_weights(data, W, loglik=-123.5)
        report = criteria(state, data, ModelConfig(num_classes=2))
        r = 8
        assert report.aic == pytest.approx(2 * 123.5 + 2 * r)
        assert report.bic == pytest.approx(2 * 123.5 + r * np.log(40))
        assert report.bic - report.aic == pytest.approx(r * (np.log(40) - 2))

    def test_single_class_entropy_convention(self, rng):
        data = random_survival_data(rng, n=25, p=2)
        state = _state_with_weights(data, np.ones((25, 1)), loglik=-50.0)
        report = criteria(state, data, ModelConfig(num_classes=1))
        assert report.entropy_index == 1.0
        assert report.num_params == 2

    def test_entropy_index_label_permutation_invariant(self, rng):
        data = random_survival_data(rng, n=30, p=2)
        W = np.random.default_rng(0).dirichlet(np.ones(3), size=30)
        state = _state_with_weights(data, W, loglik=-80.0)
        permuted = _state_with_weights(data, W[:, [2, 0, 1]], loglik=-80.0)
        config = ModelConfig(num_classes=3)
        assert criteria(state, data, config).entropy_index == pytest.approx(
            criteria(permuted, data, config).entropy_index
        )

    def test_icl_at_least_bic_on_real_fit(self):
        data, _ = generate(scenario("I", n=200, seed=3))
        config = ModelConfig(num_classes=2, seed=0)
        state = fit(data, config)
        report = criteria(state, data, config)
        assert report.icl_bic >= report.bic
        assert 0.0 <= report.entropy_index <= 1.0


class TestSelectL:
    def test_two_class_data_prefers_two_classes(self):
        data, _ = generate(scenario("I", n=400, seed=11))
        config = ModelConfig(num_classes=2, seed=1)
        best_by, reports = select_L(data, config, [1, 2])
        assert best_by["bic"] == 2
        assert {rep.L for rep in reports} == {1, 2}

    def test_single_class_data_mostly_picks_one(self, rng):
        wins = 0
        total = 5
        for k in range(total):
            data = random_survival_data(
                np.random.default_rng(100 + k), n=200, p=2, censor_scale=4.0
            )
            config = ModelConfig(num_classes=1, seed=k)
            best_by, _ = select_L(data, config, [1, 2])
            wins += best_by["bic"] == 1
        assert wins >= 3

    def test_failed_candidate_dropped(self):
        # three subjects cannot support a two-class model: L=2 is skipped
        data = Dataset([1.0, 2.0, 3.0], [1, 1, 1], np.array([[0.0], [1.0], [0.5]]))
        config = ModelConfig(num_classes=1, seed=0)
        best_by, reports = select_L(data, config, [1, 2])
        assert [rep.L for rep in reports] == [1]
        assert best_by["bic"] == 1

    def test_empty_range_rejected(self, rng):
        data = random_survival_data(rng, n=30, p=2)
        with pytest.raises(ValueError):
            select_L(data, ModelConfig(num_classes=1), [])
