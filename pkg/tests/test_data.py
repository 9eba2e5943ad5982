import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lcph.data import (
    Dataset,
    ModelConfig,
    Observation,
    Parameters,
    PosteriorWeights,
    StepFunction,
)


class TestObservation:
    def test_valid(self):
        obs = Observation(1.5, 1, np.array([0.2, -1.0]))
        assert obs.time == 1.5
        assert obs.status == 1

    @pytest.mark.parametrize(
        "time,status,cov",
        [
            (-1.0, 1, [0.0]),
            (np.inf, 0, [0.0]),
            (1.0, 2, [0.0]),
            (1.0, 1, [np.nan]),
        ],
    )
    def test_invalid(self, time, status, cov):
        with pytest.raises(ValueError):
            Observation(time, status, np.array(cov))


class TestDataset:
    def test_basic(self):
        data = Dataset([1.0, 2.0], [1, 0], [[0.1], [0.2]])
        assert data.n == 2
        assert data.p == 1
        assert data.covariate_names == ["x1"]
        assert len(data.observations) == 2

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            Dataset([], [], np.empty((0, 1)))

    def test_event_times_collapse_ties(self):
        data = Dataset([1.0, 1.0, 2.0, 3.0], [1, 1, 0, 1], np.zeros((4, 1)))
        np.testing.assert_array_equal(data.event_times(), [1.0, 3.0])

    def test_no_events_blocks_event_times(self):
        data = Dataset([1.0, 2.0], [0, 0], np.zeros((2, 1)))
        with pytest.raises(ValueError, match="no events"):
            data.event_times()

    def test_mismatched_covariates(self):
        with pytest.raises(ValueError):
            Dataset.from_observations(
                [Observation(1.0, 1, np.array([1.0])), Observation(2.0, 0, np.array([1.0, 2.0]))]
            )

    def test_subset(self):
        data = Dataset([1.0, 2.0, 3.0], [1, 0, 1], np.arange(6).reshape(3, 2))
        sub = data.subset([0, 2])
        np.testing.assert_array_equal(sub.times, [1.0, 3.0])


class TestModelConfig:
    def test_defaults(self):
        cfg = ModelConfig(num_classes=2)
        assert cfg.tolerance == 1e-7
        assert cfg.initialization == "kmeans"

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"num_classes": 0},
            {"num_classes": 2, "tolerance": 0.0},
            {"num_classes": 2, "initialization": "magic"},
            {"num_classes": 2, "max_iterations": 0},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ModelConfig(**kwargs)

    def test_covariate_subsets(self):
        cfg = ModelConfig(num_classes=2, membership_covariates=(0,), survival_covariates=(1,))
        np.testing.assert_array_equal(cfg.membership_indices(2), [0])
        np.testing.assert_array_equal(cfg.survival_indices(2), [1])
        with pytest.raises(ValueError):
            cfg.survival_indices(1)


class TestStepFunction:
    def test_evaluation(self):
        f = StepFunction([1.0, 2.0, 4.0], [0.5, 0.25, 0.25])
        assert f(0.5) == 0.0
        assert f(1.0) == 0.5  # right continuous: jump included at the jump time
        assert f(3.9) == 0.75
        assert f(100.0) == 1.0
        np.testing.assert_allclose(f(np.array([0.0, 2.0])), [0.0, 0.75])

    def test_jump_at(self):
        f = StepFunction([1.0, 2.0], [0.5, 0.25])
        assert f.jump_at(2.0) == 0.25
        assert f.jump_at(1.5) == 0.0

    @pytest.mark.parametrize(
        "times,sizes",
        [([2.0, 1.0], [0.1, 0.1]), ([1.0, 1.0], [0.1, 0.1]), ([1.0], [0.0]), ([-1.0], [0.1])],
    )
    def test_invalid(self, times, sizes):
        with pytest.raises(ValueError):
            StepFunction(times, sizes)

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(
            st.floats(min_value=0.01, max_value=100.0),
            min_size=1,
            max_size=12,
            unique=True,
        ),
        st.data(),
    )
    def test_monotone_right_continuous(self, jump_times, data):
        from hypothesis import assume

        jump_times = np.sort(jump_times)
        # keep jumps farther apart than the right-continuity probe below
        assume(len(jump_times) == 1 or np.min(np.diff(jump_times)) > 1e-6)
        sizes = data.draw(
            st.lists(
                st.floats(min_value=1e-6, max_value=5.0),
                min_size=len(jump_times),
                max_size=len(jump_times),
            )
        )
        f = StepFunction(jump_times, sizes)
        grid = np.linspace(0.0, float(jump_times[-1]) * 1.1, 197)
        values = f(grid)
        assert np.all(np.diff(values) >= 0.0)
        # right-continuity: approaching each jump from the right changes nothing
        eps = 1e-9
        for t in jump_times:
            assert f(t) == pytest.approx(f(t + t * eps), abs=1e-12)
        assert f(jump_times[0] * (1 - 1e-9)) == 0.0


class TestParameters:
    def test_pack_unpack_roundtrip(self):
        baseline = StepFunction([1.0], [0.2])
        params = Parameters(
            alpha=np.array([[0.1, 0.2, 0.3]]),
            gamma=np.array([1.0, -1.0, 0.5, 0.25, 2.0]),
            baseline=baseline,
        )
        theta = params.pack()
        assert theta.shape == (8,)
        rebuilt = Parameters.unpack(theta, L=2, pm=2, q=2, baseline=baseline)
        np.testing.assert_array_equal(rebuilt.alpha, params.alpha)
        np.testing.assert_array_equal(rebuilt.gamma, params.gamma)

    def test_validate_dims(self):
        baseline = StepFunction([1.0], [0.2])
        params = Parameters(np.array([[0.0, 0.0]]), np.zeros(3), baseline)
        cfg = ModelConfig(num_classes=2, survival_covariates=(0,))
        params.validate_dims(cfg, p=1)
        bad = Parameters(np.array([[0.0, 0.0]]), np.zeros(4), baseline)
        with pytest.raises(ValueError):
            bad.validate_dims(cfg, p=1)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            Parameters(np.array([[np.inf]]), np.zeros(1), StepFunction([1.0], [0.1]))


class TestPosteriorWeights:
    def test_valid(self):
        w = PosteriorWeights(np.array([[0.25, 0.75], [1.0, 0.0]]))
        assert w.n == 2
        assert w.num_classes == 2

    def test_rows_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum to 1"):
            PosteriorWeights(np.array([[0.6, 0.6]]))

    def test_entries_in_unit_interval(self):
        with pytest.raises(ValueError):
            PosteriorWeights(np.array([[1.4, -0.4]]))
