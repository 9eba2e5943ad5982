import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lcph.data import Dataset, ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def random_survival_data(rng, n=60, p=2, censor_scale=2.0):
    """Generic exponential-ish survival data with independent censoring."""
    X = rng.normal(0.0, 0.7, size=(n, p))
    beta = rng.normal(0.0, 0.5, size=p)
    T = rng.exponential(1.0, size=n) / np.exp(X @ beta)
    C = rng.exponential(censor_scale, size=n)
    times = np.minimum(T, C)
    status = (T <= C).astype(int)
    if status.sum() == 0:
        status[0] = 1
    return Dataset(times, status, X)


@pytest.fixture
def small_data(rng):
    return random_survival_data(rng, n=60)


@pytest.fixture
def single_class_config():
    return ModelConfig(num_classes=1)
