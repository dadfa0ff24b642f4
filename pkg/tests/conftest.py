import numpy as np
import pytest

from gpnlearn.synth import Dataset


def make_dataset(values, labels=None) -> Dataset:
    values = np.asarray(values, dtype=float)
    labels = labels or tuple(f"X{i + 1}" for i in range(values.shape[1]))
    return Dataset(values, labels)


@pytest.fixture
def linear_data_n4():
    rng = np.random.default_rng(11)
    X = rng.standard_normal((100, 4))
    X[:, 1] += 0.8 * X[:, 0]
    X[:, 2] += 0.7 * X[:, 1] - 0.9 * X[:, 3]
    return X
