import numpy as np
import pytest
from scipy import stats

from bro.estimators import NestedBatch

MU = np.array([-15.0, 10.0])
SD = np.array([4.0, 2.0])
X_STAR = 0.474775


def batch_of(values, gradients=None, m=1, x=0.0):
    """Batch built straight from per-draw inner means."""
    values = np.asarray(values, dtype=float)
    if gradients is None:
        gradients = np.zeros_like(values)
    return NestedBatch(values, np.asarray(gradients, dtype=float).reshape(values.size, -1), m, x)


def normal_h(x):
    """Mean and sd of H = x t1 + x^2 t2 with t1 ~ N(-15, 4^2), t2 ~ N(10, 2^2)."""
    mean = x * MU[0] + x * x * MU[1]
    sd = np.sqrt((x * SD[0]) ** 2 + (x * x * SD[1]) ** 2)
    return mean, sd


def normal_var(x, alpha):
    mean, sd = normal_h(x)
    return mean + stats.norm.ppf(alpha) * sd


def normal_cvar(x, alpha):
    mean, sd = normal_h(x)
    return mean + stats.norm.pdf(stats.norm.ppf(alpha)) / (1 - alpha) * sd


def central_diff(f, x, h=1e-5):
    return (f(x + h) - f(x - h)) / (2 * h)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
