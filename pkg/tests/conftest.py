import numpy as np
import pytest

from dpsgd_inference.inference import load_default_pivot_table
from dpsgd_inference.models import LossModel, ModelKind, SynthSpec, generate_synthetic
from dpsgd_inference.sampling import RngState


@pytest.fixture
def rng():
    return RngState(12345)


@pytest.fixture(scope="session")
def pivot_table():
    return load_default_pivot_table()


@pytest.fixture(scope="session")
def linear_model():
    return LossModel(ModelKind.LINEAR, 3)


@pytest.fixture(scope="session")
def linear_data():
    data, theta = generate_synthetic(SynthSpec(ModelKind.LINEAR, 300, 3), RngState(777))
    return data, theta


def kernel_reference_run(X, y, kind, idx, noise, eta, alpha, sigma1, tau, theta0):
    """Plain-python mirror of the compiled loop, returning the iterate path."""
    T, m = idx.shape
    p = len(theta0)
    theta = np.asarray(theta0, dtype=float).copy()
    path = np.empty((T, p))
    for t in range(1, T + 1):
        batch = idx[t - 1]
        grads = []
        for i in batch:
            if kind == ModelKind.MEAN:
                g = 2.0 * (theta - X[i])
            elif kind == ModelKind.LINEAR:
                g = -(y[i] - X[i] @ theta) * X[i]
            else:
                s = 1.0 / (1.0 + np.exp(-(X[i] @ theta)))
                g = (s - y[i]) * X[i]
            if tau and np.linalg.norm(g) > tau:
                g = g * (tau / np.linalg.norm(g))
            grads.append(g)
        gbar = np.mean(grads, axis=0)
        if sigma1 > 0:
            gbar = gbar + sigma1 * noise[t - 1]
        theta = theta - eta * t ** (-alpha) * gbar
        path[t - 1] = theta
    return path
