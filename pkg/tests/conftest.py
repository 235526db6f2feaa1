"""Shared test helpers."""
import numpy as np
import pytest

from reinit_lab.nn import (
    InitDistribution,
    NetworkSpec,
    ParamVector,
    init_params,
    loss_and_grad,
)


def central_diff_grad(f, x0: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function, one coordinate at a time."""
    x0 = x0.astype(np.float64)
    g = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def relative_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def fd_check(spec: NetworkSpec, params: ParamVector, inputs, labels, teacher=None, beta=0.0, frozen_norm=None):
    """Max relative error between the analytic gradient and central differences."""

    def loss_at(theta):
        pv = ParamVector(theta, params.layout)
        loss, _ = loss_and_grad(spec, pv, inputs, labels, teacher, beta, frozen_norm)
        return loss

    _, analytic = loss_and_grad(spec, params, inputs, labels, teacher, beta, frozen_norm)
    numeric = central_diff_grad(loss_at, params.values)
    return float(relative_errors(analytic, numeric).max())


@pytest.fixture
def tiny_net():
    """A 4-5-3 float64 network small enough for exhaustive finite differences."""
    spec = NetworkSpec(input_dim=4, hidden_dims=(5,), num_classes=3)
    params = init_params(spec, InitDistribution(seed=7), dtype=np.float64)
    return spec, params
