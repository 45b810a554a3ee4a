import math

import numpy as np
import pytest

from stochqm.fields import Grid, ScalarField


def harmonic_V(grid, K, boundary="dirichlet", center=0.0):
    x = grid.coords()
    return ScalarField(grid, 0.5 * K * np.sum((x - center) ** 2, axis=0), boundary)


def scalar_gausson_variance(K, kT, D):
    """Variance s of the Gaussian solution, from kT/(2s) = K/2 - D/(4 s^2), by bisection."""
    from scipy.optimize import bisect

    f = lambda s: kT / (2 * s) - 0.5 * K + D / (4 * s * s)
    lo = 1e-12
    hi = 1.0
    while f(hi) > 0:
        hi *= 2
    return bisect(f, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
