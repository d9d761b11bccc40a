"""Shared fixtures for the test suite; heavy oracles live in oracles_util."""

import numpy as np
import pytest
from hypothesis import settings
from scipy import integrate

from oracles_util import brute_mollified_kernel

settings.register_profile("ks", max_examples=50, deadline=None)
settings.load_profile("ks")


@pytest.fixture(scope="session")
def bump_norm_2d():
    val, _ = integrate.quad(lambda r: np.exp(-1.0 / (1.0 - r * r)) * r, 0.0, 1.0,
                            epsabs=1e-14, epsrel=1e-12)
    return 1.0 / (2.0 * np.pi * val)


@pytest.fixture(scope="session")
def mollified_kernel_oracle(bump_norm_2d):
    def oracle(x, radius, n_quad=1501):
        return brute_mollified_kernel(np.asarray(x, dtype=float), radius,
                                      bump_norm_2d, 2.0 * np.pi, n_quad)
    return oracle
