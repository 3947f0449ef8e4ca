import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "ci",
    derandomize=True,
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)


def make_instance(seed, n, p, gamma0=2.0, sigma0_sq=0.5, g=0.5, kind="gaussian"):
    """One simulated dataset plus its spectral cache and rotated response."""
    from remle import sim_harness as sh, spectral_core as sc

    Z = sh.gen_design(kind, n, p, np.random.SeedSequence(seed, spawn_key=(0, 0, 0)))
    beta = sh.gen_coefficients(p, g, gamma0, sigma0_sq)
    y = sh.gen_response(Z, beta, sigma0_sq, np.random.SeedSequence(seed, spawn_key=(0, 0, 1)))
    cache = sc.decompose(Z)
    ry = sc.rotate_response(cache, y)
    return Z, beta, y, cache, ry
