import numpy as np
import pytest

from softminmax.objective import MinMaxProblem
from softminmax.sampler import rng_stream


def random_problem(rng, n=None, dim=None, label_count=None, lam=None, scale=1.0):
    """Well-scaled random instance for numeric checks (normal coefficients,
    modest shift points)."""
    n = n or int(rng.integers(1, 8))
    dim = dim or int(rng.integers(1, 6))
    label_count = label_count or int(rng.integers(1, 9))
    lam = float(rng.uniform(0.1, 3.0)) if lam is None else lam
    return MinMaxProblem(
        a=scale * rng.normal(size=(n, label_count, dim)),
        b=scale * rng.normal(size=(n, label_count)),
        b_prime=rng.normal(size=(n, dim)),
        lam=lam,
    )


def piecewise_instance(scale=3.0, seed=20, dim=5, n=20, label_count=10, lam=2.0):
    """The fixed strongly convex instance used by the optimizer theory tests:
    uniform slopes in [-scale, scale], unit-box offsets and shift points."""
    r = rng_stream(seed)
    return MinMaxProblem(
        a=r.uniform(-scale, scale, (n, label_count, dim)),
        b=r.uniform(-1, 1, (n, label_count)),
        b_prime=r.uniform(-1, 1, (n, dim)),
        lam=lam,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
