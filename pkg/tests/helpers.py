import numpy as np

from pwfn.bayes_weights import WeightStore
from pwfn.numerics import Rng


def random_store(spec, seed, sigma_low=0.01, sigma_high=0.05, scale=0.5):
    rng = Rng(seed, 0)
    n = spec.n_params
    return WeightStore(spec, scale * rng.gaussian(n), rng.uniform_draw(n, sigma_low, sigma_high))


def assert_bit_identical(left, right):
    assert left.dtype == right.dtype
    assert np.array_equal(np.asarray(left).view(np.uint8), np.asarray(right).view(np.uint8))
