"""
Per-weight Gaussian distributions: storage, sampling, the sigma hinge
regularizer, reparameterized gradients and the power-of-two prior on sigma.

Every weight and bias of the network is one GaussianWeight. The store keeps
them as flat float64 arrays in NetworkSpec.param_shapes() order and hands
out per-tensor views for the forward pass.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from pwfn.errors import ConfigError, ShapeError
from pwfn.numerics import SgdState, flatten, gaussian_draw, sgd_momentum_update

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 2.0 ** -30
SIGMA_CEILING = 0.05
PRIOR_SCALE = 0.05 ** 2
DEFAULT_ALPHA = 2.0 ** -11
DEFAULT_CUTOFF = 0.05
FREE = -1  # cluster_index of a weight that is not fixed yet


@dataclass(frozen=True)
class GaussianWeight:
    mu: float
    sigma: float
    fixed: bool = False
    cluster_index: Optional[int] = None


@dataclass(frozen=True)
class RegConfig:
    alpha: float = DEFAULT_ALPHA
    cutoff: float = DEFAULT_CUTOFF

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ConfigError(f'alpha must be non-negative, got {self.alpha}')
        if not self.cutoff > 0:
            raise ConfigError(f'sigma cutoff must be positive, got {self.cutoff}')


class WeightStore:
    """Flat mu/sigma/fixed/cluster_index arrays for a whole network"""

    def __init__(self, spec, mu, sigma=None, fixed=None, cluster_index=None):
        self.spec = spec
        n = spec.n_params
        self.mu = np.array(mu, dtype=np.float64).ravel()
        if self.mu.size != n:
            raise ShapeError('WeightStore', (self.mu.size,), (n,))
        self.sigma = np.zeros(n) if sigma is None else np.array(sigma, dtype=np.float64).ravel()
        self.fixed = np.zeros(n, dtype=bool) if fixed is None else np.array(fixed, dtype=bool).ravel()
        self.cluster_index = (np.full(n, FREE, dtype=np.int64) if cluster_index is None
                              else np.array(cluster_index, dtype=np.int64).ravel())
        for name, arr in (('sigma', self.sigma), ('fixed', self.fixed), ('cluster_index', self.cluster_index)):
            if arr.size != n:
                raise ShapeError(f'WeightStore.{name}', (arr.size,), (n,))
        if np.any(self.sigma < 0):
            raise ConfigError('sigma must be non-negative')

    @classmethod
    def from_point_params(cls, spec, params):
        return cls(spec, flatten(params))

    @property
    def n_weights(self):
        return self.mu.size

    @property
    def free_mask(self):
        return ~self.fixed

    def tensors(self, flat):
        """Split a flat per-weight array into views shaped like the network"""
        out, offset = [], 0
        for _, shape in self.spec.param_shapes():
            size = int(np.prod(shape))
            out.append(flat[offset:offset + size].reshape(shape))
            offset += size
        return out

    def point_params(self):
        return self.tensors(self.mu)

    def weight(self, index):
        cluster = int(self.cluster_index[index])
        return GaussianWeight(
            mu=float(self.mu[index]),
            sigma=float(self.sigma[index]),
            fixed=bool(self.fixed[index]),
            cluster_index=None if cluster == FREE else cluster,
        )

    def copy(self):
        return WeightStore(self.spec, self.mu.copy(), self.sigma.copy(),
                           self.fixed.copy(), self.cluster_index.copy())

    def round_to_float32(self):
        """Match what a checkpoint keeps, so resumed runs see the same values"""
        self.mu = self.mu.astype(np.float32).astype(np.float64)
        self.sigma = self.sigma.astype(np.float32).astype(np.float64)
        return self


def sample_weights(store, rng, deterministic_fixed=False):
    """Draw w = mu + sigma * eps once per weight; returns (tensors, eps)"""
    eps = gaussian_draw(rng, store.n_weights)
    if deterministic_fixed:
        eps[store.fixed] = 0.0
    sampled = store.mu + store.sigma * eps
    return store.tensors(sampled), eps


def reg_loss(store, cfg):
    """Hinge sum of (S - sigma) over free weights with sigma < S"""
    active = store.free_mask & (store.sigma < cfg.cutoff)
    return float(np.sum(cfg.cutoff - store.sigma[active]))


def reg_grad(store, cfg):
    grad = np.zeros(store.n_weights)
    grad[store.free_mask & (store.sigma < cfg.cutoff)] = -1.0
    return grad


def training_loss(data_loss, store, cfg):
    return data_loss + cfg.alpha * reg_loss(store, cfg)


def assemble_gradients(grad_w, epsilon, store, cfg):
    """Reparameterized (grad_mu, grad_sigma); fixed weights get zeros"""
    grad_w = np.asarray(grad_w, dtype=np.float64).ravel()
    epsilon = np.asarray(epsilon, dtype=np.float64).ravel()
    if grad_w.shape != epsilon.shape or grad_w.size != store.n_weights:
        raise ShapeError('assemble_gradients', grad_w.shape, epsilon.shape)
    grad_mu = grad_w.copy()
    grad_sigma = grad_w * epsilon + cfg.alpha * reg_grad(store, cfg)
    grad_mu[store.fixed] = 0.0
    grad_sigma[store.fixed] = 0.0
    return grad_mu, grad_sigma


def new_optimizer(store, learning_rate, momentum=0.9):
    return SgdState.for_params([store.mu, store.sigma], learning_rate, momentum)


def sgd_step(store, grad_mu, grad_sigma, state):
    """One momentum step on mu and sigma; free sigma is floored afterwards"""
    mu_before = store.mu[store.fixed].copy()
    sigma_before = store.sigma[store.fixed].copy()
    sgd_momentum_update([store.mu, store.sigma], [grad_mu, grad_sigma], state)
    store.mu[store.fixed] = mu_before
    store.sigma[store.fixed] = sigma_before
    free = store.free_mask
    store.sigma[free] = np.maximum(store.sigma[free], SIGMA_FLOOR)
    return store


# --- Prior initialisation ---

def _power_of_two_bracket(magnitudes):
    """Lower and upper integer powers of two around each positive magnitude"""
    mantissa, exponent = np.frexp(magnitudes)  # magnitude = mantissa * 2**exponent, mantissa in [0.5, 1)
    lower = np.ldexp(1.0, exponent - 1)
    return lower, 2.0 * lower


def prior_sigma_profile(mus):
    """Unweighted parabola: relative distances to the bracketing powers of two

    Returns (raw, upper_distance); both are 0 for mu == 0.
    """
    mus = np.asarray(mus, dtype=np.float64)
    magnitudes = np.abs(mus)
    raw = np.zeros_like(magnitudes)
    upper_distance = np.zeros_like(magnitudes)
    nonzero = magnitudes > 0
    lower, upper = _power_of_two_bracket(magnitudes[nonzero])
    d_lower = (magnitudes[nonzero] - lower) / lower
    d_upper = (upper - magnitudes[nonzero]) / upper
    raw[nonzero] = PRIOR_SCALE * d_lower * d_upper
    upper_distance[nonzero] = d_upper
    return raw, upper_distance


def init_prior_sigma(store, mus=None, as_variance=True):
    """Set free sigma from the pre-trained means

    The parabola is reweighted by the third quartile of the upper relative
    distances. With as_variance the result is read as a variance and sigma
    is its square root; otherwise it is used as sigma directly. Either way
    sigma is clamped to [2**-30, 0.05].
    """
    if mus is not None:
        mus = np.asarray(mus, dtype=np.float64).ravel()
        if mus.size != store.n_weights:
            raise ShapeError('init_prior_sigma', mus.shape, store.mu.shape)
        store.mu = mus.copy()
    free = store.free_mask
    raw, upper_distance = prior_sigma_profile(store.mu)
    quartile_pool = upper_distance[free & (store.mu != 0)]
    if quartile_pool.size:
        q75 = float(np.quantile(quartile_pool, 0.75))
        value = raw / q75
    else:
        q75 = float('nan')
        value = np.zeros_like(raw)
    sigma = np.sqrt(value) if as_variance else value
    store.sigma[free] = np.clip(sigma[free], SIGMA_FLOOR, SIGMA_CEILING)
    logger.info(f'Prior sigma initialised for {int(free.sum())} weights '
                f'(q75={q75:.6g}, as_variance={as_variance}, '
                f'median sigma={np.median(store.sigma[free]) if free.any() else 0:.6g})')
    return store


def init_uniform_sigma(store, value):
    """Constant sigma for every free weight (the no-prior ablation)"""
    if not value > 0:
        raise ConfigError(f'uniform sigma must be positive, got {value}')
    store.sigma[store.free_mask] = max(float(value), SIGMA_FLOOR)
    logger.info(f'Uniform sigma {value:.6g} set for {int(store.free_mask.sum())} weights')
    return store
