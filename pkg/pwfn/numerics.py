"""
Dense-network training core.

Matrices are float64 numpy arrays. Networks are fixed affine/ReLU stacks, so
the backward pass is written out by hand instead of going through a graph.

Random numbers come from the PCG64 bit generator seeded through a
SeedSequence of (seed, stream). Gaussian values use the basic Box-Muller
transform over 53-bit uniforms: each pair of raw 64-bit draws gives two
normals, and an odd tail value is discarded. Both the generator and the
transform are fixed; changing either breaks checkpoint reproducibility.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from pwfn.errors import ConfigError, NumericalError, ShapeError

logger = logging.getLogger(__name__)

Matrix = np.ndarray

ACTIVATIONS = ('relu',)

# Named RNG streams, so pretraining, compression, evaluation and data
# generation never share draws.
STREAM_PRETRAIN = 0
STREAM_COMPRESS = 1
STREAM_EVALUATE = 2
STREAM_DATA = 3

_U53 = 1.0 / 9007199254740992.0  # 2**-53
_SEED_LIMIT = 2 ** 64


def _check_finite(name, values):
    if not np.all(np.isfinite(values)):
        raise NumericalError(f'{name} produced non-finite values')
    return values


# --- Network description ---

@dataclass(frozen=True)
class NetworkSpec:
    layer_dims: Tuple[int, ...]
    activation: str = 'relu'
    bias_included: bool = True

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, 'layer_dims', dims)
        if len(dims) < 2:
            raise ConfigError(f'layer_dims needs at least 2 entries, got {list(dims)}')
        if any(d < 1 for d in dims):
            raise ConfigError(f'layer_dims entries must be >= 1, got {list(dims)}')
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f'Unsupported activation {self.activation!r}')

    @property
    def n_layers(self):
        return len(self.layer_dims) - 1

    def param_shapes(self):
        """(name, shape) of every trainable tensor, in storage order"""
        shapes = []
        for layer, (d_in, d_out) in enumerate(zip(self.layer_dims[:-1], self.layer_dims[1:])):
            shapes.append((f'layer{layer}.weight', (d_in, d_out)))
            if self.bias_included:
                shapes.append((f'layer{layer}.bias', (d_out,)))
        return shapes

    @property
    def n_params(self):
        return int(sum(np.prod(shape) for _, shape in self.param_shapes()))

    def to_dict(self):
        return {
            'layer_dims': list(self.layer_dims),
            'activation': self.activation,
            'bias_included': self.bias_included,
        }

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(
                layer_dims=tuple(data['layer_dims']),
                activation=data.get('activation', 'relu'),
                bias_included=bool(data.get('bias_included', True)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f'Invalid network description: {e}') from e


# --- Random numbers ---

class Rng:
    """Seeded PCG64 stream with a Box-Muller Gaussian transform"""

    def __init__(self, seed, stream=STREAM_PRETRAIN):
        seed = int(seed)
        if not 0 <= seed < _SEED_LIMIT:
            raise ConfigError(f'seed must be a 64-bit unsigned integer, got {seed}')
        self.seed = seed
        self.stream = int(stream)
        self._bitgen = np.random.PCG64(np.random.SeedSequence([seed, self.stream]))

    @property
    def state(self):
        return self._bitgen.state

    @state.setter
    def state(self, value):
        self._bitgen.state = value

    def raw(self, n):
        return self._bitgen.random_raw(int(n))

    def uniform(self, n):
        """n doubles in [0, 1) built from the top 53 bits of each draw"""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * _U53

    def uniform_draw(self, n, low=0.0, high=1.0):
        return low + (high - low) * self.uniform(n)

    def gaussian(self, n):
        n = int(n)
        if n <= 0:
            return np.zeros(0)
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        u1 = 1.0 - u[0::2]  # (0, 1], keeps the log finite
        u2 = u[1::2]
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:n]

    def permutation(self, n):
        return np.argsort(self.raw(n), kind='stable')


def gaussian_draw(rng, n):
    """n standard-normal values from the stream; the stream advances"""
    return rng.gaussian(n)


# --- Layers ---

def affine_forward(inputs, weights, bias):
    """out[b, j] = sum_i inputs[b, i] * weights[i, j] + bias[j]"""
    inputs = np.asarray(inputs, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if inputs.ndim != 2 or weights.ndim != 2 or inputs.shape[1] != weights.shape[0]:
        raise ShapeError('affine_forward', inputs.shape, weights.shape)
    if bias.shape != (weights.shape[1],):
        raise ShapeError('affine_forward', weights.shape, bias.shape)
    return _check_finite('affine_forward', inputs @ weights + bias)


def affine_backward(grad_out, inputs, weights):
    """Returns (grad_input, grad_weights, grad_bias)"""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    inputs = np.asarray(inputs, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if inputs.ndim != 2 or weights.ndim != 2 or inputs.shape[1] != weights.shape[0]:
        raise ShapeError('affine_backward', inputs.shape, weights.shape)
    if grad_out.shape != (inputs.shape[0], weights.shape[1]):
        raise ShapeError('affine_backward', grad_out.shape, (inputs.shape[0], weights.shape[1]))
    grad_input = grad_out @ weights.T
    grad_weights = inputs.T @ grad_out
    grad_bias = grad_out.sum(axis=0)
    return grad_input, grad_weights, grad_bias


def relu_forward(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(grad_out, x):
    # subgradient at exactly 0 is 0
    grad_out = np.asarray(grad_out, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if grad_out.shape != x.shape:
        raise ShapeError('relu_backward', grad_out.shape, x.shape)
    return np.where(x > 0.0, grad_out, 0.0)


def softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. the logits"""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError('softmax_cross_entropy', logits.shape, labels.shape)
    n_classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ConfigError(f'labels must lie in [0, {n_classes}), got range '
                          f'[{labels.min()}, {labels.max()}]')
    batch = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(batch)
    loss = float(np.mean(log_norm - shifted[rows, labels]))
    grad = np.exp(shifted - log_norm[:, None])
    grad[rows, labels] -= 1.0
    grad /= batch
    return loss, grad


# --- Optimizer ---

@dataclass
class SgdState:
    learning_rate: float
    momentum: float = 0.9
    momentum_buffers: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f'learning_rate must be positive, got {self.learning_rate}')
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f'momentum must lie in [0, 1), got {self.momentum}')

    @classmethod
    def for_params(cls, params, learning_rate, momentum=0.9):
        return cls(learning_rate=learning_rate, momentum=momentum,
                   momentum_buffers=[np.zeros_like(p, dtype=np.float64) for p in params])


def sgd_momentum_update(params, grads, state):
    """Classic heavy-ball step, in place: buf = m*buf + g; p = p - lr*buf"""
    if len(params) != len(grads) or len(params) != len(state.momentum_buffers):
        raise ShapeError('sgd_momentum_update', (len(params),), (len(grads), len(state.momentum_buffers)))
    for param, grad, buf in zip(params, grads, state.momentum_buffers):
        if param.shape != grad.shape or param.shape != buf.shape:
            raise ShapeError('sgd_momentum_update', param.shape, grad.shape)
        buf *= state.momentum
        buf += grad
        param -= state.learning_rate * buf
    return params, state


# --- Whole networks ---

def split_params(spec, params):
    """Pair up per-layer (weights, bias); bias is zeros when the network has none"""
    layers = []
    step = 2 if spec.bias_included else 1
    if len(params) != spec.n_layers * step:
        raise ShapeError('split_params', (len(params),), (spec.n_layers * step,))
    for layer in range(spec.n_layers):
        weights = params[layer * step]
        bias = params[layer * step + 1] if spec.bias_included else np.zeros(weights.shape[1])
        layers.append((weights, bias))
    return layers


def mlp_forward(spec, params, inputs):
    """Logits plus the activations the backward pass needs"""
    layers = split_params(spec, params)
    activations = [np.asarray(inputs, dtype=np.float64)]
    pre_activations = []
    x = activations[0]
    for layer, (weights, bias) in enumerate(layers):
        z = affine_forward(x, weights, bias)
        pre_activations.append(z)
        x = relu_forward(z) if layer < spec.n_layers - 1 else z
        activations.append(x)
    return x, (activations, pre_activations)


def mlp_backward(spec, params, cache, grad_logits):
    """Gradients for every tensor of `params`, in the same order"""
    activations, pre_activations = cache
    layers = split_params(spec, params)
    grads: List[np.ndarray] = [None] * len(params)
    step = 2 if spec.bias_included else 1
    grad = grad_logits
    for layer in reversed(range(spec.n_layers)):
        if layer < spec.n_layers - 1:
            grad = relu_backward(grad, pre_activations[layer])
        weights, _ = layers[layer]
        grad_input, grad_weights, grad_bias = affine_backward(grad, activations[layer], weights)
        grads[layer * step] = grad_weights
        if spec.bias_included:
            grads[layer * step + 1] = grad_bias
        grad = grad_input
    return grads


def init_point_params(spec, rng):
    """He-uniform weights, zero biases"""
    params = []
    for name, shape in spec.param_shapes():
        if name.endswith('.weight'):
            limit = np.sqrt(6.0 / shape[0])
            params.append(rng.uniform_draw(int(np.prod(shape)), -limit, limit).reshape(shape))
        else:
            params.append(np.zeros(shape))
    return params


def predict(spec, params, inputs):
    logits, _ = mlp_forward(spec, params, inputs)
    return logits


def argmax_accuracy(logits_or_probs, labels):
    """Top-1 accuracy; ties resolve to the lowest class index"""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ConfigError('Cannot compute accuracy on an empty dataset')
    return float(np.mean(np.argmax(logits_or_probs, axis=1) == labels))


def flatten(tensors: Sequence[np.ndarray]):
    if not tensors:
        return np.zeros(0)
    return np.concatenate([np.ravel(t) for t in tensors])
