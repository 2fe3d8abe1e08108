"""Feed-forward network engine: dense and convolutional layers, a cached
forward pass and backpropagation of the per-sample desired pre-activation
updates ``V_goal``.

Conventions
-----------
* Dense inputs/outputs are column-per-sample matrices ``(features, n)``.
* Convolutional tensors are ``(n, channels, H, W)``.
* A dense weight matrix has shape ``out x (in + 1)``; its last column is the
  bias and multiplies the constant-1 row appended to every dense input.
* Weighted layers are numbered 1..L.  ``cache.B[l - 1]`` is the input of
  weighted layer ``l`` and ``cache.A[l]`` its pre-activation.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import DomainError, ShapeError
from .kernels import col2im, im2col

SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946

ACTIVATIONS = ("identity", "relu", "selu", "tanh", "softmax")
LOSSES = ("square", "cross_entropy")


# --------------------------------------------------------------------------
# layers
# --------------------------------------------------------------------------


@dataclass
class Dense:
    W: np.ndarray

    def __post_init__(self):
        self.W = np.array(self.W, dtype=np.float64, ndmin=2)
        if self.W.ndim != 2 or self.W.shape[1] < 1:
            raise ShapeError(f"dense weight must be out x (in+1), got {self.W.shape}")
        if not np.all(np.isfinite(self.W)):
            raise DomainError("dense weight has non-finite entries")

    @property
    def in_features(self) -> int:
        return self.W.shape[1] - 1

    @property
    def out_features(self) -> int:
        return self.W.shape[0]


@dataclass
class Conv2d:
    kernel: np.ndarray
    bias: np.ndarray
    padding: int = 0

    def __post_init__(self):
        self.kernel = np.array(self.kernel, dtype=np.float64)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if self.kernel.ndim != 4 or self.kernel.shape[2] != self.kernel.shape[3]:
            raise ShapeError(f"conv kernel must be (out, in, d, d), got {self.kernel.shape}")
        if self.bias.shape[0] != self.kernel.shape[0]:
            raise ShapeError("conv bias length differs from out channels")
        if self.padding < 0:
            raise ShapeError("negative padding")
        if not (np.all(np.isfinite(self.kernel)) and np.all(np.isfinite(self.bias))):
            raise DomainError("conv parameters have non-finite entries")

    @property
    def size(self) -> int:
        return self.kernel.shape[2]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        return h + 2 * self.padding - self.size + 1, w + 2 * self.padding - self.size + 1


@dataclass
class Activation:
    family: str

    def __post_init__(self):
        if self.family not in ACTIVATIONS:
            raise DomainError(f"unknown activation {self.family!r}")


@dataclass
class AvgPool2d:
    size: int


@dataclass
class Flatten:
    pass


Layer = Union[Dense, Conv2d, Activation, AvgPool2d, Flatten]
WEIGHTED = (Dense, Conv2d)


def activate(family: str, a: np.ndarray) -> np.ndarray:
    if family == "identity":
        return a.copy()
    if family == "relu":
        return np.maximum(a, 0.0)
    if family == "selu":
        return SELU_SCALE * np.where(a > 0, a, SELU_ALPHA * np.expm1(np.minimum(a, 0.0)))
    if family == "tanh":
        return np.tanh(a)
    if family == "softmax":
        axis = 0 if a.ndim == 2 else 1
        z = np.exp(a - a.max(axis=axis, keepdims=True))
        return z / z.sum(axis=axis, keepdims=True)
    raise DomainError(f"unknown activation {family!r}")


def activation_derivative(family: str, a: np.ndarray) -> np.ndarray:
    """Elementwise derivative; at the kink ``a == 0`` the right derivative is used."""
    if family == "identity":
        return np.ones_like(a)
    if family == "relu":
        return (a >= 0).astype(np.float64)
    if family == "selu":
        return SELU_SCALE * np.where(a >= 0, 1.0, SELU_ALPHA * np.exp(np.minimum(a, 0.0)))
    if family == "tanh":
        return 1.0 - np.tanh(a) ** 2
    raise DomainError(f"no elementwise derivative for {family!r}")


def slope_at_zero(family: str) -> float:
    """sigma'(0), taking the right derivative for relu and selu."""
    return float(activation_derivative(family, np.zeros(1))[0])


# --------------------------------------------------------------------------
# network
# --------------------------------------------------------------------------


def _shape_after(layer: Layer, shape: tuple[int, ...]) -> tuple[int, ...]:
    if isinstance(layer, Dense):
        if len(shape) != 1 or shape[0] != layer.in_features:
            raise ShapeError(f"dense layer expects ({layer.in_features},), got {shape}")
        return (layer.out_features,)
    if isinstance(layer, Conv2d):
        if len(shape) != 3 or shape[0] != layer.in_channels:
            raise ShapeError(f"conv layer expects {layer.in_channels} channels, got {shape}")
        h, w = layer.out_hw(shape[1], shape[2])
        if h < 1 or w < 1:
            raise ShapeError("conv kernel larger than padded input")
        return (layer.out_channels, h, w)
    if isinstance(layer, AvgPool2d):
        if len(shape) != 3 or shape[1] % layer.size or shape[2] % layer.size:
            raise ShapeError(f"pool size {layer.size} does not divide {shape}")
        return (shape[0], shape[1] // layer.size, shape[2] // layer.size)
    if isinstance(layer, Flatten):
        return (int(np.prod(shape)),)
    return shape


class Network:
    """Ordered layer list plus the input shape it accepts.

    Growable positions are derived from the layout: position ``p`` sits
    between weighted layers ``p + 1`` and ``p + 2`` (1-based) when they are of
    the same kind and separated by exactly one non-softmax activation.
    """

    def __init__(self, layers: list[Layer], input_shape: tuple[int, ...]):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self._check()

    def _check(self) -> None:
        shape = self.input_shape
        self.shapes = [shape]
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Activation):
                if layer.family == "softmax" and i != len(self.layers) - 1:
                    raise DomainError("softmax is only allowed as the output activation")
                if layer.family != "softmax" and abs(activate(layer.family, np.zeros(1))[0]) >= 1e-12:
                    raise DomainError(f"activation {layer.family} has sigma(0) != 0")
            shape = _shape_after(layer, shape)
            self.shapes.append(shape)
        if not self.weighted_indices:
            raise ShapeError("network has no weighted layer")

    def copy(self) -> "Network":
        return Network(copy.deepcopy(self.layers), self.input_shape)

    @property
    def weighted_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if isinstance(layer, WEIGHTED)]

    @property
    def depth(self) -> int:
        return len(self.weighted_indices)

    def weighted(self, l: int) -> Dense | Conv2d:
        """Weighted layer ``l`` with 1-based numbering."""
        return self.layers[self.weighted_indices[l - 1]]

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def output_dim(self) -> int:
        return int(np.prod(self.shapes[-1]))

    def output_activation(self) -> str:
        last = self.layers[-1]
        return last.family if isinstance(last, Activation) else "identity"

    def position_activation(self, p: int) -> str:
        idx = self.weighted_indices
        return self.layers[idx[p] + 1].family

    @property
    def growable_positions(self) -> list[int]:
        idx = self.weighted_indices
        out = []
        for p in range(len(idx) - 1):
            lo, hi = idx[p], idx[p + 1]
            if hi - lo != 2 or type(self.layers[lo]) is not type(self.layers[hi]):
                continue
            mid = self.layers[lo + 1]
            if isinstance(mid, Activation) and mid.family != "softmax":
                out.append(p)
        return out

    def width(self, p: int) -> int:
        layer = self.weighted(p + 1)
        return layer.out_features if isinstance(layer, Dense) else layer.out_channels


def mlp(widths: list[int], activation: str = "selu", output: str = "identity",
        rng: np.random.Generator | None = None, scale: float = 1.0) -> Network:
    """Dense network ``widths[0] -> ... -> widths[-1]`` with scaled normal init."""
    rng = rng if rng is not None else np.random.default_rng(0)
    layers: list[Layer] = []
    for k in range(len(widths) - 1):
        fan_in, fan_out = widths[k], widths[k + 1]
        W = np.zeros((fan_out, fan_in + 1))
        W[:, :-1] = rng.standard_normal((fan_out, fan_in)) * scale / np.sqrt(max(fan_in, 1))
        layers.append(Dense(W))
        if k < len(widths) - 2:
            layers.append(Activation(activation))
    if output != "identity":
        layers.append(Activation(output))
    return Network(layers, (widths[0],))


# --------------------------------------------------------------------------
# forward / backward
# --------------------------------------------------------------------------


def _with_ones(h: np.ndarray) -> np.ndarray:
    return np.vstack([h, np.ones((1, h.shape[1]))])


def conv_forward(layer: Conv2d, x: np.ndarray) -> np.ndarray:
    n, _, H, W = x.shape
    Ho, Wo = layer.out_hw(H, W)
    cols = im2col(x, layer.size, layer.padding)
    out = np.matmul(layer.kernel.reshape(layer.out_channels, -1), cols)
    out += layer.bias[None, :, None]
    return out.reshape(n, layer.out_channels, Ho, Wo)


def _pool(x: np.ndarray, k: int) -> np.ndarray:
    n, C, H, W = x.shape
    return x.reshape(n, C, H // k, k, W // k, k).mean(axis=(3, 5))


@dataclass
class ActivationsCache:
    X: np.ndarray
    A: list  # A[l] pre-activation of weighted layer l (A[0] unused)
    B: list  # B[l-1] input of weighted layer l, ones row included for dense
    layer_inputs: list
    output: np.ndarray


def _prepare_input(net: Network, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[0] != net.input_dim:
        raise ShapeError(f"input must be ({net.input_dim}, n), got {X.shape}")
    if len(net.input_shape) == 3:
        return np.ascontiguousarray(X.T.reshape((X.shape[1],) + net.input_shape))
    return X


def forward_cached(net: Network, X) -> ActivationsCache:
    h = _prepare_input(net, X)
    L = net.depth
    A: list = [None] * (L + 1)
    B: list = [None] * (L + 1)
    inputs = []
    l = 0
    for layer in net.layers:
        inputs.append(h)
        if isinstance(layer, Dense):
            B[l] = _with_ones(h)
            l += 1
            h = layer.W @ B[l - 1]
            A[l] = h
        elif isinstance(layer, Conv2d):
            B[l] = h
            l += 1
            h = conv_forward(layer, h)
            A[l] = h
        elif isinstance(layer, Activation):
            h = activate(layer.family, h)
        elif isinstance(layer, Flatten):
            h = h.reshape(h.shape[0], -1).T.copy()
        elif isinstance(layer, AvgPool2d):
            h = _pool(h, layer.size)
    return ActivationsCache(np.asarray(X, dtype=np.float64), A, B, inputs, h)


def forward(net: Network, X) -> np.ndarray:
    return forward_cached(net, X).output


def _output_matrix(out: np.ndarray) -> np.ndarray:
    return out if out.ndim == 2 else out.reshape(out.shape[0], -1).T


@dataclass
class GoalSet:
    V: list  # V[l] desired update of A[l] (V[0] unused)
    loss: float
    output: np.ndarray = field(repr=False, default=None)


def per_sample_loss(out: np.ndarray, Y: np.ndarray, loss: str) -> np.ndarray:
    f = _output_matrix(out)
    if loss == "square":
        return np.sum((f - Y) ** 2, axis=0)
    if loss == "cross_entropy":
        return -np.sum(Y * np.log(np.clip(f, 1e-300, None)), axis=0)
    raise DomainError(f"unknown loss {loss!r}")


def batch_loss(net: Network, X, Y, loss: str) -> float:
    out = forward(net, X)
    return float(np.mean(per_sample_loss(out, np.asarray(Y, dtype=np.float64), loss)))


def _check_targets(net: Network, Y, n: int, loss: str) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y.reshape(1, -1)
    if Y.shape != (net.output_dim, n):
        raise ShapeError(f"targets must be ({net.output_dim}, {n}), got {Y.shape}")
    if loss not in LOSSES:
        raise DomainError(f"unknown loss {loss!r}")
    if loss == "cross_entropy" and net.output_activation() != "softmax":
        raise DomainError("cross_entropy requires a softmax output activation")
    if loss == "square" and net.output_activation() == "softmax":
        raise DomainError("softmax output is only supported with cross_entropy")
    return Y


def backpropagate(net: Network, cache: ActivationsCache, grad_out: np.ndarray, start: int) -> list:
    """Push ``d(sum of losses)/d(output of layer start)`` back; returns ``V`` per weighted layer."""
    V: list = [None] * (net.depth + 1)
    g = grad_out
    l = net.depth
    for idx in range(start, -1, -1):
        layer = net.layers[idx]
        h_in = cache.layer_inputs[idx]
        if isinstance(layer, Dense):
            V[l] = -g
            g = layer.W[:, :-1].T @ g
            l -= 1
        elif isinstance(layer, Conv2d):
            V[l] = -g
            n = g.shape[0]
            gf = g.reshape(n, layer.out_channels, -1)
            dcols = np.matmul(layer.kernel.reshape(layer.out_channels, -1).T, gf)
            g = col2im(dcols, h_in.shape, layer.size, layer.padding)
            l -= 1
        elif isinstance(layer, Activation):
            g = g * activation_derivative(layer.family, h_in)
        elif isinstance(layer, Flatten):
            g = g.T.reshape(h_in.shape)
        elif isinstance(layer, AvgPool2d):
            k = layer.size
            g = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
    return V


def goals_from_cache(net: Network, cache: ActivationsCache, Y, loss: str) -> GoalSet:
    n = cache.X.shape[1]
    Y = _check_targets(net, Y, n, loss)
    f = _output_matrix(cache.output)
    value = float(np.mean(per_sample_loss(cache.output, Y, loss)))
    last = len(net.layers) - 1
    if loss == "cross_entropy":
        g, start = f - Y, last - 1
    else:
        g, start = 2.0 * (f - Y), last
    if cache.output.ndim == 4:
        g = g.T.reshape(cache.output.shape)
    return GoalSet(backpropagate(net, cache, g, start), value, cache.output)


def loss_and_goals(net: Network, X, Y, loss: str = "square") -> GoalSet:
    """Batch-mean loss and ``V_goal[l] = -d(sum of per-sample losses)/dA[l]``."""
    return goals_from_cache(net, forward_cached(net, X), Y, loss)


def weight_gradients(net: Network, cache: ActivationsCache, goals: GoalSet) -> list:
    """Gradients of the batch-mean loss for each weighted layer (1-based list)."""
    n = cache.X.shape[1]
    grads: list = [None]
    for l in range(1, net.depth + 1):
        layer = net.weighted(l)
        V = goals.V[l]
        if isinstance(layer, Dense):
            grads.append(-(V @ cache.B[l - 1].T) / n)
        else:
            cols = im2col(cache.B[l - 1], layer.size, layer.padding)
            Vf = V.reshape(n, layer.out_channels, -1)
            gk = -np.einsum("nop,nkp->ok", Vf, cols) / n
            gb = -Vf.sum(axis=(0, 2)) / n
            grads.append((gk.reshape(layer.kernel.shape), gb))
    return grads


def sgd_step(net: Network, X, Y, lr: float, loss: str = "square") -> tuple[Network, float]:
    """One plain gradient step on the batch-mean loss; returns a new network."""
    if lr < 0:
        raise DomainError("learning rate must be non-negative")
    cache = forward_cached(net, X)
    goals = goals_from_cache(net, cache, Y, loss)
    grads = weight_gradients(net, cache, goals)
    new = net.copy()
    for l in range(1, new.depth + 1):
        layer = new.weighted(l)
        if isinstance(layer, Dense):
            layer.W -= lr * grads[l]
        else:
            layer.kernel -= lr * grads[l][0]
            layer.bias -= lr * grads[l][1]
    return new, goals.loss


# --------------------------------------------------------------------------
# bookkeeping
# --------------------------------------------------------------------------


def param_count(net: Network) -> int:
    total = 0
    for layer in net.layers:
        if isinstance(layer, Dense):
            total += layer.W.size
        elif isinstance(layer, Conv2d):
            total += layer.kernel.size + layer.bias.size
    return total


def macs_count(net: Network, input_shape: tuple[int, ...] | None = None) -> int:
    """Multiply-accumulates per sample at inference."""
    if input_shape is not None and tuple(input_shape) != net.input_shape:
        net = Network(net.layers, input_shape)
    total = 0
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Dense):
            total += layer.W.size
        elif isinstance(layer, Conv2d):
            _, Ho, Wo = net.shapes[i + 1]
            total += layer.kernel.size * Ho * Wo
    return total


# --------------------------------------------------------------------------
# convolution unfolding for neuron search
# --------------------------------------------------------------------------


@dataclass
class ConvUnfolding:
    """Unfolded input of a conv pair.

    ``Bc[i]`` is ``(C*d*d, H1*W1)``: the patches feeding the first conv.
    ``Bt[i, j]`` is ``(d2*d2, C*d*d)``: for output pixel ``j`` of the second
    conv, the patches at each of the ``d2*d2`` intermediate positions it reads
    (zero rows where the second conv reads padding).
    """

    Bc: np.ndarray
    Bt: np.ndarray
    mid_hw: tuple[int, int]
    out_hw: tuple[int, int]
    d: int
    d2: int


def pixel_selectors(mid_hw: tuple[int, int], d2: int, pad2: int) -> np.ndarray:
    """Index of the intermediate pixel read by each (output pixel, kernel offset); -1 for padding."""
    H1, W1 = mid_hw
    H2, W2 = H1 + 2 * pad2 - d2 + 1, W1 + 2 * pad2 - d2 + 1
    sel = np.full((H2 * W2, d2 * d2), -1, dtype=np.int64)
    for y in range(H2):
        for x in range(W2):
            for u in range(d2):
                for v in range(d2):
                    sy, sx = y + u - pad2, x + v - pad2
                    if 0 <= sy < H1 and 0 <= sx < W1:
                        sel[y * W2 + x, u * d2 + v] = sy * W1 + sx
    return sel


def unfold_conv(B_post: np.ndarray, d: int, padding: int, d2: int, padding2: int) -> ConvUnfolding:
    """Unfold the input of conv ``(d, padding)`` followed by conv ``(d2, padding2)``."""
    B_post = np.asarray(B_post, dtype=np.float64)
    if B_post.ndim != 4:
        raise ShapeError("conv activations must be (n, C, H, W)")
    n, C, H, W = B_post.shape
    H1, W1 = H + 2 * padding - d + 1, W + 2 * padding - d + 1
    H2, W2 = H1 + 2 * padding2 - d2 + 1, W1 + 2 * padding2 - d2 + 1
    if min(H1, W1, H2, W2) < 1:
        raise ShapeError("conv geometry leaves no output pixels")
    Bc = im2col(B_post, d, padding)
    q = C * d * d
    # unfolding the patch image a second time gives every B^t_{i,j}
    second = im2col(Bc.reshape(n, q, H1, W1), d2, padding2)
    Bt = second.reshape(n, q, d2 * d2, H2 * W2).transpose(0, 3, 2, 1)
    return ConvUnfolding(Bc, np.ascontiguousarray(Bt), (H1, W1), (H2, W2), d, d2)
