"""Growth operators: neuron proposals (TINY, GradMax, random), their
normalisation and amplitude, insertion into a network, batch-size schedules
and the constructive overfit procedure.

A *position* ``p`` designates the hidden layer produced by weighted layer
``p + 1`` (1-based) and consumed by weighted layer ``p + 2``.  New neurons get
in-weights ``alpha`` on the producer side and out-weights ``omega`` on the
consumer side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from . import bottleneck as bn
from . import numerics
from .errors import DomainError, ShapeError
from .net_core import (
    Activation, Dense, Network, batch_loss, forward_cached,
    goals_from_cache, slope_at_zero, unfold_conv,
)

NORM_TARGET = 1e-3


class NormalizationMode(str, Enum):
    NONE = "none"
    TINY_SQRT = "tiny_sqrt"
    GRADMAX_LINEAR = "gradmax_linear"
    GRADMAX_SQRT = "gradmax_sqrt"
    UNIT_THEN_GAMMA = "unit_then_gamma"


@dataclass
class GrowthSchedule:
    delta_t: int = 1
    neurons_per_depth: tuple[int, ...] = (1,)
    start_scale: float = 1.0
    bound: float = 4.0
    interval: str = "positive"

    def __post_init__(self):
        if self.delta_t <= 0:
            raise DomainError("delta_t must be positive")
        if any(k < 1 for k in self.neurons_per_depth):
            raise DomainError("neurons per depth must be >= 1")
        if self.interval not in ("symmetric", "positive"):
            raise DomainError("interval must be 'symmetric' or 'positive'")


@dataclass
class GrowthProposal:
    position: int
    kind: str
    alpha: np.ndarray
    omega: np.ndarray
    lambdas: np.ndarray
    delta_W_star: np.ndarray | None = None
    gains: tuple[float, float] = (0.0, 0.0)
    psi_before: float = 0.0
    geometry: str = "fc"

    @property
    def count(self) -> int:
        return int(self.alpha.shape[1])

    @property
    def empty(self) -> bool:
        return self.count == 0

    def truncated(self, K: int) -> "GrowthProposal":
        K = max(0, min(int(K), self.count))
        lam = self.lambdas[:K].copy()
        gains = self.gains
        if self.kind == "tiny":
            gains = (float(np.sum(lam * lam)), gains[1])
        return replace(self, alpha=self.alpha[:, :K].copy(), omega=self.omega[:, :K].copy(),
                       lambdas=lam, gains=gains)


# --------------------------------------------------------------------------
# per-position quantities
# --------------------------------------------------------------------------


@dataclass
class PositionData:
    """Everything the proposers need about one position on one batch."""

    position: int
    geometry: str
    loss: float
    V_goal: np.ndarray   # goal at the consumer's pre-activation
    B_prev: np.ndarray   # consumer input as a design matrix (ones row included)
    B_in: np.ndarray     # producer input (matrix for fc, 4-D tensor for conv)
    V_matrix: np.ndarray  # V_goal flattened to match B_prev
    n: int


def _check_position(net: Network, position: int) -> None:
    if position not in net.growable_positions:
        raise DomainError(f"position {position} is not growable (growable: {net.growable_positions})")


def position_data(net: Network, X, Y, position: int, loss: str = "square") -> PositionData:
    _check_position(net, position)
    cache = forward_cached(net, X)
    goals = goals_from_cache(net, cache, Y, loss)
    lo, hi = position + 1, position + 2
    V = goals.V[hi]
    n = cache.X.shape[1]
    consumer = net.weighted(hi)
    if isinstance(consumer, Dense):
        return PositionData(position, "fc", goals.loss, V, cache.B[hi - 1], cache.B[lo - 1], V, n)
    design = bn.conv_design(cache.B[hi - 1], consumer.size, consumer.padding)
    return PositionData(position, "conv", goals.loss, V, design, cache.B[lo - 1],
                        bn.conv_goal_matrix(V), n)


def _conv_stats(net: Network, data: PositionData, V_tensor: np.ndarray, r_mode: str) -> bn.LayerStats:
    producer = net.weighted(data.position + 1)
    consumer = net.weighted(data.position + 2)
    unfold = unfold_conv(data.B_in, producer.size, producer.padding, consumer.size, consumer.padding)
    return bn.stats_conv(unfold, V_tensor, r_mode)


def psi_at(net: Network, X, Y, position: int, loss: str = "square",
           rcond: float = numerics.DEFAULT_RCOND) -> float:
    """Bottleneck value at the consumer layer of ``position``."""
    d = position_data(net, X, Y, position, loss)
    dW = bn.best_update(d.B_prev, d.V_matrix, rcond)
    R = bn.project_goal(d.V_matrix, dW, d.B_prev)
    return float(np.sum(R * R) / d.n)


# --------------------------------------------------------------------------
# proposers
# --------------------------------------------------------------------------


def propose_tiny(net: Network, X, Y, position: int, loss: str = "square", max_K: int | None = None,
                 rcond: float = numerics.DEFAULT_RCOND, r_mode: str = "min",
                 projection: float = 1.0) -> GrowthProposal:
    """Best consumer update, projected goal, then optimal neurons.

    ``projection`` scales the part removed from ``V_goal`` before the neuron
    search (1 removes the full best update).
    """
    d = position_data(net, X, Y, position, loss)
    dW = bn.best_update(d.B_prev, d.V_matrix, rcond)
    Vp = bn.project_goal(d.V_matrix, dW, d.B_prev)
    psi = float(np.sum(Vp * Vp) / d.n)
    if projection != 1.0:
        Vp = bn.project_goal(d.V_matrix, projection * dW, d.B_prev)
    if d.geometry == "fc":
        stats = bn.stats_fc(d.B_in, Vp)
    else:
        stats = _conv_stats(net, d, bn.conv_goal_tensor(Vp, d.V_goal.shape), r_mode)
    neurons = bn.optimal_neurons(stats, max_K, rcond)
    gain_update = float(np.sum(d.V_matrix * (dW @ d.B_prev)) / d.n)
    gains = (float(np.sum(neurons.lambdas ** 2)), max(gain_update, 0.0))
    return GrowthProposal(position, "tiny", neurons.alpha, neurons.omega, neurons.lambdas,
                          dW, gains, psi, d.geometry)


def propose_gradmax(net: Network, X, Y, position: int, loss: str = "square",
                    max_K: int | None = None) -> GrowthProposal:
    """Zero fan-in neurons whose fan-out maximises the fan-in gradient norm.

    ``Nt = (1/n) B V_goal^T`` uses the raw goal; the fan-outs are its top
    right singular vectors (unit norm before normalisation).
    """
    d = position_data(net, X, Y, position, loss)
    if d.geometry == "fc":
        Nt = bn.stats_fc(d.B_in, d.V_goal).N
    else:
        Nt = _conv_stats(net, d, d.V_goal, "min").N
    res = numerics.svd(Nt)
    K = bn.significant_count(res.sigma)
    if max_K is not None:
        K = min(K, int(max_K))
    dW = bn.best_update(d.B_prev, d.V_matrix)
    Vp = bn.project_goal(d.V_matrix, dW, d.B_prev)
    return GrowthProposal(position, "gradmax", np.zeros((Nt.shape[0], K)), res.V[:, :K].copy(),
                          res.sigma[:K].copy(), None, (0.0, 0.0), float(np.sum(Vp * Vp) / d.n),
                          d.geometry)


def _unit_mean_square(M: np.ndarray) -> np.ndarray:
    K = M.shape[1]
    norm = np.sum(M * M) / K
    if norm <= 0:
        raise DomainError("cannot normalise zero weights")
    return M / math.sqrt(norm)


def propose_random(in_dim: int, out_dim: int, K: int = 1, distribution: str = "gaussian",
                   seed: int | np.random.Generator = 0, position: int = -1,
                   geometry: str = "fc", zero_bias_row: bool = False) -> GrowthProposal:
    """I.i.d. random neurons scaled to unit mean-square norm per family."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if distribution == "gaussian":
        draw = rng.standard_normal
    elif distribution == "uniform":
        draw = lambda size: rng.uniform(-1.0, 1.0, size)  # noqa: E731
    else:
        raise DomainError(f"unknown distribution {distribution!r}")
    alpha = draw((in_dim, K))
    omega = draw((out_dim, K))
    if zero_bias_row:
        alpha[-1] = 0.0
    return GrowthProposal(position, "random", _unit_mean_square(alpha), _unit_mean_square(omega),
                          np.zeros(0), None, (0.0, 0.0), 0.0, geometry)


def random_for_position(net: Network, position: int, K: int, distribution: str = "gaussian",
                        seed: int | np.random.Generator = 0) -> GrowthProposal:
    _check_position(net, position)
    producer, consumer = net.weighted(position + 1), net.weighted(position + 2)
    if isinstance(producer, Dense):
        return propose_random(producer.in_features + 1, consumer.out_features, K, distribution,
                              seed, position, "fc", zero_bias_row=True)
    return propose_random(producer.in_channels * producer.size ** 2,
                          consumer.out_channels * consumer.size ** 2, K, distribution,
                          seed, position, "conv")


def normalize_proposal(p: GrowthProposal, mode: NormalizationMode | str) -> GrowthProposal:
    """Rescale each weight family by one scalar computed from its mean-square norm."""
    mode = NormalizationMode(mode)
    if p.empty or mode is NormalizationMode.NONE:
        return p
    K = p.count
    alpha, omega, dW = p.alpha, p.omega, p.delta_W_star

    def ms(M):
        v = float(np.sum(M * M)) / K
        if v <= 0:
            raise DomainError("zero-norm weights cannot be normalised")
        return v

    if mode is NormalizationMode.TINY_SQRT:
        alpha = alpha * math.sqrt(NORM_TARGET / ms(alpha))
        omega = omega * math.sqrt(NORM_TARGET / ms(omega))
    elif mode is NormalizationMode.GRADMAX_LINEAR:
        omega = omega * NORM_TARGET / math.sqrt(ms(omega))
        alpha = np.zeros_like(alpha)
    elif mode is NormalizationMode.GRADMAX_SQRT:
        omega = omega * math.sqrt(NORM_TARGET / ms(omega))
        alpha = np.zeros_like(alpha)
    elif mode is NormalizationMode.UNIT_THEN_GAMMA:
        alpha = alpha / math.sqrt(ms(alpha))
        omega = omega / math.sqrt(ms(omega))
        if dW is not None:
            rows = dW.shape[0]
            norm = float(np.sum(dW * dW)) / rows
            if norm > 0:
                dW = dW / math.sqrt(norm)
    return replace(p, alpha=alpha, omega=omega, delta_W_star=dW)


# --------------------------------------------------------------------------
# mutation
# --------------------------------------------------------------------------


def insert_neurons(net: Network, position: int, alpha: np.ndarray, omega: np.ndarray) -> Network:
    """Append neurons with the given in/out weights (new biases are zero)."""
    _check_position(net, position)
    new = net.copy()
    producer, consumer = new.weighted(position + 1), new.weighted(position + 2)
    K = alpha.shape[1]
    if omega.shape[1] != K:
        raise ShapeError("alpha and omega have different neuron counts")
    if isinstance(producer, Dense):
        if alpha.shape[0] != producer.W.shape[1] or omega.shape[0] != consumer.out_features:
            raise ShapeError("neuron weights do not match the dense pair")
        producer.W = np.vstack([producer.W, alpha.T])
        h = consumer.in_features
        consumer.W = np.hstack([consumer.W[:, :h], omega, consumer.W[:, h:]])
    else:
        C, d = producer.in_channels, producer.size
        M, d2 = consumer.out_channels, consumer.size
        if alpha.shape[0] != C * d * d or omega.shape[0] != M * d2 * d2:
            raise ShapeError("neuron weights do not match the conv pair")
        producer.kernel = np.concatenate([producer.kernel, alpha.T.reshape(K, C, d, d)], axis=0)
        producer.bias = np.concatenate([producer.bias, np.zeros(K)])
        slab = omega.T.reshape(K, M, d2, d2).transpose(1, 0, 2, 3)
        consumer.kernel = np.concatenate([consumer.kernel, slab], axis=1)
    return Network(new.layers, new.input_shape)


def amplitude_scales(gamma: float, amplitude: str = "sqrt") -> tuple[float, float]:
    if amplitude == "sqrt":
        root = math.sqrt(abs(gamma))
        return (root if gamma >= 0 else -root), root
    if amplitude == "linear":
        return gamma, gamma
    raise DomainError(f"amplitude must be 'sqrt' or 'linear', got {amplitude!r}")


def apply_addition(net: Network, position: int, p: GrowthProposal, gamma: float = 1.0,
                   amplitude: str = "sqrt") -> Network:
    if not math.isfinite(gamma):
        raise DomainError("gamma must be finite")
    s_in, s_out = amplitude_scales(gamma, amplitude)
    return insert_neurons(net, position, p.alpha * s_in, p.omega * s_out)


def apply_best_update(net: Network, layer: int, delta_W: np.ndarray, gamma: float = 1.0) -> Network:
    """``W_layer += gamma * delta_W`` for weighted layer ``layer`` (1-based)."""
    new = net.copy()
    target = new.weighted(layer)
    delta_W = np.asarray(delta_W, dtype=np.float64)
    if isinstance(target, Dense):
        if delta_W.shape != target.W.shape:
            raise ShapeError(f"update {delta_W.shape} does not match weights {target.W.shape}")
        target.W = target.W + gamma * delta_W
    else:
        k = target.kernel
        if delta_W.shape != (k.shape[0], k[0].size + 1):
            raise ShapeError(f"update {delta_W.shape} does not match kernel {k.shape}")
        target.kernel = k + gamma * delta_W[:, :-1].reshape(k.shape)
        target.bias = target.bias + gamma * delta_W[:, -1]
    return new


def apply_proposal(net: Network, p: GrowthProposal, gamma: float, amplitude: str = "sqrt",
                   with_update: bool = True) -> Network:
    """Best update (scaled by gamma) followed by the neuron insertion."""
    out = net
    if with_update and p.delta_W_star is not None and gamma != 0.0:
        out = apply_best_update(out, p.position + 2, p.delta_W_star, gamma)
    if p.empty:
        return out if out is not net else net.copy()
    return apply_addition(out, p.position, p, gamma, amplitude)


# --------------------------------------------------------------------------
# amplitude search
# --------------------------------------------------------------------------

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section(f, lo: float, hi: float, tol: float, max_iter: int = 200) -> tuple[float, float]:
    """Minimise a unimodal ``f`` on ``[lo, hi]``; returns ``(x, f(x))``."""
    a, b = lo, hi
    x1 = b - _INV_PHI * (b - a)
    x2 = a + _INV_PHI * (b - a)
    f1, f2 = f(x1), f(x2)
    it = 0
    while b - a > tol and it < max_iter:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _INV_PHI * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _INV_PHI * (b - a)
            f2 = f(x2)
        it += 1
    return (x1, f1) if f1 <= f2 else (x2, f2)


def amplitude_factor(net: Network, p: GrowthProposal, X, Y, loss: str = "square", bound: float = 4.0,
                     interval: str = "positive", amplitude: str = "sqrt", with_update: bool = True,
                     grid: int = 33, tol: float | None = None) -> float:
    """Line search for the amplitude of a proposal on a batch.

    A coarse grid brackets the minimum, golden-section refines it, and the
    result is compared against gamma = 0 so the loss never goes up.
    """
    if bound <= 0:
        raise DomainError("bound must be positive")
    if p.empty and (not with_update or p.delta_W_star is None or not p.delta_W_star.any()):
        return 0.0
    lo = -bound if interval == "symmetric" else 0.0
    tol = 1e-4 * bound if tol is None else tol
    memo: dict[float, float] = {}

    def f(g: float) -> float:
        if g not in memo:
            value = batch_loss(apply_proposal(net, p, g, amplitude, with_update), X, Y, loss)
            memo[g] = value if math.isfinite(value) else math.inf
        return memo[g]

    gs = np.linspace(lo, bound, grid)
    vals = [f(float(g)) for g in gs]
    i = int(np.argmin(vals))
    a, b = float(gs[max(i - 1, 0)]), float(gs[min(i + 1, grid - 1)])
    g_star, f_star = golden_section(f, a, b, tol)
    if vals[i] < f_star:
        g_star, f_star = float(gs[i]), vals[i]
    base = f(0.0)
    # ties go to zero: no change unless it strictly helps
    return g_star if f_star < base else 0.0


# --------------------------------------------------------------------------
# schedules
# --------------------------------------------------------------------------


def select_neurons(lambdas, rel_threshold: float = bn.RANK_REL) -> int:
    lam = np.asarray(lambdas, dtype=np.float64)
    if lam.size == 0 or lam[0] <= 0:
        return 0
    return int(np.count_nonzero(lam > rel_threshold * lam[0]))


def estimation_batch_size(kernel_area: int, width: int, pixels: int, coeff: float = 1.0,
                          conv_boost: bool = False, dataset_size: int | None = None,
                          minimum: int = 8) -> int:
    """``ceil(coeff * (S W)^2 / P * 2^k)`` with ``k = sqrt(1024 / P)`` for conv, clamped."""
    if min(kernel_area, width, pixels) <= 0 or coeff < 0:
        raise DomainError("sizes must be positive")
    value = coeff * (kernel_area * width) ** 2 / pixels
    if conv_boost:
        value *= 2.0 ** math.sqrt(1024.0 / pixels)
    n = max(minimum, math.ceil(value))
    if dataset_size is not None:
        n = min(n, dataset_size)
    return int(n)


def learning_batch_size(b_t: float, C_t: float, C_next: float) -> int:
    """``b_t * sqrt(C_next / C_t)`` rounded half-up, at least 1."""
    if b_t <= 0 or C_t <= 0 or C_next <= 0:
        raise DomainError("batch size and complexities must be positive")
    return max(1, int(math.floor(b_t * math.sqrt(C_next / C_t) + 0.5)))


# --------------------------------------------------------------------------
# constructive overfit
# --------------------------------------------------------------------------


@dataclass
class OverfitResult:
    network: Network
    direction: np.ndarray
    biases: np.ndarray
    order: np.ndarray
    activations: np.ndarray
    weights: np.ndarray
    residual_history: list


def best_separating_direction(X: np.ndarray, trials: int, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Unit direction (among random trials) maximising the smallest projected gap."""
    dim = X.shape[0]
    best, best_gap = None, -1.0
    for _ in range(max(1, trials)):
        a = rng.standard_normal(dim)
        a /= np.linalg.norm(a)
        proj = np.sort(a @ X)
        gap = float(np.min(np.diff(proj))) if proj.size > 1 else math.inf
        if gap > best_gap:
            best, best_gap = a, gap
    return best, best_gap


def overfit_construct(X, Y, direction_trials: int = 64, seed: int = 0,
                      direction: np.ndarray | None = None, eps: float | None = None,
                      bias_rule: str = "midpoint") -> OverfitResult:
    """One ReLU neuron per sample, reaching zero training error.

    Samples are sorted along a separating direction ``a`` and neuron ``k``
    switches on just below sample ``k``, so the activation matrix is lower
    triangular.  ``bias_rule="global"`` uses ``a.x_k - gap + eps`` with the
    smallest projected gap; its triangular inverse grows geometrically with
    uneven spacing.  ``"midpoint"`` puts each bias halfway to the previous
    sample, which keeps the solve well conditioned.  Neurons are added from the
    last sample backwards and the output weights of the trailing block are
    re-solved after each addition.
    """
    X = numerics.as_finite_matrix(X, "X")
    Y = np.asarray(Y, dtype=np.float64).reshape(1, -1)
    n = X.shape[1]
    if Y.shape[1] != n:
        raise ShapeError("X and Y sample counts differ")
    if n > 1 and np.unique(X.T, axis=0).shape[0] != n:
        raise DomainError("duplicate samples cannot be separated")
    rng = np.random.default_rng(seed)
    if direction is None:
        a, gap = best_separating_direction(X, direction_trials, rng)
    else:
        a = np.asarray(direction, dtype=np.float64).reshape(-1)
        a = a / np.linalg.norm(a)
        proj = np.sort(a @ X)
        gap = float(np.min(np.diff(proj))) if n > 1 else math.inf
    if n > 1 and gap <= 0:
        raise DomainError("no direction separates all samples")
    if not math.isfinite(gap):
        gap = 1.0
    proj = a @ X
    order = np.argsort(proj, kind="stable")
    p_sorted = proj[order]
    y_sorted = Y[0, order]
    if bias_rule == "global":
        eps = 1e-3 * gap if eps is None else float(eps)
        biases = p_sorted - gap + eps
    elif bias_rule == "midpoint":
        biases = np.empty(n)
        biases[0] = p_sorted[0] - 0.5 * gap
        biases[1:] = 0.5 * (p_sorted[:-1] + p_sorted[1:])
    else:
        raise DomainError(f"bias_rule must be 'midpoint' or 'global', got {bias_rule!r}")
    act = np.maximum(p_sorted[:, None] - biases[None, :], 0.0)
    weights = np.zeros(n)
    history = []
    for m in range(1, n + 1):
        tail = slice(n - m, n)
        weights[tail] = np.linalg.solve(act[tail, tail], y_sorted[tail])
        residual = act[:, tail] @ weights[tail] - y_sorted
        history.append(residual.copy())
    W1 = np.hstack([np.outer(np.ones(n), a), -biases[:, None]])
    W2 = np.append(weights, 0.0).reshape(1, -1)
    net = Network([Dense(W1), Activation("relu"), Dense(W2)], (X.shape[0],))
    return OverfitResult(net, a, biases, order, act, weights, history)


# --------------------------------------------------------------------------
# random-direction statistic
# --------------------------------------------------------------------------


def random_direction_statistic(n: int, d: int, trials: int = 2000, distribution: str = "gaussian",
                               seed: int = 0) -> np.ndarray:
    """Normalised inner products ``(1/n) <E, V>`` between independent random updates.

    ``V`` is drawn from N(0, I/d) per sample and ``E`` from the given
    distribution; both are rescaled to unit mean-square norm per sample before
    the product, so the spread is about ``1/sqrt(n d)``.
    """
    rng = np.random.default_rng(seed)
    out = np.empty(trials)
    for t in range(trials):
        V = rng.standard_normal((d, n)) / math.sqrt(d)
        if distribution == "gaussian":
            E = rng.standard_normal((d, n)) / math.sqrt(d)
        elif distribution == "uniform":
            E = rng.uniform(-1.0 / d, 1.0 / d, (d, n))
        else:
            raise DomainError(f"unknown distribution {distribution!r}")
        V *= math.sqrt(n / np.sum(V * V))
        E *= math.sqrt(n / np.sum(E * E))
        out[t] = np.sum(V * E) / n
    return out


def predicted_slope(net: Network, p: GrowthProposal) -> float:
    """First-order loss change per unit amplitude, ``-(sigma'(0) sum l^2 + gain_dW)``."""
    return -(slope_at_zero(net.position_activation(p.position)) * p.gains[0] + p.gains[1])


__all__ = [
    "NormalizationMode", "GrowthSchedule", "GrowthProposal", "propose_tiny", "propose_gradmax",
    "propose_random", "random_for_position", "normalize_proposal", "amplitude_factor",
    "apply_addition", "apply_best_update", "apply_proposal", "insert_neurons", "select_neurons",
    "estimation_batch_size", "learning_batch_size", "overfit_construct", "psi_at",
    "random_direction_statistic", "predicted_slope",
]
