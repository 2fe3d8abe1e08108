"""Expressivity bottleneck of a layer, its best in-layer update and the
optimal new neurons.

Shapes: ``B`` matrices are ``(features, n)`` and ``V`` matrices are
``(out, n)``.  Every statistic carries an explicit ``1/n``; the desired
updates themselves are per-sample gradients.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import numerics
from .errors import DomainError, ShapeError
from .net_core import ConvUnfolding

RANK_REL = 1e-7
RANK_ABS = 1e-12

# test-only fault switches, toggled through netgrow.verify.inject_fault
FAULTS: set[str] = set()


@dataclass
class LayerStats:
    S: np.ndarray
    N: np.ndarray
    n_samples: int
    geometry: str = "fc"
    # conv only: (in_channels, d, out_channels, d2)
    kernel_dims: tuple[int, int, int, int] | None = None
    r: int = 1


@dataclass
class NeuronSet:
    """New-neuron weights, one column per neuron."""

    alpha: np.ndarray
    omega: np.ndarray
    lambdas: np.ndarray
    fallback: bool = False

    @property
    def count(self) -> int:
        return int(self.lambdas.size)

    def contribution_factor(self) -> np.ndarray:
        """``sum_k omega_k alpha_k^T``."""
        return self.omega @ self.alpha.T


def _check_chain(B: np.ndarray, V: np.ndarray) -> int:
    if B.ndim != 2 or V.ndim != 2:
        raise ShapeError("B and V must be matrices")
    if B.shape[1] != V.shape[1]:
        raise ShapeError(f"B has {B.shape[1]} samples but V has {V.shape[1]}")
    if B.shape[1] < 1:
        raise ShapeError("need at least one sample")
    return B.shape[1]


def best_update(B_prev, V_goal, rcond: float = numerics.DEFAULT_RCOND) -> np.ndarray:
    """Least-squares move of the layer weights toward ``V_goal``.

    ``dW = (1/n) V B^T ((1/n) B B^T)^+``, the minimum-norm minimiser of
    ``(1/n) ||dW B - V||^2``.
    """
    B = numerics.as_finite_matrix(B_prev, "B_prev")
    V = numerics.as_finite_matrix(V_goal, "V_goal")
    n = _check_chain(B, V)
    S = B @ B.T / n
    return (V @ B.T / n) @ numerics.pinv(S, rcond)


def project_goal(V_goal, delta_W, B_prev) -> np.ndarray:
    """Part of ``V_goal`` the best in-layer update cannot produce."""
    return np.asarray(V_goal, dtype=np.float64) - np.asarray(delta_W) @ np.asarray(B_prev)


def bottleneck_value(V_goal, B_prev, rcond: float = numerics.DEFAULT_RCOND) -> float:
    V = np.asarray(V_goal, dtype=np.float64)
    dW = best_update(B_prev, V, rcond)
    R = project_goal(V, dW, B_prev)
    return float(np.sum(R * R) / V.shape[1])


def stats_fc(B_minus2, V_proj) -> LayerStats:
    B = numerics.as_finite_matrix(B_minus2, "B")
    V = numerics.as_finite_matrix(V_proj, "V_proj")
    n = _check_chain(B, V)
    return LayerStats(B @ B.T / n, B @ V.T / n, n, "fc")


def conv_rank_factor(unfold: ConvUnfolding, r_mode: str = "min") -> int:
    q, c = unfold.Bt.shape[2], unfold.Bt.shape[3]
    if r_mode == "min":
        return min(q, c)
    if r_mode == "max":
        return max(q, c)
    raise DomainError(f"r_mode must be 'min' or 'max', got {r_mode!r}")


def stats_conv(unfold: ConvUnfolding, V_proj, r_mode: str = "min") -> LayerStats:
    """Pseudo second-moment and cross-moment matrices for a conv pair.

    ``S = (r/n) sum_ij Bt_ij^T Bt_ij`` and ``N = [N_1 ... N_M]`` with
    ``N_m = (1/n) sum_ij V[i, m, j] Bt_ij^T``.
    """
    Bt = unfold.Bt
    n, P2, q, c = Bt.shape
    V = np.asarray(V_proj, dtype=np.float64)
    if V.ndim != 4 or V.shape[0] != n or V.shape[2] * V.shape[3] != P2:
        raise ShapeError(f"V_proj {V.shape} does not match unfolding {Bt.shape}")
    r = conv_rank_factor(unfold, r_mode)
    flat = Bt.reshape(-1, c)
    S = r * (flat.T @ flat) / n
    M = V.shape[1]
    Vf = V.reshape(n, M, P2)
    N = np.einsum("imj,ijqc->cmq", Vf, Bt, optimize=True).reshape(c, M * q) / n
    C_in = c // (unfold.d * unfold.d)
    return LayerStats(0.5 * (S + S.T), N, n, "conv", (C_in, unfold.d, M, unfold.d2), r)


def significant_count(lambdas: np.ndarray) -> int:
    if lambdas.size == 0 or lambdas[0] <= RANK_ABS:
        return 0
    return int(np.count_nonzero(lambdas > max(RANK_REL * lambdas[0], RANK_ABS)))


def optimal_neurons(stats: LayerStats, max_K: int | None = None,
                    rcond: float = numerics.DEFAULT_RCOND) -> NeuronSet:
    """Whitened low-rank solution: SVD of ``S^-1/2 N``.

    ``alpha_k = sqrt(l_k) S^-1/2 u_k`` and ``omega_k = sqrt(l_k) v_k``,
    truncated to the numerical rank (and to ``max_K``).
    """
    W = numerics.inv_sqrt_psd(stats.S, rcond)
    res = numerics.svd(W @ stats.N)
    K = significant_count(res.sigma)
    if max_K is not None:
        K = min(K, int(max_K))
    lam = res.sigma[:K].copy()
    root = np.sqrt(lam)
    alpha = (W @ res.U[:, :K]) * root
    omega = res.V[:, :K] * root
    if "optimal_neurons_sign_flip" in FAULTS:
        omega = -omega
    return NeuronSet(alpha, omega, lam)


def optimal_neurons_geneig(stats: LayerStats, K: int | None = None,
                           rcond: float = numerics.DEFAULT_RCOND) -> NeuronSet:
    """Same neurons through the generalized eigenproblem ``N N^T a = mu S a``.

    With ``a^T S a = 1`` and ``omega = N^T a`` the contribution ``omega a^T``
    already equals the SVD route's; the pair is then rescaled to that route's
    convention (``lambda = sqrt(mu)``).  A singular ``S`` falls back to the
    SVD route and sets ``fallback``.
    """
    w = np.linalg.eigvalsh(0.5 * (stats.S + stats.S.T))
    if w.size == 0 or w[-1] <= 0 or w[0] <= rcond * w[-1]:
        warnings.warn("S is not positive definite; using the SVD route", RuntimeWarning, stacklevel=2)
        out = optimal_neurons(stats, K, rcond)
        out.fallback = True
        return out
    pairs = numerics.gen_eig_pairs(stats.N @ stats.N.T, stats.S, None, rcond)
    mus = np.array([mu for mu, _ in pairs])
    lam_all = np.sqrt(mus)
    keep = significant_count(lam_all)
    if K is not None:
        keep = min(keep, int(K))
    in_dim, out_dim = stats.N.shape
    alpha = np.zeros((in_dim, keep))
    omega = np.zeros((out_dim, keep))
    for k in range(keep):
        a = pairs[k][1]
        root = np.sqrt(lam_all[k])
        alpha[:, k] = a * root
        omega[:, k] = (stats.N.T @ a) / root
    return NeuronSet(alpha, omega, lam_all[:keep].copy())


def first_order_gains(lambdas, V_goal, delta_W, B_prev) -> tuple[float, float]:
    """``(sum lambda^2, (1/n) <V_goal, dW B>)``: the two first-order loss decreases."""
    lam = np.asarray(lambdas, dtype=np.float64)
    V = np.asarray(V_goal, dtype=np.float64)
    n = V.shape[1]
    gain_neurons = float(np.sum(lam * lam))
    if delta_W is None:
        return gain_neurons, 0.0
    gain_update = float(np.sum(V * (np.asarray(delta_W) @ np.asarray(B_prev))) / n)
    if gain_update < -1e-10:
        raise DomainError(f"best-update gain is negative ({gain_update:.3e})")
    return gain_neurons, max(gain_update, 0.0)


# --------------------------------------------------------------------------
# conv helpers
# --------------------------------------------------------------------------


def conv_design(B_in: np.ndarray, d: int, padding: int) -> np.ndarray:
    """Unfolded conv input with a ones row, flattened to ``(C*d*d + 1, n*P)``."""
    from .kernels import im2col

    cols = im2col(B_in, d, padding)
    n, q, P = cols.shape
    flat = cols.transpose(1, 0, 2).reshape(q, n * P)
    return np.vstack([flat, np.ones((1, n * P))])


def conv_goal_matrix(V: np.ndarray) -> np.ndarray:
    """``(n, M, H, W)`` goal tensor as ``(M, n*H*W)`` matching :func:`conv_design`."""
    n, M = V.shape[:2]
    return V.reshape(n, M, -1).transpose(1, 0, 2).reshape(M, -1)


def conv_goal_tensor(Vm: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    n, M = shape[:2]
    return Vm.reshape(M, n, -1).transpose(1, 0, 2).reshape(shape)
