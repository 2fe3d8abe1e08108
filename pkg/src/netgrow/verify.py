"""Independent oracles and the invariant suite.

Oracles here deliberately avoid the formulas they certify: least squares goes
through the null space of a full SVD, rank-K residuals through singular value
tails, and desired updates through finite differences of a separate forward
pass with direct (loop-over-offsets) convolutions.
"""

from __future__ import annotations

import contextlib
import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import bottleneck as bn
from . import growth as gr
from . import kernels, numerics
from ._kernels_py import col2im as py_col2im, im2col as py_im2col
from .errors import DomainError
from .net_core import (
    SELU_ALPHA, SELU_SCALE, Activation, AvgPool2d, Conv2d, Dense, Flatten, GoalSet, Network,
    conv_forward, forward, loss_and_goals, mlp, unfold_conv,
)

TOLERANCES: dict[str, float] = {
    "svd_reconstruction": 1e-10,
    "pinv_penrose": 1e-9,
    "psd_roots": 1e-9,
    "gen_eig_orthonormal": 1e-8,
    "kernel_adjoint": 1e-10,
    "kernel_backends": 0.0,
    "residual_orthogonality": 1e-9,
    "fd_linear": 1e-9,
    "fd_goals": 1e-5,
    "insert_preserves": 1e-12,
    "normalization": 1e-12,
    "line_search_monotone": 0.0,
    "fc_exactness": 1e-8,
    "fc_runtime_s": 10.0,
    "best_update_oracle": 1e-9,
    "best_update_perturbed": 1e-12,
    "geneig_contribution": 1e-7,
    "geneig_values": 1e-8,
    "slope_relative": 0.02,
    "halving_factor": 3.5,
    "conv_bound": 1e-8,
    "conv_residual": 1e-10,
    "regression_mse": 1e-4,
    "regression_additions": 20,
    "regression_runtime_s": 30.0,
    "overfit_loss": 1e-10,
    "redundancy_tiny": 1e-10,
    "redundancy_gradmax": 0.1,
    "random_std": 0.10,
    "blobs_accuracy": 0.95,
    "blobs_runtime_s": 60.0,
    "schedules": 0.0,
}


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    notes: str = ""


@dataclass
class VerificationReport:
    seed: int
    results: list[CheckResult] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def n_passed(self) -> int:
        return sum(r.passed for r in self.results)

    @property
    def n_failed(self) -> int:
        return len(self.results) - self.n_passed

    @property
    def ok(self) -> bool:
        return self.n_failed == 0

    def to_text(self) -> str:
        width = max((len(r.name) for r in self.results), default=4)
        lines = []
        for r in self.results:
            status = "PASS" if r.passed else "FAIL"
            line = f"{status}  {r.name:<{width}}  measured={r.measured:.3e}  tol={r.tolerance:.3e}"
            if r.notes:
                line += f"  {r.notes}"
            lines.append(line)
        lines.append(f"{self.n_passed} passed, {self.n_failed} failed in {self.elapsed:.1f}s (seed {self.seed})")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "status", "measured", "tolerance", "notes"])
        for r in self.results:
            w.writerow([r.name, "pass" if r.passed else "fail", repr(r.measured), repr(r.tolerance), r.notes])
        return buf.getvalue()


# --------------------------------------------------------------------------
# oracles
# --------------------------------------------------------------------------


def oracle_least_squares(B, V) -> float:
    """``min_dW (1/n) ||dW B - V||^2`` from the null space of a full SVD of ``B``."""
    B = np.asarray(B, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    n = B.shape[1]
    if not np.any(B):
        return float(np.sum(V * V) / n)
    _, s, Vt = np.linalg.svd(B, full_matrices=True)
    r = int(np.count_nonzero(s > s[0] * max(B.shape) * np.finfo(float).eps))
    null = Vt[r:].T
    R = V @ null
    return float(np.sum(R * R) / n)


def oracle_rank_k(target, K: int) -> float:
    """``min ||target - M||^2`` over matrices of rank at most ``K``."""
    if K < 0:
        raise DomainError("K must be non-negative")
    s = np.linalg.svd(np.asarray(target, dtype=np.float64), compute_uv=False)
    return float(np.sum(s[int(K):] ** 2))


def _ref_activation(family: str, a: np.ndarray) -> np.ndarray:
    if family == "identity":
        return a
    if family == "relu":
        return a * (a > 0)
    if family == "selu":
        return SELU_SCALE * np.where(a > 0, a, SELU_ALPHA * (np.exp(np.minimum(a, 0.0)) - 1.0))
    if family == "tanh":
        return np.tanh(a)
    if family == "softmax":
        z = np.exp(a - a.max(axis=0, keepdims=True))
        return z / z.sum(axis=0, keepdims=True)
    raise DomainError(f"unknown activation {family!r}")


def _ref_conv(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, pad: int) -> np.ndarray:
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    d = kernel.shape[2]
    Ho, Wo = xp.shape[2] - d + 1, xp.shape[3] - d + 1
    out = np.broadcast_to(bias[None, :, None, None], (x.shape[0], kernel.shape[0], Ho, Wo)).copy()
    for u in range(d):
        for v in range(d):
            out += np.einsum("oc,nchw->nohw", kernel[:, :, u, v], xp[:, :, u:u + Ho, v:v + Wo])
    return out


def _ref_forward(net: Network, X: np.ndarray, inject: tuple[int, np.ndarray] | None = None,
                 record: list | None = None) -> np.ndarray:
    """Plain forward pass; ``inject = (l, delta)`` adds ``delta`` to pre-activation ``l``."""
    h = np.asarray(X, dtype=np.float64)
    n = h.shape[1]
    if len(net.input_shape) == 3:
        h = h.T.reshape((n,) + net.input_shape)
    l = 0
    for layer in net.layers:
        if isinstance(layer, Dense):
            h = layer.W[:, :-1] @ h + layer.W[:, -1:]
        elif isinstance(layer, Conv2d):
            h = _ref_conv(h, layer.kernel, layer.bias, layer.padding)
        elif isinstance(layer, Activation):
            h = _ref_activation(layer.family, h)
            continue
        elif isinstance(layer, AvgPool2d):
            k = layer.size
            c, H, W = h.shape[1:]
            h = h.reshape(n, c, H // k, k, W // k, k).mean(axis=(3, 5))
            continue
        elif isinstance(layer, Flatten):
            h = h.reshape(n, -1).T
            continue
        l += 1
        if record is not None:
            record.append(h.shape)
        if inject is not None and inject[0] == l:
            h = h + inject[1]
    return h if h.ndim == 2 else h.reshape(n, -1).T


def _ref_total_loss(out: np.ndarray, Y: np.ndarray, loss: str) -> float:
    if loss == "square":
        return float(np.sum((out - Y) ** 2))
    return float(-np.sum(Y * np.log(out)))


def fd_goals(net: Network, X, Y, loss: str = "square", eps: float = 1e-5) -> GoalSet:
    """Desired updates by central differences on every pre-activation entry."""
    if not 1e-7 <= eps <= 1e-3:
        raise DomainError("eps must lie in [1e-7, 1e-3]")
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64).reshape(-1, X.shape[1])
    shapes: list = []
    out = _ref_forward(net, X, record=shapes)
    V: list = [None]
    for l, shape in enumerate(shapes, start=1):
        G = np.zeros(shape)
        delta = np.zeros(shape)
        for idx in np.ndindex(*shape):
            delta[idx] = eps
            up = _ref_total_loss(_ref_forward(net, X, (l, delta)), Y, loss)
            delta[idx] = -eps
            down = _ref_total_loss(_ref_forward(net, X, (l, delta)), Y, loss)
            delta[idx] = 0.0
            G[idx] = -(up - down) / (2.0 * eps)
        V.append(G)
    return GoalSet(V, _ref_total_loss(out, Y, loss) / X.shape[1], out)


@contextlib.contextmanager
def inject_fault(name: str):
    """Temporarily enable a test-only fault inside the bottleneck module."""
    bn.FAULTS.add(name)
    try:
        yield
    finally:
        bn.FAULTS.discard(name)


# --------------------------------------------------------------------------
# registry
# --------------------------------------------------------------------------

CHECKS: dict[str, Callable[[np.random.Generator], CheckResult]] = {}


def check(name: str):
    def deco(fn):
        if name in CHECKS:
            raise ValueError(f"duplicate check {name}")
        CHECKS[name] = fn
        fn.check_name = name
        return fn
    return deco


def _res(name: str, measured: float, tol_key: str, passed: bool | None = None, notes: str = "") -> CheckResult:
    tol = TOLERANCES[tol_key]
    measured = float(measured)
    if passed is None:
        passed = bool(measured <= tol)
    return CheckResult(name, bool(passed), measured, tol, notes)


def _rel(a, b, scale) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(float(scale), 1e-300))


def _with_ones(M: np.ndarray) -> np.ndarray:
    return np.vstack([M, np.ones((1, M.shape[1]))])


# ---------------------------------------------------------------- numerics


@check("numerics.svd_reconstruction")
def _svd_reconstruction(rng):
    worst = 0.0
    for _ in range(20):
        M = rng.standard_normal((rng.integers(1, 12), rng.integers(1, 12)))
        res = numerics.svd(M)
        worst = max(worst, _rel(res.reconstruct(), M, np.linalg.norm(M)))
    return _res("numerics.svd_reconstruction", worst, "svd_reconstruction")


@check("numerics.pinv_penrose")
def _pinv_penrose(rng):
    worst = 0.0
    for _ in range(20):
        r = rng.integers(1, 5)
        M = rng.standard_normal((rng.integers(r, 9), r)) @ rng.standard_normal((r, rng.integers(r, 9)))
        P = numerics.pinv(M)
        worst = max(worst, _rel(M @ P @ M, M, np.linalg.norm(M)),
                    _rel(P @ M @ P, P, np.linalg.norm(P)),
                    _rel(M @ P, (M @ P).T, 1.0), _rel(P @ M, (P @ M).T, 1.0))
    return _res("numerics.pinv_penrose", worst, "pinv_penrose")


@check("numerics.psd_roots")
def _psd_roots(rng):
    worst = 0.0
    for _ in range(20):
        d = rng.integers(1, 8)
        G = rng.standard_normal((d, rng.integers(1, 2 * d + 1)))
        S = G @ G.T
        Wi = numerics.inv_sqrt_psd(S)
        R = numerics.sqrt_psd(S)
        P = numerics.range_projector(S)
        worst = max(worst, _rel(R @ R, S, np.linalg.norm(S)), _rel(R @ Wi, P, 1.0))
    return _res("numerics.psd_roots", worst, "psd_roots")


@check("numerics.gen_eig_orthonormal")
def _gen_eig(rng):
    worst = 0.0
    for _ in range(20):
        d = rng.integers(1, 7)
        G = rng.standard_normal((d, 3 * d))
        Bm = G @ G.T / (3 * d)
        H = rng.standard_normal((d, d))
        A = H @ H.T
        pairs = numerics.gen_eig_pairs(A, Bm)
        X = np.column_stack([v for _, v in pairs])
        mu = np.array([m for m, _ in pairs])
        worst = max(worst, _rel(X.T @ Bm @ X, np.eye(len(pairs)), 1.0),
                    _rel(A @ X, Bm @ X * mu, np.linalg.norm(A @ X)))
    return _res("numerics.gen_eig_orthonormal", worst, "gen_eig_orthonormal")


@check("kernels.adjoint")
def _kernel_adjoint(rng):
    worst = 0.0
    for _ in range(10):
        n, C, H = rng.integers(1, 3), rng.integers(1, 4), rng.integers(3, 7)
        d = int(rng.choice([1, 3]))
        pad = int(rng.integers(0, 2))
        x = rng.standard_normal((n, C, H, H))
        cols = kernels.im2col(x, d, pad)
        y = rng.standard_normal(cols.shape)
        lhs = np.sum(cols * y)
        rhs = np.sum(x * kernels.col2im(y, x.shape, d, pad))
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1.0))
    return _res("kernels.adjoint", worst, "kernel_adjoint")


@check("kernels.backends_agree")
def _kernel_backends(rng):
    worst = 0.0
    for _ in range(10):
        x = rng.standard_normal((2, 3, 6, 5))
        d, pad = int(rng.choice([1, 2, 3])), int(rng.integers(0, 2))
        a = kernels.im2col(x, d, pad)
        worst = max(worst, float(np.max(np.abs(a - py_im2col(x, d, pad)))))
        y = rng.standard_normal(a.shape)
        b = kernels.col2im(y, x.shape, d, pad)
        worst = max(worst, float(np.max(np.abs(b - py_col2im(y, x.shape, d, pad)))))
    return _res("kernels.backends_agree", worst, "kernel_backends", worst <= 1e-12,
                notes=f"backend={kernels.BACKEND}")


# ---------------------------------------------------------------- net_core


@check("net_core.fd_linear_exact")
def _fd_linear(rng):
    net = mlp([3, 4, 2], "identity", rng=rng)
    X, Y = rng.standard_normal((3, 5)), rng.standard_normal((2, 5))
    ref = fd_goals(net, X, Y, "square", 1e-3)
    got = loss_and_goals(net, X, Y, "square")
    worst = max(_rel(got.V[l], ref.V[l], np.linalg.norm(ref.V[l])) for l in (1, 2))
    return _res("net_core.fd_linear_exact", worst, "fd_linear")


@check("net_core.function_preserving_insert")
def _insert_preserves(rng):
    worst = 0.0
    net = mlp([3, 4, 2], "selu", rng=rng)
    X = rng.standard_normal((3, 7))
    grown = gr.insert_neurons(net, 0, rng.standard_normal((4, 2)), np.zeros((2, 2)))
    worst = max(worst, float(np.max(np.abs(forward(grown, X) - forward(net, X)))))
    cnet = _small_conv_net(rng, "relu", 2)
    Xc = rng.standard_normal((cnet.input_dim, 3))
    g2 = gr.insert_neurons(cnet, 0, rng.standard_normal((9, 1)), np.zeros((27, 1)))
    worst = max(worst, float(np.max(np.abs(forward(g2, Xc) - forward(cnet, Xc)))))
    return _res("net_core.function_preserving_insert", worst, "insert_preserves")


# ---------------------------------------------------------------- bottleneck


@check("bottleneck.residual_orthogonality")
def _residual_orth(rng):
    worst = 0.0
    for _ in range(20):
        B = _with_ones(rng.standard_normal((rng.integers(1, 10), rng.integers(2, 30))))
        V = rng.standard_normal((rng.integers(1, 5), B.shape[1]))
        R = bn.project_goal(V, bn.best_update(B, V), B)
        worst = max(worst, float(np.linalg.norm(R @ B.T)) / (np.linalg.norm(V) * np.linalg.norm(B)))
    return _res("bottleneck.residual_orthogonality", worst, "residual_orthogonality")


# ---------------------------------------------------------------- growth


@check("growth.normalization_targets")
def _normalization(rng):
    p = gr.propose_random(5, 3, 2, seed=rng)
    p = gr.GrowthProposal(0, "tiny", p.alpha * 7.0, p.omega * 0.1, np.ones(2),
                          rng.standard_normal((3, 4)))
    worst = 0.0
    q = gr.normalize_proposal(p, "tiny_sqrt")
    for M in (q.alpha, q.omega):
        worst = max(worst, abs(np.sum(M * M) / 2 - gr.NORM_TARGET))
    q = gr.normalize_proposal(p, "gradmax_linear")
    worst = max(worst, abs(math.sqrt(np.sum(q.omega ** 2) / 2) - gr.NORM_TARGET), float(np.abs(q.alpha).max()))
    q = gr.normalize_proposal(p, "unit_then_gamma")
    worst = max(worst, abs(np.sum(q.alpha ** 2) / 2 - 1), abs(np.sum(q.omega ** 2) / 2 - 1),
                abs(np.sum(q.delta_W_star ** 2) / 3 - 1))
    return _res("growth.normalization_targets", worst, "normalization")


@check("growth.line_search_never_worse")
def _line_search(rng):
    worst = -math.inf
    for _ in range(5):
        net = mlp([2, 3, 1], "selu", rng=rng)
        X, Y = rng.standard_normal((2, 20)), rng.standard_normal((1, 20))
        for p in (gr.propose_tiny(net, X, Y, 0, max_K=1), gr.random_for_position(net, 0, 1, seed=rng)):
            g = gr.amplitude_factor(net, p, X, Y)
            before = gr.batch_loss(net, X, Y, "square")
            after = gr.batch_loss(gr.apply_proposal(net, p, g), X, Y, "square")
            worst = max(worst, after - before)
    return _res("growth.line_search_never_worse", worst, "line_search_monotone")


# ---------------------------------------------------------------- acceptance


def _fc_instance(rng, max_dim: int = 32, max_n: int = 128):
    n = int(rng.integers(2, max_n + 1))
    B2 = _with_ones(rng.standard_normal((rng.integers(1, max_dim), n)))
    B1 = _with_ones(rng.standard_normal((rng.integers(1, max_dim), n)))
    V = rng.standard_normal((rng.integers(1, max_dim + 1), n))
    return B2, B1, V


@check("criterion_01_fc_exactness")
def _c1(rng):
    t0 = time.perf_counter()
    worst_pred = worst_oracle = 0.0
    for _ in range(100):
        B2, B1, V = _fc_instance(rng)
        n = V.shape[1]
        Vp = bn.project_goal(V, bn.best_update(B1, V), B1)
        psi = float(np.sum(Vp * Vp) / n)
        stats = bn.stats_fc(B2, Vp)
        ns = bn.optimal_neurons(stats, int(rng.integers(1, 9)))
        R = Vp - ns.omega @ ns.alpha.T @ B2
        achieved = float(np.sum(R * R) / n)
        predicted = psi - float(np.sum(ns.lambdas ** 2))
        # Eckart-Young on the goal expressed in an orthonormal basis of B2's row space
        _, s, Wt = np.linalg.svd(B2, full_matrices=False)
        Wr = Wt[s > s[0] * 1e-12].T
        T = Vp @ Wr / math.sqrt(n)
        oracle = psi - float(np.sum(T * T)) + oracle_rank_k(T, ns.count)
        scale = max(psi, 1e-300)
        worst_pred = max(worst_pred, abs(achieved - predicted) / scale)
        worst_oracle = max(worst_oracle, abs(achieved - oracle) / scale)
    elapsed = time.perf_counter() - t0
    worst = max(worst_pred, worst_oracle)
    ok = worst <= TOLERANCES["fc_exactness"] and elapsed < TOLERANCES["fc_runtime_s"]
    return _res("criterion_01_fc_exactness", worst, "fc_exactness", ok,
                f"formula={worst_pred:.2e} oracle={worst_oracle:.2e} time={elapsed:.2f}s")


@check("criterion_02_best_update_optimal")
def _c2(rng):
    worst_oracle = 0.0
    worst_gap = math.inf
    for _ in range(100):
        _, B, V = _fc_instance(rng)
        n = V.shape[1]
        dW = bn.best_update(B, V)

        def obj(M):
            R = M @ B - V
            return float(np.sum(R * R) / n)

        best = obj(dW)
        ref = oracle_least_squares(B, V)
        worst_oracle = max(worst_oracle, abs(best - ref) / max(float(np.sum(V * V) / n), 1e-300))
        scale = np.linalg.norm(dW) + 1.0
        for _ in range(100):
            cand = dW + 10.0 ** rng.uniform(-6, 0) * scale * rng.standard_normal(dW.shape)
            worst_gap = min(worst_gap, obj(cand) - best)
    ok = worst_oracle <= TOLERANCES["best_update_oracle"] and worst_gap >= -TOLERANCES["best_update_perturbed"]
    return _res("criterion_02_best_update_optimal", worst_oracle, "best_update_oracle", ok,
                f"min candidate excess={worst_gap:.2e}")


@check("criterion_03_geneig_cross_path")
def _c3(rng):
    worst_c = worst_v = 0.0
    fallbacks = 0
    for _ in range(30):
        d = int(rng.integers(1, 10))
        n = int(rng.integers(3 * d + 3, 6 * d + 10))
        B = _with_ones(rng.standard_normal((d, n)))
        V = rng.standard_normal((int(rng.integers(1, 8)), n))
        stats = bn.stats_fc(B, V)
        a = bn.optimal_neurons(stats)
        b = bn.optimal_neurons_geneig(stats)
        fallbacks += b.fallback
        mus = np.array([m for m, _ in numerics.gen_eig_pairs(stats.N @ stats.N.T, stats.S)])[:a.count]
        top = a.lambdas[0] ** 2
        worst_v = max(worst_v, float(np.max(np.abs(mus - a.lambdas ** 2))) / top)
        for k in range(min(a.count, b.count)):
            ca = np.outer(a.omega[:, k], a.alpha[:, k])
            cb = np.outer(b.omega[:, k], b.alpha[:, k])
            worst_c = max(worst_c, _rel(ca, cb, np.linalg.norm(ca)))
        if a.count != b.count:
            worst_c = math.inf
    ok = worst_c <= TOLERANCES["geneig_contribution"] and worst_v <= TOLERANCES["geneig_values"] and not fallbacks
    return _res("criterion_03_geneig_cross_path", worst_c, "geneig_contribution", ok,
                f"eigenvalue err={worst_v:.2e} fallbacks={fallbacks}")


def _small_conv_net(rng, act: str, classes: int = 3, softmax: bool = False) -> Network:
    layers = [
        Conv2d(rng.standard_normal((2, 1, 3, 3)) * 0.5, rng.standard_normal(2) * 0.1, 1),
        Activation(act),
        Conv2d(rng.standard_normal((3, 2, 3, 3)) * 0.4, rng.standard_normal(3) * 0.1, 1),
        Activation(act),
        AvgPool2d(2),
        Flatten(),
        Dense(rng.standard_normal((classes, 3 * 2 * 2 + 1)) * 0.5),
    ]
    if softmax:
        layers.append(Activation("softmax"))
    return Network(layers, (1, 4, 4))


def _fd_case(rng, i: int):
    kinds = ["selu", "relu", "tanh", "ce", "conv_selu", "conv_relu", "conv_ce"]
    kind = kinds[i % len(kinds)]
    n = 3
    if kind.startswith("conv"):
        act = "relu" if kind == "conv_relu" else "selu"
        ce = kind == "conv_ce"
        net = _small_conv_net(rng, act, 3, ce)
    else:
        ce = kind == "ce"
        net = mlp([3, 4, 3, 3], "selu" if ce else kind, "softmax" if ce else "identity", rng)
        for layer in net.layers:
            if isinstance(layer, Dense):
                layer.W[:, -1] = 0.1 * rng.standard_normal(layer.W.shape[0])
    X = rng.standard_normal((net.input_dim, n))
    if ce:
        Y = np.eye(3)[:, rng.integers(0, 3, n)]
    else:
        Y = rng.standard_normal((3, n))
    return kind, net, X, Y, "cross_entropy" if ce else "square"


@check("criterion_04_goal_finite_differences")
def _c4(rng):
    worst, where = 0.0, ""
    for i in range(20):
        kind, net, X, Y, loss = _fd_case(rng, i)
        got = loss_and_goals(net, X, Y, loss)
        ref = fd_goals(net, X, Y, loss, 1e-5)
        for l in range(1, net.depth + 1):
            err = _rel(got.V[l], ref.V[l], np.linalg.norm(ref.V[l]))
            if err > worst:
                worst, where = err, f"{kind} layer {l}"
    return _res("criterion_04_goal_finite_differences", worst, "fd_goals", notes=f"worst at {where}")


@check("criterion_05_first_order_slope")
def _c5(rng):
    worst = 0.0
    for _ in range(10):
        net = mlp([3, 4, 2], "tanh", rng=rng)
        X, Y = rng.standard_normal((3, 20)), rng.standard_normal((2, 20))
        L0 = gr.batch_loss(net, X, Y, "square")

        def quotient(g):
            # neurons estimated from V_goal minus the part the scaled update already covers
            p = gr.propose_tiny(net, X, Y, 0, projection=g)
            return (gr.batch_loss(gr.apply_proposal(net, p, g), X, Y, "square") - L0) / g

        q1, q2 = quotient(5e-4), quotient(2.5e-4)
        measured = 2.0 * q2 - q1
        predicted = gr.predicted_slope(net, gr.propose_tiny(net, X, Y, 0, projection=0.0))
        worst = max(worst, abs(measured - predicted) / abs(predicted))
    return _res("criterion_05_first_order_slope", worst, "slope_relative")


@check("criterion_06_sequential_vs_simultaneous")
def _c6(rng):
    worst = math.inf
    for _ in range(10):
        net = mlp([4, 3, 3], "tanh", rng=rng)
        X, Y = rng.standard_normal((4, 30)), rng.standard_normal((3, 30))

        def discrepancy(g):
            both = gr.propose_tiny(net, X, Y, 0, max_K=2)
            sim = gr.batch_loss(gr.apply_addition(net, 0, both, g, "linear"), X, Y, "square")
            one = gr.apply_addition(net, 0, gr.propose_tiny(net, X, Y, 0, max_K=1), g, "linear")
            two = gr.apply_addition(one, 0, gr.propose_tiny(one, X, Y, 0, max_K=1), g, "linear")
            return abs(sim - gr.batch_loss(two, X, Y, "square"))

        d = [discrepancy(g) for g in (1e-1, 5e-2, 2.5e-2)]
        worst = min(worst, d[0] / d[1], d[1] / d[2])
    return _res("criterion_06_sequential_vs_simultaneous", worst, "halving_factor",
                worst >= TOLERANCES["halving_factor"], "minimum halving ratio, linear amplitude")


def _conv_instance(rng):
    while True:
        n, C, H = int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(3, 7))
        d, d2 = int(rng.choice([1, 3])), int(rng.choice([1, 3]))
        p = int(rng.integers(0, 2)) if d == 3 else 0
        p2 = int(rng.integers(0, 2)) if d2 == 3 else 0
        if H + 2 * p - d + 1 + 2 * p2 - d2 + 1 >= 1:
            return n, C, H, d, p, d2, p2, int(rng.integers(1, 3))


@check("criterion_07_conv_bound")
def _c7(rng):
    worst_bound = -math.inf
    worst_resid = -math.inf
    for _ in range(30):
        n, C, H, d, p, d2, p2, M = _conv_instance(rng)
        B = rng.standard_normal((n, C, H, H))
        U = unfold_conv(B, d, p, d2, p2)
        V = rng.standard_normal((n, M) + U.out_hw)
        stats = bn.stats_conv(U, V)
        base = float(np.sum(V * V) / n)
        opt = bn.optimal_neurons(stats)
        K = int(rng.integers(1, 3))
        pairs = [(rng.standard_normal((C * d * d, K)), rng.standard_normal((M * d2 * d2, K)))]
        if opt.count:
            pairs.append((opt.alpha, opt.omega))
        for k, (A, Om) in enumerate(pairs):
            first = Conv2d(A.T.reshape(-1, C, d, d), np.zeros(A.shape[1]), p)
            second = Conv2d(Om.T.reshape(-1, M, d2, d2).transpose(1, 0, 2, 3), np.zeros(M), p2)
            E = conv_forward(second, conv_forward(first, B))
            lhs = float(np.sum((E - V) ** 2) / n)
            Z = A @ Om.T
            rhs = float(np.sum(Z * (stats.S @ Z)) - 2.0 * np.sum(Z * stats.N)) + base
            worst_bound = max(worst_bound, lhs - rhs)
            if k == 1:
                worst_resid = max(worst_resid, lhs - base)
    ok = worst_bound <= TOLERANCES["conv_bound"] and worst_resid <= TOLERANCES["conv_residual"]
    return _res("criterion_07_conv_bound", worst_bound, "conv_bound", ok,
                f"max residual increase={worst_resid:.2e}")


def regression_config():
    from .harness.config import ExperimentConfig

    return ExperimentConfig(
        data_kind="regression", data_params={"n": 4, "grid": True, "test_fraction": 0},
        hidden=(1,), activation="tanh", grower="tiny", line_search=True, bound=4.0,
        delta_t=1, max_additions=20, target_train_loss=1e-4, lr=1e-4, name="regression4")


@check("criterion_08_regression_growth")
def _c8(rng):
    from .harness.experiment import run_growth_experiment

    t0 = time.perf_counter()
    res = run_growth_experiment(regression_config(), seed=0, write=False)
    elapsed = time.perf_counter() - t0
    recs = res.records
    grows = [i for i, r in enumerate(recs) if r.event == "grow"]
    rise = max((recs[i].train_loss - recs[i - 1].train_loss for i in grows), default=0.0)
    final = recs[-1].train_loss
    ok = (final < TOLERANCES["regression_mse"] and len(grows) <= TOLERANCES["regression_additions"]
          and rise <= 0.0 and elapsed < TOLERANCES["regression_runtime_s"])
    return _res("criterion_08_regression_growth", final, "regression_mse", ok,
                f"additions={len(grows)} max rise at addition={rise:.2e} time={elapsed:.2f}s")


@check("criterion_09_overfit_construction")
def _c9(rng):
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(2, 65))
        X = rng.standard_normal((2, n))
        Y = rng.standard_normal((1, n))
        out = gr.overfit_construct(X, Y, seed=int(rng.integers(1 << 31)))
        if out.network.width(0) != n:
            return _res("criterion_09_overfit_construction", math.inf, "overfit_loss", False,
                        f"{out.network.width(0)} neurons for {n} samples")
        worst = max(worst, float(np.mean((forward(out.network, X) - Y) ** 2)))
    return _res("criterion_09_overfit_construction", worst, "overfit_loss")


def redundancy_instance():
    """Four samples and three hidden units: every goal lies in the layer's row space."""
    X = np.array([[0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi]])
    W1 = np.array([[1.0, 0.0], [-0.5, 1.0], [0.3, -1.0]])
    W2 = np.array([[0.2, -0.1, 0.4, 0.0]])
    net = Network([Dense(W1), Activation("tanh"), Dense(W2)], (1,))
    Y = 2.0 * np.sin(X) + X
    return net, X, Y


@check("criterion_10_redundancy_instance")
def _c10(rng):
    net, X, Y = redundancy_instance()
    tiny = gr.propose_tiny(net, X, Y, 0)
    gm = gr.propose_gradmax(net, X, Y, 0)
    tiny_gain = float(np.sum(tiny.lambdas ** 2))
    top = float(gm.lambdas[0]) if gm.count else 0.0
    ok = tiny_gain < TOLERANCES["redundancy_tiny"] and top > TOLERANCES["redundancy_gradmax"]
    return _res("criterion_10_redundancy_instance", tiny_gain, "redundancy_tiny", ok,
                f"gradmax top singular value={top:.3f}")


@check("criterion_11_random_direction_std")
def _c11(rng):
    worst = 0.0
    parts = []
    for n, d in ((10, 64), (10, 512)):
        vals = gr.random_direction_statistic(n, d, 2000, seed=int(rng.integers(1 << 31)))
        expected = 1.0 / math.sqrt(n * d)
        err = abs(float(np.std(vals)) - expected) / expected
        parts.append(f"({n},{d}):{err:.3f}")
        worst = max(worst, err)
    return _res("criterion_11_random_direction_std", worst, "random_std", notes=" ".join(parts))


def blobs_config(grower: str):
    from .harness.config import ExperimentConfig

    return ExperimentConfig(
        data_kind="blobs", data_params={"n_train": 1000, "n_test": 250, "classes": 2, "dim": 2, "seed": 0},
        hidden=(1, 1), activation="selu", grower=grower,
        normalization="gradmax_sqrt" if grower == "gradmax" else "none",
        target_widths=(8, 8), max_additions=20, lr=0.05, initial_epochs=1, name=f"blobs-{grower}")


@check("criterion_12_blobs_desk_run")
def _c12(rng):
    from .harness.experiment import COLUMNS, records_to_csv, run_growth_experiment

    t0 = time.perf_counter()
    main = run_growth_experiment(blobs_config("completed_tiny"), seed=0, write=False)
    elapsed = time.perf_counter() - t0
    acc = main.records[-1].test_acc
    headers = []
    for g in ("gradmax", "random"):
        other = run_growth_experiment(blobs_config(g), seed=0, write=False)
        headers.append(records_to_csv(other.records).splitlines()[0] == ",".join(COLUMNS))
        headers.append(any(r.event == "grow" for r in other.records))
    ok = acc >= TOLERANCES["blobs_accuracy"] and elapsed < TOLERANCES["blobs_runtime_s"] and all(headers)
    return _res("criterion_12_blobs_desk_run", acc, "blobs_accuracy", ok,
                f"time={elapsed:.2f}s baselines ok={all(headers)}")


@check("criterion_13_schedules")
def _c13(rng):
    from .harness.checkpoint import from_bytes, to_bytes
    from .harness.experiment import records_to_csv, run_growth_experiment

    errs = []
    if gr.learning_batch_size(32, 1.0, 4.0) != 64:
        errs.append("learning batch")
    if gr.estimation_batch_size(9, 16, 1024, coeff=1.0, conv_boost=True) != 41:
        errs.append("estimation batch")
    net = _small_conv_net(rng, "selu")
    X = rng.standard_normal((net.input_dim, 4))
    if not np.array_equal(forward(from_bytes(to_bytes(net)), X), forward(net, X)):
        errs.append("checkpoint")
    cfg = regression_config()
    a = records_to_csv(run_growth_experiment(cfg, seed=3, write=False).records)
    b = records_to_csv(run_growth_experiment(cfg, seed=3, write=False).records)
    if a != b:
        errs.append("csv determinism")
    return _res("criterion_13_schedules", len(errs), "schedules", not errs, ",".join(errs))


# --------------------------------------------------------------------------
# runner
# --------------------------------------------------------------------------


def run_check(name: str, seed: int = 0) -> CheckResult:
    fn = CHECKS[name]
    # each check gets its own stream so filtering does not change results
    rng = np.random.default_rng([seed, list(CHECKS).index(name)])
    try:
        return fn(rng)
    except Exception as exc:  # a crashing check is a failing check
        return CheckResult(name, False, math.nan, math.nan, f"{type(exc).__name__}: {exc}")


def run_invariant_suite(seed: int = 0, filter: str | None = None) -> VerificationReport:
    """Run every registered check (or those whose name contains ``filter``)."""
    t0 = time.perf_counter()
    report = VerificationReport(seed)
    for name in CHECKS:
        if filter and filter not in name:
            continue
        report.results.append(run_check(name, seed))
    report.elapsed = time.perf_counter() - t0
    return report
