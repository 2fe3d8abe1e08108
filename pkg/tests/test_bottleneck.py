import warnings

import numpy as np
import pytest

from netgrow import bottleneck as bn
from netgrow import numerics
from netgrow.errors import ShapeError
from netgrow.net_core import unfold_conv
from netgrow.verify import oracle_least_squares, oracle_rank_k


def fc_instance(rng, d_in=4, d_b=5, d_out=3, n=12):
    B0 = np.vstack([rng.standard_normal((d_in, n)), np.ones((1, n))])
    B1 = np.vstack([rng.standard_normal((d_b, n)), np.ones((1, n))])
    V = rng.standard_normal((d_out, n))
    return B0, B1, V


def objective(dW, B, V):
    R = dW @ B - V
    return np.sum(R * R) / V.shape[1]


# ------------------------------------------------------------- best update


def test_best_update_identity_design():
    V = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_allclose(bn.best_update(np.eye(2), V), V, atol=1e-12)


def test_best_update_consistent_system(rng):
    B = rng.standard_normal((4, 20))
    M0 = rng.standard_normal((3, 4))
    np.testing.assert_allclose(bn.best_update(B, M0 @ B), M0, atol=1e-10)
    assert np.abs(bn.project_goal(M0 @ B, bn.best_update(B, M0 @ B), B)).max() < 1e-10


def test_best_update_orthogonal_goal():
    dW = bn.best_update(np.array([[1.0, 1.0], [0.0, 0.0]]), np.array([[1.0, -1.0]]))
    np.testing.assert_allclose(dW, [[0.0, 0.0]], atol=1e-15)


def test_best_update_beats_perturbations(rng):
    _, B, V = fc_instance(rng)
    dW = bn.best_update(B, V)
    best = objective(dW, B, V)
    for _ in range(100):
        assert best <= objective(dW + 1e-3 * rng.standard_normal(dW.shape), B, V)


def test_best_update_minimum_norm_when_degenerate(rng):
    B = rng.standard_normal((2, 10))
    B = np.vstack([B, B[:1]])  # duplicated feature row
    V = rng.standard_normal((1, 10))
    dW = bn.best_update(B, V)
    np.testing.assert_allclose(dW, V @ np.linalg.pinv(B), atol=1e-10)


def test_best_update_shape_errors():
    with pytest.raises(ShapeError):
        bn.best_update(np.ones((2, 3)), np.ones((1, 4)))
    with pytest.raises(ShapeError):
        bn.best_update(np.ones((2, 0)), np.ones((1, 0)))


def test_projection_zero_update_is_identity(rng):
    V = rng.standard_normal((2, 5))
    np.testing.assert_array_equal(bn.project_goal(V, np.zeros((2, 3)), rng.standard_normal((3, 5))), V)


def test_projection_orthogonal_to_features(rng):
    _, B, V = fc_instance(rng)
    R = bn.project_goal(V, bn.best_update(B, V), B)
    assert np.linalg.norm(R @ B.T) <= 1e-8 * np.linalg.norm(V) * np.linalg.norm(B)


# ------------------------------------------------------------- statistics


def test_stats_fc_scalar():
    s = bn.stats_fc(np.array([[1.0]]), np.array([[2.0]]))
    assert s.S[0, 0] == 1.0 and s.N[0, 0] == 2.0


def test_stats_fc_direct_sum(rng):
    B = rng.standard_normal((3, 7))
    V = rng.standard_normal((2, 7))
    s = bn.stats_fc(B, V)
    np.testing.assert_allclose(s.S, sum(np.outer(b, b) for b in B.T) / 7, atol=1e-14)
    np.testing.assert_allclose(s.N, sum(np.outer(b, v) for b, v in zip(B.T, V.T)) / 7, atol=1e-14)
    assert np.linalg.eigvalsh(s.S).min() >= -1e-14
    assert not bn.stats_fc(B, np.zeros((2, 7))).N.any()


def test_stats_conv_collapses_to_fc(rng):
    n, C, M = 6, 3, 2
    B = rng.standard_normal((n, C, 1, 1))
    V = rng.standard_normal((n, M, 1, 1))
    s = bn.stats_conv(unfold_conv(B, 1, 0, 1, 0), V)
    ref = bn.stats_fc(B.reshape(n, C).T, V.reshape(n, M).T)
    assert s.r == 1
    np.testing.assert_allclose(s.S, ref.S, atol=1e-14)
    np.testing.assert_allclose(s.N, ref.N, atol=1e-14)


def test_stats_conv_brute_force(rng):
    n, C, H, d, d2, M = 2, 2, 5, 3, 3, 2
    B = rng.standard_normal((n, C, H, H))
    U = unfold_conv(B, d, 1, d2, 0)
    H2 = U.out_hw[0]
    V = rng.standard_normal((n, M, H2, H2))
    for mode in ("min", "max"):
        s = bn.stats_conv(U, V, mode)
        q, c = d2 * d2, C * d * d
        r = min(q, c) if mode == "min" else max(q, c)
        S = np.zeros((c, c))
        N = np.zeros((c, M * q))
        for i in range(n):
            for j in range(H2 * H2):
                T = U.Bt[i, j]
                S += T.T @ T
                for m in range(M):
                    N[:, m * q:(m + 1) * q] += V[i, m].reshape(-1)[j] * T.T
        np.testing.assert_allclose(s.S, r * S / n, atol=1e-10)
        np.testing.assert_allclose(s.N, N / n, atol=1e-10)
    assert not bn.stats_conv(U, np.zeros_like(V)).N.any()


def test_stats_conv_rejects_bad_geometry(rng):
    U = unfold_conv(rng.standard_normal((2, 1, 4, 4)), 3, 1, 3, 1)
    with pytest.raises(ShapeError):
        bn.stats_conv(U, np.zeros((2, 1, 3, 3)))


# ------------------------------------------------------------- neurons


def test_no_neurons_without_correlation():
    ns = bn.optimal_neurons(bn.LayerStats(np.eye(3), np.zeros((3, 2)), 5))
    assert ns.count == 0 and ns.alpha.shape == (3, 0) and ns.omega.shape == (2, 0)


def test_scalar_neuron():
    B, V = np.array([[1.0]]), np.array([[2.0]])
    ns = bn.optimal_neurons(bn.stats_fc(B, V))
    np.testing.assert_allclose(ns.lambdas, [2.0])
    assert np.isclose(abs(ns.alpha[0, 0]), np.sqrt(2)) and np.isclose(abs(ns.omega[0, 0]), np.sqrt(2))
    np.testing.assert_allclose(ns.omega @ ns.alpha.T @ B, V)
    assert bn.first_order_gains(ns.lambdas, V, None, B)[0] == pytest.approx(4.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ge = bn.optimal_neurons_geneig(bn.stats_fc(B, V))
    np.testing.assert_allclose(ge.lambdas ** 2, [4.0])


def test_fc_exactness_against_oracle(rng):
    B0, _, V = fc_instance(rng, n=15)
    ns = bn.optimal_neurons(bn.stats_fc(B0, V))
    R = ns.contribution_factor() @ B0 - V
    lhs = np.sum(R * R) / 15
    rhs = np.sum(V * V) / 15 - np.sum(ns.lambdas ** 2)
    assert abs(lhs - rhs) <= 1e-8 * np.sum(V * V) / 15
    # the best rank-K map in the whitened space gives the same residual
    assert np.isclose(lhs, oracle_least_squares(B0, V), atol=1e-8)


@pytest.mark.parametrize("K", [1, 2])
def test_truncated_neurons_match_rank_k_oracle(rng, K):
    B0, _, V = fc_instance(rng, n=15)
    stats = bn.stats_fc(B0, V)
    ns = bn.optimal_neurons(stats, K)
    target = numerics.inv_sqrt_psd(stats.S) @ stats.N
    explained = np.sum(target ** 2) - oracle_rank_k(target, K)
    assert np.isclose(np.sum(ns.lambdas ** 2), explained, rtol=1e-10)


def test_neuron_contributions_orthogonal(rng):
    B0, _, V = fc_instance(rng, n=20)
    ns = bn.optimal_neurons(bn.stats_fc(B0, V))
    parts = [np.outer(ns.omega[:, k], ns.alpha[:, k]) @ B0 for k in range(ns.count)]
    scale = np.sum(V * V)
    for k in range(ns.count):
        for j in range(k):
            assert abs(np.sum(parts[k] * parts[j])) <= 1e-8 * scale


def test_scalar_product_value(rng):
    B0, _, V = fc_instance(rng, n=20)
    ns = bn.optimal_neurons(bn.stats_fc(B0, V))
    inner = np.sum(V * (ns.contribution_factor() @ B0)) / 20
    assert np.isclose(inner, np.sum(ns.lambdas ** 2), rtol=1e-8)


def test_local_invertibility_rank_deficient(rng):
    B = rng.standard_normal((2, 30))
    B = np.vstack([B, B[0] + B[1], np.zeros(30)])
    V = rng.standard_normal((3, 30))
    S = B @ B.T / 30
    BV = B @ V.T
    np.testing.assert_allclose(numerics.sqrt_psd(S) @ numerics.inv_sqrt_psd(S) @ BV, BV, atol=1e-8)


def test_geneig_identity_reduces_to_eigenproblem(rng):
    N = rng.standard_normal((4, 3))
    ge = bn.optimal_neurons_geneig(bn.LayerStats(np.eye(4), N, 10))
    np.testing.assert_allclose(ge.lambdas ** 2, np.linalg.eigvalsh(N @ N.T)[::-1][:ge.count], rtol=1e-10)


def test_geneig_matches_svd_route(rng):
    A = rng.standard_normal((4, 4))
    S = A @ A.T + 0.5 * np.eye(4)
    stats = bn.LayerStats(S, rng.standard_normal((4, 3)), 10)
    a, b = bn.optimal_neurons(stats), bn.optimal_neurons_geneig(stats)
    assert a.count == b.count == 3 and not b.fallback
    for k in range(3):
        np.testing.assert_allclose(np.outer(b.omega[:, k], b.alpha[:, k]),
                                   np.outer(a.omega[:, k], a.alpha[:, k]), atol=1e-7)


def test_geneig_singular_falls_back():
    stats = bn.LayerStats(np.diag([1.0, 0.0]), np.array([[1.0], [0.0]]), 3)
    with pytest.warns(RuntimeWarning):
        out = bn.optimal_neurons_geneig(stats)
    assert out.fallback and out.count == 1


def test_significance_rule():
    assert bn.significant_count(np.array([2.0, 1.0, 1e-9])) == 2
    assert bn.significant_count(np.array([])) == 0
    assert bn.significant_count(np.array([1e-13])) == 0


# ------------------------------------------------------------- bottleneck and gains


def test_bottleneck_value_examples(rng):
    assert bn.bottleneck_value(np.zeros((1, 2)), np.eye(2)) == 0.0
    V = np.array([[1.0, -1.0]])
    assert np.isclose(bn.bottleneck_value(V, np.array([[1.0, 1.0], [0.0, 0.0]])), 1.0)
    for _ in range(20):
        _, B, V = fc_instance(rng)
        psi = bn.bottleneck_value(V, B)
        assert 0.0 <= psi <= np.sum(V * V) / V.shape[1] + 1e-12
        assert np.isclose(psi, oracle_least_squares(B, V), rtol=1e-9)


def test_first_order_gains(rng):
    assert bn.first_order_gains(np.array([]), np.ones((1, 3)), np.zeros((1, 2)), np.ones((2, 3))) == (0.0, 0.0)
    _, B, V = fc_instance(rng)
    dW = bn.best_update(B, V)
    _, g = bn.first_order_gains(np.array([]), V, dW, B)
    P = dW @ B
    assert np.isclose(g, np.sum(P * P) / V.shape[1], rtol=1e-8)


def test_equal_norm_inner_product_problem(rng):
    # minimising ||D - HB|| and maximising <D, HB> under ||HB||^2 <= c agree
    B = rng.standard_normal((3, 12))
    D = rng.standard_normal((2, 12))
    H_star = bn.best_update(B, D)
    HB = H_star @ B
    c = np.sum(HB * HB)
    # the constrained maximiser is the projection of D onto the row space of B, rescaled to norm sqrt(c)
    P = D @ np.linalg.pinv(B) @ B
    np.testing.assert_allclose(P * np.sqrt(c / np.sum(P * P)), HB, atol=1e-8)
    for _ in range(50):
        H = rng.standard_normal(H_star.shape)
        G = H @ B
        G *= np.sqrt(c / np.sum(G * G))
        assert np.sum(D * G) <= np.sum(D * HB) + 1e-10
