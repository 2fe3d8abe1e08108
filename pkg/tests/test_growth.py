import math

import numpy as np
import pytest

from netgrow import growth as gr
from netgrow.errors import DomainError, ShapeError
from netgrow.net_core import (
    Activation, Dense, Network, batch_loss, forward, loss_and_goals, mlp, param_count,
)
from netgrow.verify import _small_conv_net, redundancy_instance


def richardson(f, h):
    return 2.0 * (f(h / 2) - f(0.0)) / (h / 2) - (f(h) - f(0.0)) / h


def regression_net():
    X = np.array([[0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi]])
    Y = 2.0 * np.sin(X) + X
    # one tanh unit plus a direct path approximating f(x) = x
    W1 = np.array([[0.01, 0.0]])
    W2 = np.array([[100.0, 0.0]])
    return Network([Dense(W1), Activation("tanh"), Dense(W2)], (1,)), X, Y


# ------------------------------------------------------------- proposals


def test_perfect_fit_gives_empty_proposal(rng):
    net = mlp([2, 3, 1], "selu", rng=rng)
    X = rng.standard_normal((2, 6))
    Y = forward(net, X)
    assert gr.propose_tiny(net, X, Y, 0).empty
    assert gr.propose_gradmax(net, X, Y, 0).empty


def test_regression_example_has_bottleneck():
    net, X, Y = regression_net()
    p = gr.propose_tiny(net, X, Y, 0)
    assert not p.empty and p.lambdas[0] > 0
    assert p.gains[0] == pytest.approx(float(np.sum(p.lambdas ** 2)))


def test_redundancy_instance_separates_growers():
    net, X, Y = redundancy_instance()
    tiny = gr.propose_tiny(net, X, Y, 0)
    gm = gr.propose_gradmax(net, X, Y, 0)
    assert float(np.sum(tiny.lambdas ** 2)) < 1e-10
    assert gm.lambdas[0] > 0.1


def test_gradmax_rank_one_fanout(rng):
    net = mlp([3, 2, 2], "selu", rng=rng)
    X = np.zeros((3, 5))
    Y = rng.standard_normal((2, 5))
    p = gr.propose_gradmax(net, X, Y, 0)
    assert p.count == 1 and not p.alpha.any()
    v = loss_and_goals(net, X, Y).V[2].sum(axis=1)
    assert abs(abs(p.omega[:, 0] @ v) - np.linalg.norm(v)) < 1e-10


def test_gradmax_addition_is_invisible(rng):
    net = mlp([3, 4, 2], "selu", rng=rng)
    X, Y = rng.standard_normal((3, 8)), rng.standard_normal((2, 8))
    p = gr.normalize_proposal(gr.propose_gradmax(net, X, Y, 0), "gradmax_sqrt")
    grown = gr.apply_addition(net, 0, p, 1.0)
    np.testing.assert_array_equal(forward(grown, X), forward(net, X))


def test_random_proposal_deterministic_and_unit(rng):
    a = gr.propose_random(5, 3, 2, seed=7)
    b = gr.propose_random(5, 3, 2, seed=7)
    np.testing.assert_array_equal(a.alpha, b.alpha)
    np.testing.assert_array_equal(a.omega, b.omega)
    for dist in ("gaussian", "uniform"):
        p = gr.propose_random(6, 4, 3, dist, seed=1)
        assert np.isclose(np.sum(p.alpha ** 2) / 3, 1.0, atol=1e-12)
        assert np.isclose(np.sum(p.omega ** 2) / 3, 1.0, atol=1e-12)
        assert p.lambdas.size == 0
    with pytest.raises(DomainError):
        gr.propose_random(2, 2, distribution="cauchy")


def test_random_for_position_has_zero_bias(rng):
    p = gr.random_for_position(mlp([3, 2, 1], rng=rng), 0, 2, seed=3)
    assert not p.alpha[-1].any()


def test_non_growable_position(rng):
    with pytest.raises(DomainError):
        gr.propose_tiny(mlp([2, 3, 1], rng=rng), np.ones((2, 3)), np.ones((1, 3)), 1)


# ------------------------------------------------------------- normalization


def proposal(alpha, omega):
    return gr.GrowthProposal(0, "tiny", np.asarray(alpha, float), np.asarray(omega, float), np.ones(1))


def test_tiny_sqrt_normalization():
    p = gr.normalize_proposal(proposal([[math.sqrt(10.0)]], [[2.0]]), "tiny_sqrt")
    assert np.isclose(p.alpha[0, 0], math.sqrt(10.0) * 1e-2)
    assert np.isclose(np.sum(p.alpha ** 2), 1e-3) and np.isclose(np.sum(p.omega ** 2), 1e-3)
    q = gr.normalize_proposal(p, "tiny_sqrt")
    np.testing.assert_allclose(q.alpha, p.alpha, rtol=1e-12)


def test_gradmax_linear_normalization():
    p = gr.normalize_proposal(proposal([[1.0]], [[1.0]]), "gradmax_linear")
    assert np.isclose(p.omega[0, 0], 1e-3) and p.alpha[0, 0] == 0.0


def test_normalization_preserves_direction(rng):
    a, o = rng.standard_normal((4, 2)), rng.standard_normal((3, 2))
    p = gr.normalize_proposal(proposal(a, o), "unit_then_gamma")
    c = np.sum(p.alpha * a) / np.sum(a * a)
    assert c > 0
    np.testing.assert_allclose(p.alpha, c * a, rtol=1e-12)


def test_zero_norm_normalization_fails():
    with pytest.raises(DomainError):
        gr.normalize_proposal(proposal([[0.0]], [[1.0]]), "tiny_sqrt")


def test_schedule_validation():
    with pytest.raises(DomainError):
        gr.GrowthSchedule(delta_t=0)
    with pytest.raises(DomainError):
        gr.GrowthSchedule(neurons_per_depth=(0,))


# ------------------------------------------------------------- amplitude search


def test_empty_proposal_amplitude_is_zero(rng):
    net = mlp([2, 3, 1], rng=rng)
    X = rng.standard_normal((2, 4))
    p = gr.propose_tiny(net, X, forward(net, X), 0)
    assert gr.amplitude_factor(net, p, X, forward(net, X)) == 0.0


def test_amplitude_matches_quadratic_vertex(rng):
    net = mlp([4, 2, 1], "identity", rng=rng)
    X, Y = rng.standard_normal((4, 30)), rng.standard_normal((1, 30))
    p = gr.normalize_proposal(gr.propose_tiny(net, X, Y, 0), "unit_then_gamma")
    f0 = forward(net, X) - Y
    D = forward(gr.apply_proposal(net, p, 1.0), X) - forward(net, X)
    vertex = -np.sum(f0 * D) / np.sum(D * D)
    L = 4.0
    expected = min(max(vertex, 0.0), L)
    got = gr.amplitude_factor(net, p, X, Y, "square", L)
    assert abs(got - expected) <= 1e-3 * L
    assert 0 < expected < L


@pytest.mark.parametrize("interval", ["positive", "symmetric"])
def test_amplitude_never_worse(rng, interval):
    for _ in range(5):
        net = mlp([3, 3, 2], "selu", rng=rng)
        X, Y = rng.standard_normal((3, 20)), rng.standard_normal((2, 20))
        p = gr.random_for_position(net, 0, 2, seed=rng)
        g = gr.amplitude_factor(net, p, X, Y, "square", 4.0, interval)
        assert batch_loss(gr.apply_proposal(net, p, g), X, Y, "square") <= batch_loss(net, X, Y, "square") + 1e-12


def test_tiny_amplitude_positive(rng):
    net = mlp([3, 4, 2], "selu", rng=rng)
    X, Y = rng.standard_normal((3, 25)), rng.standard_normal((2, 25))
    p = gr.propose_tiny(net, X, Y, 0)
    assert gr.predicted_slope(net, p) < 0
    assert gr.amplitude_factor(net, p, X, Y) > 0


def test_amplitude_bound_must_be_positive(rng):
    net = mlp([1, 1, 1], rng=rng)
    p = gr.random_for_position(net, 0, 1)
    with pytest.raises(DomainError):
        gr.amplitude_factor(net, p, np.ones((1, 2)), np.ones((1, 2)), bound=0.0)


def test_golden_section_quadratic():
    x, fx = gr.golden_section(lambda t: (t - 1.3) ** 2, 0.0, 4.0, 1e-8)
    assert abs(x - 1.3) < 1e-6 and fx < 1e-10


# ------------------------------------------------------------- insertion


def test_dense_insert_param_count(rng):
    net = mlp([3, 4, 2], rng=rng)
    grown = gr.insert_neurons(net, 0, rng.standard_normal((4, 1)), rng.standard_normal((2, 1)))
    assert param_count(grown) == param_count(net) + (3 + 1) + 2
    assert grown.width(0) == 5


def test_conv_insert_param_count(rng):
    net = _small_conv_net(rng, "selu")
    grown = gr.insert_neurons(net, 0, rng.standard_normal((9, 1)), rng.standard_normal((27, 1)))
    assert param_count(grown) == param_count(net) + 9 + 1 + 27
    X = rng.standard_normal((16, 3))
    z = gr.insert_neurons(net, 0, np.zeros((9, 2)), np.zeros((27, 2)))
    np.testing.assert_array_equal(forward(z, X), forward(net, X))


def test_insert_shape_mismatch(rng):
    net = mlp([3, 4, 2], rng=rng)
    with pytest.raises(ShapeError):
        gr.insert_neurons(net, 0, np.zeros((3, 1)), np.zeros((2, 1)))
    with pytest.raises(ShapeError):
        gr.insert_neurons(net, 0, np.zeros((4, 1)), np.zeros((2, 2)))


def test_zero_amplitude_is_identity(rng):
    net = mlp([3, 4, 2], "selu", rng=rng)
    X, Y = rng.standard_normal((3, 10)), rng.standard_normal((2, 10))
    p = gr.propose_tiny(net, X, Y, 0)
    np.testing.assert_array_equal(forward(gr.apply_proposal(net, p, 0.0), X), forward(net, X))
    with pytest.raises(DomainError):
        gr.apply_addition(net, 0, p, math.inf)


@pytest.mark.parametrize("act", ["tanh", "selu"])
def test_scalar_neuron_first_order_contribution(act):
    net = Network([Dense(np.array([[0.4, 0.1]])), Activation(act), Dense(np.array([[0.7, 0.2]]))], (1,))
    X = np.array([[0.8, 1.5]])
    p = proposal([[math.sqrt(2)], [0.0]], [[math.sqrt(2)]])
    base = forward(net, X)

    def change(g):
        return forward(gr.apply_addition(net, 0, p, g), X) - base

    slope = richardson(change, 1e-4)
    np.testing.assert_allclose(slope, 2.0 * gr.slope_at_zero(act) * X, rtol=1e-3)


def test_best_update_application(rng):
    net = mlp([3, 4, 2], "selu", rng=rng)
    X, Y = rng.standard_normal((3, 12)), rng.standard_normal((2, 12))
    p = gr.propose_tiny(net, X, Y, 0)
    same = gr.apply_best_update(net, 2, p.delta_W_star, 0.0)
    np.testing.assert_array_equal(same.weighted(2).W, net.weighted(2).W)
    L0 = batch_loss(net, X, Y, "square")
    slope = richardson(lambda g: batch_loss(gr.apply_best_update(net, 2, p.delta_W_star, g), X, Y, "square") - L0
                       if g else 0.0, 1e-4)
    assert abs(slope + p.gains[1]) <= 0.02 * p.gains[1]
    with pytest.raises(ShapeError):
        gr.apply_best_update(net, 2, np.zeros((3, 3)))


def test_best_update_consistent_case(rng):
    # linear output layer and a target it can reach: one full step fits exactly
    net = mlp([3, 4, 2], "selu", rng=rng)
    X = rng.standard_normal((3, 10))
    target = net.copy()
    target.weighted(2).W = target.weighted(2).W + rng.standard_normal((2, 5))
    Y = forward(target, X)
    p = gr.propose_tiny(net, X, Y, 0)
    # square loss goal is 2(y - f), so half the update reaches the target
    fitted = gr.apply_best_update(net, 2, p.delta_W_star, 0.5)
    assert np.max(np.abs(loss_and_goals(fitted, X, Y).V[2])) < 1e-9


# ------------------------------------------------------------- schedules


def test_select_neurons():
    assert gr.select_neurons([2.0, 1.0, 1e-9]) == 2
    assert gr.select_neurons([]) == 0
    assert gr.select_neurons([0.5, 0.5, 0.5]) == 3


def test_estimation_batch_size():
    assert gr.estimation_batch_size(1, 64, 1, 1.0) == 4096
    assert gr.estimation_batch_size(9, 16, 1024, 1.0, conv_boost=True) == 41
    assert gr.estimation_batch_size(9, 16, 1024, 0.001, conv_boost=True) == 8
    assert gr.estimation_batch_size(1, 64, 1, 0.0) == 8
    assert gr.estimation_batch_size(1, 64, 1, 1.0, dataset_size=100) == 100
    with pytest.raises(DomainError):
        gr.estimation_batch_size(0, 1, 1)


def test_learning_batch_size():
    assert gr.learning_batch_size(32, 1.0, 4.0) == 64
    assert gr.learning_batch_size(32, 5.0, 5.0) == 32
    assert gr.learning_batch_size(32, 1.0, 2.0) == 45
    with pytest.raises(DomainError):
        gr.learning_batch_size(32, 0.0, 1.0)


# ------------------------------------------------------------- overfit construction


def test_overfit_hand_example():
    X = np.array([[0.0, 1.0, 2.0]])
    Y = np.array([[1.0, 0.0, 2.0]])
    for rule in ("global", "midpoint"):
        out = gr.overfit_construct(X, Y, direction=[1.0], eps=0.5, bias_rule=rule)
        np.testing.assert_allclose(out.biases, [-0.5, 0.5, 1.5])
        np.testing.assert_allclose(out.activations, [[0.5, 0, 0], [1.5, 0.5, 0], [2.5, 1.5, 0.5]])
        np.testing.assert_allclose(out.weights, [2.0, -6.0, 12.0], atol=1e-12)
        np.testing.assert_allclose(forward(out.network, X), Y, atol=1e-12)


def test_overfit_single_sample():
    out = gr.overfit_construct(np.array([[0.3], [1.0]]), np.array([[2.0]]))
    assert out.network.width(0) == 1
    assert np.isclose(forward(out.network, np.array([[0.3], [1.0]]))[0, 0], 2.0)


def test_overfit_many_points(rng):
    X, Y = rng.standard_normal((2, 64)), rng.standard_normal((1, 64))
    out = gr.overfit_construct(X, Y, seed=5)
    assert out.network.width(0) == 64
    assert np.mean((forward(out.network, X) - Y) ** 2) < 1e-10


def test_overfit_tail_is_exact(rng):
    X, Y = rng.standard_normal((2, 12)), rng.standard_normal((1, 12))
    out = gr.overfit_construct(X, Y, seed=1)
    for m, resid in enumerate(out.residual_history, start=1):
        assert np.max(np.abs(resid[-m:])) < 1e-9


def test_overfit_rejects_duplicates():
    X = np.array([[0.0, 1.0, 0.0], [1.0, 2.0, 1.0]])
    with pytest.raises(DomainError):
        gr.overfit_construct(X, np.zeros((1, 3)))
    with pytest.raises(DomainError):
        gr.overfit_construct(np.array([[0.0, 1.0]]), np.zeros((1, 2)), bias_rule="other")


def test_overfit_global_rule_conditioning(rng):
    # the global-gap bias makes the triangular solve blow up on uneven spacing
    X, Y = rng.standard_normal((2, 40)), rng.standard_normal((1, 40))
    glob = gr.overfit_construct(X, Y, seed=2, bias_rule="global")
    mid = gr.overfit_construct(X, Y, seed=2)
    assert np.linalg.cond(glob.activations) > 1e6 * np.linalg.cond(mid.activations)


# ------------------------------------------------------------- random statistic and sequencing


def test_random_direction_std():
    for d in (64, 512):
        vals = gr.random_direction_statistic(10, d, 2000, seed=0)
        assert abs(np.std(vals) - 1 / math.sqrt(10 * d)) < 0.1 / math.sqrt(10 * d)


def test_sequential_discrepancy_scales_with_amplitude(rng):
    net = mlp([4, 3, 3], "tanh", rng=rng)
    X, Y = rng.standard_normal((4, 30)), rng.standard_normal((3, 30))

    def discrepancy(g, amp):
        both = gr.propose_tiny(net, X, Y, 0, max_K=2)
        sim = batch_loss(gr.apply_addition(net, 0, both, g, amp), X, Y, "square")
        one = gr.apply_addition(net, 0, gr.propose_tiny(net, X, Y, 0, max_K=1), g, amp)
        two = gr.apply_addition(one, 0, gr.propose_tiny(one, X, Y, 0, max_K=1), g, amp)
        return abs(sim - batch_loss(two, X, Y, "square"))

    lin = discrepancy(1e-2, "linear") / discrepancy(5e-3, "linear")
    sq = discrepancy(1e-2, "sqrt") / discrepancy(5e-3, "sqrt")
    # per-side scaling by gamma makes the gap quadratic; sqrt scaling only linear
    assert 3.5 < lin < 4.5
    assert 1.5 < sq < 2.5
