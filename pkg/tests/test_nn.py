"""Forward passes, pointwise losses, energy score, and the optimizer."""

import numpy as np
import pytest

from noisylab import nn
from noisylab.errors import ParameterError, ShapeError


def identity_net(dim=2):
    layers = [
        nn.DenseLayer(np.eye(dim), np.zeros(dim), "identity"),
        nn.DenseLayer(np.eye(dim), np.zeros(dim), "identity"),
        nn.DenseLayer(np.eye(dim), np.zeros(dim), "identity"),
    ]
    return nn.DenseNet(layers, extractor_end=1, classifier_end=2)


class TestForward:
    def test_identity_net_passes_input_through(self):
        net = identity_net()
        assert np.allclose(nn.forward_features(net, np.array([1.0, 2.0])), [1.0, 2.0])

    def test_single_relu_layer_clamps(self):
        layers = [
            nn.DenseLayer(np.eye(2), np.array([-3.0, 0.0]), "relu"),
            nn.DenseLayer(np.eye(2), np.zeros(2), "identity"),
            nn.DenseLayer(np.eye(2), np.zeros(2), "identity"),
        ]
        net = nn.DenseNet(layers, 1, 2)
        assert np.allclose(nn.forward_features(net, np.array([1.0, 2.0])), [0.0, 2.0])

    def test_seeded_net_matches_manual_matmul(self):
        rng = np.random.default_rng(7)
        net = nn.build_network(2, 3, hidden=(4,), projection_dim=2, rng=rng)
        x = np.array([0.3, -1.1])
        # straight-line oracle: explicit per-element affine + relu, then head
        h = np.zeros(4)
        l0 = net.layers[0]
        for i in range(4):
            acc = l0.bias[i]
            for j in range(2):
                acc += l0.weights[i, j] * x[j]
            h[i] = max(acc, 0.0)
        l1 = net.layers[1]
        logits = np.array([l1.bias[i] + sum(l1.weights[i, j] * h[j] for j in range(4))
                           for i in range(3)])
        assert np.allclose(nn.forward_features(net, x), h, atol=1e-12)
        assert np.allclose(nn.forward_logits(net, x), logits, atol=1e-12)

    def test_dimension_mismatch_raises(self):
        net = identity_net()
        with pytest.raises(ShapeError):
            nn.forward_features(net, np.array([1.0, 2.0, 3.0]))

    def test_inconsistent_layer_widths_rejected(self):
        layers = [
            nn.DenseLayer(np.zeros((3, 2)), np.zeros(3), "relu"),
            nn.DenseLayer(np.zeros((2, 4)), np.zeros(2), "identity"),
            nn.DenseLayer(np.zeros((2, 3)), np.zeros(2), "identity"),
        ]
        with pytest.raises(ShapeError):
            nn.DenseNet(layers, 1, 2)


class TestProjection:
    def test_three_four_five_triangle(self):
        layers = [
            nn.DenseLayer(np.eye(2), np.zeros(2), "identity"),
            nn.DenseLayer(np.eye(2), np.zeros(2), "identity"),
            nn.DenseLayer(np.eye(2), np.array([3.0, 4.0]), "identity"),
        ]
        net = nn.DenseNet(layers, 1, 2)
        assert np.allclose(nn.forward_projection(net, np.zeros(2)), [0.6, 0.8])

    def test_zero_norm_falls_back_to_first_basis_vector(self):
        z, degenerate = nn.normalize_rows(np.zeros((1, 4)))
        assert degenerate[0]
        assert np.allclose(z[0], [1.0, 0.0, 0.0, 0.0])

    def test_seeded_projection_matches_normalize_oracle(self):
        rng = np.random.default_rng(11)
        net = nn.build_network(3, 2, hidden=(5,), projection_dim=3, rng=rng)
        x = rng.normal(size=3)
        feats = nn.forward_features(net, x)
        raw = net.layers[-1].weights @ feats + net.layers[-1].bias
        assert np.allclose(nn.forward_projection(net, x), raw / np.linalg.norm(raw))
        assert abs(np.linalg.norm(nn.forward_projection(net, x)) - 1.0) < 1e-9


class TestSoftmax:
    def test_two_zeros(self):
        assert np.allclose(nn.softmax(np.zeros(2)), [0.5, 0.5])

    def test_constant_logits_give_uniform(self):
        for k in (2, 5, 13):
            assert np.allclose(nn.softmax(np.full(k, 3.7)), np.full(k, 1.0 / k))

    def test_large_logits_do_not_overflow(self):
        p = nn.softmax(np.array([1000.0, 0.0]))
        assert np.isfinite(p).all()
        assert p[0] > 1.0 - 1e-12

    def test_normalization_up_to_1e4(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            logits = rng.uniform(-1e4, 1e4, size=rng.integers(2, 12))
            assert abs(nn.softmax(logits).sum() - 1.0) <= 1e-9


class TestGce:
    def test_perfect_prediction(self):
        assert nn.gce_loss(np.array([0.0, 1.0]), 1, q=0.7) == 0.0

    def test_worst_prediction_endpoint(self):
        assert np.isclose(nn.gce_loss(np.array([1.0, 0.0]), 1, q=0.7), 1.0 / 0.7)

    def test_half_prediction(self):
        expected = (1.0 - 0.5 ** 0.7) / 0.7
        assert np.isclose(nn.gce_loss(np.array([0.5, 0.5]), 0, q=0.7), expected)
        assert np.isclose(expected, 0.549183, atol=1e-6)

    def test_invalid_q_raises(self):
        with pytest.raises(ParameterError):
            nn.gce_loss(np.array([0.5, 0.5]), 0, q=0.0)
        with pytest.raises(ParameterError):
            nn.gce_loss(np.array([0.5, 0.5]), 0, q=-1.0)

    def test_strictly_decreasing_in_p(self):
        for q in (0.1, 0.5, 0.7, 1.0):
            ps = np.linspace(1e-3, 1.0 - 1e-3, 500)
            vals = [(1.0 - p ** q) / q for p in ps]
            assert all(a > b for a, b in zip(vals, vals[1:]))


class TestCrossEntropy:
    def test_perfect(self):
        assert nn.cross_entropy(np.array([0.0, 1.0]), 1) == 0.0

    def test_uniform_ten_classes(self):
        probs = np.full(10, 0.1)
        assert np.isclose(nn.cross_entropy(probs, 3), np.log(10.0))

    def test_soft_target_equal_to_prediction_gives_entropy(self):
        rng = np.random.default_rng(5)
        p = rng.dirichlet(np.ones(6))
        entropy = -(p * np.log(p)).sum()
        assert np.isclose(nn.soft_cross_entropy(p, p), entropy, atol=1e-10)


class TestEnergy:
    def test_uniform_logits(self):
        assert abs(nn.energy(np.zeros(10), 1.0) + np.log(10.0)) < 1e-12

    def test_shift_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            logits = rng.normal(scale=5.0, size=rng.integers(2, 9))
            c = rng.normal(scale=10.0)
            assert abs(nn.energy(logits + c) - (nn.energy(logits) - c)) <= 1e-9

    def test_no_overflow(self):
        assert np.isfinite(nn.energy(np.array([1000.0, 0.0]), 1.0))

    def test_direct_sum_oracle(self):
        val = nn.energy(np.array([1.0, 2.0, 3.0]), 1.0)
        oracle = -np.log(np.exp(1.0) + np.exp(2.0) + np.exp(3.0))
        assert np.isclose(val, oracle, atol=1e-12)
        assert np.isclose(val, -3.407606, atol=1e-6)

    def test_temperature_validated(self):
        with pytest.raises(ParameterError):
            nn.energy(np.zeros(3), 0.0)


class TestBackwardTrivial:
    def test_zero_weight_net_uniform_targets_gives_zero_gradient(self):
        layers = [
            nn.DenseLayer(np.zeros((3, 2)), np.zeros(3), "relu"),
            nn.DenseLayer(np.zeros((4, 3)), np.zeros(4), "identity"),
            nn.DenseLayer(np.zeros((2, 3)), np.zeros(2), "identity"),
        ]
        net = nn.DenseNet(layers, 1, 2)
        x = np.array([[1.0, -2.0], [-1.0, 2.0]])
        targets = np.full((2, 4), 0.25)
        _, bundle = nn.soft_ce_loss_and_grads(net, x, targets)
        assert all(np.allclose(g, 0.0) for g in bundle.d_weights)
        assert all(np.allclose(g, 0.0) for g in bundle.d_bias)

    def test_one_parameter_quadratic_surrogate(self):
        # single 1x1 identity layer, L = (w*x - t)^2 evaluated through the
        # backprop plumbing with dL/dlogit = 2 (logit - t)
        w, x, t = 1.7, 1.0, 0.4
        layers = [
            nn.DenseLayer(np.array([[1.0]]), np.zeros(1), "identity"),
            nn.DenseLayer(np.array([[w]]), np.zeros(1), "identity"),
            nn.DenseLayer(np.array([[1.0]]), np.zeros(1), "identity"),
        ]
        net = nn.DenseNet(layers, 1, 2)
        cache = nn.forward_batch(net, np.array([[x]]))
        dlogits = 2.0 * (cache.logits - t)
        bundle = nn.GradientBundle.zeros(net)
        nn.backprop_logits(net, cache, dlogits, bundle)
        assert np.isclose(bundle.d_weights[1][0, 0], 2.0 * (w * x - t) * x)


class TestSgd:
    def test_plain_step(self):
        net = identity_net()
        g = nn.GradientBundle.zeros(net)
        g.d_weights[0][0, 0] = 2.0
        nn.sgd_step(net, g, lr=0.1)
        assert np.isclose(net.layers[0].weights[0, 0], 1.0 - 0.2)

    def test_zero_gradient_leaves_parameters(self):
        net = identity_net()
        before = [l.weights.copy() for l in net.layers]
        nn.sgd_step(net, nn.GradientBundle.zeros(net), lr=0.5)
        assert all(np.array_equal(a, l.weights) for a, l in zip(before, net.layers))

    def test_momentum_matches_hand_recurrence(self):
        net = identity_net(1)
        lr, mom = 0.1, 0.9
        g1, g2 = 1.0, -0.5
        w0 = net.layers[0].weights[0, 0]
        state = None
        for gval in (g1, g2):
            g = nn.GradientBundle.zeros(net)
            g.d_weights[0][0, 0] = gval
            state = nn.sgd_step(net, g, lr=lr, momentum=mom, state=state)
        v1 = g1
        w1 = w0 - lr * v1
        v2 = mom * v1 + g2
        w2 = w1 - lr * v2
        assert np.isclose(net.layers[0].weights[0, 0], w2)

    def test_invalid_lr(self):
        net = identity_net()
        with pytest.raises(ParameterError):
            nn.sgd_step(net, nn.GradientBundle.zeros(net), lr=0.0)
