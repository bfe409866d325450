import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from funcpool.errors import ConfigError, DataError, FormatError, NumericalError
from funcpool.nn import (
    AdamW,
    LayerNorm,
    Linear,
    Network,
    ReLU,
    Residual,
    SigmoidHead,
    SoftmaxHead,
    bce_loss,
    grad_check,
    label_smooth,
    mixup,
    one_hot,
    sigmoid,
    smoothed_ce_loss,
    softmax,
)
from funcpool.nn.checkpoint import decode_checkpoint, encode_checkpoint
from funcpool.nn.gradcheck import rel_error
from funcpool.rng import Rng


def rand(rng: Rng, *shape, scale=1.0):
    return (2 * rng.random(int(np.prod(shape))) - 1).reshape(shape) * scale


def plain_ce(logits, targets):
    # independent reference: log-sum-exp written out with math
    total = 0.0
    for z, t in zip(logits, targets):
        m = max(z)
        lse = m + math.log(sum(math.exp(v - m) for v in z))
        total += -sum(ti * (zi - lse) for zi, ti in zip(z, t))
    return total / len(logits)


class TestInit:
    def test_glorot_bound_and_zero_bias(self):
        net = Network([Linear(4, 4)]).init(Rng(0))
        w, b = net.params
        assert w.shape == (4, 4) and np.abs(w).max() <= math.sqrt(6 / 8)
        assert not b.any()

    def test_seeded(self):
        layers = [Linear(3, 5), ReLU(), LayerNorm(5), Linear(5, 2), SoftmaxHead(2)]
        a = Network(layers).init(Rng(1))
        b = Network(layers).init(Rng(1))
        assert all(np.array_equal(x, y) for x, y in zip(a.params, b.params))

    def test_layernorm_gain_one(self):
        net = Network([LayerNorm(3)]).init(Rng(0))
        assert net.params[0].tolist() == [1, 1, 1] and net.params[1].tolist() == [0, 0, 0]


class TestWidths:
    def test_mismatch(self):
        with pytest.raises(ConfigError):
            Network([Linear(3, 4), Linear(5, 2)])

    def test_residual_must_preserve_width(self):
        with pytest.raises(ConfigError):
            Network([Linear(3, 4), Residual((Linear(4, 5),))])

    def test_head_must_be_last(self):
        with pytest.raises(ConfigError):
            Network([Linear(3, 1), SigmoidHead(), Linear(1, 1)])

    def test_spec_round_trip(self):
        layers = [Linear(3, 4), ReLU(), LayerNorm(4), Residual((Linear(4, 4), ReLU(), LayerNorm(4))), Linear(4, 2), SoftmaxHead(2)]
        net = Network(layers)
        assert Network.from_spec_dict(net.spec_dict()).layers == net.layers

    def test_bad_input_shape(self):
        with pytest.raises(DataError):
            Network([Linear(3, 1)]).forward(np.zeros((2, 4)))


class TestForward:
    def test_identity_linear(self):
        net = Network([Linear(4, 4)], [np.eye(4), np.zeros(4)])
        x = rand(Rng(0), 5, 4)
        assert np.array_equal(net(x), x)

    def test_layernorm_constant_row(self):
        net = Network([LayerNorm(4)], [np.full(4, 3.0), np.full(4, 0.0)])
        assert not net(np.full((2, 4), 7.0)).any()

    def test_softmax_rows_sum_to_one(self):
        z = rand(Rng(2), 50, 9, scale=30)
        assert np.abs(softmax(z).sum(axis=1) - 1).max() <= 1e-12

    def test_sigmoid_range(self):
        s = sigmoid(np.array([-700.0, -30.0, 0.0, 30.0, 700.0]))
        assert s[2] == 0.5 and np.all((s >= 0) & (s <= 1)) and np.isfinite(s).all()

    def test_residual_adds_skip(self):
        inner = Residual((Linear(2, 2),))
        net = Network([inner], [np.zeros((2, 2)), np.array([1.0, -1.0])])
        x = np.array([[3.0, 4.0]])
        assert net(x).tolist() == [[4.0, 3.0]]

    def test_exact_rows_are_batch_invariant(self):
        rng = Rng(3)
        net = Network([Linear(32, 64), ReLU(), Linear(64, 1), SigmoidHead()]).init(rng)
        x = rand(rng, 300, 32)
        whole = net(x, exact_rows=True)
        parts = np.concatenate([net(x[i : i + 7], exact_rows=True) for i in range(0, 300, 7)])
        assert whole.tobytes() == parts.tobytes()


class TestBCE:
    def test_perfect_prediction(self):
        loss, _ = bce_loss(np.array([1.0, 0.0]), np.array([1.0, 0.0]))
        assert loss <= 1e-11

    def test_half(self):
        loss, g = bce_loss(np.array([0.5]), np.array([1.0]))
        assert abs(loss - math.log(2)) < 1e-15 and g[0] == -0.5

    def test_zero_weight_contributes_nothing(self):
        _, g = bce_loss(np.array([0.3, 0.9]), np.array([1.0, 0.0]), np.array([1.0, 0.0]))
        assert g[1] == 0.0

    def test_all_zero_weights(self):
        loss, g = bce_loss(np.array([0.3]), np.array([1.0]), np.array([0.0]))
        assert loss == 0.0 and not g.any()


class TestSmoothedCE:
    def test_large_margin(self):
        loss, _ = smoothed_ce_loss(np.array([[50.0, 0.0, 0.0]]), one_hot([0], 3))
        assert loss < 1e-20

    @settings(max_examples=50)
    @given(st.integers(0, 10**6))
    def test_uniform_targets_gibbs(self, seed):
        z = rand(Rng(seed), 3, 5, scale=3)
        loss, _ = smoothed_ce_loss(z, np.full((3, 5), 0.2))
        assert loss >= math.log(5) - 1e-12
        flat, _ = smoothed_ce_loss(np.zeros((3, 5)), np.full((3, 5), 0.2))
        assert abs(flat - math.log(5)) < 1e-12

    def test_phi_doubles_loss(self):
        rng = Rng(4)
        z = rand(rng, 6, 4, scale=2)
        t = label_smooth(one_hot(rng.integers(4, 6), 4), 0.3)
        phi = 0.5 + rng.random(4)
        a, ga = smoothed_ce_loss(z, t, phi)
        b, gb = smoothed_ce_loss(z, t, 2 * phi)
        assert b == 2 * a and np.array_equal(gb, 2 * ga)

    @settings(max_examples=50)
    @given(st.integers(0, 10**6))
    def test_reduces_to_plain_ce(self, seed):
        rng = Rng(seed)
        z = rand(rng, 7, 6, scale=5)
        t = one_hot(rng.integers(6, 7), 6)
        loss, _ = smoothed_ce_loss(z, label_smooth(t, 0.0), np.ones(6))
        assert abs(loss - plain_ce(z.tolist(), t.tolist())) < 1e-12

    def test_rejects_non_distribution(self):
        with pytest.raises(DataError):
            smoothed_ce_loss(np.zeros((1, 2)), np.array([[0.7, 0.7]]))


class TestLabelSmoothAndMixup:
    def test_identity(self):
        t = one_hot([2], 4)
        assert np.array_equal(label_smooth(t, 0.0), t)

    def test_half_smoothing(self):
        assert label_smooth(one_hot([2], 4), 0.5)[0].tolist() == [0.125, 0.125, 0.625, 0.125]

    @given(st.integers(2, 50), st.floats(0, 0.99))
    def test_sums_to_one(self, n, eps):
        assert abs(label_smooth(one_hot([0], n), eps).sum() - 1.0) < 1e-12

    def test_lambda_one_returns_batch_a(self):
        rng = Rng(5)
        xa, xb = rand(rng, 4, 3), rand(rng, 4, 3)
        ta, tb = one_hot([0, 1, 2, 0], 3), one_hot([1, 1, 0, 2], 3)
        x, t, lam = mixup(xa, ta, xb, tb, 0.2, rng, lam=1.0)
        assert lam == 1.0 and np.array_equal(x, xa) and np.array_equal(t, ta)

    def test_lambda_half_is_average(self):
        xa, xb = np.array([[0.0, 2.0]]), np.array([[4.0, 6.0]])
        x, t, _ = mixup(xa, one_hot([0], 2), xb, one_hot([1], 2), 0.2, Rng(0), lam=0.5)
        assert x.tolist() == [[2.0, 4.0]] and t.tolist() == [[0.5, 0.5]]

    @settings(max_examples=30)
    @given(st.integers(0, 10**6))
    def test_drawn_targets_are_distributions(self, seed):
        rng = Rng(seed)
        ta = label_smooth(one_hot(rng.integers(5, 8), 5), 0.5)
        tb = label_smooth(one_hot(rng.integers(5, 8), 5), 0.5)
        _, t, lam = mixup(np.zeros((8, 2)), ta, np.ones((8, 2)), tb, 0.2, rng)
        assert 0.0 <= lam <= 1.0
        assert np.all(t >= 0) and np.abs(t.sum(axis=1) - 1).max() < 1e-12


class TestAdamW:
    def test_zero_gradient_no_decay(self):
        p = [np.array([1.0, -2.0])]
        AdamW(p, 1e-3, 0.0).step(p, [np.zeros(2)])
        assert p[0].tolist() == [1.0, -2.0]

    def test_decay_only(self):
        p = [np.array([1.0, -2.0])]
        AdamW(p, 1e-5, 0.01).step(p, [np.zeros(2)])
        assert np.array_equal(p[0], np.array([1.0, -2.0]) * (1 - 1e-7))

    def test_first_step(self):
        p = [np.array([0.0])]
        opt = AdamW(p, 1e-3, 0.0)
        opt.step(p, [np.array([1.0])])
        # m_hat = v_hat = 1 after bias correction
        assert p[0][0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)

    def test_non_finite_gradient(self):
        p = [np.array([0.0])]
        with pytest.raises(NumericalError):
            AdamW(p, 1e-3).step(p, [np.array([np.nan])])

    def test_bit_reproducible(self):
        def run():
            rng = Rng(6)
            p = [rand(rng, 3, 3)]
            opt = AdamW(p, 1e-2, 0.01)
            for _ in range(20):
                opt.step(p, [np.sin(p[0]) + rand(rng, 3, 3)])
            return p[0].tobytes()

        assert run() == run()


def network_loss(net, x, kind, target):
    def loss_fn():
        out, cache = net.forward(x)
        if kind == "bce":
            loss, g = bce_loss(out[:, 0], target)
            g = g[:, None]
        else:
            loss, g = smoothed_ce_loss(cache[-1][1], target)
        grads, _ = net.backward(cache, g)
        return loss, grads

    return loss_fn


class TestGradCheck:
    def test_linear_bce(self):
        rng = Rng(7)
        net = Network([Linear(5, 1), SigmoidHead()]).init(rng)
        x = rand(rng, 8, 5, scale=2)
        y = (rng.random(8) < 0.5).astype(float)
        assert grad_check(net.params, network_loss(net, x, "bce", y), rng).max_rel_error < 1e-6

    def test_layernorm_residual_softmax(self):
        rng = Rng(8)
        layers = [Linear(6, 8), ReLU(), LayerNorm(8), Residual((Linear(8, 8), ReLU(), LayerNorm(8))), Linear(8, 4), SoftmaxHead(4)]
        net = Network(layers).init(rng)
        x = rand(rng, 8, 6, scale=2)
        t = label_smooth(one_hot(rng.integers(4, 8), 4), 0.5)
        assert grad_check(net.params, network_loss(net, x, "ce", t), rng).max_rel_error < 1e-4

    def test_corrupted_gradient_flagged(self):
        rng = Rng(9)
        net = Network([Linear(5, 3), SoftmaxHead(3)]).init(rng)
        x = rand(rng, 8, 5, scale=2)
        t = one_hot(rng.integers(3, 8), 3)
        inner = network_loss(net, x, "ce", t)

        def corrupted():
            loss, grads = inner()
            return loss, [g * 1.01 for g in grads]

        assert grad_check(net.params, corrupted, rng).max_rel_error > 1e-3

    def test_input_gradient(self):
        rng = Rng(10)
        net = Network([Linear(4, 6), ReLU(), LayerNorm(6), Linear(6, 3)]).init(rng)
        x = rand(rng, 3, 4)
        out, cache = net.forward(x)
        _, gx = net.backward(cache, out, need_input=True)
        h = 1e-6
        for i, j in [(0, 0), (1, 2), (2, 3)]:
            xp, xm = x.copy(), x.copy()
            xp[i, j] += h
            xm[i, j] -= h
            num = (0.5 * (net(xp) ** 2).sum() - 0.5 * (net(xm) ** 2).sum()) / (2 * h)
            assert rel_error(gx[i, j], num) < 1e-6

    def test_restores_parameters(self):
        rng = Rng(11)
        net = Network([Linear(3, 1), SigmoidHead()]).init(rng)
        before = [p.copy() for p in net.params]
        x = rand(rng, 4, 3)
        grad_check(net.params, network_loss(net, x, "bce", np.ones(4)), rng)
        assert all(np.array_equal(a, b) for a, b in zip(before, net.params))


class TestCheckpoint:
    def test_round_trip(self):
        arrays = [np.arange(6.0).reshape(2, 3), np.array([np.pi]), np.zeros((0,))]
        header, back = decode_checkpoint(encode_checkpoint({"kind": "x", "v": 1.5}, arrays))
        assert header == {"kind": "x", "v": 1.5}
        assert all(a.tobytes() == b.tobytes() and a.shape == b.shape for a, b in zip(arrays, back))

    def test_deterministic_bytes(self):
        a = encode_checkpoint({"b": 1, "a": 2}, [np.ones(2)])
        b = encode_checkpoint({"a": 2, "b": 1}, [np.ones(2)])
        assert a == b

    def test_corruption(self):
        data = encode_checkpoint({}, [np.ones(3)])
        with pytest.raises(FormatError):
            decode_checkpoint(b"NOPE" + data[4:])
        with pytest.raises(FormatError):
            decode_checkpoint(data[:-8])
