import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from goalgeom import model as mdl
from goalgeom.matrixcore import DimensionError


def tiny_params():
    # 2 -> 2 (ReLU-free single layer) -> 2 classes, chosen by hand
    return mdl.MlpParams(
        g_weights=[np.array([[1.0, 0.0], [0.0, 2.0]])],
        g_biases=[np.zeros(2)],
        h_weight=np.array([[1.0, 0.0], [0.0, 1.0]]),
        h_bias=np.zeros(2),
    )


def flat_loss(params, x, y, src, tgt, lambda_t, go_dir=None):
    tr = mdl.forward(params, x)
    val = mdl.loss_source_ce(tr, y, src) + lambda_t * mdl.loss_target_entropy(tr, tgt)
    if go_dir is not None:
        val += float((go_dir * tr.z).sum())
    return val


class TestForward:
    def test_softmax_hand_values(self):
        p = mdl.softmax(np.array([[0.0, 1000.0], [math.log(3.0), 1000.0]]))
        np.testing.assert_allclose(p[:, 0], [0.25, 0.75])
        np.testing.assert_allclose(p[:, 1], [0.5, 0.5])

    def test_shapes(self):
        p = mdl.init_params(5, 3, 4, hidden=(7, 6), seed=1)
        tr = mdl.forward(p, np.ones((5, 9)))
        assert tr.z.shape == (3, 9) and tr.probs.shape == (4, 9)
        np.testing.assert_allclose(tr.probs.sum(axis=0), 1.0)

    def test_wrong_input_dim(self):
        with pytest.raises(DimensionError):
            mdl.forward(mdl.init_params(5, 3, 2), np.ones((4, 2)))

    def test_bad_layer_chain(self):
        with pytest.raises(DimensionError):
            mdl.MlpParams([np.ones((3, 2))], [np.ones(2)], np.ones((2, 3)), np.ones(2))

    def test_init_is_seeded(self):
        a, b = mdl.init_params(4, 3, 2, seed=3), mdl.init_params(4, 3, 2, seed=3)
        for name, t in a.named().items():
            assert np.array_equal(t, b.named()[name])


class TestLosses:
    def test_ce_hand_oracle(self):
        # logits (1, 0): p0 = e / (e + 1)
        tr = mdl.forward(tiny_params(), np.array([[1.0], [0.0]]))
        ce = mdl.loss_source_ce(tr, mdl.one_hot([0], 2))
        assert ce == pytest.approx(math.log(1.0 + math.exp(-1.0)), abs=1e-12)
        assert ce == pytest.approx(0.3132617, abs=1e-7)

    def test_entropy_hand_oracle(self):
        tr = mdl.forward(tiny_params(), np.zeros((2, 2)))
        assert mdl.loss_target_entropy(tr) == pytest.approx(2 * math.log(2.0), abs=1e-12)

    def test_ce_misaligned_labels(self):
        tr = mdl.forward(tiny_params(), np.zeros((2, 3)))
        with pytest.raises(DimensionError):
            mdl.loss_source_ce(tr, mdl.one_hot([0, 1], 2), [0, 1, 2])

    def test_one_hot(self):
        np.testing.assert_array_equal(mdl.one_hot([2, 0], 3), [[0, 1], [0, 0], [1, 0]])


class TestBackward:
    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 0.3]), st.booleans())
    def test_matches_finite_differences(self, seed, lambda_t, with_go):
        rng = np.random.default_rng(seed)
        params = mdl.init_params(4, 3, 3, hidden=(5,), seed=seed % 1000)
        x = rng.standard_normal((4, 7))
        src, tgt = np.arange(4), np.arange(4, 7)
        y = mdl.one_hot(rng.integers(0, 3, 4), 3)
        go_dir = rng.standard_normal((3, 7)) if with_go else None
        # stay away from ReLU kinks so central differences are valid
        if np.abs(mdl.forward(params, x).pre[0]).min() < 1e-3:
            return
        grads = mdl.backward(params, mdl.forward(params, x), y, src, tgt, go_dir, lambda_t)
        h = 1e-6
        for name, p in params.named().items():
            g = grads.named()[name]
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                up = flat_loss(params, x, y, src, tgt, lambda_t, go_dir)
                p[idx] = old - h
                dn = flat_loss(params, x, y, src, tgt, lambda_t, go_dir)
                p[idx] = old
                assert g[idx] == pytest.approx((up - dn) / (2 * h), abs=1e-6, rel=1e-5), name

    def test_go_grad_skips_classifier(self):
        params = mdl.init_params(3, 2, 2, seed=0)
        tr = mdl.forward(params, np.ones((3, 2)))
        grads = mdl.backward(params, tr, None, None, None, go_grad=np.ones((2, 2)))
        assert not grads.h_weight.any() and not grads.h_bias.any()
        assert grads.g_weights[-1].any()

    def test_go_grad_shape_checked(self):
        params = mdl.init_params(3, 2, 2, seed=0)
        tr = mdl.forward(params, np.ones((3, 2)))
        with pytest.raises(DimensionError):
            mdl.backward(params, tr, None, None, None, go_grad=np.ones((3, 2)))


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        p = tiny_params()
        g = p.zeros_like()
        g.h_bias[...] = [2.0, -0.5]
        new, state = mdl.adam_step(p, g, mdl.OptimizerState(lr=0.1))
        # bias correction makes step one exactly lr * g / (|g| + eps)
        np.testing.assert_allclose(new.h_bias, [-0.1, 0.1], atol=1e-8)
        assert state.step == 1
        np.testing.assert_array_equal(new.h_weight, p.h_weight)

    def test_zero_lr_is_identity(self):
        p = mdl.init_params(3, 2, 2, seed=0)
        g = mdl.init_params(3, 2, 2, seed=1)
        new, _ = mdl.adam_step(p, g, mdl.OptimizerState(lr=0.0))
        for name, t in p.named().items():
            np.testing.assert_array_equal(new.named()[name], t)

    def test_minimizes_quadratic(self):
        p = tiny_params()
        target = np.array([3.0, -2.0])
        state = mdl.OptimizerState(lr=0.05)
        for _ in range(2000):
            g = p.zeros_like()
            g.h_bias[...] = 2 * (p.h_bias - target)
            p, state = mdl.adam_step(p, g, state)
        np.testing.assert_allclose(p.h_bias, target, atol=1e-3)

    def test_shape_mismatch(self):
        p = tiny_params()
        g = mdl.init_params(3, 2, 2)
        with pytest.raises(DimensionError):
            mdl.adam_step(p, g, mdl.OptimizerState())


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        p = mdl.init_params(6, 4, 3, hidden=(5, 7), seed=11)
        path = tmp_path / "ck.json"
        mdl.save_checkpoint(p, path, meta={"note": "x"})
        q = mdl.load_checkpoint(path)
        for name, t in p.named().items():
            assert np.array_equal(q.named()[name], t)
        x = np.random.default_rng(0).standard_normal((6, 4))
        assert np.array_equal(mdl.forward(p, x).probs, mdl.forward(q, x).probs)

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "ck.json"
        path.write_text('{"format": "other"}')
        with pytest.raises(ValueError, match="not a"):
            mdl.load_checkpoint(path)
