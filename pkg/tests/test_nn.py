import math

import numpy as np
import pytest

from drawbin.nn import (
    AdamState,
    Architecture,
    ModelFormatError,
    TrainConfig,
    adam_step,
    build_model,
    forward,
    infer,
    load_model,
    loss,
    loss_and_gradients,
    save_model,
    train,
)
from drawbin.nn.layers import conv_backward, conv_forward, cross_entropy, deconv_backward, deconv_forward
from drawbin.nn.model import FOREGROUND
from drawbin.nn.serialize import MAGIC, dumps, loads
from drawbin.labeling import HdadPair
from gradcheck import generic_point, worst_relative_error

LAYER_SHAPES = [
    ("conv1_1", (224, 224, 32)),
    ("conv1_2", (112, 112, 32)),
    ("conv2_1", (112, 112, 32)),
    ("conv2_2", (56, 56, 32)),
    ("conv3_1", (56, 56, 32)),
    ("conv3_2", (28, 28, 32)),
    ("conv4_1", (28, 28, 32)),
    ("conv4_2", (14, 14, 32)),
    ("conv5_1", (14, 14, 32)),
    ("conv5_2", (7, 7, 32)),
    ("deconv1", (14, 14, 2)),
    ("deconv2", (28, 28, 2)),
    ("deconv3", (56, 56, 2)),
    ("deconv4", (112, 112, 2)),
    ("deconv5", (224, 224, 2)),
]

SMALL = Architecture(levels=3, width=4, block=16)


def naive_conv(x, w, b, stride):
    kh, kw, cin, cout = w.shape
    h, wd, _ = x.shape
    ph, pw = kh // 2, kw // 2
    ho, wo = -(-h // stride), -(-wd // stride)
    out = np.zeros((ho, wo, cout))
    for oy in range(ho):
        for ox in range(wo):
            for ky in range(kh):
                for kx in range(kw):
                    iy, ix = oy * stride + ky - ph, ox * stride + kx - pw
                    if 0 <= iy < h and 0 <= ix < wd:
                        out[oy, ox] += x[iy, ix] @ w[ky, kx]
    return out + b


def naive_deconv(x, w, b):
    cin, kh, kw, cout = w.shape
    h, wd, _ = x.shape
    out = np.zeros((2 * h, 2 * wd, cout))
    for iy in range(h):
        for ix in range(wd):
            for ky in range(kh):
                for kx in range(kw):
                    oy, ox = 2 * iy + ky - 1, 2 * ix + kx - 1
                    if 0 <= oy < 2 * h and 0 <= ox < 2 * wd:
                        out[oy, ox] += x[iy, ix] @ w[:, ky, kx, :]
    return out + b


class TestLayers:
    @pytest.mark.parametrize("stride,h,w", [(1, 6, 5), (2, 8, 8), (2, 7, 5)])
    def test_conv_matches_naive(self, stride, h, w):
        rng = np.random.default_rng(50)
        x = rng.normal(size=(1, h, w, 3))
        wt, b = rng.normal(size=(3, 3, 3, 4)), rng.normal(size=4)
        out, _ = conv_forward(x, wt, b, stride)
        np.testing.assert_allclose(out[0], naive_conv(x[0], wt, b, stride), atol=1e-12)

    def test_pointwise_conv(self):
        rng = np.random.default_rng(51)
        x, wt, b = rng.normal(size=(2, 5, 5, 6)), rng.normal(size=(1, 1, 6, 2)), rng.normal(size=2)
        out, _ = conv_forward(x, wt, b)
        np.testing.assert_allclose(out, x @ wt[0, 0] + b, atol=1e-12)

    def test_deconv_matches_naive(self):
        rng = np.random.default_rng(52)
        x = rng.normal(size=(1, 4, 3, 4))
        wt, b = rng.normal(size=(4, 3, 3, 2)), rng.normal(size=2)
        out, _ = deconv_forward(x, wt, b)
        assert out.shape == (1, 8, 6, 2)
        np.testing.assert_allclose(out[0], naive_deconv(x[0], wt, b), atol=1e-12)

    def test_deconv_is_adjoint_of_strided_conv(self):
        rng = np.random.default_rng(53)
        x, y = rng.normal(size=(1, 5, 5, 3)), rng.normal(size=(1, 10, 10, 2))
        wt = rng.normal(size=(3, 3, 3, 2))
        up, _ = deconv_forward(x, wt, np.zeros(2))
        # conv kernel (ky, kx, c_out=2 -> c_in=3) sees the same taps
        down, _ = conv_forward(y, wt.transpose(1, 2, 3, 0), np.zeros(3), stride=2)
        assert np.vdot(up, y) == pytest.approx(np.vdot(x, down), rel=1e-12)

    @pytest.mark.parametrize("kind", ["conv1", "conv2", "deconv"])
    def test_layer_gradients(self, kind):
        rng = np.random.default_rng(54)
        if kind == "deconv":
            x, wt, b = rng.normal(size=(2, 3, 4, 3)), rng.normal(size=(3, 3, 3, 2)), rng.normal(size=2)
            fwd = lambda x, wt, b: deconv_forward(x, wt, b)
            bwd = deconv_backward
        else:
            stride = 1 if kind == "conv1" else 2
            x, wt, b = rng.normal(size=(2, 5, 6, 3)), rng.normal(size=(3, 3, 3, 2)), rng.normal(size=2)
            fwd = lambda x, wt, b: conv_forward(x, wt, b, stride)
            bwd = conv_backward
        out, cache = fwd(x, wt, b)
        g = rng.normal(size=out.shape)
        dx, dw, db = bwd(g, wt, cache)
        for arr, grad in ((x, dx), (wt, dw), (b, db)):
            for idx in list(np.ndindex(arr.shape))[::7]:
                old = arr[idx]
                arr[idx] = old + 1e-6
                up = np.vdot(fwd(x, wt, b)[0], g)
                arr[idx] = old - 1e-6
                dn = np.vdot(fwd(x, wt, b)[0], g)
                arr[idx] = old
                assert grad[idx] == pytest.approx((up - dn) / 2e-6, rel=1e-6, abs=1e-8)


class TestArchitecture:
    def test_parameter_count(self):
        m = build_model(0)
        assert m.parameter_count() == 84216
        assert abs(m.parameter_count() - 84654) / 84654 <= 0.02

    def test_per_layer_counts(self):
        counts = {s.name: s.parameter_count() for s in Architecture().layers()}
        assert counts["conv1_1"] == 320
        assert all(counts[f"conv{i}_{j}"] == 9248 for i in range(1, 6) for j in (1, 2) if (i, j) != (1, 1))
        assert all(counts[f"reduce{i}"] == 66 for i in range(1, 6))
        assert counts["deconv1"] == 38
        assert all(counts[f"deconv{j}"] == 74 for j in range(2, 6))

    def test_color_input_count(self):
        assert build_model(0, Architecture(in_channels=3)).parameter_count() == 84216 + 576

    def test_layer_specs(self):
        specs = Architecture().layers()
        assert [s.stride for s in specs if s.kind == "conv"] == [1, 2] * 5
        assert all(s.kernel == (1, 1, 2) for s in specs if s.kind == "reduce")
        assert all(s.kernel == (3, 3, 2) and s.stride == 2 for s in specs if s.kind == "deconv")
        assert [s.activation for s in specs if s.kind == "deconv"] == ["relu"] * 4 + ["none"]

    def test_seed_determinism(self):
        assert build_model(7).equals(build_model(7))
        assert not build_model(7).equals(build_model(8))

    def test_block_must_divide(self):
        with pytest.raises(ValueError):
            Architecture(levels=5, block=100)


class TestForward:
    def test_shape_chain(self):
        trace = []
        x = np.random.default_rng(55).random((224, 224, 1))
        probs, _ = forward(build_model(1), x, trace=trace)
        assert trace == LAYER_SHAPES
        assert probs.shape == (224, 224, 2)
        assert np.abs(probs.sum(-1) - 1).max() < 1e-12

    def test_zero_model_is_uniform(self):
        m = build_model(0)
        for v in m.params.values():
            v[...] = 0
        probs, _ = forward(m, np.random.default_rng(56).random((224, 224, 1)))
        assert (probs == 0.5).all()

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            forward(build_model(0), np.zeros((100, 100, 1)))

    def test_float32_close_to_float64(self):
        m = build_model(2, SMALL)
        x = np.random.default_rng(57).random((16, 16, 1))
        p64, _ = forward(m, x)
        p32, _ = forward(m, x, np.float32)
        np.testing.assert_allclose(p32, p64, atol=1e-5)


class TestLoss:
    def test_perfect(self):
        target = np.random.default_rng(58).random((8, 8)) < 0.5
        pred = np.stack([~target, target], -1).astype(float)
        assert loss(pred, target) == pytest.approx(-math.log(1 - 1e-12), abs=1e-15)

    def test_uniform(self):
        assert loss(np.full((6, 6, 2), 0.5), np.zeros((6, 6), bool)) == pytest.approx(math.log(2))

    def test_random_matches_scalar_loop(self):
        rng = np.random.default_rng(59)
        p1 = rng.random((10, 12))
        pred = np.stack([1 - p1, p1], -1)
        target = rng.random((10, 12)) < 0.5
        total = 0.0
        for y in range(10):
            for x in range(12):
                q = p1[y, x] if target[y, x] else 1 - p1[y, x]
                total += -math.log(min(max(q, 1e-12), 1 - 1e-12))
        assert loss(pred, target) == pytest.approx(total / 120, abs=1e-10)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            loss(np.full((4, 4, 2), 0.5), np.zeros((4, 5), bool))


class TestBackward:
    def test_finite_differences(self):
        rng = np.random.default_rng(60)
        m = generic_point(build_model(3, SMALL), rng)
        x, t = rng.random((16, 16, 1)), rng.random((16, 16)) < 0.4
        worst, skipped = worst_relative_error(m, x, t)
        assert skipped == 0 and worst < 1e-4

    def test_zero_bias_kink_is_real(self):
        # With zero biases a dead channel sits exactly on the ReLU kink: the
        # one-sided slopes differ, and the analytic value takes the left one.
        m = build_model(7, SMALL)
        rng = np.random.default_rng(107)
        x, t = rng.random((16, 16, 1)), rng.random((16, 16)) < 0.4
        _, grads = loss_and_gradients(m, x, t)
        p = m.params["conv1_2.b"]
        base, _ = loss_and_gradients(m, x, t)
        p[3] = -1e-6
        left, _ = loss_and_gradients(m, x, t)
        p[3] = 0.0
        assert grads["conv1_2.b"][3] == pytest.approx((base - left) / 1e-6, rel=1e-3)

    def test_final_bias_is_mean_residual(self):
        m = build_model(4, SMALL)
        rng = np.random.default_rng(61)
        x, t = rng.random((16, 16, 1)), rng.random((16, 16)) < 0.4
        probs, _ = forward(m, x)
        _, grads = loss_and_gradients(m, x, t)
        onehot = np.stack([~t, t], -1).astype(float)
        np.testing.assert_allclose(grads["deconv3.b"], (probs - onehot).mean(axis=(0, 1)), atol=1e-15)

    def test_confident_correct_region_has_no_gradient(self):
        m = build_model(5, SMALL)
        m.params["deconv3.b"][:] = [60.0, -60.0]  # background with certainty
        _, grads = loss_and_gradients(m, np.random.default_rng(62).random((16, 16, 1)), np.zeros((16, 16), bool))
        assert max(np.abs(g).max() for g in grads.values()) < 1e-12

    def test_cross_entropy_gradient(self):
        rng = np.random.default_rng(63)
        logits = rng.normal(size=(3, 4, 2))
        target = rng.integers(0, 2, (3, 4))
        e = np.exp(logits - logits.max(-1, keepdims=True))
        _, d = cross_entropy(e / e.sum(-1, keepdims=True), target)
        for idx in np.ndindex(logits.shape):
            def f(z):
                e = np.exp(z - z.max(-1, keepdims=True))
                return cross_entropy(e / e.sum(-1, keepdims=True), target)[0]
            lp, lm = logits.copy(), logits.copy()
            lp[idx] += 1e-6
            lm[idx] -= 1e-6
            assert d[idx] == pytest.approx((f(lp) - f(lm)) / 2e-6, abs=1e-8)


class TestAdam:
    def test_zero_gradient(self):
        params = {"a": np.array([1.0, -2.0])}
        s = AdamState()
        adam_step(params, {"a": np.zeros(2)}, s)
        assert params["a"].tolist() == [1.0, -2.0] and s.step == 1

    def test_first_step(self):
        params = {"a": np.array([0.5])}
        s = AdamState()
        adam_step(params, {"a": np.array([1.0])}, s)
        assert params["a"][0] == pytest.approx(0.5 - 1e-3 / (1 + 1e-8), abs=1e-15)

    def test_matches_reference_sequence(self):
        rng = np.random.default_rng(64)
        grads = rng.normal(size=(5, 3))
        params, s = {"a": np.zeros(3)}, AdamState(lr=0.01)
        m = v = np.zeros(3)
        ref = np.zeros(3)
        for t, g in enumerate(grads, 1):
            adam_step(params, {"a": g.copy()}, s)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref = ref - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(params["a"], ref, rtol=1e-12)

    def test_deterministic(self):
        def run():
            p, s = {"a": np.ones(4)}, AdamState()
            for g in np.random.default_rng(65).normal(size=(10, 4)):
                adam_step(p, {"a": g}, s)
            return p["a"]

        assert np.array_equal(run(), run())

    def test_shape_check(self):
        with pytest.raises(ValueError):
            adam_step({"a": np.zeros(2)}, {"a": np.zeros(3)}, AdamState())


def _toy_pairs(n, side=16, seed=66):
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        truth = rng.random((side, side)) < 0.2
        src = np.where(truth, 40, 220).astype(np.uint8)
        pairs.append(HdadPair(f"t{i}", src, truth))
    return pairs


class TestTraining:
    def test_zero_epochs(self):
        res = train(_toy_pairs(1), TrainConfig(epochs=0, seed=3), arch=SMALL)
        assert res.model.equals(build_model(3, SMALL)) and res.history == []

    def test_reproducible_across_threads(self):
        pairs = _toy_pairs(3, side=40)
        a = train(pairs, TrainConfig(epochs=3, batch_size=2, seed=4, threads=1), arch=SMALL)
        b = train(pairs, TrainConfig(epochs=3, batch_size=2, seed=4, threads=3), arch=SMALL)
        assert a.history == b.history and a.model.equals(b.model)

    def test_loss_goes_down(self):
        res = train(_toy_pairs(2), TrainConfig(epochs=40, batch_size=1, learning_rate=1e-2, seed=5), arch=SMALL)
        assert res.history[-1] < 0.5 * res.history[0]

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            train([], TrainConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)


class TestInference:
    def test_zero_model_all_foreground(self):
        m = build_model(0, SMALL)
        for v in m.params.values():
            v[...] = 0
        assert infer(m, np.full((20, 30), 200, np.uint8)).all()

    def test_any_size(self):
        m = build_model(0)
        out = infer(m, np.random.default_rng(67).integers(0, 256, (300, 300), dtype=np.uint8))
        assert out.shape == (300, 300) and out.dtype == bool

    def test_blockwise_consistency(self):
        m = build_model(6, SMALL)
        img = np.random.default_rng(68).integers(0, 256, (32, 16), dtype=np.uint8)
        full = infer(m, img, dtype=np.float64)
        probs, _ = forward(m, (img[16:, :] / 255.0)[..., None])
        assert np.array_equal(full[16:], probs[..., FOREGROUND] >= 0.5)

    def test_threads_identical(self):
        m = build_model(7)
        img = np.random.default_rng(69).integers(0, 256, (230, 460), dtype=np.uint8)
        assert np.array_equal(infer(m, img, threads=1), infer(m, img, threads=4))


class TestSerialization:
    def test_round_trip(self, tmp_path):
        m = build_model(8)
        path = tmp_path / "m.bin"
        save_model(m, path)
        back = load_model(path, expect=Architecture())
        for k, v in m.params.items():
            np.testing.assert_array_equal(back.params[k], v.astype(np.float32).astype(np.float64))
        assert dumps(back) == path.read_bytes()

    def test_bad_magic(self):
        data = bytearray(dumps(build_model(0, SMALL)))
        data[0] ^= 0xFF
        with pytest.raises(ModelFormatError, match="magic"):
            loads(bytes(data))

    def test_fingerprint_mismatch(self):
        data = dumps(build_model(0, SMALL))
        with pytest.raises(ModelFormatError, match="different architecture"):
            loads(data, expect=Architecture())

    def test_corrupted_fingerprint(self):
        data = bytearray(dumps(build_model(0, SMALL)))
        pos = data.index(b"}") + 1
        data[pos] ^= 1
        with pytest.raises(ModelFormatError):
            loads(bytes(data))

    def test_truncated(self):
        data = dumps(build_model(0, SMALL))
        with pytest.raises(ModelFormatError, match="truncated"):
            loads(data[:-3])

    def test_version(self):
        data = bytearray(dumps(build_model(0, SMALL)))
        data[len(MAGIC)] = 9
        with pytest.raises(ModelFormatError, match="version"):
            loads(bytes(data))

    def test_trailing_bytes(self):
        with pytest.raises(ModelFormatError):
            loads(dumps(build_model(0, SMALL)) + b"\0")
