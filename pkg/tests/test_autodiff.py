import math

import numpy as np
import pytest

import pcalign.autodiff as ad
from pcalign.autodiff import (
    AdamState,
    BatchNormState,
    Tape,
    Tensor,
    adam_step,
    batchnorm,
    dropout,
    huber,
    linear,
    load_checkpoint,
    maxpool_points,
    relu,
    save_checkpoint,
    softmax_cross_entropy,
    zero_grads,
)


def fd_gradient(f, arr, eps):
    """Independent oracle: central finite differences of scalar f w.r.t. arr,
    perturbing the array in place."""
    grad = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f())
        flat[i] = orig - eps
        fm = float(f())
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def max_rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / scale))


def check_grads(build_loss, params, eps, tol):
    """backward() result vs finite differences for each named array."""
    for p in params.values():
        p.grad = None
    with Tape() as tape:
        loss = build_loss()
    tape.backward(loss)
    for name, p in params.items():
        got = p.grad if p.grad is not None else np.zeros_like(p.data)
        want = fd_gradient(lambda: build_loss().item(), p.data, eps)
        assert max_rel_err(got, want) <= tol, f"gradient mismatch for {name}"


class TestCoreOps:
    def test_add_mul_diamond(self):
        # z = x*y + x exercises grad accumulation across two uses of x
        x = Tensor([2.0], requires_grad=True, dtype=np.float64)
        y = Tensor([3.0], requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            z = ad.tsum(x * y + x)
        tape.backward(z)
        np.testing.assert_allclose(x.grad, [4.0])  # y + 1
        np.testing.assert_allclose(y.grad, [2.0])  # x

    def test_broadcast_unbroadcast(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.normal(size=(3, 1)), requires_grad=True, dtype=np.float64)
        b = Tensor(rng.normal(size=(1, 4)), requires_grad=True, dtype=np.float64)
        check_grads(lambda: ad.tsum((a + b) * b), {"a": a, "b": b}, eps=1e-6, tol=1e-6)

    def test_matmul_concat_getitem_reshape(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True, dtype=np.float64)
        w = Tensor(rng.normal(size=(4, 5)), requires_grad=True, dtype=np.float64)

        def loss():
            h = ad.matmul(x, w)
            both = ad.concat([h, h * 0.5], axis=2)
            picked = both[:, 1:3, ::2]
            return ad.tsum(ad.reshape(picked, (-1,)))

        check_grads(loss, {"x": x, "w": w}, eps=1e-6, tol=1e-6)

    def test_row_gather_gradient(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(4, 6)), requires_grad=True, dtype=np.float64)
        idx = np.array([5, 0, 3, 3])
        check_grads(
            lambda: ad.tsum(x[np.arange(4), idx] * 2.0), {"x": x}, eps=1e-6, tol=1e-6
        )

    def test_trig_and_reductions(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True, dtype=np.float64)
        check_grads(
            lambda: ad.tsum(ad.sin(x) * ad.cos(x)) + ad.mean(x * x),
            {"x": x},
            eps=1e-6,
            tol=1e-6,
        )
        check_grads(
            lambda: ad.tsum(ad.mean(x, axis=0) * ad.tsum(x, axis=0)),
            {"x": x},
            eps=1e-6,
            tol=1e-6,
        )

    def test_where_routes_gradient(self):
        a = Tensor([1.0, 2.0], requires_grad=True, dtype=np.float64)
        b = Tensor([10.0, 20.0], requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            out = ad.tsum(ad.where(np.array([True, False]), a, b))
        tape.backward(out)
        np.testing.assert_array_equal(a.grad, [1.0, 0.0])
        np.testing.assert_array_equal(b.grad, [0.0, 1.0])

    def test_stop_gradient_blocks(self):
        x = Tensor([2.0], requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            y = ad.tsum(ad.stop_gradient(x) * x)
        tape.backward(y)
        np.testing.assert_allclose(x.grad, [2.0])  # only the live path

    def test_no_tape_means_no_recording(self):
        x = Tensor([1.0], requires_grad=True)
        y = x * 3.0
        assert not y._traced
        assert x.grad is None

    def test_finite_check_hook(self):
        ad.set_finite_check(True)
        try:
            big = Tensor([1e308], dtype=np.float64)
            with np.errstate(over="ignore"):
                with pytest.raises(FloatingPointError):
                    ad.mul(big, big)
        finally:
            ad.set_finite_check(False)

    def test_backward_rejects_nonscalar(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = x * 2.0
        with pytest.raises(ValueError):
            tape.backward(y)

    def test_use_dtype_context(self):
        assert Tensor([1.2]).dtype == np.float32
        with ad.use_dtype(np.float64):
            assert Tensor([1.2]).dtype == np.float64
        assert Tensor([1.2]).dtype == np.float32


class TestLinearRelu:
    def test_identity_weights(self):
        x = Tensor(np.random.default_rng(0).normal(size=(4, 3)), dtype=np.float64)
        out = linear(x, Tensor(np.eye(3), dtype=np.float64), Tensor(np.zeros(3), dtype=np.float64))
        np.testing.assert_allclose(out.data, x.data)

    def test_one_by_one(self):
        out = linear(Tensor([[2.0]]), Tensor([[3.0]]), Tensor([1.0]))
        assert out.item() == pytest.approx(7.0)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))), Tensor(np.zeros(5)))

    def test_finite_difference_float32(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=4), requires_grad=True)
        check_grads(
            lambda: ad.tsum(relu(linear(x, w, b))),
            {"x": x, "w": w, "b": b},
            eps=1e-3,
            tol=1e-3,
        )

    def test_finite_difference_float64(self):
        with ad.use_dtype(np.float64):
            rng = np.random.default_rng(5)
            x = Tensor(rng.normal(size=(2, 6, 3)), requires_grad=True)
            w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
            b = Tensor(rng.normal(size=4), requires_grad=True)
            # keep pre-activations away from relu's kink
            check_grads(
                lambda: ad.tsum(relu(linear(x, w, b) + 5.0)),
                {"x": x, "w": w, "b": b},
                eps=1e-6,
                tol=1e-6,
            )

    def test_relu_halves(self):
        x = Tensor([-2.0, 0.0, 3.0], requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            y = ad.tsum(relu(x))
        assert list(y.data.reshape(-1)) == [3.0] or y.item() == 3.0
        tape.backward(y)
        np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])  # subgradient 0 at 0


class TestMaxpool:
    def test_single_point_squeezes(self):
        x = Tensor(np.arange(6, dtype=np.float64).reshape(1, 1, 6))
        np.testing.assert_array_equal(maxpool_points(x).data, x.data[:, 0, :])

    def test_ramp_picks_known_positions(self):
        data = np.zeros((1, 4, 2))
        data[0, :, 0] = [1.0, 3.0, 2.0, 0.0]
        data[0, :, 1] = [0.0, 1.0, 2.0, 3.0]
        out = maxpool_points(Tensor(data, dtype=np.float64))
        np.testing.assert_array_equal(out.data, [[3.0, 3.0]])

    def test_tie_routes_to_lowest_index(self):
        data = np.zeros((1, 3, 1))
        data[0, :, 0] = [5.0, 5.0, 1.0]
        x = Tensor(data, requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            y = ad.tsum(maxpool_points(x))
        tape.backward(y)
        np.testing.assert_array_equal(x.grad[0, :, 0], [1.0, 0.0, 0.0])

    def test_finite_difference_unique_maxima(self):
        rng = np.random.default_rng(6)
        # well-separated values keep the argmax stable under the probe
        base = rng.permutation(24).astype(np.float64).reshape(2, 4, 3)
        x = Tensor(base, requires_grad=True, dtype=np.float64)
        check_grads(lambda: ad.tsum(maxpool_points(x) * 1.5), {"x": x}, eps=1e-4, tol=1e-6)

    def test_empty_point_axis_rejected(self):
        with pytest.raises(ValueError):
            maxpool_points(Tensor(np.zeros((1, 0, 3))))


class TestBatchnorm:
    def test_train_normalizes(self):
        rng = np.random.default_rng(7)
        state = BatchNormState.create(5, dtype=np.float64)
        out = batchnorm(Tensor(rng.normal(2.0, 3.0, size=(64, 5)), dtype=np.float64), state, "train")
        np.testing.assert_allclose(out.data.mean(axis=0), 0.0, atol=1e-3)
        np.testing.assert_allclose(out.data.var(axis=0), 1.0, atol=1e-3)

    def test_constant_feature_outputs_zero(self):
        state = BatchNormState.create(2, dtype=np.float64)
        out = batchnorm(Tensor(np.full((8, 2), 3.7), dtype=np.float64), state, "train")
        np.testing.assert_allclose(out.data, 0.0, atol=1e-6)

    def test_infer_converges_to_train(self):
        rng = np.random.default_rng(8)
        state = BatchNormState.create(3, dtype=np.float64)
        state.momentum = 0.5
        batch = Tensor(rng.normal(1.0, 2.0, size=(32, 3)), dtype=np.float64)
        for _ in range(40):
            trained = batchnorm(batch, state, "train")
        inferred = batchnorm(batch, state, "infer")
        np.testing.assert_allclose(inferred.data, trained.data, atol=1e-3)

    def test_small_batch_rejected(self):
        state = BatchNormState.create(3)
        with pytest.raises(ValueError):
            batchnorm(Tensor(np.zeros((1, 3))), state, "train")

    def test_running_update_rule(self):
        state = BatchNormState.create(1, dtype=np.float64)
        state.momentum = 0.9
        x = np.array([[1.0], [3.0]])
        batchnorm(Tensor(x, dtype=np.float64), state, "train")
        np.testing.assert_allclose(state.running_mean, [0.9 * 0.0 + 0.1 * 2.0])
        np.testing.assert_allclose(state.running_var, [0.9 * 1.0 + 0.1 * 1.0])  # biased var of {1,3} is 1

    def test_train_mode_finite_difference(self):
        with ad.use_dtype(np.float64):
            rng = np.random.default_rng(9)
            state = BatchNormState.create(3)
            x = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
            state.gamma.data = rng.normal(1.0, 0.2, size=3)
            state.beta.data = rng.normal(size=3)
            check_grads(
                lambda: ad.tsum(batchnorm(x, state, "train") * rng_weights),
                {"x": x, "gamma": state.gamma, "beta": state.beta},
                eps=1e-6,
                tol=1e-6,
            )

    def test_infer_mode_finite_difference(self):
        with ad.use_dtype(np.float64):
            rng = np.random.default_rng(10)
            state = BatchNormState.create(4)
            state.running_mean = rng.normal(size=4)
            state.running_var = rng.uniform(0.5, 2.0, size=4)
            x = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
            check_grads(
                lambda: ad.tsum(batchnorm(x, state, "infer")),
                {"x": x, "gamma": state.gamma, "beta": state.beta},
                eps=1e-6,
                tol=1e-6,
            )


# fixed mixing weights so the batchnorm loss isn't trivially zero-gradient
rng_weights = np.random.default_rng(99).normal(size=(6, 3))


class TestDropout:
    def test_rate_zero_identity(self):
        x = Tensor([1.0, 2.0])
        assert dropout(x, 0.0, "train", np.random.default_rng(0)) is x

    def test_infer_identity(self):
        x = Tensor([1.0, 2.0])
        assert dropout(x, 0.7, "infer", np.random.default_rng(0)) is x

    def test_train_is_unbiased(self):
        rng = np.random.default_rng(11)
        x = Tensor(np.full(100_000, 2.0), dtype=np.float64)
        out = dropout(x, 0.7, "train", rng)
        assert out.data.mean() == pytest.approx(2.0, rel=0.02)

    def test_gradient_masks_with_same_seed(self):
        x = Tensor(np.ones(1000), requires_grad=True, dtype=np.float64)

        def loss():
            return ad.tsum(dropout(x, 0.5, "train", np.random.default_rng(42)))

        check_grads(loss, {"x": x}, eps=1e-6, tol=1e-6)

    def test_bad_rate_rejected(self):
        with pytest.raises(ValueError):
            dropout(Tensor([1.0]), 1.0, "train", np.random.default_rng(0))


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        out = softmax_cross_entropy(Tensor(np.zeros((3, 50))), np.array([0, 17, 49]))
        np.testing.assert_allclose(out.data, math.log(50.0), rtol=1e-6)

    def test_saturated_logit(self):
        logits = np.zeros((1, 4))
        logits[0, 2] = 50.0
        out = softmax_cross_entropy(Tensor(logits, dtype=np.float64), np.array([2]))
        assert out.item() == pytest.approx(0.0, abs=1e-12)

    def test_gradient_is_softmax_minus_onehot(self):
        rng = np.random.default_rng(12)
        logits = Tensor(rng.normal(size=(4, 6)), requires_grad=True, dtype=np.float64)
        targets = np.array([1, 0, 5, 3])
        with Tape() as tape:
            loss = ad.tsum(softmax_cross_entropy(logits, targets))
        tape.backward(loss)
        z = logits.data - logits.data.max(axis=1, keepdims=True)
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        p[np.arange(4), targets] -= 1.0
        np.testing.assert_allclose(logits.grad, p, atol=1e-12)
        want = fd_gradient(
            lambda: ad.tsum(softmax_cross_entropy(logits, targets)).item(),
            logits.data,
            1e-6,
        )
        assert max_rel_err(logits.grad, want) <= 1e-6

    def test_target_out_of_range(self):
        with pytest.raises(ValueError):
            softmax_cross_entropy(Tensor(np.zeros((1, 3))), np.array([3]))

    def test_huge_logits_stay_finite(self):
        out = softmax_cross_entropy(Tensor(np.full((1, 3), 1e4), dtype=np.float64), np.array([0]))
        assert np.isfinite(out.data).all()


class TestHuber:
    def test_pinned_values(self):
        assert huber(Tensor([0.0]), 1.0).data[0] == 0.0
        assert huber(Tensor([1.0]), 1.0).data[0] == pytest.approx(0.5)
        assert huber(Tensor([3.0]), 2.0).data[0] == pytest.approx(4.0)
        assert huber(Tensor([-3.0]), 2.0).data[0] == pytest.approx(4.0)

    def test_gradient_both_regimes(self):
        x = Tensor([0.5, -0.5, 3.0, -4.0], requires_grad=True, dtype=np.float64)
        check_grads(lambda: ad.tsum(huber(x, 1.0)), {"x": x}, eps=1e-6, tol=1e-6)

    def test_bad_delta(self):
        with pytest.raises(ValueError):
            huber(Tensor([1.0]), 0.0)


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = Tensor([1.0, 2.0], requires_grad=True, dtype=np.float64)
        p.grad = np.zeros(2)
        state = AdamState(lr=0.1)
        adam_step({"p": p}, state)
        np.testing.assert_array_equal(p.data, [1.0, 2.0])

    def test_first_step_is_signed_lr(self):
        p = Tensor([1.0, 1.0], requires_grad=True, dtype=np.float64)
        p.grad = np.array([0.7, -0.2])
        adam_step({"p": p}, AdamState(lr=0.01))
        np.testing.assert_allclose(p.data, [1.0 - 0.01, 1.0 + 0.01], atol=1e-7)

    def test_three_steps_match_reference(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        p = Tensor([1.0], requires_grad=True, dtype=np.float64)
        state = AdamState(lr=lr)
        # hand-rolled reference on f(w) = w^2, grad 2w
        w, m, v = 1.0, 0.0, 0.0
        for t in range(1, 4):
            g = 2.0 * w
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            w -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
            p.grad = np.array([2.0 * p.data[0]])
            adam_step({"p": p}, state)
            assert p.data[0] == pytest.approx(w, abs=1e-12)

    def test_none_grad_skipped(self):
        p = Tensor([5.0], requires_grad=True, dtype=np.float64)
        p.grad = None
        adam_step({"p": p}, AdamState(lr=0.1))
        assert p.data[0] == 5.0

    def test_shape_mismatch_raises(self):
        p = Tensor([1.0, 2.0], requires_grad=True)
        p.grad = np.zeros(3, dtype=np.float32)
        with pytest.raises(ValueError):
            adam_step({"p": p}, AdamState(lr=0.1))

    def test_zero_grads_helper(self):
        p = Tensor([1.0], requires_grad=True)
        p.grad = np.ones(1, dtype=np.float32)
        zero_grads({"p": p})
        assert p.grad is None


class TestTapeContract:
    def test_replay_reproduces_forward(self):
        rng = np.random.default_rng(13)
        x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        b = Tensor(np.zeros(2), requires_grad=True)

        def forward():
            return ad.tsum(relu(linear(x, w, b)))

        with Tape() as tape:
            first = forward()
        tape.backward(first)
        second = forward()
        assert first.item() == second.item()

    def test_determinism_ten_steps(self):
        def run():
            ws = Tensor(np.linspace(-1, 1, 6).reshape(3, 2), requires_grad=True)
            state = AdamState(lr=0.05)
            losses = []
            data = np.random.default_rng(21).normal(size=(8, 3)).astype(np.float32)
            for _ in range(10):
                zero_grads({"w": ws})
                with Tape() as tape:
                    loss = ad.mean(huber(ad.matmul(Tensor(data), ws), 1.0))
                tape.backward(loss)
                adam_step({"w": ws}, state)
                losses.append(loss.item())
            return losses

        assert run() == run()

    def test_params_registry(self):
        x = Tensor(np.ones(3), requires_grad=True)
        c = Tensor(np.ones(3))
        with Tape() as tape:
            ad.tsum(x * c)
        assert [t is x for t in tape.params.values()] == [True]


class TestComposites:
    def pointnet_block(self, x, ws, bs):
        h = x
        for w, b in zip(ws, bs):
            h = relu(linear(h, w, b))
        return maxpool_points(h)

    def margins_ok(self, x, ws, bs, margin):
        """The finite-difference oracle is only valid away from relu kinks
        and max-pool ties; reject draws that sit within the probe radius."""
        h = x.data
        for w, b in zip(ws, bs):
            pre = h @ w.data + b.data
            if np.abs(pre).min() < margin:
                return False
            h = np.maximum(pre, 0)
        top2 = np.sort(h, axis=1)[:, -2:, :]
        return (top2[:, 1, :] - top2[:, 0, :]).min() > margin

    def test_pointnet_block_fd_float32(self):
        # conv stack + pool, the composite the aligner branches are built from
        checked, seed = 0, 0
        while checked < 5:
            seed += 1
            rng = np.random.default_rng(100 + seed)
            x = Tensor(rng.normal(size=(2, 6, 3)), requires_grad=True)
            ws = [
                Tensor(rng.normal(scale=0.5, size=(3, 8)), requires_grad=True),
                Tensor(rng.normal(scale=0.5, size=(8, 4)), requires_grad=True),
            ]
            bs = [
                Tensor(rng.normal(scale=0.1, size=8), requires_grad=True),
                Tensor(rng.normal(scale=0.1, size=4), requires_grad=True),
            ]
            if not self.margins_ok(x, ws, bs, margin=5e-3):
                continue
            checked += 1
            params = {"x": x, "w0": ws[0], "w1": ws[1], "b0": bs[0], "b1": bs[1]}
            check_grads(
                lambda: ad.tsum(self.pointnet_block(x, ws, bs)),
                params,
                eps=1e-3,
                tol=1e-3,
            )

    def test_mlp_fd_float64(self):
        with ad.use_dtype(np.float64):
            rng = np.random.default_rng(14)
            x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
            w0 = Tensor(rng.normal(scale=0.5, size=(4, 8)), requires_grad=True)
            b0 = Tensor(np.zeros(8), requires_grad=True)
            w1 = Tensor(rng.normal(scale=0.5, size=(8, 2)), requires_grad=True)
            b1 = Tensor(np.zeros(2), requires_grad=True)
            check_grads(
                lambda: ad.tsum(linear(relu(linear(x, w0, b0)), w1, b1)),
                {"x": x, "w0": w0, "b0": b0, "w1": w1, "b1": b1},
                eps=1e-6,
                tol=1e-6,
            )


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(15)
        tensors = {
            "layer.w": rng.normal(size=(4, 3)).astype(np.float32),
            "layer.b": rng.normal(size=3).astype(np.float32),
            "bn.running_var": rng.uniform(0.5, 2.0, size=3),
        }
        config = {"bins": 50, "n_points": 512, "note": "round-trip"}
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, tensors, config)
        loaded, cfg = load_checkpoint(path)
        assert cfg == config
        assert set(loaded) == set(tensors)
        for name, arr in tensors.items():
            assert loaded[name].dtype == arr.dtype
            assert loaded[name].tobytes() == arr.tobytes()

    def test_accepts_tensors(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, {"p": Tensor([1.5, 2.5], dtype=np.float64)}, {})
        loaded, _ = load_checkpoint(path)
        np.testing.assert_array_equal(loaded["p"], [1.5, 2.5])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 32)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, {"p": np.ones(2, dtype=np.float32)}, {})
        blob = bytearray(path.read_bytes())
        blob[8] = 99  # version field sits right after the magic
        path.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(path)
