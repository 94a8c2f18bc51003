import numpy as np
import pytest

from clavage.nnet import (
    AdamState,
    ModelConfig,
    MultiBranchRegressor,
    TrainConfig,
    TrainingDivergedError,
    adam_step,
    evaluate_mae,
    gradient_check,
    load_checkpoint,
    one_cycle_lr,
    save_checkpoint,
    train_two_stage,
)
from clavage.nnet.autodiff import Tensor
from clavage.nnet import autodiff as ad


TINY = ModelConfig(n_branches=2, n_features=8, conv_channels=(4, 8), fusion_depth=2, init_seed=1)


def tiny_model(seed=1, n_branches=2):
    return MultiBranchRegressor(
        ModelConfig(n_branches=n_branches, n_features=8, conv_channels=(4, 8),
                    fusion_depth=2, init_seed=seed)
    )


def linear_task(n, rng, n_branches=2, size=12):
    """Age is an affine function of the (constant) slice intensity."""
    v = rng.random(n)
    x = np.repeat(v[:, None, None, None], n_branches, axis=1)
    x = np.broadcast_to(x, (n, n_branches, size, size)).copy()
    y = 14.0 + 12.0 * v
    return x, y


class TestOneCycle:
    def test_anchor_values_exact(self):
        eta = 0.037
        for total in (10, 33, 400):
            peak = min(max(1, round(0.3 * total)), total - 1)
            assert abs(one_cycle_lr(0, total, eta) - eta / 25) < 1e-12 * eta
            assert abs(one_cycle_lr(peak, total, eta) - eta) < 1e-12 * eta
            assert abs(one_cycle_lr(total, total, eta) - eta / 1000) < 1e-12 * eta

    def test_single_rise_and_fall(self):
        total = 100
        lrs = [one_cycle_lr(s, total, 0.01) for s in range(total + 1)]
        peak = int(np.argmax(lrs))
        assert all(lrs[i] <= lrs[i + 1] + 1e-15 for i in range(peak))
        assert all(lrs[i] >= lrs[i + 1] - 1e-15 for i in range(peak, total))

    def test_out_of_range_step(self):
        with pytest.raises(ValueError):
            one_cycle_lr(-1, 10, 0.01)
        with pytest.raises(ValueError):
            one_cycle_lr(11, 10, 0.01)


class TestAdam:
    def cfg(self):
        return TrainConfig()

    def test_zero_gradient_no_change(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.zeros(2)
        state = AdamState()
        adam_step({"p": p}, state, lr=0.1, cfg=self.cfg())
        assert np.array_equal(p.data, [1.0, -2.0])

    def test_constant_gradient_matches_hand_unroll(self):
        cfg = self.cfg()
        g = 0.73
        lr = 0.05
        p = Tensor(np.array([2.0]), requires_grad=True)
        state = AdamState()
        # independent hand recurrence
        m = v = 0.0
        val = 2.0
        for t in range(1, 4):
            m = cfg.adam_beta1 * m + (1 - cfg.adam_beta1) * g
            v = cfg.adam_beta2 * v + (1 - cfg.adam_beta2) * g * g
            m_hat = m / (1 - cfg.adam_beta1**t)
            v_hat = v / (1 - cfg.adam_beta2**t)
            val = val - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
            p.grad = np.array([g])
            adam_step({"p": p}, state, lr=lr, cfg=cfg)
            assert abs(p.data[0] - val) < 1e-12

    def test_first_step_magnitude_approaches_lr_sign(self):
        cfg = self.cfg()
        lr = 0.01
        for scale in (1.0, 1e3, 1e6):
            p = Tensor(np.array([0.0]), requires_grad=True)
            p.grad = np.array([-3.3 * scale])
            adam_step({"p": p}, AdamState(), lr=lr, cfg=cfg)
            assert p.data[0] > 0
            assert abs(abs(p.data[0]) - lr) < lr * 1e-3 / min(scale, 1e3)

    def test_nonfinite_gradient_aborts_with_name(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        p.grad = np.array([np.nan])
        with pytest.raises(TrainingDivergedError, match="fusion.out.w"):
            adam_step({"fusion.out.w": p}, AdamState(), lr=0.1, cfg=self.cfg())


class TestForwardContract:
    def test_zero_final_layer_outputs_zero(self):
        model = tiny_model()
        model.fusion.out.w.data[:] = 0.0
        model.fusion.out.b.data[:] = 0.0
        rng = np.random.default_rng(0)
        x = rng.random((3, 2, 12, 12))
        assert np.array_equal(model.predict(x), np.zeros(3))

    def test_eval_forward_deterministic(self):
        model = tiny_model()
        x = np.random.default_rng(1).random((2, 2, 12, 12))
        assert np.array_equal(model.predict(x), model.predict(x))

    def test_slice_order_matters(self):
        model = tiny_model()
        x = np.random.default_rng(2).random((1, 2, 12, 12))
        swapped = x[:, ::-1].copy()
        assert not np.allclose(model.predict(x), model.predict(swapped))

    def test_shape_mismatch_rejected(self):
        model = tiny_model()
        with pytest.raises(ValueError):
            model.forward(np.zeros((1, 3, 12, 12)))


class TestGradientCheck:
    def test_conv_relu_network_below_1e4(self):
        model = tiny_model()
        x = np.random.default_rng(3).random((1, 2, 12, 12))
        assert gradient_check(model, x, entries_per_param=3, seed=0) < 1e-4

    def test_dropout_eval_mode_matches_plain(self):
        model = tiny_model()
        x = np.random.default_rng(4).random((2, 2, 12, 12))
        feats = model.branch_features(x)
        plain = model.fusion(feats, training=False)
        ad.backward(plain)
        # dropout layers are identity in eval mode: same forward, same grads
        again = model.fusion(model.branch_features(x), training=False)
        assert np.array_equal(plain.data, again.data)


class TestTwoStageTraining:
    def data(self, n=24, seed=5):
        return linear_task(n, np.random.default_rng(seed))

    def test_stage1_freezes_all_branch_parameters(self):
        model = tiny_model()
        before = model.state_arrays()
        x, y = self.data()
        cfg = TrainConfig(eta1=0.05, batch_size=4, max_epochs=0, seed=0)
        train_two_stage(model, (x, y), (x, y), cfg)
        after = model.state_arrays()
        for name in before:
            if name.startswith("branch"):
                assert np.array_equal(before[name], after[name]), name
        assert any(
            not np.array_equal(before[n], after[n]) for n in before if n.startswith("fusion")
        )

    def test_stage2_freezes_early_conv_blocks(self):
        model = tiny_model()
        before = model.state_arrays()
        x, y = self.data()
        cfg = TrainConfig(eta1=0.05, batch_size=4, max_epochs=3, early_stop_patience=5, seed=0)
        train_two_stage(model, (x, y), (x, y), cfg)
        after = model.state_arrays()
        last = len(model.config.conv_channels) - 1
        for name in before:
            if ".conv" in name and f".conv{last}." not in name:
                assert np.array_equal(before[name], after[name]), name

    def test_linear_task_reaches_low_mae(self):
        model = MultiBranchRegressor(
            ModelConfig(n_branches=2, n_features=32, conv_channels=(4, 8, 16),
                        fusion_depth=2, drop_hidden=0.0, drop_out=0.0, init_seed=1)
        )
        rng = np.random.default_rng(6)
        x_train, y_train = linear_task(256, rng)
        x_val, y_val = linear_task(64, rng)
        cfg = TrainConfig(eta1=0.3, batch_size=4, max_epochs=30, early_stop_patience=30, seed=1)
        train_two_stage(model, (x_train, y_train), (x_val, y_val), cfg)
        assert evaluate_mae(model, x_val, y_val) < 0.1

    def test_bitwise_reproducible(self):
        x, y = self.data()
        cfg = TrainConfig(eta1=0.05, batch_size=4, max_epochs=2, seed=3)
        m1 = tiny_model()
        train_two_stage(m1, (x, y), (x, y), cfg)
        m2 = tiny_model()
        train_two_stage(m2, (x, y), (x, y), cfg)
        s1, s2 = m1.state_arrays(), m2.state_arrays()
        assert all(np.array_equal(s1[k], s2[k]) for k in s1)

    def test_tiny_lr_stage1_does_not_increase_loss(self):
        model = tiny_model()
        x, y = self.data(n=16)
        def eval_mse():
            return float(np.mean((model.predict(x) - y) ** 2))
        before = eval_mse()
        cfg = TrainConfig(eta1=0.05 / 100, batch_size=16, max_epochs=0, seed=2)
        train_two_stage(model, (x, y), (x, y), cfg)
        assert eval_mse() <= before + 1e-9

    def test_empty_dataset_rejected(self):
        model = tiny_model()
        with pytest.raises(ValueError):
            train_two_stage(model, (np.zeros((0, 2, 12, 12)), np.zeros(0)),
                            (np.zeros((1, 2, 12, 12)), np.zeros(1)), TrainConfig())

    def test_nan_weight_aborts(self):
        model = tiny_model()
        model.fusion.out.w.data[0, 0] = np.nan
        x, y = self.data(n=8)
        with pytest.raises(TrainingDivergedError):
            train_two_stage(model, (x, y), (x, y), TrainConfig(max_epochs=1))


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        model = tiny_model(seed=9)
        p1 = tmp_path / "model.ckpt"
        save_checkpoint(model, p1)
        again = load_checkpoint(p1)
        p2 = tmp_path / "model2.ckpt"
        save_checkpoint(again, p2)
        assert p1.read_bytes() == p2.read_bytes()
        x = np.random.default_rng(5).random((2, 2, 12, 12))
        assert np.allclose(model.predict(x), again.predict(x), atol=1e-4)

    def test_manifest_mismatch_rejected(self, tmp_path):
        p = tmp_path / "bad.ckpt"
        p.write_bytes(b"NOTMAGIC" + b"\0" * 16)
        with pytest.raises(ValueError):
            load_checkpoint(p)
