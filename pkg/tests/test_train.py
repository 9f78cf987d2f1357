import csv
import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from biclip import augment
from biclip.autodiff import Tensor
from biclip.config import TrainConfig
from biclip.errors import CheckpointError, ConfigError, NonFiniteError
from biclip.model import BiCLIPModel, load_checkpoint, save_checkpoint
from biclip.optim import AdamW, OptimizerState, adamw_step, clip_grad_norm, cosine_warm_restart_lr
from biclip.train import METRICS_HEADER, batch_augmentation, format_metrics, total_loss, train


class TestTotalLoss:
    def test_all_zero(self):
        assert total_loss(0.0, 0.0, 0.0, 0.0) == 0.0

    def test_zero_weights(self):
        assert total_loss(0.7, 0.2, 0.1, 0.3, 0.0, 0.0, 0.0) == 0.7

    def test_composition_example(self):
        assert total_loss(0.5, 0.2, 0.1, 0.3, 1.0, 0.1, 0.1) == pytest.approx(0.74, abs=1e-12)

    def test_tensor_inputs_carry_gradient(self):
        parts = [Tensor(v, requires_grad=True, dtype=np.float64) for v in (0.5, 0.2, 0.1, 0.3)]
        total_loss(*parts, 1.0, 0.1, 0.1).backward()
        assert [p.grad.item() for p in parts] == pytest.approx([1.0, 1.0, 0.1, 0.1])

    def test_negative_weight(self):
        with pytest.raises(ConfigError):
            total_loss(1.0, 1.0, 1.0, 1.0, lambda_iac=-0.1)

    def test_negative_weight_rejected_by_config(self):
        with pytest.raises(ConfigError):
            TrainConfig(lambda_cycle=-1.0)


def scalar_param(value):
    return {"w": Tensor(np.array([value]), requires_grad=True, dtype=np.float64)}


class TestAdamW:
    def test_zero_grad_no_decay_unchanged(self):
        params = scalar_param(1.5)
        adamw_step(params, {"w": np.zeros(1)}, OptimizerState(lr=0.1, weight_decay=0.0))
        assert params["w"].data[0] == 1.5

    def test_first_step_moves_by_lr(self):
        params = scalar_param(1.0)
        adamw_step(params, {"w": np.ones(1)}, OptimizerState(lr=0.1, weight_decay=0.0))
        # bias-corrected m/sqrt(v) = 1/(1 + eps)
        assert params["w"].data[0] == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), abs=1e-12)

    def test_decoupled_decay(self):
        params = scalar_param(2.0)
        adamw_step(params, {"w": np.zeros(1)}, OptimizerState(lr=0.1, weight_decay=0.01))
        # a zero gradient leaves the Adam update at 0, only the decay acts
        assert params["w"].data[0] == pytest.approx(2.0 - 0.1 * 0.01 * 2.0, abs=1e-15)

    def test_hand_stepped_oracle(self):
        lr, b1, b2, eps, wd = 0.05, 0.9, 0.999, 1e-8, 0.01
        grads = [0.3, -1.2, 0.7]
        params = scalar_param(0.8)
        state = OptimizerState(lr=lr, weight_decay=wd)
        p, m, v = 0.8, 0.0, 0.0
        for t, g in enumerate(grads, 1):
            adamw_step(params, {"w": np.array([g])}, state)
            p -= lr * wd * p
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            p -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        assert params["w"].data[0] == pytest.approx(p, abs=1e-12)
        assert state.step == 3
        assert state.m["w"].shape == (1,)

    def test_nan_gradient_names_parameter(self):
        with pytest.raises(NonFiniteError, match="encoder.weight"):
            adamw_step({"encoder.weight": Tensor(np.ones(2))}, {"encoder.weight": np.array([1.0, np.nan])}, OptimizerState())

    def test_wrapper_zero_grad(self):
        params = scalar_param(1.0)
        params["w"].grad = np.ones(1)
        opt = AdamW(params.items(), lr=0.1, weight_decay=0.0)
        opt.zero_grad()
        assert params["w"].grad is None

    def test_clip_grad_norm(self):
        a = Tensor(np.zeros(2), requires_grad=True)
        a.grad = np.array([3.0, 4.0])
        assert clip_grad_norm([a], 1.0) == pytest.approx(5.0)
        assert np.linalg.norm(a.grad) == pytest.approx(1.0, rel=1e-5)


class TestScheduler:
    def test_cycle_start_is_max(self):
        assert cosine_warm_restart_lr(0, 10, 2, 1e-3, 1e-6) == 1e-3

    def test_cycle_end_is_min(self):
        assert cosine_warm_restart_lr(10 - 1e-12, 10, 2, 1e-3, 1e-6) == pytest.approx(1e-6, abs=1e-12)

    def test_half_cycle_is_midpoint(self):
        assert cosine_warm_restart_lr(5, 10, 2, 1e-3, 1e-6) == pytest.approx((1e-3 + 1e-6) / 2)

    @pytest.mark.parametrize("start", [0, 10, 30, 70, 150])
    def test_restarts_hit_max_exactly(self, start):
        assert cosine_warm_restart_lr(start, 10, 2, 2e-3, 1e-6) == 2e-3

    def test_second_cycle_is_twice_as_long(self):
        # cycle 2 spans [10, 30): its midpoint is 20
        assert cosine_warm_restart_lr(20, 10, 2, 1.0, 0.0) == pytest.approx(0.5)

    def test_constant_period(self):
        assert cosine_warm_restart_lr(25, 10, 1, 1.0, 0.0) == pytest.approx(0.5)

    @given(st.floats(0, 500), st.integers(1, 20), st.integers(1, 3))
    def test_bounded(self, step, t0, mult):
        lr = cosine_warm_restart_lr(step, t0, mult, 1e-3, 1e-6)
        assert 1e-6 - 1e-15 <= lr <= 1e-3


class TestConfig:
    def test_text_round_trip(self):
        cfg = TrainConfig(batch_size=4, lambda_iac=0.0, checkpoint_path="runs/x")
        assert TrainConfig.from_text(cfg.to_text()) == cfg

    def test_comments_and_blank_lines(self):
        cfg = TrainConfig.from_text("# toy\n\nepochs = 3  # short\nlr_initial = 1e-4\n")
        assert cfg.epochs == 3 and cfg.lr_initial == 1e-4

    @pytest.mark.parametrize("text", ["bogus = 1", "epochs 3", "epochs = three", "epochs = 2.5"])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            TrainConfig.from_text(text)

    def test_full_scale(self):
        cfg = TrainConfig.full_scale()
        assert (cfg.batch_size, cfg.epochs, cfg.lr_initial, cfg.image_side) == (16, 150, 1e-4, 224)

    def test_optimizer_defaults(self):
        cfg = TrainConfig()
        assert (cfg.lr_initial, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay) == (1e-4, 0.9, 0.999, 1e-8, 1e-2)
        assert (cfg.t_0, cfg.t_mult, cfg.lr_min) == (10, 2, 1e-6)


@pytest.fixture(scope="module")
def short_runs(tmp_path_factory, request):
    """Two identical short runs and one with all auxiliary weights at zero."""
    from biclip.data import generate_synthetic

    data = generate_synthetic(8, 16, 16, seed=11)
    val = generate_synthetic(4, 16, 16, seed=12, split="test")
    cfg = TrainConfig(image_side=16, d_raw=16, d_t=8, d_i=8, d_p=8, base_width=4, batch_size=4, epochs=2, lr_initial=2e-3)
    texts_before = data.texts().tobytes()
    dirs = {}
    for name, c in [("a", cfg), ("b", cfg), ("plain", cfg.replace(lambda_gen=0.0, lambda_iac=0.0, lambda_cycle=0.0))]:
        dirs[name] = tmp_path_factory.mktemp(name)
        train(c, data, val, out_dir=dirs[name])
    return dirs, data, texts_before


def read_metrics(path):
    return list(csv.DictReader(io.StringIO(path.read_text(encoding="utf-8"))))


class TestTrainLoop:
    def test_metrics_header_and_rows(self, short_runs):
        dirs, _, _ = short_runs
        text = (dirs["a"] / "metrics.csv").read_text(encoding="utf-8")
        assert text.splitlines()[0] == "epoch,lr,l_seg,l_gen,l_iac,l_cycle,l_total,val_dice,val_miou"
        rows = read_metrics(dirs["a"] / "metrics.csv")
        assert [r["epoch"] for r in rows] == ["1", "2"]
        assert float(rows[0]["lr"]) == 2e-3

    def test_deterministic_bytes(self, short_runs):
        dirs, _, _ = short_runs
        a, b = dirs["a"], dirs["b"]
        assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
        files = sorted(p.name for p in (a / "checkpoint").iterdir())
        assert files == sorted(p.name for p in (b / "checkpoint").iterdir())
        for name in files:
            assert (a / "checkpoint" / name).read_bytes() == (b / "checkpoint" / name).read_bytes()

    def test_logged_total_is_exact_composition(self, short_runs):
        dirs, _, _ = short_runs
        for row in read_metrics(dirs["a"] / "metrics.csv"):
            parts = [float(row[k]) for k in ("l_seg", "l_gen", "l_iac", "l_cycle")]
            assert all(p >= 0 for p in parts)
            assert abs(float(row["l_total"]) - total_loss(*parts, 1.0, 0.1, 0.1)) <= 1e-6

    def test_zero_weights_total_equals_seg(self, short_runs):
        dirs, _, _ = short_runs
        for row in read_metrics(dirs["plain"] / "metrics.csv"):
            assert row["l_total"] == row["l_seg"]

    def test_text_source_unchanged(self, short_runs):
        _, data, before = short_runs
        assert data.texts().tobytes() == before

    def test_checkpoint_round_trip(self, short_runs, tmp_path):
        dirs, data, _ = short_runs
        model = load_checkpoint(dirs["a"] / "checkpoint")
        save_checkpoint(model, tmp_path / "again")
        for p in (dirs["a"] / "checkpoint").iterdir():
            assert (tmp_path / "again" / p.name).read_bytes() == p.read_bytes()
        prob = model.predict_proba(data.images(), data.texts())
        assert prob.shape == (8, 1, 16, 16)

    def test_checkpoint_missing_weight(self, short_runs, tmp_path):
        dirs, _, _ = short_runs
        model = load_checkpoint(dirs["a"] / "checkpoint")
        save_checkpoint(model, tmp_path / "c")
        next((tmp_path / "c").glob("unet*.btsr")).unlink()
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "c")

    def test_format_metrics_nan(self):
        row = dict(epoch=1, lr=1e-3, l_seg=1.0, l_gen=0.5, l_iac=0.1, l_cycle=0.2, l_total=1.53, val_dice=float("nan"), val_miou=float("nan"))
        line = format_metrics([row]).splitlines()[1]
        assert line.split(",")[-2:] == ["nan", "nan"]
        assert len(line.split(",")) == len(METRICS_HEADER)

    def test_rejects_mismatched_data(self, tiny_config):
        from biclip.data import generate_synthetic

        with pytest.raises(ConfigError):
            train(tiny_config, generate_synthetic(2, 16, 5, seed=0))
        with pytest.raises(ConfigError):
            train(tiny_config, generate_synthetic(2, 32, 16, seed=0))

    def test_max_steps(self, tiny_config, tiny_data):
        assert train(tiny_config.replace(max_steps=3, epochs=5), tiny_data).steps == 3


class TestWeakBranchOnly:
    @pytest.mark.parametrize("strong_grad", [True, False])
    def test_strong_view_does_not_touch_prediction(self, tiny_config, tiny_data, strong_grad):
        model = BiCLIPModel(tiny_config)
        batch = tiny_data.ids[:4]
        spatial, weak, strong = batch_augmentation(tiny_config, batch, 0)
        other = [augment.AppearanceParams(offset=0.25, scale=0.7, gamma=1.4, noise_sigma=0.05, noise_seed=99)] * 4
        args = (tiny_data.images()[:4], tiny_data.masks()[:4], tiny_data.texts()[:4], spatial, weak)
        a = model.step_outputs(*args, strong, strong_grad=strong_grad)
        b = model.step_outputs(*args, other, strong_grad=strong_grad)
        assert not np.array_equal(a.views.x_s.data, b.views.x_s.data)
        assert a.y_hat.data.tobytes() == b.y_hat.data.tobytes()

    def test_all_components_receive_gradient(self, tiny_config, tiny_data):
        model = BiCLIPModel(tiny_config)
        # the zero-initialised fusion output blocks the image path until the first update
        fc2 = model.g_bmf.fc2.weight
        fc2.data = np.random.default_rng(0).normal(0, 0.1, fc2.shape).astype(fc2.dtype)
        spatial, weak, strong = batch_augmentation(tiny_config, tiny_data.ids[:4], 0)
        out = model.step_outputs(tiny_data.images()[:4], tiny_data.masks()[:4], tiny_data.texts()[:4], spatial, weak, strong)
        c = out.losses
        total_loss(c.l_seg, c.l_gen, c.l_iac, c.l_cycle).backward()
        for name in ("text_proj", "image_encoder", "generator", "h", "unet", "proj_head", "pred_head"):
            grads = [p.grad for n, p in model.named_parameters() if n.startswith(name)]
            assert any(g is not None and np.any(g != 0) for g in grads), name
