"""Loss assembly and the training loop."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from biclip import augment
from biclip.config import TrainConfig
from biclip.data.dataset import Dataset, subsample
from biclip.errors import ConfigError, NonFiniteError
from biclip.model import BiCLIPModel, save_checkpoint
from biclip.optim import AdamW, clip_grad_norm, cosine_warm_restart_lr

logger = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "lr", "l_seg", "l_gen", "l_iac", "l_cycle", "l_total", "val_dice", "val_miou")


@dataclass
class LossBreakdown:
    l_seg: float
    l_gen: float
    l_iac: float
    l_cycle: float
    lambda_gen: float
    lambda_iac: float
    lambda_cycle: float
    l_total: float


def total_loss(l_seg, l_gen, l_iac, l_cycle, lambda_gen=1.0, lambda_iac=0.1, lambda_cycle=0.1):
    """L_seg + lambda_gen L_gen + lambda_IAC L_IAC + lambda_cycle L_cycle (tensors or floats)."""
    if min(lambda_gen, lambda_iac, lambda_cycle) < 0:
        raise ConfigError("loss weights must be non-negative")
    return l_seg + lambda_gen * l_gen + lambda_iac * l_iac + lambda_cycle * l_cycle


@dataclass
class TrainResult:
    model: BiCLIPModel
    history: list[dict] = field(default_factory=list)
    steps: int = 0
    checkpoint: Path | None = None


def _fmt(x: float) -> str:
    return "nan" if x != x else format(x, ".10g")


def format_metrics(history: list[dict]) -> str:
    lines = [",".join(METRICS_HEADER)]
    for row in history:
        lines.append(",".join(str(row["epoch"]) if k == "epoch" else _fmt(row[k]) for k in METRICS_HEADER))
    return "\n".join(lines) + "\n"


def batch_augmentation(cfg: TrainConfig, ids, epoch: int):
    side = cfg.image_side
    spatial, weak, strong = [], [], []
    for sid in ids:
        spatial.append(augment.draw_spatial(np.random.default_rng(augment.derive_seed(cfg.seed, sid, "spatial", epoch)), side, side))
        weak.append(augment.draw_weak(np.random.default_rng(augment.derive_seed(cfg.seed, sid, "weak", epoch))))
        strong.append(augment.draw_strong(np.random.default_rng(augment.derive_seed(cfg.seed, sid, "strong", epoch))))
    return spatial, weak, strong


def train(
    config: TrainConfig,
    data: Dataset,
    val: Dataset | None = None,
    out_dir: str | os.PathLike | None = None,
    model: BiCLIPModel | None = None,
) -> TrainResult:
    """Train on ``data`` and log one metrics row per epoch.

    With ``out_dir`` the final weights go to ``out_dir/checkpoint`` and the
    log to ``out_dir/metrics.csv``.
    """
    from biclip.evaluate import evaluate  # evaluate imports model; keep the cycle lazy

    if len(data) == 0:
        raise ConfigError("training data is empty")
    if data.text_dim != config.d_raw:
        raise ConfigError(f"data text dim {data.text_dim} != config d_raw {config.d_raw}")
    if data.image_shape[1:] != (config.image_side, config.image_side):
        raise ConfigError(f"data images {data.image_shape} do not match image_side {config.image_side}")
    cfg = config
    data = subsample(data, cfg.data_fraction, cfg.seed)
    model = model or BiCLIPModel(cfg)
    opt = AdamW(
        model.named_parameters(),
        lr=cfg.lr_initial,
        betas=(cfg.beta1, cfg.beta2),
        eps=cfg.adam_eps,
        weight_decay=cfg.weight_decay,
    )
    images, masks, texts = data.images(), data.masks(), data.texts()
    ids = data.ids
    n = len(data)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    strong_grad = cfg.lambda_iac > 0
    lambdas = dict(lambda_gen=cfg.lambda_gen, lambda_iac=cfg.lambda_iac, lambda_cycle=cfg.lambda_cycle)
    result = TrainResult(model)
    step = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch, 0x5F]).permutation(n)
        sums = np.zeros(5)
        count = 0
        epoch_lr = None
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            batch_ids = [ids[k] for k in idx]
            spatial, weak, strong = batch_augmentation(cfg, batch_ids, epoch)
            lr = cosine_warm_restart_lr(step / steps_per_epoch, cfg.t_0, cfg.t_mult, cfg.lr_initial, cfg.lr_min)
            epoch_lr = lr if epoch_lr is None else epoch_lr
            out = model.step_outputs(images[idx], masks[idx], texts[idx], spatial, weak, strong, strong_grad=strong_grad)
            comp = out.losses
            loss = total_loss(comp.l_seg, comp.l_gen, comp.l_iac, comp.l_cycle, **lambdas)
            values = [comp.l_seg.item(), comp.l_gen.item(), comp.l_iac.item(), comp.l_cycle.item(), loss.item()]
            if not all(np.isfinite(values)):
                bd = LossBreakdown(*values[:4], **lambdas, l_total=values[4])
                raise NonFiniteError(f"non-finite loss at step {step}: {asdict(bd)}")
            model.zero_grad()
            loss.backward()
            if cfg.clip_norm > 0:
                clip_grad_norm(model.parameters(), cfg.clip_norm)
            opt.step(lr)
            sums += values
            count += 1
            step += 1
            if cfg.max_steps and step >= cfg.max_steps:
                break
        means = sums / max(count, 1)
        row = dict(zip(("l_seg", "l_gen", "l_iac", "l_cycle"), means[:4]))
        # recompose from the logged means so the row is exactly self-consistent
        row["l_total"] = float(total_loss(row["l_seg"], row["l_gen"], row["l_iac"], row["l_cycle"], **lambdas))
        row.update(epoch=epoch + 1, lr=epoch_lr)
        if val is not None and len(val):
            m = evaluate(model, val)
            row.update(val_dice=m.dice, val_miou=m.iou)
        else:
            row.update(val_dice=float("nan"), val_miou=float("nan"))
        result.history.append(row)
        logger.info(
            "epoch %d lr %.3g seg %.4f gen %.4f iac %.4f cyc %.4f val_dice %.4f",
            row["epoch"], row["lr"], row["l_seg"], row["l_gen"], row["l_iac"], row["l_cycle"], row["val_dice"],
        )
        if cfg.max_steps and step >= cfg.max_steps:
            break
    result.steps = step
    out_dir = out_dir or (cfg.checkpoint_path or None)
    if out_dir is not None:
        out = Path(out_dir)
        result.checkpoint = save_checkpoint(model, out / "checkpoint")
        (out / "metrics.csv").write_text(format_metrics(result.history), encoding="utf-8")
    return result
