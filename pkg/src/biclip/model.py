"""The full network: encoders, fusion, pseudo-image loop, U-Net and heads."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from biclip import augment
from biclip.autodiff import Tensor, concat, concat_channels, no_grad
from biclip.bmf import (
    FusionMLP,
    FusionState,
    ImageToTextHead,
    PseudoImageGenerator,
    cycle_loss,
    fuse,
    gen_loss,
    pseudo_supervision,
)
from biclip.config import TrainConfig
from biclip.data.btsr import read_tensor_file, write_tensor_file
from biclip.encoders import ImageEncoder, TextProjection
from biclip.errors import CheckpointError, ConfigError, ShapeError
from biclip.nn import Module
from biclip.segnet import PredictionHead, ProjectionHead, UNet, iac_loss, predict, project, seg_loss, unet_forward

CONFIG_ECHO = "config.echo"


@dataclass
class LossComponents:
    l_seg: Tensor
    l_gen: Tensor
    l_iac: Tensor
    l_cycle: Tensor


@dataclass
class StepOutputs:
    losses: LossComponents
    fusion: FusionState
    views: augment.ViewPair
    y_hat: Tensor
    p_w: Tensor
    p_s: Tensor


class BiCLIPModel(Module):
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        rng = np.random.default_rng([cfg.seed, 0x1A17])
        c_in = augment.REAL_CHANNELS + cfg.pseudo_channels
        self.text_proj = TextProjection(cfg.d_raw, cfg.d_t, rng)
        self.image_encoder = ImageEncoder(cfg.d_i, rng)
        self.g_bmf = FusionMLP(cfg.d_t, cfg.d_i, rng)
        self.generator = PseudoImageGenerator(cfg.d_t, cfg.image_side, rng, out_channels=cfg.pseudo_channels)
        self.h = ImageToTextHead(cfg.d_t, rng, in_channels=cfg.pseudo_channels)
        self.unet = UNet(c_in, rng, base=cfg.base_width, depth=cfg.depth)
        self.proj_head = ProjectionHead(self.unet.out_channels, cfg.d_p, rng)
        self.pred_head = PredictionHead(self.unet.out_channels, rng)

    @property
    def dtype(self):
        return self.pred_head.conv.weight.dtype

    def _check_inputs(self, images, raw_text: np.ndarray) -> None:
        side = self.cfg.image_side
        if images.ndim != 4 or images.shape[1:] != (3, side, side):
            raise ShapeError(f"expected images [N,3,{side},{side}], got {list(images.shape)}")
        if raw_text.ndim != 2 or raw_text.shape[1] != self.cfg.d_raw:
            raise ShapeError(f"expected raw text [N,{self.cfg.d_raw}], got {list(raw_text.shape)}")
        if raw_text.shape[0] != images.shape[0]:
            raise ShapeError("images and text embeddings differ in count")

    def _image_tensor(self, images) -> Tensor:
        if isinstance(images, Tensor):
            return images
        return Tensor(np.asarray(images), dtype=self.dtype)

    def fusion(self, images, raw_text) -> FusionState:
        """Encoders, fusion and the pseudo-image round trip. ``images`` may be a Tensor."""
        images = self._image_tensor(images)
        raw_text = np.asarray(getattr(raw_text, "data", raw_text))
        self._check_inputs(images, raw_text)
        t = self.text_proj(raw_text)
        i = self.image_encoder(images)
        z, delta_t, t_refined = fuse(t, i, self.g_bmf)
        pseudo = self.generator(t_refined)
        t_hat = self.h(pseudo)
        return FusionState(t, i, z, delta_t, t_refined, pseudo, t_hat)

    def step_outputs(
        self,
        images: np.ndarray,
        masks: np.ndarray,
        raw_text: np.ndarray,
        spatial: list[augment.SpatialParams],
        weak: list[augment.AppearanceParams],
        strong: list[augment.AppearanceParams],
        strong_grad: bool = True,
    ) -> StepOutputs:
        """One training forward pass over a batch; augmentation params are supplied by the caller."""
        images = self._image_tensor(images)
        fs = self.fusion(images, raw_text)
        x_cat = concat_channels(images, fs.pseudo_image)
        x_g, y_g = augment.spatial_aug_batch(x_cat, masks, spatial)
        x_w, x_s = augment.build_views(x_g, weak=weak, strong=strong)
        n = x_w.shape[0]
        if strong_grad:
            f = unet_forward(concat([x_w, x_s], axis=0), self.unet)
            f_w, f_s = f[:n], f[n:]
        else:
            f_w = unet_forward(x_w, self.unet)
            with no_grad():
                f_s = unet_forward(x_s, self.unet)
        p_w = project(f_w, self.proj_head)
        p_s = project(f_s, self.proj_head)
        y_hat = predict(f_w, self.pred_head)
        sup = pseudo_supervision(masks, self.cfg.image_side, self.cfg.pseudo_channels)
        losses = LossComponents(
            l_seg=seg_loss(y_hat, y_g),
            l_gen=gen_loss(fs.pseudo_image, sup),
            l_iac=iac_loss(p_w, p_s),
            l_cycle=cycle_loss(fs.t, fs.t_hat),
        )
        views = augment.ViewPair(x_cat=x_cat, x_g=x_g, y_g=y_g, x_w=x_w, x_s=x_s)
        return StepOutputs(losses, fs, views, y_hat, p_w, p_s)

    def predict_proba(self, images, raw_text, corruption: augment.CorruptionSpec | None = None, ids=None, chunk: int = 16) -> np.ndarray:
        """Foreground probabilities [N,1,H,W] along the clean inference path."""
        images = np.asarray(images, dtype=np.float32)
        raw_text = np.asarray(raw_text, dtype=np.float32)
        if corruption is not None:
            ids = ids if ids is not None else [str(k) for k in range(len(images))]
            images = np.stack([corruption.apply(img, sid) for img, sid in zip(images, ids)])
        out = []
        with no_grad():
            for start in range(0, len(images), chunk):
                x = images[start : start + chunk]
                fs = self.fusion(x, raw_text[start : start + chunk])
                x_cat = concat_channels(Tensor(x, dtype=self.dtype), fs.pseudo_image)
                f = unet_forward(augment.inference_view(x_cat), self.unet)
                out.append(predict(f, self.pred_head).data)
        return np.concatenate(out).astype(np.float32)


def save_checkpoint(model: BiCLIPModel, directory: str | os.PathLike) -> Path:
    """Directory of ``<param>.btsr`` files plus ``config.echo``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, p in model.named_parameters():
        write_tensor_file(p.data, directory / f"{name}.btsr")
    (directory / CONFIG_ECHO).write_text(model.cfg.to_text(), encoding="utf-8")
    return directory


def load_checkpoint(directory: str | os.PathLike) -> BiCLIPModel:
    directory = Path(directory)
    echo = directory / CONFIG_ECHO
    if not echo.is_file():
        raise CheckpointError(f"{directory}: no {CONFIG_ECHO}")
    try:
        cfg = TrainConfig.from_file(echo)
    except ConfigError as exc:
        raise CheckpointError(f"{echo}: {exc}") from None
    model = BiCLIPModel(cfg)
    state = {}
    for name, p in model.named_parameters():
        path = directory / f"{name}.btsr"
        if not path.is_file():
            raise CheckpointError(f"{directory}: missing weight file {path.name}")
        arr = read_tensor_file(path).data
        if arr.shape != p.shape:
            raise CheckpointError(f"{path.name}: shape {list(arr.shape)} does not match config ({list(p.shape)})")
        state[name] = arr
    model.load_state_dict(state)
    return model
