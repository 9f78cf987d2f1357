"""U-Net backbone, projection head, augmentation-consistency loss, prediction head, Dice+BCE."""

from __future__ import annotations

import numpy as np

from biclip.autodiff import (
    Tensor,
    clamp,
    concat_channels,
    cosine_similarity,
    global_avg_pool,
    log,
    max_pool2d,
    mean,
    nearest_upsample2d,
    relu,
    sigmoid,
)
from biclip.autodiff.ops import sum as tsum
from biclip.data.dataset import check_binary_mask
from biclip.errors import ShapeError
from biclip.nn import Conv2d, Linear, Module

DICE_SMOOTH = 1.0
PROB_CLAMP = 1e-7


class UNet(Module):
    """Encoder-decoder with skip connections.

    ``depth`` pooling stages, widths base * 2**level, one conv3x3+relu per
    encoder stage and per decoder stage (after upsampling and concatenating
    the skip). ``forward`` returns the final decoder feature map.
    """

    def __init__(self, in_channels: int, rng: np.random.Generator, base: int = 16, depth: int = 3):
        self.depth = depth
        widths = [base * 2**level for level in range(depth + 1)]
        self.down = [Conv2d(in_channels if k == 0 else widths[k - 1], widths[k], 3, rng) for k in range(depth)]
        self.bottleneck = Conv2d(widths[depth - 1], widths[depth], 3, rng)
        self.up = [Conv2d(widths[k + 1] + widths[k], widths[k], 3, rng) for k in reversed(range(depth))]
        self.out_channels = widths[0]

    def forward(self, x: Tensor) -> Tensor:
        return unet_forward(x, self)


def unet_forward(x: Tensor, net: UNet) -> Tensor:
    single = x.ndim == 3
    if single:
        x = x.reshape((1,) + x.shape)
    h, w = x.shape[-2:]
    step = 2**net.depth
    if h % step or w % step:
        raise ShapeError(f"unet input {h}x{w} not divisible by 2**depth = {step}")
    skips = []
    for conv in net.down:
        x = relu(conv(x))
        skips.append(x)
        x = max_pool2d(x, 2)
    x = relu(net.bottleneck(x))
    for conv, skip in zip(net.up, reversed(skips)):
        x = relu(conv(concat_channels(nearest_upsample2d(x, 2), skip)))
    return x.reshape(x.shape[1:]) if single else x


class ProjectionHead(Module):
    def __init__(self, n_in: int, d_p: int, rng: np.random.Generator):
        self.fc = Linear(n_in, d_p, rng)

    def forward(self, f: Tensor) -> Tensor:
        return project(f, self)


def project(f: Tensor, head: ProjectionHead) -> Tensor:
    """p = linear(global_average_pool(f))."""
    return head.fc(global_avg_pool(f))


class PredictionHead(Module):
    def __init__(self, n_in: int, rng: np.random.Generator):
        self.conv = Conv2d(n_in, 1, 1, rng, padding=0)

    def forward(self, f: Tensor) -> Tensor:
        return predict(f, self)


def predict(f_w: Tensor, head: PredictionHead) -> Tensor:
    """Foreground probability map: sigmoid(conv1x1(f_w))."""
    single = f_w.ndim == 3
    x = f_w.reshape((1,) + f_w.shape) if single else f_w
    out = sigmoid(head.conv(x))
    return out.reshape(out.shape[1:]) if single else out


def iac_loss(p_w: Tensor, p_s: Tensor) -> Tensor:
    """1 - cos(p_w, p_s), averaged over a batch."""
    cos = cosine_similarity(p_w, p_s, axis=-1)
    return 1.0 - (cos if cos.ndim == 0 else mean(cos))


def dice_loss(y_hat: Tensor, y) -> Tensor:
    """1 - (2 sum(y_hat*y) + eps) / (sum(y_hat) + sum(y) + eps) per sample, averaged."""
    y = y if isinstance(y, Tensor) else Tensor(np.asarray(y), dtype=y_hat.dtype)
    axes = (-3, -2, -1)
    inter = tsum(y_hat * y, axis=axes)
    denom = tsum(y_hat, axis=axes) + tsum(y, axis=axes)
    score = (2.0 * inter + DICE_SMOOTH) / (denom + DICE_SMOOTH)
    return 1.0 - (score if score.ndim == 0 else mean(score))


def bce_loss(y_hat: Tensor, y) -> Tensor:
    y = y if isinstance(y, Tensor) else Tensor(np.asarray(y), dtype=y_hat.dtype)
    p = clamp(y_hat, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -mean(y * log(p) + (1.0 - y) * log(1.0 - p))


def seg_loss(y_hat: Tensor, y) -> Tensor:
    """Dice + binary cross-entropy with equal weights."""
    y_arr = y.data if isinstance(y, Tensor) else np.asarray(y)
    if y_arr.shape != y_hat.shape:
        raise ShapeError(f"seg_loss: prediction {y_hat.shape} vs mask {y_arr.shape}")
    check_binary_mask(y_arr)
    return dice_loss(y_hat, y_arr) + bce_loss(y_hat, y_arr)
