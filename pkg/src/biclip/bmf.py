"""Bidirectional multimodal fusion.

The visual embedding refines the text embedding through a residual MLP,
the refined text is decoded into a one-channel pseudo image, and a small
head maps that image back to text space so a cycle loss can tie the
round trip to the original text embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from biclip.autodiff import (
    Tensor,
    concat,
    global_avg_pool,
    l1_distance,
    max_pool2d,
    mean,
    nearest_upsample2d,
    relu,
    sigmoid,
    squared_l2_distance,
)
from biclip.errors import ShapeError
from biclip.nn import Conv2d, Linear, Module


@dataclass
class FusionState:
    t: Tensor
    i: Tensor
    z: Tensor
    delta_t: Tensor
    t_refined: Tensor
    pseudo_image: Tensor
    t_hat: Tensor


class FusionMLP(Module):
    """g_bmf: (D_t + D_i) -> hidden -> D_t with relu; output layer starts at zero."""

    def __init__(self, d_t: int, d_i: int, rng: np.random.Generator, hidden: int | None = None):
        hidden = hidden or 2 * (d_t + d_i)
        self.d_t, self.d_i = d_t, d_i
        self.fc1 = Linear(d_t + d_i, hidden, rng)
        self.fc2 = Linear(hidden, d_t, rng, zero_init=True)

    def forward(self, z: Tensor) -> Tensor:
        return self.fc2(relu(self.fc1(z)))


def fuse(t: Tensor, i: Tensor, g_bmf: FusionMLP) -> tuple[Tensor, Tensor, Tensor]:
    """Return (z, delta_t, t_refined) with z = [t; i] and t_refined = t + g_bmf(z)."""
    if t.shape[-1] != g_bmf.d_t or i.shape[-1] != g_bmf.d_i:
        raise ShapeError(f"fuse expects t[..., {g_bmf.d_t}] and i[..., {g_bmf.d_i}], got {t.shape} and {i.shape}")
    z = concat([t, i], axis=-1)
    delta_t = g_bmf(z)
    return z, delta_t, t + delta_t


class PseudoImageGenerator(Module):
    """Linear seed map at 1/8 resolution, 3 x {upsample, conv3x3, relu}, conv3x3, sigmoid."""

    def __init__(self, d_t: int, side: int, rng: np.random.Generator, channels: int = 8, out_channels: int = 1):
        if side % 8:
            raise ShapeError(f"pseudo image side {side} must be divisible by 8")
        self.side, self.channels, self.out_channels = side, channels, out_channels
        s = side // 8
        self.seed = Linear(d_t, channels * s * s, rng)
        self.ups = [Conv2d(channels, channels, 3, rng) for _ in range(3)]
        self.out = Conv2d(channels, out_channels, 3, rng)

    def forward(self, t_refined: Tensor) -> Tensor:
        return generate_pseudo(t_refined, self)


def generate_pseudo(t_refined: Tensor, gen: PseudoImageGenerator) -> Tensor:
    """[D_t] -> [C_p,H,W] or [N,D_t] -> [N,C_p,H,W], values in (0, 1)."""
    single = t_refined.ndim == 1
    t = t_refined.reshape((1, -1)) if single else t_refined
    s = gen.side // 8
    x = gen.seed(t).reshape((t.shape[0], gen.channels, s, s))
    for conv in gen.ups:
        x = relu(conv(nearest_upsample2d(x, 2)))
    out = sigmoid(gen.out(x))
    return out.reshape(out.shape[1:]) if single else out


class ImageToTextHead(Module):
    """h: conv stack on the pseudo image, global average pool, linear to D_t (zero init)."""

    def __init__(self, d_t: int, rng: np.random.Generator, in_channels: int = 1, widths=(8, 16)):
        chans = (in_channels,) + tuple(widths)
        self.convs = [Conv2d(chans[k], chans[k + 1], 3, rng) for k in range(len(widths))]
        self.fc = Linear(chans[-1], d_t, rng, zero_init=True)
        self.d_t = d_t

    def forward(self, pseudo: Tensor) -> Tensor:
        return image_to_text(pseudo, self)


def image_to_text(pseudo: Tensor, h: ImageToTextHead) -> Tensor:
    single = pseudo.ndim == 3
    x = pseudo.reshape((1,) + pseudo.shape) if single else pseudo
    if x.ndim != 4:
        raise ShapeError(f"image_to_text expects [C,H,W] or [N,C,H,W], got {pseudo.shape}")
    for conv in h.convs:
        x = max_pool2d(relu(conv(x)), 2)
    out = h.fc(global_avg_pool(x))
    return out.reshape((h.d_t,)) if single else out


def cycle_loss(t: Tensor, t_hat: Tensor) -> Tensor:
    """Squared L2 distance ||t - t_hat||^2; batched inputs average over the batch."""
    if t.shape != t_hat.shape:
        raise ShapeError(f"cycle_loss: shape mismatch {t.shape} vs {t_hat.shape}")
    d = squared_l2_distance(t, t_hat, axis=-1)
    return d if d.ndim == 0 else mean(d)


def gen_loss(pseudo: Tensor, supervision) -> Tensor:
    """Mean absolute difference between the pseudo image and its supervision."""
    if not isinstance(supervision, Tensor):
        supervision = Tensor(np.asarray(supervision), dtype=pseudo.dtype)
    if pseudo.shape != supervision.shape:
        raise ShapeError(f"gen_loss: shape mismatch {pseudo.shape} vs {supervision.shape}")
    return l1_distance(pseudo, supervision)


def pseudo_supervision(mask: np.ndarray, side: int, channels: int = 1) -> np.ndarray:
    """Nearest-neighbour resample of a [..., 1, H, W] mask to the pseudo-image grid."""
    mask = np.asarray(mask)
    h, w = mask.shape[-2:]
    rows = (np.arange(side) * h) // side
    cols = (np.arange(side) * w) // side
    out = mask[..., rows, :][..., cols]
    if channels != 1:
        out = np.repeat(out, channels, axis=-3)
    return out.astype(np.float32)
