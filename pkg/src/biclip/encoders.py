"""Text and global visual embeddings consumed by the fusion block."""

from __future__ import annotations

import numpy as np

from biclip.autodiff import Tensor, global_avg_pool, max_pool2d, relu
from biclip.errors import ShapeError
from biclip.nn import Conv2d, Linear, Module

MIN_IMAGE_SIDE = 16


class TextProjection(Module):
    """Trainable linear map from the frozen raw embedding (D_raw) to t (D_t)."""

    def __init__(self, d_raw: int, d_t: int, rng: np.random.Generator):
        self.d_raw = d_raw
        self.d_t = d_t
        self.proj = Linear(d_raw, d_t, rng)
        # He init is tuned for relu inputs; a plain projection wants unit gain
        self.proj.weight.data *= np.float32(np.sqrt(0.5))

    def forward(self, raw) -> Tensor:
        return project_text(raw, self.proj)


def project_text(raw, proj: Linear) -> Tensor:
    """t = proj(raw). ``raw`` is wrapped without grad, so the source stays frozen."""
    raw_t = Tensor(getattr(raw, "data", raw), dtype=proj.weight.dtype)
    if raw_t.shape[-1] != proj.weight.shape[1]:
        raise ShapeError(f"raw text embedding has dim {raw_t.shape[-1]}, projection expects {proj.weight.shape[1]}")
    if not np.all(np.isfinite(raw_t.data)):
        raise ValueError("raw text embedding contains non-finite values")
    return proj(raw_t)


class ImageEncoder(Module):
    """3 x {conv3x3, relu, maxpool2}, global average pool, linear to D_i."""

    def __init__(self, d_i: int, rng: np.random.Generator, widths=(8, 16, 32), in_channels: int = 3):
        chans = (in_channels,) + tuple(widths)
        self.blocks = [Conv2d(chans[k], chans[k + 1], 3, rng) for k in range(3)]
        self.head = Linear(chans[-1], d_i, rng)
        self.d_i = d_i

    def forward(self, x: Tensor) -> Tensor:
        return encode_image_global(x, self)


def encode_image_global(x, encoder: ImageEncoder) -> Tensor:
    """Global visual embedding i for [3,H,W] or [N,3,H,W] input."""
    x = Tensor(getattr(x, "data", x), dtype=encoder.head.weight.dtype) if not isinstance(x, Tensor) else x
    single = x.ndim == 3
    if single:
        x = x.reshape((1,) + x.shape)
    h, w = x.shape[-2:]
    if min(h, w) < MIN_IMAGE_SIDE:
        raise ShapeError(f"image {h}x{w} too small for three pooling stages (need >= {MIN_IMAGE_SIDE})")
    for conv in encoder.blocks:
        x = max_pool2d(relu(conv(x)), 2)
    out = encoder.head(global_avg_pool(x))
    return out.reshape((encoder.d_i,)) if single else out


class StubTextSource:
    """Frozen stand-in for a pretrained text encoder.

    Maps a synthetic sample's attribute vector through a fixed pseudo-random
    matrix. The matrix depends only on (dimension, seed), never on a
    dataset seed, so train and test sets generated separately agree.
    """

    SEED = 20250101

    def __init__(self, d_out: int, n_attributes: int, seed: int = SEED):
        rng = np.random.default_rng([seed, d_out, n_attributes])
        self.matrix = (rng.standard_normal((d_out, n_attributes)) / np.sqrt(n_attributes)).astype(np.float32)
        self.matrix.setflags(write=False)

    def embed(self, attributes: np.ndarray) -> np.ndarray:
        return (self.matrix @ np.asarray(attributes, dtype=np.float32)).astype(np.float32)
