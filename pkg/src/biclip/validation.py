"""Input validation for array-level entry points."""

from __future__ import annotations

import numpy as np

from biclip.data.dataset import check_binary_mask
from biclip.errors import DegenerateInputError, EmbeddingDimensionError, ShapeError


def check_images(X, side: int | None = None) -> np.ndarray:
    """[N,3,H,W] float32 in [0,1]; a single [3,H,W] image is promoted to a batch of one."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[1] != 3:
        raise ShapeError(f"expected images [N,3,H,W], got {list(X.shape)}")
    if X.shape[0] == 0:
        raise ShapeError("no images given")
    if X.shape[2] != X.shape[3]:
        raise ShapeError(f"images must be square, got {X.shape[2]}x{X.shape[3]}")
    if side is not None and X.shape[2] != side:
        raise ShapeError(f"expected {side}x{side} images, got {X.shape[2]}x{X.shape[3]}")
    if not np.all(np.isfinite(X)):
        raise DegenerateInputError("images contain non-finite values")
    if X.min() < 0 or X.max() > 1:
        raise DegenerateInputError(f"image values must lie in [0,1], got [{X.min():.3g}, {X.max():.3g}]")
    return X


def check_masks(y, n: int, side: int) -> np.ndarray:
    """Binary masks as [N,1,H,W] float32; [N,H,W] is accepted."""
    y = np.asarray(y, dtype=np.float32)
    if y.ndim == 3:
        y = y[:, None]
    if y.shape != (n, 1, side, side):
        raise ShapeError(f"expected masks [{n},1,{side},{side}], got {list(y.shape)}")
    check_binary_mask(y)
    return y


def check_text(text, n: int, d_raw: int | None = None) -> np.ndarray:
    """Raw text embeddings [N,D] float32."""
    if text is None:
        raise ShapeError("text embeddings are required")
    text = np.asarray(text, dtype=np.float32)
    if text.ndim == 1:
        text = text[None]
    if text.ndim != 2 or text.shape[0] != n:
        raise ShapeError(f"expected text embeddings [{n},D], got {list(text.shape)}")
    if d_raw is not None and text.shape[1] != d_raw:
        raise EmbeddingDimensionError(f"text embeddings have dimension {text.shape[1]}, expected {d_raw}")
    if not np.all(np.isfinite(text)):
        raise DegenerateInputError("text embeddings contain non-finite values")
    return text
