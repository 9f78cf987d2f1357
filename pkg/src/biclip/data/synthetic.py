"""Seeded synthetic lesion-segmentation data with informative text embeddings."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import zoom

from biclip.data.dataset import Dataset, Sample
from biclip.encoders import StubTextSource

MIN_FOREGROUND = 0.02
MAX_FOREGROUND = 0.40
# foreground-fraction bin edges used as the "area quantile" attribute
AREA_EDGES = (0.05, 0.09, 0.15)
N_ATTRIBUTES = 3 + 4 + 4  # one-hot lesion count, area bin, centroid quadrant


def area_bin(fraction: float) -> int:
    return int(np.searchsorted(AREA_EDGES, fraction, side="right"))


def quadrant(mask: np.ndarray) -> int:
    """0: top-left, 1: top-right, 2: bottom-left, 3: bottom-right of the mask centroid."""
    rows, cols = np.nonzero(mask)
    h, w = mask.shape
    return int(rows.mean() >= h / 2) * 2 + int(cols.mean() >= w / 2)


def attribute_vector(count: int, area: int, quad: int) -> np.ndarray:
    vec = np.zeros(N_ATTRIBUTES, np.float32)
    vec[count - 1] = 1.0
    vec[3 + area] = 1.0
    vec[7 + quad] = 1.0
    return vec


def value_noise(rng: np.random.Generator, side: int, cells: int) -> np.ndarray:
    coarse = rng.random((cells + 1, cells + 1))
    field = zoom(coarse, side / (cells + 1), order=1, mode="nearest", grid_mode=True)
    return field[:side, :side]


def _lesions(rng: np.random.Generator, side: int) -> tuple[np.ndarray, np.ndarray, int]:
    """Soft lesion intensity field and its binary support."""
    count = int(rng.integers(1, 4))
    yy, xx = np.mgrid[0:side, 0:side] + 0.5
    soft = np.zeros((side, side))
    support = np.zeros((side, side), bool)
    for _ in range(count):
        cy, cx = rng.uniform(0.15, 0.85, size=2) * side
        ay, ax = rng.uniform(0.07, 0.2, size=2) * side
        theta = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        r = np.sqrt((u / ax) ** 2 + (v / ay) ** 2)
        soft = np.maximum(soft, 1.0 / (1.0 + np.exp((r - 1.0) * 6.0)))
        support |= r < 1.0
    return soft, support, count


def make_sample(rng: np.random.Generator, side: int, source: StubTextSource, sample_id: str) -> Sample:
    while True:
        soft, support, count = _lesions(rng, side)
        fraction = support.mean()
        if MIN_FOREGROUND <= fraction <= MAX_FOREGROUND:
            break
    background = 0.15 + 0.2 * value_noise(rng, side, max(2, side // 8)) + 0.1 * value_noise(rng, side, max(2, side // 4))
    gray = background + 0.35 * soft + rng.normal(0.0, 0.02, size=(side, side))
    tint = np.array([1.0, 0.96, 0.92])[:, None, None]
    image = np.clip(gray[None] * tint, 0.0, 1.0).astype(np.float32)
    mask = support[None].astype(np.float32)
    attrs = {"count": count, "area_bin": area_bin(float(fraction)), "quadrant": quadrant(support), "fraction": float(fraction)}
    text = source.embed(attribute_vector(count, attrs["area_bin"], attrs["quadrant"]))
    return Sample(sample_id, image, mask, text, attributes=attrs)


def generate_synthetic(n: int, image_side: int, d_t: int, seed: int, split: str = "train") -> Dataset:
    """``n`` samples with 1-3 soft elliptical lesions; bit-reproducible from ``seed``."""
    if n <= 0:
        raise ValueError("n must be positive")
    source = StubTextSource(d_t, N_ATTRIBUTES)
    samples = []
    for k in range(n):
        rng = np.random.default_rng([seed, k])
        s = make_sample(rng, image_side, source, f"syn{seed}-{k:05d}")
        samples.append(Sample(s.id, s.image, s.mask, s.text_embedding, split=split, attributes=s.attributes))
    return Dataset(tuple(samples), split=split)
