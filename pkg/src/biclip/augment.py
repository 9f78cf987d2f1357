"""Joint spatial augmentation, weak/strong appearance views, and test-time corruptions.

Geometric transforms are expressed as nearest-neighbour index maps so the
same map moves image channels, pseudo channels (with gradient) and the
mask. Appearance perturbations only touch the real-image channels.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate
from scipy.stats import poisson

from biclip.autodiff import (
    Tensor,
    amax,
    amin,
    clamp,
    concat_channels,
    gather_spatial,
    mean,
    power,
    split_channels,
    stack,
)
from biclip.errors import CorruptionSpecError, ShapeError

REAL_CHANNELS = 3
CONSTANT_RANGE = 1e-6


def derive_seed(global_seed: int, sample_id: str, purpose: str, *extra) -> int:
    """Order-independent per-sample seed: hash(global_seed, sample_id, purpose, ...)."""
    key = "\x1f".join(str(v) for v in (global_seed, sample_id, purpose) + extra)
    return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "little")


# -- spatial -------------------------------------------------------------------------


@dataclass(frozen=True)
class SpatialParams:
    flip: bool = False
    quarter_turns: int = 0
    crop: tuple[int, int, int, int] | None = None  # top, left, height, width

    @property
    def is_identity(self) -> bool:
        return not self.flip and self.quarter_turns % 4 == 0 and self.crop is None


def draw_spatial(rng: np.random.Generator, h: int, w: int) -> SpatialParams:
    """flip p=0.5, rotation in {0,90,180,270}, crop-and-resize (scale U[0.8,1]) with p=0.5."""
    flip = bool(rng.random() < 0.5)
    turns = int(rng.integers(4))
    if h != w:
        turns = 2 * (turns % 2)
    crop = None
    if rng.random() < 0.5:
        scale = rng.uniform(0.8, 1.0)
        ch, cw = max(1, int(round(scale * h))), max(1, int(round(scale * w)))
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
        crop = (top, left, ch, cw)
    return SpatialParams(flip, turns, crop)


def spatial_index(params: SpatialParams, h: int, w: int) -> np.ndarray:
    """Flat source index for every output pixel (crop-resize, then flip, then rotate)."""
    idx = np.arange(h * w).reshape(h, w)
    if params.crop is not None:
        top, left, ch, cw = params.crop
        rows = top + (np.arange(h) * ch) // h
        cols = left + (np.arange(w) * cw) // w
        idx = idx[np.ix_(rows, cols)]
    if params.flip:
        idx = idx[:, ::-1]
    if params.quarter_turns % 4:
        idx = np.rot90(idx, params.quarter_turns)
    return np.ascontiguousarray(idx).reshape(-1)


def apply_index_map(x: np.ndarray, index: np.ndarray) -> np.ndarray:
    """numpy twin of gather_spatial for a single [C,H,W] array."""
    c, h, w = x.shape
    return x.reshape(c, h * w)[:, index].reshape(c, h, w)


def spatial_aug(x_cat, y: np.ndarray, seed: int, params: SpatialParams | None = None):
    """Apply one seeded geometric transform jointly to x_cat [C,H,W] and mask y [1,H,W]."""
    x = x_cat if isinstance(x_cat, Tensor) else Tensor(np.asarray(x_cat))
    if x.shape[-2:] != y.shape[-2:]:
        raise ShapeError(f"spatial_aug: x_cat {x.shape} and mask {y.shape} differ spatially")
    h, w = x.shape[-2:]
    params = params or draw_spatial(np.random.default_rng(seed), h, w)
    if params.is_identity:
        return x, y
    index = spatial_index(params, h, w)
    x_g = gather_spatial(x.reshape((1,) + x.shape), index[None], (h, w))
    return x_g.reshape(x.shape), apply_index_map(y, index)


def spatial_aug_batch(x_cat: Tensor, y: np.ndarray, params: list[SpatialParams]):
    n, _, h, w = x_cat.shape
    index = np.stack([spatial_index(p, h, w) for p in params])
    y_g = np.stack([apply_index_map(y[k], index[k]) for k in range(n)])
    return gather_spatial(x_cat, index, (h, w)), y_g


# -- appearance ----------------------------------------------------------------------


@dataclass(frozen=True)
class AppearanceParams:
    offset: float = 0.0
    scale: float = 1.0
    gamma: float = 1.0
    noise_sigma: float = 0.0
    noise_seed: int = 0


def draw_weak(rng: np.random.Generator) -> AppearanceParams:
    return AppearanceParams(offset=rng.uniform(-0.1, 0.1), scale=rng.uniform(0.9, 1.1))


def draw_strong(rng: np.random.Generator) -> AppearanceParams:
    return AppearanceParams(
        offset=rng.uniform(-0.3, 0.3),
        scale=rng.uniform(0.7, 1.3),
        gamma=rng.uniform(0.7, 1.4),
        noise_sigma=0.05,
        noise_seed=int(rng.integers(2**63)),
    )


def apply_appearance(real, p: AppearanceParams):
    """Contrast about the image mean, brightness offset, gamma, Gaussian noise; clamped to [0,1].

    Works on a numpy array or on a Tensor (then differentiable w.r.t. the
    image). Identity parameters return the input values unchanged.
    """
    is_tensor = isinstance(real, Tensor)
    x = real if is_tensor else Tensor(np.asarray(real))
    if p.scale != 1.0:
        mu = mean(x)
        x = (x - mu) * p.scale + mu
    if p.offset != 0.0:
        x = x + p.offset
    if p.scale != 1.0 or p.offset != 0.0:
        x = clamp(x, 0.0, 1.0)
    if p.gamma != 1.0:
        x = power(x, p.gamma)
    if p.noise_sigma > 0:
        noise = np.random.default_rng(p.noise_seed).normal(0.0, p.noise_sigma, size=x.shape)
        x = clamp(x + noise.astype(x.dtype), 0.0, 1.0)
    return x if is_tensor else x.data


def normalize_pseudo(p: Tensor) -> Tensor:
    """Per-channel min-max rescale to [0,1] over the spatial axes; constant channels pass through."""
    hi = amax(p, axis=(-2, -1), keepdims=True)
    lo = amin(p, axis=(-2, -1), keepdims=True)
    span = hi.data - lo.data
    const = (span <= CONSTANT_RANGE).astype(p.dtype)
    # const channels: (p - 0) / 1
    return (p - lo * (1 - const)) / ((hi - lo) * (1 - const) + const)


@dataclass
class ViewPair:
    x_cat: Tensor
    x_g: Tensor
    y_g: np.ndarray
    x_w: Tensor
    x_s: Tensor


def build_views(
    x_g: Tensor,
    seed_w=None,
    seed_s=None,
    *,
    weak: list[AppearanceParams] | AppearanceParams | None = None,
    strong: list[AppearanceParams] | AppearanceParams | None = None,
) -> tuple[Tensor, Tensor]:
    """x_w = [A_w(real); N_p(pseudo)], x_s = [A_s(real); N_p(pseudo)].

    Accepts [C,H,W] with scalar seeds or [N,C,H,W] with per-sample seed lists.
    Explicit ``weak``/``strong`` params bypass the seeded draws.
    """
    single = x_g.ndim == 3
    xb = x_g.reshape((1,) + x_g.shape) if single else x_g
    n = xb.shape[0]
    if xb.shape[1] <= REAL_CHANNELS:
        raise ShapeError(f"build_views expects 3 real + pseudo channels, got {xb.shape[1]}")

    def as_list(params, seeds, draw):
        if params is not None:
            return list(params) if isinstance(params, (list, tuple)) else [params] * n
        seeds = [seeds] if single or np.isscalar(seeds) else list(seeds)
        return [draw(np.random.default_rng(s)) for s in seeds]

    weak_p = as_list(weak, seed_w, draw_weak)
    strong_p = as_list(strong, seed_s, draw_strong)
    real, pseudo = split_channels(xb, REAL_CHANNELS)
    pseudo_n = normalize_pseudo(pseudo)
    r_w = stack([apply_appearance(real[k], weak_p[k]) for k in range(n)])
    r_s = stack([apply_appearance(real[k], strong_p[k]) for k in range(n)])
    x_w = concat_channels(r_w, pseudo_n)
    x_s = concat_channels(r_s, pseudo_n)
    if single:
        return x_w.reshape(x_w.shape[1:]), x_s.reshape(x_s.shape[1:])
    return x_w, x_s


def inference_view(x_cat: Tensor) -> Tensor:
    """Clean view used at evaluation: real channels untouched, N_p on the pseudo channels."""
    real, pseudo = split_channels(x_cat, REAL_CHANNELS)
    return concat_channels(real, normalize_pseudo(pseudo))


# -- corruptions ------------------------------------------------------------------------


def poisson_dose(image, dose: float, seed: int) -> np.ndarray:
    """Low-dose noise: k ~ Poisson(dose * v) per pixel, output min(k / dose, 1).

    Draws use the inverse CDF of one uniform field per seed, so lowering the
    dose at a fixed seed scales the same noise pattern up.
    """
    if not dose > 0:
        raise CorruptionSpecError(f"dose must be positive, got {dose}")
    v = np.asarray(image, dtype=np.float64)
    u = np.random.default_rng(seed).random(v.shape)
    k = np.maximum(poisson.ppf(u, dose * v), 0.0)
    k = np.where(v > 0, k, 0.0)
    return np.minimum(k / dose, 1.0).astype(np.float32)


def motion_kernel(k: int, angle: float) -> np.ndarray:
    """k x k rasterised line through the centre at ``angle`` degrees, uniform weights summing to 1."""
    if k < 1 or k % 2 == 0:
        raise CorruptionSpecError(f"motion blur kernel size must be odd and >= 1, got {k}")
    kernel = np.zeros((k, k))
    c = k // 2
    theta = np.deg2rad(angle)
    # stretch so the line touches the kernel border at any angle
    reach = c / max(abs(np.cos(theta)), abs(np.sin(theta)))
    for s in np.linspace(-reach, reach, 4 * k + 1):
        row = int(np.rint(c - s * np.sin(theta)))
        col = int(np.rint(c + s * np.cos(theta)))
        kernel[row, col] = 1.0
    return kernel / kernel.sum()


def motion_blur(image, k: int, angle: float = 0.0) -> np.ndarray:
    """Directional blur of every channel of [C,H,W] (or [H,W]); reflect padding at borders."""
    kernel = motion_kernel(k, angle)
    img = np.asarray(image, dtype=np.float32)
    if k == 1:
        return img.copy()
    if img.ndim == 2:
        return correlate(img.astype(np.float64), kernel, mode="mirror").astype(np.float32)
    return np.stack([correlate(ch.astype(np.float64), kernel, mode="mirror") for ch in img]).astype(np.float32)


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str  # "poisson_dose" | "motion_blur"
    dose: float | None = None
    kernel: int | None = None
    angle: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind == "poisson_dose":
            if self.dose is None or not self.dose > 0:
                raise CorruptionSpecError(f"poisson dose must be > 0, got {self.dose}")
        elif self.kind == "motion_blur":
            if self.kernel is None or self.kernel < 1 or self.kernel % 2 == 0:
                raise CorruptionSpecError(f"blur kernel must be odd and >= 1, got {self.kernel}")
        else:
            raise CorruptionSpecError(f"unknown corruption kind {self.kind!r}")

    @property
    def label(self) -> str:
        if self.kind == "poisson_dose":
            return f"poisson:{_fmt(self.dose)}"
        return f"blur:{self.kernel}" + (f":{_fmt(self.angle)}" if self.angle else "")

    def apply(self, image: np.ndarray, sample_id: str = "") -> np.ndarray:
        if self.kind == "poisson_dose":
            return poisson_dose(image, self.dose, derive_seed(self.seed, sample_id, "poisson"))
        return motion_blur(image, self.kernel, self.angle)


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def parse_corruption(text: str, seed: int = 0) -> CorruptionSpec | None:
    """Parse ``poisson:DOSE`` / ``blur:K[:ANGLE]``; ``clean`` yields None."""
    text = text.strip()
    if text == "clean":
        return None
    parts = text.split(":")
    try:
        if parts[0] == "poisson" and len(parts) == 2:
            return CorruptionSpec("poisson_dose", dose=float(parts[1]), seed=seed)
        if parts[0] == "blur" and len(parts) in (2, 3):
            angle = float(parts[2]) if len(parts) == 3 else 0.0
            kernel = float(parts[1])
            if not kernel.is_integer():
                raise CorruptionSpecError(f"blur kernel must be an integer, got {parts[1]}")
            return CorruptionSpec("motion_blur", kernel=int(kernel), angle=angle, seed=seed)
    except ValueError as exc:
        if isinstance(exc, CorruptionSpecError):
            raise
        raise CorruptionSpecError(f"cannot parse corruption {text!r}: {exc}") from None
    raise CorruptionSpecError(f"cannot parse corruption {text!r}; expected poisson:DOSE or blur:K[:ANGLE]")
