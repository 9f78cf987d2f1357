"""Gradient-check suite: every primitive plus the full training loss on a small sample."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from biclip.autodiff import Tensor, check_parameter_gradients, grad_check, ops
from biclip.autodiff.gradcheck import GradCheckReport

TOL_32 = 5e-3
TOL_64 = 1e-6
# step sizes for the float64 central differences; the composite loss is
# rounding-limited below ~1e-5 and hits relu/clamp switches above ~1e-4
EPS_PRIMITIVE = 1e-5
EPS_COMPOSITE = 4e-5
KINK_RTOL = 1e-5


@dataclass
class CheckResult:
    name: str
    mode: str
    report: GradCheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed

    def line(self) -> str:
        return f"{self.name} [{self.mode}] {self.report.summary()}"


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    # a fixed random projection makes every output element matter differently
    return ops.sum(out * w.astype(out.dtype))


def _primitive_cases(rng: np.random.Generator) -> list[tuple[str, np.ndarray, Callable[[Tensor], Tensor]]]:
    """(name, point, fn) triples; points are kept away from kinks and ties."""

    def away_from_zero(shape):
        x = rng.uniform(0.2, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
        return x

    def distinct(shape):
        return rng.permutation(np.prod(shape)).reshape(shape) / np.prod(shape) + 0.1

    x23 = rng.normal(size=(2, 3))
    pos23 = rng.uniform(0.5, 2.0, size=(2, 3))
    other23 = rng.normal(size=(2, 3))
    w23 = rng.normal(size=(2, 3))
    w_mat = rng.normal(size=(3, 4))
    w_lin = rng.normal(size=(4, 3))
    b_lin = rng.normal(size=4)
    img = rng.normal(size=(2, 2, 6, 6))
    kern = rng.normal(size=(3, 2, 3, 3))
    w_conv = rng.normal(size=(2, 3, 6, 6))
    w_pool = rng.normal(size=(2, 2, 3, 3))
    w_up = rng.normal(size=(2, 2, 12, 12))
    index = np.stack([rng.permutation(36), rng.integers(0, 36, size=36)])
    w_gather = rng.normal(size=(2, 2, 6, 6))

    return [
        ("add", x23, lambda x: _weighted(x + other23.astype(x.dtype), w23)),
        ("sub", x23, lambda x: _weighted(ops.sub(x, other23.astype(x.dtype)), w23)),
        ("mul", x23, lambda x: _weighted(x * x, w23)),
        ("div", pos23, lambda x: _weighted(ops.div(other23.astype(x.dtype), x), w23)),
        ("exp", x23, lambda x: _weighted(ops.exp(x), w23)),
        ("log", pos23, lambda x: _weighted(ops.log(x), w23)),
        ("power", pos23, lambda x: _weighted(ops.power(x, 1.3), w23)),
        ("clamp", away_from_zero((2, 3)) * 2, lambda x: _weighted(ops.clamp(x, -1.0, 1.0), w23)),
        ("relu", away_from_zero((2, 3)), lambda x: _weighted(ops.relu(x), w23)),
        ("sigmoid", x23, lambda x: _weighted(ops.sigmoid(x), w23)),
        ("matmul", x23, lambda x: _weighted(ops.matmul(x, w_mat.astype(x.dtype)), rng_fixed(2, 4))),
        ("linear", x23, lambda x: _weighted(ops.linear(x, Tensor(w_lin.astype(x.dtype)), Tensor(b_lin.astype(x.dtype))), rng_fixed(2, 4))),
        ("reshape_transpose", x23, lambda x: _weighted(ops.transpose(ops.reshape(x, (3, 2))), rng_fixed(2, 3))),
        ("getitem", x23, lambda x: _weighted(x[:, 1:], rng_fixed(2, 2))),
        ("concat", x23, lambda x: _weighted(ops.concat([x, x * 2.0], axis=0), rng_fixed(4, 3))),
        ("stack", x23, lambda x: _weighted(ops.stack([x, ops.exp(x)]), rng_fixed(2, 2, 3))),
        ("sum_mean", x23, lambda x: ops.sum(x, axis=0)[1] * 2.0 + ops.mean(x * x)),
        ("amax_amin", distinct((2, 3)), lambda x: _weighted(ops.amax(x, axis=1), rng_fixed(2)) + ops.amin(x)),
        ("conv2d", img, lambda x: _weighted(ops.conv2d(x, Tensor(kern.astype(x.dtype)), padding=1), w_conv)),
        ("conv2d_stride", img, lambda x: _weighted(ops.conv2d(x, Tensor(kern.astype(x.dtype)), stride=2, padding=1), w_conv[:, :, :3, :3])),
        ("max_pool2d", distinct((2, 2, 6, 6)), lambda x: _weighted(ops.max_pool2d(x, 2), w_pool)),
        ("nearest_upsample2d", img, lambda x: _weighted(ops.nearest_upsample2d(x, 2), w_up)),
        ("global_avg_pool", img, lambda x: _weighted(ops.global_avg_pool(x), rng_fixed(2, 2))),
        ("gather_spatial", img, lambda x: _weighted(ops.gather_spatial(x, index, (6, 6)), w_gather)),
        ("l1_distance", x23, lambda x: ops.l1_distance(x, other23.astype(x.dtype))),
        ("squared_l2_distance", x23, lambda x: _weighted(ops.squared_l2_distance(x, other23.astype(x.dtype)), rng_fixed(2))),
        ("cosine_similarity", x23, lambda x: _weighted(ops.cosine_similarity(x, other23.astype(x.dtype)), rng_fixed(2))),
    ]


def rng_fixed(*shape) -> np.ndarray:
    """Deterministic weights that depend only on the shape."""
    return np.random.default_rng(list(shape)).normal(size=shape)


def check_primitives(dtype=np.float32, seed: int = 0, tol: float | None = None) -> list[CheckResult]:
    tol = tol if tol is not None else (TOL_32 if np.dtype(dtype) == np.float32 else TOL_64)
    mode = np.dtype(dtype).name
    out = []
    for name, point, fn in _primitive_cases(np.random.default_rng(seed)):
        rep = grad_check(fn, np.asarray(point, dtype=dtype), eps=EPS_PRIMITIVE, tol=tol)
        out.append(CheckResult(name, mode, rep))
    return out


def _composite_setup(seed: int = 3):
    from biclip.config import TrainConfig
    from biclip.data import generate_synthetic
    from biclip.model import BiCLIPModel
    from biclip.train import batch_augmentation

    cfg = TrainConfig(image_side=16, d_raw=16, d_t=8, d_i=8, d_p=8, base_width=4)
    sample = generate_synthetic(1, 16, 16, seed=seed)[0]
    model = BiCLIPModel(cfg)
    # zero-initialised output layers would hide the paths behind them
    rng = np.random.default_rng(0)
    for _, p in model.named_parameters():
        if not np.any(p.data):
            p.data = (rng.standard_normal(p.shape) * 0.3).astype(p.dtype)
    augmentation = batch_augmentation(cfg, [sample.id], 0)
    return cfg, sample, model, augmentation


def composite_loss_fn(model, sample, augmentation) -> Callable:
    """Total training loss as a function of the image (a Tensor [3,H,W])."""
    from biclip.train import total_loss

    spatial, weak, strong = augmentation
    cfg = model.cfg

    def fn(image):
        batch = image.reshape((1,) + image.shape) if isinstance(image, Tensor) else np.asarray(image)[None]
        out = model.step_outputs(batch, sample.mask[None], sample.text_embedding[None], spatial, weak, strong)
        c = out.losses
        return total_loss(c.l_seg, c.l_gen, c.l_iac, c.l_cycle, cfg.lambda_gen, cfg.lambda_iac, cfg.lambda_cycle)

    return fn


def check_composite(dtype=np.float32, tol: float | None = None, coords_per_param: int = 3) -> list[CheckResult]:
    """Full loss w.r.t. the input image and a sample of every parameter."""
    is32 = np.dtype(dtype) == np.float32
    tol = tol if tol is not None else (TOL_32 if is32 else TOL_64)
    mode = np.dtype(dtype).name
    _, sample, base, augmentation = _composite_setup()
    model = base.astype(dtype)
    oracle = base.astype(np.float64)
    fn = composite_loss_fn(model, sample, augmentation)
    oracle_fn = composite_loss_fn(oracle, sample, augmentation)
    image_report = grad_check(
        fn,
        sample.image.astype(dtype),
        eps=EPS_COMPOSITE,
        tol=tol,
        oracle_fn=oracle_fn,
        kink_rtol=KINK_RTOL,
    )
    results = [CheckResult("total_loss/image", mode, image_report)]
    image = sample.image.astype(dtype)
    reports = check_parameter_gradients(
        lambda m: composite_loss_fn(m, sample, augmentation)(image.astype(m.dtype)),
        model,
        eps=EPS_PRIMITIVE,
        tol=tol,
        coords_per_param=coords_per_param,
    )
    for name, rep in reports.items():
        results.append(CheckResult(f"total_loss/{name}", mode, rep))
    return results


def run_gradcheck(tol32: float = TOL_32, tol64: float = TOL_64, composite: bool = True) -> tuple[bool, list[CheckResult], float]:
    """All primitives and the composite loss in 32-bit and 64-bit mode."""
    start = time.perf_counter()
    results: list[CheckResult] = []
    for dtype, tol in ((np.float32, tol32), (np.float64, tol64)):
        results += check_primitives(dtype, tol=tol)
        if composite:
            results += check_composite(dtype, tol=tol)
    elapsed = time.perf_counter() - start
    return all(r.passed for r in results), results, elapsed
