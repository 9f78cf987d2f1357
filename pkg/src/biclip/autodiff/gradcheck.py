"""Central finite-difference oracle for the tape.

The numeric side is always evaluated in float64 (the "oracle" precision);
the analytic side runs at the dtype of the point that is passed in, so a
float32 point checks the float32 backward rules and a float64 point checks
the rules at full precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from biclip.autodiff.tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    max_abs_error: float
    n_checked: int
    tol: float
    worst_index: tuple | None = None
    failures: list[tuple[tuple, float, float, float]] = field(default_factory=list)
    n_skipped: int = 0

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        skipped = f" skipped_nonsmooth={self.n_skipped}" if self.n_skipped else ""
        return (
            f"{status} max_rel_err={self.max_rel_error:.3e} max_abs_err={self.max_abs_error:.3e} "
            f"coords={self.n_checked} tol={self.tol:.1e}{skipped}"
        )


def relative_errors(analytic: np.ndarray, numeric: np.ndarray, floor_scale: float = 1e-3) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor) with floor = floor_scale * max|n|.

    The floor keeps coordinates whose true gradient is ~0 from dividing by
    rounding noise; it is tied to the largest gradient so it scales with fn.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = float(np.max(np.abs(numeric))) if numeric.size else 0.0
    floor = max(floor_scale * scale, 1e-30)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def _select_coords(shape, max_coords, rng, mask) -> list[tuple]:
    coords = [tuple(ix) for ix in np.ndindex(*shape)]
    if mask is not None:
        coords = [ix for ix in coords if mask[ix]]
    if max_coords is not None and len(coords) > max_coords:
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]
    return coords


def numeric_gradient(
    fn: Callable[[Tensor], Tensor], point: np.ndarray, coords: list[tuple], eps: float, dtype=np.float64
) -> np.ndarray:
    base = np.asarray(point, dtype=dtype)
    out = np.zeros(len(coords), dtype=np.float64)
    with no_grad():
        for k, ix in enumerate(coords):
            x = base.copy()
            x[ix] += eps
            f_plus = float(fn(Tensor(x, dtype=dtype)).data.reshape(-1)[0])
            x[ix] -= 2 * eps
            f_minus = float(fn(Tensor(x, dtype=dtype)).data.reshape(-1)[0])
            out[k] = (f_plus - f_minus) / (2 * eps)
    return out


def grad_check(
    fn: Callable[[Tensor], Tensor],
    point,
    eps: float = 1e-6,
    tol: float = 1e-3,
    *,
    max_coords: int | None = None,
    mask: np.ndarray | None = None,
    seed: int = 0,
    oracle_dtype=np.float64,
    floor_scale: float = 1e-3,
    oracle_fn: Callable[[Tensor], Tensor] | None = None,
    kink_rtol: float | None = None,
) -> GradCheckReport:
    """Compare the analytic gradient of scalar ``fn`` at ``point`` with central differences.

    ``mask`` restricts the checked coordinates (e.g. to stay away from relu
    kinks); ``max_coords`` subsamples them with a seeded draw. When ``fn``
    closes over 32-bit state, pass a 64-bit twin as ``oracle_fn`` so the
    differences are taken in full precision.

    With ``kink_rtol`` each coordinate is also differenced at ``eps / 2``;
    where the two estimates disagree by more than ``kink_rtol`` (relative)
    the stencil straddles a relu/clamp/max switch, the derivative is not
    defined there, and the coordinate is skipped and counted in
    ``n_skipped`` instead of being compared.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if isinstance(point, Tensor):
        point = point.data
    point = np.asarray(point)
    if point.dtype.kind != "f":
        point = point.astype(np.float32)

    x = Tensor(point.copy(), requires_grad=True, dtype=point.dtype)
    loss = fn(x)
    loss.backward()
    analytic_full = np.zeros(point.shape) if x.grad is None else x.grad

    coords = _select_coords(point.shape, max_coords, np.random.default_rng(seed), mask)
    if not coords:
        return GradCheckReport(True, 0.0, 0.0, 0, tol)
    numeric = numeric_gradient(oracle_fn or fn, point, coords, eps, dtype=oracle_dtype)
    analytic = np.array([analytic_full[ix] for ix in coords], dtype=np.float64)
    n_skipped = 0
    if kink_rtol is not None:
        half = numeric_gradient(oracle_fn or fn, point, coords, eps / 2, dtype=oracle_dtype)
        smooth = relative_errors(half, numeric, floor_scale) <= kink_rtol
        n_skipped = int((~smooth).sum())
        coords = [ix for ix, keep in zip(coords, smooth) if keep]
        numeric, analytic = numeric[smooth], analytic[smooth]
        if not coords:
            return GradCheckReport(False, float("nan"), float("nan"), 0, tol, n_skipped=n_skipped)

    rel = relative_errors(analytic, numeric, floor_scale)
    abs_err = np.abs(analytic - numeric)
    worst = int(np.argmax(rel))
    failures = [(coords[k], analytic[k], numeric[k], rel[k]) for k in np.flatnonzero(rel > tol)]
    return GradCheckReport(
        passed=not failures,
        max_rel_error=float(rel[worst]),
        max_abs_error=float(abs_err.max()),
        n_checked=len(coords),
        tol=tol,
        worst_index=coords[worst],
        failures=failures,
        n_skipped=n_skipped,
    )


def check_parameter_gradients(
    loss_fn: Callable[[object], Tensor],
    module,
    eps: float = 1e-6,
    tol: float = 1e-3,
    *,
    coords_per_param: int = 4,
    seed: int = 0,
    floor_scale: float = 1e-3,
) -> dict[str, GradCheckReport]:
    """Gradient check of ``loss_fn(module)`` w.r.t. a sample of every parameter.

    The numeric side perturbs a float64 copy of ``module`` in place, so the
    oracle sees exactly the same function as the analytic pass.
    """
    module.zero_grad()
    loss_fn(module).backward()
    analytic = {name: (p.grad if p.grad is not None else np.zeros(p.shape)) for name, p in module.named_parameters()}
    oracle = module.astype(np.float64)
    oracle_params = dict(oracle.named_parameters())
    rng = np.random.default_rng(seed)
    reports: dict[str, GradCheckReport] = {}
    # the floor uses the largest numeric entry across all parameters
    numerics: dict[str, tuple[list, np.ndarray]] = {}
    with no_grad():
        for name, p in module.named_parameters():
            coords = _select_coords(p.shape, coords_per_param, rng, None)
            q = oracle_params[name]
            vals = np.zeros(len(coords))
            for k, ix in enumerate(coords):
                orig = q.data[ix]
                q.data[ix] = orig + eps
                f_plus = loss_fn(oracle).item()
                q.data[ix] = orig - eps
                f_minus = loss_fn(oracle).item()
                q.data[ix] = orig
                vals[k] = (f_plus - f_minus) / (2 * eps)
            numerics[name] = (coords, vals)
    scale = max((float(np.max(np.abs(v))) for _, v in numerics.values() if v.size), default=0.0)
    for name, (coords, vals) in numerics.items():
        a = np.array([analytic[name][ix] for ix in coords], dtype=np.float64)
        floor = max(floor_scale * scale, 1e-30)
        rel = np.abs(a - vals) / np.maximum(np.maximum(np.abs(a), np.abs(vals)), floor)
        worst = int(np.argmax(rel))
        failures = [(coords[k], a[k], vals[k], rel[k]) for k in np.flatnonzero(rel > tol)]
        reports[name] = GradCheckReport(
            passed=not failures,
            max_rel_error=float(rel[worst]),
            max_abs_error=float(np.max(np.abs(a - vals))),
            n_checked=len(coords),
            tol=tol,
            worst_index=coords[worst],
            failures=failures,
        )
    module.zero_grad()
    return reports
