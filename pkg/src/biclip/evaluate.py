"""Checkpoint evaluation, robustness sweeps and report emission."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from biclip import augment
from biclip.autodiff import no_grad
from biclip.data.dataset import Dataset
from biclip.errors import ConfigError, CorruptionSpecError
from biclip.metrics import MetricResult, binarize, score_masks
from biclip.model import BiCLIPModel, load_checkpoint

SWEEP_HEADER = ("condition", "dice", "miou")


def _as_model(checkpoint) -> BiCLIPModel:
    if isinstance(checkpoint, BiCLIPModel):
        return checkpoint
    path = Path(checkpoint)
    if not (path / "config.echo").exists() and (path / "checkpoint" / "config.echo").exists():
        path = path / "checkpoint"
    return load_checkpoint(path)


def evaluate(checkpoint, dataset: Dataset, corruption: augment.CorruptionSpec | None = None) -> MetricResult:
    """Mean per-sample Dice / IoU on ``dataset``; ``corruption`` hits each image before inference."""
    if len(dataset) == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    model = _as_model(checkpoint)
    if dataset.text_dim != model.cfg.d_raw:
        raise ConfigError(f"dataset text dim {dataset.text_dim} != checkpoint d_raw {model.cfg.d_raw}")
    if dataset.image_shape[1:] != (model.cfg.image_side,) * 2:
        raise ConfigError(f"dataset images {dataset.image_shape} do not match checkpoint side {model.cfg.image_side}")
    prob = model.predict_proba(dataset.images(), dataset.texts(), corruption=corruption, ids=dataset.ids)
    return score_masks(binarize(prob), dataset.masks())


def view_consistency(model: BiCLIPModel, dataset: Dataset, seed: int = 0) -> float:
    """Mean cosine distance 1 - cos(p_w, p_s) over ``dataset`` for seeded weak/strong views."""
    images, masks, texts = dataset.images(), dataset.masks(), dataset.texts()
    side = model.cfg.image_side
    dists = []
    with no_grad():
        for start in range(0, len(dataset), 16):
            ids = dataset.ids[start : start + 16]
            spatial = [augment.draw_spatial(np.random.default_rng(augment.derive_seed(seed, i, "eval-spatial")), side, side) for i in ids]
            weak = [augment.draw_weak(np.random.default_rng(augment.derive_seed(seed, i, "eval-weak"))) for i in ids]
            strong = [augment.draw_strong(np.random.default_rng(augment.derive_seed(seed, i, "eval-strong"))) for i in ids]
            out = model.step_outputs(
                images[start : start + 16], masks[start : start + 16], texts[start : start + 16], spatial, weak, strong
            )
            pw, ps = out.p_w.data.astype(np.float64), out.p_s.data.astype(np.float64)
            cos = (pw * ps).sum(-1) / (np.linalg.norm(pw, axis=-1) * np.linalg.norm(ps, axis=-1))
            dists.extend(1.0 - cos)
    return float(np.mean(dists))


def parse_grid(text: str) -> list[str]:
    labels = [part.strip() for part in text.split(",") if part.strip()]
    if not labels:
        raise CorruptionSpecError("sweep grid is empty")
    for label in labels:
        if label.startswith("fraction:"):
            _fraction_of(label)
        else:
            augment.parse_corruption(label)
    return labels


def _fraction_of(label: str) -> float:
    try:
        pct = float(label.split(":", 1)[1])
    except ValueError:
        raise CorruptionSpecError(f"bad fraction condition {label!r}") from None
    if not 0 < pct <= 100:
        raise CorruptionSpecError(f"fraction percentage must lie in (0, 100], got {label!r}")
    return pct / 100.0


@dataclass
class SweepReport:
    rows: list[tuple[str, float, float]] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SWEEP_HEADER)
        for label, d, m in self.rows:
            writer.writerow([label, repr(d), repr(m)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SweepReport":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if tuple(header) != SWEEP_HEADER:
            raise ValueError(f"unexpected sweep header {header}")
        return cls([(r[0], float(r[1]), float(r[2])) for r in reader if r])

    def to_text(self) -> str:
        width = max([len("condition")] + [len(r[0]) for r in self.rows])
        lines = [f"{'condition':<{width}}  {'dice':>7}  {'miou':>7}"]
        lines += [f"{label:<{width}}  {d:7.4f}  {m:7.4f}" for label, d, m in self.rows]
        return "\n".join(lines) + "\n"

    def save(self, directory: str | os.PathLike) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "sweep.csv").write_text(self.to_csv(), encoding="utf-8")
        (directory / "sweep.txt").write_text(self.to_text(), encoding="utf-8")


def robustness_sweep(checkpoint, dataset: Dataset, grid, seed: int = 0, train_fn=None) -> SweepReport:
    """Evaluate every grid condition in order.

    ``clean``, ``poisson:D`` and ``blur:K[:A]`` reuse ``checkpoint``;
    ``fraction:P`` conditions need ``train_fn(fraction) -> model`` to retrain.
    """
    labels = parse_grid(grid) if isinstance(grid, str) else list(grid)
    if not labels:
        raise CorruptionSpecError("sweep grid is empty")
    model = _as_model(checkpoint) if checkpoint is not None else None
    report = SweepReport()
    for label in labels:
        if label.startswith("fraction:"):
            if train_fn is None:
                raise ConfigError(f"{label} needs a training function (low-data sweep)")
            result = evaluate(train_fn(_fraction_of(label)), dataset)
        else:
            if model is None:
                raise ConfigError(f"{label} needs a checkpoint")
            result = evaluate(model, dataset, augment.parse_corruption(label, seed=seed))
        report.rows.append((label, result.dice, result.iou))
    return report


def metrics_table(csv_text: str) -> str:
    """Render a training ``metrics.csv`` as a markdown table."""
    rows = list(csv.reader(io.StringIO(csv_text)))
    if not rows:
        raise ValueError("empty metrics file")
    header, body = rows[0], [r for r in rows[1:] if r]

    def cell(v: str) -> str:
        try:
            f = float(v)
        except ValueError:
            return v
        return v if f.is_integer() and "." not in v and "e" not in v else f"{f:.4g}"

    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(cell(v) for v in r) + " |" for r in body]
    return "\n".join(lines) + "\n"
