"""Samples, datasets, directory loading and the low-data subsampling protocol."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from biclip.data.btsr import read_tensor_file, write_tensor_file
from biclip.errors import ConfigError, DatasetError, EmbeddingDimensionError, MissingFileError, NonBinaryMaskError

MANIFEST = "manifest.tsv"
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class Sample:
    """image [3,H,W] in [0,1], mask [1,H,W] in {0,1}, raw text embedding [D]."""

    id: str
    image: np.ndarray
    mask: np.ndarray
    text_embedding: np.ndarray
    split: str = "train"
    attributes: dict = field(default_factory=dict, compare=False)


def check_binary_mask(mask: np.ndarray, what: str = "mask") -> None:
    bad = ~((mask == 0) | (mask == 1))
    if np.any(bad):
        value = mask[bad].flat[0]
        raise NonBinaryMaskError(f"{what} contains non-binary value {value!r}")


@dataclass(frozen=True)
class Dataset:
    samples: tuple[Sample, ...]
    split: str = "train"

    def __post_init__(self):
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise DatasetError(f"duplicate sample ids: {dup[:5]}")
        dims = {s.text_embedding.shape[0] for s in self.samples}
        if len(dims) > 1:
            raise EmbeddingDimensionError(f"text embeddings have inconsistent dimensions {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i) -> Sample:
        return self.samples[i]

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    @property
    def text_dim(self) -> int:
        return int(self.samples[0].text_embedding.shape[0])

    @property
    def image_shape(self) -> tuple[int, ...]:
        return tuple(self.samples[0].image.shape)

    def images(self) -> np.ndarray:
        return np.stack([s.image for s in self.samples])

    def masks(self) -> np.ndarray:
        return np.stack([s.mask for s in self.samples])

    def texts(self) -> np.ndarray:
        return np.stack([s.text_embedding for s in self.samples])

    def select_split(self, name: str) -> "Dataset":
        return Dataset(tuple(s for s in self.samples if s.split == name), split=name)

    def splits(self) -> list[str]:
        return sorted({s.split for s in self.samples})


def subsample(d: Dataset, fraction: float, seed: int) -> Dataset:
    """Seeded uniform draw of max(1, round(fraction * |d|)) samples, original order kept."""
    if not (0.0 < fraction <= 1.0):
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    if fraction == 1.0:
        return d
    n = len(d)
    # round half up; Python's round() would bank to even
    size = max(1, int(math.floor(fraction * n + 0.5)))
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(n, size=size, replace=False))
    return Dataset(tuple(d.samples[i] for i in keep), split=d.split)


def save_dataset(d: Dataset, root: str | os.PathLike) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for s in d.samples:
        write_tensor_file(s.image, root / f"{s.id}.img.btsr")
        write_tensor_file(s.mask, root / f"{s.id}.mask.btsr")
        write_tensor_file(s.text_embedding, root / f"{s.id}.txt.btsr")
    with open(root / MANIFEST, "w", encoding="utf-8", newline="") as fh:
        fh.write("id\tsplit\n")
        for s in d.samples:
            fh.write(f"{s.id}\t{s.split}\n")
    return root


def load_dataset(root_dir: str | os.PathLike, split: str | None = None) -> Dataset:
    """Load every manifest row (or only rows of ``split``) from a dataset directory."""
    root = Path(root_dir)
    manifest = root / MANIFEST
    if not manifest.is_file():
        raise MissingFileError(f"{manifest} not found")
    with open(manifest, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["id", "split"]:
            raise DatasetError(f"{manifest}: header must be 'id<TAB>split', got {header}")
        rows = [(r[0], r[1]) for r in reader if r]

    samples = []
    for sample_id, tag in rows:
        if split is not None and tag != split:
            continue
        paths = {kind: root / f"{sample_id}.{kind}.btsr" for kind in ("img", "mask", "txt")}
        for kind, path in paths.items():
            if not path.is_file():
                raise MissingFileError(f"sample {sample_id!r}: missing {kind} file {path.name}")
        image = read_tensor_file(paths["img"]).data
        mask = read_tensor_file(paths["mask"]).data
        text = read_tensor_file(paths["txt"]).data.reshape(-1)
        if mask.ndim == 2:
            mask = mask[None]
        if image.ndim != 3 or image.shape[0] != 3:
            raise DatasetError(f"sample {sample_id!r}: image must be [3,H,W], got {list(image.shape)}")
        if mask.shape != (1,) + image.shape[1:]:
            raise DatasetError(f"sample {sample_id!r}: mask shape {list(mask.shape)} does not match image")
        check_binary_mask(mask, what=f"sample {sample_id!r} mask")
        if image.min() < 0 or image.max() > 1:
            raise DatasetError(f"sample {sample_id!r}: image values outside [0, 1]")
        samples.append(Sample(sample_id, image, mask, text, split=tag))
    dims = {s.text_embedding.shape[0] for s in samples}
    if len(dims) > 1:
        raise EmbeddingDimensionError(f"{root}: text embeddings have inconsistent dimensions {sorted(dims)}")
    return Dataset(tuple(samples), split=split or "all")
