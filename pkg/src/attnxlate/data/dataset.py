from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .images import load_image

SPLIT_DIRS = {("train", "A"): "trainA", ("train", "B"): "trainB",
              ("test", "A"): "testA", ("test", "B"): "testB"}
MASK_DIRS = {"A": "maskA", "B": "maskB"}


@dataclass
class Dataset:
    """Images of one domain, stacked as float32 NCHW in [-1, 1].

    ``masks`` (N x 1 x H x W, values 0/1) are present for synthetic data.
    """
    images: np.ndarray
    masks: Optional[np.ndarray] = None
    domain: str = "A"
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"images must be N x C x H x W, got {self.images.shape}")
        if self.masks is not None:
            if self.masks.shape != (self.images.shape[0], 1, *self.images.shape[2:]):
                raise ValueError(f"mask shape {self.masks.shape} does not match images {self.images.shape}")
            if not np.isin(self.masks, (0.0, 1.0)).all():
                raise ValueError("masks must be binary")
        if not self.names:
            self.names = [f"{i:05d}" for i in range(len(self))]

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.images[idx], None if self.masks is None else self.masks[idx],
                       self.domain, [self.names[i] for i in idx])

    @property
    def empty_indices(self) -> np.ndarray:
        if self.masks is None:
            raise ValueError("dataset has no masks")
        return np.flatnonzero(self.masks.reshape(len(self), -1).sum(axis=1) == 0)


def load_folder(folder: str | Path, mask_folder: str | Path | None = None,
                domain: str = "A") -> Dataset:
    """Load every PNG in ``folder`` in lexicographic order."""
    folder = Path(folder)
    if not folder.is_dir():
        raise FileNotFoundError(f"no such directory: {folder}")
    files = sorted(p for p in folder.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise ValueError(f"no PNG images in {folder}")
    images = [load_image(p) for p in files]
    shape = images[0].shape
    for p, im in zip(files, images):
        if im.shape != shape:
            raise ValueError(f"{p.name} has shape {im.shape}, expected {shape}")
    masks = None
    if mask_folder is not None and Path(mask_folder).is_dir():
        mpaths = [Path(mask_folder) / p.name for p in files]
        if all(m.exists() for m in mpaths):
            masks = np.stack([np.rint(load_image(m, channels=1, value_range="unit")) for m in mpaths])
            masks = masks.astype(np.float32)
    return Dataset(np.stack(images).astype(np.float32), masks, domain, [p.name for p in files])


def load_dataset(root: str | Path, split: str = "train", domain: str = "A") -> Dataset:
    """Load one domain/split from a trainA/trainB/testA/testB[/maskA/maskB] tree."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"no such dataset directory: {root}")
    try:
        sub = SPLIT_DIRS[(split, domain)]
    except KeyError:
        raise ValueError(f"unknown split/domain {split!r}/{domain!r}") from None
    return load_folder(root / sub, root / MASK_DIRS[domain], domain)


def load_pair(root: str | Path, split: str = "train") -> tuple[Dataset, Dataset]:
    return load_dataset(root, split, "A"), load_dataset(root, split, "B")
