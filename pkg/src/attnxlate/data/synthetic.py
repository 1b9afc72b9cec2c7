"""Two-domain synthetic images with ground-truth foreground masks.

Domain A holds solid warm-coloured discs, domain B high-contrast striped
discs. Backgrounds (two-colour linear gradients plus pixel noise) come from
one shared distribution, so only the foreground separates the domains. A
fraction of images carry no object and an all-zero mask.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .dataset import MASK_DIRS, SPLIT_DIRS, Dataset
from .images import encode_png, from_uint8, to_uint8
from .checkpoint import atomic_write_bytes


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 0
    count: int = 200
    test_count: int = 50
    image_size: int = 64
    radius_min: int = 8
    radius_max: int = 20
    empty_fraction: float = 0.1
    noise_std: float = 0.04
    stripe_period: int = 6

    def validate(self) -> None:
        if self.count < 1 or self.test_count < 0:
            raise ValueError("count must be >= 1 and test_count >= 0")
        if self.image_size < 8 or self.image_size % 4:
            raise ValueError("image_size must be a multiple of 4 and >= 8")
        if not 1 <= self.radius_min <= self.radius_max:
            raise ValueError("need 1 <= radius_min <= radius_max")
        if 2 * self.radius_max + 1 > self.image_size:
            raise ValueError("largest disc does not fit in the image")
        if not 0.0 <= self.empty_fraction <= 1.0:
            raise ValueError("empty_fraction must lie in [0, 1]")
        if self.noise_std < 0 or self.stripe_period < 2:
            raise ValueError("noise_std must be >= 0 and stripe_period >= 2")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synthetic spec keys: {sorted(unknown)}")
        spec = cls(**d)
        spec.validate()
        return spec

    @classmethod
    def from_json_file(cls, path: str | Path) -> "SyntheticSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def disc_mask(size: int, cy: int, cx: int, r: int) -> np.ndarray:
    yy, xx = np.mgrid[:size, :size]
    return ((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r).astype(np.float32)


def _background(rng: np.random.Generator, size: int, noise_std: float) -> np.ndarray:
    c0 = rng.uniform(-0.7, 0.5, size=3)
    c1 = rng.uniform(-0.7, 0.5, size=3)
    theta = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[:size, :size] / (size - 1)
    ramp = (np.cos(theta) * (xx - 0.5) + np.sin(theta) * (yy - 0.5)) / np.sqrt(0.5) + 0.5
    ramp = np.clip(ramp, 0, 1)
    img = c0[:, None, None] * (1 - ramp) + c1[:, None, None] * ramp
    return img + rng.normal(0, noise_std, size=img.shape)


def _solid(rng: np.random.Generator, size: int, period: int) -> np.ndarray:
    color = np.array([rng.uniform(0.6, 0.95), rng.uniform(-0.4, 0.2), rng.uniform(-0.9, -0.5)])
    return np.broadcast_to(color[:, None, None], (3, size, size))


def _striped(rng: np.random.Generator, size: int, period: int) -> np.ndarray:
    theta = rng.uniform(0, np.pi)
    phase = rng.uniform(0, period)
    yy, xx = np.mgrid[:size, :size]
    u = np.cos(theta) * xx + np.sin(theta) * yy + phase
    band = (np.floor(2 * u / period) % 2).astype(np.float64)
    light, dark = rng.uniform(0.75, 0.95), rng.uniform(-0.95, -0.75)
    v = dark + (light - dark) * band
    return np.broadcast_to(v, (3, size, size))


_TEXTURES = {"A": _solid, "B": _striped}


def _domain(spec: SyntheticSpec, domain: str, split: str, n: int) -> Dataset:
    split_id = {"train": 0, "test": 1}[split]
    rng = np.random.default_rng([spec.seed, split_id, 0 if domain == "A" else 1])
    size = spec.image_size
    n_empty = int(round(spec.empty_fraction * n))
    empty = np.zeros(n, dtype=bool)
    empty[rng.permutation(n)[:n_empty]] = True
    images = np.empty((n, 3, size, size), dtype=np.float32)
    masks = np.zeros((n, 1, size, size), dtype=np.float32)
    for i in range(n):
        img = _background(rng, size, spec.noise_std)
        if not empty[i]:
            r = int(rng.integers(spec.radius_min, spec.radius_max + 1))
            cy = int(rng.integers(r, size - r))
            cx = int(rng.integers(r, size - r))
            m = disc_mask(size, cy, cx, r)
            tex = _TEXTURES[domain](rng, size, spec.stripe_period)
            tex = tex + rng.normal(0, spec.noise_std, size=tex.shape)
            img = img * (1 - m) + tex * m
            masks[i, 0] = m
        # quantize now so in-memory data equals what a PNG round trip gives back
        images[i] = from_uint8(to_uint8(np.clip(img, -1, 1)))
    prefix = split
    return Dataset(images, masks, domain, [f"{prefix}_{i:05d}.png" for i in range(n)])


def generate_synthetic(spec: SyntheticSpec, split: str = "train") -> tuple[Dataset, Dataset]:
    spec.validate()
    n = spec.count if split == "train" else spec.test_count
    if n < 1:
        raise ValueError(f"no images requested for split {split!r}")
    return _domain(spec, "A", split, n), _domain(spec, "B", split, n)


def write_dataset(out_dir: str | Path, spec: SyntheticSpec) -> Path:
    """Write trainA/trainB/testA/testB plus maskA/maskB and a spec echo."""
    spec.validate()
    out = Path(out_dir)
    splits = ["train"] + (["test"] if spec.test_count > 0 else [])
    for split in splits:
        for ds in generate_synthetic(spec, split):
            img_dir = out / SPLIT_DIRS[(split, ds.domain)]
            mask_dir = out / MASK_DIRS[ds.domain]
            for name, img, m in zip(ds.names, ds.images, ds.masks):
                atomic_write_bytes(img_dir / name, encode_png(img))
                atomic_write_bytes(mask_dir / name, encode_png(m, "unit"))
    atomic_write_bytes(out / "synthetic_spec.json", spec.to_json().encode())
    return out
