"""Kernel Inception Distance style evaluation and attention/mask metrics.

A pretrained Inception network is out of reach here, so images are embedded
by a fixed, seeded random convolutional network; any other embedding can be
used by passing feature matrices directly with ``extractor=None``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .tensor import Tensor, no_grad
from .tensor import ops
from .translate import TAU, TranslationOutput, threshold_mask, translate

log = logging.getLogger(__name__)

Kernel = Callable[[np.ndarray, np.ndarray], np.ndarray]


class FeatureExtractor:
    """Four strided 4x4 convolutions (leaky ReLU) and global average pooling.

    Weights are He-normal draws from ``seed``; the network is never trained.
    """

    def __init__(self, seed: int = 0, dim: int = 128, in_channels: int = 3):
        self.seed = seed
        self.dim = dim
        rng = np.random.default_rng([seed, 7919])
        widths = [in_channels, dim // 8, dim // 4, dim // 2, dim]
        self.weights = []
        for cin, cout in zip(widths[:-1], widths[1:]):
            std = math.sqrt(2.0 / (cin * 16))
            w = rng.normal(0.0, std, size=(cout, cin, 4, 4))
            self.weights.append(Tensor(w.astype(np.float64)))

    def __call__(self, images: np.ndarray) -> np.ndarray:
        return extract_features(images, self)


def extract_features(images: np.ndarray, extractor: FeatureExtractor) -> np.ndarray:
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[0] == 0:
        raise ValueError(f"need a non-empty N x C x H x W batch, got {images.shape}")
    if images.shape[1] != extractor.weights[0].shape[1]:
        raise ValueError(f"extractor expects {extractor.weights[0].shape[1]} channels")
    # one image per forward pass: BLAS rounding depends on matrix shape, and a
    # row must not depend on which other images share its batch
    rows = []
    with no_grad():
        for img in images:
            h = Tensor(img[None].astype(np.float64))
            for w in extractor.weights:
                h = ops.leaky_relu(ops.conv2d(h, w, None, stride=2, padding=1))
            rows.append(h.data.mean(axis=(2, 3)))
    return np.concatenate(rows, axis=0)


def polynomial_kernel(degree: int = 3, gamma: Optional[float] = None, coef0: float = 1.0) -> Kernel:
    """k(a, b) = (gamma * a.b + coef0) ** degree, gamma defaulting to 1/d."""

    def k(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        g = 1.0 / a.shape[1] if gamma is None else gamma
        return (g * (a @ b.T) + coef0) ** degree

    return k


CUBIC = polynomial_kernel(3)


def _fsum(m: np.ndarray) -> float:
    return math.fsum(m.ravel().tolist())


def mmd2_unbiased(X: np.ndarray, Y: np.ndarray, kernel: Kernel = CUBIC) -> float:
    """Unbiased U-statistic estimate of the squared MMD between two samples.

    Sums are exactly rounded and the cross term is evaluated in a canonical
    argument order, so swapping X and Y gives a bitwise-identical result.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[1] != Y.shape[1]:
        raise ValueError(f"feature matrices must be 2-D with equal width: {X.shape}, {Y.shape}")
    n, m = len(X), len(Y)
    if n < 2 or m < 2:
        raise ValueError("need at least two samples in each set")

    def within(Z):
        K = kernel(Z, Z)
        return (_fsum(K) - _fsum(np.diag(K))) / (len(Z) * (len(Z) - 1))

    A, B = (X, Y) if X.tobytes() <= Y.tobytes() else (Y, X)
    cross = _fsum(kernel(A, B)) / (n * m)
    wx, wy = within(X), within(Y)
    # order-independent combination of the two within-set terms
    return math.fsum([wx, wy]) - 2.0 * cross


@dataclass
class KidReport:
    mean: float
    std: float
    n_splits: int
    split_size: int
    kernel: str = "polynomial degree 3, gamma 1/d, coef0 1"
    values: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def kid_report(real, fake, extractor: Optional[FeatureExtractor] = None, n_splits: int = 10,
               split_size: int = 50, seed: int = 0, kernel: Kernel = CUBIC,
               disjoint: Optional[bool] = None) -> KidReport:
    """Mean and standard deviation of the unbiased MMD over random splits.

    Each split draws ``split_size`` items without replacement from each pool.
    If ``real`` and ``fake`` are the same pool (or ``disjoint`` is set) the two
    halves of a split never share an item. Pools smaller than ``split_size``
    shrink the split with a warning. With ``extractor=None`` inputs are
    already feature matrices.
    """
    same = disjoint if disjoint is not None else real is fake
    fr = np.asarray(real) if extractor is None else extract_features(real, extractor)
    ff = fr if (real is fake and extractor is not None) else (
        np.asarray(fake) if extractor is None else extract_features(fake, extractor))
    if min(len(fr), len(ff)) < 2:
        raise ValueError("each pool needs at least two items")
    if n_splits < 1:
        raise ValueError("n_splits must be >= 1")
    limit = min(len(fr), len(ff)) // 2 if same else min(len(fr), len(ff))
    size = split_size
    if limit < split_size:
        size = max(limit, 2)
        log.warning("pool too small for split size %d; using %d", split_size, size)
        if same and size * 2 > len(fr):
            raise ValueError("pool too small for disjoint splits")
    rng = np.random.default_rng(seed)
    values = []
    for _ in range(n_splits):
        if same:
            idx = rng.permutation(len(fr))[:2 * size]
            a, b = fr[idx[:size]], fr[idx[size:]]
        else:
            a = fr[rng.permutation(len(fr))[:size]]
            b = ff[rng.permutation(len(ff))[:size]]
        values.append(mmd2_unbiased(a, b, kernel))
    vals = np.array(values)
    return KidReport(float(vals.mean()), float(vals.std()), n_splits, size, values=values)


@dataclass
class MaskMetrics:
    iou: float
    attention_contrast: float
    background_l1: float

    def to_dict(self) -> dict:
        return {k: (None if isinstance(v, float) and math.isnan(v) else v)
                for k, v in asdict(self).items()}


def mask_metrics(output: TranslationOutput, input, gt_mask, tau: float = TAU) -> MaskMetrics:
    """IoU of the thresholded attention with the ground truth, mean attention
    inside minus outside the ground truth, and mean |composed - input| over
    ground-truth background pixels. Quantities with no pixels to average over
    are NaN; IoU of two empty masks is 1."""
    att = output.attention.data if isinstance(output.attention, Tensor) else np.asarray(output.attention)
    comp = output.composed.data if isinstance(output.composed, Tensor) else np.asarray(output.composed)
    x = input.data if isinstance(input, Tensor) else np.asarray(input)
    gt = gt_mask.data if isinstance(gt_mask, Tensor) else np.asarray(gt_mask)
    if not np.isin(gt, (0, 1)).all():
        raise ValueError("ground-truth mask must be binary")
    if gt.shape != att.shape or comp.shape != x.shape or x.shape[2:] != gt.shape[2:]:
        raise ValueError("shapes of attention, mask, input and output are not congruent")
    pred = threshold_mask(att, tau).data.astype(bool)
    g = gt.astype(bool)
    union = np.logical_or(pred, g).sum()
    iou = 1.0 if union == 0 else float(np.logical_and(pred, g).sum() / union)
    inside = att[g].mean() if g.any() else np.nan
    outside = att[~g].mean() if (~g).any() else np.nan
    bg = np.broadcast_to(~g, x.shape)
    background_l1 = float(np.abs(comp - x)[bg].mean()) if bg.any() else float("nan")
    return MaskMetrics(iou, float(inside - outside), background_l1)


def translate_dataset(generator, attention_net, images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Composed outputs and attention maps for a stack of images, one image per pass."""
    composed, attention = [], []
    with no_grad():
        for i in range(len(images)):
            out = translate(Tensor(images[i:i + 1]), generator, attention_net)
            composed.append(out.composed.data)
            attention.append(out.attention.data)
    return np.concatenate(composed), np.concatenate(attention)


def attention_report(generator, attention_net, images: np.ndarray, masks: np.ndarray,
                     tau: float = TAU) -> dict:
    """Mask metrics over a labelled set plus the mean attention on its empty images."""
    composed, attention = translate_dataset(generator, attention_net, images)
    out = TranslationOutput(None, attention, None, None, composed)
    report = mask_metrics(out, images, masks, tau).to_dict()
    empty = np.flatnonzero(masks.reshape(len(masks), -1).sum(axis=1) == 0)
    report["empty_image_attention"] = float(attention[empty].mean()) if len(empty) else None
    return report
