"""Attention-guided composition, cycle reconstruction, discriminator masking and LSGAN losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import ShapeError, Tensor
from .tensor import ops

LAMBDA_CYC = 10.0
TAU = 0.1

# network-like: anything mapping an image tensor to a tensor
Mapper = Callable[[Tensor], Tensor]


@dataclass
class TranslationOutput:
    raw: Tensor
    attention: Tensor
    foreground: Tensor
    background: Tensor
    composed: Tensor


@dataclass
class CycleOutput:
    forward: TranslationOutput
    backward: TranslationOutput

    @property
    def reconstruction(self) -> Tensor:
        return self.backward.composed


@dataclass
class LossBundle:
    adv_g: float
    adv_d: float
    cyc: float
    total_g: float


def _check_image_and_map(image: Tensor, attention: Tensor) -> None:
    if image.ndim != 4 or attention.ndim != 4:
        raise ShapeError("expected NCHW tensors")
    if attention.shape[1] != 1 or attention.shape[0] != image.shape[0] or attention.shape[2:] != image.shape[2:]:
        raise ShapeError(f"attention {attention.shape} does not match image {image.shape}")


def compose(input: Tensor, raw: Tensor, attention: Tensor) -> TranslationOutput:
    """Blend the translated foreground into the untouched background.

    ``composed = attention * raw + (1 - attention) * input`` with the
    single-channel attention broadcast over the colour channels.
    """
    if input.shape != raw.shape:
        raise ShapeError(f"input {input.shape} and raw {raw.shape} differ")
    _check_image_and_map(input, attention)
    fg = attention * raw
    bg = (1.0 - attention) * input
    return TranslationOutput(raw, attention, fg, bg, fg + bg)


def translate(s: Tensor, generator: Mapper, attention_net: Mapper) -> TranslationOutput:
    return compose(s, generator(s), attention_net(s))


def cycle(s: Tensor, g_fwd: Mapper, a_fwd: Mapper, g_bwd: Mapper, a_bwd: Mapper,
          reuse_attention: bool = False) -> CycleOutput:
    """s -> s' -> s''. The return trip's attention comes from ``a_bwd(s')``,
    or is the forward map itself when ``reuse_attention`` is set."""
    fwd = translate(s, g_fwd, a_fwd)
    s1 = fwd.composed
    att = fwd.attention if reuse_attention else a_bwd(s1)
    bwd = compose(s1, g_bwd(s1), att)
    return CycleOutput(fwd, bwd)


def cycle_loss(s: Tensor, s2: Tensor) -> Tensor:
    if s.shape != s2.shape:
        raise ShapeError(f"shapes {s.shape} and {s2.shape} differ")
    return ops.l1_mean(s - s2)


def adversarial_losses(d_real: Tensor, d_fake: Tensor) -> tuple[Tensor, Tensor]:
    """Least-squares GAN losses: (discriminator loss, generator loss).

    Real target 1, fake target 0, with the usual one-half on the
    discriminator side.
    """
    adv_d = 0.5 * ops.sq_mean(d_real - 1.0) + 0.5 * ops.sq_mean(d_fake)
    adv_g = ops.sq_mean(d_fake - 1.0)
    return adv_d, adv_g


masked_adversarial_losses = adversarial_losses


def threshold_mask(attention: Tensor | np.ndarray, tau: float = TAU) -> Tensor:
    """Binary map, 1 where attention > tau. Carries no gradient."""
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"tau must lie in [0, 1), got {tau}")
    a = attention.data if isinstance(attention, Tensor) else np.asarray(attention)
    return Tensor((a > tau).astype(a.dtype if np.issubdtype(a.dtype, np.floating) else np.float32))


def mask_for_discriminator(image: Tensor, attention: Tensor, tau: float = TAU) -> Tensor:
    """Keep pixels whose attention exceeds tau, zero the rest.

    Gradients reach ``image`` (for a generated sample) but never the mask.
    """
    _check_image_and_map(image, attention)
    return image * threshold_mask(attention, tau)


def total_generator_loss(adv_g_s, adv_g_t, cyc_s, cyc_t, lambda_cyc: float = LAMBDA_CYC):
    if lambda_cyc < 0:
        raise ValueError("lambda_cyc must be non-negative")
    return adv_g_s + adv_g_t + lambda_cyc * (cyc_s + cyc_t)


def constant_map(value: float) -> Mapper:
    """An attention stand-in producing a constant single-channel map."""

    def amap(x: Tensor) -> Tensor:
        return Tensor(np.full((x.shape[0], 1, *x.shape[2:]), value, dtype=x.dtype))

    return amap
