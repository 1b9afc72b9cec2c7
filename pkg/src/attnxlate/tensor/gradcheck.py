from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import NonFiniteError, Tensor, backward


def grad_check(f: Callable[..., Tensor], inputs: Sequence[np.ndarray], eps: float = 1e-5,
               floor: float | None = None) -> float:
    """Worst per-coordinate relative error between autodiff and central differences.

    ``f`` receives fresh ``Tensor`` leaves built from ``inputs`` and must return
    a scalar tensor. The relative error of a coordinate is
    ``|a - n| / max(|a|, |n|, floor)``. The default ``floor`` is 1e-3 of the
    largest numerical gradient magnitude, so coordinates whose true gradient
    is ~0 are judged against the gradient's overall scale rather than noise.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = f(*leaves)
    backward(out)
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]

    def evaluate(vals: list[np.ndarray]) -> float:
        v = float(f(*[Tensor(a) for a in vals]).data)
        if not np.isfinite(v):
            raise NonFiniteError("function evaluated to a non-finite value")
        return v

    numeric = []
    for base in arrays:
        flat = base.reshape(-1)
        gn = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = evaluate(arrays)
            flat[i] = orig - eps
            fm = evaluate(arrays)
            flat[i] = orig
            gn[i] = (fp - fm) / (2.0 * eps)
        numeric.append(gn)

    if floor is None:
        floor = max(1e-3 * max(float(np.abs(g).max(initial=0.0)) for g in numeric), 1e-12)
    worst = 0.0
    for ga, gn in zip(analytic, numeric):
        ga = ga.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(ga), np.abs(gn)), floor)
        if ga.size:
            worst = max(worst, float((np.abs(ga - gn) / denom).max()))
    return worst
