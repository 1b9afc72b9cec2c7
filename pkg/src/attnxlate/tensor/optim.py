from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .core import ShapeError, Tensor

BETA1 = 0.5
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPS
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``.

    Only names present in ``grads`` are touched; the step counter advances
    once per call regardless of how many parameters are updated.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError(f"grad for {name} has shape {g.shape}, param {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            v = state.v[name] = np.zeros_like(p)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)


class Adam:
    """Adam over a named parameter group.

    Names listed in ``frozen`` are skipped entirely: neither the parameter
    nor its moment estimates change while frozen.
    """

    def __init__(self, params: Mapping[str, Tensor], lr: float = 2e-4, betas=(BETA1, BETA2),
                 eps: float = EPS):
        self.params = dict(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)
        self.frozen: set[str] = set()

    def freeze(self, names: Iterable[str]) -> None:
        self.frozen.update(names)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        grads = {}
        for name, p in self.params.items():
            if name in self.frozen:
                continue
            grads[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
        adam_step({n: p.data for n, p in self.params.items()}, grads, self.state)

    def state_dict(self) -> dict:
        s = self.state
        return {"lr": s.lr, "beta1": s.beta1, "beta2": s.beta2, "eps": s.eps, "step": s.step,
                "frozen": sorted(self.frozen), "m": dict(s.m), "v": dict(s.v)}

    def load_state_dict(self, d: Mapping) -> None:
        self.state = AdamState(lr=d["lr"], beta1=d["beta1"], beta2=d["beta2"], eps=d["eps"],
                               step=d["step"],
                               m={k: np.array(a) for k, a in d["m"].items()},
                               v={k: np.array(a) for k, a in d["v"].items()})
        self.frozen = set(d.get("frozen", ()))
