"""Two-stage adversarial training of the attention-guided translation model.

Stage 1 (epoch < switch_epoch): discriminators see whole images; generators
and attention networks are trained jointly on the adversarial plus cycle
objective. Stage 2: attention networks are frozen, discriminators lose their
instance normalization and only see pixels whose attention exceeds tau.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional

import numpy as np

from . import networks as nets
from .config import TrainConfig
from .data.checkpoint import read_checkpoint, write_checkpoint
from .data.dataset import Dataset
from .tensor import Adam, NonFiniteError, Tensor, backward, no_grad
from .tensor import ops
from .translate import (
    LossBundle, TranslationOutput, adversarial_losses, constant_map, cycle, cycle_loss,
    mask_for_discriminator, total_generator_loss, translate,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
NET_NAMES = ("G_st", "G_ts", "A_s", "A_t", "D_s", "D_t")


class TrainingDiverged(NonFiniteError):
    pass


@dataclass
class StepInfo:
    """What one optimizer step saw; handed to ``on_step`` observers."""
    epoch: int
    step: int
    stage: int
    d_inputs: dict[str, np.ndarray]
    attention: dict[str, np.ndarray]
    bundles: tuple[LossBundle, LossBundle]


@dataclass
class TrainState:
    config: TrainConfig
    nets: dict[str, Optional[nets.Network]]
    optimizers: dict[str, Adam]
    epoch: int = 0
    stage2_applied: bool = False
    history: list[dict] = field(default_factory=list)

    @property
    def attention_s(self):
        return _attention_for(self, "A_s", "A_t")

    @property
    def attention_t(self):
        return _attention_for(self, "A_t", "A_s")

    def attention_networks(self) -> list[nets.Network]:
        return [n for k in ("A_s", "A_t") if (n := self.nets.get(k)) is not None]


def _attention_for(state: TrainState, own: str, other: str):
    net = state.nets.get(own) or state.nets.get(other)
    return net if net is not None else constant_map(1.0)


def _prefixed(prefix: str, net: nets.Network) -> dict[str, Tensor]:
    return {f"{prefix}/{k}": p for k, p in net.params.items()}


def _generator_group(state_nets: dict, g: str, a: str) -> dict[str, Tensor]:
    group = _prefixed(g, state_nets[g])
    if state_nets.get(a) is not None:
        group.update(_prefixed(a, state_nets[a]))
    return group


def _make_optimizers(cfg: TrainConfig, n: dict) -> dict[str, Adam]:
    return {
        "G_st": Adam(_generator_group(n, "G_st", "A_s"), lr=cfg.alpha),
        "G_ts": Adam(_generator_group(n, "G_ts", "A_t"), lr=cfg.alpha),
        "D_s": Adam(_prefixed("D_s", n["D_s"]), lr=cfg.alpha),
        "D_t": Adam(_prefixed("D_t", n["D_t"]), lr=cfg.alpha),
    }


def init_state(cfg: TrainConfig) -> TrainState:
    """Fresh networks and optimizers, all seeded from ``cfg.seed``."""
    m = cfg.width_multiplier
    seeds = {name: [cfg.seed, i] for i, name in enumerate(NET_NAMES)}
    n: dict[str, Optional[nets.Network]] = {
        "G_st": nets.Network(nets.generator_spec(m, cfg.n_residual), seed=seeds["G_st"]),
        "G_ts": nets.Network(nets.generator_spec(m, cfg.n_residual), seed=seeds["G_ts"]),
        "A_s": nets.Network(nets.attention_spec(m), seed=seeds["A_s"]),
        "A_t": nets.Network(nets.attention_spec(m), seed=seeds["A_t"]),
        "D_s": nets.Network(nets.discriminator_spec(m), seed=seeds["D_s"]),
        "D_t": nets.Network(nets.discriminator_spec(m), seed=seeds["D_t"]),
    }
    if cfg.ablation.disable_attention_s:
        n["A_s"] = None
    if cfg.ablation.disable_attention_t:
        n["A_t"] = None
    return TrainState(cfg, n, _make_optimizers(cfg, n))


def stage_for_epoch(cfg: TrainConfig, epoch: int) -> int:
    if not cfg.attention_discriminator_enabled:
        return 1
    return 1 if epoch < cfg.switch_epoch else 2


def masked_discriminator_active(cfg: TrainConfig, stage: int) -> bool:
    return stage == 2 and not cfg.ablation.whole_image_discriminator


def enter_stage2(state: TrainState) -> None:
    """Freeze attention and strip discriminator normalization. Idempotent."""
    if state.stage2_applied:
        return
    cfg = state.config
    if not cfg.ablation.never_freeze_attention:
        for g, a in (("G_st", "A_s"), ("G_ts", "A_t")):
            net = state.nets.get(a)
            if net is not None:
                state.optimizers[g].freeze(_prefixed(a, net))
                net.set_requires_grad(False)
    if masked_discriminator_active(cfg, 2):
        for d in ("D_s", "D_t"):
            rebuilt = state.nets[d].with_instance_norm(False)
            state.nets[d] = rebuilt
            state.optimizers[d].params = _prefixed(d, rebuilt)
    state.stage2_applied = True


# -- one optimizer step -------------------------------------------------------

def _check_finite_losses(values: dict[str, float], epoch: int, step: int) -> None:
    bad = {k: v for k, v in values.items() if not math.isfinite(v)}
    if bad:
        raise TrainingDiverged(f"non-finite loss at epoch {epoch} step {step}: {bad}")


def train_step(s: Tensor, t: Tensor, state: TrainState, stage: int, step: int = 0,
               on_step: Optional[Callable[[StepInfo], None]] = None) -> tuple[LossBundle, LossBundle]:
    """One discriminator update followed by one joint generator/attention update.

    Returns the loss bundles for the S->T and T->S directions.
    """
    cfg = state.config
    ab = cfg.ablation
    N = state.nets
    G_st, G_ts, D_s, D_t = N["G_st"], N["G_ts"], N["D_s"], N["D_t"]
    A_s, A_t = state.attention_s, state.attention_t

    if ab.no_cycle:
        fwd_s, fwd_t = translate(s, G_st, A_s), translate(t, G_ts, A_t)
        rec_s = rec_t = None
    else:
        cyc_s = cycle(s, G_st, A_s, G_ts, A_t, reuse_attention=ab.reuse_cycle_attention)
        cyc_t = cycle(t, G_ts, A_t, G_st, A_s, reuse_attention=ab.reuse_cycle_attention)
        fwd_s, fwd_t = cyc_s.forward, cyc_t.forward
        rec_s, rec_t = cyc_s.reconstruction, cyc_t.reconstruction

    if masked_discriminator_active(cfg, stage):
        real_t = mask_for_discriminator(t, fwd_t.attention, cfg.tau)
        fake_t = mask_for_discriminator(fwd_s.raw, fwd_s.attention, cfg.tau)
        real_s = mask_for_discriminator(s, fwd_s.attention, cfg.tau)
        fake_s = mask_for_discriminator(fwd_t.raw, fwd_t.attention, cfg.tau)
    else:
        real_t, fake_t = t, fwd_s.composed
        real_s, fake_s = s, fwd_t.composed

    # discriminators first, on detached fakes
    adv_d = {}
    for name, D, real, fake in (("D_t", D_t, real_t, fake_t), ("D_s", D_s, real_s, fake_s)):
        opt = state.optimizers[name]
        opt.zero_grad()
        loss_d, _ = adversarial_losses(D(real.detach()), D(fake.detach()))
        adv_d[name] = float(loss_d.data)
        _check_finite_losses({f"adv_{name}": adv_d[name]}, state.epoch, step)
        backward(loss_d)
        opt.step()

    # then generators + attention on the full objective
    adv_g_s = ops.sq_mean(D_t(fake_t) - 1.0)
    adv_g_t = ops.sq_mean(D_s(fake_s) - 1.0)
    if ab.no_cycle:
        zero = Tensor(np.zeros((), dtype=s.dtype))
        cyc_s_loss = cyc_t_loss = zero
    else:
        cyc_s_loss = cycle_loss(s, rec_s)
        cyc_t_loss = cycle_loss(t, rec_t)
    total = total_generator_loss(adv_g_s, adv_g_t, cyc_s_loss, cyc_t_loss, cfg.lambda_cyc)
    values = {"adv_g_s": float(adv_g_s.data), "adv_g_t": float(adv_g_t.data),
              "cyc_s": float(cyc_s_loss.data), "cyc_t": float(cyc_t_loss.data),
              "total": float(total.data)}
    _check_finite_losses(values, state.epoch, step)
    for g in ("G_st", "G_ts"):
        state.optimizers[g].zero_grad()
    backward(total)
    for g in ("G_st", "G_ts"):
        state.optimizers[g].step()

    lam = cfg.lambda_cyc
    b_st = LossBundle(values["adv_g_s"], adv_d["D_t"], values["cyc_s"],
                      values["adv_g_s"] + lam * values["cyc_s"])
    b_ts = LossBundle(values["adv_g_t"], adv_d["D_s"], values["cyc_t"],
                      values["adv_g_t"] + lam * values["cyc_t"])
    if on_step is not None:
        on_step(StepInfo(
            epoch=state.epoch, step=step, stage=stage,
            d_inputs={"real_t": real_t.data, "fake_t": fake_t.data,
                      "real_s": real_s.data, "fake_s": fake_s.data},
            attention={"s": fwd_s.attention.data, "t": fwd_t.attention.data,
                       **({} if ab.no_cycle else {"s_cycle": cyc_s.backward.attention.data,
                                                  "t_cycle": cyc_t.backward.attention.data})},
            bundles=(b_st, b_ts)))
    return b_st, b_ts


def train_step_stage1(s: Tensor, t: Tensor, state: TrainState, **kw):
    if stage_for_epoch(state.config, state.epoch) != 1:
        raise RuntimeError(f"epoch {state.epoch} is past the stage switch")
    return train_step(s, t, state, stage=1, **kw)


def train_step_stage2(s: Tensor, t: Tensor, state: TrainState, **kw):
    if not state.config.attention_discriminator_enabled:
        raise RuntimeError("attention-guided discriminator is disabled for this run")
    if state.epoch < state.config.switch_epoch:
        raise RuntimeError(f"epoch {state.epoch} precedes the stage switch")
    enter_stage2(state)
    return train_step(s, t, state, stage=2, **kw)


# -- epochs -------------------------------------------------------------------

def epoch_order(seed: int, epoch: int, n_s: int, n_t: int) -> tuple[np.ndarray, np.ndarray]:
    """Independent shuffles of both domains, truncated to the shorter one."""
    rng = np.random.default_rng([seed, epoch])
    n = min(n_s, n_t)
    return rng.permutation(n_s)[:n], rng.permutation(n_t)[:n]


def iterate_batches(cfg: TrainConfig, ds_s: Dataset, ds_t: Dataset,
                    epoch: int) -> Iterator[tuple[Tensor, Tensor]]:
    order_s, order_t = epoch_order(cfg.seed, epoch, len(ds_s), len(ds_t))
    for i in range(0, len(order_s), cfg.batch_size):
        yield (Tensor(ds_s.images[order_s[i:i + cfg.batch_size]]),
               Tensor(ds_t.images[order_t[i:i + cfg.batch_size]]))


METRIC_FIELDS = ("epoch", "stage", "adv_d_s", "adv_d_t", "adv_g", "cyc", "wall_time")


def train(cfg: TrainConfig, ds_s: Dataset, ds_t: Dataset, out_dir: str | Path | None = None,
          state: Optional[TrainState] = None, stop_after: Optional[int] = None,
          on_step: Optional[Callable[[StepInfo], None]] = None,
          on_epoch_end: Optional[Callable[[TrainState], None]] = None) -> TrainState:
    """Run epochs ``state.epoch .. cfg.epochs - 1``.

    Pass a loaded ``state`` to resume. ``stop_after`` ends the run early once
    that many epochs are complete (used to produce mid-run checkpoints).
    Checkpoints are written every ``checkpoint_every`` epochs, at the stage
    switch and at the end, when ``out_dir`` is given.
    """
    if len(ds_s) == 0 or len(ds_t) == 0:
        raise ValueError("both datasets must be non-empty")
    for ds in (ds_s, ds_t):
        if ds.images.shape[2:] != (cfg.image_size, cfg.image_size):
            raise ValueError(f"dataset {ds.domain} has size {ds.images.shape[2:]}, "
                             f"config expects {cfg.image_size}")
    if state is None:
        state = init_state(cfg)
    out = Path(out_dir) if out_dir is not None else None
    metrics_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_path = out / "metrics.csv"
        if state.epoch == 0 or not metrics_path.exists():
            with open(metrics_path, "w", newline="") as f:
                csv.writer(f).writerow(METRIC_FIELDS)

    end = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)
    while state.epoch < end:
        c = state.epoch
        stage = stage_for_epoch(cfg, c)
        if stage == 2:
            enter_stage2(state)
        t0 = time.perf_counter()
        sums = np.zeros(4)
        steps = 0
        for step, (s, t) in enumerate(iterate_batches(cfg, ds_s, ds_t, c)):
            b_st, b_ts = train_step(s, t, state, stage, step=step, on_step=on_step)
            sums += (b_ts.adv_d, b_st.adv_d, b_st.adv_g + b_ts.adv_g, b_st.cyc + b_ts.cyc)
            steps += 1
        means = sums / max(steps, 1)
        record = {"epoch": c, "stage": stage, "adv_d_s": float(means[0]), "adv_d_t": float(means[1]),
                  "adv_g": float(means[2]), "cyc": float(means[3])}
        state.history.append(record)
        state.epoch = c + 1
        wall = time.perf_counter() - t0
        log.info("epoch %d stage %d adv_d_s=%.4f adv_d_t=%.4f adv_g=%.4f cyc=%.4f (%.1fs)",
                 c, stage, *means, wall)
        if metrics_path is not None:
            with open(metrics_path, "a", newline="") as f:
                csv.writer(f).writerow([*record.values(), f"{wall:.3f}"])
        if out is not None and (state.epoch % cfg.checkpoint_every == 0
                                or state.epoch == cfg.switch_epoch or state.epoch == end):
            save_checkpoint(out / f"checkpoint_{state.epoch:04d}.atx", state)
            save_checkpoint(out / "latest.atx", state)
        if on_epoch_end is not None:
            on_epoch_end(state)
    return state


def translate_inference(net_g, net_a, image: Tensor) -> TranslationOutput:
    with no_grad():
        return translate(image, net_g, net_a)


# -- checkpoint conversion ------------------------------------------------------

def state_to_checkpoint(state: TrainState) -> tuple[dict, dict[str, np.ndarray]]:
    arrays: dict[str, np.ndarray] = {}
    net_meta = {}
    for name in NET_NAMES:
        net = state.nets.get(name)
        if net is None:
            net_meta[name] = None
            continue
        net_meta[name] = nets.network_to_dict(net)
        for k, a in net.arrays().items():
            arrays[f"net/{name}/{k}"] = a
    opt_meta = {}
    for name, opt in state.optimizers.items():
        sd = opt.state_dict()
        opt_meta[name] = {k: sd[k] for k in ("lr", "beta1", "beta2", "eps", "step", "frozen")}
        for k, a in sd["m"].items():
            arrays[f"opt/{name}/m/{k}"] = a
        for k, a in sd["v"].items():
            arrays[f"opt/{name}/v/{k}"] = a
    meta = {
        "format_version": FORMAT_VERSION,
        "config": state.config.to_dict(),
        "epoch": state.epoch,
        "stage2_applied": state.stage2_applied,
        "networks": net_meta,
        "optimizers": opt_meta,
        # data order is a pure function of (seed, epoch); nothing else draws randomness
        "rng": {"seed": state.config.seed, "epoch": state.epoch},
        "history": state.history,
    }
    return meta, arrays


def state_from_checkpoint(meta: dict, arrays: dict[str, np.ndarray]) -> TrainState:
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {meta.get('format_version')}")
    cfg = TrainConfig.from_dict(meta["config"])
    n: dict[str, Optional[nets.Network]] = {}
    for name in NET_NAMES:
        d = meta["networks"][name]
        if d is None:
            n[name] = None
            continue
        prefix = f"net/{name}/"
        params = {k[len(prefix):]: a for k, a in arrays.items() if k.startswith(prefix)}
        n[name] = nets.network_from_dict(d, params)
    optimizers = _make_optimizers(cfg, n)
    for name, opt in optimizers.items():
        om = meta["optimizers"][name]
        m = {k[len(f"opt/{name}/m/"):]: a for k, a in arrays.items() if k.startswith(f"opt/{name}/m/")}
        v = {k[len(f"opt/{name}/v/"):]: a for k, a in arrays.items() if k.startswith(f"opt/{name}/v/")}
        opt.load_state_dict({**om, "m": m, "v": v})
    state = TrainState(cfg, n, optimizers, epoch=meta["epoch"],
                       stage2_applied=meta["stage2_applied"], history=list(meta["history"]))
    if state.stage2_applied and not cfg.ablation.never_freeze_attention:
        for net in state.attention_networks():
            net.set_requires_grad(False)
    return state


def save_checkpoint(path: str | Path, state: TrainState) -> None:
    meta, arrays = state_to_checkpoint(state)
    write_checkpoint(path, meta, arrays)


def load_checkpoint(path: str | Path) -> TrainState:
    meta, arrays = read_checkpoint(path)
    return state_from_checkpoint(meta, arrays)
