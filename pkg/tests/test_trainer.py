from fractions import Fraction

import numpy as np
import pytest

from attnxlate.config import ABLATIONS, TrainConfig, ablation_from_name
from attnxlate.data import SyntheticSpec, generate_synthetic
from attnxlate.tensor import NonFiniteError, Tensor, backward
from attnxlate.trainer import (
    NET_NAMES, enter_stage2, epoch_order, init_state, load_checkpoint, save_checkpoint,
    stage_for_epoch, train, train_step, train_step_stage1, train_step_stage2,
    translate_inference,
)
from attnxlate.translate import adversarial_losses, cycle, cycle_loss

DATA = generate_synthetic(SyntheticSpec(seed=2, count=4, test_count=0, image_size=32,
                                        radius_min=4, radius_max=10, empty_fraction=0.25))


def tiny(**kw):
    base = dict(epochs=4, switch_epoch=2, image_size=32, width_multiplier=Fraction(1, 8),
                n_residual=1, seed=7, checkpoint_every=2)
    base.update(kw)
    return TrainConfig(**base)


def batch(i=0):
    s, t = DATA
    return Tensor(s.images[i:i + 1]), Tensor(t.images[i:i + 1])


def checksums(state, names):
    return {n: state.nets[n].checksum() for n in names if state.nets.get(n) is not None}


# -- configuration ----------------------------------------------------------------

def test_config_defaults_and_validation():
    c = TrainConfig()
    assert (c.switch_epoch, c.tau, c.lambda_cyc, c.alpha, c.batch_size) == (30, 0.1, 10.0, 2e-4, 1)
    for bad in (dict(epochs=5, switch_epoch=6), dict(tau=1.0), dict(tau=-0.1), dict(lambda_cyc=-1),
                dict(alpha=0), dict(batch_size=0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_config_round_trip():
    c = tiny(ablation=ABLATIONS["ours-minus-d-a"])
    assert TrainConfig.from_dict(c.to_dict()) == c


def test_ablation_table():
    assert set(ABLATIONS) == {"ours", "ours-minus-cycle", "ours-minus-cycleatt", "ours-minus-as",
                              "ours-minus-at", "ours-minus-d", "ours-minus-d-a"}
    assert ablation_from_name("Ours-Minus-Cycle").no_cycle
    assert ABLATIONS["ours-minus-d-a"].active() == ["whole_image_discriminator", "never_freeze_attention"]
    with pytest.raises(ValueError):
        ablation_from_name("nope")


def test_stage_boundaries():
    c = tiny()
    assert [stage_for_epoch(c, e) for e in range(4)] == [1, 1, 2, 2]
    off = tiny(attention_discriminator_enabled=False)
    assert [stage_for_epoch(off, e) for e in range(4)] == [1, 1, 1, 1]
    assert stage_for_epoch(tiny(switch_epoch=0), 0) == 2


def test_epoch_order_is_pure():
    a = epoch_order(3, 5, 10, 8)
    b = epoch_order(3, 5, 10, 8)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert len(a[0]) == len(a[1]) == 8
    assert not np.array_equal(a[0], epoch_order(3, 6, 10, 8)[0])


# -- single steps -----------------------------------------------------------------

def test_stage1_step_updates_everything():
    state = init_state(tiny())
    before = checksums(state, NET_NAMES)
    train_step_stage1(*batch(), state)
    after = checksums(state, NET_NAMES)
    assert all(before[n] != after[n] for n in NET_NAMES)


def test_stage_preconditions():
    state = init_state(tiny())
    with pytest.raises(RuntimeError):
        train_step_stage2(*batch(), state)
    state.epoch = 2
    with pytest.raises(RuntimeError):
        train_step_stage1(*batch(), state)
    off = init_state(tiny(attention_discriminator_enabled=False))
    off.epoch = 3
    with pytest.raises(RuntimeError):
        train_step_stage2(*batch(), off)


def test_stage2_step_freezes_attention_only():
    state = init_state(tiny())
    state.epoch = 2
    before = checksums(state, NET_NAMES)
    train_step_stage2(*batch(), state)
    after = checksums(state, NET_NAMES)
    for n in NET_NAMES:
        assert (before[n] == after[n]) == (n in ("A_s", "A_t")), n


def test_discriminator_step_descends():
    state = init_state(tiny(alpha=1e-5))
    s, t = batch()
    D = state.nets["D_t"]
    fake = cycle(s, state.nets["G_st"], state.attention_s, state.nets["G_ts"],
                 state.attention_t).forward.composed.detach()

    def d_loss():
        return float(adversarial_losses(D(t), D(fake))[0].data)

    before = d_loss()
    opt = state.optimizers["D_t"]
    opt.zero_grad()
    backward(adversarial_losses(D(t), D(fake))[0])
    opt.step()
    assert d_loss() < before


def test_cycle_gradient_reaches_attention_only_when_unfrozen():
    state = init_state(tiny())
    s, _ = batch()
    A = state.nets["A_s"]

    def grads():
        for net in state.nets.values():
            net.zero_grad()
        c = cycle(s, state.nets["G_st"], A, state.nets["G_ts"], state.attention_t)
        backward(cycle_loss(s, c.reconstruction))
        return [p.grad for p in A.params.values()]

    assert any(g is not None and np.abs(g).max() > 0 for g in grads())
    enter_stage2(state)
    assert all(g is None for g in grads())


def test_enter_stage2_rebuilds_discriminators():
    state = init_state(tiny())
    probe = Tensor(np.random.default_rng(0).uniform(-1, 1, (1, 3, 32, 32)).astype(np.float32))
    old = {d: state.nets[d] for d in ("D_s", "D_t")}
    out_before = old["D_t"](probe).data
    enter_stage2(state)
    enter_stage2(state)  # idempotent
    for d in ("D_s", "D_t"):
        new = state.nets[d]
        assert not new.instance_norm_enabled and old[d].instance_norm_enabled
        assert all(np.array_equal(a, old[d].arrays()[k]) for k, a in new.arrays().items())
        assert set(state.optimizers[d].params) == {f"{d}/{k}" for k in new.params}
    assert not np.array_equal(out_before, state.nets["D_t"](probe).data)


@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_non_finite_loss_aborts():
    state = init_state(tiny())
    next(iter(state.nets["G_st"].params.values())).data[...] = np.inf
    with pytest.raises(NonFiniteError):
        train_step(*batch(), state, stage=1)


# -- instrumented runs ---------------------------------------------------------------

def instrumented(cfg):
    steps, epochs = [], []
    state = train(cfg, *DATA,
                  on_step=lambda info: steps.append(info),
                  on_epoch_end=lambda st: epochs.append(
                      (st.epoch, checksums(st, ("A_s", "A_t")),
                       {d: st.nets[d].instance_norm_enabled for d in ("D_s", "D_t")})))
    return state, steps, epochs


def test_state_machine_four_epochs():
    cfg = tiny()
    state, steps, epochs = instrumented(cfg)
    assert [i.stage for i in steps] == [1] * 8 + [2] * 8
    # attention frozen from the end of epoch 2 (the switch) onwards
    frozen = [e[1] for e in epochs if e[0] >= cfg.switch_epoch]
    assert frozen[0] == frozen[-1] and epochs[0][1] != epochs[1][1]
    assert [e[2]["D_t"] for e in epochs] == [True, True, False, False]
    for info in steps:
        if info.stage == 2:
            keep_t = info.attention["t"] > cfg.tau
            keep_s = info.attention["s"] > cfg.tau
            assert np.all(info.d_inputs["real_t"][np.broadcast_to(~keep_t, info.d_inputs["real_t"].shape)] == 0)
            assert np.all(info.d_inputs["fake_t"][np.broadcast_to(~keep_s, info.d_inputs["fake_t"].shape)] == 0)
            assert np.all(info.d_inputs["real_s"][np.broadcast_to(~keep_s, info.d_inputs["real_s"].shape)] == 0)
        else:
            assert np.array_equal(info.d_inputs["real_t"], DATA[1].images[
                epoch_order(cfg.seed, info.epoch, 4, 4)[1][info.step:info.step + 1]])


def test_switch_at_zero_terminates():
    state, steps, _ = instrumented(tiny(epochs=2, switch_epoch=0))
    assert state.epoch == 2 and all(i.stage == 2 for i in steps)


def test_switch_at_end_is_pure_stage1():
    state, steps, _ = instrumented(tiny(epochs=2, switch_epoch=2))
    assert all(i.stage == 1 for i in steps) and not state.stage2_applied


# -- ablations --------------------------------------------------------------------------

def test_no_cycle_zero_term():
    state = init_state(tiny(ablation=ABLATIONS["ours-minus-cycle"]))
    b1, b2 = train_step(*batch(), state, stage=1)
    assert b1.cyc == 0.0 and b2.cyc == 0.0 and b1.total_g == b1.adv_g


def test_reused_cycle_attention_bitwise():
    seen = []
    state = init_state(tiny(ablation=ABLATIONS["ours-minus-cycleatt"]))
    train_step(*batch(), state, stage=1, on_step=seen.append)
    a = seen[0].attention
    assert np.array_equal(a["s_cycle"], a["s"]) and np.array_equal(a["t_cycle"], a["t"])
    plain = []
    train_step(*batch(), init_state(tiny()), stage=1, on_step=plain.append)
    assert not np.array_equal(plain[0].attention["s_cycle"], plain[0].attention["s"])


@pytest.mark.parametrize("name,gone,kept", [("ours-minus-as", "A_s", "A_t"), ("ours-minus-at", "A_t", "A_s")])
def test_single_attention_path(name, gone, kept):
    state = init_state(tiny(ablation=ABLATIONS[name]))
    assert state.nets[gone] is None
    assert state.attention_s is state.nets[kept] and state.attention_t is state.nets[kept]
    before = state.nets[kept].checksum()
    train_step(*batch(), state, stage=1)
    assert state.nets[kept].checksum() != before


def test_whole_image_discriminator():
    cfg = tiny(ablation=ABLATIONS["ours-minus-d"])
    state, steps, epochs = instrumented(cfg)
    assert [e[2]["D_t"] for e in epochs] == [True] * 4
    assert epochs[1][1] == epochs[3][1]  # attention still frozen at the switch
    assert [i.stage for i in steps][-1] == 2
    for info in steps:
        assert np.count_nonzero(info.d_inputs["real_t"]) == info.d_inputs["real_t"].size


def test_whole_image_discriminator_unfrozen_attention():
    _, _, epochs = instrumented(tiny(ablation=ABLATIONS["ours-minus-d-a"]))
    assert epochs[1][1] != epochs[2][1] != epochs[3][1]


def test_disabled_attention_discriminator_never_switches():
    state, steps, epochs = instrumented(tiny(attention_discriminator_enabled=False))
    assert all(i.stage == 1 for i in steps) and len(set(str(e[1]) for e in epochs)) == 4


# -- determinism and checkpoints ---------------------------------------------------------------

def test_two_runs_bit_identical(tmp_path):
    cfg = tiny()
    train(cfg, *DATA, out_dir=tmp_path / "a")
    train(cfg, *DATA, out_dir=tmp_path / "b")
    assert (tmp_path / "a/latest.atx").read_bytes() == (tmp_path / "b/latest.atx").read_bytes()
    assert sorted(p.name for p in (tmp_path / "a").iterdir()) == [
        "checkpoint_0002.atx", "checkpoint_0004.atx", "latest.atx", "metrics.csv"]
    header = (tmp_path / "a/metrics.csv").read_text().splitlines()[0]
    assert header == "epoch,stage,adv_d_s,adv_d_t,adv_g,cyc,wall_time"


def test_resume_matches_uninterrupted(tmp_path):
    cfg = tiny(epochs=6, switch_epoch=2, checkpoint_every=3)
    train(cfg, *DATA, out_dir=tmp_path / "full")
    train(cfg, *DATA, out_dir=tmp_path / "part", stop_after=3)
    resumed = load_checkpoint(tmp_path / "part/checkpoint_0003.atx")
    assert resumed.epoch == 3 and resumed.stage2_applied
    train(cfg, *DATA, out_dir=tmp_path / "part", state=resumed)
    assert (tmp_path / "full/latest.atx").read_bytes() == (tmp_path / "part/latest.atx").read_bytes()
    assert len((tmp_path / "part/metrics.csv").read_text().splitlines()) == 7


def test_checkpoint_round_trip(tmp_path):
    state = init_state(tiny(ablation=ABLATIONS["ours-minus-as"]))
    train_step(*batch(), state, stage=1)
    save_checkpoint(tmp_path / "c.atx", state)
    again = load_checkpoint(tmp_path / "c.atx")
    save_checkpoint(tmp_path / "d.atx", again)
    assert (tmp_path / "c.atx").read_bytes() == (tmp_path / "d.atx").read_bytes()
    assert again.nets["A_s"] is None and again.config == state.config


def test_dataset_config_mismatch():
    with pytest.raises(ValueError):
        train(tiny(image_size=64), *DATA)


# -- inference ------------------------------------------------------------------------------

def test_translate_inference_ranges():
    state = init_state(tiny())
    s, _ = batch()
    out = translate_inference(state.nets["G_st"], state.attention_s, s)
    assert out.composed.data.min() >= -1 and out.composed.data.max() <= 1
    assert 0 <= out.attention.data.min() and out.attention.data.max() <= 1
    assert not out.composed.requires_grad and out.composed._parents == ()
