"""Command-line entry point: gen-data, train, translate, evaluate.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional


from .config import ABLATIONS, TrainConfig
from .data import (
    SyntheticSpec, image_grid, load_dataset, load_folder, load_pair, save_image, write_dataset,
)
from .data.checkpoint import atomic_write_bytes
from .evaluation import FeatureExtractor, attention_report, kid_report, translate_dataset
from .trainer import load_checkpoint, train

log = logging.getLogger("attnxlate")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
RUN_CONFIG_NAME = "run_config.json"


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Training config plus paths and evaluation settings, as one JSON file.

    Training fields may sit at the top level or under ``"train"``.
    """
    train: TrainConfig = field(default_factory=TrainConfig)
    data_dir: Optional[str] = None
    out_dir: Optional[str] = None
    checkpoint: Optional[str] = None
    eval_seed: int = 0
    n_splits: int = 10
    split_size: int = 50
    direction: str = "s2t"
    grid_rows: int = 8
    synthetic: Optional[dict] = None

    def to_dict(self) -> dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["train"] = self.train.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        train_keys = {f.name for f in fields(TrainConfig)}
        tc = dict(d.pop("train", {}) or {})
        for k in list(d):
            if k in train_keys:
                tc[k] = d.pop(k)
        own = {f.name for f in fields(cls)} - {"train"}
        unknown = set(d) - own
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        return cls(train=TrainConfig.from_dict(tc), **d)


def load_run_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path} is not valid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise UsageError("config file must hold a JSON object")
    try:
        return RunConfig.from_dict(raw)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid config: {e}") from None


_TRAIN_FLAGS = {"seed": "seed", "switch_epoch": "switch_epoch", "tau": "tau",
                "lambda_cyc": "lambda_cyc", "epochs": "epochs", "width_mult": "width_multiplier",
                "ablation": "ablation", "alpha": "alpha", "batch_size": "batch_size",
                "n_residual": "n_residual", "image_size": "image_size"}


def apply_overrides(rc: RunConfig, args: argparse.Namespace) -> RunConfig:
    changes = {}
    for flag, key in _TRAIN_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            changes[key] = v
    try:
        if "ablation" in changes:
            changes["ablation"] = ABLATIONS[changes["ablation"]]
        if "width_multiplier" in changes:
            changes["width_multiplier"] = Fraction(changes["width_multiplier"])
        # keep the default switch at one third of the run when only --epochs moves
        if "epochs" in changes and "switch_epoch" not in changes and rc.train.switch_epoch > changes["epochs"]:
            changes["switch_epoch"] = changes["epochs"] // 3
        rc.train = rc.train.replace(**changes)
    except (ValueError, ZeroDivisionError) as e:
        raise UsageError(f"invalid training option: {e}") from None
    for name in ("data_dir", "out_dir", "checkpoint", "eval_seed", "n_splits", "split_size", "direction", "grid_rows"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(rc, name, v)
    return rc


def echo_config(out_dir: Path, rc: RunConfig, command: str) -> None:
    payload = {"command": command, **rc.to_dict()}
    atomic_write_bytes(out_dir / RUN_CONFIG_NAME,
                       (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode())


def _require(value, flag: str):
    if value is None:
        raise UsageError(f"{flag} is required (flag or config file)")
    return value


# -- commands -----------------------------------------------------------------

def cmd_gen_data(args, rc: RunConfig) -> int:
    spec_d = dict(rc.synthetic or {})
    if args.spec:
        try:
            spec_d.update(json.loads(Path(args.spec).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read synthetic spec {args.spec}: {e}") from None
    for k in ("count", "test_count", "image_size"):
        if getattr(args, k) is not None:
            spec_d[k] = getattr(args, k)
    if args.seed is not None:
        spec_d["seed"] = args.seed
    try:
        spec = SyntheticSpec.from_dict(spec_d)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid synthetic spec: {e}") from None
    out = Path(_require(rc.out_dir, "--out"))
    write_dataset(out, spec)
    rc.synthetic = json.loads(spec.to_json())
    echo_config(out, rc, "gen-data")
    log.info("wrote synthetic dataset to %s", out)
    return EXIT_OK


def cmd_train(args, rc: RunConfig) -> int:
    data = Path(_require(rc.data_dir, "--data"))
    out = Path(_require(rc.out_dir, "--out"))
    ds_s, ds_t = load_pair(data, "train")
    state = None
    if args.resume:
        state = load_checkpoint(args.resume)
        if state.config != rc.train:
            log.warning("resuming with the checkpoint's config; command-line training options ignored")
        rc.train = state.config
    out.mkdir(parents=True, exist_ok=True)
    echo_config(out, rc, "train")
    train(rc.train, ds_s, ds_t, out_dir=out, state=state)
    log.info("training finished; checkpoints in %s", out)
    return EXIT_OK


def _nets_for(state, direction: str):
    if direction == "s2t":
        return state.nets["G_st"], state.attention_s
    if direction == "t2s":
        return state.nets["G_ts"], state.attention_t
    raise UsageError(f"direction must be s2t or t2s, got {direction!r}")


def cmd_translate(args, rc: RunConfig) -> int:
    ckpt = _require(rc.checkpoint, "--checkpoint")
    state = load_checkpoint(ckpt)
    rc.train = state.config
    g, a = _nets_for(state, rc.direction)
    ds = load_folder(_require(args.input, "--input"))
    out = Path(_require(rc.out_dir, "--out"))
    composed, attention = translate_dataset(g, a, ds.images)
    rows = []
    for name, x, att, y in zip(ds.names, ds.images, attention, composed):
        stem = Path(name).stem
        save_image(out / f"{stem}_input.png", x)
        save_image(out / f"{stem}_attention.png", att, "unit")
        save_image(out / f"{stem}_composed.png", y)
        if len(rows) < rc.grid_rows:
            rows.append([x, att * 2.0 - 1.0, y])
    save_image(out / "grid.png", image_grid(rows))
    echo_config(out, rc, "translate")
    log.info("translated %d images into %s", len(ds), out)
    return EXIT_OK


def evaluate_checkpoint(state, data_dir: Path, rc: RunConfig, split: str = "test") -> dict:
    """KID of translated source images against both domains, plus mask metrics."""
    src, tgt = ("A", "B") if rc.direction == "s2t" else ("B", "A")
    ds_src = load_dataset(data_dir, split, src)
    ds_tgt = load_dataset(data_dir, split, tgt)
    g, a = _nets_for(state, rc.direction)
    composed, _ = translate_dataset(g, a, ds_src.images)
    ext = FeatureExtractor(seed=rc.eval_seed)
    f_fake = ext(composed)
    kw = dict(n_splits=rc.n_splits, split_size=rc.split_size, seed=rc.eval_seed)
    k_t = kid_report(ext(ds_tgt.images), f_fake, **kw)
    k_s = kid_report(ext(ds_src.images), f_fake, **kw)
    report = {
        "direction": rc.direction,
        "split": split,
        "kid_vs_target": k_t.to_dict(),
        "kid_vs_source": k_s.to_dict(),
        "mean_kid": (k_t.mean + k_s.mean) / 2.0,
    }
    if ds_src.masks is not None:
        report["mask_metrics"] = attention_report(g, a, ds_src.images, ds_src.masks, state.config.tau)
    report["config"] = rc.to_dict()
    return report


def cmd_evaluate(args, rc: RunConfig) -> int:
    state = load_checkpoint(_require(rc.checkpoint, "--checkpoint"))
    rc.train = state.config
    report = evaluate_checkpoint(state, Path(_require(rc.data_dir, "--data")), rc, args.split)
    out = Path(_require(rc.out_dir, "--out"))
    atomic_write_bytes(out / "report.json", (json.dumps(report, indent=2, sort_keys=True) + "\n").encode())
    echo_config(out, rc, "evaluate")
    summary = {"mean_kid": report["mean_kid"]}
    if "mask_metrics" in report:
        summary["mask_metrics"] = report["mask_metrics"]
    print(json.dumps(summary))
    return EXIT_OK


# -- parser -------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="attnxlate", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON run config; flags override its values")
        sp.add_argument("--out", dest="out_dir", help="output directory")

    g = sub.add_parser("gen-data", help="write the synthetic two-domain dataset")
    common(g)
    g.add_argument("--spec", help="synthetic spec JSON file")
    g.add_argument("--seed", type=int)
    g.add_argument("--count", type=int)
    g.add_argument("--test-count", type=int)
    g.add_argument("--image-size", type=int)

    t = sub.add_parser("train", help="train all six networks")
    common(t)
    t.add_argument("--data", dest="data_dir", help="dataset root (trainA/trainB/...)")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--switch-epoch", type=int)
    t.add_argument("--tau", type=float)
    t.add_argument("--lambda-cyc", type=float)
    t.add_argument("--alpha", type=float, help="Adam learning rate")
    t.add_argument("--batch-size", type=int)
    t.add_argument("--width-mult", help="width multiplier, e.g. 1/4")
    t.add_argument("--n-residual", type=int)
    t.add_argument("--image-size", type=int)
    t.add_argument("--ablation", choices=sorted(ABLATIONS))
    t.add_argument("--resume", help="checkpoint to continue from")

    r = sub.add_parser("translate", help="translate a folder of PNGs")
    common(r)
    r.add_argument("--checkpoint")
    r.add_argument("--input", required=True, help="folder of PNG images")
    r.add_argument("--direction", choices=("s2t", "t2s"))
    r.add_argument("--grid-rows", type=int, help="samples shown in grid.png")

    e = sub.add_parser("evaluate", help="KID and mask metrics for a checkpoint")
    common(e)
    e.add_argument("--checkpoint")
    e.add_argument("--data", dest="data_dir")
    e.add_argument("--split", default="test", choices=("train", "test"))
    e.add_argument("--direction", choices=("s2t", "t2s"))
    e.add_argument("--eval-seed", type=int)
    e.add_argument("--n-splits", type=int)
    e.add_argument("--split-size", type=int)
    return p


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "translate": cmd_translate,
            "evaluate": cmd_evaluate}


def _thread_limit():
    raw = os.environ.get("ATTNXLATE_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise UsageError(f"ATTNXLATE_THREADS must be a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        rc = apply_overrides(load_run_config(args.config), args)
        with _thread_limit():
            return COMMANDS[args.command](args, rc)
    except UsageError as e:
        print(f"attnxlate: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        print("attnxlate: interrupted; the last written checkpoint is intact", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:  # runtime failure: report and exit non-zero
        log.debug("failure", exc_info=True)
        print(f"attnxlate: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
