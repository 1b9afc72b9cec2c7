"""Config-matrix sweep over one training option (tau, switch_epoch, ...).

Writes one run config per value, then trains and evaluates each through the
CLI so every output directory carries its own run_config.json and report.json.

    python scripts/sweep.py --data runs/data --out runs/tau --param tau --values 0.05 0.1 0.2
    python scripts/sweep.py --data runs/data --out runs/switch --param switch_epoch --values 0 6 12 36
"""

import argparse
import json
from pathlib import Path

from attnxlate.cli import RunConfig, main as cli_main
from attnxlate.config import TrainConfig


def parse_value(param: str, raw: str):
    kind = type(getattr(TrainConfig(), param))
    return kind(raw) if kind in (int, float) else raw


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data", required=True, help="dataset root written by 'attnxlate gen-data'")
    p.add_argument("--out", required=True)
    p.add_argument("--param", required=True, help="TrainConfig field to vary")
    p.add_argument("--values", nargs="+", required=True)
    p.add_argument("--base", help="base run config JSON")
    p.add_argument("--dry-run", action="store_true", help="only write the configs")
    args = p.parse_args()

    base = RunConfig() if args.base is None else RunConfig.from_dict(json.loads(Path(args.base).read_text()))
    out = Path(args.out)
    summary = {}
    for raw in args.values:
        run_dir = out / f"{args.param}={raw}"
        run_dir.mkdir(parents=True, exist_ok=True)
        rc = RunConfig.from_dict(base.to_dict())
        rc.train = rc.train.replace(**{args.param: parse_value(args.param, raw)})
        rc.data_dir, rc.out_dir = args.data, str(run_dir / "train")
        cfg_path = run_dir / "config.json"
        cfg_path.write_text(json.dumps(rc.to_dict(), indent=2, sort_keys=True) + "\n")
        if args.dry_run:
            continue
        if cli_main(["train", "--config", str(cfg_path)]) != 0:
            summary[raw] = "train failed"
            continue
        rc_eval = ["evaluate", "--config", str(cfg_path), "--checkpoint", str(run_dir / "train" / "latest.atx"),
                   "--out", str(run_dir / "eval")]
        if cli_main(rc_eval) != 0:
            summary[raw] = "evaluate failed"
            continue
        rep = json.loads((run_dir / "eval" / "report.json").read_text())
        summary[raw] = {"mean_kid": rep["mean_kid"], "mask_metrics": rep.get("mask_metrics")}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
