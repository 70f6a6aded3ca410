"""Run every bundled config (or those matching a prefix) and print one summary line each.

    python scripts/run_bundled_configs.py [--prefix mnist] [--out runs/bundled]
"""
from __future__ import annotations

import argparse
import time
from importlib.resources import files
from pathlib import Path

from deepchannel.experiment import load_experiment, run_experiment
from deepchannel.ode.runner import load_ode_run, run_ode


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--prefix", default="", help="only configs whose name starts with this")
    p.add_argument("--out", default="runs/bundled")
    args = p.parse_args()
    names = sorted(f.name.removesuffix(".ini") for f in files("deepchannel.configs").iterdir()
                   if f.name.endswith(".ini") and f.name.startswith(args.prefix))
    for name in names:
        path = files("deepchannel.configs") / f"{name}.ini"
        out = Path(args.out) / name
        t0 = time.perf_counter()
        if name.startswith("ode-"):
            rep = run_ode(load_ode_run(path), out).report
            result = f"verdict={rep.verdict} residual={rep.residual:.2e}"
        else:
            res, summary = run_experiment(load_experiment(path), out)
            last = summary["final"]
            val = last["val_accuracy"]
            result = f"train_acc={last['train_accuracy']:.4f}" + (f" val_acc={val:.4f}" if val is not None else "")
        print(f"{name:28s} {result}  ({time.perf_counter() - t0:.1f}s)", flush=True)


if __name__ == "__main__":
    main()
