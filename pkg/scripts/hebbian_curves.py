"""Per-epoch train accuracy of the Hebbian ARBP and ASRBP MNIST configs across seeds.

    python scripts/hebbian_curves.py --seeds 0,1,2 [--epochs 30]
"""
from __future__ import annotations

import argparse

from deepchannel.acceptance import bundled_config
from deepchannel.experiment import load_experiment, run_experiment


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", default="0,1,2")
    args = p.parse_args()
    for name in ("mnist-hebbian-arbp", "mnist-hebbian-asrbp"):
        for seed in (int(s) for s in args.seeds.split(",")):
            res, _ = run_experiment(load_experiment(bundled_config(name)).with_seed(seed))
            acc = [m.train_accuracy for m in res.metrics]
            align = res.metrics[-1].alignment
            curve = " ".join(f"{a:.3f}" for a in acc)
            print(f"{name} seed {seed}: peak-final {max(acc) - acc[-1]:.3f}; final |C-A^t| {align}\n  {curve}",
                  flush=True)


if __name__ == "__main__":
    main()
