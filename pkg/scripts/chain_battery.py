"""Random-init battery on scalar chains, with a closer look at runs that do not converge.

For each depth it integrates ``--n`` random inits in [-0.5, 0.5] and prints
the verdict counts. Non-converged runs are re-integrated over a longer horizon
and their late-time behaviour is summarised: the range of ``1 - P`` over the
final stretch, and the spacing of its successive maxima (a steady spacing
with a steady amplitude indicates a periodic orbit).

    python scripts/chain_battery.py --variant arbp --depths 2,3,4,5 --n 20
"""
from __future__ import annotations

import argparse
from collections import Counter

import numpy as np

from deepchannel.core_math import make_rng
from deepchannel.ode.analysis import analyze
from deepchannel.ode.integrate import StepControl, integrate
from deepchannel.ode.systems import build_chain, random_state


def late_time(sys, x0, t_max: float) -> str:
    tr = integrate(sys, x0, t_max, StepControl("adaptive", record_dt=0.05))
    P = sys.meta["product"](tr.x)
    tail = tr.t >= tr.t_end - 0.2 * tr.t_end
    e = 1.0 - P[tail]
    t = tr.t[tail]
    peaks = t[1:-1][(e[1:-1] > e[:-2]) & (e[1:-1] >= e[2:])]
    spacing = np.diff(peaks)
    period = f"period {spacing.mean():.3f} +- {spacing.std():.1e}" if spacing.size > 1 else "no oscillation"
    return f"1-P in [{e.min():+.3e}, {e.max():+.3e}], {period}"


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--variant", default="arbp", choices=("arbp", "asrbp"))
    p.add_argument("--depths", default="2,3,4,5")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--t-max", type=float, default=1000.0)
    p.add_argument("--inspect-t", type=float, default=3000.0, help="horizon for non-converged runs")
    args = p.parse_args()
    for L in (int(v) for v in args.depths.split(",")):
        sys = build_chain(L, args.variant)
        X0 = random_state(sys, make_rng(L), 0.5, args.n)
        reps = [analyze(integrate(sys, x, args.t_max, StepControl("adaptive")), sys) for x in X0]
        counts = Counter(r.verdict for r in reps)
        drift = max(r.max_tracking_drift for r in reps)
        print(f"L={L} {args.variant}: {dict(counts)}  max tracking drift {drift:.1e}", flush=True)
        for i, (x0, r) in enumerate(zip(X0, reps)):
            if not r.converged:
                print(f"  init {i:2d}: {r.verdict}; {late_time(sys, x0, args.inspect_t)}", flush=True)


if __name__ == "__main__":
    main()
