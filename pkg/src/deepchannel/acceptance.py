"""The acceptance battery: ten numbered checks, each returning a :class:`CriterionResult`.

Shared by ``deepchannel verify`` and the acceptance tests. Every check runs at
its stated tolerance and runtime budget; nothing is relaxed on failure.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.integrate import solve_ivp

from .channel import (
    ChannelConfig,
    ChannelParams,
    apply_updates,
    backward_rbp,
    backward_srbp,
    init_channel,
    learning_step,
    stdp_phases,
    transposed_channel,
)
from .core_math import (
    SOFTMAX,
    TANH,
    Initializer,
    loss_for_output,
    loss_value,
    make_rng,
)
from .datasets import gen_linear_stats
from .experiment import load_experiment, run_experiment
from .forward_net import NetworkParams, forward
from .ode import (
    StepControl,
    analyze,
    build_chain,
    build_compressive,
    build_expansive,
    build_general_linear,
    counterexample_state,
    integrate,
    random_state,
    sgd_vs_ode,
)
from .ode.runner import k0_state, teacher_statistics
from .ode.systems import gradient_of_error


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float
    budget: float

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f}s / {self.budget:g}s)"


def bundled_config(name: str):
    return resources.files("deepchannel.configs").joinpath(f"{name}.ini")


def _load(name: str, seed: int | None = None):
    exp = load_experiment(bundled_config(name).read_text(), is_text=True)
    return exp if seed is None else exp.with_seed(seed)


# -- 1: finite-difference gradient ----------------------------------------


def _mean_loss(net, X, T) -> float:
    out, _ = forward(net, X)
    return loss_value(loss_for_output(net.output_transfer), T, out)


def fd_gradient(net: NetworkParams, X, T, eps: float = 1e-6):
    """Central-difference gradient of the mean loss for every weight and bias."""
    grads = []
    for group in (net.weights, net.biases):
        gs = []
        for p in group:
            g = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + eps
                up = _mean_loss(net, X, T)
                p[idx] = old - eps
                down = _mean_loss(net, X, T)
                p[idx] = old
                g[idx] = (up - down) / (2 * eps)
            gs.append(g)
        grads.append(gs)
    return grads


def criterion_1(seed: int = 1) -> tuple[bool, str]:
    rng = make_rng(seed)
    net = NetworkParams.create([10, 7, 5, 3], TANH, SOFTMAX, Initializer(), rng)
    X = rng.normal(size=(4, 10))
    T = np.eye(3)[rng.integers(0, 3, 4)]
    lr = 0.1
    upd = learning_step(net, ChannelParams([]), ChannelConfig("bp"), X, T, lr)
    gW, gb = fd_gradient(net, X, T)
    errs = []
    for d, g in zip(upd.dW + upd.db, gW + gb):
        ref = -lr * g
        errs.append(np.linalg.norm(d - ref) / np.linalg.norm(ref))
    worst = max(errs)
    return worst <= 1e-5, f"max relative error {worst:.2e} (tol 1e-5)"


# -- 2: reductions between algorithms --------------------------------------


def criterion_2(seed: int = 2) -> tuple[bool, str]:
    rng = make_rng(seed)
    net = NetworkParams.create([8, 6, 5, 4, 3], TANH, SOFTMAX, Initializer(), rng)
    twin = net.copy()
    bp, rbp = ChannelConfig("bp"), ChannelConfig("rbp")
    worst = 0.0
    for _ in range(50):
        X = rng.normal(size=(5, 8))
        T = np.eye(3)[rng.integers(0, 3, 5)]
        u_bp = learning_step(net, ChannelParams([]), bp, X, T, 0.1)
        u_rbp = learning_step(twin, transposed_channel(twin), rbp, X, T, 0.1)
        for a, b in zip(u_bp.dW + u_bp.db, u_rbp.dW + u_rbp.db):
            worst = max(worst, float(np.max(np.abs(a - b))))
        apply_updates(net, ChannelParams([]), u_bp)
        apply_updates(twin, ChannelParams([]), u_rbp)

    shallow = NetworkParams.create([8, 6, 3], TANH, SOFTMAX, Initializer(), rng)
    ch = init_channel(ChannelConfig("rbp"), shallow, rng)
    X = rng.normal(size=(5, 8))
    T = np.eye(3)[rng.integers(0, 3, 5)]
    out, tr = forward(shallow, X)
    s_r = backward_rbp(shallow, ch, tr, T - out).signals
    s_s = backward_srbp(shallow, ch, tr, T - out).signals
    one = max(float(np.max(np.abs(a - b))) for a, b in zip(s_r, s_s))
    ok = worst <= 1e-12 and one <= 1e-12
    return ok, f"RBP(C=W^T) vs BP over 50 steps {worst:.1e}; RBP vs SRBP one hidden layer {one:.1e} (tol 1e-12)"


# -- 3-5: training runs ----------------------------------------------------


def _final(name: str, seed: int | None = None, key: str = "train_accuracy"):
    res, _ = run_experiment(_load(name, seed))
    return [getattr(m, key) for m in res.metrics]


def criterion_3() -> tuple[bool, str]:
    goals = {"mnist-conjoined-bp": 0.97, "mnist-conjoined-rbp": 0.97,
             "mnist-conjoined-srbp": 0.97, "mnist-distinct-srbp": 0.90}
    parts, ok = [], True
    for name, goal in goals.items():
        acc = _final(name)[-1]
        ok &= acc >= goal
        parts.append(f"{name.removeprefix('mnist-')} {acc:.3f}>={goal:.2f}")
    return ok, "; ".join(parts)


def criterion_4() -> tuple[bool, str]:
    parts, ok = [], True
    for k in (0, 1):
        for alg in ("bp", "rbp", "srbp"):
            acc = _final(f"bianchini-k{k}-{alg}", key="val_accuracy")[-1]
            ok &= acc >= 0.95
            parts.append(f"k{k}/{alg} {acc:.3f}")
    return ok, "held-out accuracy " + ", ".join(parts) + " (goal >= 0.95)"


def criterion_5(seeds=(0, 1, 2)) -> tuple[bool, str]:
    drops, asrbp = [], []
    for s in seeds:
        acc = _final("mnist-hebbian-arbp", s)
        drops.append(max(acc) - acc[-1])
        asrbp.append(_final("mnist-hebbian-asrbp", s)[-1])
    need = len(seeds) // 2 + 1
    sig = sum(d >= 0.05 for d in drops)
    good = sum(a >= 0.95 for a in asrbp)
    ok = sig >= need and good >= need
    return ok, (f"ARBP peak-minus-final {', '.join(f'{d:.3f}' for d in drops)} "
                f"({sig}/{len(seeds)} >= 0.05); ASRBP final {', '.join(f'{a:.3f}' for a in asrbp)} "
                f"({good}/{len(seeds)} >= 0.95)")


# -- 6-8: ODE batteries ----------------------------------------------------

ADAPTIVE = StepControl(method="adaptive")


def chain_battery(variant: str, n_init: int = 20, t_max: float = 1000.0):
    """Reports per depth for 20 random inits; ASRBP keeps only inits with every K_i != 0."""
    out = {}
    for L in (2, 3, 4, 5):
        sys = build_chain(L, variant, 1.0, 1.0)
        X0 = random_state(sys, make_rng(L), 0.5, n_init)
        if variant == "asrbp":
            K = np.stack([inv.fn(X0) for inv in sys.invariants if inv.tracking], axis=1)
            X0 = X0[np.all(np.abs(K) > 1e-12, axis=1)]
        out[L] = [analyze(tr, sys) for tr in integrate(sys, X0, t_max, ADAPTIVE)]
    return out


def criterion_6() -> tuple[bool, str]:
    ok, parts = True, []
    for L, reps in chain_battery("arbp").items():
        conv = [r for r in reps if r.converged]
        res = max((r.residual for r in conv), default=0.0)
        trk = max(r.max_tracking_drift for r in reps)
        gap = max((abs(r.final_error - r.error_min) for r in conv), default=0.0)
        ok &= len(conv) == len(reps) and res <= 1e-6 and trk <= 1e-9 and gap <= 1e-8
        parts.append(f"L={L} {len(conv)}/{len(reps)} conv, |1-P| {res:.0e}, track {trk:.0e}, dE {gap:.0e}")
    return ok, "; ".join(parts)


def criterion_7() -> tuple[bool, str]:
    ok, parts = True, []
    for L, reps in chain_battery("asrbp", t_max=200.0).items():
        n = sum(r.converged for r in reps)
        ok &= n == len(reps) and len(reps) > 0
        parts.append(f"L={L} {n}/{len(reps)}")
    sys = build_chain(3, "asrbp", 1.0, 1.0)
    rep = analyze(integrate(sys, counterexample_state(0.5), 40.0, StepControl(h=1e-3)), sys)
    flagged = not rep.converged
    ok &= flagged
    parts.append(f"counterexample verdict {rep.verdict} at t={rep.t_end:.1f}")
    return ok, "converged " + "; ".join(parts)


def _flow_gap(sys, x0, dims, weights_of, sti, sii, t: float, h: float) -> float:
    """Sup gap between the system (fixed-step RK4) and gradient flow on E (DOP853)."""
    tr = integrate(sys, x0, t, StepControl(h=h, record_dt=0.5, rhs_tol=0.0))
    w0 = weights_of(sys.unpack(x0))
    shapes = [w.shape for w in w0]
    cuts = np.cumsum([w.size for w in w0])[:-1]

    def flow(_t, y):
        ws = [p.reshape(s) for p, s in zip(np.split(y, cuts), shapes)]
        return np.concatenate([g.ravel() for g in gradient_of_error(dims, sti, sii, ws)])

    y0 = np.concatenate([w.ravel() for w in w0])
    sol = solve_ivp(flow, (0.0, tr.t_end), y0, method="DOP853", t_eval=tr.t, rtol=1e-13, atol=1e-15)
    ode = np.array([np.concatenate([w.ravel() for w in weights_of(sys.unpack(x))]) for x in tr.x])
    return float(np.max(np.abs(sol.y.T - ode)))


def criterion_8(seed: int = 8) -> tuple[bool, str]:
    rng = make_rng(seed)
    N = 8
    exp = build_expansive(N)
    sti_c, sii_c = teacher_statistics(N, N, 1, rng)
    comp = build_compressive(N, sti_c, sii_c)
    dims = [5, 3, 4]
    sti_g, sii_g = teacher_statistics(dims[0], dims[-1], 3, rng)
    gen = build_general_linear(dims, "arbp", sti_g, sii_g)
    horizons = {"expansive": 200.0, "compressive": 500.0, "general": 500.0}
    ok, parts = True, []
    for key, sys in (("expansive", exp), ("compressive", comp), ("general", gen)):
        rep = analyze(integrate(sys, random_state(sys, rng), horizons[key], ADAPTIVE), sys)
        drift = max(rep.drifts.values())
        ok &= rep.converged and drift <= 1e-9
        parts.append(f"{key} {rep.verdict} drift {drift:.0e}")

    ab = np.array([[1.0]])
    flows = (
        ("expansive", exp, [1, N, 1], lambda p: [p["a"].reshape(N, 1), p["b"].reshape(1, N)], ab, ab),
        ("compressive", comp, [N, 1, N], lambda p: [p["A"], p["B"]], sti_c, sii_c),
        ("general", gen, dims, lambda p: [p["A1"], p["A2"]], sti_g, sii_g),
    )
    gaps = []
    for key, sys, d, wf, sti, sii in flows:
        x0 = k0_state(sys, random_state(sys, rng))
        g = _flow_gap(sys, x0, d, wf, sti, sii, t=10.0, h=2e-3)
        gaps.append(g)
        parts.append(f"{key} K=0 flow gap {g:.0e}")
    ok &= max(gaps) <= 1e-8
    return ok, "; ".join(parts)


# -- 9-10: consistency ratios ----------------------------------------------


def stdp_gaps(scales=(1e-2, 5e-3, 2.5e-3), seed: int = 9) -> list[float]:
    """``||dO - R_SRBP||`` over hidden layers for a channel scaled by each s."""
    rng = make_rng(seed)
    net = NetworkParams.create([6, 5, 5, 5, 3], TANH, SOFTMAX, Initializer(), rng)
    G = [rng.normal(size=(5, 3)) for _ in range(net.depth - 1)]
    X = rng.random((4, 6))
    T = np.eye(3)[rng.integers(0, 3, 4)]
    cfg = ChannelConfig("srbp", adaptivity="stdp")
    out, tr = forward(net, X)
    gaps = []
    for s in scales:
        ch = ChannelParams([s * g for g in G])
        t1, t2 = stdp_phases(net, ch, cfg, tr, T)
        sig = backward_srbp(net, ch, tr, T - out, cfg).signals
        gaps.append(float(np.sqrt(sum(
            np.sum((t2.activations[h] - t1.activations[h] - sig[h - 1]) ** 2)
            for h in range(1, net.depth)))))
    return gaps


def _ratios(g):
    return [g[i] / g[i + 1] for i in range(len(g) - 1)]


def criterion_9() -> tuple[bool, str]:
    r = _ratios(stdp_gaps())
    ok = all(3.5 <= v <= 4.5 for v in r)
    return ok, "gap ratios per halving of s " + ", ".join(f"{v:.3f}" for v in r) + " (in [3.5, 4.5])"


def euler_gaps(etas=(1e-2, 5e-3, 2.5e-3)) -> list[float]:
    data, st = gen_linear_stats(200, "normal", 1.5, noise=0.3, seed=10)
    sys = build_chain(2, "arbp", st.alpha, st.beta)
    x0 = np.array([0.3, 0.2, 0.4])
    return [sgd_vs_ode(sys, data, eta, 5.0, x0).gap for eta in etas]


def criterion_10() -> tuple[bool, str]:
    r = _ratios(euler_gaps())
    ok = all(1.7 <= v <= 2.3 for v in r)
    return ok, "gap ratios per halving of eta " + ", ".join(f"{v:.3f}" for v in r) + " (in [1.7, 2.3])"


CRITERIA = {
    1: ("gradient oracle", criterion_1, 1.0),
    2: ("reduction oracle", criterion_2, 1.0),
    3: ("MNIST desk scale", criterion_3, 4 * 300.0),
    4: ("Bianchini k=0,1", criterion_4, 6 * 600.0),
    5: ("Hebbian ARBP instability", criterion_5, 6 * 300.0),
    6: ("ARBP chain battery", criterion_6, 30.0),
    7: ("ASRBP chain battery", criterion_7, 30.0),
    8: ("expansive/compressive/general battery", criterion_8, 60.0),
    9: ("STDP consistency", criterion_9, 5.0),
    10: ("Euler consistency", criterion_10, 10.0),
}


def run_criterion(number: int) -> CriterionResult:
    name, fn, budget = CRITERIA[number]
    t0 = time.perf_counter()
    ok, detail = fn()
    dt = time.perf_counter() - t0
    passed = bool(ok) and dt <= budget
    if ok and not passed:
        detail += " [over runtime budget]"
    return CriterionResult(number, name, passed, detail, dt, budget)


def run_all(numbers=None, echo=None) -> list[CriterionResult]:
    out = []
    for n in numbers or sorted(CRITERIA):
        r = run_criterion(n)
        if echo is not None:
            echo(r)
        out.append(r)
    return out
