"""Config-driven ODE runs: build a system, integrate, analyze and write the results."""
from __future__ import annotations

import configparser
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core_math import ConfigError, derive_seed, make_rng
from ..experiment import _bool, _int_list, parse_ini, render_ini
from .analysis import InvariantReport, analyze
from .export import _jsonable, write_report_json, write_trajectory_csv
from .integrate import StepControl, Trajectory, integrate
from .systems import (
    OdeSystem,
    build_chain,
    build_chain_stdp,
    build_compressive,
    build_expansive,
    build_general_linear,
    build_nonlinear_power,
    counterexample_state,
    random_state,
)

SYSTEMS = ("chain", "chain-stdp", "expansive", "compressive", "general", "power", "counterexample")
INITS = ("random", "positive", "k0")

ODE_SCHEMA: dict[str, dict[str, tuple]] = {
    "ode": {
        "system": (str, "chain"),
        "depth": (int, "2"),
        "variant": (str, "arbp"),
        "n": (int, "4"),
        "dims": (_int_list, "5,3,4"),
        "mu": (float, "2.0"),
        "alpha": (float, "1.0"),
        "beta": (float, "1.0"),
        "teacher_rank": (int, "1"),
        "t_max": (float, "1000.0"),
        "method": (str, "adaptive"),
        "h": (float, "1e-3"),
        "rtol": (float, "1e-12"),
        "atol": (float, "1e-14"),
        "init": (str, "random"),
        "init_scale": (float, "0.5"),
        "f0": (float, "0.5"),
        "seed": (int, "0"),
        "write_trajectory": (_bool, "true"),
    },
}


@dataclass
class OdeRun:
    values: dict
    resolved: configparser.ConfigParser

    @property
    def seed(self) -> int:
        return self.values["seed"]

    def with_seed(self, seed: int) -> "OdeRun":
        vals = dict(self.values, seed=seed)
        res = configparser.ConfigParser(interpolation=None)
        res.read_string(render_ini(self.resolved))
        res["ode"]["seed"] = str(seed)
        return OdeRun(vals, res)

    def resolved_text(self) -> str:
        return render_ini(self.resolved)

    def control(self) -> StepControl:
        v = self.values
        return StepControl(method=v["method"], h=v["h"], rtol=v["rtol"], atol=v["atol"])


def load_ode_run(path_or_text, is_text: bool = False) -> OdeRun:
    text = path_or_text if is_text else Path(path_or_text).read_text()
    values, resolved = parse_ini(text, ODE_SCHEMA)
    run = OdeRun(values["ode"], resolved)
    v = run.values
    if v["system"] not in SYSTEMS:
        raise ConfigError(f"[ode] system: unknown system {v['system']!r}; choose from {', '.join(SYSTEMS)}")
    if v["init"] not in INITS:
        raise ConfigError(f"[ode] init: unknown init {v['init']!r}")
    if not v["t_max"] > 0:
        raise ConfigError("[ode] t_max must be positive")
    try:
        run.control()
    except ConfigError as exc:
        raise ConfigError(f"[ode] {exc}") from None
    return run


def teacher_statistics(n_in: int, n_out: int, rank: int, rng: np.random.Generator):
    """Input covariance and input-target cross-covariance of a linear teacher.

    ``Sigma_II = X X^t / m`` from Gaussian inputs and ``Sigma_TI = P Sigma_II`` for
    a random teacher ``P`` of the given rank, so the data are realizable by a
    network whose narrowest layer has at least ``rank`` units.
    """
    m = 4 * n_in
    X = rng.normal(size=(n_in, m))
    sii = X @ X.T / m
    P = 0.5 * rng.normal(size=(n_out, rank)) @ rng.normal(size=(rank, n_in)) / np.sqrt(rank)
    return P @ sii, sii


def build_system(v: dict, rng: np.random.Generator) -> OdeSystem:
    name = v["system"]
    if name == "chain":
        return build_chain(v["depth"], v["variant"], v["alpha"], v["beta"])
    if name == "counterexample":
        return build_chain(3, "asrbp", 1.0, 1.0)
    if name == "chain-stdp":
        return build_chain_stdp(v["alpha"], v["beta"])
    if name == "expansive":
        return build_expansive(v["n"], v["alpha"], v["beta"])
    if name == "power":
        return build_nonlinear_power(v["mu"], v["alpha"], v["beta"])
    if name == "compressive":
        n = v["n"]
        sti, sii = teacher_statistics(n, n, 1, rng)
        return build_compressive(n, sti, sii)
    dims = list(v["dims"])
    if len(dims) < 3:
        raise ConfigError("[ode] dims needs at least three sizes")
    rank = min(v["teacher_rank"], *dims)
    sti, sii = teacher_statistics(dims[0], dims[-1], rank, rng)
    return build_general_linear(dims, v["variant"], sti, sii)


def k0_state(sys: OdeSystem, x: np.ndarray) -> np.ndarray:
    """Copy the forward weights into the channel so every tracking constant is zero."""
    p = sys.unpack(np.array(x, dtype=float))
    kind = sys.kind
    if kind == "chain":
        L = sys.params["L"]
        if sys.params["variant"] == "arbp":
            for i in range(1, L):
                p[f"c{i}"] = p[f"a{i + 1}"].copy()
        else:
            for i in range(1, L):
                p[f"c{i}"] = p[f"a{i}"].copy()
    elif kind == "expansive":
        p["c"] = p["b"].copy()
    elif kind == "compressive":
        p["C"] = p["B"].T.copy()
    elif kind == "general" and sys.params["variant"] == "arbp":
        for i in range(1, len(sys.params["dims"]) - 1):
            p[f"C{i}"] = p[f"A{i + 1}"].T.copy()
    elif kind == "power":
        p["c1"] = p["a2"].copy()
    else:
        raise ConfigError(f"[ode] init=k0 is not defined for {sys.name}")
    return sys.pack(p)


def initial_state(sys: OdeSystem, v: dict, rng: np.random.Generator) -> np.ndarray:
    if v["system"] == "counterexample":
        return counterexample_state(v["f0"])
    x0 = random_state(sys, rng, v["init_scale"])
    if v["init"] == "positive":
        x0 = np.abs(x0)
    elif sys.kind == "power" and not float(v["mu"]).is_integer():
        x0[0] = abs(x0[0])
    return k0_state(sys, x0) if v["init"] == "k0" else x0


@dataclass
class OdeResult:
    system: OdeSystem
    x0: np.ndarray
    trajectory: Trajectory
    report: InvariantReport


def solve(run: OdeRun) -> OdeResult:
    rng = make_rng(run.seed)
    sys = build_system(run.values, rng)
    x0 = initial_state(sys, run.values, rng)
    traj = integrate(sys, x0, run.values["t_max"], run.control())
    report = analyze(traj, sys)
    return OdeResult(sys, x0, traj, report)


def run_ode(run: OdeRun, out_dir=None) -> OdeResult:
    """Solve and, with ``out_dir``, write trajectory.csv, report.json and the resolved config."""
    res = solve(run)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.resolved.ini").write_text(run.resolved_text())
        if run.values["write_trajectory"]:
            write_trajectory_csv(res.trajectory, res.system, out / "trajectory.csv")
        write_report_json(res.report, out / "report.json", {
            "seed": run.seed,
            "config": run.resolved_text(),
            "x0": res.x0,
            "labels": res.system.labels(),
        })
    return res


def sweep(run: OdeRun, n: int, out_dir=None) -> list[OdeResult]:
    """``n`` runs with seeds derived from the base seed, one subdirectory each."""
    results = []
    for i in range(n):
        sub = run.with_seed(derive_seed(run.seed, i))
        dest = None if out_dir is None else Path(out_dir) / f"seed-{i:03d}"
        results.append(run_ode(sub, dest))
    if out_dir is not None:
        rows = [{"index": i, "seed": derive_seed(run.seed, i), "verdict": r.report.verdict,
                 "residual": r.report.residual, "max_drift": max(r.report.drifts.values(), default=0.0)}
                for i, r in enumerate(results)]
        (Path(out_dir) / "sweep.json").write_text(json.dumps(_jsonable(rows), indent=2) + "\n")
    return results
