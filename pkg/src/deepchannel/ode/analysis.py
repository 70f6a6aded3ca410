"""Invariant drift, convergence verdicts and sign classification of reached roots."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .integrate import Trajectory
from .systems import OdeSystem

VERDICTS = ("converged", "stalled", "diverged", "undetermined", "aborted")

# sign pattern of Q just left / right of a root
STABILITY = {"+-": "attracting", "-+": "repelling", "++": "semi-stable", "--": "semi-stable"}


@dataclass
class InvariantReport:
    system: str
    theorem: str
    verdict: str
    status: str
    t_end: float
    residual: float
    drifts: dict[str, float]
    constants: dict[str, list[float]]
    cauchy_ok: bool
    rhs_ok: bool
    final_rhs_norm: float
    final_error: float | None = None
    error_min: float | None = None
    classification: str | None = None
    stability: str | None = None
    root: dict | None = None
    annotations: list[str] = field(default_factory=list)
    message: str = ""
    tracking: tuple[str, ...] = ()

    @property
    def converged(self) -> bool:
        return self.verdict == "converged"

    @property
    def max_tracking_drift(self) -> float:
        vals = [v for k, v in self.drifts.items() if k in self.tracking]
        return max(vals) if vals else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tracking"] = list(self.tracking)
        d["converged"] = self.converged
        return d


def _values(inv, x) -> np.ndarray:
    v = np.asarray(inv.fn(x), dtype=float)
    return v.reshape(x.shape[:-1] + (-1,))


def invariant_drifts(sys: OdeSystem, traj: Trajectory) -> tuple[dict[str, float], dict[str, list[float]]]:
    """Max ``|I(x(t)) - I(x(0))|`` over the snapshots, for each applicable invariant."""
    drifts, consts = {}, {}
    x0 = traj.x[0]
    for inv in sys.invariants:
        if inv.condition is not None and not inv.condition(x0):
            continue
        with np.errstate(all="ignore"):
            vals = _values(inv, traj.x)
        d = np.abs(vals - vals[0])
        drifts[inv.name] = float(np.max(d)) if np.all(np.isfinite(d)) else float("inf")
        consts[inv.name] = vals[0].tolist()
    return drifts, consts


def cauchy_test(traj: Trajectory, window: float = 10.0, tol: float = 1e-9) -> bool:
    """True when the state moved less than ``tol`` (sup norm) over the trailing ``window``."""
    if traj.t_end - traj.t[0] < window:
        return False
    tail = traj.x[traj.t >= traj.t_end - window]
    return bool(np.max(np.abs(tail - traj.final)) < tol)


def classify_root(Q, x: float, eps: float | None = None) -> str | None:
    """Sign pattern (``+-``, ``-+``, ``++``, ``--``) of Q on both sides of ``x``."""
    eps = eps if eps is not None else 1e-6 * max(1.0, abs(x))
    left, right = Q(x - eps), Q(x + eps)
    if not (np.isfinite(left) and np.isfinite(right)) or left == 0 or right == 0:
        return None
    return ("+" if left > 0 else "-") + ("+" if right > 0 else "-")


def analyze(traj: Trajectory, sys: OdeSystem, residual_tol: float = 1e-6,
            window: float = 10.0, cauchy_tol: float = 1e-9, rhs_tol: float = 1e-12) -> InvariantReport:
    """Report for one trajectory.

    Verdict: ``diverged``/``aborted`` follow the integrator; otherwise the state
    is settled when the trailing-window Cauchy test or the RHS-norm test holds.
    A settled state with residual within ``residual_tol`` is ``converged``,
    otherwise ``stalled``; an unsettled one is ``undetermined``.
    """
    xf = traj.final
    drifts, consts = invariant_drifts(sys, traj)
    with np.errstate(all="ignore"):
        try:
            rn = float(np.max(np.abs(sys.rhs(xf))))
        except ValueError:
            rn = float("nan")
        residual = float(sys.residual(xf)) if np.all(np.isfinite(xf)) else float("inf")
    cauchy = cauchy_test(traj, window, cauchy_tol)
    rhs_ok = traj.status == "halted" or (np.isfinite(rn) and rn < rhs_tol)
    if traj.status in ("diverged", "aborted"):
        verdict = traj.status
    elif cauchy or rhs_ok:
        verdict = "converged" if residual <= residual_tol else "stalled"
    else:
        verdict = "undetermined"

    final_error = None
    if sys.error_fn is not None and np.all(np.isfinite(xf)):
        final_error = float(sys.error_fn(xf))

    pattern = stability = root = None
    if sys.reducer is not None and verdict in ("converged", "stalled"):
        red = sys.reducer(xf)
        if red is not None:
            pattern = classify_root(red.Q, red.x)
            stability = STABILITY.get(pattern)
            root = {"coordinate": red.coordinate, "value": red.x}

    return InvariantReport(
        system=sys.name,
        theorem=sys.theorem,
        verdict=verdict,
        status=traj.status,
        t_end=traj.t_end,
        residual=residual,
        drifts=drifts,
        constants=consts,
        cauchy_ok=cauchy,
        rhs_ok=bool(rhs_ok),
        final_rhs_norm=rn,
        final_error=final_error,
        error_min=sys.error_min,
        classification=pattern,
        stability=stability,
        root=root,
        annotations=sys.annotations(traj.x[0]),
        message=traj.message,
        tracking=tuple(inv.name for inv in sys.invariants if inv.tracking and inv.name in drifts),
    )
