"""Fixed-step RK4 (vectorized over a batch of initial states) and an adaptive path.

The RK4 loop halts a member once ``||RHS||_inf < rhs_tol`` for ``halt_steps``
consecutive steps, marks it diverged when ``||x||_inf`` exceeds ``blowup``,
and retries a step with halved sub-steps when the RHS turns non-finite,
aborting that member once the sub-step would fall below ``h_min`` or the
halving count passes ``max_halvings``. The adaptive path stops on terminal
events: the state leaving the ``blowup`` box, or ``||RHS||_inf`` crossing
below ``rhs_tol``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from ..core_math import ConfigError, DomainError
from .systems import OdeSystem

STATUSES = ("completed", "halted", "diverged", "aborted")


@dataclass(frozen=True)
class StepControl:
    """``method`` is ``rk4`` (fixed ``h``) or ``adaptive`` (scipy DOP853 at rtol/atol)."""

    method: str = "rk4"
    h: float = 1e-3
    rtol: float = 1e-12
    atol: float = 1e-14
    h_min: float = 1e-10
    rhs_tol: float = 1e-12
    halt_steps: int = 100
    blowup: float = 1e8
    max_halvings: int = 12
    record_dt: float | None = None

    def __post_init__(self):
        if self.method not in ("rk4", "adaptive"):
            raise ConfigError(f"unknown integration method {self.method!r}")
        if not self.h > 0 or not self.h_min > 0:
            raise ConfigError("step sizes must be positive")


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    h: float | None
    order: int
    status: str = "completed"
    message: str = ""

    def __post_init__(self):
        if self.t.ndim != 1 or self.x.shape[0] != self.t.shape[0]:
            raise ValueError("time grid and snapshots disagree")
        if self.t.size > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("time grid must be strictly increasing")

    @property
    def final(self) -> np.ndarray:
        return self.x[-1]

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    def at(self, t: float) -> np.ndarray:
        """Snapshot at the grid time closest to ``t``."""
        return self.x[int(np.argmin(np.abs(self.t - t)))]


def _rk4_step(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _safe_rhs(sys, x):
    try:
        with np.errstate(all="ignore"):
            return sys.rhs(x)
    except (DomainError, FloatingPointError):
        return np.full_like(x, np.nan)


def _substep(sys, x, h, h_min, max_halvings):
    """Advance one member over ``h`` with repeated halving; ``None`` if the floor is hit."""
    n = 2
    while h / n >= h_min and n <= 2**max_halvings:
        y, ok = x.copy(), True
        for _ in range(n):
            y = _rk4_step(lambda z: _safe_rhs(sys, z), y, h / n)
            if not np.all(np.isfinite(y)):
                ok = False
                break
        if ok:
            return y
        n *= 2
    return None


def integrate(sys: OdeSystem, x0, t_max: float, control: StepControl = StepControl()):
    """Integrate from ``x0`` (shape ``(n,)``) or a batch ``(m, n)`` up to ``t_max``.

    Returns one :class:`Trajectory` for a single state, a list for a batch.
    """
    x0 = sys.check_state(np.array(x0, dtype=float))
    if not t_max > 0:
        raise ConfigError("t_max must be positive")
    single = x0.ndim == 1
    X0 = x0[None, :] if single else x0
    if control.method == "adaptive":
        trajs = [_adaptive(sys, row, t_max, control) for row in X0]
    else:
        trajs = _rk4_batch(sys, X0, t_max, control)
    return trajs[0] if single else trajs


def _rk4_batch(sys, X0, t_max, ctl: StepControl) -> list[Trajectory]:
    m, n = X0.shape
    h = ctl.h
    n_steps = int(np.ceil(t_max / h - 1e-9))
    record_dt = ctl.record_dt if ctl.record_dt is not None else t_max / 2000
    stride = max(1, int(round(record_dt / h)))

    x = X0.copy()
    active = np.ones(m, bool)
    status = np.array(["completed"] * m, dtype=object)
    message = [""] * m
    calm = np.zeros(m, int)
    end_step = np.full(m, n_steps)
    times, snaps = [0.0], [x.copy()]

    for step in range(1, n_steps + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        xa = x[idx]
        with np.errstate(all="ignore"):
            try:
                new = _rk4_step(sys.rhs, xa, h)
            except DomainError:
                new = np.full_like(xa, np.nan)
        bad = ~np.all(np.isfinite(new), axis=1)
        for j in np.flatnonzero(bad):
            y = _substep(sys, xa[j], h, ctl.h_min, ctl.max_halvings)
            if y is None:
                i = idx[j]
                active[i] = False
                status[i] = "aborted"
                message[i] = f"non-finite right-hand side at t={(step - 1) * h:.6g}"
                end_step[i] = step - 1
            else:
                new[j] = y
        ok = active[idx]
        x[idx[ok]] = new[ok]
        idx = idx[ok]

        big = np.max(np.abs(x[idx]), axis=1) > ctl.blowup
        for i in idx[big]:
            active[i] = False
            status[i] = "diverged"
            message[i] = f"|x| exceeded {ctl.blowup:g} at t={step * h:.6g}"
            end_step[i] = step
        idx = idx[~big]

        if idx.size:
            with np.errstate(all="ignore"):
                r = np.max(np.abs(_safe_rhs(sys, x[idx])), axis=1)
            small = r < ctl.rhs_tol
            calm[idx] = np.where(small, calm[idx] + 1, 0)
            done = idx[calm[idx] >= ctl.halt_steps]
            for i in done:
                active[i] = False
                status[i] = "halted"
                message[i] = f"|RHS| < {ctl.rhs_tol:g} for {ctl.halt_steps} steps"
                end_step[i] = step
        if step % stride == 0 or step == n_steps:
            times.append(step * h)
            snaps.append(x.copy())

    times = np.array(times)
    snaps = np.stack(snaps)
    out = []
    for i in range(m):
        t_end = end_step[i] * h
        keep = times < t_end - 1e-12 * max(1.0, t_end)
        t_i = np.append(times[keep], t_end) if t_end > 0 else times[:1]
        x_i = np.vstack([snaps[keep, i], x[i][None]]) if t_end > 0 else snaps[:1, i]
        out.append(Trajectory(t_i, x_i, h, 4, str(status[i]), message[i]))
    return out


def _adaptive(sys, x0, t_max, ctl: StepControl) -> Trajectory:
    record_dt = ctl.record_dt if ctl.record_dt is not None else t_max / 2000
    grid = np.arange(0.0, t_max, record_dt)
    grid = np.append(grid, t_max)

    def f(_t, y):
        return sys.rhs(y)

    def blow(_t, y):
        return ctl.blowup - np.max(np.abs(y))

    def calm(_t, y):
        return np.max(np.abs(sys.rhs(y))) - ctl.rhs_tol

    blow.terminal = True
    calm.terminal = True
    calm.direction = -1
    try:
        at_rest = calm(0.0, x0) < 0
    except DomainError as exc:
        return Trajectory(np.array([0.0]), x0[None], None, 8, "aborted", str(exc))
    if at_rest:
        return Trajectory(np.array([0.0]), x0[None], None, 8, "halted", f"|RHS| below {ctl.rhs_tol:g} at t=0")
    try:
        with np.errstate(all="ignore"):
            sol = solve_ivp(f, (0.0, t_max), x0, method="DOP853", t_eval=grid, events=[blow, calm],
                            rtol=ctl.rtol, atol=ctl.atol)
    except DomainError as exc:
        return Trajectory(np.array([0.0]), x0[None], None, 8, "aborted", str(exc))
    t, x = sol.t, sol.y.T
    if sol.status == 1:
        hit = 0 if sol.t_events[0].size else 1
        te, ye = sol.t_events[hit][0], sol.y_events[hit][0]
        if t.size == 0 or te > t[-1]:
            t, x = np.append(t, te), np.vstack([x, ye])
        if hit == 0:
            return Trajectory(t, x, None, 8, "diverged", f"|x| exceeded {ctl.blowup:g} at t={te:.6g}")
        return Trajectory(t, x, None, 8, "halted", f"|RHS| fell below {ctl.rhs_tol:g} at t={te:.6g}")
    if sol.status < 0 or not np.all(np.isfinite(x)):
        return Trajectory(t if t.size else np.array([0.0]), x if t.size else x0[None], None, 8,
                          "aborted", sol.message)
    return Trajectory(t, x, None, 8, "completed", "")
