"""Averaged learning dynamics of linear (and power-nonlinear) networks.

Every builder returns an :class:`OdeSystem` whose state is one flat float
vector. Right-hand sides, invariants and residuals accept arrays of shape
``(..., n)`` so a batch of initial conditions can be integrated together.

Notation: ``a_i`` forward weights, ``c_i`` channel weights, ``P`` the total
forward product, ``xi = alpha - beta * P``. Matrix systems use
``M = Sigma_TI - P Sigma_II``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from ..core_math import ConfigError, DomainError

MAX_STATE = 10_000


@dataclass(frozen=True)
class Component:
    name: str
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return math.prod(self.shape)


@dataclass(frozen=True)
class Invariant:
    """A conserved quantity. ``fn`` maps ``(..., n)`` states to ``(..., size)`` values.

    ``tracking`` marks the channel-tracks-forward relations. ``condition``, when
    set, is a predicate on the initial state: the quantity is only conserved
    for initializations satisfying it.
    """

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    size: int = 1
    tracking: bool = False
    condition: Callable[[np.ndarray], bool] | None = None


@dataclass(frozen=True)
class Reduction:
    """1-D reduction ``dx/dt = Q(x)`` through a state, obtained from the invariants."""

    coordinate: str
    x: float
    Q: Callable[[float], float]


@dataclass
class OdeSystem:
    name: str
    kind: str
    layout: tuple[Component, ...]
    params: dict
    rhs_fn: Callable[[np.ndarray], np.ndarray]
    invariants: tuple[Invariant, ...] = ()
    residual_fn: Callable[[np.ndarray], np.ndarray] | None = None
    error_fn: Callable[[np.ndarray], np.ndarray] | None = None
    error_min: float | None = None
    reducer: Callable[[np.ndarray], Reduction | None] | None = None
    annotator: Callable[[np.ndarray], list[str]] | None = None
    manifold: str = "alpha - beta*P = 0"
    theorem: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.size > MAX_STATE:
            raise ConfigError(f"state has {self.size} entries, the bench caps it at {MAX_STATE}")

    @cached_property
    def size(self) -> int:
        return sum(c.size for c in self.layout)

    @cached_property
    def _slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for c in self.layout:
            out[c.name] = slice(start, start + c.size)
            start += c.size
        return out

    def slices(self) -> dict[str, slice]:
        return dict(self._slices)

    def unpack(self, x: np.ndarray) -> dict[str, np.ndarray]:
        x = np.asarray(x, dtype=float)
        lead = x.shape[:-1]
        return {c.name: x[..., s].reshape(lead + c.shape) for c, s in zip(self.layout, self._slices.values())}

    def pack(self, parts: dict[str, np.ndarray]) -> np.ndarray:
        missing = [c.name for c in self.layout if c.name not in parts]
        if missing:
            raise ConfigError(f"missing state components {missing}")
        arrs = [np.asarray(parts[c.name], dtype=float) for c in self.layout]
        lead = arrs[0].shape[: arrs[0].ndim - len(self.layout[0].shape)]
        return np.concatenate([a.reshape(lead + (c.size,)) for a, c in zip(arrs, self.layout)], axis=-1)

    def labels(self) -> list[str]:
        out = []
        for c in self.layout:
            if c.shape == ():
                out.append(c.name)
            else:
                out.extend(f"{c.name}[{','.join(map(str, ix))}]" for ix in np.ndindex(*c.shape))
        return out

    def check_state(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.size,):
            raise ConfigError(f"state has shape {x.shape}, expected (..., {self.size})")
        return x

    def rhs(self, x) -> np.ndarray:
        return self.rhs_fn(self.check_state(x))

    def residual(self, x) -> np.ndarray:
        if self.residual_fn is None:
            raise ConfigError(f"{self.name} has no manifold residual")
        return self.residual_fn(self.check_state(x))

    def invariant_values(self, x) -> dict[str, np.ndarray]:
        x = self.check_state(x)
        return {inv.name: np.asarray(inv.fn(x)) for inv in self.invariants}

    def annotations(self, x0) -> list[str]:
        return [] if self.annotator is None else self.annotator(self.check_state(x0))


# -- scalar helpers -------------------------------------------------------


def _scalar_error(alpha, beta, gamma):
    def err(P):
        return 0.5 * gamma - alpha * P + 0.5 * beta * P**2

    return err, 0.5 * gamma - alpha**2 / (2.0 * beta)


def _check_ab(alpha: float, beta: float) -> None:
    if not beta > 0:
        raise ConfigError("beta = E(I^2) must be positive (beta = 0 is the trivial case)")
    if not np.isfinite(alpha):
        raise ConfigError("alpha must be finite")


def _prod(cols, lead_shape):
    out = np.ones(lead_shape)
    for c in cols:
        out = out * c
    return out


def _sign(v: float) -> float:
    return -1.0 if v < 0 else 1.0


# -- chains ---------------------------------------------------------------


def build_chain(L: int, variant: str = "arbp", alpha: float = 1.0, beta: float = 1.0,
                gamma: float | None = None) -> OdeSystem:
    """Linear chain ``A[1, ..., 1]`` with L adjustable layers and an adaptive channel.

    ARBP: ``da_i = prod_{k>=i} c_k prod_{k<i} a_k xi`` and
    ``dc_i = prod_{k<=i} a_k prod_{k>i} c_k xi`` (``c_L = 1``).
    ASRBP: ``da_i = c_i prod_{k<i} a_k xi`` and ``dc_i = prod_{k<=i} a_k xi``.
    """
    if L < 2:
        raise ConfigError("a chain needs L >= 2")
    variant = variant.lower()
    if variant not in ("arbp", "asrbp"):
        raise ConfigError(f"unknown chain variant {variant!r}")
    _check_ab(alpha, beta)
    gamma = alpha**2 / beta if gamma is None else gamma
    err, emin = _scalar_error(alpha, beta, gamma)

    def split(x):
        return x[..., :L], x[..., L:]

    def product(x):
        return np.prod(x[..., :L], axis=-1)

    def rhs(x):
        a, c = split(x)
        lead = x.shape[:-1]
        xi = alpha - beta * product(x)
        cc = np.concatenate([c, np.ones(lead + (1,))], axis=-1)  # c_1..c_L with c_L = 1
        # prefix[i] = prod_{k<i} a_k, i = 0..L
        prefix = np.concatenate([np.ones(lead + (1,)), np.cumprod(a, axis=-1)], axis=-1)
        if variant == "arbp":
            # suffix[i] = prod_{k>=i} c_k over c_1..c_L
            suffix = np.concatenate([np.cumprod(cc[..., ::-1], axis=-1)[..., ::-1], np.ones(lead + (1,))], axis=-1)
            da = suffix[..., :L] * prefix[..., :L]
            dc = prefix[..., 1:L] * suffix[..., 1:L]
        else:
            da = cc * prefix[..., :L]
            dc = prefix[..., 1:L]
        return np.concatenate([da, dc], axis=-1) * xi[..., None]

    invs: list[Invariant] = []
    if variant == "arbp":
        for i in range(1, L):
            invs.append(Invariant(f"K{i}", lambda x, i=i: x[..., L + i - 1] - x[..., i], tracking=True))
        for i in range(1, L):
            invs.append(Invariant(f"J{i}", lambda x, i=i: x[..., i - 1] ** 2 - x[..., L + i - 1] ** 2))
    else:
        for i in range(1, L):
            invs.append(Invariant(f"K{i}", lambda x, i=i: x[..., L + i - 1] ** 2 - x[..., i - 1] ** 2, tracking=True))
        invs.append(Invariant(f"a{L}-c{L - 1}", lambda x: x[..., L - 1] - x[..., 2 * L - 2]))
        for i in range(2, L):
            invs.append(Invariant(
                f"mu{i}", lambda x, i=i: (x[..., i - 1] + x[..., L + i - 1]) * np.exp(-x[..., L + i - 2])))
            invs.append(Invariant(
                f"nu{i}", lambda x, i=i: (x[..., i - 1] - x[..., L + i - 1]) * np.exp(x[..., L + i - 2])))

    def reducer(x):
        x = np.asarray(x, dtype=float)
        a, c = x[:L], x[L:]
        if variant == "arbp":
            K = c - a[1:]
            J = a[:-1] ** 2 - c**2
            signs = [_sign(v) for v in a]

            def chain_from(aL):
                aa = np.empty(L)
                aa[L - 1] = aL
                for i in range(L - 2, -1, -1):
                    ci = aa[i + 1] + K[i]
                    arg = ci**2 + J[i]
                    if arg < 0:
                        return None
                    aa[i] = signs[i] * np.sqrt(arg)
                return aa

            def Q(v):
                aa = chain_from(v)
                if aa is None:
                    return float("nan")
                return float(np.prod(aa[:-1]) * (alpha - beta * np.prod(aa)))

            return Reduction(f"a{L}", float(a[-1]), Q)

        K = c**2 - a[:-1] ** 2
        s1 = _sign(a[0])
        mus = [(a[i] + c[i]) * np.exp(-c[i - 1]) for i in range(1, L - 1)]
        nus = [(a[i] - c[i]) * np.exp(c[i - 1]) for i in range(1, L - 1)]
        top = a[L - 1] - c[L - 2]

        def Q(v):
            arg = v**2 - K[0]
            if arg < 0:
                return float("nan")
            aa = [s1 * np.sqrt(arg)]
            prev = v
            for m, n in zip(mus, nus):
                aa.append(0.5 * (m * np.exp(prev) + n * np.exp(-prev)))
                prev = 0.5 * (m * np.exp(prev) - n * np.exp(-prev))
            aa.append(prev + top)
            return float(aa[0] * (alpha - beta * np.prod(aa)))

        return Reduction("c1", float(c[0]), Q)

    def annotator(x0):
        notes = []
        vals = {inv.name: float(inv.fn(x0)) for inv in invs if inv.tracking}
        zero = [k for k, v in vals.items() if abs(v) < 1e-12]
        if variant == "asrbp" and zero:
            notes.append(f"K_i = 0 for {', '.join(zero)}: convergence hypothesis of the ASRBP theorem fails")
        if variant == "arbp" and len(zero) == L - 1:
            notes.append("all K_i = 0: channel equals the forward transposes, gradient flow on E")
        if abs(alpha - beta * np.prod(x0[:L])) < 1e-15:
            notes.append("initial state on the fixed-point manifold")
        return notes

    layout = tuple(Component(f"a{i}", ()) for i in range(1, L + 1)) + tuple(
        Component(f"c{i}", ()) for i in range(1, L))
    thm = "theorem4" if variant == "arbp" else "theorem4-prime"
    if L == 2:
        thm = "theorem2"
    elif L == 3:
        thm = "theorem3" if variant == "arbp" else "theorem3-prime"
    return OdeSystem(
        name=f"chain-L{L}-{variant}",
        kind="chain",
        layout=layout,
        params=dict(L=L, variant=variant, alpha=alpha, beta=beta, gamma=gamma),
        rhs_fn=rhs,
        invariants=tuple(invs),
        residual_fn=lambda x: np.abs(alpha - beta * product(x)),
        error_fn=lambda x: err(product(x)),
        error_min=emin,
        reducer=reducer,
        annotator=annotator,
        theorem=thm,
        meta={"product": product},
    )


def counterexample_state(f0: float = 0.5) -> np.ndarray:
    """Initial state of the non-convergent ASRBP L=3 solution.

    ``c_1 = a_1 = f``, ``a_2 = exp(-f)``, ``c_2 = a_3 = -a_2``; with
    alpha = beta = 1 this solves the system with ``f' = f (1 + f exp(-2f))``,
    so f grows without bound. Layout: (a1, a2, a3, c1, c2).
    """
    e = np.exp(-f0)
    return np.array([f0, e, -e, f0, -e])


def build_chain_stdp(alpha: float = 1.0, beta: float = 1.0, gamma: float | None = None) -> OdeSystem:
    """``A[1,1,1]`` with the STDP channel rule:
    ``da1 = c1 xi``, ``da2 = (a1 + c1 P) xi``, ``dc1 = c1 P xi``."""
    _check_ab(alpha, beta)
    gamma = alpha**2 / beta if gamma is None else gamma
    err, emin = _scalar_error(alpha, beta, gamma)

    def rhs(x):
        a1, a2, c1 = x[..., 0], x[..., 1], x[..., 2]
        P = a1 * a2
        xi = alpha - beta * P
        return np.stack([c1 * xi, (a1 + c1 * P) * xi, c1 * P * xi], axis=-1)

    def product(x):
        return x[..., 0] * x[..., 1]

    def annotator(x0):
        notes = []
        if x0[2] == 0:
            notes.append("c1(0) = 0: c1 stays 0 and a1 is constant")
        if abs(alpha - beta * x0[0] * x0[1]) < 1e-15:
            notes.append("initial state on the fixed-point manifold: constant solution")
        return notes

    return OdeSystem(
        name="chain-stdp",
        kind="chain-stdp",
        layout=(Component("a1", ()), Component("a2", ()), Component("c1", ())),
        params=dict(alpha=alpha, beta=beta, gamma=gamma),
        rhs_fn=rhs,
        residual_fn=lambda x: np.abs(alpha - beta * product(x)),
        error_fn=lambda x: err(product(x)),
        error_min=emin,
        annotator=annotator,
        theorem="theorem2-prime",
        meta={"product": product},
    )


# -- width ----------------------------------------------------------------


def build_expansive(N: int, alpha: float = 1.0, beta: float = 1.0, gamma: float | None = None) -> OdeSystem:
    """``A[1,N,1]``: ``da = c xi``, ``db = a xi``, ``dc = a xi`` with ``P = sum a_i b_i``."""
    if N < 1:
        raise ConfigError("N must be >= 1")
    _check_ab(alpha, beta)
    gamma = alpha**2 / beta if gamma is None else gamma
    err, emin = _scalar_error(alpha, beta, gamma)

    def parts(x):
        return x[..., :N], x[..., N : 2 * N], x[..., 2 * N :]

    def product(x):
        a, b, _ = parts(x)
        return np.sum(a * b, axis=-1)

    def rhs(x):
        a, b, c = parts(x)
        xi = (alpha - beta * product(x))[..., None]
        return np.concatenate([c * xi, a * xi, a * xi], axis=-1)

    def K(x):
        a, b, c = parts(x)
        return c - b

    def J(x):
        a, b, c = parts(x)
        return a**2 + b**2 - 2 * c * b

    def symmetric(x0):
        return bool(np.all(np.abs(K(x0)) < 1e-12) and np.all(np.abs(J(x0)) < 1e-12))

    def sb2_minus_p2(x):
        a, b, _ = parts(x)
        return (np.sum(b**2, axis=-1) ** 2 - product(x) ** 2)[..., None]

    def r_s(x):
        a, b, c = parts(x)
        half_k = 0.5 * (c - b)
        return 0.5 * (a + c), 0.5 * (a + c) - b, half_k

    def reducer(x):
        # R = (A+C)/2 grows as f R*, S = (A+C)/2 - B as S*/f; P = |R-K|^2 - |S-K|^2
        R, S, Kh = r_s(np.asarray(x, dtype=float))
        if np.linalg.norm(R) < 1e-12:
            return None

        def Q(f):
            if f <= 0:
                return float("nan")
            P = np.sum((f * R - Kh) ** 2) - np.sum((S / f - Kh) ** 2)
            return float(f * (alpha - beta * P))

        return Reduction("f", 1.0, Q)

    def annotator(x0):
        R, _, _ = r_s(x0)
        notes = []
        if np.linalg.norm(R) < 1e-12:
            notes.append("R0 = (A+C)/2 = 0: the theorem excludes this initialization; the R = 0 subspace "
                         "is invariant but unstable, so adaptive steps leave it through rounding (use rk4)")
        if symmetric(x0):
            notes.append("K = 0 and J = 0: S_b^2 - P^2 is conserved")
        return notes

    invs = (
        Invariant("K", K, N, tracking=True),
        Invariant("J", J, N),
        Invariant("Sb2-P2", sb2_minus_p2, 1, condition=symmetric),
    )
    return OdeSystem(
        name=f"expansive-N{N}",
        kind="expansive",
        layout=(Component("a", (N,)), Component("b", (N,)), Component("c", (N,))),
        params=dict(N=N, alpha=alpha, beta=beta, gamma=gamma),
        rhs_fn=rhs,
        invariants=invs,
        residual_fn=lambda x: np.abs(alpha - beta * product(x)),
        error_fn=lambda x: err(product(x)),
        error_min=emin,
        reducer=reducer,
        annotator=annotator,
        theorem="theorem5",
        meta={"product": product},
    )


def _as_matrix(m, shape, name) -> np.ndarray:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape != shape:
        raise ConfigError(f"{name} has shape {m.shape}, expected {shape}")
    return m


def _matrix_error(sigma_ti, sigma_ii, gamma):
    """``E = tr(S_TT)/2 - tr(P S_TI^T) + tr(P S_II P^T)/2`` and its minimum."""
    try:
        p_star = np.linalg.solve(sigma_ii.T, sigma_ti.T).T
    except np.linalg.LinAlgError:
        p_star = sigma_ti @ np.linalg.pinv(sigma_ii)
    if gamma is None:
        gamma = float(np.trace(p_star @ sigma_ii @ p_star.T))

    def err(P):
        return (0.5 * gamma - np.einsum("...ij,ij->...", P, sigma_ti)
                + 0.5 * np.einsum("...ij,jk,...ik->...", P, sigma_ii, P))

    emin = 0.5 * gamma - 0.5 * float(np.trace(p_star @ sigma_ii @ p_star.T))
    return err, emin, gamma


def _T(m):
    return np.swapaxes(m, -1, -2)


def build_compressive(N: int, sigma_ti, sigma_ii, gamma: float | None = None) -> OdeSystem:
    """``A[N,1,N]``: ``dA = C M``, ``dB = M A^t``, ``dC = A M^t`` with ``M = S_TI - B A S_II``.

    A is 1 x N, B is N x 1, C is 1 x N.
    """
    if N < 1:
        raise ConfigError("N must be >= 1")
    sti = _as_matrix(sigma_ti, (N, N), "Sigma_TI")
    sii = _as_matrix(sigma_ii, (N, N), "Sigma_II")
    err, emin, gamma = _matrix_error(sti, sii, gamma)
    sys = None

    def M_of(x):
        p = sys.unpack(x)
        return sti - p["B"] @ p["A"] @ sii, p

    def rhs(x):
        M, p = M_of(x)
        dA = p["C"] @ M
        dB = M @ _T(p["A"])
        dC = p["A"] @ _T(M)
        return sys.pack({"A": dA, "B": dB, "C": dC})

    def product(x):
        p = sys.unpack(x)
        return p["B"] @ p["A"]

    def K(x):
        p = sys.unpack(x)
        d = p["C"] - _T(p["B"])
        return d.reshape(d.shape[:-2] + (N,))

    def annotator(x0):
        return ["C = B^t: gradient flow on E"] if np.all(np.abs(K(x0)) < 1e-12) else []

    sys = OdeSystem(
        name=f"compressive-N{N}",
        kind="compressive",
        layout=(Component("A", (1, N)), Component("B", (N, 1)), Component("C", (1, N))),
        params=dict(N=N, sigma_ti=sti, sigma_ii=sii, gamma=gamma),
        rhs_fn=rhs,
        invariants=(Invariant("C-Bt", K, N, tracking=True),),
        residual_fn=lambda x: np.linalg.norm(M_of(x)[0], axis=(-2, -1)),
        error_fn=lambda x: err(product(x)),
        error_min=emin,
        annotator=annotator,
        manifold="Sigma_TI - P Sigma_II = 0",
        theorem="theorem6",
        meta={"product": product},
    )
    return sys


def build_general_linear(dims, variant: str = "arbp", sigma_ti=None, sigma_ii=None,
                         gamma: float | None = None) -> OdeSystem:
    """``A[N_0, ..., N_L]`` with matrix weights ``A_i`` (N_i x N_{i-1}).

    ARBP channel ``C_i`` is N_i x N_{i+1}:
    ``dA_i = C_i ... C_{L-1} M (A_{i-1} ... A_1)^t``,
    ``dC_i = (A_i ... A_1) M^t (C_{i+1} ... C_{L-1})^t``.
    ASRBP channel ``C_i`` is N_i x N_L:
    ``dA_i = C_i M (A_{i-1} ... A_1)^t`` (``C_L = I``), ``dC_i = (A_i ... A_1) M^t``.
    """
    dims = [int(d) for d in dims]
    L = len(dims) - 1
    if L < 2 or min(dims) < 1:
        raise ConfigError("need at least one hidden layer and positive sizes")
    variant = variant.lower()
    if variant not in ("arbp", "asrbp"):
        raise ConfigError(f"unknown variant {variant!r}")
    n0, nL = dims[0], dims[-1]
    sti = _as_matrix(sigma_ti, (nL, n0), "Sigma_TI")
    sii = _as_matrix(sigma_ii, (n0, n0), "Sigma_II")
    err, emin, gamma = _matrix_error(sti, sii, gamma)
    A_names = [f"A{i}" for i in range(1, L + 1)]
    C_names = [f"C{i}" for i in range(1, L)]
    layout = tuple(Component(n, (dims[i], dims[i - 1])) for i, n in enumerate(A_names, start=1))
    if variant == "arbp":
        layout += tuple(Component(n, (dims[i], dims[i + 1])) for i, n in enumerate(C_names, start=1))
    else:
        layout += tuple(Component(n, (dims[i], nL)) for i, n in enumerate(C_names, start=1))
    sys = None

    def mats(x):
        p = sys.unpack(x)
        return [p[n] for n in A_names], [p[n] for n in C_names]

    def lower_products(A, lead):
        # low[i] = A_i ... A_1 (N_i x N_0), low[0] = I
        low = [np.broadcast_to(np.eye(n0), lead + (n0, n0))]
        for Ai in A:
            low.append(Ai @ low[-1])
        return low

    def product(x):
        A, _ = mats(x)
        return lower_products(A, x.shape[:-1])[-1]

    def rhs(x):
        lead = x.shape[:-1]
        A, C = mats(x)
        low = lower_products(A, lead)
        M = sti - low[-1] @ sii
        Mt = _T(M)
        out = {}
        if variant == "arbp":
            # up[i] = C_i ... C_{L-1} (N_i x N_L), up[L] = I
            up = [None] * (L + 1)
            up[L] = np.broadcast_to(np.eye(nL), lead + (nL, nL))
            for i in range(L - 1, 0, -1):
                up[i] = C[i - 1] @ up[i + 1]
            for i in range(1, L + 1):
                out[A_names[i - 1]] = up[i] @ M @ _T(low[i - 1])
            for i in range(1, L):
                out[C_names[i - 1]] = low[i] @ Mt @ _T(up[i + 1])
        else:
            for i in range(1, L + 1):
                left = C[i - 1] if i < L else np.broadcast_to(np.eye(nL), lead + (nL, nL))
                out[A_names[i - 1]] = left @ M @ _T(low[i - 1])
            for i in range(1, L):
                out[C_names[i - 1]] = low[i] @ Mt
        return sys.pack(out)

    invs = []
    if variant == "arbp":
        for i in range(1, L):
            def K(x, i=i):
                A, C = mats(x)
                d = C[i - 1] - _T(A[i])
                return d.reshape(d.shape[:-2] + (-1,))

            invs.append(Invariant(f"C{i}-A{i + 1}t", K, dims[i] * dims[i + 1], tracking=True))
    else:
        def K(x):
            A, C = mats(x)
            d = A[L - 1] - _T(C[L - 2])
            return d.reshape(d.shape[:-2] + (-1,))

        invs.append(Invariant(f"A{L}-C{L - 1}t", K, nL * dims[L - 1], tracking=True))

    def annotator(x0):
        if variant == "arbp" and all(np.all(np.abs(inv.fn(x0)) < 1e-12) for inv in invs):
            return ["K_i = 0: channel equals the forward transposes, gradient flow on E"]
        return []

    sys = OdeSystem(
        name=f"general-{'x'.join(map(str, dims))}-{variant}",
        kind="general",
        layout=layout,
        params=dict(dims=dims, variant=variant, sigma_ti=sti, sigma_ii=sii, gamma=gamma),
        rhs_fn=rhs,
        invariants=tuple(invs),
        residual_fn=lambda x: np.linalg.norm(sti - product(x) @ sii, axis=(-2, -1)),
        error_fn=lambda x: err(product(x)),
        error_min=emin,
        annotator=annotator,
        manifold="Sigma_TI - P Sigma_II = 0",
        theorem="theorem7-linear",
        meta={"product": product},
    )
    return sys


def gradient_of_error(dims, sigma_ti, sigma_ii, weights):
    """``-dE/dA_i`` for ``E = E||T - A_L...A_1 I||^2 / 2`` (independent of the channel code)."""
    L = len(weights)
    P = np.eye(dims[0])
    for W in weights:
        P = W @ P
    G = np.asarray(sigma_ti) - P @ np.asarray(sigma_ii)
    out = []
    for i in range(L):
        left = np.eye(dims[-1])
        for W in weights[i + 1 :][::-1]:
            left = left @ W
        right = np.eye(dims[0])
        for W in weights[:i]:
            right = W @ right
        out.append(left.T @ G @ right.T)
    return out


# -- power non-linearity --------------------------------------------------


def build_nonlinear_power(mu: float, alpha: float = 1.0, beta: float = 1.0,
                          gamma: float | None = None) -> OdeSystem:
    """``A[1,1,1]`` with hidden transfer ``x^mu``; alpha = E(T I^mu), beta = E(I^(2 mu)).

    ``da1 = mu a1^(mu-1) c1 xi``, ``da2 = a1^mu xi``, ``dc1 = a1^mu xi``
    with ``xi = alpha - beta a2 a1^mu``.
    """
    if not mu > 0:
        raise ConfigError("mu must be positive")
    _check_ab(alpha, beta)
    gamma = alpha**2 / beta if gamma is None else gamma
    err, emin = _scalar_error(alpha, beta, gamma)
    integer = float(mu).is_integer()

    def power(a1, p):
        if not integer and np.any(a1 < 0):
            raise DomainError(f"a1 < 0 with non-integer mu = {mu:g}")
        if p < 0 and np.any(a1 == 0):
            raise DomainError("a1 = 0 where a1^(mu-1) is singular")
        return a1**p

    def product(x):
        return x[..., 1] * power(x[..., 0], mu)

    def rhs(x):
        a1, a2, c1 = x[..., 0], x[..., 1], x[..., 2]
        am = power(a1, mu)
        xi = alpha - beta * a2 * am
        return np.stack([mu * power(a1, mu - 1) * c1 * xi, am * xi, am * xi], axis=-1)

    def reducer(x):
        a1, a2, c1 = (float(v) for v in x)
        K = c1 - a2
        J = mu * c1**2 - a1**2
        s = _sign(a1)

        def Q(v):
            c = v + K
            arg = mu * c**2 - J
            if arg < 0:
                return float("nan")
            aa = s * np.sqrt(arg)
            if not integer and aa < 0:
                return float("nan")
            am = aa**mu
            return float(am * (alpha - beta * v * am))

        return Reduction("a2", a2, Q)

    def annotator(x0):
        return ["K1 = 0: gradient flow on E"] if abs(x0[2] - x0[1]) < 1e-12 else []

    return OdeSystem(
        name=f"power-mu{mu:g}",
        kind="power",
        layout=(Component("a1", ()), Component("a2", ()), Component("c1", ())),
        params=dict(mu=mu, alpha=alpha, beta=beta, gamma=gamma),
        rhs_fn=rhs,
        invariants=(
            Invariant("K1", lambda x: x[..., 2] - x[..., 1], tracking=True),
            Invariant("mu*c1^2-a1^2", lambda x: mu * x[..., 2] ** 2 - x[..., 0] ** 2),
        ),
        residual_fn=lambda x: np.abs(alpha - beta * product(x)),
        error_fn=lambda x: err(product(x)),
        error_min=emin,
        reducer=reducer,
        annotator=annotator,
        theorem="theorem7-power",
        meta={"product": product},
    )


def random_state(sys: OdeSystem, rng: np.random.Generator, scale: float = 0.5, n: int | None = None) -> np.ndarray:
    """Uniform draws on ``[-scale, scale]`` for every state entry."""
    shape = (sys.size,) if n is None else (n, sys.size)
    return rng.uniform(-scale, scale, size=shape)
