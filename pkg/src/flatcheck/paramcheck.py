"""Numeric end-to-end flatness validation.

Integrates a triangular chained-compatible system with fixed-step RK4,
co-integrating the exact flat-output derivative recursions (never finite
differencing), then reconstructs every state and control from the
flat-output trajectory alone through the implicit-function chain: one damped
Newton solve per chain level and a final linear solve for the top controls.
A level whose Jacobian goes numerically singular raises a SingularJacobian
event, which must land within one grid step of the symbolic singular-control
crossing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .expr import (
    Expr,
    ZERO,
    add,
    compile_float_fn,
    differentiate,
    free_symbols,
    mul,
    num,
    substitute,
    sym,
    to_str,
)
from .catalog import state_names, _level_symbol
from .geometry import DEFAULT_CTX, ZeroCtx
from .systems import ControlAffineSystem

__all__ = [
    "NumericSystem",
    "Trajectory",
    "SingularJacobian",
    "IntegrationBlowup",
    "ReconstructionResult",
    "integrate",
    "reconstruct",
    "relative_error",
    "NEWTON_TOL",
    "NEWTON_MAX_ITER",
    "COND_LIMIT",
]

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50
COND_LIMIT = 1e8


class IntegrationBlowup(RuntimeError):
    def __init__(self, t: float):
        super().__init__(f"non-finite state at t = {t:.6f}")
        self.t = t


@dataclass(frozen=True)
class SingularJacobian:
    """Level-l implicit solve hit a numerically singular Jacobian at time t."""

    t: float
    level: int
    detail: str = ""


class NumericSystem:
    """Triangular chained-compatible right-hand side in the canonical state
    layout z0, z_i^j with controls v0..vm; drift entries f_i^l may depend on
    z0 and levels 1..l+1 only (validated structurally)."""

    def __init__(self, m: int, k: int, fs: Optional[dict] = None):
        self.m = m
        self.k = k
        self.fs = dict(fs or {})
        self.states = state_names(m, k)
        self.controls = [f"v{i}" for i in range(m + 1)]
        allowed_base = {"z0"}
        for (i, l), e in self.fs.items():
            if not (1 <= i <= m and 1 <= l <= k - 1):
                raise ValueError(f"drift entry out of range: chain {i}, level {l}")
            allowed = set(allowed_base)
            for j in range(1, l + 2):
                for ii in range(1, m + 1):
                    allowed.add(_level_symbol(m, ii, j))
            bad = free_symbols(e) - allowed
            if bad:
                raise ValueError(f"f_{i}^{l} depends on {sorted(bad)}: not triangular")
        self._derivs = _FlatDerivatives(self)

    @classmethod
    def from_control_affine(cls, sys: ControlAffineSystem,
                            zc: ZeroCtx = DEFAULT_CTX) -> "NumericSystem":
        """Extract the triangular data from a system already in chained
        coordinates; raises ValueError when the file does not declare the
        expected structure."""
        from .catalog import chained

        ref = chained(sys.m, sys.k)
        if tuple(sys.chart.states) != tuple(ref.chart.states):
            raise ValueError(
                f"state layout must be {ref.chart.states} for the numeric round trip")
        for gref, g in zip(ref.controls, sys.controls):
            for a, b in zip(gref.comps, g.comps):
                if zc.status(add(a, mul(num(-1), b))) != "zero":
                    raise ValueError("control fields are not in chained form")
        fs = {}
        for idx, s in enumerate(sys.chart.states):
            e = sys.drift.comps[idx]
            if s == "z0":
                if e != ZERO:
                    raise ValueError("drift must not enter the z0 equation")
                continue
            i, l = _parse_level(sys.m, s)
            if l == sys.k:
                if e != ZERO:
                    raise ValueError("drift must not enter the top chain level")
                continue
            if e != ZERO:
                fs[(i, l)] = e
        return cls(sys.m, sys.k, fs)

    def rhs_exprs(self) -> list[Expr]:
        out = []
        for s in self.states:
            if s == "z0":
                out.append(sym("v0"))
                continue
            i, l = _parse_level(self.m, s)
            if l == self.k:
                out.append(sym(f"v{i}"))
            else:
                e = self.fs.get((i, l), ZERO)
                out.append(add(e, mul(sym(_level_symbol(self.m, i, l + 1)), sym("v0"))))
        return out


def _parse_level(m: int, s: str) -> tuple[int, int]:
    if m == 1:
        return 1, int(s[1:])
    i, j = s[1:].split("_")
    return int(i), int(j)


class _FlatDerivatives:
    """Closed forms G_i^l for the l-th time derivative of flat output i as a
    function of the state, the v0-derivatives w_0..w_{l-1}, and (only at
    level k) the remaining controls."""

    def __init__(self, nsys: NumericSystem):
        m, k = nsys.m, nsys.k
        self.nsys = nsys
        self.wsyms = [f"w{j}" for j in range(k)]
        rhs = {}
        for s, e in zip(nsys.states, nsys.rhs_exprs()):
            rhs[s] = substitute(e, {"v0": sym("w0")})

        def total_derivative(e: Expr) -> Expr:
            terms = []
            for s in free_symbols(e):
                de = differentiate(e, s)
                if de == ZERO:
                    continue
                if s in rhs:
                    terms.append(mul(de, rhs[s]))
                elif s.startswith("w"):
                    terms.append(mul(de, sym(f"w{int(s[1:]) + 1}")))
                # v1..vm are constants of the closed form (appear only at level k)
            return add(*terms)

        self.G: dict = {}
        for i in range(0, m + 1):
            top = sym("z0") if i == 0 else sym(_level_symbol(m, i, 1))
            self.G[(i, 0)] = top
            for l in range(1, k + 1):
                self.G[(i, l)] = total_derivative(self.G[(i, l - 1)])

        self.var_order = list(nsys.states) + self.wsyms + [f"v{i}" for i in range(1, m + 1)]
        self.compiled = {key: compile_float_fn(e, self.var_order) for key, e in self.G.items()}
        # Jacobians of level-l forms in the level-(l+1) states, for Newton.
        self.jac = {}
        for l in range(1, k):
            unknowns = [_level_symbol(m, i, l + 1) for i in range(1, m + 1)]
            self.jac[l] = [
                [compile_float_fn(differentiate(self.G[(i, l)], u), self.var_order)
                 for u in unknowns]
                for i in range(1, m + 1)
            ]
        # Level k is affine in v1..vm: split G_i^k = A_i + sum_j B_ij v_j.
        vsubs0 = {f"v{i}": 0 for i in range(1, m + 1)}
        self.top_const = [
            compile_float_fn(substitute(self.G[(i, k)], vsubs0), self.var_order)
            for i in range(1, m + 1)
        ]
        self.top_lin = [
            [compile_float_fn(differentiate(self.G[(i, k)], f"v{j}"), self.var_order)
             for j in range(1, m + 1)]
            for i in range(1, m + 1)
        ]


@dataclass
class Trajectory:
    """Uniform grid samples of states, controls, and flat outputs with their
    time derivatives up to order k (phi[s, i, j] = phi_i^{(j)}(t_s))."""

    m: int
    k: int
    t: np.ndarray
    z: np.ndarray
    v: np.ndarray
    phi: np.ndarray
    state_names: list[str]
    control_names: list[str]

    def export_csv(self, path: str):
        cols = ["t"] + self.state_names + self.control_names
        for i in range(self.m + 1):
            cols.append(f"phi{i}")
            cols += [f"phi{i}_d{j}" for j in range(1, self.k + 1)]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(", ".join(cols) + "\n")
            for s in range(len(self.t)):
                row = [self.t[s]] + list(self.z[s]) + list(self.v[s])
                for i in range(self.m + 1):
                    row += list(self.phi[s, i, :])
                fh.write(", ".join(f"{x:.17g}" for x in row) + "\n")


def _control_evaluators(nsys: NumericSystem, controls: Sequence[Expr]):
    """Compiled v_i(t) plus the first k-1 exact derivatives of v0."""
    if len(controls) != nsys.m + 1:
        raise ValueError(f"expected {nsys.m + 1} control signals")
    for e in controls:
        extra = free_symbols(e) - {"t"}
        if extra:
            raise ValueError(f"control signal depends on {sorted(extra)}; only t allowed")
    vfns = [compile_float_fn(e, ["t"]) for e in controls]
    w_expr = [controls[0]]
    for _ in range(nsys.k - 1):
        w_expr.append(differentiate(w_expr[-1], "t"))
    wfns = [compile_float_fn(e, ["t"]) for e in w_expr]
    return vfns, wfns


def integrate(nsys: NumericSystem, controls: Sequence[Expr], z0: Sequence[float],
              T: float, h: float) -> Trajectory:
    """Classical fixed-step RK4 on the state extended with the flat-output
    derivative stack (phi_i^(j), j < k, with the exact closed form driving
    the top slot); control signals are expressions in t."""
    if h <= 0:
        raise ValueError("step size must be positive")
    m, k = nsys.m, nsys.k
    n = len(nsys.states)
    vfns, wfns = _control_evaluators(nsys, controls)
    der = nsys._derivs
    rhs_fns = [compile_float_fn(e, nsys.states + nsys.controls) for e in nsys.rhs_exprs()]

    nblocks = m + 1
    width = n + nblocks * k

    def pack_eval_vars(z, t):
        targ = [t]
        w = [f(targ) for f in wfns]
        vs = [f(targ) for f in vfns]
        return list(z) + w + vs[1:], vs

    def deriv(t, y):
        z = y[:n]
        ev, vs = pack_eval_vars(z, t)
        dy = np.empty(width)
        zin = list(z) + vs
        for i in range(n):
            dy[i] = rhs_fns[i](zin)
        for b in range(nblocks):
            base = n + b * k
            for j in range(k - 1):
                dy[base + j] = y[base + j + 1]
            dy[base + k - 1] = der.compiled[(b, k)](ev)
        return dy

    steps = int(round(T / h))
    tgrid = np.linspace(0.0, steps * h, steps + 1)
    y = np.empty(width)
    y[:n] = [float(x) for x in z0]
    ev0, _ = pack_eval_vars(y[:n], 0.0)
    for b in range(nblocks):
        base = n + b * k
        for j in range(k):
            y[base + j] = der.compiled[(b, j)](ev0)

    zs = np.empty((steps + 1, n))
    vs_arr = np.empty((steps + 1, m + 1))
    phi = np.empty((steps + 1, nblocks, k + 1))

    def record(s, t, y):
        zs[s] = y[:n]
        ev, vs = pack_eval_vars(y[:n], t)
        vs_arr[s] = vs
        for b in range(nblocks):
            base = n + b * k
            phi[s, b, :k] = y[base : base + k]
            phi[s, b, k] = der.compiled[(b, k)](ev)

    record(0, 0.0, y)
    for s in range(steps):
        t = tgrid[s]
        k1 = deriv(t, y)
        k2 = deriv(t + h / 2, y + (h / 2) * k1)
        k3 = deriv(t + h / 2, y + (h / 2) * k2)
        k4 = deriv(t + h, y + h * k3)
        y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise IntegrationBlowup(tgrid[s + 1])
        record(s + 1, tgrid[s + 1], y)
    return Trajectory(m, k, tgrid, zs, vs_arr, phi,
                      list(nsys.states), list(nsys.controls))


@dataclass
class ReconstructionResult:
    z: np.ndarray
    v: np.ndarray
    events: list
    completed: bool
    samples_done: int


def reconstruct(nsys: NumericSystem, t: np.ndarray, phi: np.ndarray) -> ReconstructionResult:
    """Recover states and controls from the flat-output trajectory alone.

    Per sample: z0 and the level-1 states are read off, the v0 derivative
    stack comes from the phi0 block, then each level l = 1..k-1 solves the m
    implicit equations G_i^l = phi_i^(l) for the level-(l+1) states by damped
    Newton (tolerance 1e-12, 50 iterations, seeded from the previous sample,
    zero-seed fallback), and the top controls come from one linear solve.
    A singular level Jacobian (condition number above 1e8, vanishing or
    sign-crossing determinant between consecutive samples) stops the sweep
    with a SingularJacobian event."""
    m, k = nsys.m, nsys.k
    der = nsys._derivs
    n = len(nsys.states)
    ns = len(t)
    z_est = np.zeros((ns, n))
    v_est = np.zeros((ns, m + 1))
    events: list[SingularJacobian] = []
    sidx = {s: i for i, s in enumerate(nsys.states)}
    prev_det = {l: None for l in range(1, k + 1)}

    def ev_vector(zvec, w):
        return list(zvec) + list(w) + [0.0] * m

    for s in range(ns):
        zvec = np.zeros(n)
        zvec[sidx["z0"]] = phi[s, 0, 0]
        for i in range(1, m + 1):
            zvec[sidx[_level_symbol(m, i, 1)]] = phi[s, i, 0]
        w = phi[s, 0, 1 : k + 1]

        ok = True
        for l in range(1, k):
            unknown_ix = [sidx[_level_symbol(m, i, l + 1)] for i in range(1, m + 1)]
            if s > 0:
                x = z_est[s - 1, unknown_ix].copy()
            else:
                x = np.zeros(m)
            target = phi[s, 1 : m + 1, l]
            converged = False
            for attempt in range(2):
                xw = x.copy()
                for _ in range(NEWTON_MAX_ITER):
                    for i, ix in enumerate(unknown_ix):
                        zvec[ix] = xw[i]
                    ev = ev_vector(zvec, w)
                    res = np.array([der.compiled[(i, l)](ev) for i in range(1, m + 1)]) - target
                    if not np.all(np.isfinite(res)):
                        break
                    jac = np.array([[der.jac[l][i][j](ev) for j in range(m)] for i in range(m)])
                    detj = float(np.linalg.det(jac))
                    scale = max(1.0, float(np.max(np.abs(jac))) ** m)
                    if (not math.isfinite(detj) or abs(detj) < 1e-10 * scale
                            or (m > 1 and np.linalg.cond(jac) > COND_LIMIT)):
                        events.append(SingularJacobian(float(t[s]), l, "singular level Jacobian"))
                        return ReconstructionResult(z_est, v_est, events, False, s)
                    if np.max(np.abs(res)) < NEWTON_TOL:
                        converged = True
                        break
                    step = np.linalg.solve(jac, res)
                    alpha = 1.0
                    base_norm = np.max(np.abs(res))
                    for _ in range(8):
                        cand = xw - alpha * step
                        for i, ix in enumerate(unknown_ix):
                            zvec[ix] = cand[i]
                        ev2 = ev_vector(zvec, w)
                        r2 = np.array([der.compiled[(i, l)](ev2) for i in range(1, m + 1)]) - target
                        if np.all(np.isfinite(r2)) and np.max(np.abs(r2)) < base_norm:
                            xw = cand
                            break
                        alpha /= 2
                    else:
                        break
                if converged:
                    x = xw
                    break
                x = np.zeros(m)  # zero-seed fallback, one retry
            if not converged:
                events.append(SingularJacobian(float(t[s]), l, "Newton did not converge"))
                return ReconstructionResult(z_est, v_est, events, False, s)
            for i, ix in enumerate(unknown_ix):
                zvec[ix] = x[i]
            ev = ev_vector(zvec, w)
            jac = np.array([[der.jac[l][i][j](ev) for j in range(m)] for i in range(m)])
            detj = float(np.linalg.det(jac))
            if prev_det[l] is not None and detj * prev_det[l] < 0:
                events.append(SingularJacobian(float(t[s]), l, "determinant sign change"))
                return ReconstructionResult(z_est, v_est, events, False, s)
            prev_det[l] = detj

        ev = ev_vector(zvec, w)
        a = np.array([[der.top_lin[i][j](ev) for j in range(m)] for i in range(m)])
        b = np.array([der.top_const[i](ev) for i in range(m)])
        deta = float(np.linalg.det(a))
        scale = max(1.0, float(np.max(np.abs(a))) ** m)
        if not math.isfinite(deta) or abs(deta) < 1e-10 * scale:
            events.append(SingularJacobian(float(t[s]), k, "singular top-level system"))
            return ReconstructionResult(z_est, v_est, events, False, s)
        if prev_det[k] is not None and deta * prev_det[k] < 0:
            events.append(SingularJacobian(float(t[s]), k, "determinant sign change"))
            return ReconstructionResult(z_est, v_est, events, False, s)
        prev_det[k] = deta
        vtop = np.linalg.solve(a, phi[s, 1 : m + 1, k] - b)
        z_est[s] = zvec
        v_est[s, 0] = w[0]
        v_est[s, 1:] = vtop
    return ReconstructionResult(z_est, v_est, events, True, ns)


def relative_error(est: np.ndarray, ref: np.ndarray) -> float:
    """Sup over the grid of |est - ref| / (1 + |ref|)."""
    return float(np.max(np.abs(est - ref) / (1.0 + np.abs(ref))))
