"""Programmatic builders for the fixture corpus.

Chained and triangular-drift systems for any (m, k), the rolling-coin model,
the two worked single-input systems used across the test suite, and seeded
scrambling by polynomial diffeomorphisms plus invertible static feedback.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

from .expr import Expr, ZERO, ONE, add, evaluate_exact, mul, num, pw, substitute, sym
from .geometry import Chart, VectorField
from .systems import ControlAffineSystem, FlatOutputCandidate

__all__ = [
    "state_names",
    "chained",
    "triangular",
    "random_triangular_drift",
    "coin",
    "example_41",
    "counterexample_51",
    "top_variable_candidate",
    "Scramble",
    "scramble",
]


def state_names(m: int, k: int) -> list[str]:
    if m == 1:
        return [f"z{j}" for j in range(k + 1)]
    return ["z0"] + [f"z{i}_{j}" for j in range(1, k + 1) for i in range(1, m + 1)]


def _level_symbol(m: int, i: int, j: int) -> str:
    return f"z{j}" if m == 1 else f"z{i}_{j}"


def _chained_g0(chart: Chart, m: int, k: int) -> VectorField:
    states = chart.states
    comps = [ZERO] * len(states)
    comps[0] = ONE
    for i in range(1, m + 1):
        for j in range(1, k):
            comps[states.index(_level_symbol(m, i, j))] = sym(_level_symbol(m, i, j + 1))
    return VectorField(chart, tuple(comps))


def _top_fields(chart: Chart, m: int, k: int) -> list[VectorField]:
    states = chart.states
    out = []
    for i in range(1, m + 1):
        comps = [ZERO] * len(states)
        comps[states.index(_level_symbol(m, i, k))] = ONE
        out.append(VectorField(chart, tuple(comps)))
    return out


def chained(m: int, k: int, name: Optional[str] = None) -> ControlAffineSystem:
    """Driftless m-chained system on km+1 states, controls v0..vm."""
    states = tuple(state_names(m, k))
    chart = Chart(states=states)
    g0 = _chained_g0(chart, m, k)
    controls = (g0, *_top_fields(chart, m, k))
    return ControlAffineSystem(
        chart=chart,
        drift=VectorField(chart, tuple(ZERO for _ in states)),
        controls=controls,
        m=m,
        k=k,
        control_syms=tuple(f"v{i}" for i in range(m + 1)),
        xstar={s: Fraction(0) for s in states},
        name=name or f"ch{m}{k}",
    )


def triangular(
    m: int,
    k: int,
    fs: dict,
    name: Optional[str] = None,
    params: tuple[str, ...] = (),
) -> ControlAffineSystem:
    """Chained controls plus a triangular drift: fs maps (i, l) for chain
    1<=i<=m and level 1<=l<=k-1 to the drift entry f_i^l, which may depend on
    z0 and levels 1..l+1 only (validated structurally)."""
    base = chained(m, k, name=name or f"tch{m}{k}")
    chart = Chart(states=base.chart.states, params=params)
    allowed_by_level = {}
    for l in range(1, k):
        allowed = {"z0"} | set(params)
        for j in range(1, l + 2):
            for i in range(1, m + 1):
                allowed.add(_level_symbol(m, i, j))
        allowed_by_level[l] = allowed
    comps = [ZERO] * chart.dim
    from .expr import free_symbols

    for (i, l), e in fs.items():
        if not (1 <= i <= m and 1 <= l <= k - 1):
            raise ValueError(f"drift entry index out of range: chain {i}, level {l}")
        bad = free_symbols(e) - allowed_by_level[l]
        if bad:
            raise ValueError(f"f_{i}^{l} violates triangular dependence on {sorted(bad)}")
        comps[chart.states.index(_level_symbol(m, i, l))] = e
    g0 = _chained_g0(chart, m, k)
    controls = (g0, *_top_fields(chart, m, k))
    return ControlAffineSystem(
        chart=chart,
        drift=VectorField(chart, tuple(comps)),
        controls=controls,
        m=m,
        k=k,
        control_syms=base.control_syms,
        xstar={s: Fraction(0) for s in chart.states},
        name=name or f"tch{m}{k}",
    )


def random_triangular_drift(m: int, k: int, seed: int, terms: int = 2) -> dict:
    """Seeded random polynomial drift entries respecting the triangular
    dependence pattern."""
    rng = random.Random(f"{seed}:{m}:{k}")
    fs = {}
    for i in range(1, m + 1):
        for l in range(1, k):
            allowed = ["z0"] + [_level_symbol(m, ii, j) for j in range(1, l + 2) for ii in range(1, m + 1)]
            parts = []
            for _ in range(terms):
                v1 = sym(rng.choice(allowed))
                if rng.random() < 0.5:
                    v2 = sym(rng.choice(allowed))
                    parts.append(mul(num(rng.choice((-2, -1, 1, 2))), v1, v2))
                else:
                    parts.append(mul(num(rng.choice((-2, -1, 1, 2))), v1))
            fs[(i, l)] = add(*parts)
    return fs


def coin(alpha: Expr, beta: Expr, params: tuple[str, ...] = ("R",)) -> ControlAffineSystem:
    """Vertical coin of radius R rolling without slipping on a table whose
    motion field is (alpha(x, y), beta(x, y)); states (x, y, theta, phi)."""
    chart = Chart(states=("x", "y", "theta", "phi"), params=tuple(params))
    R, th = sym("R"), sym("theta")
    from .expr import fn

    co, si = fn("cos", th), fn("sin", th)
    speed = add(mul(alpha, co), mul(beta, si))
    drift = VectorField(chart, (mul(co, speed), mul(si, speed), ZERO, ZERO))
    g0 = VectorField(chart, (ZERO, ZERO, ONE, ZERO))
    g1 = VectorField(chart, (mul(R, co), mul(R, si), ZERO, ONE))
    return ControlAffineSystem(
        chart=chart,
        drift=drift,
        controls=(g0, g1),
        m=1,
        k=3,
        control_syms=("u0", "u1"),
        xstar={"x": Fraction(0), "y": Fraction(0), "theta": Fraction(0), "phi": Fraction(0)},
        name="coin",
    )


def example_41(k: int = 4) -> ControlAffineSystem:
    """Triangular form with f_1 = z0 (and all other drift entries zero)."""
    return triangular(1, k, {(1, 1): sym("z0")}, name=f"tch1{k}_f1z0")


def counterexample_51(a: Optional[Expr] = None) -> ControlAffineSystem:
    """Chained controls for k=4 with drift (0, z3, -z4, a(z0..z3), 0): the
    control-linear part is chained but the drift is not triangular."""
    sys0 = chained(1, 4, name="counterexample51")
    chart = sys0.chart
    if a is None:
        a = sym("z1")
    comps = [ZERO, sym("z3"), mul(num(-1), sym("z4")), a, ZERO]
    return ControlAffineSystem(
        chart=chart,
        drift=VectorField(chart, tuple(comps)),
        controls=sys0.controls,
        m=1,
        k=4,
        control_syms=sys0.control_syms,
        xstar=dict(sys0.xstar),
        name="counterexample51",
    )


def top_variable_candidate(sys: ControlAffineSystem, ustar: Optional[dict] = None) -> FlatOutputCandidate:
    """(z0, z1) for m=1, (z0, z1^1..zm^1) for m>=2: the top variables."""
    names = ["z0"] + [_level_symbol(sys.m, i, 1) for i in range(1, sys.m + 1)]
    return FlatOutputCandidate(tuple(sym(s) for s in names), dict(ustar or {}))


@dataclass
class Scramble:
    """Seeded diffeomorphism + invertible static feedback applied to a system.

    forward[i] gives new coordinate i as an expression in the old chart;
    inverse[i] gives old coordinate i in the new chart (same symbol names).
    Feedback: u = alpha(x) + beta(x) @ u_new.
    """

    system: ControlAffineSystem
    forward: list[Expr]
    inverse: list[Expr]
    alpha: list[Expr]
    beta: list[list[Expr]]

    def pull_function(self, h: Expr) -> Expr:
        """Transport a state function to the new coordinates."""
        return substitute(h, dict(zip(self.system.chart.states, self.inverse)))


def _compose_maps(states, f1, i1, f2, i2):
    """(phi2 . phi1): forward = phi2(phi1), inverse = phi1^-1(phi2^-1)."""
    fwd = [substitute(e, dict(zip(states, f1))) for e in f2]
    inv = [substitute(e, dict(zip(states, i2))) for e in i1]
    return fwd, inv


def scramble(sys: ControlAffineSystem, seed: int, shears: int = 2) -> Scramble:
    """Apply a seeded polynomial diffeomorphism fixing x* and an invertible
    feedback; shear maps are unipotent triangular, so the inverse is again
    polynomial and exact."""
    rng = random.Random(f"{seed}:{sys.name}")
    states = sys.chart.states
    n = sys.chart.dim
    xs = [sym(s) for s in states]
    fwd = list(xs)
    inv = list(xs)

    # unipotent linear mix: x_i += c * x_j for j < i
    for _ in range(n):
        i = rng.randrange(1, n)
        j = rng.randrange(0, i)
        c = num(rng.choice((-2, -1, 1, 2)))
        f2 = list(xs)
        f2[i] = add(xs[i], mul(c, xs[j]))
        i2 = list(xs)
        i2[i] = add(xs[i], mul(num(-1), mul(c, xs[j])))
        fwd, inv = _compose_maps(states, fwd, inv, f2, i2)

    # polynomial shears: x_i += c * (x_j - x_j*) * (x_l - x_l*) with j, l < i
    for _ in range(shears):
        i = rng.randrange(2, n)
        j = rng.randrange(0, i)
        l = rng.randrange(0, i)
        c = num(rng.choice((-1, 1)))
        dj = add(xs[j], num(-sys.xstar[states[j]]))
        dl = add(xs[l], num(-sys.xstar[states[l]]))
        p = mul(c, dj, dl)
        f2 = list(xs)
        f2[i] = add(xs[i], p)
        i2 = list(xs)
        i2[i] = add(xs[i], mul(num(-1), p))
        fwd, inv = _compose_maps(states, fwd, inv, f2, i2)

    # invertible feedback u = alpha + beta u~
    mm = sys.m + 1
    alpha = []
    for _ in range(mm):
        jj = rng.randrange(0, n)
        alpha.append(mul(num(rng.choice((-1, 1))), xs[jj]))
    beta = [[ZERO] * mm for _ in range(mm)]
    for i in range(mm):
        beta[i][i] = num(rng.choice((1, 2, Fraction(1, 2), -1)))
    for i in range(mm):
        for j in range(i + 1, mm):
            if rng.random() < 0.7:
                beta[i][j] = mul(num(rng.choice((-1, 1))), xs[rng.randrange(0, n)])

    # transform fields: push forward through the diffeomorphism
    jac = [[None] * n for _ in range(n)]
    from .expr import differentiate

    for i in range(n):
        for j in range(n):
            jac[i][j] = differentiate(fwd[i], states[j])
    inv_binding = dict(zip(states, inv))

    def push(v: VectorField) -> VectorField:
        comps = []
        for i in range(n):
            t = add(*[mul(jac[i][j], v.comps[j]) for j in range(n) if v.comps[j] != ZERO])
            comps.append(substitute(t, inv_binding))
        return VectorField(new_chart, tuple(comps))

    new_chart = Chart(states=states, params=sys.chart.params, name=sys.chart.name + "_scrambled")
    new_drift_old_chart = sys.drift
    for a, g in zip(alpha, sys.controls):
        new_drift_old_chart = new_drift_old_chart + g.scaled(a)
    new_controls = []
    for j in range(mm):
        gj = VectorField(sys.chart, tuple(ZERO for _ in range(n)))
        for i in range(mm):
            if beta[i][j] != ZERO:
                gj = gj + sys.controls[i].scaled(beta[i][j])
        new_controls.append(push(VectorField(sys.chart, gj.comps)))
    new_drift = push(new_drift_old_chart)

    new_xstar = {
        s: evaluate_exact(e, sys.xstar) for s, e in zip(states, fwd)
    }
    out = ControlAffineSystem(
        chart=new_chart,
        drift=new_drift,
        controls=tuple(new_controls),
        m=sys.m,
        k=sys.k,
        control_syms=sys.control_syms,
        xstar=new_xstar,
        name=sys.name + f"_scrambled{seed}",
    )
    return Scramble(out, fwd, inv, alpha, beta)
