"""Vector fields, differential forms, and distribution calculus.

Brackets, derived/Lie flags, annihilators, characteristic distributions,
Engel-rank tests, and the corank-one involutive subdistribution construction.

All symbolic linear algebra runs through fraction-free Bareiss elimination
over polynomials in the expression atoms, with every pivot certified nonzero
by the zero-testing kernel and a deterministic pivot order (leftmost row with
a certified-nonzero entry).  An Unknown pivot verdict aborts the computation
with `InconclusiveError` carrying the offending pivot; callers surface it as
an inconclusive result rather than guessing.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd as math_gcd
from typing import Iterable, Optional, Sequence

import numpy as np

from .expr import (
    AtomTable,
    EvalDomainError,
    Expr,
    ExprError,
    _poly_add,
    _poly_mul,
    _poly_scale,
    _pythagorean_pairs,
    _reduce_pythagorean,
    add,
    differentiate,
    div,
    evaluate_float,
    free_symbols,
    is_zero_cached,
    mul,
    num,
    poly_to_expr,
    substitute,
    sym,
    to_fraction_of_polys,
    to_str,
    ZERO,
    ONE,
)

__all__ = [
    "Chart",
    "VectorField",
    "OneForm",
    "TwoForm",
    "Distribution",
    "Flag",
    "ZeroCtx",
    "InconclusiveError",
    "ChartMismatchError",
    "lie_bracket",
    "lie_derivative",
    "exterior_derivative",
    "interior_product",
    "wedge",
    "pairing",
    "differential",
    "coordinate_field",
    "generic_rank",
    "rank_at",
    "matrix_rank_at",
    "symbolic_matrix_rank",
    "nullspace",
    "annihilator",
    "kernel_of_forms",
    "is_involutive",
    "derived_flag",
    "lie_flag",
    "characteristic_distribution",
    "w_of_form",
    "engel_rank_is_one",
    "bryant_corank_one",
    "BryantResult",
    "contains",
    "span_equal",
    "intersect",
]


class InconclusiveError(Exception):
    """A rank/membership decision hit an Unknown pivot."""

    def __init__(self, context: str, pivot: Optional[Expr] = None):
        self.context = context
        self.pivot = pivot
        msg = context if pivot is None else f"{context}; undecided pivot: {to_str(pivot)}"
        super().__init__(msg)


class ChartMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ZeroCtx:
    """Seed and sample budget threaded through every decision."""

    seed: int = 0
    budget: int = 8

    def is_zero(self, e: Expr):
        return is_zero_cached(e, self.budget, self.seed)

    def status(self, e: Expr) -> str:
        return self.is_zero(e).status


DEFAULT_CTX = ZeroCtx()


@dataclass(frozen=True)
class Chart:
    """Named coordinate chart: ordered state symbols plus free parameters."""

    states: tuple[str, ...]
    params: tuple[str, ...] = ()
    name: str = "x"

    @property
    def dim(self) -> int:
        return len(self.states)

    def symbols(self) -> tuple[str, ...]:
        return self.states + self.params

    def state_exprs(self) -> tuple[Expr, ...]:
        return tuple(sym(s) for s in self.states)


def _same_chart(a, b):
    if a.chart != b.chart:
        raise ChartMismatchError(f"charts differ: {a.chart.name} vs {b.chart.name}")


@dataclass(frozen=True)
class VectorField:
    chart: Chart
    comps: tuple[Expr, ...]

    def __post_init__(self):
        if len(self.comps) != self.chart.dim:
            raise ValueError("component count must equal chart dimension")

    def __add__(self, other: "VectorField") -> "VectorField":
        _same_chart(self, other)
        return VectorField(self.chart, tuple(a + b for a, b in zip(self.comps, other.comps)))

    def __sub__(self, other: "VectorField") -> "VectorField":
        _same_chart(self, other)
        return VectorField(self.chart, tuple(a - b for a, b in zip(self.comps, other.comps)))

    def scaled(self, a: Expr) -> "VectorField":
        return VectorField(self.chart, tuple(mul(a, c) for c in self.comps))

    def is_structurally_zero(self) -> bool:
        return all(c == ZERO for c in self.comps)

    def __str__(self):
        return "(" + ", ".join(to_str(c) for c in self.comps) + ")"


@dataclass(frozen=True)
class OneForm:
    chart: Chart
    coeffs: tuple[Expr, ...]

    def __post_init__(self):
        if len(self.coeffs) != self.chart.dim:
            raise ValueError("coefficient count must equal chart dimension")

    def __str__(self):
        parts = [f"({to_str(c)})*d{s}" for c, s in zip(self.coeffs, self.chart.states) if c != ZERO]
        return " + ".join(parts) if parts else "0"


@dataclass(frozen=True)
class TwoForm:
    """Antisymmetric coefficient matrix for dx_i ^ dx_j (built antisymmetric)."""

    chart: Chart
    coeffs: tuple[tuple[Expr, ...], ...]

    def apply(self, v: VectorField, w: VectorField) -> Expr:
        _same_chart(self, v)
        _same_chart(self, w)
        terms = []
        for i, row in enumerate(self.coeffs):
            for j, c in enumerate(row):
                if c != ZERO:
                    terms.append(mul(c, v.comps[i], w.comps[j]))
        return add(*terms)


def coordinate_field(chart: Chart, i: int) -> VectorField:
    comps = [ZERO] * chart.dim
    comps[i] = ONE
    return VectorField(chart, tuple(comps))


def lie_bracket(v: VectorField, w: VectorField) -> VectorField:
    _same_chart(v, w)
    states = v.chart.states
    comps = []
    for i in range(v.chart.dim):
        terms = []
        for j, s in enumerate(states):
            dw = differentiate(w.comps[i], s)
            if dw != ZERO and v.comps[j] != ZERO:
                terms.append(mul(v.comps[j], dw))
            dv = differentiate(v.comps[i], s)
            if dv != ZERO and w.comps[j] != ZERO:
                terms.append(mul(num(-1), w.comps[j], dv))
        comps.append(add(*terms))
    return VectorField(v.chart, tuple(comps))


def lie_derivative(h: Expr, v: VectorField) -> Expr:
    terms = []
    for comp, s in zip(v.comps, v.chart.states):
        dh = differentiate(h, s)
        if dh != ZERO and comp != ZERO:
            terms.append(mul(comp, dh))
    return add(*terms)


def differential(h: Expr, chart: Chart) -> OneForm:
    return OneForm(chart, tuple(differentiate(h, s) for s in chart.states))


def exterior_derivative(w: OneForm) -> TwoForm:
    n = w.chart.dim
    states = w.chart.states
    rows = [[ZERO] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            c = differentiate(w.coeffs[j], states[i]) - differentiate(w.coeffs[i], states[j])
            rows[i][j] = c
            rows[j][i] = -c
    return TwoForm(w.chart, tuple(tuple(r) for r in rows))


def interior_product(v: VectorField, om: TwoForm) -> OneForm:
    _same_chart(v, om)
    n = v.chart.dim
    coeffs = []
    for j in range(n):
        terms = [mul(v.comps[i], om.coeffs[i][j]) for i in range(n) if om.coeffs[i][j] != ZERO]
        coeffs.append(add(*terms))
    return OneForm(v.chart, tuple(coeffs))


def wedge(w1: OneForm, w2: OneForm) -> TwoForm:
    _same_chart(w1, w2)
    n = w1.chart.dim
    rows = [[ZERO] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            c = mul(w1.coeffs[i], w2.coeffs[j]) - mul(w1.coeffs[j], w2.coeffs[i])
            rows[i][j] = c
            rows[j][i] = -c
    return TwoForm(w1.chart, tuple(tuple(r) for r in rows))


def pairing(w: OneForm, v: VectorField) -> Expr:
    _same_chart(w, v)
    return add(*[mul(a, b) for a, b in zip(w.coeffs, v.comps) if a != ZERO and b != ZERO])


# ---------------------------------------------------------------------------
# Fraction-free Bareiss elimination with certified pivots
# ---------------------------------------------------------------------------

_PZ_MEMO: dict = {}


def _poly_status(p: dict, at: AtomTable, zc: ZeroCtx) -> str:
    """Zero-status of a polynomial in the atoms, as a function of the
    underlying symbols ('zero' / 'nonzero' / 'unknown')."""
    if not p:
        return "zero"
    key = (frozenset(p.items()), tuple(at.atoms), zc)
    got = _PZ_MEMO.get(key)
    if got is not None:
        return got
    q = _reduce_pythagorean(dict(p), _pythagorean_pairs(at))
    if not q:
        status = "zero"
    elif not any(a.kind == 2 for a in at.atoms):  # no transcendental atoms
        status = "nonzero"
    else:
        names = sorted({s for a in at.atoms for s in free_symbols(a)})
        rng = random.Random((zc.seed, zc.budget, 0xBA5E))
        samples = []
        attempts = 0
        status = None
        while len(samples) < zc.budget and attempts < 10 * zc.budget:
            attempts += 1
            pt = {s: float(Fraction(rng.randint(-8, 8) or 3, rng.randint(1, 6))) for s in names}
            try:
                vals = [evaluate_float(a, pt) for a in at.atoms]
                v = 0.0
                for m, c in q.items():
                    t = float(c)
                    for i, e in enumerate(m):
                        if e:
                            t *= vals[i] ** e
                    v += t
            except (EvalDomainError, OverflowError):
                continue
            if not np.isfinite(v):
                continue
            samples.append(v)
            if abs(v) > 1e-9:
                status = "nonzero"
                break
        if status is None:
            if len(samples) < zc.budget:
                status = "unknown"
            elif all(abs(v) < 1e-12 for v in samples):
                status = "zero"
            else:
                status = "unknown"
    if len(_PZ_MEMO) > 100_000:
        _PZ_MEMO.clear()
    _PZ_MEMO[key] = status
    return status


def _poly_divexact(f: dict, g: dict) -> dict:
    """Exact multivariate division f / g (lex order); Bareiss guarantees
    exactness, so a nonzero remainder indicates a logic error."""
    if not f:
        return {}
    glm = max(g)
    gc = g[glm]
    f = dict(f)
    q: dict = {}
    while f:
        flm = max(f)
        m = tuple(a - b for a, b in zip(flm, glm))
        if any(x < 0 for x in m):
            raise ArithmeticError("inexact polynomial division in Bareiss step")
        c = f[flm] / gc
        q[m] = c
        for gm, gcf in g.items():
            mm = tuple(a + b for a, b in zip(m, gm))
            nv = f.get(mm, 0) - c * gcf
            if nv:
                f[mm] = nv
            else:
                f.pop(mm, None)
    return q


class _SymMatrix:
    """Polynomial matrix (denominators cleared row-wise) plus atom table."""

    def __init__(self, rows: Sequence[Sequence[Expr]], zc: ZeroCtx):
        self.zc = zc
        exprs = [e for row in rows for e in row]
        self.at = AtomTable(exprs)
        self.nrows = len(rows)
        self.ncols = len(rows[0]) if rows else 0
        self.rows: list[list[dict]] = []
        one = self.at.const(1)
        for row in rows:
            pairs = [to_fraction_of_polys(e, self.at) for e in row]
            for n_, d_ in pairs:
                if not d_:
                    raise InconclusiveError("entry with identically zero denominator")
            cleared = []
            for i in range(len(pairs)):
                p = pairs[i][0]
                for j in range(len(pairs)):
                    if j != i:
                        dj = pairs[j][1]
                        if dj != one:
                            p = _poly_mul(p, dj)
                cleared.append(p)
            self.rows.append(cleared)

    def status(self, p: dict) -> str:
        return _poly_status(p, self.at, self.zc)

    def echelon(self):
        """Fraction-free Bareiss; returns (rank, pivot_cols, origin_rows,
        echelon_rows, pivot_values). origin_rows[t] is the index, in the
        original row order, of the row supplying pivot t."""
        m = [list(r) for r in self.rows]
        origin = list(range(self.nrows))
        prev = self.at.const(1)
        piv_cols: list[int] = []
        piv_vals: list[dict] = []
        r = 0
        for c in range(self.ncols):
            sel = None
            for i in range(r, self.nrows):
                st = self.status(m[i][c])
                if st == "nonzero":
                    sel = i
                    break
                if st == "unknown":
                    raise InconclusiveError(
                        "rank elimination", poly_to_expr(m[i][c], self.at)
                    )
            if sel is None:
                continue
            m[r], m[sel] = m[sel], m[r]
            origin[r], origin[sel] = origin[sel], origin[r]
            pv = m[r][c]
            for i in range(r + 1, self.nrows):
                mic = m[i][c]
                for j in range(self.ncols):
                    nv = _poly_add(_poly_mul(pv, m[i][j]), _poly_scale(_poly_mul(mic, m[r][j]), Fraction(-1)))
                    m[i][j] = _poly_divexact(nv, prev) if prev != self.at.const(1) else nv
            prev = pv
            piv_cols.append(c)
            piv_vals.append(pv)
            r += 1
            if r == self.nrows:
                break
        return r, piv_cols, origin[: r], m, piv_vals

    def rank(self) -> int:
        return self.echelon()[0]

    def nullspace(self) -> list[list[Expr]]:
        """Basis of {x : M x = 0}, denominators cleared to Expr entries."""
        rank, piv_cols, _, u, piv_vals = self.echelon()
        free_cols = [c for c in range(self.ncols) if c not in piv_cols]
        one = self.at.const(1)
        basis = []
        for fc in free_cols:
            # back-substitute over rational functions (num, den) in the atoms
            x: list[tuple[dict, dict]] = [({}, one) for _ in range(self.ncols)]
            x[fc] = (one, one)
            for t in range(rank - 1, -1, -1):
                pc = piv_cols[t]
                sn, sd = {}, one
                for c in range(pc + 1, self.ncols):
                    ucf = u[t][c]
                    if not ucf:
                        continue
                    xn, xd = x[c]
                    if not xn:
                        continue
                    tn = _poly_mul(ucf, xn)
                    sn = _poly_add(_poly_mul(sn, xd), _poly_mul(tn, sd))
                    sd = _poly_mul(sd, xd)
                # x[pc] = -s / u[t][pc]
                x[pc] = (_poly_scale(sn, Fraction(-1)), _poly_mul(sd, u[t][pc]))
            dens = []
            for n_, d_ in x:
                if n_ and d_ != one and d_ not in dens:
                    dens.append(d_)
            vec = []
            for n_, d_ in x:
                p = n_
                for dd in dens:
                    if dd != d_:
                        p = _poly_mul(p, dd)
                vec.append(poly_to_expr(p, self.at))
            basis.append(vec)
        return basis


def _poly_row_strip(row: list[dict]) -> list[dict]:
    """Divide the row by its integer and monomial content (a nonzero scalar
    times a monomial; row scaling preserves rank, membership, and nullspaces)."""
    monos = [m for p in row for m in p]
    if not monos:
        return row
    mins = list(monos[0])
    for m in monos:
        for i, e in enumerate(m):
            if e < mins[i]:
                mins[i] = e
    g = 0
    dcm = 1
    for p in row:
        for c in p.values():
            g = math_gcd(g, abs(c.numerator))
            dcm = dcm * c.denominator // math_gcd(dcm, c.denominator)
    if g == 0:
        return row
    scale = Fraction(dcm, g)
    if scale == 1 and not any(mins):
        return row
    out = []
    for p in row:
        out.append({tuple(a - b for a, b in zip(m, mins)): c * scale for m, c in p.items()})
    return out


class _Echelon:
    """Incremental fraction-free row echelon over polynomials in an
    append-only atom list, with certified pivots and row-content stripping.

    Serves rank, independent-subset, and membership queries; the stored rows
    satisfy the Gauss-Jordan invariant (every row vanishes at every other
    row's pivot column), so a candidate is reduced in a single pass."""

    def __init__(self, ncols: int, zc: ZeroCtx):
        self.ncols = ncols
        self.zc = zc
        self.atoms: list[Expr] = []
        self.index: dict = {}
        self.rows: list[list[dict]] = []
        self.piv_cols: list[int] = []
        self.origin: list[int] = []
        self.offered = 0

    # AtomTable duck-typing for to_fraction_of_polys / _poly_status
    @property
    def n(self) -> int:
        return len(self.atoms)

    def const(self, c) -> dict:
        c = Fraction(c)
        return {(0,) * len(self.atoms): c} if c else {}

    def var(self, a: Expr) -> dict:
        m = [0] * len(self.atoms)
        m[self.index[a]] = 1
        return {tuple(m): Fraction(1)}

    def copy(self) -> "_Echelon":
        e = _Echelon(self.ncols, self.zc)
        e.atoms = self.atoms[:]
        e.index = dict(self.index)
        e.rows = [r[:] for r in self.rows]
        e.piv_cols = self.piv_cols[:]
        e.origin = self.origin[:]
        e.offered = self.offered
        return e

    def _register(self, exprs: Sequence[Expr]):
        from .expr import _collect_atoms

        acc: set = set()
        for e in exprs:
            _collect_atoms(e, acc)
        new = [a for a in sorted(acc, key=lambda x: x.sort_key()) if a not in self.index]
        if not new:
            return
        for a in new:
            self.index[a] = len(self.atoms)
            self.atoms.append(a)
        width = len(self.atoms)
        self.rows = [
            [{m + (0,) * (width - len(m)): c for m, c in p.items()} for p in row]
            for row in self.rows
        ]

    def _convert_row(self, row_exprs: Sequence[Expr]) -> list[dict]:
        self._register(row_exprs)
        pairs = [to_fraction_of_polys(e, self) for e in row_exprs]
        one = self.const(1)
        for _, d in pairs:
            if not d:
                raise InconclusiveError("entry with identically zero denominator")
        width = len(self.atoms)
        out = []
        for i in range(len(pairs)):
            p = pairs[i][0]
            for j in range(len(pairs)):
                if j != i and pairs[j][1] != one:
                    p = _poly_mul(p, pairs[j][1])
            out.append({m + (0,) * (width - len(m)): c for m, c in p.items()})
        return _poly_row_strip(out)

    def _reduce(self, row: list[dict]) -> list[dict]:
        for erow, pc in zip(self.rows, self.piv_cols):
            c = row[pc]
            if not c:
                continue
            piv = erow[pc]
            row = [
                _poly_add(_poly_mul(piv, rj), _poly_scale(_poly_mul(c, ej), Fraction(-1)))
                for rj, ej in zip(row, erow)
            ]
            row = _poly_row_strip(row)
        return row

    def _pivot_of(self, row: list[dict], context: str) -> Optional[int]:
        for c in range(self.ncols):
            st = _poly_status(row[c], self, self.zc)
            if st == "nonzero":
                return c
            if st == "unknown":
                raise InconclusiveError(context, poly_to_expr(row[c], _atoms_view(self)))
        return None

    def offer(self, row_exprs: Sequence[Expr], context: str = "rank elimination") -> bool:
        """Reduce a row against the echelon; keep it if independent."""
        idx = self.offered
        self.offered += 1
        row = self._reduce(self._convert_row(row_exprs))
        pc = self._pivot_of(row, context)
        if pc is None:
            return False
        piv = row[pc]
        for t in range(len(self.rows)):
            ct = self.rows[t][pc]
            if not ct:
                continue
            updated = [
                _poly_add(_poly_mul(piv, ej), _poly_scale(_poly_mul(ct, rj), Fraction(-1)))
                for ej, rj in zip(self.rows[t], row)
            ]
            self.rows[t] = _poly_row_strip(updated)
        at = 0
        while at < len(self.piv_cols) and self.piv_cols[at] < pc:
            at += 1
        self.rows.insert(at, row)
        self.piv_cols.insert(at, pc)
        self.origin.append(idx)
        return True

    def contains_row(self, row_exprs: Sequence[Expr], context: str = "membership") -> bool:
        row = self._reduce(self._convert_row(row_exprs))
        return self._pivot_of(row, context) is None

    @property
    def rank(self) -> int:
        return len(self.rows)


class _atoms_view:
    """Sorted-order-free atom view for error reporting."""

    def __init__(self, ech: _Echelon):
        self.atoms = ech.atoms
        self.n = len(ech.atoms)


def _echelon_of(rows: Sequence[Sequence[Expr]], zc: ZeroCtx) -> _Echelon:
    ech = _Echelon(len(rows[0]) if rows else 0, zc)
    for row in rows:
        ech.offer(list(row))
    return ech


def symbolic_matrix_rank(rows: Sequence[Sequence[Expr]], zc: ZeroCtx = DEFAULT_CTX) -> int:
    if not rows:
        return 0
    return _echelon_of(rows, zc).rank


def independent_row_indices(rows: Sequence[Sequence[Expr]], zc: ZeroCtx = DEFAULT_CTX) -> list[int]:
    if not rows:
        return []
    return sorted(_echelon_of(rows, zc).origin)


def nullspace(rows: Sequence[Sequence[Expr]], zc: ZeroCtx = DEFAULT_CTX) -> list[list[Expr]]:
    if not rows:
        return []
    return _SymMatrix(rows, zc).nullspace()


def matrix_rank_at(rows: Sequence[Sequence[Expr]], point, zc: ZeroCtx = DEFAULT_CTX) -> int:
    """Rank of an expression matrix at a (possibly partial) point: exact
    rational elimination when everything binds to rationals, float SVD with
    tolerance 1e-9 when transcendental leaves force floating evaluation,
    certified symbolic elimination when symbols remain."""
    if not rows:
        return 0
    subbed = [[substitute(e, point) for e in row] for row in rows]
    names = set()
    for row in subbed:
        for e in row:
            names |= free_symbols(e)
    if names:
        return symbolic_matrix_rank(subbed, zc)
    if all(e.is_rational_const for row in subbed for e in row):
        return _exact_rational_rank([[e.data for e in row] for row in subbed])
    mat = np.array([[evaluate_float(e, {}) for e in row] for row in subbed], dtype=float)
    sv = np.linalg.svd(mat, compute_uv=False)
    return int(np.sum(sv > 1e-9))


def _exact_rational_rank(m: list[list[Fraction]]) -> int:
    m = [row[:] for row in m]
    nr, nc = len(m), len(m[0])
    r = 0
    for c in range(nc):
        sel = next((i for i in range(r, nr) if m[i][c] != 0), None)
        if sel is None:
            continue
        m[r], m[sel] = m[sel], m[r]
        for i in range(r + 1, nr):
            if m[i][c] != 0:
                f = m[i][c] / m[r][c]
                m[i] = [a - f * b for a, b in zip(m[i], m[r])]
        r += 1
        if r == nr:
            break
    return r


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------


class Distribution:
    """Finite generating set of vector fields; ranks are computed through the
    certified eliminator and cached per zero-testing context."""

    def __init__(self, chart: Chart, generators: Sequence[VectorField]):
        for g in generators:
            if g.chart != chart:
                raise ChartMismatchError("generator chart mismatch")
        self.chart = chart
        self.generators: tuple[VectorField, ...] = tuple(generators)
        self._ech_cache: dict = {}
        self._point_cache: dict = {}

    def matrix(self) -> list[list[Expr]]:
        return [list(g.comps) for g in self.generators]

    def echelon(self, zc: ZeroCtx = DEFAULT_CTX) -> "_Echelon":
        got = self._ech_cache.get(zc)
        if got is None:
            got = _Echelon(self.chart.dim, zc)
            for g in self.generators:
                got.offer(list(g.comps))
            self._ech_cache[zc] = got
        return got

    def generic_rank(self, zc: ZeroCtx = DEFAULT_CTX) -> int:
        return self.echelon(zc).rank

    def rank_at(self, point, zc: ZeroCtx = DEFAULT_CTX) -> int:
        missing = [s for s in self.chart.states if s not in point]
        if missing:
            raise ValueError(f"point leaves state variables unbound: {missing}")
        key = (tuple(sorted((k, Fraction(v)) for k, v in point.items())), zc)
        got = self._point_cache.get(key)
        if got is None:
            got = matrix_rank_at(self.matrix(), point, zc) if self.generators else 0
            self._point_cache[key] = got
        return got

    def reduced(self, zc: ZeroCtx = DEFAULT_CTX) -> "Distribution":
        """Same span, generator list pruned to an independent subset."""
        if not self.generators:
            return self
        idx = sorted(self.echelon(zc).origin)
        if len(idx) == len(self.generators):
            return self
        return Distribution(self.chart, [self.generators[i] for i in idx])

    def with_fields(self, fields: Iterable[VectorField]) -> "Distribution":
        return Distribution(self.chart, list(self.generators) + list(fields))

    def __str__(self):
        return "span{" + "; ".join(str(g) for g in self.generators) + "}"


def generic_rank(d: Distribution, zc: ZeroCtx = DEFAULT_CTX) -> int:
    return d.generic_rank(zc)


def rank_at(d: Distribution, point, zc: ZeroCtx = DEFAULT_CTX) -> int:
    return d.rank_at(point, zc)


def contains(d: Distribution, fields, zc: ZeroCtx = DEFAULT_CTX) -> bool:
    """Generic membership: each field reduces to zero against the echelon."""
    if isinstance(fields, VectorField):
        fields = [fields]
    ech = d.echelon(zc)
    for f in fields:
        if f.is_structurally_zero():
            continue
        if not ech.contains_row(list(f.comps)):
            return False
    return True


def contains_at(d: Distribution, f: VectorField, point, zc: ZeroCtx = DEFAULT_CTX) -> bool:
    if f.is_structurally_zero():
        return True
    base = d.rank_at(point, zc)
    grown = matrix_rank_at(d.matrix() + [list(f.comps)], point, zc)
    return grown == base


def span_equal(a: Distribution, b: Distribution, zc: ZeroCtx = DEFAULT_CTX) -> bool:
    if a.generic_rank(zc) != b.generic_rank(zc):
        return False
    return contains(a, b.generators, zc)


def annihilator(d: Distribution, zc: ZeroCtx = DEFAULT_CTX) -> list[OneForm]:
    """n - rank independent one-forms pairing to zero with every generator."""
    n = d.chart.dim
    if not d.generators:
        return [OneForm(d.chart, coordinate_field(d.chart, i).comps) for i in range(n)]
    basis = nullspace(d.matrix(), zc)
    forms = [OneForm(d.chart, tuple(v)) for v in basis]
    for w in forms:
        for g in d.generators:
            v = zc.is_zero(pairing(w, g))
            if v.status == "nonzero":
                raise InconclusiveError("annihilator pairing failed validation", pairing(w, g))
            if v.status == "unknown":
                raise InconclusiveError("annihilator pairing undecided", pairing(w, g))
    return forms


def kernel_of_forms(chart: Chart, forms: Sequence[OneForm], zc: ZeroCtx = DEFAULT_CTX) -> Distribution:
    """Distribution of vector fields annihilated by all of the given forms."""
    rows = [list(w.coeffs) for w in forms]
    basis = nullspace(rows, zc)
    return Distribution(chart, [VectorField(chart, tuple(v)) for v in basis])


def intersect(a: Distribution, b: Distribution, zc: ZeroCtx = DEFAULT_CTX) -> Distribution:
    """Generators of a ∩ b, solved over the function field: combinations of
    a's generators annihilated by b's annihilator."""
    forms = annihilator(b, zc)
    gens = a.reduced(zc).generators
    rows = [[pairing(w, g) for g in gens] for w in forms]
    if not rows:
        return Distribution(a.chart, gens)
    basis = nullspace(rows, zc)
    fields = []
    for coeffs in basis:
        f = VectorField(a.chart, tuple(ZERO for _ in range(a.chart.dim)))
        for c, g in zip(coeffs, gens):
            f = f + g.scaled(c)
        fields.append(VectorField(a.chart, tuple(f.comps)))
    return Distribution(a.chart, fields)


def is_involutive(d: Distribution, zc: ZeroCtx = DEFAULT_CTX) -> bool:
    gens = d.reduced(zc).generators
    ech = d.echelon(zc)
    for i in range(len(gens)):
        for j in range(i + 1, len(gens)):
            b = lie_bracket(gens[i], gens[j])
            if b.is_structurally_zero():
                continue
            if not ech.contains_row(list(b.comps), "involutivity bracket"):
                return False
    return True


@dataclass
class Flag:
    """Nested sequence of distributions with certified ranks."""

    steps: list[Distribution]
    ranks: list[int]
    stabilized_at: Optional[int]
    reached_full: bool

    def __len__(self):
        return len(self.steps)


def _flag(d: Distribution, bracket_sources, max_steps: Optional[int], zc: ZeroCtx) -> Flag:
    chart = d.chart
    n = chart.dim
    current = d.reduced(zc)
    steps = [current]
    ranks = [current.generic_rank(zc)]
    ech = current.echelon(zc).copy()
    stabilized_at = None
    limit = max_steps if max_steps is not None else n
    while len(steps) <= limit:
        if ranks[-1] == n:
            return Flag(steps, ranks, stabilized_at, True)
        gens = list(current.generators)
        sources = bracket_sources(steps)
        kept: list[VectorField] = []
        seen = set()
        for a in sources:
            for b in gens:
                br = lie_bracket(a, b)
                if br.is_structurally_zero() or br.comps in seen:
                    continue
                seen.add(br.comps)
                if ech.offer(list(br.comps), "flag elimination"):
                    kept.append(br)
                    if ech.rank == n:
                        break
            if ech.rank == n:
                break
        if not kept:
            stabilized_at = len(steps) - 1
            return Flag(steps, ranks, stabilized_at, ranks[-1] == n)
        current = Distribution(chart, gens + kept)
        seeded = ech.copy()
        seeded.origin = list(range(len(current.generators)))
        seeded.offered = len(current.generators)
        current._ech_cache[zc] = seeded
        steps.append(current)
        ranks.append(ech.rank)
    return Flag(steps, ranks, stabilized_at, ranks[-1] == n)


def derived_flag(d: Distribution, max_steps: Optional[int] = None, zc: ZeroCtx = DEFAULT_CTX) -> Flag:
    """G^0 = G, G^{i+1} = G^i + [G^i, G^i], up to stabilization / TX / max_steps."""
    return _flag(d, lambda steps: steps[-1].generators, max_steps, zc)


def lie_flag(d: Distribution, max_steps: Optional[int] = None, zc: ZeroCtx = DEFAULT_CTX) -> Flag:
    """G_0 = G, G_{i+1} = G_i + [G_0, G_i]."""
    return _flag(d, lambda steps: steps[0].generators, max_steps, zc)


def _restricted_two_forms(d: Distribution, forms: Sequence[OneForm]) -> list[list[list[Expr]]]:
    """For each annihilator form w, the matrix A[a][b] = dw(g_a, g_b)."""
    gens = d.generators
    out = []
    for w in forms:
        dw = exterior_derivative(w)
        rows = []
        for a in gens:
            contracted = interior_product(a, dw)
            rows.append([pairing(contracted, b) for b in gens])
        out.append(rows)
    return out


def w_of_form(d: Distribution, w: OneForm, zc: ZeroCtx = DEFAULT_CTX) -> Distribution:
    """W(w) = {f in D : f ⌟ dw annihilates D}, solved over the function field."""
    gens = d.reduced(zc).generators
    dd = Distribution(d.chart, gens)
    a = _restricted_two_forms(dd, [w])[0]
    rows = [[a[i][b] for i in range(len(gens))] for b in range(len(gens))]
    basis = nullspace(rows, zc)
    fields = []
    for coeffs in basis:
        f = VectorField(d.chart, tuple(ZERO for _ in range(d.chart.dim)))
        for c, g in zip(coeffs, gens):
            f = f + g.scaled(c)
        fields.append(f)
    return Distribution(d.chart, fields)


def characteristic_distribution(d: Distribution, zc: ZeroCtx = DEFAULT_CTX) -> Distribution:
    """C = {c in D : [c, D] ⊂ D}, computed as the intersection of the W(w_i)
    over an annihilator basis: the linear conditions dw_i(f, g_b) = 0 on the
    unknown coefficient functions of f over D's generators."""
    red = d.reduced(zc)
    gens = red.generators
    if not gens:
        return red
    forms = annihilator(red, zc)
    if not forms:
        return red  # D = TX is its own characteristic distribution
    mats = _restricted_two_forms(red, forms)
    rows = []
    for a in mats:
        for b in range(len(gens)):
            rows.append([a[i][b] for i in range(len(gens))])
    basis = nullspace(rows, zc)
    fields = []
    for coeffs in basis:
        f = VectorField(d.chart, tuple(ZERO for _ in range(d.chart.dim)))
        for c, g in zip(coeffs, gens):
            f = f + g.scaled(c)
        fields.append(f)
    cdist = Distribution(d.chart, fields).reduced(zc)
    if not is_involutive(cdist, zc):
        raise InconclusiveError("characteristic distribution failed involutivity validation")
    return cdist


def engel_rank_is_one(d: Distribution, zc: ZeroCtx = DEFAULT_CTX) -> bool:
    """True iff all dw_i ^ dw_j vanish modulo the annihilator ideal; decided
    by restricting the two-forms to D and testing every 4-generator minor
    (reduction against the annihilator basis happens by working inside D)."""
    red = d.reduced(zc)
    gens = red.generators
    if len(gens) < 4:
        return True
    forms = annihilator(red, zc)
    mats = _restricted_two_forms(red, forms)
    from itertools import combinations

    idx4 = list(combinations(range(len(gens)), 4))
    for s in range(len(mats)):
        for t in range(s, len(mats)):
            a, b = mats[s], mats[t]
            for (p, q, r, u) in idx4:
                e = add(
                    mul(a[p][q], b[r][u]), mul(num(-1), a[p][r], b[q][u]), mul(a[p][u], b[q][r]),
                    mul(b[p][q], a[r][u]), mul(num(-1), b[p][r], a[q][u]), mul(b[p][u], a[q][r]),
                )
                v = zc.is_zero(e)
                if v.status == "nonzero":
                    return False
                if v.status == "unknown":
                    raise InconclusiveError("Engel-rank residue undecided", e)
    return True


@dataclass
class BryantResult:
    """Outcome of the corank-one involutive subdistribution construction."""

    status: str  # "found" / "not_found"
    distribution: Optional[Distribution]
    r: int
    unique: bool
    conditions: dict


def bryant_corank_one(d: Distribution, zc: ZeroCtx = DEFAULT_CTX) -> BryantResult:
    """Search for the corank-one involutive subdistribution of d.

    r = rank[D,D] - rank D classifies the construction: for r >= 3 the
    candidate is B = sum of W(w_i) over forms annihilating D but not [D,D],
    unique when the Engel rank is one and the characteristic distribution has
    rank d-r-1; for r = 2 the same B satisfies [B,B] ⊂ D under the same
    conditions; for r = 1 only the characteristic-rank condition applies and
    the result is never unique (one valid choice is returned, flagged).
    """
    red = d.reduced(zc)
    dd = red.generic_rank(zc)
    brackets = []
    gens = red.generators
    for i in range(len(gens)):
        for j in range(i + 1, len(gens)):
            b = lie_bracket(gens[i], gens[j])
            if not b.is_structurally_zero():
                brackets.append(b)
    d1 = red.with_fields(brackets)
    r = d1.generic_rank(zc) - dd
    if r == 0:
        raise ExprError("input distribution is involutive; corank-one construction needs r >= 1")

    cdist = characteristic_distribution(red, zc)
    isd2 = cdist.generic_rank(zc) == dd - r - 1
    conditions = {"r": r, "ISD2": isd2}

    if r == 1:
        conditions["ISD1"] = True  # vacuous for a single modulo-I^1 form
        if not isd2:
            return BryantResult("not_found", None, r, False, conditions)
        candidates = list(gens)
        candidates += [gens[i] + gens[j] for i in range(len(gens)) for j in range(i + 1, len(gens))]
        crank = cdist.generic_rank(zc)
        for g in candidates:
            cand = cdist.with_fields([g])
            if cand.generic_rank(zc) != crank + 1:
                continue
            if is_involutive(cand, zc):
                return BryantResult("found", cand.reduced(zc), r, False, conditions)
        return BryantResult("not_found", None, r, False, conditions)

    isd1 = engel_rank_is_one(red, zc)
    conditions["ISD1"] = isd1
    if not (isd1 and isd2):
        return BryantResult("not_found", None, r, r >= 3, conditions)

    ann_d = annihilator(red, zc)
    ann_d1 = annihilator(d1.reduced(zc), zc)
    # complete the annihilator of [D,D] to the annihilator of D
    sel: list[OneForm] = []
    base_rows = [list(w.coeffs) for w in ann_d1]
    cur = symbolic_matrix_rank(base_rows, zc) if base_rows else 0
    for w in ann_d:
        if len(sel) == r:
            break
        rows = base_rows + [list(x.coeffs) for x in sel] + [list(w.coeffs)]
        rr = symbolic_matrix_rank(rows, zc)
        if rr == cur + len(sel) + 1:
            sel.append(w)
    if len(sel) != r:
        raise InconclusiveError("could not split annihilator basis against [D,D]")

    fields: list[VectorField] = []
    for w in sel:
        fields.extend(w_of_form(red, w, zc).generators)
    b = Distribution(d.chart, fields).reduced(zc)
    ok_corank = b.generic_rank(zc) == dd - 1
    conditions["corank_one"] = ok_corank
    if r == 2:
        ok_sq = all(
            contains(red, lie_bracket(b.generators[i], b.generators[j]), zc)
            for i in range(len(b.generators))
            for j in range(i + 1, len(b.generators))
        )
        conditions["bracket_in_D"] = ok_sq
        if not (ok_corank and ok_sq):
            return BryantResult("not_found", None, r, True, conditions)
        conditions["involutive"] = is_involutive(b, zc)
        return BryantResult("found", b, r, True, conditions)
    conditions["involutive"] = is_involutive(b, zc)
    if not (ok_corank and conditions["involutive"]):
        return BryantResult("not_found", None, r, True, conditions)
    return BryantResult("found", b, r, True, conditions)
