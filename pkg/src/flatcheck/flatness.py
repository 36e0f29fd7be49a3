"""Decision procedures for chained-compatible triangular forms.

Checks equivalence conditions (Ch1)-(Ch3)+(Comp) for two-input systems and
(m-Ch1)-(m-Ch3)+(m-Comp) for m+1 inputs, verifies x-flat-output candidates
through both the bracket route and the annihilator route, computes singular
control sets, and emits the first-order PDE systems whose solutions are the
admissible flat outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .expr import (
    Expr,
    ZERO,
    add,
    degree_in,
    differentiate,
    free_symbols,
    mul,
    num,
    substitute,
    sym,
    to_str,
)
from .geometry import (
    Chart,
    DEFAULT_CTX,
    Distribution,
    Flag,
    InconclusiveError,
    OneForm,
    VectorField,
    ZeroCtx,
    annihilator,
    bryant_corank_one,
    characteristic_distribution,
    contains,
    derived_flag,
    differential,
    independent_row_indices,
    kernel_of_forms,
    lie_bracket,
    lie_derivative,
    lie_flag,
    matrix_rank_at,
    pairing,
    span_equal,
)
from .systems import (
    FAIL,
    INCONCLUSIVE,
    INFO,
    NOT_APPLICABLE,
    PASS,
    ConditionRecord,
    ControlAffineSystem,
    FlatOutputCandidate,
    Verdict,
)

__all__ = [
    "GeometryBundle",
    "SingularLevel",
    "SingularControlSet",
    "check_tch1",
    "check_tchm",
    "singular_controls_m1",
    "u_char",
    "singular_controls_m",
    "verify_flat_output_m1",
    "verify_flat_output_lin_m1",
    "verify_minimal_flat_output_m",
    "FlatPde",
    "flat_pde_m1",
    "UnsupportedOperation",
]


class UnsupportedOperation(RuntimeError):
    pass


class GeometryBundle:
    """Lazily computed geometric objects of a system, shared across checks."""

    def __init__(self, sys: ControlAffineSystem, zc: ZeroCtx = DEFAULT_CTX):
        self.sys = sys
        self.zc = zc
        self._flag: Optional[Flag] = None
        self._lie: Optional[Flag] = None
        self._char: dict = {}
        self._ann: dict = {}
        self._bryant = None

    @property
    def flag(self) -> Flag:
        if self._flag is None:
            self._flag = derived_flag(self.sys.g_distribution(), self.sys.k - 1, self.zc)
        return self._flag

    @property
    def lie(self) -> Flag:
        if self._lie is None:
            self._lie = lie_flag(self.sys.g_distribution(), self.sys.k - 1, self.zc)
        return self._lie

    def G(self, i: int) -> Distribution:
        steps = self.flag.steps
        return steps[min(i, len(steps) - 1)]

    def G_rank(self, i: int) -> int:
        ranks = self.flag.ranks
        return ranks[min(i, len(ranks) - 1)]

    def C(self, i: int) -> Distribution:
        if i not in self._char:
            self._char[i] = characteristic_distribution(self.G(i), self.zc)
        return self._char[i]

    def ann(self, i: int) -> list[OneForm]:
        if i not in self._ann:
            self._ann[i] = annihilator(self.G(i), self.zc)
        return self._ann[i]

    def bryant(self):
        if self._bryant is None:
            self._bryant = bryant_corank_one(self.G(self.sys.k - 2), self.zc)
        return self._bryant


def _guard(verdict: Verdict, cid: str):
    """Context manager turning InconclusiveError into an inconclusive record."""

    class _G:
        def __enter__(self):
            return self

        def __exit__(self, et, ev, tb):
            if et is InconclusiveError:
                verdict.record(cid, INCONCLUSIVE, reason=str(ev), pivot=ev.pivot)
                return True
            return False

    return _G()


def _regularity_records(sys: ControlAffineSystem, bundle: GeometryBundle, verdict: Verdict):
    """Constant rank near x* is approximated by generic rank == rank at x*;
    a mismatch declares x* singular for the construction."""
    zc = bundle.zc
    for i, step in enumerate(bundle.flag.steps):
        gr = step.generic_rank(zc)
        pr = step.rank_at(sys.xstar, zc)
        if gr != pr:
            verdict.record(
                "regularity", FAIL,
                level=i, generic_rank=gr, rank_at_point=pr,
                note="distinguished point is singular for the flag",
            )
            return False
    verdict.record("regularity", PASS, ranks=list(bundle.flag.ranks))
    return True


def check_tch1(sys: ControlAffineSystem, zc: ZeroCtx = DEFAULT_CTX,
               bundle: Optional[GeometryBundle] = None) -> Verdict:
    """Equivalence to the two-input triangular form: (Ch1)-(Ch3) + (Comp),
    cross-validated against the rank-sequence characterization (Ch1)'-(Ch2)'."""
    if sys.m != 1:
        raise ValueError("check_tch1 requires a two-input system (m = 1)")
    if sys.k < 3:
        raise ValueError("check_tch1 requires k >= 3")
    bundle = bundle or GeometryBundle(sys, zc)
    v = Verdict()
    n, k = sys.n, sys.k

    if not _regularity_records(sys, bundle, v):
        return v

    with _guard(v, "Ch1"):
        r = bundle.G_rank(k - 1)
        v.record("Ch1", PASS if r == n else FAIL, rank=r, expected=n)

    ckm2 = None
    with _guard(v, "Ch2"):
        r3 = bundle.G_rank(k - 3)
        ckm2 = bundle.C(k - 2)
        inside = contains(bundle.G(k - 3), ckm2.generators, zc)
        corank = r3 - ckm2.generic_rank(zc)
        ok = r3 == k - 1 and inside and corank == 1
        v.record("Ch2", PASS if ok else FAIL,
                 rank_G_km3=r3, expected_rank=k - 1,
                 C_km2_in_G_km3=inside, corank=corank)

    with _guard(v, "Ch3"):
        if ckm2 is None:
            ckm2 = bundle.C(k - 2)
        base = ckm2.rank_at(sys.xstar, zc) if ckm2.generators else 0
        grown = matrix_rank_at(ckm2.matrix() + sys.g_distribution().matrix(), sys.xstar, zc)
        v.record("Ch3", PASS if grown > base else FAIL,
                 rank_C_at_point=base, rank_C_plus_G0_at_point=grown)

    _comp_records(sys, bundle, v, "Comp")

    # Cross-validation: rank sequences of the derived and Lie flags.
    with _guard(v, "Ch1'"):
        primed1 = all(bundle.G_rank(i) == i + 2 for i in range(k))
        v.record("Ch1'", INFO, holds=primed1,
                 derived_ranks=[bundle.G_rank(i) for i in range(k)])
        lie_ok = True
        for i in range(k):
            steps = bundle.lie.steps
            li = steps[min(i, len(steps) - 1)]
            if li.rank_at(sys.xstar, zc) != i + 2 or bundle.G(i).rank_at(sys.xstar, zc) != i + 2:
                lie_ok = False
                break
        v.record("Ch2'", INFO, holds=lie_ok)
        unprimed = all(r.status == PASS for r in v.records if r.cid in ("Ch1", "Ch2", "Ch3"))
        v.record("characterization-agreement", PASS if (primed1 and lie_ok) == unprimed else FAIL,
                 primed=primed1 and lie_ok, unprimed=unprimed)
    return v


def _comp_records(sys: ControlAffineSystem, bundle: GeometryBundle, v: Verdict, cid: str):
    """[f, C^i] ⊂ G^i for 1 <= i <= k-2."""
    zc = bundle.zc
    k = sys.k
    if k == 2:
        v.record(cid, NOT_APPLICABLE, note="no characteristic levels for k = 2")
        return
    for i in range(1, k - 1):
        with _guard(v, f"{cid} i={i}"):
            ci = bundle.C(i)
            for c in ci.generators:
                br = lie_bracket(sys.drift, c)
                if not contains(bundle.G(i), br, zc):
                    v.record(f"{cid} i={i}", FAIL, characteristic_field=c, bracket=br)
                    break
            else:
                v.record(f"{cid} i={i}", PASS)


def check_tchm(sys: ControlAffineSystem, zc: ZeroCtx = DEFAULT_CTX,
               bundle: Optional[GeometryBundle] = None) -> Verdict:
    """Equivalence to the multi-chain triangular form: (m-Ch1)-(m-Ch3) +
    (m-Comp), plus the rank law rk G^i = (i+1)m+1 and the coincidence of the
    corank-one involutive subdistributions with the characteristic ones."""
    if sys.m < 2:
        raise ValueError("check_tchm requires m >= 2")
    if sys.k < 2:
        raise ValueError("check_tchm requires k >= 2")
    bundle = bundle or GeometryBundle(sys, zc)
    v = Verdict()
    n, m, k = sys.n, sys.m, sys.k

    if not _regularity_records(sys, bundle, v):
        return v

    with _guard(v, "m-Ch1"):
        r = bundle.G_rank(k - 1)
        v.record("m-Ch1", PASS if r == n else FAIL, rank=r, expected=n)

    with _guard(v, "rank-law"):
        laws = [(i, bundle.G_rank(i), (i + 1) * m + 1) for i in range(k - 1)]
        bad = [t for t in laws if t[1] != t[2]]
        v.record("rank-law", PASS if not bad else FAIL,
                 ranks=[t[1] for t in laws], expected=[t[2] for t in laws])

    ldist = None
    with _guard(v, "m-Ch2"):
        rk2 = bundle.G_rank(k - 2)
        res = bundle.bryant()
        ok = rk2 == (k - 1) * m + 1 and res.status == "found"
        wit = {"rank_G_km2": rk2, "expected_rank": (k - 1) * m + 1, "bryant": res.conditions}
        if res.status == "found":
            ldist = res.distribution
            ok = ok and res.conditions.get("involutive", True)
            wit["L_rank"] = ldist.generic_rank(zc)
        v.record("m-Ch2", PASS if ok else FAIL, **wit)

    with _guard(v, "m-Ch3"):
        if ldist is None:
            v.record("m-Ch3", FAIL, note="no involutive corank-one subdistribution found")
        else:
            base = ldist.rank_at(sys.xstar, zc)
            grown = matrix_rank_at(ldist.matrix() + sys.g_distribution().matrix(), sys.xstar, zc)
            v.record("m-Ch3", PASS if grown > base else FAIL,
                     rank_L_at_point=base, rank_L_plus_G0_at_point=grown)

    _comp_records(sys, bundle, v, "m-Comp")

    # Internal consistency: L^i coincides with C^{i+1} (corank one in G^i).
    with _guard(v, "L-coincidence"):
        coinc = []
        for i in range(0, k - 2):
            ci1 = bundle.C(i + 1)
            corank = bundle.G_rank(i) - ci1.generic_rank(zc)
            coinc.append(corank == 1 and contains(bundle.G(i), ci1.generators, zc))
        v.record("L-coincidence", PASS if all(coinc) else FAIL, per_level=coinc)
    return v


def check(sys: ControlAffineSystem, zc: ZeroCtx = DEFAULT_CTX,
          bundle: Optional[GeometryBundle] = None) -> Verdict:
    return check_tch1(sys, zc, bundle) if sys.m == 1 else check_tchm(sys, zc, bundle)


# ---------------------------------------------------------------------------
# Singular control sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SingularLevel:
    """One level of a singular control set: the controls solving (or, for
    rank-drop levels, annihilating) every listed equation."""

    tag: str  # "sing" / "L-sing" / "char" / "m-sing"
    index: Optional[int]
    equations: tuple[Expr, ...]

    def label(self) -> str:
        return self.tag if self.index is None else f"{self.tag} i={self.index}"


@dataclass
class SingularControlSet:
    system_name: str
    control_syms: tuple[str, ...]
    levels: tuple[SingularLevel, ...]

    def membership(self, point: dict, zc: ZeroCtx = DEFAULT_CTX):
        """Per level: (in_set, residual equations). in_set is None when a
        residual (partial point) or an Unknown verdict blocks the decision."""
        out = []
        for lev in self.levels:
            residuals = [substitute(e, point) for e in lev.equations]
            unresolved = [r for r in residuals if free_symbols(r)]
            statuses = [zc.status(r) for r in residuals if not free_symbols(r)]
            if any(s == "nonzero" for s in statuses):
                out.append((lev, False, residuals))
            elif unresolved or any(s == "unknown" for s in statuses):
                out.append((lev, None, residuals))
            else:
                out.append((lev, True, residuals))
        return out

    def is_singular_control(self, point: dict, zc: ZeroCtx = DEFAULT_CTX) -> bool:
        return any(flag is True for _, flag, _ in self.membership(point, zc))

    def as_dict(self) -> dict:
        return {
            "system": self.system_name,
            "controls": list(self.control_syms),
            "levels": [
                {"level": lev.label(), "equations": [to_str(e) + " = 0" for e in lev.equations]}
                for lev in self.levels
            ],
        }


def _affine_reduce(eqs: list[Expr], control_syms: Sequence[str], zc: ZeroCtx) -> list[Expr]:
    """Drop linearly dependent affine-in-u conditions (over the function field)."""
    keep = [e for e in eqs if zc.status(e) == "nonzero"]
    if len(keep) <= 1:
        return keep
    rows = []
    for e in keep:
        row = [differentiate(e, u) for u in control_syms]
        row.append(substitute(e, {u: 0 for u in control_syms}))
        rows.append(row)
    idx = independent_row_indices(rows, zc)
    return [keep[i] for i in idx]


def _membership_equations(target: Distribution, w: VectorField, forms: list[OneForm],
                          zc: ZeroCtx) -> list[Expr]:
    eqs = []
    for omega in forms:
        e = pairing(omega, w)
        st = zc.status(e)
        if st == "unknown":
            raise InconclusiveError("singular-control pairing undecided", e)
        if st == "nonzero":
            eqs.append(e)
    return eqs


def _check_affine(eqs: Sequence[Expr], control_syms: Sequence[str], deg: int):
    for e in eqs:
        if degree_in(e, control_syms) > deg:
            raise InconclusiveError(
                f"singular-control equation exceeds structural degree {deg} in controls"
            )


def singular_controls_m1(sys: ControlAffineSystem,
                         L: Optional[Distribution] = None,
                         candidate: Optional[FlatOutputCandidate] = None,
                         zc: ZeroCtx = DEFAULT_CTX,
                         bundle: Optional[GeometryBundle] = None,
                         include_char: bool = False) -> SingularControlSet:
    """Affine conditions on u per singular level of a two-input system.

    Levels i = 0..k-3 need no extra data; the top level needs a corank-two
    involutive distribution L inside G^{k-2}, either supplied directly or
    induced by a flat-output candidate (L = annihilator of the span of its
    differentials)."""
    if sys.m != 1:
        raise ValueError("singular_controls_m1 requires m = 1")
    bundle = bundle or GeometryBundle(sys, zc)
    k = sys.k
    faff = sys.affine_field()
    levels: list[SingularLevel] = []

    for i in range(0, k - 2):
        forms = bundle.ann(i)
        eqs: list[Expr] = []
        for c in bundle.C(i + 1).generators:
            eqs.extend(_membership_equations(bundle.G(i), lie_bracket(faff, c), forms, zc))
        eqs = _affine_reduce(eqs, sys.control_syms, zc)
        _check_affine(eqs, sys.control_syms, 1)
        levels.append(SingularLevel("sing", i, tuple(eqs)))

    if candidate is not None:
        rows = [[differentiate(f, s) for s in sys.chart.states] for f in candidate.functions]
        forms = [OneForm(sys.chart, tuple(r)) for r in rows]
        L = kernel_of_forms(sys.chart, forms, zc)
    if L is not None:
        _validate_L(sys, L, bundle, zc)
        ckm2 = bundle.C(k - 2)
        lfield = None
        for g in L.generators:
            if not contains(ckm2, g, zc):
                lfield = g
                break
        if lfield is None:
            raise ValueError("L lies inside the top characteristic distribution")
        eqs = _membership_equations(bundle.G(k - 2), lie_bracket(faff, lfield), bundle.ann(k - 2), zc)
        eqs = _affine_reduce(eqs, sys.control_syms, zc)
        _check_affine(eqs, sys.control_syms, 1)
        levels.append(SingularLevel("L-sing", k - 2, tuple(eqs)))

    if include_char:
        levels.extend(u_char(sys, zc, bundle).levels)
    return SingularControlSet(sys.name, sys.control_syms, tuple(levels))


def _validate_L(sys: ControlAffineSystem, L: Distribution, bundle: GeometryBundle, zc: ZeroCtx):
    from .geometry import is_involutive

    if L.generic_rank(zc) != sys.n - 2:
        raise ValueError("L must have corank two in the tangent bundle")
    if not is_involutive(L, zc):
        raise ValueError("L must be involutive")
    if not contains(bundle.G(sys.k - 2), L.generators, zc):
        raise ValueError("L must be contained in G^{k-2}")


def u_char(sys: ControlAffineSystem, zc: ZeroCtx = DEFAULT_CTX,
           bundle: Optional[GeometryBundle] = None) -> SingularControlSet:
    """Controls steering the system along the first characteristic
    distribution: (sum u_i g_i)(x) in C^1(x)."""
    bundle = bundle or GeometryBundle(sys, zc)
    c1 = bundle.C(1)
    forms = annihilator(c1, zc)
    flin = sys.linear_field()
    eqs = _membership_equations(c1, flin, forms, zc)
    eqs = _affine_reduce(eqs, sys.control_syms, zc)
    _check_affine(eqs, sys.control_syms, 1)
    return SingularControlSet(sys.name, sys.control_syms,
                              (SingularLevel("char", None, tuple(eqs)),))


def singular_controls_m(sys: ControlAffineSystem, zc: ZeroCtx = DEFAULT_CTX,
                        bundle: Optional[GeometryBundle] = None) -> SingularControlSet:
    """Rank-drop conditions rk(G^i + [f + gu, L^{i+1}]) < (i+2)m+1, one
    determinant-style equation per level, degree <= m in the controls."""
    if sys.m < 2:
        raise ValueError("singular_controls_m requires m >= 2")
    bundle = bundle or GeometryBundle(sys, zc)
    m, k = sys.m, sys.k
    faff = sys.affine_field()
    res = bundle.bryant()
    if res.status != "found":
        raise InconclusiveError("no corank-one involutive subdistribution available")
    levels = []
    for i in range(0, k - 1):
        lam = bundle.C(i + 1) if i <= k - 3 else res.distribution
        forms = bundle.ann(i)
        rows = []
        for vgen in lam.generators:
            w = lie_bracket(faff, vgen)
            row = [pairing(omega, w) for omega in forms]
            statuses = [zc.status(e) for e in row]
            if any(s == "unknown" for s in statuses):
                raise InconclusiveError("rank-drop pairing undecided")
            if any(s == "nonzero" for s in statuses):
                rows.append(row)
        eq = _rank_drop_determinant(rows, m, zc)
        _check_affine([eq], sys.control_syms, m)
        levels.append(SingularLevel("m-sing", i, (eq,)))
    return SingularControlSet(sys.name, sys.control_syms, tuple(levels))


def _det(mat: list[list[Expr]]) -> Expr:
    if len(mat) == 1:
        return mat[0][0]
    terms = []
    for j in range(len(mat)):
        minor = [row[:j] + row[j + 1 :] for row in mat[1:]]
        t = mul(mat[0][j], _det(minor))
        terms.append(t if j % 2 == 0 else mul(num(-1), t))
    return add(*terms)


def _rank_drop_determinant(rows: list[list[Expr]], m: int, zc: ZeroCtx) -> Expr:
    """Pick an m x m submatrix with certified-nonzero generic determinant;
    its vanishing is the rank-drop condition."""
    from itertools import combinations

    if len(rows) < m:
        raise InconclusiveError(
            f"fewer than m = {m} independent bracket directions; rank always drops")
    ncols = len(rows[0])
    for ri in combinations(range(len(rows)), m):
        for ci in combinations(range(ncols), m):
            d = _det([[rows[i][j] for j in ci] for i in ri])
            st = zc.status(d)
            if st == "nonzero":
                return d
    raise InconclusiveError("no generically nonsingular m x m bracket block found")


# ---------------------------------------------------------------------------
# Flat-output verification (m = 1)
# ---------------------------------------------------------------------------


def _select_g(sys: ControlAffineSystem, avoid: Distribution, zc: ZeroCtx) -> tuple[int, VectorField]:
    """First control field with g(x*) outside `avoid` at the distinguished point."""
    base = avoid.rank_at(sys.xstar, zc) if avoid.generators else 0
    for i, g in enumerate(sys.controls):
        grown = matrix_rank_at(avoid.matrix() + [list(g.comps)], sys.xstar, zc)
        if grown > base:
            return i, g
    raise ValueError("no control field is transverse to the avoidance distribution at x*")


def _wedge_rank_record(v: Verdict, cid: str, sys: ControlAffineSystem,
                       functions: list[Expr], point: dict, zc: ZeroCtx):
    names = list(sys.chart.states) + list(sys.control_syms)
    rows = [[differentiate(f, s) for s in names] for f in functions]
    r = matrix_rank_at(rows, point, zc)
    ok = r == len(functions)
    v.record(cid, PASS if ok else FAIL, rank=r, expected=len(functions))
    return ok


def _gate_records(v: Verdict, cid: str, sset: SingularControlSet, point: dict, zc: ZeroCtx):
    """u* must avoid every singular level; partial u* leaves residuals."""
    ok = True
    for lev, flag, residuals in sset.membership(point, zc):
        if flag is True:
            v.record(f"{cid} [{lev.label()}]", FAIL,
                     equations=[to_str(e) + " = 0" for e in lev.equations])
            ok = False
        elif flag is False:
            v.record(f"{cid} [{lev.label()}]", PASS)
        else:
            unresolved = [r for r in residuals if free_symbols(r)]
            if unresolved:
                v.record(f"{cid} [{lev.label()}]", PASS,
                         residual=[to_str(r) + " != 0 required" for r in unresolved])
            else:
                v.record(f"{cid} [{lev.label()}]", INCONCLUSIVE,
                         residual=[to_str(r) for r in residuals])
                ok = False
    return ok


def _fo2_route(sys: ControlAffineSystem, cand: FlatOutputCandidate,
               bundle: GeometryBundle, v: Verdict, zc: ZeroCtx) -> Optional[bool]:
    """(FO2): L_c phi_i = 0 and the cross condition
    (L_g phi0)(L_[c,g] phi1) - (L_g phi1)(L_[c,g] phi0) = 0 for c in C^{k-2}."""
    k = sys.k
    if k == 2:
        v.record("FO2", NOT_APPLICABLE, note="no characteristic level for k = 2")
        return None
    ckm2 = bundle.C(k - 2)
    gi, g = _select_g(sys, ckm2, zc)
    v.record("FO2-g-selection", INFO, control_index=gi)
    phi0, phi1 = cand.functions
    ok = True
    for c in ckm2.generators:
        for tag, h in (("phi0", phi0), ("phi1", phi1)):
            e = lie_derivative(h, c)
            st = zc.status(e)
            if st == "nonzero":
                v.record("FO2", FAIL, condition=f"L_c {tag} = 0", characteristic_field=c, value=e)
                return False
            if st == "unknown":
                v.record("FO2", INCONCLUSIVE, condition=f"L_c {tag} = 0", value=e)
                return None
        cg = lie_bracket(c, g)
        e = mul(lie_derivative(phi0, g), lie_derivative(phi1, cg)) - mul(
            lie_derivative(phi1, g), lie_derivative(phi0, cg))
        st = zc.status(e)
        if st == "nonzero":
            v.record("FO2", FAIL, condition="cross condition", characteristic_field=c, value=e)
            return False
        if st == "unknown":
            v.record("FO2", INCONCLUSIVE, condition="cross condition", value=e)
            return None
    v.record("FO2", PASS)
    return True


def _candidate_L(sys: ControlAffineSystem, cand: FlatOutputCandidate, zc: ZeroCtx) -> Distribution:
    forms = [differential(f, sys.chart) for f in cand.functions]
    return kernel_of_forms(sys.chart, forms, zc)


def _fo2_prime_route(sys: ControlAffineSystem, cand: FlatOutputCandidate,
                     bundle: GeometryBundle, v: Verdict, zc: ZeroCtx) -> Optional[bool]:
    """(FO2)': L = (span{d phi})^⊥ has corank 2 and sits inside G^{k-2}."""
    L = _candidate_L(sys, cand, zc)
    rk = L.generic_rank(zc)
    if rk != sys.n - 2:
        v.record("FO2'", FAIL, L_rank=rk, expected=sys.n - 2,
                 note="differentials dependent over the function field")
        return False
    inside = contains(bundle.G(sys.k - 2), L.generators, zc)
    v.record("FO2'", PASS if inside else FAIL, L_in_G_km2=inside)
    return inside


def verify_flat_output_m1(sys: ControlAffineSystem, cand: FlatOutputCandidate,
                          zc: ZeroCtx = DEFAULT_CTX,
                          bundle: Optional[GeometryBundle] = None,
                          drift_free: bool = False) -> Verdict:
    """Verify an x-flat-output pair for a two-input system through both the
    bracket route (FO1)-(FO3) and the annihilator route (FO1)'-(FO3)',
    asserting their agreement."""
    if sys.m != 1:
        raise ValueError("verify_flat_output_m1 requires m = 1")
    if not cand.arity_ok(sys.m):
        raise ValueError("candidate must have exactly two functions")
    bundle = bundle or GeometryBundle(sys, zc)
    v = Verdict()
    point = dict(sys.xstar)
    point.update(sys.ustar)
    point.update(cand.ustar)

    field = sys.linear_field() if drift_free else sys.affine_field()
    phis = list(cand.functions)
    phidots = [lie_derivative(h, field) for h in phis]
    with _guard(v, "FO1"):
        fo1 = _wedge_rank_record(v, "FO1", sys, phis + phidots, point, zc)

    with _guard(v, "FO2"):
        fo2 = _fo2_route(sys, cand, bundle, v, zc)
    with _guard(v, "FO2'"):
        fo2p = _fo2_prime_route(sys, cand, bundle, v, zc)

    fo3 = None
    with _guard(v, "FO3"):
        if fo2p:
            if drift_free:
                sset = u_char(sys, zc, bundle)
            else:
                sset = singular_controls_m1(sys, candidate=cand, zc=zc, bundle=bundle)
            fo3 = _gate_records(v, "FO3", sset, point, zc)
        else:
            v.record("FO3", NOT_APPLICABLE,
                     note="no admissible L: singularity gate not evaluated")

    # Route agreement: (ii) = FO1 & FO2 & FO3, (iii) = FO1' & FO2' & FO3'.
    if fo2 is not None and fo2p is not None and fo3 is not None:
        route2 = bool(fo1 and fo2 and fo3)
        route3 = bool(fo1 and fo2p and fo3)
        v.record("route-agreement", PASS if route2 == route3 else FAIL,
                 bracket_route=route2, annihilator_route=route3)
        if route2 != route3:
            v.note("internal error: bracket and annihilator routes disagree")
    lg = [lie_derivative(h, sys.controls[0]) for h in phis]
    v.record("Lg-values-at-point", INFO,
             values=[substitute(e, point) for e in lg])
    return v


def verify_flat_output_lin_m1(sys: ControlAffineSystem, cand: FlatOutputCandidate,
                              zc: ZeroCtx = DEFAULT_CTX,
                              bundle: Optional[GeometryBundle] = None) -> Verdict:
    """Flat-output verification for the control-linear part: time derivatives
    taken along sum u_i g_i and the characteristic controls as the gate."""
    return verify_flat_output_m1(sys, cand, zc, bundle, drift_free=True)


# ---------------------------------------------------------------------------
# Flat-output verification (m >= 2)
# ---------------------------------------------------------------------------


def verify_minimal_flat_output_m(sys: ControlAffineSystem, cand: FlatOutputCandidate,
                                 zc: ZeroCtx = DEFAULT_CTX,
                                 bundle: Optional[GeometryBundle] = None) -> Verdict:
    """Minimal flat outputs for m >= 2: independence of the differentials at
    x*, mutual annihilation with the corank-one involutive subdistribution,
    and the rank-drop singularity gate; differential weight (k+1)(m+1) on pass."""
    if sys.m < 2:
        raise ValueError("verify_minimal_flat_output_m requires m >= 2")
    bundle = bundle or GeometryBundle(sys, zc)
    v = Verdict()
    m, k = sys.m, sys.k
    point = dict(sys.xstar)
    point.update(sys.ustar)
    point.update(cand.ustar)

    with _guard(v, "m-FO1"):
        if not cand.arity_ok(m):
            v.record("m-FO1", FAIL, count=len(cand.functions), expected=m + 1)
        else:
            rows = [[differentiate(f, s) for s in sys.chart.states] for f in cand.functions]
            r = matrix_rank_at(rows, sys.xstar, zc)
            v.record("m-FO1", PASS if r == m + 1 else FAIL, rank=r, expected=m + 1)

    with _guard(v, "m-FO2"):
        res = bundle.bryant()
        if res.status != "found":
            v.record("m-FO2", FAIL, note="no corank-one involutive subdistribution", bryant=res.conditions)
        else:
            bad = None
            status = PASS
            for vj in res.distribution.generators:
                for h in cand.functions:
                    e = lie_derivative(h, vj)
                    st = zc.status(e)
                    if st == "nonzero":
                        bad = (vj, h, e)
                        status = FAIL
                        break
                    if st == "unknown":
                        status = INCONCLUSIVE
                        bad = (vj, h, e)
                        break
                if bad:
                    break
            if bad:
                v.record("m-FO2", status, generator=bad[0], function=bad[1], value=bad[2])
            else:
                v.record("m-FO2", PASS, function_count=len(cand.functions),
                         expected_count=sys.n - (k - 1) * m)

    with _guard(v, "m-FO3-gate"):
        sset = singular_controls_m(sys, zc, bundle)
        _gate_records(v, "m-FO3-gate", sset, point, zc)

    if v.overall == PASS:
        v.record("differential-weight", INFO, weight=(k + 1) * (m + 1))
    return v


# ---------------------------------------------------------------------------
# The PDE systems whose solutions are the flat outputs (m = 1)
# ---------------------------------------------------------------------------


@dataclass
class FlatPde:
    """Symbolic first-order PDE system for x-flat outputs of a two-input
    system: annihilation by the nested characteristic fields plus an
    involutivity-completing field determined by phi0."""

    sys: ControlAffineSystem
    c_fields: list[VectorField]
    g: VectorField
    g_index: int
    bundle: GeometryBundle
    zc: ZeroCtx

    def describe(self) -> str:
        lines = ["first-stage conditions on phi0:"]
        for i, c in enumerate(self.c_fields, start=1):
            lines.append(f"  L_c{i} phi0 = 0   with c{i} = {c}")
        lines.append("  <d phi0, G^{k-2}>(x*) != 0")
        lines.append("second-stage conditions on phi1 (given phi0):")
        for i in range(1, len(self.c_fields) + 1):
            lines.append(f"  L_c{i} phi1 = 0")
        lines.append("  L_v phi1 = 0   with v = (L_g phi0)[c_top, g] - (L_[c_top,g] phi0) g,")
        lines.append(f"                 g = control field #{self.g_index}, c_top = c{len(self.c_fields)}")
        lines.append("  (d phi0 ^ d phi1 ^ d phi0' ^ d phi1')(x*, u*) != 0")
        return "\n".join(lines)

    def machine_form(self) -> dict:
        return {
            "c_fields": [[to_str(c) for c in f.comps] for f in self.c_fields],
            "g": [to_str(c) for c in self.g.comps],
            "g_index": self.g_index,
            "first_stage": [f"L_c{i} phi0 = 0" for i in range(1, len(self.c_fields) + 1)]
            + ["<d phi0, G^{k-2}>(x*) != 0"],
            "second_stage": [f"L_c{i} phi1 = 0" for i in range(1, len(self.c_fields) + 1)]
            + ["L_v phi1 = 0", "wedge nondegeneracy at (x*, u*)"],
        }

    def completing_field(self, phi0: Expr) -> VectorField:
        c_top = self.c_fields[-1]
        cg = lie_bracket(c_top, self.g)
        return self.g.scaled(mul(num(-1), lie_derivative(phi0, cg))) + cg.scaled(
            lie_derivative(phi0, self.g))

    def verify_flat1(self, phi0: Expr) -> Verdict:
        v = Verdict()
        zc = self.zc
        for i, c in enumerate(self.c_fields, start=1):
            e = lie_derivative(phi0, c)
            st = zc.status(e)
            v.record(f"Flat1 L_c{i} phi0", PASS if st == "zero" else
                     (FAIL if st == "nonzero" else INCONCLUSIVE), value=e)
        gkm2 = self.bundle.G(self.sys.k - 2)
        dphi = [substitute(lie_derivative(phi0, g), self.sys.xstar) for g in gkm2.generators]
        nz = [zc.status(e) for e in dphi]
        v.record("Flat1 <d phi0, G^{k-2}>(x*) != 0",
                 PASS if any(s == "nonzero" for s in nz) else FAIL,
                 pairings=[to_str(e) for e in dphi])
        if v.overall == PASS:
            with _guard(v, "Flat1 induced-L-involutive"):
                from .geometry import is_involutive

                vfield = self.completing_field(phi0)
                L = self.bundle.C(self.sys.k - 2).with_fields([vfield])
                v.record("Flat1 induced-L-involutive",
                         PASS if is_involutive(L, zc) else FAIL, v_field=vfield)
        return v

    def verify_flat2(self, phi0: Expr, phi1: Expr, ustar: Optional[dict] = None) -> Verdict:
        v = Verdict()
        zc = self.zc
        point = dict(self.sys.xstar)
        point.update(self.sys.ustar)
        point.update(ustar or {})
        field = self.sys.affine_field()
        funcs = [phi0, phi1, lie_derivative(phi0, field), lie_derivative(phi1, field)]
        with _guard(v, "Flat2 wedge"):
            _wedge_rank_record(v, "Flat2 wedge", self.sys, funcs, point, zc)
        for i, c in enumerate(self.c_fields, start=1):
            e = lie_derivative(phi1, c)
            st = zc.status(e)
            v.record(f"Flat2 L_c{i} phi1", PASS if st == "zero" else
                     (FAIL if st == "nonzero" else INCONCLUSIVE), value=e)
        e = lie_derivative(phi1, self.completing_field(phi0))
        st = zc.status(e)
        v.record("Flat2 L_v phi1", PASS if st == "zero" else
                 (FAIL if st == "nonzero" else INCONCLUSIVE), value=e)
        return v

    def solve(self, *_args, **_kwargs):
        raise UnsupportedOperation(
            "solving the flat-output PDE system is not supported; "
            "supply candidates and use verify_flat1 / verify_flat2")


def flat_pde_m1(sys: ControlAffineSystem, zc: ZeroCtx = DEFAULT_CTX,
                bundle: Optional[GeometryBundle] = None) -> FlatPde:
    """Assemble the nested characteristic fields c_1..c_{k-2} (ordered so
    C^i = span{c_1..c_i} and the top one leaves C^{k-3} at x*) and a
    transversal control field g."""
    if sys.m != 1:
        raise ValueError("flat_pde_m1 requires m = 1")
    bundle = bundle or GeometryBundle(sys, zc)
    k = sys.k
    c_fields: list[VectorField] = []
    for i in range(1, k - 1):
        ci = bundle.C(i)
        chosen = None
        base_rows = [list(c.comps) for c in c_fields]
        base_rank = matrix_rank_at(base_rows, sys.xstar, zc) if base_rows else 0
        for g in ci.generators:
            grown = matrix_rank_at(base_rows + [list(g.comps)], sys.xstar, zc)
            if grown == base_rank + 1:
                chosen = g
                break
        if chosen is None:
            raise InconclusiveError(f"cannot extend characteristic basis at level {i} at x*")
        c_fields.append(chosen)
    gi, g = _select_g(sys, bundle.C(k - 2), zc)
    return FlatPde(sys, c_fields, g, gi, bundle, zc)
