"""Control-affine systems, verdicts, and flat-output candidates."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from .expr import Expr, Fraction, free_symbols, sym, to_str
from .geometry import Chart, Distribution, VectorField

__all__ = [
    "ControlAffineSystem",
    "ConditionRecord",
    "Verdict",
    "FlatOutputCandidate",
    "PASS",
    "FAIL",
    "INCONCLUSIVE",
    "NOT_APPLICABLE",
    "INFO",
]

PASS = "pass"
FAIL = "fail"
INCONCLUSIVE = "inconclusive"
NOT_APPLICABLE = "not_applicable"
INFO = "info"


@dataclass(frozen=True)
class ControlAffineSystem:
    """dx/dt = f(x) + sum_i u_i g_i(x) with n = k*m + 1 states and m+1 controls.

    `xstar` is the distinguished point (all states bound, exact rationals);
    `ustar` optionally binds some or all control symbols.
    """

    chart: Chart
    drift: VectorField
    controls: tuple[VectorField, ...]
    m: int
    k: int
    control_syms: tuple[str, ...]
    xstar: dict
    ustar: dict = field(default_factory=dict)
    name: str = "system"

    def __post_init__(self):
        n = self.chart.dim
        if n != self.k * self.m + 1:
            raise ValueError(f"dimension mismatch: n={n} but k*m+1={self.k * self.m + 1}")
        if len(self.controls) != self.m + 1:
            raise ValueError(f"expected {self.m + 1} control fields, got {len(self.controls)}")
        if len(self.control_syms) != self.m + 1:
            raise ValueError("one control symbol per control field required")
        if self.drift.chart != self.chart or any(g.chart != self.chart for g in self.controls):
            raise ValueError("drift/control chart mismatch")
        missing = [s for s in self.chart.states if s not in self.xstar]
        if missing:
            raise ValueError(f"xstar leaves states unbound: {missing}")

    @property
    def n(self) -> int:
        return self.chart.dim

    def g_distribution(self) -> Distribution:
        return Distribution(self.chart, self.controls)

    def affine_field(self) -> VectorField:
        """f + sum u_i g_i with the control symbols left symbolic."""
        out = self.drift
        for u, g in zip(self.control_syms, self.controls):
            out = out + g.scaled(sym(u))
        return out

    def linear_field(self) -> VectorField:
        out = self.controls[0].scaled(sym(self.control_syms[0]))
        for u, g in zip(self.control_syms[1:], self.controls[1:]):
            out = out + g.scaled(sym(u))
        return out

    def point(self, overrides: Optional[Mapping[str, Fraction]] = None) -> dict:
        pt = dict(self.xstar)
        pt.update(self.ustar)
        if overrides:
            pt.update(overrides)
        return pt


@dataclass
class ConditionRecord:
    cid: str
    status: str
    witness: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"id": self.cid, "status": self.status, "witness": self.witness}


@dataclass
class Verdict:
    """Per-condition records; overall is pass iff every non-informational
    record passes, fail as soon as one fails (witness required)."""

    records: list[ConditionRecord] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def record(self, cid: str, status: str, **witness) -> ConditionRecord:
        rec = ConditionRecord(cid, status, {k: _printable(v) for k, v in witness.items()})
        self.records.append(rec)
        return rec

    def note(self, text: str):
        self.notes.append(text)

    def merge(self, other: "Verdict", prefix: str = ""):
        for r in other.records:
            self.records.append(ConditionRecord(prefix + r.cid, r.status, r.witness))
        self.notes.extend(other.notes)

    @property
    def overall(self) -> str:
        statuses = [r.status for r in self.records if r.status not in (INFO, NOT_APPLICABLE)]
        if any(s == FAIL for s in statuses):
            return FAIL
        if any(s == INCONCLUSIVE for s in statuses):
            return INCONCLUSIVE
        return PASS

    @property
    def passed(self) -> bool:
        return self.overall == PASS

    def as_dict(self) -> dict:
        return {
            "overall": self.overall,
            "conditions": [r.as_dict() for r in self.records],
            "notes": list(self.notes),
        }

    def __str__(self):
        lines = [f"overall: {self.overall}"]
        for r in self.records:
            w = "" if not r.witness else "  " + ", ".join(f"{k}={v}" for k, v in r.witness.items())
            lines.append(f"  [{r.status:>12}] {r.cid}{w}")
        lines += [f"  note: {t}" for t in self.notes]
        return "\n".join(lines)


def _printable(v):
    if isinstance(v, Expr):
        return to_str(v)
    if isinstance(v, VectorField):
        return str(v)
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_printable(x) for x in v]
    if isinstance(v, dict):
        return {k: _printable(x) for k, x in v.items()}
    return v


@dataclass(frozen=True)
class FlatOutputCandidate:
    """m+1 state functions plus an optional (partial) control point."""

    functions: tuple[Expr, ...]
    ustar: dict = field(default_factory=dict)

    def arity_ok(self, m: int) -> bool:
        return len(self.functions) == m + 1
