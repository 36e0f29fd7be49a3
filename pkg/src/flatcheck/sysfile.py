"""Plain-text system-definition files.

Line-oriented UTF-8 with LF endings and # comments:

    name: coin_admissible
    states: x y theta phi
    params: R c d e
    controls: u0 u1
    m: 1
    k: 3
    point: x=0 y=0 theta=0 phi=0 u0=1
    drift: <expr>, <expr>, <expr>, <expr>
    g0: 0, 0, 1, 0
    g1: R*cos(theta), R*sin(theta), 0, 1
    flat_output: <expr>, <expr>
    L: 0, 0, 0, 1

`params` entries may carry rational values (R=1). `L:` lines may repeat, one
generator per line. Expressions follow the shared grammar (see module expr);
commas separate vector components. Diagnostics carry 1-based line numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .expr import Expr, ParseError, parse_expr, to_str
from .geometry import Chart, Distribution, VectorField
from .systems import ControlAffineSystem, FlatOutputCandidate

__all__ = ["SysFileError", "SystemFile", "parse_system_file", "load_system_file", "format_system_file"]


class SysFileError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class SystemFile:
    name: str
    states: list[str]
    params: list[str]
    param_values: dict
    controls: list[str]
    m: int
    k: int
    point: dict
    drift: list[Expr]
    g: list[list[Expr]]
    flat_output: Optional[list[Expr]]
    L_generators: list[list[Expr]]

    def to_system(self) -> ControlAffineSystem:
        chart = Chart(states=tuple(self.states), params=tuple(self.params))
        xstar = {s: v for s, v in self.point.items() if s in self.states}
        xstar.update(self.param_values)
        ustar = {s: v for s, v in self.point.items() if s in self.controls}
        return ControlAffineSystem(
            chart=chart,
            drift=VectorField(chart, tuple(self.drift)),
            controls=tuple(VectorField(chart, tuple(row)) for row in self.g),
            m=self.m,
            k=self.k,
            control_syms=tuple(self.controls),
            xstar=xstar,
            ustar=ustar,
            name=self.name,
        )

    def candidate(self) -> Optional[FlatOutputCandidate]:
        if self.flat_output is None:
            return None
        sys = self.to_system()
        return FlatOutputCandidate(tuple(self.flat_output), dict(sys.ustar))

    def L_distribution(self) -> Optional[Distribution]:
        if not self.L_generators:
            return None
        chart = Chart(states=tuple(self.states), params=tuple(self.params))
        return Distribution(chart, [VectorField(chart, tuple(r)) for r in self.L_generators])


def _rational(tok: str, line: int) -> Fraction:
    try:
        return Fraction(tok)
    except (ValueError, ZeroDivisionError):
        raise SysFileError(f"not a rational number: {tok!r}", line) from None


def parse_system_file(text: str, name: str = "system") -> SystemFile:
    sections: dict = {}
    l_lines: list[tuple[int, str]] = []
    order: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise SysFileError("expected 'section: content'", lineno)
        key, _, content = line.partition(":")
        key = key.strip()
        content = content.strip()
        if key == "L":
            l_lines.append((lineno, content))
            continue
        if key in sections:
            raise SysFileError(f"duplicate section {key!r}", lineno)
        sections[key] = (lineno, content)
        order[key] = lineno

    def need(key: str) -> tuple[int, str]:
        if key not in sections:
            raise SysFileError(f"missing required section {key!r}", 0 if not sections else max(order.values()))
        return sections.pop(key)

    ln, content = need("states")
    states = content.split()
    if not states:
        raise SysFileError("states list is empty", ln)
    if len(set(states)) != len(states):
        raise SysFileError("duplicate state symbol", ln)

    params: list[str] = []
    param_values: dict = {}
    if "params" in sections:
        ln, content = sections.pop("params")
        for tok in content.split():
            if "=" in tok:
                p, _, val = tok.partition("=")
                params.append(p)
                param_values[p] = _rational(val, ln)
            else:
                params.append(tok)

    ln, content = need("m")
    try:
        m = int(content)
    except ValueError:
        raise SysFileError("m must be an integer", ln) from None
    ln, content = need("k")
    try:
        k = int(content)
    except ValueError:
        raise SysFileError("k must be an integer", ln) from None
    if len(states) != k * m + 1:
        raise SysFileError(f"n = {len(states)} but k*m+1 = {k * m + 1}", order["states"])

    if "controls" in sections:
        ln, content = sections.pop("controls")
        controls = content.split()
        if len(controls) != m + 1:
            raise SysFileError(f"expected {m + 1} control symbols", ln)
    else:
        controls = [f"u{i}" for i in range(m + 1)]
    clash = set(controls) & (set(states) | set(params))
    if clash:
        raise SysFileError(f"control symbols clash with states/params: {sorted(clash)}",
                           order.get("controls", order["states"]))

    symtab = set(states) | set(params)
    name_out = name
    if "name" in sections:
        _, name_out = sections.pop("name")

    def expr_list(key: str, ln: int, content: str, expected: int) -> list[Expr]:
        parts = [p.strip() for p in content.split(",")]
        if len(parts) != expected:
            raise SysFileError(f"{key}: expected {expected} comma-separated expressions, got {len(parts)}", ln)
        out = []
        for p in parts:
            try:
                out.append(parse_expr(p, symtab))
            except ParseError as e:
                raise SysFileError(f"{key}: {e}", ln) from None
        return out

    ln, content = need("drift")
    drift = expr_list("drift", ln, content, len(states))
    g = []
    for i in range(m + 1):
        ln, content = need(f"g{i}")
        g.append(expr_list(f"g{i}", ln, content, len(states)))

    point: dict = {}
    if "point" in sections:
        ln, content = sections.pop("point")
        for tok in content.split():
            if "=" not in tok:
                raise SysFileError(f"point binding must be name=value: {tok!r}", ln)
            s, _, val = tok.partition("=")
            if s not in symtab and s not in controls:
                raise SysFileError(f"point binds unknown symbol {s!r}", ln)
            point[s] = _rational(val, ln)
    missing = [s for s in states if s not in point]
    if missing:
        raise SysFileError(f"point leaves states unbound: {missing}",
                           order.get("point", order["states"]))

    flat_output = None
    if "flat_output" in sections:
        ln, content = sections.pop("flat_output")
        flat_output = expr_list("flat_output", ln, content, m + 1)

    lgens = [expr_list("L", ln, content, len(states)) for ln, content in l_lines]

    if sections:
        key = next(iter(sections))
        raise SysFileError(f"unknown section {key!r}", sections[key][0])

    return SystemFile(
        name=name_out,
        states=states,
        params=params,
        param_values=param_values,
        controls=controls,
        m=m,
        k=k,
        point=point,
        drift=drift,
        g=g,
        flat_output=flat_output,
        L_generators=lgens,
    )


def load_system_file(path: str) -> SystemFile:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    import os

    return parse_system_file(text, name=os.path.splitext(os.path.basename(path))[0])


def format_system_file(sf: SystemFile, header: str = "") -> str:
    lines = []
    if header:
        lines += [f"# {h}" for h in header.splitlines()]
    lines.append(f"name: {sf.name}")
    lines.append("states: " + " ".join(sf.states))
    if sf.params:
        toks = [f"{p}={sf.param_values[p]}" if p in sf.param_values else p for p in sf.params]
        lines.append("params: " + " ".join(toks))
    lines.append("controls: " + " ".join(sf.controls))
    lines.append(f"m: {sf.m}")
    lines.append(f"k: {sf.k}")
    lines.append("point: " + " ".join(f"{s}={v}" for s, v in sf.point.items()))
    lines.append("drift: " + ", ".join(to_str(e) for e in sf.drift))
    for i, row in enumerate(sf.g):
        lines.append(f"g{i}: " + ", ".join(to_str(e) for e in row))
    if sf.flat_output is not None:
        lines.append("flat_output: " + ", ".join(to_str(e) for e in sf.flat_output))
    for row in sf.L_generators:
        lines.append("L: " + ", ".join(to_str(e) for e in row))
    return "\n".join(lines) + "\n"


def system_to_file(sys: ControlAffineSystem, flat_output=None, L=None) -> SystemFile:
    point = {s: sys.xstar[s] for s in sys.chart.states}
    point.update(sys.ustar)
    param_values = {p: sys.xstar[p] for p in sys.chart.params if p in sys.xstar}
    return SystemFile(
        name=sys.name,
        states=list(sys.chart.states),
        params=list(sys.chart.params),
        param_values=param_values,
        controls=list(sys.control_syms),
        m=sys.m,
        k=sys.k,
        point=point,
        drift=list(sys.drift.comps),
        g=[list(g.comps) for g in sys.controls],
        flat_output=list(flat_output) if flat_output is not None else None,
        L_generators=[list(g.comps) for g in L.generators] if L is not None else [],
    )
