#!/usr/bin/env python3
"""Regenerate the fixture corpus and its golden reports.

Deterministic: file contents depend only on the seeds baked in below.
Run from the repository root:  python scripts/make_fixtures.py
"""

from __future__ import annotations

import contextlib
import io
import json
import sys
from fractions import Fraction
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from flatcheck.catalog import (  # noqa: E402
    chained,
    coin,
    counterexample_51,
    example_41,
    random_triangular_drift,
    scramble,
    state_names,
    triangular,
)
from flatcheck.cli import main as cli_main  # noqa: E402
from flatcheck.expr import parse_expr, sym, to_str  # noqa: E402
from flatcheck.sysfile import format_system_file, system_to_file  # noqa: E402

FIXDIR = ROOT / "fixtures"
GOLDEN = FIXDIR / "golden"

COMBOS = [(1, 3), (1, 4), (1, 5), (2, 3), (2, 4), (3, 3)]


def top_candidates(m: int) -> list:
    names = ["z0"] + (["z1"] if m == 1 else [f"z{i}_1" for i in range(1, m + 1)])
    return [sym(s) for s in names]


def write(name: str, text: str):
    path = FIXDIR / name
    path.write_text(text, encoding="utf-8")
    print(f"wrote {path.relative_to(ROOT)}")


def with_ustar(sys_obj, v0=Fraction(1)):
    us = {sys_obj.control_syms[0]: v0}
    for u in sys_obj.control_syms[1:]:
        us[u] = Fraction(0)
    return us


def main() -> int:
    FIXDIR.mkdir(exist_ok=True)
    GOLDEN.mkdir(exist_ok=True)

    # chained and triangular fixtures for every (m, k)
    for m, k in COMBOS:
        s = chained(m, k, name=f"ch{m}{k}")
        object.__setattr__(s, "ustar", with_ustar(s))
        sf = system_to_file(s, flat_output=top_candidates(m))
        write(f"ch{m}{k}.sys", format_system_file(sf, header=f"driftless {m}-chain, k={k}"))

        fs = random_triangular_drift(m, k, seed=100 + 10 * m + k)
        st = triangular(m, k, fs, name=f"tch{m}{k}")
        object.__setattr__(st, "ustar", with_ustar(st))
        sft = system_to_file(st, flat_output=top_candidates(m))
        write(f"tch{m}{k}.sys",
              format_system_file(sft, header=f"triangular drift over the {m}-chain, k={k} (seeded)"))

    # the two worked single-input systems
    s = triangular(1, 3, {(1, 1): parse_expr("z2^2", ["z2"])}, name="tch13_f1z2sq")
    object.__setattr__(s, "ustar", with_ustar(s))
    write("tch13_f1z2sq.sys",
          format_system_file(system_to_file(s, flat_output=top_candidates(1)),
                             header="k=3 triangular form with quadratic first drift entry"))

    s = example_41(4)
    object.__setattr__(s, "name", "tch1_example_4_1")
    object.__setattr__(s, "ustar", with_ustar(s))
    cand = [parse_expr("z1 - z0*z2", ["z0", "z1", "z2"]), sym("z2")]
    write("tch1_example_4_1.sys",
          format_system_file(system_to_file(s, flat_output=cand),
                             header="k=4 triangular form with linear-in-z0 first drift entry;\n"
                                    "candidate output pair degenerates where 1 - v0*z3 = 0"))

    s = counterexample_51()
    object.__setattr__(s, "name", "counterexample_5_1")
    object.__setattr__(s, "ustar", with_ustar(s))
    write("counterexample_5_1.sys",
          format_system_file(system_to_file(s, flat_output=[sym("z0"), sym("z1")]),
                             header="chained control part, non-triangular drift: flat but not\n"
                                    "equivalent to the triangular form"))

    # coin on a moving table: admissible motion with symbolic parameters
    c, d, e, x, y = (sym(v) for v in ("c", "d", "e", "x", "y"))
    co = coin(c * y + d, -(c * x) + e, params=("R", "c", "d", "e"))
    object.__setattr__(co, "name", "coin_admissible")
    object.__setattr__(co, "ustar", {"u0": Fraction(1), "u1": Fraction(1)})
    coin_cand = [
        parse_expr("x - R*phi*cos(theta)", ["x", "R", "phi", "theta"]),
        parse_expr("y - R*phi*sin(theta)", ["y", "R", "phi", "theta"]),
    ]
    write("coin_admissible.sys",
          format_system_file(system_to_file(co, flat_output=coin_cand),
                             header="vertical coin rolling without slipping on a table in\n"
                                    "constant-speed rotation about a fixed point (symbolic c, d, e)"))

    # same coin with bound parameters (golden flat-verify target)
    co2 = coin(y + 0, -x + 0, params=("R",))
    object.__setattr__(co2, "name", "coin_rotating")
    object.__setattr__(co2, "ustar", {"u0": Fraction(1), "u1": Fraction(1)})
    sf2 = system_to_file(co2, flat_output=coin_cand)
    sf2.param_values["R"] = Fraction(1)
    write("coin_rotating.sys",
          format_system_file(sf2, header="coin on a unit-rate rotating table, R = 1"))

    # scrambled pipeline fixtures
    base = chained(2, 3, name="ch23")
    object.__setattr__(base, "ustar", with_ustar(base))
    sc = scramble(base, seed=11)
    cand = [sc.pull_function(f) for f in top_candidates(2)]
    ssys = sc.system
    object.__setattr__(ssys, "name", "scrambled_ch23")
    object.__setattr__(ssys, "ustar", with_ustar(ssys))
    write("scrambled_ch23.sys",
          format_system_file(system_to_file(ssys, flat_output=cand),
                             header="2-chain k=3 pushed through a seeded polynomial\n"
                                    "diffeomorphism and invertible feedback (seed 11)"))

    fs = random_triangular_drift(1, 4, seed=3)
    t14 = triangular(1, 4, fs, name="tch14_seed3")
    sc2 = scramble(t14, seed=5)
    cand2 = [sc2.pull_function(f) for f in top_candidates(1)]
    ssys2 = sc2.system
    object.__setattr__(ssys2, "name", "scrambled_tch14")
    object.__setattr__(ssys2, "ustar", with_ustar(ssys2))
    write("scrambled_tch14.sys",
          format_system_file(system_to_file(ssys2, flat_output=cand2),
                             header="triangular k=4 system scrambled by a seeded polynomial\n"
                                    "diffeomorphism and invertible feedback (seeds 3/5)"))

    # golden reports
    golden_jobs = [(f"{p.stem}.check.json", ["check", str(p), "--json"])
                   for p in sorted(FIXDIR.glob("*.sys"))]
    golden_jobs += [
        ("tch1_example_4_1.flat-verify.json",
         ["flat-verify", str(FIXDIR / "tch1_example_4_1.sys"), "--json"]),
        ("counterexample_5_1.flat-verify.json",
         ["flat-verify", str(FIXDIR / "counterexample_5_1.sys"), "--json"]),
        ("ch15.singular.json", ["singular", str(FIXDIR / "ch15.sys"), "--json"]),
        ("tch13_f1z2sq.singular.json", ["singular", str(FIXDIR / "tch13_f1z2sq.sys"), "--json"]),
        ("ch23.singular.json", ["singular", str(FIXDIR / "ch23.sys"), "--json"]),
        ("scrambled_ch23.normalize.json",
         ["normalize", str(FIXDIR / "scrambled_ch23.sys"), "--json"]),
        ("ch14.roundtrip.json", ["roundtrip", str(FIXDIR / "ch14.sys"), "--json"]),
        ("ch13.explain.json", ["explain", str(FIXDIR / "ch13.sys"), "--json"]),
        ("ch23.explain.json", ["explain", str(FIXDIR / "ch23.sys"), "--json"]),
    ]
    for out_name, argv in golden_jobs:
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            code = cli_main(argv)
        payload = buf.getvalue()
        json.loads(payload)  # must be valid JSON
        (GOLDEN / out_name).write_text(payload, encoding="utf-8")
        print(f"wrote fixtures/golden/{out_name} (exit {code})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
