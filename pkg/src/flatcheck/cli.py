"""Command-line interface and machine-readable reports.

Subcommands: check, flat-verify, singular, normalize, roundtrip, explain.
Exit codes: 0 pass, 1 fail, 2 inconclusive, 3 input error.  Reports are
schema-stable JSON (flatcheck-report/1) under --json; identical inputs and
seed produce byte-identical reports (timings only appear under --timings).
"""

from __future__ import annotations

import argparse
import json
import sys as _sys
import time
from fractions import Fraction
from typing import Optional

from . import __version__
from .expr import ParseError, parse_expr, to_str
from .geometry import InconclusiveError, ZeroCtx
from .systems import ControlAffineSystem, FlatOutputCandidate, Verdict, PASS, FAIL, INCONCLUSIVE
from .sysfile import SysFileError, load_system_file
from .flatness import (
    GeometryBundle,
    UnsupportedOperation,
    check,
    flat_pde_m1,
    singular_controls_m,
    singular_controls_m1,
    u_char,
    verify_flat_output_lin_m1,
    verify_flat_output_m1,
    verify_minimal_flat_output_m,
)
from .normalform import (
    DegenerateCandidateError,
    build_chained_coordinates,
    propose_annihilating_functions,
    verify_chained_structure,
    verify_triangular_drift,
)
from .paramcheck import (
    IntegrationBlowup,
    NumericSystem,
    integrate,
    reconstruct,
    relative_error,
)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_INCONCLUSIVE = 2
EXIT_INPUT_ERROR = 3

_EXIT_BY_OVERALL = {PASS: EXIT_PASS, FAIL: EXIT_FAIL, INCONCLUSIVE: EXIT_INCONCLUSIVE}


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("file", help="system definition file")
    p.add_argument("--seed", type=int, default=0, help="zero-test sampling seed (default 0)")
    p.add_argument("--budget", type=int, default=8, help="zero-test sample budget (default 8)")
    p.add_argument("--json", action="store_true", help="emit the JSON report")
    p.add_argument("--timings", action="store_true", help="include wall-clock timings in the report")
    p.add_argument("--point-override", action="append", default=[], metavar="SYM=VALUE",
                   help="override a point binding (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flatcheck", description=__doc__)
    ap.add_argument("--version", action="version", version=f"flatcheck {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, hlp in (
        ("check", "decide static feedback equivalence to the triangular chained-compatible form"),
        ("flat-verify", "verify the file's flat_output candidate"),
        ("singular", "compute singular control sets"),
        ("normalize", "build and verify chained-form coordinates and feedback"),
        ("roundtrip", "integrate the system and reconstruct it from its flat outputs"),
        ("explain", "print the flat-output PDE systems symbolically"),
    ):
        p = sub.add_parser(name, help=hlp)
        _add_common(p)
        if name == "flat-verify":
            p.add_argument("--linear", action="store_true",
                           help="verify against the control-linear part (drift dropped)")
        if name == "roundtrip":
            p.add_argument("--T", type=float, default=1.0, help="horizon (default 1.0)")
            p.add_argument("--h", type=float, default=1e-3, help="step size (default 1e-3)")
            p.add_argument("--control", action="append", default=[],
                           help="control signal expression in t (repeatable, one per input)")
            p.add_argument("--csv", default=None, help="export the trajectory to CSV")
    return ap


def _report_skeleton(args, command: str) -> dict:
    import os

    return {
        "schema": "flatcheck-report/1",
        "version": __version__,
        "command": command,
        "file": os.path.basename(args.file),
        "seed": args.seed,
        "budget": args.budget,
    }


def _apply_overrides(sf, overrides):
    for tok in overrides:
        if "=" not in tok:
            raise SysFileError(f"--point-override must be SYM=VALUE: {tok!r}", 0)
        s, _, val = tok.partition("=")
        if s not in set(sf.states) | set(sf.params) | set(sf.controls):
            raise SysFileError(f"--point-override binds unknown symbol {s!r}", 0)
        sf.point[s] = Fraction(val)


def _emit(report: dict, args, text_lines: list[str]) -> None:
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        for line in text_lines:
            print(line)


def _verdict_lines(v_dict: dict) -> list[str]:
    lines = [f"overall: {v_dict['overall']}"]
    for rec in v_dict["conditions"]:
        extra = ""
        if rec["witness"]:
            extra = "  " + json.dumps(rec["witness"], sort_keys=True, default=str)
        lines.append(f"  [{rec['status']:>14}] {rec['id']}{extra}")
    for nt in v_dict.get("notes", []):
        lines.append(f"  note: {nt}")
    return lines


def _load(args):
    sf = load_system_file(args.file)
    _apply_overrides(sf, args.point_override)
    return sf


def cmd_check(args) -> int:
    zc = ZeroCtx(args.seed, args.budget)
    sf = _load(args)
    sys = sf.to_system()
    t0 = time.perf_counter()
    verdict = check(sys, zc)
    report = _report_skeleton(args, "check")
    report.update(verdict.as_dict())
    if args.timings:
        report["timings_ms"] = {"check": round(1000 * (time.perf_counter() - t0), 3)}
    _emit(report, args, [f"system: {sys.name}  (m={sys.m}, k={sys.k}, n={sys.n})"]
          + _verdict_lines(report))
    return _EXIT_BY_OVERALL[verdict.overall]


def cmd_flat_verify(args) -> int:
    zc = ZeroCtx(args.seed, args.budget)
    sf = _load(args)
    sys = sf.to_system()
    cand = sf.candidate()
    if cand is None:
        raise SysFileError("flat-verify requires a flat_output section", 0)
    bundle = GeometryBundle(sys, zc)
    t0 = time.perf_counter()
    chk = check(sys, zc, bundle)
    if sys.m == 1:
        fn = verify_flat_output_lin_m1 if getattr(args, "linear", False) else verify_flat_output_m1
        verdict = fn(sys, cand, zc, bundle)
    else:
        verdict = verify_minimal_flat_output_m(sys, cand, zc, bundle)
    verdict.record("equivalence-check", "info", overall=chk.overall)
    report = _report_skeleton(args, "flat-verify")
    report["candidate"] = [to_str(f) for f in cand.functions]
    report.update(verdict.as_dict())
    if args.timings:
        report["timings_ms"] = {"flat_verify": round(1000 * (time.perf_counter() - t0), 3)}
    _emit(report, args, [f"system: {sys.name}", "candidate: " + ", ".join(report["candidate"])]
          + _verdict_lines(report))
    return _EXIT_BY_OVERALL[verdict.overall]


def cmd_singular(args) -> int:
    zc = ZeroCtx(args.seed, args.budget)
    sf = _load(args)
    sys = sf.to_system()
    bundle = GeometryBundle(sys, zc)
    chk = check(sys, zc, bundle)
    report = _report_skeleton(args, "singular")
    if chk.overall != PASS:
        report.update(chk.as_dict())
        _emit(report, args, [f"system: {sys.name}", "equivalence check did not pass:"]
              + _verdict_lines(chk.as_dict()))
        return _EXIT_BY_OVERALL[chk.overall]
    notes = []
    if sys.m == 1:
        cand = sf.candidate()
        ldist = sf.L_distribution()
        sset = singular_controls_m1(sys, L=ldist, candidate=cand, zc=zc,
                                    bundle=bundle, include_char=True)
        if cand is None and ldist is None:
            notes.append("top-level set omitted: it depends on a corank-two involutive "
                         "distribution L (supply flat_output or L); the full singular set "
                         "intersects the L-level over every admissible L")
    else:
        sset = singular_controls_m(sys, zc, bundle)
    report["overall"] = PASS
    report["singular"] = sset.as_dict()
    report["notes"] = notes
    lines = [f"system: {sys.name}", "singular control sets:"]
    for lev in sset.levels:
        eqs = ["  (empty: no singular controls)"] if not lev.equations else \
            ["  " + to_str(e) + " = 0" for e in lev.equations]
        lines.append(f"[{lev.label()}]")
        lines += eqs
    lines += [f"note: {n}" for n in notes]
    _emit(report, args, lines)
    return EXIT_PASS


def cmd_normalize(args) -> int:
    zc = ZeroCtx(args.seed, args.budget)
    sf = _load(args)
    sys = sf.to_system()
    bundle = GeometryBundle(sys, zc)
    chk = check(sys, zc, bundle)
    report = _report_skeleton(args, "normalize")
    if chk.overall != PASS:
        report.update(chk.as_dict())
        _emit(report, args, [f"system: {sys.name}", "equivalence check did not pass:"]
              + _verdict_lines(chk.as_dict()))
        return _EXIT_BY_OVERALL[chk.overall]
    cand = sf.candidate()
    if cand is not None:
        functions = list(cand.functions)
        source = "flat_output section"
    else:
        if sys.m < 2:
            raise UnsupportedOperation(
                "normalize for m = 1 needs a flat_output section (the corank-one "
                "subdistribution is not unique)")
        res = bundle.bryant()
        if res.status != "found":
            raise InconclusiveError("no corank-one involutive subdistribution found")
        functions = propose_annihilating_functions(res.distribution, sys.xstar, zc)
        source = "heuristic annihilating-function search"
    cmap, fb = build_chained_coordinates(sys, functions, zc, bundle)
    v1 = verify_chained_structure(sys, cmap, fb, zc)
    v2 = verify_triangular_drift(sys, cmap, zc, bundle)
    merged = Verdict()
    merged.merge(v1, prefix="chained: ")
    merged.merge(v2, prefix="drift: ")
    report.update(merged.as_dict())
    report["coordinate_map"] = cmap.as_dict()
    report["feedback"] = fb.as_dict()
    report["functions_source"] = source
    lines = [f"system: {sys.name}", f"functions from: {source}", "coordinate map:"]
    lines += [f"  {nm} = {to_str(e)}" for nm, e in cmap.entries]
    lines.append("feedback matrix rows (new controls in terms of old):")
    for i, row in enumerate(fb.matrix):
        lines.append(f"  u~{i} = " + " + ".join(f"({to_str(c)})*{u}"
                                                for c, u in zip(row, sys.control_syms)))
    lines += _verdict_lines(report)
    _emit(report, args, lines)
    return _EXIT_BY_OVERALL[merged.overall]


def cmd_roundtrip(args) -> int:
    zc = ZeroCtx(args.seed, args.budget)
    sf = _load(args)
    sys = sf.to_system()
    nsys = NumericSystem.from_control_affine(sys, zc)
    if args.control:
        if len(args.control) != sys.m + 1:
            raise SysFileError(f"--control must be given {sys.m + 1} times", 0)
        controls = [parse_expr(c, {"t"}) for c in args.control]
    else:
        controls = [parse_expr("1 + sin(t)/2", {"t"})]
        controls += [parse_expr(f"cos({i}*t)/2", {"t"}) for i in range(1, sys.m + 1)]
    z0 = [float(sys.xstar[s]) for s in sys.chart.states]
    t0 = time.perf_counter()
    traj = integrate(nsys, controls, z0, args.T, args.h)
    rec = reconstruct(nsys, traj.t, traj.phi)
    report = _report_skeleton(args, "roundtrip")
    report["T"] = args.T
    report["h"] = args.h
    report["controls"] = [to_str(c) for c in controls]
    report["events"] = [{"t": e.t, "level": e.level, "detail": e.detail} for e in rec.events]
    if rec.completed:
        errz = relative_error(rec.z, traj.z)
        errv = relative_error(rec.v, traj.v)
        ok = errz < 1e-6 and errv < 1e-6
        report["state_error"] = errz
        report["control_error"] = errv
        # every reconstruction uses derivatives of each output up to order k
        report["differential_weight"] = (sys.m + 1) * (sys.k + 1)
        report["overall"] = PASS if ok else FAIL
    else:
        report["overall"] = FAIL
    if args.csv:
        traj.export_csv(args.csv)
        report["csv"] = args.csv
    if args.timings:
        report["timings_ms"] = {"roundtrip": round(1000 * (time.perf_counter() - t0), 3)}
    lines = [f"system: {sys.name}  T={args.T} h={args.h}"]
    if rec.completed:
        lines.append(f"reconstruction errors: state {report['state_error']:.3e}, "
                     f"control {report['control_error']:.3e}")
        lines.append(f"differential weight: {report['differential_weight']}")
    for e in rec.events:
        lines.append(f"singular Jacobian at t={e.t:.6f} level {e.level}: {e.detail}")
    lines.append(f"overall: {report['overall']}")
    _emit(report, args, lines)
    return _EXIT_BY_OVERALL[report["overall"]]


def cmd_explain(args) -> int:
    zc = ZeroCtx(args.seed, args.budget)
    sf = _load(args)
    sys = sf.to_system()
    bundle = GeometryBundle(sys, zc)
    report = _report_skeleton(args, "explain")
    lines = [f"system: {sys.name}  (m={sys.m}, k={sys.k})"]
    if sys.m == 1:
        pde = flat_pde_m1(sys, zc, bundle)
        report["pde"] = pde.machine_form()
        report["overall"] = PASS
        lines.append(pde.describe())
        lines.append("")
        lines.append("top-level singular set caveat: the candidate-independent set is the")
        lines.append("intersection of the L-level sets over every involutive corank-two L")
        lines.append("inside G^{k-2}; this tool reports membership per supplied L only.")
        report["notes"] = [
            "candidate-independent top-level singular set = intersection over all "
            "admissible L; reported per supplied L only"
        ]
    else:
        res = bundle.bryant()
        if res.status != "found":
            raise InconclusiveError("no corank-one involutive subdistribution found")
        gens = res.distribution.generators
        report["pde"] = {
            "L_generators": [[to_str(c) for c in g.comps] for g in gens],
            "equations": [f"L_v{j} phi_i = 0, 0 <= i <= {sys.m}" for j in range(1, len(gens) + 1)]
            + ["d phi0 ^ ... ^ d phi_m (x*) != 0"],
        }
        report["overall"] = PASS
        lines.append("minimal flat outputs solve, for every generator v_j of the")
        lines.append("corank-one involutive subdistribution L of G^{k-2}:")
        for j, g in enumerate(gens, start=1):
            lines.append(f"  L_v{j} phi_i = 0   with v{j} = {g}")
        lines.append("plus independence d phi0 ^ ... ^ d phi_m (x*) != 0;")
        lines.append(f"any solution tuple is a minimal flat output of differential "
                     f"weight {(sys.k + 1) * (sys.m + 1)}.")
    _emit(report, args, lines)
    return EXIT_PASS


_COMMANDS = {
    "check": cmd_check,
    "flat-verify": cmd_flat_verify,
    "singular": cmd_singular,
    "normalize": cmd_normalize,
    "roundtrip": cmd_roundtrip,
    "explain": cmd_explain,
}


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (SysFileError, FileNotFoundError, ParseError, ValueError,
            DegenerateCandidateError, UnsupportedOperation) as e:
        print(f"error: {e}", file=_sys.stderr)
        return EXIT_INPUT_ERROR
    except IntegrationBlowup as e:
        print(f"error: {e}", file=_sys.stderr)
        return EXIT_FAIL
    except InconclusiveError as e:
        print(f"inconclusive: {e}", file=_sys.stderr)
        return EXIT_INCONCLUSIVE


if __name__ == "__main__":
    raise SystemExit(main())
