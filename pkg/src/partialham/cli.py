"""Command line front end.

    partialham derive MODEL [--degree N] [--with-logs] [--unknown-rates] [--ansatz FILE]
    partialham verify MODEL --xi EXPR --eta q=EXPR ... [--B EXPR] [--assume REL]
    partialham integrals MODEL [template flags] [--check EXPR]
    partialham simulate MODEL --ic q=1,p=0 --t1 10 --dt 0.001 [--param k=v,...] [--watch I]
    partialham casebook [CASE ...] [--no-numeric]

Exit status: 0 on success, 1 when a verification fails, 2 on usage or
parse errors.  Reports are JSON unless ``--format text``.
"""

from __future__ import annotations

import argparse
import json
import sys as _sys
from pathlib import Path
from typing import Sequence

from . import casebook
from .determine import SymmetryCandidate, determining_system, verify_candidate
from .dsl import load_model
from .expr import ParseError, Verdict, parse_expr, render
from .hamsys import ConstraintSet, ModelError, SystemModel
from .integrals import ConservationFailed, check_conservation, dependence_rank, integrals_from_solution
from .numerics import NonFinite, drift, integrate
from .solve import SolveError, default_template, solve_determining, template_from_json

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _pairs(text: str | None, what: str) -> dict[str, float]:
    out: dict[str, float] = {}
    if not text:
        return out
    for item in text.split(","):
        if "=" not in item:
            raise UsageError(f"{what}: expected name=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise UsageError(f"{what}: {v!r} is not a number") from None
    return out


def _template(sys: SystemModel, args):
    if args.ansatz:
        return template_from_json(sys, json.loads(Path(args.ansatz).read_text(encoding="utf-8")))
    return default_template(sys, args.degree, with_logs=args.with_logs, with_unknown_rates=args.unknown_rates)


def _emit(args, payload: dict, text: str) -> None:
    out = json.dumps(payload, indent=2) if args.format == "json" else text
    if args.out:
        Path(args.out).write_text(out + "\n", encoding="utf-8")
    else:
        print(out)


def _solve(sys: SystemModel, args):
    return solve_determining(determining_system(sys), _template(sys, args), seed=args.seed)


# ---------------------------------------------------------------------------
# subcommands


def cmd_derive(args) -> int:
    sys = load_model(args.model)
    ss = _solve(sys, args)
    payload = {"model": sys.name, "seed": args.seed, "solution": ss.to_json()}
    lines = [f"model {sys.name} (seed {args.seed})",
             "constraints: " + (", ".join(ss.constraints.describe()) or "none")]
    for i, op in enumerate(ss.operators, 1):
        c = op.candidate
        eta = ", ".join(f"eta_{q} = {render(e)}" for q, e in c.eta)
        lines.append(f"X{i}: xi = {render(c.xi)}, {eta}, B = {render(c.B)}  [{op.verdict.value}]")
    if ss.errors:
        lines += [f"error: {e}" for e in ss.errors]
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK if all(op.verdict is Verdict.ZERO for op in ss.operators) else EXIT_FAIL


def cmd_verify(args) -> int:
    sys = load_model(args.model)
    table = dict(sys.symbols)
    eta = {}
    for item in args.eta or []:
        if "=" not in item:
            raise UsageError(f"--eta expects state=expr, got {item!r}")
        q, e = item.split("=", 1)
        if q.strip() not in sys.states:
            raise UsageError(f"{q.strip()!r} is not a state of {sys.name}")
        eta[q.strip()] = parse_expr(e, table, strict=True)
    cand = SymmetryCandidate.of(parse_expr(args.xi, table, strict=True), eta,
                                parse_expr(args.B, table, strict=True))
    constraints = ConstraintSet(tuple(parse_expr(a, table, strict=True) for a in args.assume or []))
    rep = verify_candidate(sys, cand, constraints, seed=args.seed)
    payload = {"model": sys.name, "seed": args.seed, "candidate": cand.to_json(), **rep.to_json()}
    text = f"{'PASS' if rep.passed else 'FAIL'} ({rep.verdict.value})"
    for k, r, v in rep.residuals:
        text += f"\n  {k}: {render(r)}  [{v.value}]"
    _emit(args, payload, text)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_integrals(args) -> int:
    sys = load_model(args.model)
    if args.check:
        I = parse_expr(args.check, dict(sys.symbols), strict=True)
        constraints = ConstraintSet(tuple(parse_expr(a, dict(sys.symbols), strict=True)
                                          for a in args.assume or []))
        verdict, residual = check_conservation(sys, I, constraints, args.seed)
        payload = {"model": sys.name, "seed": args.seed, "I": render(I), "conservation": verdict.value,
                   "residual": render(residual)}
        _emit(args, payload, f"D_t(I) = {render(residual)}  [{verdict.value}]")
        return EXIT_OK if verdict is Verdict.ZERO else EXIT_FAIL
    ss = _solve(sys, args)
    try:
        fis = integrals_from_solution(sys, ss.operators, seed=args.seed)
    except ConservationFailed as exc:
        _emit(args, {"model": sys.name, "seed": args.seed, "error": str(exc)}, f"FAIL: {exc}")
        return EXIT_FAIL
    payload = {"model": sys.name, "seed": args.seed, "constraints": ss.constraints.describe(),
               "integrals": [fi.to_json() for fi in fis]}
    lines = [f"{fi.label} = {render(fi.I)}  [{fi.verdict.value}]" for fi in fis]
    if fis:
        dep = dependence_rank(sys, fis, seed=args.seed)
        payload["dependence"] = dep.to_json()
        lines.append(f"rank {dep.rank} of {dep.count}")
        lines += [f"  {render(r)} = 0  [{v.value}]" for r, v in dep.relations]
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


def _watched(sys: SystemModel, names: list[str], seed: int):
    known = {}
    if sys.name in casebook.CASES:
        known = casebook.expected_integrals(sys.name, seed)
    out = []
    for w in names:
        if w in known:
            out.append((w, known[w]))
        else:
            out.append((w, parse_expr(w, dict(sys.symbols), strict=True)))
    return out


def cmd_simulate(args) -> int:
    sys = load_model(args.model)
    ic = _pairs(args.ic, "--ic")
    params = _pairs(args.param, "--param")
    watched = _watched(sys, args.watch or [], args.seed)
    traj = integrate(sys, params, ic, args.t0, args.t1, args.dt)
    summary = {"model": sys.name, "seed": args.seed, "steps": len(traj) - 1, "h": traj.h,
               "params": traj.params, "drift": {}}
    for label, I in watched:
        summary["drift"][label] = drift(traj, I, sys).to_json()
    if args.out:
        traj.to_csv(args.out)
        print(json.dumps(summary, indent=2) if args.format == "json" else _drift_text(summary))
    else:
        traj.to_csv(_sys.stdout)
        if watched:
            print(json.dumps(summary) if args.format == "json" else _drift_text(summary), file=_sys.stderr)
    return EXIT_OK


def _drift_text(summary: dict) -> str:
    lines = [f"{summary['model']}: {summary['steps']} steps of {summary['h']:g}"]
    for k, d in summary["drift"].items():
        lines.append(f"  {k}: relative drift {d['relative']:.3e}, absolute {d['absolute']:.3e}")
    return "\n".join(lines)


def cmd_casebook(args) -> int:
    names = args.cases or list(casebook.BUILTIN)
    unknown = [n for n in names if n not in casebook.CASES]
    if unknown:
        raise UsageError(f"unknown case(s): {', '.join(unknown)}")
    reports = [casebook.run_case(n, args.seed, numeric=not args.no_numeric) for n in names]
    payload = {"seed": args.seed, "reports": [r.to_json() for r in reports],
               "pass": all(r.passed for r in reports)}
    lines = []
    for r in reports:
        lines.append(f"{'PASS' if r.passed else 'FAIL'} {r.case}")
        lines += [f"  {d}" for d in r.diffs]
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK if payload["pass"] else EXIT_FAIL


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--out")
    common.add_argument("--format", choices=("json", "text"), default="json")

    tmpl = argparse.ArgumentParser(add_help=False)
    tmpl.add_argument("--degree", type=int, default=2)
    tmpl.add_argument("--with-logs", action="store_true")
    tmpl.add_argument("--unknown-rates", action="store_true")
    tmpl.add_argument("--ansatz", help="JSON template file")

    p = argparse.ArgumentParser(prog="partialham", description="Partial Hamiltonian operators and first integrals")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("derive", parents=[common, tmpl], help="solve the determining system")
    d.add_argument("model")
    d.set_defaults(func=cmd_derive)

    v = sub.add_parser("verify", parents=[common], help="check a candidate operator")
    v.add_argument("model")
    v.add_argument("--xi", default="0")
    v.add_argument("--eta", action="append", metavar="STATE=EXPR")
    v.add_argument("--B", default="0")
    v.add_argument("--assume", action="append", metavar="REL", help="relation assumed = 0")
    v.set_defaults(func=cmd_verify)

    i = sub.add_parser("integrals", parents=[common, tmpl], help="first integrals and their dependence")
    i.add_argument("model")
    i.add_argument("--check", metavar="EXPR", help="only check conservation of EXPR")
    i.add_argument("--assume", action="append", metavar="REL")
    i.set_defaults(func=cmd_integrals)

    s = sub.add_parser("simulate", parents=[common], help="RK4 trajectory as CSV")
    s.add_argument("model")
    s.add_argument("--ic", required=True)
    s.add_argument("--param")
    s.add_argument("--t0", type=float, default=0.0)
    s.add_argument("--t1", type=float, required=True)
    s.add_argument("--dt", type=float, required=True)
    s.add_argument("--watch", action="append", metavar="LABEL_OR_EXPR")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("casebook", parents=[common], help="run the regression cases")
    c.add_argument("cases", nargs="*")
    c.add_argument("--no-numeric", action="store_true")
    c.set_defaults(func=cmd_casebook)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ParseError, ModelError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_USAGE
    except (ValueError, SolveError, NonFinite) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    raise SystemExit(main())
