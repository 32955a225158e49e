"""Command line interface.

Subcommands:

  eval        robustness of a formula over a signal CSV
  fuzz        randomized sign-agreement check (exact vs smooth)
  grad-check  finite-difference validation of the analytic gradients
  demo        canned scenarios (operators, locality, quadrotor)

Exit codes: 0 success, 1 checked property failed, 2 runtime failure,
64 usage error.  Output directories default to $STLGMSR_OUTDIR.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .formula import (
    FormulaError,
    GmsrDefaults,
    Signal,
    assign_params,
    coordinate_predicates,
    formula_from_json,
    parse_formula,
)
from .fuzz import random_case, run_sign_fuzz
from .gradients import fd_check
from .problems import (
    resolve_outdir,
    run_operators_experiment,
    run_quadrotor_experiment,
    run_reach_experiment,
)
from .semantics import DGMSR, DSR, DSSR, check_sat

USAGE_ERROR = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(USAGE_ERROR)


def read_signal_csv(path: str | Path) -> tuple[Signal, list[str]]:
    """Signal CSV with header t,x1,..,xn; returns the signal and the
    column names (usable as predicate names)."""
    lines = Path(path).read_text().strip().splitlines()
    if not lines:
        raise FormulaError(f"empty signal file {path}")
    header = [c.strip() for c in lines[0].split(",")]
    if not header or header[0] != "t":
        raise FormulaError("signal CSV must start with a 't' column")
    names = header[1:]
    rows = []
    for line in lines[1:]:
        vals = [float(v) for v in line.split(",")]
        rows.append(vals[1:])
    return Signal(np.array(rows)), names


def _signal_predicates(names: list[str]):
    # each column doubles as a named predicate and a positional p{i} alias
    preds = coordinate_predicates(len(names))
    table = {f"p{i}": f"p{i}" for i in range(len(names))}
    for i, name in enumerate(names):
        table[name] = f"p{i}"
    return preds, table


def _semantics_name(args) -> str:
    if getattr(args, "dssr", False):
        return "dssr"
    if getattr(args, "gmsr", False):
        return "gmsr"
    return "dsr"


def cmd_eval(args) -> int:
    signal, names = read_signal_csv(args.signal)
    preds, table = _signal_predicates(names)
    if args.formula_json:
        phi = formula_from_json(Path(args.formula_json).read_text())
    else:
        phi = parse_formula(args.formula, table)
    name = _semantics_name(args)
    if name == "dssr":
        semantics = DSSR(kappa=args.kappa)
    elif name == "gmsr":
        semantics = DGMSR()
        phi = assign_params(phi, GmsrDefaults(args.eps, args.p, args.weight))
    else:
        semantics = DSR()
    satisfied, value = check_sat(phi, preds, signal, args.at, semantics)
    print(
        json.dumps(
            {"semantics": name, "value": value, "satisfied": satisfied},
            sort_keys=True,
        )
    )
    if args.assert_sat and not satisfied:
        return 1
    return 0


def cmd_fuzz(args) -> int:
    report = run_sign_fuzz(
        args.count,
        seed=args.seed,
        band=args.band,
        max_depth=args.max_depth,
        max_K=args.max_k,
        max_n=args.max_n,
    )
    summary = {
        "checked": report.checked,
        "skipped_near_zero": report.skipped_near_zero,
        "disagreements": len(report.disagreements),
    }
    print(json.dumps(summary, sort_keys=True))
    if report.disagreements:
        outdir = resolve_outdir(args.outdir)
        out = outdir / "fuzz_disagreements.json"
        out.write_text(json.dumps(report.disagreements, sort_keys=True, indent=2))
        print(f"wrote counterexamples to {out}", file=sys.stderr)
        return 1
    return 0


def cmd_grad_check(args) -> int:
    name = _semantics_name(args)
    if name == "dsr":
        name = "gmsr"
    semantics = DSSR(kappa=args.kappa) if name == "dssr" else DGMSR()
    worst = 0.0
    for i in range(args.trials):
        case = random_case(args.seed + i, max_K=args.max_k, max_n=args.max_n)
        preds = coordinate_predicates(case.n)
        phi = assign_params(case.formula, GmsrDefaults())
        err = fd_check(phi, preds, case.signal, 1, semantics, h=args.step)
        worst = max(worst, err)
    print(
        json.dumps(
            {"semantics": name, "trials": args.trials, "max_error": worst},
            sort_keys=True,
        )
    )
    return 0 if worst <= args.tol else 1


def cmd_demo(args) -> int:
    outdir = resolve_outdir(args.outdir)
    if args.name == "operators":
        result = run_operators_experiment(outdir)
        print(json.dumps(result, sort_keys=True))
        return 0 if result["all_ok"] else 1
    if args.name == "locality":
        semantics_name = "dssr" if getattr(args, "dssr", False) else "gmsr"
        result = run_reach_experiment(semantics_name, outdir)
        print(json.dumps(result, sort_keys=True))
        if result["scp_status"] == "qp_failure":
            return 2
        if semantics_name == "gmsr":
            ok = result["satisfied"] and result["node_strictly_inside"]
        else:
            # the softmax weighting is expected to fail this one
            ok = (not result["node_strictly_inside"]) and result["smooth_value"] < 0.0
        return 0 if ok and result["constraints_ok"] else 1
    if args.name == "quadrotor":
        result = run_quadrotor_experiment(outdir)
        print(json.dumps(result, sort_keys=True))
        if result["scp_status"] == "qp_failure":
            return 2
        ok = (
            result["satisfied"]
            and result["constraints_ok"]
            and result["window_start"] is not None
        )
        return 0 if ok else 1
    raise FormulaError(f"unknown demo {args.name!r}")


def build_parser() -> _Parser:
    parser = _Parser(prog="stlgmsr", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_semantics_flags(p):
        group = p.add_mutually_exclusive_group()
        group.add_argument(
            "--dsr", action="store_true", help="exact min/max robustness (default)"
        )
        group.add_argument("--dssr", action="store_true", help="log-sum-exp smoothing")
        group.add_argument("--gmsr", action="store_true", help="generalized-mean smoothing")
        p.add_argument("--kappa", type=float, default=25.0, help="dssr sharpness")
        p.add_argument("--eps", type=float, default=1e-8, help="gmsr regularizer")
        p.add_argument("--p", type=int, default=1, help="gmsr mean power")
        p.add_argument("--weight", type=int, default=1, help="gmsr uniform weight")

    p_eval = sub.add_parser("eval", help="evaluate a formula over a signal CSV")
    group = p_eval.add_mutually_exclusive_group(required=True)
    group.add_argument("-f", "--formula", help="formula text, e.g. 'G[0,2](p0)'")
    group.add_argument("--formula-json", help="path to a formula JSON file")
    p_eval.add_argument("-s", "--signal", required=True, help="CSV with header t,x1..xn")
    p_eval.add_argument("--at", type=int, default=1, help="evaluation step (1-based)")
    p_eval.add_argument(
        "--assert-sat", action="store_true", help="exit 1 when not satisfied"
    )
    add_semantics_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_fuzz = sub.add_parser("fuzz", help="random sign-agreement check")
    p_fuzz.add_argument("--count", type=int, default=1000)
    p_fuzz.add_argument("--seed", type=int, default=0)
    p_fuzz.add_argument("--band", type=float, default=1e-6)
    p_fuzz.add_argument("--max-depth", type=int, default=4)
    p_fuzz.add_argument("--max-k", type=int, default=8)
    p_fuzz.add_argument("--max-n", type=int, default=3)
    p_fuzz.add_argument("--outdir", default=None)
    p_fuzz.set_defaults(func=cmd_fuzz)

    p_grad = sub.add_parser("grad-check", help="finite-difference gradient check")
    add_semantics_flags(p_grad)
    p_grad.add_argument("--trials", type=int, default=100)
    p_grad.add_argument("--step", type=float, default=1e-5)
    p_grad.add_argument("--tol", type=float, default=1e-4)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--max-k", type=int, default=8)
    p_grad.add_argument("--max-n", type=int, default=3)
    p_grad.set_defaults(func=cmd_grad_check)

    p_demo = sub.add_parser("demo", help="run a canned scenario")
    p_demo.add_argument("name", choices=["operators", "locality", "quadrotor"])
    p_demo.add_argument("--outdir", default=None)
    add_semantics_flags(p_demo)
    p_demo.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code = args.func(args)
    except (FormulaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return code


if __name__ == "__main__":
    sys.exit(main())
