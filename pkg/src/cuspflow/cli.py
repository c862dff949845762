"""Command line entry point.

Subcommands:
    simulate --config run.cfg          time-march a configured run
    mms --equation vr --p 5,6,7        manufactured-solution convergence table
    constants --name sobolev_s0 ...    functional-inequality constant sweep
    verify --run out/run1              re-check a finished run's artifacts

Exit codes: 0 success, 1 verification failure, 2 config error,
3 numeric/solver error.  Failures emit a one-line JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import load_config
from .domain import build_domain, generate_grid
from .errors import (
    ConfigError,
    CuspflowError,
    NumericError,
    ParameterError,
    ResourceError,
    SolverError,
    StepSizeError,
)

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _fail(code: int, message: str, **extra) -> int:
    payload = {"error": message, "exit_code": code}
    payload.update(extra)
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def _parse_int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _parse_float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cuspflow", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a configured simulation")
    sim.add_argument("--config", required=True, help="flat key = value config file")

    mms = sub.add_parser("mms", help="manufactured-solution convergence tables")
    mms.add_argument("--equation", required=True, choices=("vr", "v3", "h", "omega"))
    mms.add_argument("--p", default="4,5,6", help="comma list of refinements")
    mms.add_argument("--m", type=int, default=1)
    mms.add_argument("--beta", type=float, default=1.1)
    mms.add_argument("--mode", choices=("space", "time"), default="space",
                     help="parabolic equations only")
    mms.add_argument("--dt-list", default="8e-4,4e-4,2e-4",
                     help="comma list of dt for --mode time")
    mms.add_argument("--out", default="-", help="output CSV path ('-' = stdout)")

    con = sub.add_parser("constants", help="inequality-constant sweeps")
    con.add_argument("--name", required=True,
                     choices=("poincare_slab", "sobolev_s0", "weighted_sobolev_Cs"))
    con.add_argument("--m-list", default="2,3,4,5")
    con.add_argument("--beta", type=float, default=1.1)
    con.add_argument("--p", type=int, default=3)
    con.add_argument("--n", type=int, default=512, help="poincare_slab grid points")
    con.add_argument("--seed", type=int, default=0)
    con.add_argument("--n-starts", type=int, default=20)
    con.add_argument("--constraint", default="zero_on_H",
                     choices=("zero_on_H", "zero_column_mean"))
    con.add_argument("--out", default="-")

    ver = sub.add_parser("verify", help="re-check a finished run")
    ver.add_argument("--run", required=True, help="run output directory")
    return ap


def _emit(text: str, out: str):
    if out == "-":
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def _cmd_simulate(args) -> int:
    from .run import simulate

    cfg = load_config(args.config)
    simulate(cfg)
    return EXIT_OK


def _cmd_mms(args) -> int:
    from .mms import (
        elliptic_convergence,
        format_table,
        orders,
        parabolic_space_convergence,
        parabolic_time_convergence,
    )

    p_list = _parse_int_list(args.p)
    if args.equation in ("vr", "v3"):
        rows = elliptic_convergence(args.equation, args.m, args.beta, p_list)
        label = "p"
    elif args.mode == "space":
        rows = parabolic_space_convergence(args.equation, p_list, m=args.m,
                                           beta=args.beta)
        label = "p"
    else:
        rows = parabolic_time_convergence(
            args.equation, _parse_float_list(args.dt_list), m=args.m, beta=args.beta
        )
        label = "dt"
    _emit(format_table(rows, orders(rows), label), args.out)
    return EXIT_OK


def _cmd_constants(args) -> int:
    from .inequalities import (
        estimate_poincare,
        estimate_sobolev_s0,
        estimate_weighted_sobolev_Cs,
    )

    lines = ["name,m,beta,refinement,estimate,iterations"]
    if args.name == "poincare_slab":
        value = estimate_poincare(1.0, args.n)
        lines.append(f"poincare_slab,0,{args.beta},{args.n},{repr(value)},0")
    else:
        for m in _parse_int_list(args.m_list):
            domain = build_domain(m, args.beta)
            grid = generate_grid(domain, args.p)
            if args.name == "sobolev_s0":
                est = estimate_sobolev_s0(
                    grid, args.constraint, seed=args.seed, n_starts=args.n_starts
                )
            else:
                est = estimate_weighted_sobolev_Cs(
                    grid, seed=args.seed, n_starts=args.n_starts
                )
            lines.append(
                f"{est.name},{est.m},{est.beta},{est.refinement},"
                f"{repr(est.value)},{est.iterations}"
            )
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .run import verify_run

    rep = verify_run(args.run)
    if rep.ok:
        print(json.dumps({"verified": True, "run": args.run}, sort_keys=True))
        return EXIT_OK
    return _fail(EXIT_VERIFY_FAILED, "verification failed", failures=rep.failures)


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "mms":
            return _cmd_mms(args)
        if args.command == "constants":
            return _cmd_constants(args)
        if args.command == "verify":
            return _cmd_verify(args)
        return _fail(EXIT_CONFIG, f"unknown command {args.command!r}")
    except ConfigError as exc:
        extra = {"line": exc.line} if exc.line is not None else {}
        return _fail(EXIT_CONFIG, str(exc), **extra)
    except ParameterError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except (SolverError, NumericError, StepSizeError, ResourceError) as exc:
        return _fail(EXIT_NUMERIC, str(exc))
    except CuspflowError as exc:
        return _fail(EXIT_NUMERIC, str(exc))


def entry():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    entry()
