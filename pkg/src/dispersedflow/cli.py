"""Command line interface: ``dispersedflow {run,converge,compare}``.

Options may also come from a configuration file with a ``[run]`` section of
``key = value`` lines using the option names (for example ``tau = 0.05`` or
``resolution = 16, 32``); command line flags take precedence.
"""
from __future__ import annotations

import argparse
import configparser
import json
import os
import sys

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _resolution(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid resolution {text!r}") from None


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("case", help="benchmark name")
    common.add_argument("--config", help="configuration file with a [run] section")
    common.add_argument("--scheme", choices=("fractional_step", "monolithic"))
    common.add_argument("--tau", type=float)
    common.add_argument("--T", type=float, dest="T")
    common.add_argument("--resolution", type=_resolution, help='mesh counts, e.g. "16,32"')
    common.add_argument("--full-resolution", action="store_true", default=None,
                        help="use the case's full-scale mesh instead of the desk-scale default")
    common.add_argument("--velocity-degree", type=int, choices=(1, 2))
    common.add_argument("--pressure-degree", type=int, choices=(1, 2))
    common.add_argument("--formulation", choices=("sqrt_variable", "bounded_variable", "raw"))
    common.add_argument("--transport-degree", type=int, choices=(1, 2))
    common.add_argument("--chi", type=int, choices=(0, 1))
    common.add_argument("--drag-cap", type=float)
    common.add_argument("--rtol", type=float)
    common.add_argument("--implicit-viscous", action="store_true", default=None)
    common.add_argument("--monolithic-solver", choices=("direct", "gmres"))
    common.add_argument("--cadence", type=int, help="VTK snapshot every n steps (0: none)")
    common.add_argument("--output-dir", help="output directory (default: $DISPERSEDFLOW_OUTPUT/<case>/<scheme>)")
    common.add_argument("--seed", type=int)
    common.add_argument("--deterministic", action="store_true", help="single-threaded linear algebra")

    p = argparse.ArgumentParser(prog="dispersedflow", description="Dispersed multiphase flow solver")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="run one case to its final time")
    r.add_argument("--steps", type=int, help="stop after this many steps")
    c = sub.add_parser("converge", parents=[common], help="temporal refinement study")
    c.add_argument("--refinements", type=int, default=4)
    c.add_argument("--fit-points", type=int, default=4)
    sub.add_parser("compare", parents=[common], help="fractional-step versus monolithic run")
    return p


def _from_file(path: str) -> dict:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if not parser.read(path, encoding="utf-8"):
        raise FileNotFoundError(path)
    if "run" not in parser:
        raise ValueError(f"{path}: missing [run] section")
    sec = parser["run"]
    conv = {
        "scheme": str, "tau": float, "T": float, "resolution": _resolution, "velocity_degree": int,
        "pressure_degree": int, "formulation": str, "transport_degree": int, "chi": int, "drag_cap": float,
        "rtol": float, "implicit_viscous": lambda s: sec.getboolean("implicit_viscous"),
        "full_resolution": lambda s: sec.getboolean("full_resolution"),
        "monolithic_solver": str, "cadence": int, "output_dir": str, "seed": int,
    }
    out = {}
    for key, raw in sec.items():
        name = key.replace("-", "_")
        name = "T" if name == "t" else name
        if name not in conv:
            raise ValueError(f"{path}: unknown option {key!r}")
        out[name] = conv[name](raw)
    return out


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.deterministic:
        for var in _THREAD_VARS:
            os.environ[var] = "1"
    from . import diagnostics
    from .cases import CASES
    from .driver import RunConfig, compare, converge, run
    from .fractional_step import SimulationError

    if args.case not in CASES:
        print(f"error: unknown case {args.case!r}; available cases: {', '.join(sorted(CASES))}", file=sys.stderr)
        return 2
    try:
        values = _from_file(args.config) if args.config else {}
        for name in RunConfig.field_names():
            v = getattr(args, name, None)
            if v is not None and name != "case":
                values[name] = v
        config = RunConfig(case=args.case, **values)
    except (ValueError, TypeError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2

    try:
        if args.command == "run":
            res = run(config, n_steps=args.steps)
            print(json.dumps(res.summary, indent=2, sort_keys=True, default=str))
            flagged = res.summary.get("ledger", {}).get("flagged_steps", [])
            return 1 if flagged else 0
        if args.command == "converge":
            table, orders = converge(config, args.refinements, args.fit_points)
            print("tau," + ",".join(diagnostics.ERROR_KINDS))
            for tau, rep in table:
                print(f"{tau:.6g}," + ",".join(f"{getattr(rep, k):.6e}" for k in diagnostics.ERROR_KINDS))
            if orders:
                print("order," + ",".join(f"{orders[k]:.3f}" for k in diagnostics.ERROR_KINDS))
            return 0
        report = compare(config)
        print(json.dumps(report["differences"], indent=2, sort_keys=True))
        return 0
    except SimulationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
