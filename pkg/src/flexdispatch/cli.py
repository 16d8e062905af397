"""Batch command-line front end.

Subcommands:
  dispatch run   --case F --scenario F --variant std2|hybrid --out D [--threads N] [--seed S]
  dispatch mdp   --case F --scenario F --bus ID --out D
  dispatch stats --scenario F --bus ID --t K --n N --replicates R --out D [--case F]

Exit codes: 0 success, 2 input error, 3 infeasible, 4 non-converged.

Every flag can also come from an environment variable DISPATCH_<FLAG>
(e.g. DISPATCH_CASE, DISPATCH_OUT); precedence is flags > environment >
scenario-file defaults.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .coordinator import run
from .errors import DivergenceError, FlexDispatchError, InfeasibleError
from .exports import (write_manifest, write_mdp_csvs, write_solution_bundle,
                      write_stats_csv)
from .matpower import parse_matpower
from .mdp import effective_utility, solve_mdp
from .scenario import load_scenario
from .stats import apparent_power, replicate_study

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_NONCONVERGED = 4


def _env_default(name):
    return os.environ.get(f"DISPATCH_{name.upper()}")


def _add_common(parser, *names):
    specs = {
        "case": dict(help="Matpower case file (.m)"),
        "scenario": dict(help="scenario configuration file"),
        "out": dict(help="output directory"),
        "variant": dict(choices=["std2", "hybrid"], help="coupling algorithm variant"),
        "seed": dict(type=int, help="override the scenario seed"),
        "threads": dict(type=int, help="worker thread cap (default 1)"),
        "bus": dict(type=int, help="ensemble bus id"),
        "t": dict(type=int, help="time step (0..T)"),
        "n": dict(type=int, help="ensemble population size"),
        "replicates": dict(type=int, help="Monte-Carlo replicate count"),
    }
    for name in names:
        spec = specs[name]
        default = _env_default(name)
        if default is not None and "type" in spec:
            default = spec["type"](default)  # argparse only converts CLI values
        parser.add_argument(f"--{name}", default=default, **spec)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dispatch",
        description="Coordinated dispatch of flexible load ensembles on radial feeders.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="coupled ensemble + network optimization")
    _add_common(p_run, "case", "scenario", "variant", "out", "threads", "seed")

    p_mdp = sub.add_parser("mdp", help="single-ensemble optimization, no network")
    _add_common(p_mdp, "case", "scenario", "bus", "out", "seed")

    p_stats = sub.add_parser("stats", help="aggregate-consumption statistics")
    _add_common(p_stats, "scenario", "bus", "t", "n", "replicates", "out", "case", "seed")
    return parser


def _require_args(args, names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        flags = ", ".join(f"--{n}" for n in missing)
        raise UsageError(f"missing required argument(s): {flags}")


class UsageError(Exception):
    pass


def _read(path, what):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} file not found: {path}")
    return p.read_text()


def _load_inputs(args, need_case=True):
    case_text = model = None
    if args.case:
        case_text = _read(args.case, "case")
        model = parse_matpower(case_text)
    elif need_case:
        raise UsageError("missing required argument(s): --case")
    scenario_text = _read(args.scenario, "scenario")
    scenario = load_scenario(scenario_text, model, seed_override=args.seed)
    return case_text, model, scenario_text, scenario


def cmd_run(args):
    _require_args(args, ["case", "scenario", "out"])
    case_text, model, scenario_text, scenario = _load_inputs(args)
    variant = args.variant or scenario.options.variant
    threads = int(args.threads) if args.threads else 1
    solution = run(model, scenario, variant=variant, threads=threads)
    out = Path(args.out)
    write_solution_bundle(out, model, solution, args.case, case_text,
                          args.scenario, scenario_text)
    status = "converged" if solution.converged else "NOT converged"
    print(f"{variant}: {status} after {solution.iterations} iterations; "
          f"objective {solution.objective:.6e}; bundle in {out}")
    if not solution.converged:
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_mdp(args):
    _require_args(args, ["case", "scenario", "bus", "out"])
    case_text, model, scenario_text, scenario = _load_inputs(args)
    if args.bus not in scenario.ensembles:
        raise UsageError(f"bus {args.bus} hosts no ensemble in this scenario")
    spec = scenario.ensembles[args.bus]
    T = scenario.horizon
    zeros = np.zeros(T)
    base = model.base_mva
    u_eff = effective_utility(spec.energy_cost, zeros, zeros,
                              spec.p_alpha / base, spec.q_alpha / base)
    traj = solve_mdp(spec, u_eff)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_mdp_csvs(out, {args.bus: traj})
    spread = traj.rho.max(axis=1) - traj.rho.min(axis=1)
    summary = {
        "bus": args.bus,
        "states": spec.n_states,
        "horizon": T,
        "objective": traj.objective,
        "rho_spread_time_avg": float(spread.mean()),
        "rho_spread_max": float(spread.max()),
    }
    with open(out / "mdp_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(out, args.case, case_text, args.scenario, scenario_text,
                   "mdp", scenario.seed, scenario.options)
    print(f"bus {args.bus}: objective {traj.objective:.6e}, "
          f"mean rho spread {summary['rho_spread_time_avg']:.4f}; CSVs in {out}")
    return EXIT_OK


def cmd_stats(args):
    _require_args(args, ["scenario", "bus", "t", "n", "replicates", "out"])
    if args.replicates < 1:
        raise UsageError("--replicates must be at least 1")
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    case_text, model, scenario_text, scenario = _load_inputs(args, need_case=False)
    if args.bus not in scenario.ensembles:
        raise UsageError(f"bus {args.bus} hosts no ensemble in this scenario")
    spec = scenario.ensembles[args.bus]
    T = scenario.horizon
    if not (0 <= args.t <= T):
        raise UsageError(f"--t must be in 0..{T}")

    zeros = np.zeros(T)
    base = model.base_mva if model is not None else 1.0
    u_eff = effective_utility(spec.energy_cost, zeros, zeros,
                              spec.p_alpha / base, spec.q_alpha / base)
    traj = solve_mdp(spec, u_eff)
    rho_t = traj.rho[args.t]
    s_alpha = apparent_power(spec.p_alpha, spec.q_alpha)
    seed = scenario.seed if scenario.seed is not None else 0
    result = replicate_study(rho_t, s_alpha, args.n, args.replicates, seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_stats_csv(out, result)
    print(f"bus {args.bus} t={args.t}: analytic var {result['analytic_var']:.6e}, "
          f"empirical var {result['empirical_var']:.6e}, KS {result['ks_distance']:.4f}")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": cmd_run, "mdp": cmd_mdp, "stats": cmd_stats}
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except FlexDispatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
