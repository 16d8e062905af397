"""Solution bundle writers.

Every CSV uses a fixed documented header and shortest-round-trip float
formatting, so identical solutions serialize byte-identically. Wall-clock
fields (manifest timestamps, iteration-log millisecond columns) are the
only run-varying outputs.
"""

import hashlib
import json
import time
from pathlib import Path

from . import __version__
from ._kernels import BACKEND


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def git_blob_sha1(data: bytes) -> str:
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def write_mdp_csvs(out_dir, trajectories, prefix=""):
    """mdp_rho.csv: bus,t,state,rho (t = 0..T)
    mdp_transitions.csv: bus,t,from_state,to_state,P (t = 0..T-1)."""
    out_dir = Path(out_dir)
    rho_rows = []
    p_rows = []
    for bus, traj in trajectories.items():
        T = traj.horizon
        n = traj.rho.shape[1]
        for t in range(T + 1):
            for a in range(n):
                rho_rows.append((bus, t, a + 1, float(traj.rho[t, a])))
        for t in range(T):
            for b in range(n):
                for a in range(n):
                    p_rows.append((bus, t, b + 1, a + 1, float(traj.transition[t, a, b])))
    write_csv(out_dir / f"{prefix}mdp_rho.csv", ["bus", "t", "state", "rho"], rho_rows)
    write_csv(out_dir / f"{prefix}mdp_transitions.csv",
              ["bus", "t", "from_state", "to_state", "P"], p_rows)


def write_dispatch_csvs(out_dir, model, dispatch):
    """dispatch_bus.csv: t,bus,v2,p_inj,q_inj,p_c,q_c (t = 1..T)
    dispatch_flow.csv: t,from,to,p_flow,q_flow
    dispatch_loss.csv: t,loss."""
    out_dir = Path(out_dir)
    T = dispatch.v2.shape[0]
    bus_rows = []
    for k in range(T):
        for j, bus in enumerate(model.buses):
            bus_rows.append((k + 1, bus.bus_id, float(dispatch.v2[k, j]),
                             float(dispatch.p_ens[k, j]), float(dispatch.q_ens[k, j]),
                             float(dispatch.p_ctrl[k, j]), float(dispatch.q_ctrl[k, j])))
    write_csv(out_dir / "dispatch_bus.csv",
              ["t", "bus", "v2", "p_inj", "q_inj", "p_c", "q_c"], bus_rows)

    flow_rows = []
    for k in range(T):
        for b, br in enumerate(model.branches):
            flow_rows.append((k + 1, br.from_bus, br.to_bus,
                              float(dispatch.p_flow[k, b]), float(dispatch.q_flow[k, b])))
    write_csv(out_dir / "dispatch_flow.csv",
              ["t", "from", "to", "p_flow", "q_flow"], flow_rows)

    write_csv(out_dir / "dispatch_loss.csv", ["t", "loss"],
              [(k + 1, float(dispatch.loss[k])) for k in range(T)])


def write_duals_csv(out_dir, ens_buses, duals):
    rows = []
    for i, bus in enumerate(ens_buses):
        for k in range(duals.lam_p.shape[1]):
            rows.append((bus, k + 1, float(duals.lam_p[i, k]), float(duals.lam_q[i, k])))
    write_csv(Path(out_dir) / "duals.csv", ["bus", "t", "lambda_p", "lambda_q"], rows)


def write_iteration_log(out_dir, history):
    rows = [(rec.iteration, float(rec.primal_max), float(rec.primal_l2),
             float(rec.dual_change), float(rec.step1_s * 1e3), float(rec.step2_s * 1e3))
            for rec in history]
    write_csv(Path(out_dir) / "iterations.csv",
              ["iter", "primal_max", "primal_l2", "dual_change", "step1_ms", "step2_ms"],
              rows)


def write_stats_csv(out_dir, result):
    write_csv(Path(out_dir) / "stats.csv",
              ["n", "analytic_mean", "analytic_var", "empirical_mean", "empirical_var",
               "ks_distance"],
              [(result["n"], result["analytic_mean"], result["analytic_var"],
                result["empirical_mean"], result["empirical_var"], result["ks_distance"])])


def write_manifest(out_dir, case_path, case_text, scenario_path, scenario_text,
                   variant, seed, options, timings=None, extra=None):
    manifest = {
        "case_path": str(case_path),
        "case_sha1": git_blob_sha1(case_text.encode()),
        "scenario_path": str(scenario_path) if scenario_path else None,
        "scenario_sha1": git_blob_sha1(scenario_text.encode()) if scenario_text else None,
        "variant": variant,
        "seed": seed,
        "tolerances": {"primal": options.tol_primal, "dual": options.tol_dual},
        "max_iter": options.max_iter,
        "package_version": __version__,
        "kernel_backend": BACKEND,
        "created_unix": time.time(),
        "timings_s": timings or {},
    }
    if extra:
        manifest.update(extra)
    with open(Path(out_dir) / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def write_solution_bundle(out_dir, model, solution, case_path, case_text,
                          scenario_path, scenario_text):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_mdp_csvs(out_dir, solution.trajectories)
    write_dispatch_csvs(out_dir, model, solution.dispatch)
    write_duals_csv(out_dir, list(solution.trajectories.keys()), solution.duals)
    write_iteration_log(out_dir, solution.duals.history)
    summary = {
        "objective": solution.objective,
        "converged": solution.converged,
        "iterations": solution.iterations,
    }
    write_manifest(out_dir, case_path, case_text, scenario_path, scenario_text,
                   solution.variant, solution.scenario.seed, solution.scenario.options,
                   timings=solution.timings, extra={"result": summary})
