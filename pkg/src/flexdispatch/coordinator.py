"""Iterative coupling of per-bus ensemble optimizations with per-step
network optimizations through Lagrange multipliers.

Two variants:

  std2   -- price iteration: the network step treats ensemble injections
            as free variables rewarded by the current multipliers, then
            the multipliers ascend along the coupling residual
            (ensemble-implied injection minus network-assigned injection).
  hybrid -- pinning iteration: the network step pins ensemble injections
            to their ensemble-implied values and the multipliers are read
            directly from the duals of the pinning constraints.

Per-ensemble solves are independent of each other, and per-step network
solves are independent of each other, so both phases can run in a thread
pool; multipliers are updated by the single coordinating thread after
each phase completes.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError
from .grid import GridModel, validate_radial
from .mdp import effective_utility, kl_stage_cost, solve_mdp
from .network import (NetworkOperators, dispatch_step_dual, dispatch_step_pinned,
                      losses, tree_flows)
from .scenario import ScenarioSpec


@dataclass
class IterationRecord:
    iteration: int
    primal_max: float
    primal_l2: float
    dual_change: float
    step1_s: float
    step2_s: float


@dataclass
class DualState:
    """Multipliers and residual bookkeeping for the coupled iteration."""

    lam_p: np.ndarray          # (n_ens, T)
    lam_q: np.ndarray
    delta: np.ndarray          # (n_ens, T) ascent step sizes
    iteration: int = 0
    history: list = field(default_factory=list)
    residual_p: np.ndarray = None  # last coupling residuals (n_ens, T)
    residual_q: np.ndarray = None


@dataclass
class NetworkDispatch:
    """Stacked per-step network solutions; axis 0 is time t = 1..T."""

    v2: np.ndarray       # (T, n_bus)
    p_ens: np.ndarray
    q_ens: np.ndarray
    p_ctrl: np.ndarray
    q_ctrl: np.ndarray
    p_flow: np.ndarray   # (T, n_branch)
    q_flow: np.ndarray
    loss: np.ndarray     # (T,)


@dataclass
class Solution:
    trajectories: dict         # bus id -> MdpTrajectory
    dispatch: NetworkDispatch
    duals: DualState
    objective: float
    converged: bool
    iterations: int
    timings: dict
    variant: str
    scenario: ScenarioSpec


class Coordinator:
    """Owns the per-run state shared by both iteration variants."""

    def __init__(self, model: GridModel, scenario: ScenarioSpec, threads: int = 1):
        self.model = model
        self.scenario = scenario
        self.threads = max(1, int(threads))
        self.order = validate_radial(model)
        self.ens_buses = list(scenario.ensembles.keys())
        base = model.base_mva
        ctrl_pu = {bus: tuple(np.asarray(box) / base)
                   for bus, box in scenario.control_bounds.items()}
        self.ops = NetworkOperators(model, self.order, ensemble_buses=self.ens_buses,
                                    control_bounds=ctrl_pu)
        self.p_alpha_pu = {b: scenario.ensembles[b].p_alpha / base for b in self.ens_buses}
        self.q_alpha_pu = {b: scenario.ensembles[b].q_alpha / base for b in self.ens_buses}
        hull_p = (np.array([self.p_alpha_pu[b].min() for b in self.ens_buses]),
                  np.array([self.p_alpha_pu[b].max() for b in self.ens_buses]))
        hull_q = (np.array([self.q_alpha_pu[b].min() for b in self.ens_buses]),
                  np.array([self.q_alpha_pu[b].max() for b in self.ens_buses]))
        self.ens_hull_pu = (hull_p, hull_q)
        self._warm = {}
        self.trajectories = {}
        self.steps = [None] * scenario.horizon

    def initial_state(self) -> DualState:
        T = self.scenario.horizon
        ne = len(self.ens_buses)
        opts = self.scenario.options
        if opts.delta == "auto":
            # per-unit curvature scaling: half the marginal-loss slope at each bus
            diag = np.diag(self.ops.R)[self.ops.ens_idx] if ne else np.zeros(0)
            delta = np.outer(diag, self.scenario.loss_weight)
        else:
            delta = np.full((ne, T), float(opts.delta))
        return DualState(lam_p=np.zeros((ne, T)), lam_q=np.zeros((ne, T)), delta=delta)

    # -- shared phases -----------------------------------------------------

    def _solve_ensembles(self, state, ensemble_order=None):
        order = ensemble_order if ensemble_order is not None else range(len(self.ens_buses))

        def solve_one(i):
            bus = self.ens_buses[i]
            spec = self.scenario.ensembles[bus]
            u_eff = effective_utility(spec.energy_cost, state.lam_p[i], state.lam_q[i],
                                      self.p_alpha_pu[bus], self.q_alpha_pu[bus])
            return solve_mdp(spec, u_eff)

        results = {}
        if self.threads > 1 and len(self.ens_buses) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                futures = {i: pool.submit(solve_one, i) for i in order}
                for i in order:
                    results[i] = futures[i].result()
        else:
            for i in order:
                results[i] = solve_one(i)
        for i in range(len(self.ens_buses)):
            self.trajectories[self.ens_buses[i]] = results[i]

        T = self.scenario.horizon
        pins_p = np.zeros((len(self.ens_buses), T))
        pins_q = np.zeros((len(self.ens_buses), T))
        for i, bus in enumerate(self.ens_buses):
            traj = self.trajectories[bus]
            pins_p[i] = traj.implied_p(self.p_alpha_pu[bus])
            pins_q[i] = traj.implied_p(self.q_alpha_pu[bus])
        return pins_p, pins_q

    def _solve_network(self, state, pins_p, pins_q, pinned, step_order=None):
        T = self.scenario.horizon
        order = step_order if step_order is not None else range(T)
        mu = self.scenario.loss_weight

        def solve_t(k):
            if pinned:
                return dispatch_step_pinned(self.ops, pins_p[:, k], pins_q[:, k],
                                            mu=mu[k], warm=self._warm.get(k))
            return dispatch_step_dual(self.ops, state.lam_p[:, k], state.lam_q[:, k],
                                      self.ens_hull_pu, mu=mu[k],
                                      warm=self._warm.get(k))

        results = {}
        if self.threads > 1 and T > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                futures = {k: pool.submit(solve_t, k) for k in order}
                for k in order:
                    results[k] = futures[k].result()
        else:
            for k in order:
                results[k] = solve_t(k)
        for k in range(T):
            step, warm = results[k]
            self.steps[k] = step
            self._warm[k] = warm

    # -- variants ----------------------------------------------------------

    def std2_iterate(self, state: DualState, ensemble_order=None, step_order=None):
        """Price step, network step, then gradient ascent on the multipliers."""
        t0 = time.perf_counter()
        pins_p, pins_q = self._solve_ensembles(state, ensemble_order)
        t1 = time.perf_counter()
        self._solve_network(state, pins_p, pins_q, pinned=False, step_order=step_order)
        t2 = time.perf_counter()

        net_p = np.stack([s.p_ens[self.ops.ens_idx] for s in self.steps], axis=1)
        net_q = np.stack([s.q_ens[self.ops.ens_idx] for s in self.steps], axis=1)
        r_p = pins_p - net_p
        r_q = pins_q - net_q
        step = state.delta
        if self.scenario.options.delta_schedule == "diminishing":
            step = state.delta / np.sqrt(state.iteration + 1.0)
        lam_p = state.lam_p + step * r_p
        lam_q = state.lam_q + step * r_q
        self._finish_iteration(state, lam_p, lam_q, r_p, r_q,
                               t1 - t0, t2 - t1)
        self._check_divergence(state)
        return state

    def hybrid_iterate(self, state: DualState, ensemble_order=None, step_order=None):
        """Pinned network step; multipliers come from the pinning duals."""
        t0 = time.perf_counter()
        pins_p, pins_q = self._solve_ensembles(state, ensemble_order)
        t1 = time.perf_counter()
        self._solve_network(state, pins_p, pins_q, pinned=True, step_order=step_order)
        t2 = time.perf_counter()

        lam_p = np.stack([s.lam_p for s in self.steps], axis=1)
        lam_q = np.stack([s.lam_q for s in self.steps], axis=1)
        ne, T = state.lam_p.shape
        zeros = np.zeros((ne, T))
        self._finish_iteration(state, lam_p, lam_q, zeros, zeros, t1 - t0, t2 - t1)
        return state

    def _finish_iteration(self, state, lam_p, lam_q, r_p, r_q, s1, s2):
        dual_change = 0.0
        if lam_p.size:
            dual_change = max(float(np.abs(lam_p - state.lam_p).max()),
                              float(np.abs(lam_q - state.lam_q).max()))
        primal_max = float(np.abs(np.stack([r_p, r_q])).max()) if r_p.size else 0.0
        primal_l2 = float(np.sqrt(np.sum(r_p ** 2) + np.sum(r_q ** 2)))
        state.lam_p = lam_p
        state.lam_q = lam_q
        state.residual_p = r_p
        state.residual_q = r_q
        state.iteration += 1
        state.history.append(IterationRecord(
            iteration=state.iteration, primal_max=primal_max, primal_l2=primal_l2,
            dual_change=dual_change, step1_s=s1, step2_s=s2))

    def _check_divergence(self, state):
        opts = self.scenario.options
        window = opts.divergence_window
        if state.iteration < 2 * window:
            return
        recent = [rec.primal_max for rec in state.history[-window:]]
        best = min(rec.primal_max for rec in state.history[:-window])
        if best > 0 and min(recent) > opts.divergence_factor * best:
            raise DivergenceError(
                f"primal residual grew from best {best:.3e} to "
                f"{min(recent):.3e} over the last {window} iterations",
                history=list(state.history))


def residuals(state: DualState):
    """(primal_max, primal_l2, dual_change) of the most recent iteration."""
    if state.iteration == 0 or not state.history:
        raise ValueError("no iterations recorded")
    rec = state.history[-1]
    return rec.primal_max, rec.primal_l2, rec.dual_change


def run(model: GridModel, scenario: ScenarioSpec, variant: str = None,
        threads: int = 1) -> Solution:
    """Iterate the chosen variant to convergence and assemble the solution.

    Convergence: coupling residual within tol_primal and multiplier change
    within tol_dual. Non-convergence is reported, not raised: the returned
    Solution carries converged=False and the residual history, with the
    multipliers rolled back to the best-residual iterate.
    """
    opts = scenario.options
    variant = (variant or opts.variant).lower()
    if variant not in ("std2", "hybrid"):
        raise ValueError(f"variant must be std2 or hybrid, got {variant!r}")

    coord = Coordinator(model, scenario, threads=threads)
    state = coord.initial_state()
    iterate = coord.std2_iterate if variant == "std2" else coord.hybrid_iterate

    t_start = time.perf_counter()
    converged = False
    best = None  # (metric, lam_p, lam_q)
    for _ in range(max(1, opts.max_iter)):
        iterate(state)
        rec = state.history[-1]
        metric = max(rec.primal_max, rec.dual_change)
        if best is None or metric < best[0]:
            best = (metric, state.lam_p.copy(), state.lam_q.copy())
        if rec.primal_max <= opts.tol_primal and rec.dual_change <= opts.tol_dual:
            converged = True
            break

    if not converged and best is not None and state.history:
        last = max(state.history[-1].primal_max, state.history[-1].dual_change)
        if best[0] < last:
            # report the best-residual iterate: rebuild its primal quantities
            state.lam_p, state.lam_q = best[1], best[2]
            pins_p, pins_q = coord._solve_ensembles(state)
            coord._solve_network(state, pins_p, pins_q, pinned=(variant == "hybrid"))
            if variant == "std2":
                net_p = np.stack([s.p_ens[coord.ops.ens_idx] for s in coord.steps], axis=1)
                net_q = np.stack([s.q_ens[coord.ops.ens_idx] for s in coord.steps], axis=1)
                state.residual_p = pins_p - net_p
                state.residual_q = pins_q - net_q
            else:
                state.residual_p = np.zeros_like(pins_p)
                state.residual_q = np.zeros_like(pins_q)
    total = time.perf_counter() - t_start

    dispatch = NetworkDispatch(
        v2=np.stack([s.v2 for s in coord.steps]),
        p_ens=np.stack([s.p_ens for s in coord.steps]),
        q_ens=np.stack([s.q_ens for s in coord.steps]),
        p_ctrl=np.stack([s.p_ctrl for s in coord.steps]),
        q_ctrl=np.stack([s.q_ctrl for s in coord.steps]),
        p_flow=np.stack([s.p_flow for s in coord.steps]),
        q_flow=np.stack([s.q_flow for s in coord.steps]),
        loss=np.array([s.loss for s in coord.steps]),
    )
    objective = integrated_objective(coord, dispatch)
    timings = {
        "total_s": total,
        "step1_s": float(sum(r.step1_s for r in state.history)),
        "step2_s": float(sum(r.step2_s for r in state.history)),
    }
    return Solution(trajectories=dict(coord.trajectories), dispatch=dispatch,
                    duals=state, objective=objective, converged=converged,
                    iterations=state.iteration, timings=timings, variant=variant,
                    scenario=scenario)


def integrated_objective(coord: Coordinator, dispatch: NetworkDispatch) -> float:
    """Loss cost plus ensemble cost at the consistent primal point.

    Ensemble injections are taken from the optimized state probabilities
    (the coupling equality is assumed to hold); controls come from the
    network solution; the ensemble part is priced at the raw energy cost,
    without the dual terms.
    """
    scenario = coord.scenario
    T = scenario.horizon
    total = 0.0
    for k in range(T):
        p_inj = coord.ops.p_base.copy()
        q_inj = coord.ops.q_base.copy()
        for i, bus in enumerate(coord.ens_buses):
            traj = coord.trajectories[bus]
            p_inj[coord.ops.ens_idx[i]] += float(traj.rho[k + 1] @ coord.p_alpha_pu[bus])
            q_inj[coord.ops.ens_idx[i]] += float(traj.rho[k + 1] @ coord.q_alpha_pu[bus])
        p_inj += dispatch.p_ctrl[k]
        q_inj += dispatch.q_ctrl[k]
        p_flow, q_flow = tree_flows(coord.model, coord.order, p_inj, q_inj)
        total += scenario.loss_weight[k] * losses(coord.model, p_flow, q_flow)

    for bus, traj in coord.trajectories.items():
        spec = scenario.ensembles[bus]
        gamma = spec.gamma_full(T)
        for t in range(T):
            total += kl_stage_cost(traj.transition[t], spec.pbar, gamma[t],
                                   spec.energy_cost[t], traj.rho[t])
    return float(total)
