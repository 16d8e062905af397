"""Per-time-step radial network optimization.

The linearized branch-flow model on a tree makes every branch flow the
sum of the injections in the subtree below it, and every squared voltage
an affine function of injections. The per-step problems are therefore
convex quadratic programs in the bus injections with box bounds, plus
two-sided linear voltage rows handled by an augmented-Lagrangian loop
around the accelerated projected-gradient kernel.

Sign convention: injections are consumption-positive; the slack bus
absorbs the system total and holds the reference voltage.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InfeasibleError
from .grid import GridModel, TreeOrder, validate_radial

# stationarity / feasibility targets for the dispatch solves
KKT_TOL = 1e-8
VOLT_TOL = 1e-8
INNER_MAX_ITER = 200_000
OUTER_MAX_ITER = 40


def tree_flows(model: GridModel, order: TreeOrder, p_inj, q_inj):
    """Branch flows from per-bus injections by one reverse-topological sweep.

    The flow on the parent branch of bus j is the total injection of the
    subtree rooted at j. Returns (p_flow, q_flow) indexed like
    model.branches.
    """
    p_acc = np.array(p_inj, dtype=float)
    q_acc = np.array(q_inj, dtype=float)
    p_flow = np.zeros(model.n_branch)
    q_flow = np.zeros(model.n_branch)
    for j in reversed(order.order):
        bi = order.parent_branch[j]
        if bi < 0:
            continue
        p_flow[bi] = p_acc[j]
        q_flow[bi] = q_acc[j]
        p_acc[order.parent[j]] += p_acc[j]
        q_acc[order.parent[j]] += q_acc[j]
    return p_flow, q_flow


def voltages(model: GridModel, order: TreeOrder, p_flow, q_flow):
    """Squared voltage profile by one forward-topological sweep.

    v2[child] = v2[parent] - 2 (r p_flow + x q_flow) on the parent branch;
    the slack bus holds v0^2.
    """
    v2 = np.zeros(model.n_bus)
    v2[order.order[0]] = model.v0 ** 2
    for j in order.order[1:]:
        bi = order.parent_branch[j]
        br = model.branches[bi]
        v2[j] = v2[order.parent[j]] - 2.0 * (br.r * p_flow[bi] + br.x * q_flow[bi])
    return v2


def losses(model: GridModel, p_flow, q_flow):
    """Resistive losses sum_b r_b (p_b^2 + q_b^2) / v0^2 (nominal voltage)."""
    r = np.array([br.r for br in model.branches])
    return float(np.dot(r, np.square(p_flow) + np.square(q_flow)) / model.v0 ** 2)


@dataclass
class StepDispatch:
    """Solution of one per-time-step network problem (all per-unit)."""

    v2: np.ndarray       # squared voltages per bus
    p_ens: np.ndarray    # ensemble injections per bus (0 off ensemble buses)
    q_ens: np.ndarray
    p_ctrl: np.ndarray   # control injections per bus
    q_ctrl: np.ndarray
    p_flow: np.ndarray   # per branch
    q_flow: np.ndarray
    loss: float
    objective: float
    kkt_residual: float = 0.0  # projected-gradient map norm at the solution
    lam_p: np.ndarray = None  # pinning duals, per ensemble bus (pinned solve only)
    lam_q: np.ndarray = None


class NetworkOperators:
    """Cached linear operators of one grid.

    M is the subtree aggregation matrix (flows = M @ injections);
    R = M' diag(r) M and X = M' diag(x) M give losses and voltage drops
    as quadratics/affines in the injections.
    """

    def __init__(self, model: GridModel, order: TreeOrder = None,
                 ensemble_buses=(), control_bounds=None):
        self.model = model
        self.order = order if order is not None else validate_radial(model)
        n, m = model.n_bus, model.n_branch
        M = np.zeros((m, n))
        for j in self.order.order[1:]:
            k = j
            while k >= 0 and self.order.parent_branch[k] >= 0:
                M[self.order.parent_branch[k], j] = 1.0
                k = self.order.parent[k]
        self.M = M
        r = np.array([br.r for br in model.branches])
        x = np.array([br.x for br in model.branches])
        self.R = M.T @ (r[:, None] * M)
        self.X = M.T @ (x[:, None] * M)
        self.v0sq = model.v0 ** 2

        self.ens_idx = np.array([model.index_of(b) for b in ensemble_buses], dtype=int)
        # control boxes per bus id: (p_lo, p_hi, q_lo, q_hi) in per-unit
        ctrl = control_bounds or {}
        active = [(model.index_of(b), box) for b, box in sorted(ctrl.items())
                  if _nonzero_box(box)]
        self.ctrl_idx = np.array([i for i, _ in active], dtype=int)
        self.ctrl_box = np.array([box for _, box in active], dtype=float).reshape(len(active), 4)

        # fixed base loads with ensemble buses zeroed (the ensemble replaces them)
        self.p_base = np.array([b.p_load for b in model.buses])
        self.q_base = np.array([b.q_load for b in model.buses])
        self.p_base[self.ens_idx] = 0.0
        self.q_base[self.ens_idx] = 0.0

        self.slack = model.index_of(model.slack_bus)
        self.nonslack = np.array([i for i in range(n) if i != self.slack], dtype=int)
        self.v_lo = np.array([b.v_min ** 2 for b in model.buses])[self.nonslack]
        self.v_hi = np.array([b.v_max ** 2 for b in model.buses])[self.nonslack]
        self._struct_cache = {}

    def loss_value(self, p_inj, q_inj):
        # reactive flow dissipates in the resistance too; X never enters losses
        return float((p_inj @ self.R @ p_inj + q_inj @ self.R @ q_inj) / self.v0sq)

    def structure(self, with_ens):
        """Unscaled quadratic/voltage structure for one variable layout.

        Decision vector layout: [ens p | ctrl p | ens q | ctrl q].
        Returns dict with H0 (unit-loss-weight Hessian), C (voltage rows),
        cols (bus column per half-variable), ne, nc, half, and the largest
        eigenvalues of H0 and C'C for step-size bounds.
        """
        if with_ens in self._struct_cache:
            return self._struct_cache[with_ens]
        ne = len(self.ens_idx) if with_ens else 0
        nc = len(self.ctrl_idx)
        half = ne + nc
        cols = np.concatenate([self.ens_idx[:ne], self.ctrl_idx]).astype(int)
        Rs = self.R[np.ix_(cols, cols)]
        H0 = np.zeros((2 * half, 2 * half))
        H0[:half, :half] = 2.0 * Rs / self.v0sq
        H0[half:, half:] = 2.0 * Rs / self.v0sq
        Cp = -2.0 * self.R[np.ix_(self.nonslack, cols)]
        Cq = -2.0 * self.X[np.ix_(self.nonslack, cols)]
        C = np.hstack([Cp, Cq])
        struct = {
            "H0": H0, "C": C, "cols": cols, "ne": ne, "nc": nc, "half": half,
            "lam_h0": _power_iteration(H0),
            "lam_c": _power_iteration(C.T @ C) if C.shape[0] else 0.0,
        }
        self._struct_cache[with_ens] = struct
        return struct


def _nonzero_box(box):
    p_lo, p_hi, q_lo, q_hi = box
    return p_hi > p_lo or q_hi > q_lo or p_lo != 0.0 or q_lo != 0.0


def _power_iteration(A, iters=200):
    n = A.shape[0]
    if n == 0:
        return 0.0
    v = np.full(n, 1.0 / np.sqrt(n))
    lam = 0.0
    for _ in range(iters):
        w = A @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        new_lam = float(v @ A @ v)
        if abs(new_lam - lam) <= 1e-13 * max(1.0, abs(new_lam)):
            return new_lam
        lam = new_lam
    return lam


def _interval_infeasible(C, d, cl, cu, lo, hi):
    """Index of a voltage row unsatisfiable for every x in [lo, hi], or None."""
    if C.shape[0] == 0:
        return None
    pos = np.clip(C, 0.0, None)
    neg = np.clip(C, None, 0.0)
    c_max = d + pos @ hi + neg @ lo
    c_min = d + pos @ lo + neg @ hi
    bad = (c_max < cl - VOLT_TOL) | (c_min > cu + VOLT_TOL)
    if np.any(bad):
        return int(np.argmax(bad))
    return None


def _solve_al(ops, struct, mu, g, lo, hi, d, warm=None):
    """Augmented-Lagrangian loop: box-QP inner solves via the kernel,
    voltage multiplier updates outside. Returns (x, y, kkt_residual, rho)."""
    C = struct["C"]
    cl, cu = ops.v_lo, ops.v_hi
    m = g.shape[0]
    x = np.clip(warm["x"], lo, hi) if warm else np.zeros(m)
    y = warm["y"].copy() if warm else np.zeros(C.shape[0])
    rho = warm["rho"] if warm else 100.0
    H = mu * struct["H0"]

    row = _interval_infeasible(C, d, cl, cu, lo, hi)
    if row is not None:
        bus = ops.model.buses[ops.nonslack[row]].bus_id
        raise InfeasibleError(
            f"voltage limits at bus {bus} cannot be met for any feasible injections",
            bus=bus)

    prev_viol = np.inf
    viol = 0.0
    res = 0.0
    cx = d
    for _ in range(OUTER_MAX_ITER):
        lip = max((mu * struct["lam_h0"] + rho * struct["lam_c"]) * 1.01, 1e-12)
        cl_eff = cl - y / rho
        cu_eff = cu - y / rho
        x, res, _ = _kernels.boxqp_pen(H, g, lo, hi, C, d, cl_eff, cu_eff,
                                       rho, lip, x, KKT_TOL, INNER_MAX_ITER)
        cx = C @ x + d if C.shape[0] else d
        y_new = rho * (cx - np.clip(cx, cl_eff, cu_eff))
        viol = float(np.maximum(cl - cx, cx - cu).clip(min=0.0).max()) if cx.size else 0.0
        y_change = float(np.abs(y_new - y).max()) if y.size else 0.0
        y_scale = 1.0 + (float(np.abs(y_new).max()) if y.size else 0.0)
        y = y_new
        if viol <= VOLT_TOL and res <= KKT_TOL and y_change <= 1e-6 * y_scale:
            return x, y, res, rho
        if viol > 0.25 * prev_viol:
            rho = min(rho * 10.0, 1e10)
        prev_viol = viol

    worst = int(np.argmax(np.maximum(cl - cx, cx - cu))) if cx.size else 0
    bus = ops.model.buses[ops.nonslack[worst]].bus_id
    raise InfeasibleError(
        f"voltage limit at bus {bus} still violated by {viol:.3e} after multiplier "
        "escalation; the step problem is infeasible or vanishingly close to it",
        bus=bus)


def _assemble(ops, struct, mu, ens_hull_pu=None, lam_sel=None, pin_p=None, pin_q=None):
    """Linear term, boxes and voltage offsets for one step problem."""
    ne, nc, half, cols = struct["ne"], struct["nc"], struct["half"], struct["cols"]
    p_fix = ops.p_base.copy()
    q_fix = ops.q_base.copy()
    if pin_p is not None:
        p_fix[ops.ens_idx] = pin_p
        q_fix[ops.ens_idx] = pin_q

    g = np.concatenate([
        2.0 * mu * (ops.R[cols] @ p_fix) / ops.v0sq,
        2.0 * mu * (ops.R[cols] @ q_fix) / ops.v0sq,
    ])
    if lam_sel is not None:
        g[:ne] -= lam_sel[0]
        g[half:half + ne] -= lam_sel[1]

    lo = np.empty(2 * half)
    hi = np.empty(2 * half)
    if ne:
        lo[:ne], hi[:ne] = ens_hull_pu[0]
        lo[half:half + ne], hi[half:half + ne] = ens_hull_pu[1]
    if nc:
        lo[ne:half] = ops.ctrl_box[:, 0]
        hi[ne:half] = ops.ctrl_box[:, 1]
        lo[half + ne:] = ops.ctrl_box[:, 2]
        hi[half + ne:] = ops.ctrl_box[:, 3]

    d = (ops.v0sq - 2.0 * (ops.R @ p_fix) - 2.0 * (ops.X @ q_fix))[ops.nonslack]
    return g, lo, hi, d, p_fix, q_fix


def _finalize(ops, struct, x, p_fix, q_fix):
    ne, half, cols = struct["ne"], struct["half"], struct["cols"]
    p_inj = p_fix.copy()
    q_inj = q_fix.copy()
    np.add.at(p_inj, cols, x[:half])
    np.add.at(q_inj, cols, x[half:])
    p_flow, q_flow = tree_flows(ops.model, ops.order, p_inj, q_inj)
    v2 = voltages(ops.model, ops.order, p_flow, q_flow)
    loss = losses(ops.model, p_flow, q_flow)

    n = ops.model.n_bus
    p_ens = np.zeros(n)
    q_ens = np.zeros(n)
    p_ctrl = np.zeros(n)
    q_ctrl = np.zeros(n)
    if ne:
        p_ens[ops.ens_idx] = x[:ne]
        q_ens[ops.ens_idx] = x[half:half + ne]
    if len(ops.ctrl_idx):
        p_ctrl[ops.ctrl_idx] = x[ne:half]
        q_ctrl[ops.ctrl_idx] = x[half + ne:]
    return p_inj, q_inj, p_flow, q_flow, v2, loss, p_ens, q_ens, p_ctrl, q_ctrl


def dispatch_step_dual(ops: NetworkOperators, lam_p, lam_q, ens_hull_pu, mu=1.0,
                       warm=None):
    """Loss-vs-price step: ensemble injections are free within their state
    hull, rewarded linearly by the duals; controls within their boxes.

    Returns (StepDispatch, warm-start dict for the next call at this t).
    """
    struct = ops.structure(True)
    lam_sel = (np.asarray(lam_p, dtype=float), np.asarray(lam_q, dtype=float))
    g, lo, hi, d, p_fix, q_fix = _assemble(ops, struct, mu, ens_hull_pu=ens_hull_pu,
                                           lam_sel=lam_sel)
    x, y, res, rho = _solve_al(ops, struct, mu, g, lo, hi, d, warm)
    p_inj, q_inj, p_flow, q_flow, v2, loss, p_ens, q_ens, p_ctrl, q_ctrl = _finalize(
        ops, struct, x, p_fix, q_fix)
    objective = (mu * loss - float(lam_sel[0] @ p_ens[ops.ens_idx])
                 - float(lam_sel[1] @ q_ens[ops.ens_idx]))
    step = StepDispatch(v2=v2, p_ens=p_ens, q_ens=q_ens, p_ctrl=p_ctrl, q_ctrl=q_ctrl,
                        p_flow=p_flow, q_flow=q_flow, loss=loss, objective=objective,
                        kkt_residual=res)
    return step, {"x": x, "y": y, "rho": rho}


def dispatch_step_pinned(ops: NetworkOperators, pin_p_pu, pin_q_pu, mu=1.0, warm=None):
    """Loss minimization with ensemble injections pinned.

    Returns the dispatch with lam_p / lam_q set to the sensitivities of the
    optimal cost to the pinned injections, i.e. the duals of the pinning
    equalities, plus the warm-start dict.
    """
    pin_p = np.asarray(pin_p_pu, dtype=float)
    pin_q = np.asarray(pin_q_pu, dtype=float)
    struct = ops.structure(False)
    g, lo, hi, d, p_fix, q_fix = _assemble(ops, struct, mu, pin_p=pin_p, pin_q=pin_q)
    C = struct["C"]
    if g.shape[0] > 0:
        x, y, res, rho = _solve_al(ops, struct, mu, g, lo, hi, d, warm)
        warm_out = {"x": x, "y": y, "rho": rho}
    else:
        res = 0.0
        # no decision variables: dispatch is fully determined, limits checked
        x = np.zeros(0)
        y = np.zeros(C.shape[0])
        viol = np.maximum(ops.v_lo - d, d - ops.v_hi)
        if viol.size and viol.max() > VOLT_TOL:
            worst = int(np.argmax(viol))
            bus = ops.model.buses[ops.nonslack[worst]].bus_id
            raise InfeasibleError(
                f"pinned injections violate the voltage limit at bus {bus} "
                "and there are no controls to compensate", bus=bus)
        warm_out = {"x": x, "y": y, "rho": 100.0}

    p_inj, q_inj, p_flow, q_flow, v2, loss, p_ens, q_ens, p_ctrl, q_ctrl = _finalize(
        ops, struct, x, p_fix, q_fix)
    p_ens[ops.ens_idx] = pin_p
    q_ens[ops.ens_idx] = pin_q

    # envelope theorem: d(optimal cost)/d(pin) = loss gradient plus voltage
    # multiplier sensitivities, both at the optimum
    lam_p = 2.0 * mu * (ops.R[ops.ens_idx] @ p_inj) / ops.v0sq
    lam_q = 2.0 * mu * (ops.R[ops.ens_idx] @ q_inj) / ops.v0sq
    if y.size and len(ops.ens_idx):
        lam_p = lam_p - 2.0 * (ops.R[np.ix_(ops.ens_idx, ops.nonslack)] @ y)
        lam_q = lam_q - 2.0 * (ops.X[np.ix_(ops.ens_idx, ops.nonslack)] @ y)

    step = StepDispatch(v2=v2, p_ens=p_ens, q_ens=q_ens, p_ctrl=p_ctrl, q_ctrl=q_ctrl,
                        p_flow=p_flow, q_flow=q_flow, loss=loss, objective=mu * loss,
                        kkt_residual=res, lam_p=lam_p, lam_q=lam_q)
    return step, warm_out
