"""Per-step network optimization tests."""

import numpy as np
import pytest

from flexdispatch.errors import InfeasibleError
from flexdispatch.grid import Branch, Bus, GridModel, validate_radial
from flexdispatch.network import (NetworkOperators, dispatch_step_dual,
                                  dispatch_step_pinned, losses, tree_flows, voltages)

from conftest import random_tree_model


class TestTreeFlows:
    def test_zero_injections(self, case33):
        order = validate_radial(case33)
        pf, qf = tree_flows(case33, order, np.zeros(33), np.zeros(33))
        assert np.all(pf == 0) and np.all(qf == 0)

    def test_chain_single_load(self, chain2):
        order = validate_radial(chain2)
        pf, qf = tree_flows(chain2, order, np.array([0.0, 0.1]), np.zeros(2))
        assert pf[0] == pytest.approx(0.1, abs=1e-15)
        assert qf[0] == 0.0

    def test_case33_root_flow_is_total_load(self, case33):
        order = validate_radial(case33)
        p = np.array([b.p_load for b in case33.buses])
        q = np.array([b.q_load for b in case33.buses])
        pf, qf = tree_flows(case33, order, p, q)
        assert pf[0] == pytest.approx(p.sum(), abs=1e-9)
        assert qf[0] == pytest.approx(q.sum(), abs=1e-9)


class TestVoltages:
    def test_zero_flow_flat_profile(self, case33):
        order = validate_radial(case33)
        v2 = voltages(case33, order, np.zeros(32), np.zeros(32))
        assert np.allclose(v2, 1.0, atol=0)

    def test_hand_drop(self, chain2):
        order = validate_radial(chain2)
        v2 = voltages(chain2, order, np.array([0.1]), np.array([0.05]))
        assert v2[1] == pytest.approx(1.0 - 2 * (0.05 * 0.1 + 0.05 * 0.05), abs=1e-15)

    def test_case33_monotone_along_paths(self, case33):
        order = validate_radial(case33)
        p = np.array([b.p_load for b in case33.buses])
        q = np.array([b.q_load for b in case33.buses])
        pf, qf = tree_flows(case33, order, p, q)
        v2 = voltages(case33, order, pf, qf)
        for j in order.order[1:]:
            assert v2[j] < v2[order.parent[j]]


class TestLosses:
    def test_zero(self, chain2):
        assert losses(chain2, np.zeros(1), np.zeros(1)) == 0.0

    def test_single_branch(self, chain2):
        # r = 0.05, unit active flow
        assert losses(chain2, np.array([1.0]), np.zeros(1)) == pytest.approx(0.05)

    def test_quadratic_homogeneity(self, case33):
        order = validate_radial(case33)
        p = np.array([b.p_load for b in case33.buses])
        q = np.array([b.q_load for b in case33.buses])
        pf, qf = tree_flows(case33, order, p, q)
        assert losses(case33, 2 * pf, 2 * qf) == pytest.approx(
            4 * losses(case33, pf, qf), rel=1e-12)

    def test_reactive_flow_dissipates_in_resistance(self, chain2):
        assert losses(chain2, np.zeros(1), np.array([1.0])) == pytest.approx(0.05)


class TestOperators:
    def test_quadratic_matches_sweeps(self, case33):
        # R/X quadratics must agree with the flow+voltage sweeps
        rng = np.random.default_rng(3)
        ops = NetworkOperators(case33, ensemble_buses=[17, 20])
        p = rng.uniform(0, 0.02, 33)
        q = rng.uniform(0, 0.01, 33)
        p[ops.slack] = 0.0
        q[ops.slack] = 0.0
        pf, qf = tree_flows(case33, ops.order, p, q)
        assert np.allclose(ops.M @ p, pf, atol=1e-14)
        v2_sweep = voltages(case33, ops.order, pf, qf)
        v2_alg = 1.0 - 2.0 * (ops.R @ p) - 2.0 * (ops.X @ q)
        assert np.allclose(v2_sweep, v2_alg, atol=1e-12)
        assert losses(case33, pf, qf) == pytest.approx(ops.loss_value(p, q), rel=1e-12)


def hull(lo_p, hi_p, lo_q, hi_q):
    return ((np.atleast_1d(lo_p), np.atleast_1d(hi_p)),
            (np.atleast_1d(lo_q), np.atleast_1d(hi_q)))


class TestDispatchDual:
    def test_no_freedom_equals_fixed_load_flow(self, case33):
        ops = NetworkOperators(case33, ensemble_buses=[])
        hull0 = ((np.zeros(0), np.zeros(0)), (np.zeros(0), np.zeros(0)))
        step, _ = dispatch_step_dual(ops, np.zeros(0), np.zeros(0), hull0)
        p = ops.p_base
        q = ops.q_base
        pf, qf = tree_flows(case33, ops.order, p, q)
        assert np.allclose(step.p_flow, pf, atol=1e-12)
        assert step.loss == pytest.approx(losses(case33, pf, qf), rel=1e-12)

    def test_price_above_marginal_loss_saturates(self, chain2):
        # lam_p above 2 r p_max / v0^2 pushes the injection to its upper bound
        ops = NetworkOperators(chain2, ensemble_buses=[2])
        step, _ = dispatch_step_dual(ops, np.array([1.0]), np.zeros(1),
                                     hull(0.0, 0.1, 0.0, 0.05))
        assert step.p_ens[1] == pytest.approx(0.1, abs=1e-9)

    def test_interior_marginal_condition(self, chain2):
        # optimal interior injection satisfies lam = 2 r p / v0^2
        ops = NetworkOperators(chain2, ensemble_buses=[2])
        lam = 0.004
        step, _ = dispatch_step_dual(ops, np.array([lam]), np.zeros(1),
                                     hull(0.0, 0.1, 0.0, 0.05))
        assert step.p_ens[1] == pytest.approx(lam / (2 * 0.05), abs=1e-6)

    def test_controls_reduce_losses(self, case33):
        ctrl = {b: (-0.003, 0.003, -0.003, 0.003) for b in (6, 12, 25, 30)}
        base_ops = NetworkOperators(case33, ensemble_buses=[])
        none_step, _ = dispatch_step_dual(
            base_ops, np.zeros(0), np.zeros(0),
            ((np.zeros(0),) * 2, (np.zeros(0),) * 2))
        ops = NetworkOperators(case33, ensemble_buses=[], control_bounds=ctrl)
        step, _ = dispatch_step_dual(ops, np.zeros(0), np.zeros(0),
                                     ((np.zeros(0),) * 2, (np.zeros(0),) * 2))
        assert step.loss < none_step.loss

    def test_objective_never_above_feasible_points(self, case33):
        # convexity certificate: solver value <= value at random feasible points
        rng = np.random.default_rng(7)
        ops = NetworkOperators(case33, ensemble_buses=[17, 23])
        h = hull([0.0, 0.0], [0.01, 0.012], [0.0, 0.0], [0.004, 0.005])
        lam_p = np.array([0.02, 0.01])
        lam_q = np.array([0.005, 0.0])
        step, _ = dispatch_step_dual(ops, lam_p, lam_q, h)
        for _ in range(25):
            pe = rng.uniform(h[0][0], h[0][1])
            qe = rng.uniform(h[1][0], h[1][1])
            p = ops.p_base.copy()
            q = ops.q_base.copy()
            p[ops.ens_idx] += pe
            q[ops.ens_idx] += qe
            value = ops.loss_value(p, q) - float(lam_p @ pe) - float(lam_q @ qe)
            assert step.objective <= value + 1e-9

    def test_kkt_residual_reported(self, case33):
        ops = NetworkOperators(case33, ensemble_buses=[17, 26])
        h = hull([0.0, 0.0], [0.01, 0.01], [0.0, 0.0], [0.005, 0.005])
        step, _ = dispatch_step_dual(ops, np.array([0.02, 0.03]),
                                     np.array([0.01, 0.0]), h)
        assert step.kkt_residual <= 1e-7

    def test_dispatch_self_consistent(self, case33):
        # stored flows and voltages must reproduce through the sweeps
        ops = NetworkOperators(case33, ensemble_buses=[17, 20, 23, 26],
                               control_bounds={5: (-0.002, 0.002, -0.002, 0.002)})
        h = hull([0.0] * 4, [0.01] * 4, [0.0] * 4, [0.004] * 4)
        step, _ = dispatch_step_dual(ops, np.full(4, 0.01), np.full(4, 0.002), h)
        p = ops.p_base + step.p_ens + step.p_ctrl
        q = ops.q_base + step.q_ens + step.q_ctrl
        pf, qf = tree_flows(case33, ops.order, p, q)
        assert np.allclose(pf, step.p_flow, atol=1e-9)
        assert np.allclose(voltages(case33, ops.order, pf, qf), step.v2, atol=1e-9)
        assert np.all(step.v2[ops.nonslack] >= ops.v_lo - 1e-8)
        assert np.all(step.v2[ops.nonslack] <= ops.v_hi + 1e-8)

    def test_voltage_constraint_binds(self):
        # leaf with heavy fixed load and a generator-like ensemble; tight v_min
        # forces the solver to hold the voltage at its floor
        model = GridModel(
            buses=(Bus(1, 0, 0, 0.9, 1.1), Bus(2, 0.05, 0.0, 0.995, 1.1)),
            branches=(Branch(1, 2, 0.05, 0.05),),
            slack_bus=1, v0=1.0, base_mva=10.0)
        ops = NetworkOperators(model, ensemble_buses=[2])
        step, _ = dispatch_step_dual(ops, np.array([0.5]), np.zeros(1),
                                     hull(-0.1, 0.1, 0.0, 0.0))
        # price (0.5) would saturate p at 0.1 but v_min binds first
        assert step.v2[1] == pytest.approx(0.995 ** 2, abs=1e-6)
        assert step.p_ens[1] < 0.1

    def test_certified_infeasible(self):
        model = GridModel(
            buses=(Bus(1, 0, 0, 0.9, 1.1), Bus(2, 0.5, 0.2, 0.999, 1.1)),
            branches=(Branch(1, 2, 0.05, 0.05),),
            slack_bus=1, v0=1.0, base_mva=10.0)
        ops = NetworkOperators(model, ensemble_buses=[])
        with pytest.raises(InfeasibleError) as err:
            dispatch_step_dual(ops, np.zeros(0), np.zeros(0),
                               ((np.zeros(0),) * 2, (np.zeros(0),) * 2))
        assert err.value.bus == 2


class TestDispatchPinned:
    def test_all_zero(self, chain2):
        ops = NetworkOperators(chain2, ensemble_buses=[2])
        step, _ = dispatch_step_pinned(ops, np.zeros(1), np.zeros(1))
        assert step.loss == 0.0
        assert np.all(step.p_flow == 0)
        assert step.lam_p[0] == 0.0 and step.lam_q[0] == 0.0

    def test_closed_form_dual(self, chain2):
        ops = NetworkOperators(chain2, ensemble_buses=[2])
        step, _ = dispatch_step_pinned(ops, np.array([0.08]), np.array([0.02]))
        assert step.lam_p[0] == pytest.approx(2 * 0.05 * 0.08, rel=1e-12)
        assert step.lam_q[0] == pytest.approx(2 * 0.05 * 0.02, rel=1e-12)

    def test_pinned_infeasible_names_bus(self):
        model = GridModel(
            buses=(Bus(1, 0, 0, 0.9, 1.1), Bus(2, 0.0, 0.0, 0.999, 1.1)),
            branches=(Branch(1, 2, 0.05, 0.05),),
            slack_bus=1, v0=1.0, base_mva=10.0)
        ops = NetworkOperators(model, ensemble_buses=[2])
        with pytest.raises(InfeasibleError) as err:
            dispatch_step_pinned(ops, np.array([0.5]), np.array([0.2]))
        assert err.value.bus == 2

    def test_duals_match_finite_differences(self):
        # envelope check with re-optimized controls, interior instances
        rng = np.random.default_rng(42)
        h = 1e-4
        for _ in range(8):
            nb = int(rng.integers(4, 9))
            model = random_tree_model(rng, nb)
            ops = NetworkOperators(model, ensemble_buses=[2, 3],
                                   control_bounds={nb: (-0.05, 0.05, -0.05, 0.05)})
            pin_p = rng.uniform(0.001, 0.01, 2)
            pin_q = rng.uniform(0.001, 0.01, 2)
            step, _ = dispatch_step_pinned(ops, pin_p, pin_q)
            for i in range(2):
                for which in ("p", "q"):
                    up_p, up_q = pin_p.copy(), pin_q.copy()
                    dn_p, dn_q = pin_p.copy(), pin_q.copy()
                    (up_p if which == "p" else up_q)[i] += h
                    (dn_p if which == "p" else dn_q)[i] -= h
                    up, _ = dispatch_step_pinned(ops, up_p, up_q)
                    dn, _ = dispatch_step_pinned(ops, dn_p, dn_q)
                    fd = (up.objective - dn.objective) / (2 * h)
                    dual = (step.lam_p if which == "p" else step.lam_q)[i]
                    assert dual == pytest.approx(fd, abs=1e-5)

    def test_loss_weight_scales_duals(self, chain2):
        ops = NetworkOperators(chain2, ensemble_buses=[2])
        one, _ = dispatch_step_pinned(ops, np.array([0.05]), np.array([0.01]), mu=1.0)
        three, _ = dispatch_step_pinned(ops, np.array([0.05]), np.array([0.01]), mu=3.0)
        assert three.lam_p[0] == pytest.approx(3 * one.lam_p[0], rel=1e-12)
        assert three.objective == pytest.approx(3 * one.objective, rel=1e-12)
