import numpy as np
import pytest

from hopper_mpc import qp
from hopper_mpc.kinematics import LegGeometry, UpsModel, inverse_kinematics, ups_torque
from hopper_mpc.kino_mpc import (KinoModel, SqpSettings, TorqueExtractionError,
                                 build_sqp_subproblem, evaluate_constraints,
                                 index_map_for, initialize_decision,
                                 objective_terms, objective_value, solve_kino,
                                 torque_extraction)
from hopper_mpc.srb_mpc import MpcWeights, ScheduleStep, build_srb_qp, horizon_refs, solve_srb
from hopper_mpc.state import RobotConstants

from test_srb_mpc import hover_sketch, hover_state

CONST = RobotConstants()
GEOM = LegGeometry()
TIGHT = qp.SolverSettings(eps_abs=1e-9, eps_rel=1e-9, max_iter=50000,
                          adaptive_rho=True)


def make_model(ups: UpsModel, weights=None) -> KinoModel:
    return KinoModel(GEOM, ups, CONST, weights or MpcWeights())


def hover_problem(height=0.30, N=6, ups=None, weights=None):
    sketch = hover_sketch(height)
    schedule = [ScheduleStep(k * 0.03, 0.03, 1) for k in range(N)]
    refs = horizon_refs(sketch, schedule, CONST)
    x0 = hover_state(height)
    model = make_model(ups or UpsModel(enabled=False),
                       weights or MpcWeights(horizon=N))
    return refs, x0, model


def no_reg_weights(N):
    # with the torque regularizer off, the kino objective coincides with the
    # SRB objective, isolating the transcription for consistency checks
    return MpcWeights(r_tau=np.zeros(2), horizon=N)


def solved_srb(refs, x0, model):
    problem, idx = build_srb_qp(refs, x0, model.weights, model.constants)
    return solve_srb(problem, idx, refs, x0, TIGHT)


class TestEvaluateConstraints:
    def test_consistent_decision_has_tiny_fk_residual(self):
        refs, x0, model = hover_problem()
        srb = solved_srb(refs, x0, model)
        idx = index_map_for(refs)
        z, flags = initialize_decision(refs, srb, x0, idx, model)
        assert not flags
        cd = evaluate_constraints(z, x0, refs, idx, model)
        n_fk = 2  # rows per stance step
        for j, k in enumerate(idx.stance_steps):
            r = 6 * refs.horizon + 8 * j
            assert np.max(np.abs(cd.value[r:r + n_fk])) < 1e-10
            # coupling rows are consistent by construction of tau
            assert np.max(np.abs(cd.value[r + 2:r + 4])) < 1e-10

    def test_jacobian_matches_finite_differences(self):
        refs, x0, model = hover_problem(ups=UpsModel(20.0, -1.25))
        idx = index_map_for(refs)
        rng = np.random.default_rng(11)
        srb = solved_srb(refs, x0, model)
        z0, _ = initialize_decision(refs, srb, x0, idx, model)
        h = 1e-7
        for _ in range(5):
            z = z0 + rng.standard_normal(z0.shape) * 0.01
            cd = evaluate_constraints(z, x0, refs, idx, model)
            J = cd.jacobian.toarray()
            cols = rng.choice(idx.n_vars, size=25, replace=False)
            for j in cols:
                dz = np.zeros_like(z)
                dz[j] = h
                vp = evaluate_constraints(z + dz, x0, refs, idx, model).value
                vm = evaluate_constraints(z - dz, x0, refs, idx, model).value
                fd = (vp - vm) / (2 * h)
                scale = max(1.0, np.max(np.abs(J[:, j])))
                assert np.max(np.abs(fd - J[:, j])) < 1e-5 * scale

    def test_ups_off_rows_equal_plain_static_coupling(self):
        refs, x0, model_off = hover_problem(ups=UpsModel(enabled=False))
        model_on = make_model(UpsModel(30.0, -1.2), model_off.weights)
        idx = index_map_for(refs)
        srb = solved_srb(refs, x0, model_off)
        z, _ = initialize_decision(refs, srb, x0, idx, model_off)
        cd_off = evaluate_constraints(z, x0, refs, idx, model_off)
        cd_on = evaluate_constraints(z, x0, refs, idx, model_on)
        for j, k in enumerate(idx.stance_steps):
            r = 6 * refs.horizon + 8 * j + 2
            qk = z[idx.q_slice(k)]
            tau_s = ups_torque(qk[1], model_on.ups)
            assert cd_on.value[r] == pytest.approx(cd_off.value[r], abs=1e-12)
            assert cd_on.value[r + 1] - cd_off.value[r + 1] == pytest.approx(tau_s)


class TestSubproblem:
    def test_hessian_is_diagonal_stage_weights_plus_damping(self):
        refs, x0, model = hover_problem()
        idx = index_map_for(refs)
        srb = solved_srb(refs, x0, model)
        z, _ = initialize_decision(refs, srb, x0, idx, model)
        cd = evaluate_constraints(z, x0, refs, idx, model)
        settings = SqpSettings()
        w, z_ref = objective_terms(refs, idx, model)
        sub = build_sqp_subproblem(z, cd, w, z_ref, idx, settings)
        P = sub.P.toarray()
        assert np.allclose(P, np.diag(np.diag(P)))
        assert np.allclose(np.diag(P), 2 * w + settings.gn_damping)

    def test_gradient_matches_finite_differences(self):
        refs, x0, model = hover_problem()
        idx = index_map_for(refs)
        rng = np.random.default_rng(3)
        w, z_ref = objective_terms(refs, idx, model)
        z = z_ref + rng.standard_normal(idx.n_vars)
        grad = 2.0 * w * (z - z_ref)
        h = 1e-6
        for j in rng.choice(idx.n_vars, size=30, replace=False):
            dz = np.zeros_like(z)
            dz[j] = h
            fd = (objective_value(z + dz, w, z_ref)
                  - objective_value(z - dz, w, z_ref)) / (2 * h)
            assert fd == pytest.approx(grad[j], abs=1e-6 * max(1, abs(grad[j])))

    def test_zero_step_at_kkt_point(self):
        # tiny 2-step hover instance solved offline to high accuracy;
        # moderate force/torque weights keep the KKT point well conditioned
        refs, x0, model = hover_problem(N=2)
        model.weights = MpcWeights(r_f=np.array([1e-2, 1e-2]),
                                   r_tau=np.array([1e-2, 1e-2]), horizon=2)
        srb = solved_srb(refs, x0, model)
        settings = SqpSettings(offline_iterations=30)
        sol = solve_kino(refs, srb, x0, model, settings, TIGHT, real_time=False)
        assert not sol.degraded
        idx = index_map_for(refs)
        z = sol.primal
        cd = evaluate_constraints(z, x0, refs, idx, model)
        w, z_ref = objective_terms(refs, idx, model)
        sub = build_sqp_subproblem(z, cd, w, z_ref, idx, settings)
        # verify the optimal step with the independent dense oracle (d = 0 is
        # feasible up to the converged violation; inflate bounds by 1e-9)
        from oracles import active_set_qp
        d_star, _ = active_set_qp(sub.P.toarray(), sub.q, sub.A.toarray(),
                                  sub.lower - 1e-9, sub.upper + 1e-9,
                                  np.zeros(sub.n))
        assert np.max(np.abs(d_star)) < 1e-6


class TestSolveKino:
    def test_hover_matches_srb_when_kinematics_inactive(self):
        refs, x0, model = hover_problem(weights=no_reg_weights(6))
        srb = solved_srb(refs, x0, model)
        sol = solve_kino(refs, srb, x0, model, SqpSettings(), TIGHT,
                         real_time=False)
        assert not sol.degraded
        assert np.max(np.abs(sol.states - srb.states)) < 1e-3
        assert np.max(np.abs(sol.forces - srb.forces)) < 1e-3

    def test_engaged_spring_shifts_knee_torque_only(self):
        ups = UpsModel(10.0, -1.3)
        refs, x0, model_off = hover_problem(height=0.28,
                                            weights=no_reg_weights(6))
        model_on = make_model(ups, model_off.weights)
        srb = solved_srb(refs, x0, model_off)
        off = solve_kino(refs, srb, x0, model_off, SqpSettings(), TIGHT,
                         real_time=False)
        on = solve_kino(refs, srb, x0, model_on, SqpSettings(), TIGHT,
                        real_time=False)
        q_stance = inverse_kinematics(x0[0:2], x0[2], refs.footholds[0], GEOM)
        tau_s = ups_torque(q_stance[1], ups)
        assert tau_s > 0
        for k in off.joint_torques:
            knee_off = off.joint_torques[k][1]
            knee_on = on.joint_torques[k][1]
            assert knee_off - knee_on == pytest.approx(tau_s, abs=2e-3)
            # engaged spring reduces the magnitude too at this operating point
            assert abs(knee_on) < abs(knee_off)
        assert np.max(np.abs(on.forces - off.forces)) < 1e-3

    def test_torque_box_respected(self):
        refs, x0, model = hover_problem()
        srb = solved_srb(refs, x0, model)
        sol = solve_kino(refs, srb, x0, model, SqpSettings(), TIGHT,
                         real_time=False)
        for tau in sol.joint_torques.values():
            assert np.all(np.abs(tau) <= CONST.tau_max + 1e-6)

    def test_real_time_mode_reports_violation(self):
        refs, x0, model = hover_problem()
        srb = solved_srb(refs, x0, model)
        sol = solve_kino(refs, srb, x0, model, SqpSettings(), None,
                         real_time=True)
        assert np.isfinite(sol.max_violation)
        assert sol.max_violation < 1e-3

    def test_determinism(self):
        refs, x0, model = hover_problem()
        srb = solved_srb(refs, x0, model)
        a = solve_kino(refs, srb, x0, model, SqpSettings(), None, real_time=True)
        b = solve_kino(refs, srb, x0, model, SqpSettings(), None, real_time=True)
        assert np.array_equal(a.primal, b.primal)


class TestTorqueExtraction:
    def test_feasible_solution_clamp_is_noop(self):
        refs, x0, model = hover_problem()
        srb = solved_srb(refs, x0, model)
        sol = solve_kino(refs, srb, x0, model, SqpSettings(), TIGHT,
                         real_time=False)
        tau = torque_extraction(sol, CONST)
        assert np.allclose(tau, sol.joint_torques[0])

    def test_overlimit_clamped(self):
        refs, x0, model = hover_problem()
        srb = solved_srb(refs, x0, model)
        sol = solve_kino(refs, srb, x0, model, SqpSettings(), None)
        sol.joint_torques[0] = np.array([25.1, -26.0])
        tau = torque_extraction(sol, CONST)
        assert np.allclose(tau, [25.0, -25.0])

    def test_flight_step_routing_error(self):
        refs, x0, model = hover_problem()
        srb = solved_srb(refs, x0, model)
        sol = solve_kino(refs, srb, x0, model, SqpSettings(), None)
        sol.joint_torques.pop(0)
        with pytest.raises(TorqueExtractionError):
            torque_extraction(sol, CONST)
