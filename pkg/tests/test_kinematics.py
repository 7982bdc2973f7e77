import math

import numpy as np
import pytest

from hopper_mpc.kinematics import (LegGeometry, OutOfWorkspaceError, UpsModel,
                                   clamp_to_workspace, coupling_gradients,
                                   forward_kinematics, foot_jacobian,
                                   grf_from_torque, inverse_kinematics,
                                   joint_jacobian, leg_chain, selection_matrix,
                                   torque_from_grf, ups_torque)

GEOM = LegGeometry()  # 0.20 / 0.20, hip at the CoM


def random_reachable_q(rng, n):
    # stance-flavored joint box, away from the straight-leg singularity
    hips = rng.uniform(0.0, math.pi / 2, n)
    knees = rng.uniform(-2.45, -0.3, n)
    return np.stack([hips, knees], axis=1)


class TestForwardKinematics:
    def test_golden_pose(self):
        # hip pi/2, knee -pi/2: thigh along +x, shank straight down
        foot = forward_kinematics(np.array([0.0, 0.4]), 0.0,
                                  np.array([math.pi / 2, -math.pi / 2]), GEOM)
        assert foot == pytest.approx([0.2, 0.2], abs=1e-15)

    def test_zero_com_identity_rotation(self):
        q = np.array([0.3, -1.1])
        foot = forward_kinematics(np.zeros(2), 0.0, q, GEOM)
        assert np.allclose(foot, leg_chain(q, GEOM))

    def test_rotation_preserves_leg_length(self):
        q = np.array([0.5, -1.3])
        com = np.array([0.2, 0.5])
        base = np.linalg.norm(forward_kinematics(com, 0.0, q, GEOM) - com)
        rotated = np.linalg.norm(forward_kinematics(com, math.pi, q, GEOM) - com)
        assert rotated == pytest.approx(base, abs=1e-14)

    def test_frame_consistency_canonical_pose(self):
        # symmetric crouch at the template rest length: foot straight down
        q_knee = -math.acos((0.32 ** 2 - 2 * 0.2 ** 2) / (2 * 0.2 * 0.2))
        q = np.array([-q_knee / 2.0, q_knee])
        foot = forward_kinematics(np.array([0.0, 0.4]), 0.0, q, GEOM)
        assert foot[0] == pytest.approx(0.0, abs=1e-12)
        assert foot[1] == pytest.approx(0.4 - 0.32, abs=1e-12)


class TestInverseKinematics:
    def test_round_trip_1000_targets(self):
        rng = np.random.default_rng(1)
        for q in random_reachable_q(rng, 1000):
            com = rng.standard_normal(2)
            pitch = rng.uniform(-0.5, 0.5)
            foot = forward_kinematics(com, pitch, q, GEOM)
            q_back = inverse_kinematics(com, pitch, foot, GEOM)
            foot_back = forward_kinematics(com, pitch, q_back, GEOM)
            assert np.max(np.abs(foot_back - foot)) < 1e-10

    def test_full_extension_straight_knee(self):
        target = np.array([0.0, -GEOM.max_reach])
        q = inverse_kinematics(np.zeros(2), 0.0, target, GEOM)
        assert q[1] == pytest.approx(0.0, abs=1e-6)

    def test_out_of_workspace_error_carries_reach(self):
        with pytest.raises(OutOfWorkspaceError) as exc:
            inverse_kinematics(np.zeros(2), 0.0, np.array([0.0, -0.41]), GEOM)
        assert exc.value.requested == pytest.approx(0.41, abs=1e-12)
        assert exc.value.max_reach == pytest.approx(0.40, abs=1e-12)

    def test_near_boundary_clamped(self):
        # within 1e-9 of full extension: clamped, not an error
        target = np.array([0.0, -(GEOM.max_reach + 5e-10)])
        q = inverse_kinematics(np.zeros(2), 0.0, target, GEOM)
        assert abs(q[1]) < 1e-3

    def test_knee_branch_is_negative(self):
        rng = np.random.default_rng(2)
        for q in random_reachable_q(rng, 100):
            foot = forward_kinematics(np.zeros(2), 0.0, q, GEOM)
            q_back = inverse_kinematics(np.zeros(2), 0.0, foot, GEOM)
            assert q_back[1] <= 0.0


class TestFootJacobian:
    def test_com_block_is_identity(self):
        rng = np.random.default_rng(3)
        for q in random_reachable_q(rng, 20):
            J = foot_jacobian(rng.standard_normal(2), rng.uniform(-1, 1), q, GEOM)
            assert np.array_equal(J[:, 0:2], np.eye(2))

    def test_matches_central_differences(self):
        rng = np.random.default_rng(4)
        h = 1e-6
        for q in random_reachable_q(rng, 100):
            com = rng.standard_normal(2)
            pitch = rng.uniform(-1.0, 1.0)
            J = foot_jacobian(com, pitch, q, GEOM)
            x = np.concatenate([com, [pitch], q])

            def fk(v):
                return forward_kinematics(v[0:2], v[2], v[3:5], GEOM)
            scale = max(1.0, np.max(np.abs(J)))
            for j in range(5):
                dx = np.zeros(5)
                dx[j] = h
                fd = (fk(x + dx) - fk(x - dx)) / (2 * h)
                assert np.max(np.abs(fd - J[:, j])) < 1e-6 * scale

    def test_straight_leg_singularity(self):
        q = np.array([0.4, 0.0])
        Jq = joint_jacobian(0.0, q, GEOM)
        assert abs(np.linalg.det(Jq)) < 1e-12


class TestUpsTorque:
    def test_zero_at_engagement(self):
        assert ups_torque(-1.2, UpsModel(30.0, -1.2)) == 0.0

    def test_zero_on_swing_side(self):
        assert ups_torque(-0.7, UpsModel(30.0, -1.2)) == 0.0

    def test_direct_evaluation(self):
        assert ups_torque(-1.7, UpsModel(20.0, -1.2)) == pytest.approx(10.0)

    def test_disabled_is_zero_everywhere(self):
        model = UpsModel(30.0, -1.2, enabled=False)
        for qk in np.linspace(-2.4, -0.9, 20):
            assert ups_torque(qk, model) == 0.0

    def test_monotone_nonincreasing_on_stance_side(self):
        model = UpsModel(30.0, -1.2)
        qs = np.linspace(-2.45, -1.2, 50)
        taus = [ups_torque(qk, model) for qk in qs]
        assert all(a >= b - 1e-12 for a, b in zip(taus, taus[1:]))
        assert all(t >= 0 for t in taus)


class TestSelectionAndForceMap:
    def test_selection_by_definition(self):
        S = selection_matrix()
        assert np.allclose(S @ np.array([1.0, 2, 3, 4, 5]), [4.0, 5.0])
        assert np.all(S.sum(axis=1) == 1.0)

    def test_moment_arms_frozen_configuration(self):
        # symmetric crouch, leg length 0.32, pure vertical GRF of 100 N:
        # hip arm is zero by symmetry; knee arm = l2 sin(q_h + q_k)
        q_knee = -math.acos((0.32 ** 2 - 0.08) / 0.08)
        q = np.array([-q_knee / 2.0, q_knee])
        f = np.array([0.0, 100.0])
        J = foot_jacobian(np.zeros(2), 0.0, q, GEOM)
        arm = selection_matrix() @ (J.T @ f)
        expected_knee = 0.2 * math.sin(q[0] + q[1]) * 100.0
        assert arm[0] == pytest.approx(0.0, abs=1e-9)
        assert arm[1] == pytest.approx(expected_knee, abs=1e-9)
        assert expected_knee < 0  # supporting torque is the negative of this

    def test_disabled_ups_reduces_to_static_map(self):
        rng = np.random.default_rng(5)
        off = UpsModel(enabled=False)
        for q in random_reachable_q(rng, 50):
            f = rng.standard_normal(2) * 50
            tau = torque_from_grf(0.1, q, f, GEOM, off)
            expected = -(joint_jacobian(0.1, q, GEOM).T @ f)
            assert np.allclose(tau, expected, atol=1e-12)

    def test_force_map_round_trip(self):
        rng = np.random.default_rng(6)
        ups = UpsModel()
        for q in random_reachable_q(rng, 50):
            f = rng.standard_normal(2) * 60
            tau = torque_from_grf(0.05, q, f, GEOM, ups)
            f_back = grf_from_torque(0.05, q, tau, GEOM, ups)
            assert np.allclose(f_back, f, atol=1e-9)

    def test_supporting_torque_is_extension_and_spring_assists(self):
        # crouched stance under upward GRF: knee torque positive (extension),
        # and an engaged spring strictly reduces the motor share
        q = inverse_kinematics(np.array([0.0, 0.30]), 0.0, np.zeros(2), GEOM)
        f = np.array([0.0, 60.0])
        tau_off = torque_from_grf(0.0, q, f, GEOM, UpsModel(enabled=False))
        tau_on = torque_from_grf(0.0, q, f, GEOM, UpsModel(10.0, -1.3))
        assert tau_off[1] > 0
        assert tau_on[1] < tau_off[1]
        assert tau_off[1] - tau_on[1] == pytest.approx(
            ups_torque(q[1], UpsModel(10.0, -1.3)))


class TestCouplingGradients:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        ups = UpsModel(25.0, -1.25)
        h = 1e-7
        for q in random_reachable_q(rng, 50):
            f = rng.standard_normal(2) * 40
            theta = rng.uniform(-0.4, 0.4)
            dg_dq, dg_dth = coupling_gradients(theta, q, f, GEOM, ups)

            def g(th, qv):
                out = joint_jacobian(th, qv, GEOM).T @ f
                out[1] += ups_torque(qv[1], ups)
                return out
            for j in range(2):
                dq = np.zeros(2)
                dq[j] = h
                fd = (g(theta, q + dq) - g(theta, q - dq)) / (2 * h)
                assert np.max(np.abs(fd - dg_dq[:, j])) < 1e-5
            fd = (g(theta + h, q) - g(theta - h, q)) / (2 * h)
            assert np.max(np.abs(fd - dg_dth)) < 1e-5


def test_clamp_to_workspace():
    target = np.array([0.0, -0.55])
    clamped, was = clamp_to_workspace(np.zeros(2), 0.0, target, GEOM)
    assert was
    assert np.linalg.norm(clamped) <= GEOM.max_reach
    inside = np.array([0.1, -0.25])
    same, was = clamp_to_workspace(np.zeros(2), 0.0, inside, GEOM)
    assert not was and np.array_equal(same, inside)
