"""Planar two-link leg kinematics and the unidirectional parallel knee spring.

Angle convention (see state.py): hip measured from the torso-frame downward
vertical, positive forward; knee is the shank angle relative to the thigh,
zero when straight, negative when flexed.  A unit leg direction at angle ``a``
from downward vertical is ``u(a) = (sin a, -cos a)`` in the torso frame.

Static force map: the leg is massless, so virtual work gives
``tau + tau_s + J_q^T f = 0`` for a ground reaction force ``f`` acting on the
foot.  Supporting an upward GRF in a crouch therefore takes positive
(extension) knee torque, and the engaged spring reduces the motor share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .state import ConfigError, rotation


class OutOfWorkspaceError(ValueError):
    """IK target outside the leg annulus."""

    def __init__(self, requested: float, max_reach: float, min_reach: float = 0.0):
        self.requested = requested
        self.max_reach = max_reach
        self.min_reach = min_reach
        super().__init__(
            f"foot target at {requested:.6f} m outside leg annulus "
            f"[{min_reach:.6f}, {max_reach:.6f}] m")


@dataclass
class LegGeometry:
    thigh_length: float = 0.20
    shank_length: float = 0.20
    hip_offset_body: np.ndarray | None = None   # hip position in torso frame (m)

    def __post_init__(self):
        if self.thigh_length <= 0 or self.shank_length <= 0:
            raise ConfigError("link lengths must be positive")
        if self.hip_offset_body is None:
            self.hip_offset_body = np.zeros(2)
        else:
            self.hip_offset_body = np.asarray(self.hip_offset_body, dtype=float)

    @property
    def max_reach(self) -> float:
        return self.thigh_length + self.shank_length

    @property
    def min_reach(self) -> float:
        return abs(self.thigh_length - self.shank_length)


@dataclass
class JointState:
    q: np.ndarray        # [hip, knee] (rad)
    qdot: np.ndarray     # (rad/s)


@dataclass
class UpsModel:
    """Unidirectional parallel spring at the knee.

    Produces extension torque only when the knee is flexed past the
    engagement angle; zero on the swing side, zero when disabled.
    """

    stiffness: float = 30.0           # N m / rad
    engagement_angle: float = -1.2    # rad
    enabled: bool = True

    def __post_init__(self):
        if self.stiffness < 0:
            raise ConfigError("UPS stiffness must be >= 0")


def ups_torque(q_knee: float, model: UpsModel) -> float:
    """Spring torque tau_s = k * max(0, q_e - q_knee) when enabled."""
    if not model.enabled:
        return 0.0
    return model.stiffness * max(0.0, model.engagement_angle - q_knee)


def ups_torque_grad(q_knee: float, model: UpsModel) -> float:
    """d tau_s / d q_knee (one-sided at the engagement kink)."""
    if not model.enabled or q_knee >= model.engagement_angle:
        return 0.0
    return -model.stiffness


def _u(a: float) -> np.ndarray:
    return np.array([math.sin(a), -math.cos(a)])


def _du(a: float) -> np.ndarray:
    return np.array([math.cos(a), math.sin(a)])


def leg_chain(q: np.ndarray, geom: LegGeometry) -> np.ndarray:
    """Foot position relative to the hip, torso frame."""
    s = q[0] + q[1]
    return geom.thigh_length * _u(q[0]) + geom.shank_length * _u(s)


def chain_jacobian(q: np.ndarray, geom: LegGeometry) -> np.ndarray:
    """d leg_chain / d q, torso frame (2x2)."""
    s = q[0] + q[1]
    c_h = geom.thigh_length * _du(q[0]) + geom.shank_length * _du(s)
    c_k = geom.shank_length * _du(s)
    return np.column_stack([c_h, c_k])


def forward_kinematics(com: np.ndarray, pitch: float, q: np.ndarray,
                       geom: LegGeometry) -> np.ndarray:
    """World foot position p_f = com + R(pitch) (hip_offset + chain(q))."""
    return np.asarray(com, dtype=float) + rotation(pitch) @ (
        geom.hip_offset_body + leg_chain(q, geom))


def inverse_kinematics(com: np.ndarray, pitch: float, foot: np.ndarray,
                       geom: LegGeometry) -> np.ndarray:
    """Joint angles reaching ``foot``, always on the knee-flexed (q_knee <= 0) branch.

    Targets within 1e-9 of full extension are clamped to the boundary;
    anything farther raises OutOfWorkspaceError.
    """
    d = rotation(-pitch) @ (np.asarray(foot, dtype=float) - com) - geom.hip_offset_body
    dist = float(np.hypot(d[0], d[1]))
    l1, l2 = geom.thigh_length, geom.shank_length
    if dist > geom.max_reach + 1e-9 or dist < geom.min_reach - 1e-9:
        raise OutOfWorkspaceError(dist, geom.max_reach, geom.min_reach)
    if dist < 1e-12:
        raise OutOfWorkspaceError(dist, geom.max_reach, geom.min_reach)
    cos_knee = (dist * dist - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    q_knee = -math.acos(min(1.0, max(-1.0, cos_knee)))
    phi = math.atan2(d[0], -d[1])
    psi = math.atan2(l2 * math.sin(q_knee), l1 + l2 * math.cos(q_knee))
    return np.array([phi - psi, q_knee])


def foot_jacobian(com: np.ndarray, pitch: float, q: np.ndarray,
                  geom: LegGeometry) -> np.ndarray:
    """2x5 Jacobian of the foot position wrt [com_x, com_z, pitch, q_hip, q_knee]."""
    rho = geom.hip_offset_body + leg_chain(q, geom)
    c, s = math.cos(pitch), math.sin(pitch)
    d_rot = np.array([[-s, -c], [c, -s]])     # dR/dpitch
    J = np.zeros((2, 5))
    J[:, 0:2] = np.eye(2)
    J[:, 2] = d_rot @ rho
    J[:, 3:5] = rotation(pitch) @ chain_jacobian(q, geom)
    return J


def joint_jacobian(pitch: float, q: np.ndarray, geom: LegGeometry) -> np.ndarray:
    """The 2x2 joint block of the foot Jacobian (world frame)."""
    return rotation(pitch) @ chain_jacobian(q, geom)


def selection_matrix() -> np.ndarray:
    """Selects the actuated-joint rows of [com_x, com_z, pitch, q_hip, q_knee]."""
    S = np.zeros((2, 5))
    S[0, 3] = 1.0
    S[1, 4] = 1.0
    return S


def torque_from_grf(pitch: float, q: np.ndarray, f: np.ndarray,
                    geom: LegGeometry, ups: UpsModel) -> np.ndarray:
    """Motor torque statically balancing GRF ``f``: tau = -J_q^T f - tau_s."""
    tau = -(joint_jacobian(pitch, q, geom).T @ f)
    tau[1] -= ups_torque(q[1], ups)
    return tau


def grf_from_torque(pitch: float, q: np.ndarray, tau: np.ndarray,
                    geom: LegGeometry, ups: UpsModel,
                    singularity_tol: float = 1e-8) -> np.ndarray:
    """GRF produced by motor torque ``tau`` plus the spring: f = -J_q^-T (tau + tau_s)."""
    Jq = joint_jacobian(pitch, q, geom)
    det = Jq[0, 0] * Jq[1, 1] - Jq[0, 1] * Jq[1, 0]
    if abs(det) < singularity_tol:
        raise np.linalg.LinAlgError(f"leg Jacobian singular (det={det:.2e})")
    total = tau.astype(float).copy()
    total[1] += ups_torque(q[1], ups)
    # solve J_q^T f = -total
    JqT = Jq.T
    return np.array([
        (-total[0] * JqT[1, 1] + total[1] * JqT[0, 1]) / det,
        (total[0] * JqT[1, 0] - total[1] * JqT[0, 0]) / det,
    ])


def coupling_gradients(pitch: float, q: np.ndarray, f: np.ndarray,
                       geom: LegGeometry, ups: UpsModel):
    """Gradients of g = tau + tau_s(q) + J_q^T f for the SQP constraint rows.

    Returns (dg_dq, dg_dtheta); dg_dtau = I and dg_df = J_q^T are left to the
    caller since they come straight from joint_jacobian.
    """
    l1, l2 = geom.thigh_length, geom.shank_length
    s = q[0] + q[1]
    ddu_h = np.array([-math.sin(q[0]), math.cos(q[0])])   # u''(q_h)
    ddu_s = np.array([-math.sin(s), math.cos(s)])         # u''(q_h + q_k)
    dC_dh = np.column_stack([l1 * ddu_h + l2 * ddu_s, l2 * ddu_s])
    dC_dk = np.column_stack([l2 * ddu_s, l2 * ddu_s])
    R = rotation(pitch)
    rf = R.T @ f
    dg_dq = np.column_stack([dC_dh.T @ rf, dC_dk.T @ rf])
    dg_dq[1, 1] += ups_torque_grad(q[1], ups)
    c, p = math.cos(pitch), math.sin(pitch)
    d_rot = np.array([[-p, -c], [c, -p]])
    C = chain_jacobian(q, geom)
    dg_dtheta = C.T @ (d_rot.T @ f)
    return dg_dq, dg_dtheta


def clamp_to_workspace(com: np.ndarray, pitch: float, foot: np.ndarray,
                       geom: LegGeometry, margin: float = 1e-6) -> tuple[np.ndarray, bool]:
    """Pull an unreachable foot target radially inside the annulus.

    Returns (possibly clamped target, clamped?).
    """
    hip = com + rotation(pitch) @ geom.hip_offset_body
    d = np.asarray(foot, dtype=float) - hip
    dist = float(np.hypot(d[0], d[1]))
    hi = geom.max_reach - margin
    lo = geom.min_reach + margin if geom.min_reach > 0 else 0.0
    if dist > hi:
        return hip + d * (hi / dist), True
    if lo > 0 and dist < lo:
        if dist < 1e-12:
            return hip + np.array([0.0, -lo]), True
        return hip + d * (lo / dist), True
    return np.asarray(foot, dtype=float), False
