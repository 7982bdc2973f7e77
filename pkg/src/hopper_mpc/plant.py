"""Planar ground-truth plant: SRB torso, massless two-link leg, knee UPS.

Stance pins the foot; the massless leg makes the GRF command-determined
through the static map f = -J_q^-T (tau + tau_s), and the joint state
follows the torso by kinematic consistency.  Flight is ballistic for the
torso while the joints integrate under PD torques with a small rotor
inertia (the joint loop is substepped because the PD poles are much faster
than the 1 kHz plant step).  Touchdown (foot height crossing zero downward)
and liftoff (commanded normal force crossing zero, after a short debounce)
are located by bisection; the apex crossing inside ballistic flight is
closed-form.

Contact is an ideal pin: no compliance and no slip.  The friction cone is
asserted on every stance sample (with a small margin for the zero-order-
hold command mismatch) and a violation is a simulation fault rather than a
modeled slip event.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kinematics import (LegGeometry, OutOfWorkspaceError, UpsModel,
                         forward_kinematics, grf_from_torque,
                         inverse_kinematics, joint_jacobian)
from .slip import ApexState
from .state import RobotConstants, RobotState, wedge

EVENT_TOL = 1e-8          # event-time bisection tolerance (s)
JOINT_SUBSTEP = 1e-4      # flight joint integration substep (s)


class PlantFault(RuntimeError):
    """Unrecoverable simulation fault (singularity, slip, insane state)."""


@dataclass
class ActuationCommand:
    """Zero-order-hold command; ``mode`` should match the plant phase.

    Stance: motor torques.  Flight: PD joint targets (the plant runs the PD
    law at its own rate) plus an optional feedforward torque, used by the
    controller to cancel the spring bias during swing.
    """

    mode: str                                  # 'stance' | 'flight'
    tau: np.ndarray | None = None              # stance torque (2,)
    q_des: np.ndarray | None = None            # flight PD target (2,)
    tau_ff: np.ndarray | None = None           # flight feedforward (2,)


@dataclass
class PlantState:
    robot: RobotState
    phase: str                                  # 'flight' | 'stance'
    stance_foot: np.ndarray | None
    time: float = 0.0

    def copy(self) -> "PlantState":
        return PlantState(self.robot.copy(), self.phase,
                          None if self.stance_foot is None else self.stance_foot.copy(),
                          self.time)


@dataclass
class StepResult:
    grf: np.ndarray                       # (2,) zero in flight
    tau_motor: np.ndarray                 # (2,) applied motor torque
    qdot: np.ndarray                      # (2,) joint velocities at sample
    events: list = field(default_factory=list)    # (kind, time, payload)


@dataclass
class PlantConfig:
    dt: float = 1e-3
    rotor_inertia: float = 1e-4          # per joint, flight phase (kg m^2)
    pd_kp: np.ndarray = field(default_factory=lambda: np.array([40.0, 40.0]))
    pd_kd: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5]))
    liftoff_min_age: float = 0.02        # debounce on the f_z <= 0 trigger (s)
    mu_margin: float = 0.10              # relative cone slack before faulting
    mu_margin_abs: float = 1.0           # N


class Plant:
    def __init__(self, geometry: LegGeometry, ups: UpsModel,
                 constants: RobotConstants, config: PlantConfig | None = None):
        self.geometry = geometry
        self.ups = ups
        self.constants = constants
        self.config = config or PlantConfig()
        self._stance_age = 0.0

    # -- construction helpers -------------------------------------------------

    def flight_state(self, p_c, v_c, theta=0.0, theta_dot=0.0,
                     q=None, qdot=None, time=0.0) -> PlantState:
        q = np.array([0.0, -1.3]) if q is None else np.asarray(q, dtype=float)
        qdot = np.zeros(2) if qdot is None else np.asarray(qdot, dtype=float)
        robot = RobotState(np.asarray(p_c, dtype=float).copy(),
                           np.asarray(v_c, dtype=float).copy(),
                           float(theta), float(theta_dot), q.copy(),
                           qdot.copy(), contact=False)
        return PlantState(robot, "flight", None, time)

    def stance_state(self, p_c, v_c, foot, theta=0.0, theta_dot=0.0,
                     time=0.0) -> PlantState:
        foot = np.asarray(foot, dtype=float).copy()
        foot[1] = 0.0
        q = inverse_kinematics(np.asarray(p_c, dtype=float), theta, foot,
                               self.geometry)
        robot = RobotState(np.asarray(p_c, dtype=float).copy(),
                           np.asarray(v_c, dtype=float).copy(),
                           float(theta), float(theta_dot), q,
                           self._stance_qdot(np.asarray(p_c, dtype=float),
                                             float(theta), float(theta_dot),
                                             np.asarray(v_c, dtype=float), q),
                           contact=True)
        self._stance_age = 0.0
        return PlantState(robot, "stance", foot, time)

    # -- stance kinematics ----------------------------------------------------

    def _stance_q(self, p_c, theta, foot):
        return inverse_kinematics(p_c, theta, foot, self.geometry)

    def _stance_qdot(self, p_c, theta, theta_dot, v_c, q):
        # foot pinned: 0 = v_c + J_theta w + J_q qdot, J_theta = z x (p_f - p_c)
        Jq = joint_jacobian(theta, q, self.geometry)
        p_f = forward_kinematics(p_c, theta, q, self.geometry)
        r = p_f - p_c
        J_theta = np.array([-r[1], r[0]])
        rhs = -(v_c + J_theta * theta_dot)
        det = Jq[0, 0] * Jq[1, 1] - Jq[0, 1] * Jq[1, 0]
        if abs(det) < 1e-8:
            raise PlantFault(f"stance Jacobian singular (det={det:.2e}) "
                             f"at q={q}")
        return np.array([
            (rhs[0] * Jq[1, 1] - rhs[1] * Jq[0, 1]) / det,
            (-rhs[0] * Jq[1, 0] + rhs[1] * Jq[0, 0]) / det,
        ])

    def _stance_grf(self, p_c, theta, foot, tau):
        try:
            q = self._stance_q(p_c, theta, foot)
        except OutOfWorkspaceError as exc:
            raise PlantFault(f"leg overextended in stance: {exc}") from exc
        try:
            f = grf_from_torque(theta, q, tau, self.geometry, self.ups)
        except np.linalg.LinAlgError as exc:
            raise PlantFault(str(exc)) from exc
        return f, q

    def _stance_derivative(self, y, foot, tau):
        # y = [p(2), theta, v(2), theta_dot]
        p_c = y[0:2]
        theta = y[2]
        f, _ = self._stance_grf(p_c, theta, foot, tau)
        r = foot - p_c
        return np.array([
            y[3], y[4], y[5],
            f[0] / self.constants.mass,
            f[1] / self.constants.mass - self.constants.gravity,
            wedge(r, f) / self.constants.inertia,
        ])

    def _stance_rk4(self, y, foot, tau, h):
        k1 = self._stance_derivative(y, foot, tau)
        k2 = self._stance_derivative(y + 0.5 * h * k1, foot, tau)
        k3 = self._stance_derivative(y + 0.5 * h * k2, foot, tau)
        k4 = self._stance_derivative(y + h * k3, foot, tau)
        return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    # -- flight integration -----------------------------------------------------

    def _flight_torso(self, y, h):
        g = self.constants.gravity
        out = y.copy()
        out[0] = y[0] + y[3] * h
        out[1] = y[1] + y[4] * h - 0.5 * g * h * h
        out[2] = y[2] + y[5] * h
        out[4] = y[4] - g * h
        return out

    def _flight_joint_torque(self, q, qdot, cmd: ActuationCommand, q_hold):
        if cmd.mode == "flight" and cmd.q_des is not None:
            q_des = cmd.q_des
            ff = cmd.tau_ff if cmd.tau_ff is not None else np.zeros(2)
        else:
            # stale stance command right after liftoff: hold position
            q_des = q_hold
            ff = np.zeros(2)
        tau = self.config.pd_kp * (q_des - q) - self.config.pd_kd * qdot + ff
        return np.clip(tau, -self.constants.tau_max, self.constants.tau_max)

    def _flight_joints(self, q, qdot, cmd, q_hold, h):
        """Substepped RK4 on the decoupled joint dynamics."""
        J = self.config.rotor_inertia
        from .kinematics import ups_torque

        def qacc(qv, qd):
            tau = self._flight_joint_torque(qv, qd, cmd, q_hold)
            total = tau.copy()
            total[1] += ups_torque(qv[1], self.ups)
            return total / J, tau
        remaining = h
        tau_last = np.zeros(2)
        while remaining > 1e-15:
            hh = min(JOINT_SUBSTEP, remaining)
            a1, tau_last = qacc(q, qdot)
            q2, qd2 = q + 0.5 * hh * qdot, qdot + 0.5 * hh * a1
            a2, _ = qacc(q2, qd2)
            q3, qd3 = q + 0.5 * hh * qd2, qdot + 0.5 * hh * a2
            a3, _ = qacc(q3, qd3)
            q4, qd4 = q + hh * qd3, qdot + hh * a3
            a4, _ = qacc(q4, qd4)
            q = q + (hh / 6.0) * (qdot + 2 * qd2 + 2 * qd3 + qd4)
            qdot = qdot + (hh / 6.0) * (a1 + 2 * a2 + 2 * a3 + a4)
            remaining -= hh
        return q, qdot, tau_last

    # -- stepping ---------------------------------------------------------------

    def step(self, state: PlantState, cmd: ActuationCommand,
             dt: float | None = None) -> tuple[PlantState, StepResult]:
        """Advance one plant step (dt <= 1e-3), splitting at phase events."""
        dt = self.config.dt if dt is None else dt
        if dt > 1e-3 + 1e-12:
            raise ValueError("plant step must be at most 1 ms")
        events: list = []
        remaining = dt
        state = state.copy()
        guard = 0
        while remaining > 1e-12:
            if state.phase == "stance":
                state, used = self._advance_stance(state, cmd, remaining, events)
            else:
                state, used = self._advance_flight(state, cmd, remaining, events)
            remaining -= used
            guard += 1
            if guard > 8:
                raise PlantFault("event cascade within a single plant step")
        return state, self._sample(state, cmd, events)

    def _sample(self, state: PlantState, cmd: ActuationCommand, events):
        r = state.robot
        if state.phase == "stance":
            tau = self._stance_tau(cmd, r)
            f, q = self._stance_grf(r.p_c, r.theta, state.stance_foot, tau)
            self._check_cone(f, state)
            return StepResult(f, tau, r.qdot.copy(), events)
        tau = self._flight_joint_torque(r.q, r.qdot, cmd, r.q)
        return StepResult(np.zeros(2), tau, r.qdot.copy(), events)

    def _stance_tau(self, cmd: ActuationCommand, robot: RobotState):
        if cmd.mode == "stance" and cmd.tau is not None:
            tau = cmd.tau
        else:
            # stale flight command in the touchdown tick: keep running its PD
            tau = self.config.pd_kp * ((cmd.q_des if cmd.q_des is not None
                                        else robot.q) - robot.q) \
                - self.config.pd_kd * robot.qdot
            if cmd.tau_ff is not None:
                tau = tau + cmd.tau_ff
        return np.clip(tau, -self.constants.tau_max, self.constants.tau_max)

    def _check_cone(self, f, state):
        mu = self.constants.friction_mu
        slack = self.config.mu_margin * abs(f[1]) * mu + self.config.mu_margin_abs
        if abs(f[0]) > mu * f[1] + slack:
            raise PlantFault(
                f"friction cone violated at t={state.time:.4f}: f={f}")

    def _advance_stance(self, state: PlantState, cmd, h, events):
        r = state.robot
        foot = state.stance_foot
        tau = self._stance_tau(cmd, r)
        y0 = np.array([r.p_c[0], r.p_c[1], r.theta, r.v_c[0], r.v_c[1],
                       r.theta_dot])

        def fz_at(y):
            f, _ = self._stance_grf(y[0:2], y[2], foot, tau)
            return f[1]

        y1 = self._stance_rk4(y0, foot, tau, h)
        self._stance_age += h
        debounced = self._stance_age >= self.config.liftoff_min_age
        if debounced and fz_at(y1) <= 0.0 and fz_at(y0) > 0.0:
            lo, hi = 0.0, h
            while hi - lo > EVENT_TOL:
                mid = 0.5 * (lo + hi)
                if fz_at(self._stance_rk4(y0, foot, tau, mid)) <= 0.0:
                    hi = mid
                else:
                    lo = mid
            y_ev = self._stance_rk4(y0, foot, tau, hi)
            t_ev = state.time + hi
            new = self._set_torso(state, y_ev, t_ev, foot)
            new.phase = "flight"
            new.stance_foot = None
            new.robot.contact = False
            events.append(("liftoff", t_ev, None))
            return new, hi
        new = self._set_torso(state, y1, state.time + h, foot)
        return new, h

    def _set_torso(self, state: PlantState, y, t, foot):
        new = state.copy()
        r = new.robot
        r.p_c = y[0:2].copy()
        r.theta = float(y[2])
        r.v_c = y[3:5].copy()
        r.theta_dot = float(y[5])
        new.time = t
        if foot is not None and new.phase == "stance":
            r.q = self._stance_q(r.p_c, r.theta, foot)
            r.qdot = self._stance_qdot(r.p_c, r.theta, r.theta_dot, r.v_c, r.q)
            if not self.constants.q_sane(r.q):
                raise PlantFault(f"joint state outside sanity box: q={r.q}")
        return new

    def _advance_flight(self, state: PlantState, cmd, h, events):
        r = state.robot
        g = self.constants.gravity
        y0 = np.array([r.p_c[0], r.p_c[1], r.theta, r.v_c[0], r.v_c[1],
                       r.theta_dot])
        q_hold = r.q.copy()

        # apex: exact zero crossing of v_z inside the interval
        if r.v_c[1] > 0.0:
            t_apex = r.v_c[1] / g
            if t_apex <= h:
                y_ap = self._flight_torso(y0, t_apex)
                q_ap, qd_ap, _ = self._flight_joints(r.q, r.qdot, cmd, q_hold,
                                                     t_apex)
                new = self._set_torso(state, y_ap, state.time + t_apex, None)
                new.robot.q, new.robot.qdot = q_ap, qd_ap
                events.append(("apex", new.time,
                               ApexState(float(y_ap[1]), float(y_ap[3]))))
                # continue from the apex state within the same call
                new2, used = self._advance_flight(new, cmd, h - t_apex, events)
                return new2, t_apex + used

        def foot_height(tt, q_probe, y=y0):
            y_t = self._flight_torso(y, tt)
            foot = forward_kinematics(y_t[0:2], y_t[2], q_probe, self.geometry)
            return foot[1]

        n_sub = max(1, int(math.ceil(h / JOINT_SUBSTEP)))
        hh = h / n_sub
        t_local = 0.0
        q, qdot = r.q.copy(), r.qdot.copy()
        for _ in range(n_sub):
            q_next, qd_next, _ = self._flight_joints(q, qdot, cmd, q_hold, hh)
            h0 = foot_height(t_local, q)
            h1 = foot_height(t_local + hh, q_next)
            descending = self._flight_torso(y0, t_local + hh)[4] < 0.0 or h1 < h0
            if h0 > 0.0 and h1 <= 0.0 and descending:
                lo, hi = t_local, t_local + hh
                q_lo, qd_lo = q.copy(), qdot.copy()
                while hi - lo > EVENT_TOL:
                    mid = 0.5 * (lo + hi)
                    q_m, qd_m, _ = self._flight_joints(q_lo, qd_lo, cmd, q_hold,
                                                       mid - lo)
                    if foot_height(mid, q_m) <= 0.0:
                        hi = mid
                    else:
                        lo = mid
                        q_lo, qd_lo = q_m, qd_m
                q_ev, qd_ev, _ = self._flight_joints(q_lo, qd_lo, cmd, q_hold,
                                                     hi - lo)
                y_ev = self._flight_torso(y0, hi)
                t_ev = state.time + hi
                foot = forward_kinematics(y_ev[0:2], y_ev[2], q_ev, self.geometry)
                foot = np.array([foot[0], 0.0])
                new = state.copy()
                new.phase = "stance"
                new.stance_foot = foot
                new = self._set_torso(new, y_ev, t_ev, foot)
                new.robot.contact = True
                self._stance_age = 0.0
                events.append(("touchdown", t_ev, foot.copy()))
                return new, hi
            q, qdot = q_next, qd_next
            t_local += hh
        y1 = self._flight_torso(y0, h)
        new = self._set_torso(state, y1, state.time + h, None)
        new.robot.q, new.robot.qdot = q, qdot
        return new, h


def detect_apex(prev: PlantState, new: PlantState,
                gravity: float = 9.81) -> tuple[float, ApexState] | None:
    """Apex event between two flight samples, exact under ballistic flight."""
    if prev.phase != "flight" or new.phase != "flight":
        return None
    if prev.robot.v_c[1] <= 0.0 or new.robot.v_c[1] > 0.0:
        return None
    t_apex = prev.time + prev.robot.v_c[1] / gravity
    height = prev.robot.p_c[1] + 0.5 * prev.robot.v_c[1] ** 2 / gravity
    return t_apex, ApexState(height, prev.robot.v_c[0])
