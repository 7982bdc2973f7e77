"""Kinodynamic MPC: the SRB horizon augmented with stance joint variables.

Decision vector z = [x_1..x_N, f_0..f_(N-1), q_j.., tau_j..] where q/tau
exist exactly at stance steps.  On top of the LTV dynamics and friction
cones shared with the convex layer, stance steps carry the nonlinear rows

    FK(p_c, theta, q) - p_foothold            = 0
    tau + tau_s(q) + J_q(theta, q)^T f        = 0      (massless-leg statics)

plus joint and torque boxes.  The NLP is solved by a fixed number of
Gauss-Newton SQP iterations: the objective is the same diagonal quadratic
as the convex layer (plus the torque regularizer), so its Hessian is exact,
and each subproblem is the linearized-constraint QP with per-variable trust
bounds on the step in place of a line search.  States and GRFs from the SRB
solution warm-start the iterate; joints come from IK against the sketch
foothold and torques from the static map at that iterate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import qp
from .kinematics import (LegGeometry, UpsModel, clamp_to_workspace,
                         coupling_gradients, foot_jacobian,
                         forward_kinematics, inverse_kinematics,
                         joint_jacobian, torque_from_grf, ups_torque,
                         OutOfWorkspaceError)
from .srb_mpc import NX, NF, HorizonRefs, MpcSolution, MpcWeights
from .state import RobotConstants


@dataclass
class SqpSettings:
    outer_iterations: int = 2          # fixed budget in real-time mode
    offline_iterations: int = 20
    constraint_tolerance: float = 1e-3
    gn_damping: float = 1e-6
    trust_q: float = 0.1               # rad per SQP step
    trust_pos: float = 0.2             # m (and rad on pitch) per step
    trust_f: float = 50.0              # N per step

    def __post_init__(self):
        for name in ("outer_iterations", "offline_iterations"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("constraint_tolerance", "gn_damping", "trust_q",
                     "trust_pos", "trust_f"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class KinoModel:
    geometry: LegGeometry
    ups: UpsModel
    constants: RobotConstants
    weights: MpcWeights


@dataclass
class KinoIndexMap:
    horizon: int
    stance_steps: list[int]          # step indices k with contact

    def __post_init__(self):
        self._stance_pos = {k: j for j, k in enumerate(self.stance_steps)}

    @property
    def n_vars(self) -> int:
        return (NX + NF) * self.horizon + 4 * len(self.stance_steps)

    def x_slice(self, k: int) -> slice:
        return slice(NX * (k - 1), NX * k)

    def f_slice(self, k: int) -> slice:
        base = NX * self.horizon
        return slice(base + NF * k, base + NF * (k + 1))

    def q_slice(self, k: int) -> slice:
        j = self._stance_pos[k]
        base = (NX + NF) * self.horizon
        return slice(base + 2 * j, base + 2 * j + 2)

    def tau_slice(self, k: int) -> slice:
        j = self._stance_pos[k]
        base = (NX + NF) * self.horizon + 2 * len(self.stance_steps)
        return slice(base + 2 * j, base + 2 * j + 2)

    def unpack(self, z: np.ndarray, x0: np.ndarray):
        N = self.horizon
        states = np.zeros((N + 1, NX))
        states[0] = x0
        for k in range(1, N + 1):
            states[k] = z[self.x_slice(k)]
        forces = z[NX * N:(NX + NF) * N].reshape(N, NF).copy()
        angles = {k: z[self.q_slice(k)].copy() for k in self.stance_steps}
        torques = {k: z[self.tau_slice(k)].copy() for k in self.stance_steps}
        return states, forces, angles, torques


@dataclass
class ConstraintData:
    value: np.ndarray
    jacobian: sp.csc_matrix
    lower: np.ndarray
    upper: np.ndarray

    def max_violation(self) -> float:
        over = np.maximum(self.value - self.upper, 0.0)
        under = np.maximum(self.lower - self.value, 0.0)
        return float(max(np.max(over, initial=0.0), np.max(under, initial=0.0)))


def index_map_for(refs: HorizonRefs) -> KinoIndexMap:
    return KinoIndexMap(refs.horizon,
                        [k for k, st in enumerate(refs.steps) if st.contact])


def _state_at(z: np.ndarray, idx: KinoIndexMap, x0: np.ndarray, k: int) -> np.ndarray:
    return x0 if k == 0 else z[idx.x_slice(k)]


def evaluate_constraints(z: np.ndarray, x0: np.ndarray, refs: HorizonRefs,
                         idx: KinoIndexMap, model: KinoModel) -> ConstraintData:
    """Stack constraint values, bounds, and the sparse Jacobian at iterate z."""
    N = refs.horizon
    S = idx.stance_steps
    m = NX * N + 6 * len(S) + 3 * N     # dynamics, fk+coupling+boxes, cones
    m += 2 * len(S)                      # tau boxes
    value = np.zeros(m)
    lower = np.zeros(m)
    upper = np.zeros(m)
    rows, cols, vals = [], [], []

    def put(r, sl, block):
        block = np.atleast_2d(block)
        for i in range(block.shape[0]):
            for j in range(block.shape[1]):
                v = block[i, j]
                if v != 0.0:
                    rows.append(r + i)
                    cols.append(sl.start + j)
                    vals.append(v)

    # dynamics rows: x_{k+1} - A x_k - B f_k - d = 0
    r = 0
    for k in range(N):
        st = refs.steps[k]
        xk = _state_at(z, idx, x0, k)
        xk1 = z[idx.x_slice(k + 1)]
        fk = z[idx.f_slice(k)]
        value[r:r + NX] = xk1 - st.A @ xk - st.B @ fk - st.d
        put(r, idx.x_slice(k + 1), np.eye(NX))
        if k > 0:
            put(r, idx.x_slice(k), -st.A)
        put(r, idx.f_slice(k), -st.B)
        r += NX

    geom, ups = model.geometry, model.ups
    for k in S:
        xk = _state_at(z, idx, x0, k)
        qk = z[idx.q_slice(k)]
        fk = z[idx.f_slice(k)]
        tauk = z[idx.tau_slice(k)]
        p_c, theta = xk[0:2], xk[2]
        foot = refs.footholds[k]
        # FK row pair
        Jfoot = foot_jacobian(p_c, theta, qk, geom)
        value[r:r + 2] = forward_kinematics(p_c, theta, qk, geom) - foot
        if k > 0:
            put(r, slice(idx.x_slice(k).start, idx.x_slice(k).start + 3), Jfoot[:, 0:3])
        put(r, idx.q_slice(k), Jfoot[:, 3:5])
        r += 2
        # coupling row pair: tau + tau_s(q) + J_q^T f = 0
        Jq = joint_jacobian(theta, qk, geom)
        g = tauk.copy()
        g[1] += ups_torque(qk[1], ups)
        g += Jq.T @ fk
        value[r:r + 2] = g
        dg_dq, dg_dtheta = coupling_gradients(theta, qk, fk, geom, ups)
        put(r, idx.tau_slice(k), np.eye(2))
        put(r, idx.f_slice(k), Jq.T)
        put(r, idx.q_slice(k), dg_dq)
        if k > 0:
            put(r, slice(idx.x_slice(k).start + 2, idx.x_slice(k).start + 3),
                dg_dtheta.reshape(2, 1))
        r += 2
        # joint box
        value[r:r + 2] = qk
        lower[r:r + 2] = model.constants.q_min
        upper[r:r + 2] = model.constants.q_max
        put(r, idx.q_slice(k), np.eye(2))
        r += 2
        # torque box
        value[r:r + 2] = tauk
        lower[r:r + 2] = -model.constants.tau_max
        upper[r:r + 2] = model.constants.tau_max
        put(r, idx.tau_slice(k), np.eye(2))
        r += 2

    mu = model.constants.friction_mu
    for k in range(N):
        st = refs.steps[k]
        fk = z[idx.f_slice(k)]
        value[r] = fk[0] - mu * fk[1]
        lower[r] = -qp.QP_INF
        upper[r] = 0.0
        put(r, idx.f_slice(k), np.array([[1.0, -mu]]))
        value[r + 1] = fk[0] + mu * fk[1]
        lower[r + 1] = 0.0
        upper[r + 1] = qp.QP_INF
        put(r + 1, idx.f_slice(k), np.array([[1.0, mu]]))
        value[r + 2] = fk[1]
        lower[r + 2] = 0.0
        upper[r + 2] = st.contact * st.f_max
        put(r + 2, idx.f_slice(k), np.array([[0.0, 1.0]]))
        r += 3
    jac = sp.csc_matrix((vals, (rows, cols)), shape=(m, idx.n_vars))
    return ConstraintData(value, jac, lower, upper)


def objective_terms(refs: HorizonRefs, idx: KinoIndexMap, model: KinoModel):
    """Diagonal weight vector and reference for the quadratic objective."""
    w = np.zeros(idx.n_vars)
    z_ref = np.zeros(idx.n_vars)
    gam = model.weights.gamma
    for k in range(1, refs.horizon + 1):
        w[idx.x_slice(k)] = (gam ** k) * model.weights.q_state
        z_ref[idx.x_slice(k)] = refs.x_ref[k]
    for k in range(refs.horizon):
        w[idx.f_slice(k)] = (gam ** k) * model.weights.r_f
        z_ref[idx.f_slice(k)] = refs.f_ref[k]
    for k in idx.stance_steps:
        w[idx.tau_slice(k)] = (gam ** k) * model.weights.r_tau
    return w, z_ref


def objective_value(z, w, z_ref) -> float:
    d = z - z_ref
    return float(w @ (d * d))


def build_sqp_subproblem(z: np.ndarray, cd: ConstraintData, w: np.ndarray,
                         z_ref: np.ndarray, idx: KinoIndexMap,
                         settings: SqpSettings) -> qp.QpProblem:
    """Trust-bounded QP over the step d (Gauss-Newton; the objective is
    quadratic so the Hessian 2W is exact up to the damping term)."""
    n = idx.n_vars
    p_diag = 2.0 * w + settings.gn_damping
    grad = 2.0 * w * (z - z_ref)
    lo = np.where(cd.lower <= -qp.QP_INF, -qp.QP_INF, cd.lower - cd.value)
    up = np.where(cd.upper >= qp.QP_INF, qp.QP_INF, cd.upper - cd.value)
    # trust rows on positions/pitch, forces, and joint angles
    t_idx, t_bound = [], []
    for k in range(1, idx.horizon + 1):
        s = idx.x_slice(k)
        t_idx.extend(range(s.start, s.start + 3))
        t_bound.extend([settings.trust_pos] * 3)
    for k in range(idx.horizon):
        s = idx.f_slice(k)
        t_idx.extend(range(s.start, s.stop))
        t_bound.extend([settings.trust_f] * 2)
    for k in idx.stance_steps:
        s = idx.q_slice(k)
        t_idx.extend(range(s.start, s.stop))
        t_bound.extend([settings.trust_q] * 2)
    t_bound = np.array(t_bound)
    trust = sp.csc_matrix((np.ones(len(t_idx)), (np.arange(len(t_idx)), t_idx)),
                          shape=(len(t_idx), n))
    A = sp.vstack([cd.jacobian, trust]).tocsc()
    lower = np.concatenate([lo, -t_bound])
    upper = np.concatenate([up, t_bound])
    return qp.QpProblem(sp.diags(p_diag).tocsc(), grad, A, lower, upper,
                        validate=False)


def initialize_decision(refs: HorizonRefs, srb: MpcSolution, x0: np.ndarray,
                        idx: KinoIndexMap, model: KinoModel):
    """Warm iterate from the SRB plan; IK joints, statically consistent torques."""
    z = np.zeros(idx.n_vars)
    flags: list[str] = []
    for k in range(1, refs.horizon + 1):
        z[idx.x_slice(k)] = srb.states[k]
    for k in range(refs.horizon):
        z[idx.f_slice(k)] = srb.forces[k]
    for k in idx.stance_steps:
        xk = x0 if k == 0 else srb.states[k]
        foot = refs.footholds[k]
        try:
            qk = inverse_kinematics(xk[0:2], xk[2], foot, model.geometry)
        except OutOfWorkspaceError:
            foot, _ = clamp_to_workspace(xk[0:2], xk[2], foot, model.geometry,
                                         margin=1e-4)
            qk = inverse_kinematics(xk[0:2], xk[2], foot, model.geometry)
            flags.append(f"ik-clamped@{k}")
        z[idx.q_slice(k)] = qk
        z[idx.tau_slice(k)] = torque_from_grf(xk[2], qk, srb.forces[k],
                                              model.geometry, model.ups)
    return z, flags


def solve_kino(refs: HorizonRefs, srb: MpcSolution, x0: np.ndarray,
               model: KinoModel, settings: SqpSettings | None = None,
               qp_settings: qp.SolverSettings | None = None,
               warm_dual: np.ndarray | None = None,
               real_time: bool = True) -> MpcSolution:
    """Run the fixed-iteration SQP warm-started from the SRB solution."""
    settings = settings or SqpSettings()
    idx = index_map_for(refs)
    x0 = np.asarray(x0, dtype=float)
    z, flags = initialize_decision(refs, srb, x0, idx, model)
    w, z_ref = objective_terms(refs, idx, model)
    iters = settings.outer_iterations if real_time else settings.offline_iterations
    total_qp_iters = 0
    solve_time = 0.0
    dual = None
    degraded = bool(flags)
    for it in range(iters):
        cd = evaluate_constraints(z, x0, refs, idx, model)
        sub = build_sqp_subproblem(z, cd, w, z_ref, idx, settings)
        ws = None
        if warm_dual is not None and warm_dual.shape == (sub.m,):
            ws = (np.zeros(sub.n), warm_dual)
        sol = qp.solve(sub, qp_settings, warm_start=ws, real_time=real_time)
        solve_time += sol.solve_time
        total_qp_iters += sol.iterations
        if sol.status in ("primal_infeasible", "dual_infeasible"):
            degraded = True
            break
        z = z + sol.x
        dual = sol.y
        warm_dual = sol.y
        if not real_time and np.max(np.abs(sol.x)) < 1e-8:
            break
    cd = evaluate_constraints(z, x0, refs, idx, model)
    states, forces, angles, torques = idx.unpack(z, x0)
    return MpcSolution(
        times=refs.times.copy(), states=states, forces=forces,
        contact=np.array([s.contact for s in refs.steps]),
        status="degraded" if degraded else "solved",
        iterations=total_qp_iters, solve_time=solve_time,
        joint_angles=angles, joint_torques=torques,
        max_violation=cd.max_violation(), degraded=degraded,
        primal=z, dual=dual)


class TorqueExtractionError(RuntimeError):
    pass


def torque_extraction(solution: MpcSolution, constants: RobotConstants,
                      k: int = 0) -> np.ndarray:
    """First-step stance torque command, clamped to the actuator box."""
    if k not in solution.joint_torques:
        raise TorqueExtractionError(
            f"step {k} is a flight step; route to the swing controller")
    tau = solution.joint_torques[k]
    return np.clip(tau, -constants.tau_max, constants.tau_max)
