"""Convex MPC on the single-rigid-body model.

The torso dynamics ``[p_c, theta, v_c, theta_dot]'`` are affine once the
foot lever arm ``r = p_f - p_c`` is frozen at the reference trajectory, so
the wedge torque row ``(r ^ f)/I`` is linear in the GRF.  Each horizon step
is discretized with forward Euler on the extended (affine-offset) system and
the whole horizon is transcribed into one sparse QP over
``[x_1..x_N, f_0..f_(N-1)]`` with friction-cone and contact-schedule rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import qp
from .slip import MotionSketch
from .state import RobotConstants

NX = 6   # [p_x, p_z, theta, v_x, v_z, theta_dot]
NF = 2


@dataclass
class SrbState:
    p_c: np.ndarray
    theta: float
    v_c: np.ndarray
    theta_dot: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.p_c[0], self.p_c[1], self.theta,
                         self.v_c[0], self.v_c[1], self.theta_dot])

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "SrbState":
        return cls(np.array(x[0:2]), float(x[2]), np.array(x[3:5]), float(x[5]))


@dataclass
class LtvStep:
    A: np.ndarray      # 6x6
    B: np.ndarray      # 6x2
    d: np.ndarray      # 6
    dt: float
    contact: int
    f_max: float


@dataclass
class MpcWeights:
    q_state: np.ndarray = field(
        default_factory=lambda: np.array([10.0, 10.0, 1.0, 1.0, 0.0, 0.1]))
    r_f: np.ndarray = field(default_factory=lambda: np.array([1e-5, 1e-5]))
    r_tau: np.ndarray = field(default_factory=lambda: np.array([1e-5, 1e-5]))
    gamma: float = 0.95
    horizon: int = 10

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must be in (0, 1)")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if np.any(self.q_state < 0) or np.any(self.r_f < 0) or np.any(self.r_tau < 0):
            raise ValueError("weights must be nonnegative")


def srb_vector_field(x: np.ndarray, f: np.ndarray, r_ref: np.ndarray,
                     mass: float, inertia: float, gravity: float) -> np.ndarray:
    """Continuous dynamics with the lever arm frozen at the reference."""
    return np.array([
        x[3], x[4], x[5],
        f[0] / mass,
        f[1] / mass - gravity,
        (r_ref[0] * f[1] - r_ref[1] * f[0]) / inertia,
    ])


def linearize_discretize(ref_state: np.ndarray, ref_foot: np.ndarray,
                         ref_grf: np.ndarray, mass: float, inertia: float,
                         dt: float, contact: int, f_max: float,
                         gravity: float = 9.81) -> LtvStep:
    """Forward-Euler LTV step around the reference; exact for this affine model.

    ``ref_grf`` is part of the reference interface but does not enter the
    matrices: with ``r`` frozen the dynamics are already affine in (x, f).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    Ac = np.zeros((NX, NX))
    Ac[0:3, 3:6] = np.eye(3)
    Bc = np.zeros((NX, NF))
    if contact:
        r = np.asarray(ref_foot, dtype=float) - np.asarray(ref_state[0:2], dtype=float)
        Bc[3, 0] = 1.0 / mass
        Bc[4, 1] = 1.0 / mass
        Bc[5, 0] = -r[1] / inertia
        Bc[5, 1] = r[0] / inertia
    dc = np.zeros(NX)
    dc[4] = -gravity
    return LtvStep(np.eye(NX) + dt * Ac, dt * Bc, dt * dc, dt,
                   int(bool(contact)), f_max)


@dataclass
class ScheduleStep:
    t0: float          # sketch time at the step start
    dt: float
    contact: int


@dataclass
class HorizonRefs:
    """Per-step references and LTV data extracted from a motion sketch."""

    steps: list[LtvStep]
    x_ref: np.ndarray        # (N+1, 6) boundary references
    f_ref: np.ndarray        # (N, 2)
    footholds: np.ndarray    # (N, 2) foothold per step (next stance's in flight)
    times: np.ndarray        # (N+1,) boundary times in sketch time

    @property
    def horizon(self) -> int:
        return len(self.steps)


def uniform_schedule(sketch: MotionSketch, t_now: float, horizon: int,
                     span: float) -> list[ScheduleStep]:
    """Uniform fallback schedule (the controller supplies event-aligned ones)."""
    dt = span / horizon
    return [ScheduleStep(t_now + k * dt, dt,
                         int(sketch.contact_at(t_now + (k + 0.5) * dt)))
            for k in range(horizon)]


def horizon_refs(sketch: MotionSketch, schedule: list[ScheduleStep],
                 constants: RobotConstants, f_max: float | None = None) -> HorizonRefs:
    """Interpolate the sketch onto the schedule and build the LTV steps."""
    if f_max is None:
        f_max = 10.0 * constants.mass * constants.gravity
    N = len(schedule)
    x_ref = np.zeros((N + 1, NX))
    f_ref = np.zeros((N, NF))
    feet = np.zeros((N, 2))
    times = np.zeros(N + 1)
    steps = []
    for k, st in enumerate(schedule):
        times[k] = st.t0
        x_ref[k] = sketch.state6_at(st.t0)
        t_mid = st.t0 + 0.5 * st.dt
        f_ref[k] = sketch.grf_at(t_mid) if st.contact else 0.0
        feet[k] = sketch.foothold_at(t_mid)
        steps.append(linearize_discretize(
            x_ref[k], feet[k], f_ref[k], constants.mass, constants.inertia,
            st.dt, st.contact, f_max, constants.gravity))
    times[N] = schedule[-1].t0 + schedule[-1].dt
    x_ref[N] = sketch.state6_at(times[N])
    return HorizonRefs(steps, x_ref, f_ref, feet, times)


@dataclass
class SrbIndexMap:
    horizon: int

    def x_slice(self, k: int) -> slice:
        """Variables for state x_k, k = 1..N."""
        return slice(NX * (k - 1), NX * k)

    def f_slice(self, k: int) -> slice:
        """Variables for GRF f_k, k = 0..N-1."""
        base = NX * self.horizon
        return slice(base + NF * k, base + NF * (k + 1))

    @property
    def n_vars(self) -> int:
        return (NX + NF) * self.horizon

    def unpack(self, xvec: np.ndarray, x0: np.ndarray):
        N = self.horizon
        states = np.zeros((N + 1, NX))
        states[0] = x0
        for k in range(1, N + 1):
            states[k] = xvec[self.x_slice(k)]
        forces = xvec[NX * N:].reshape(N, NF).copy()
        return states, forces


@dataclass
class MpcSolution:
    times: np.ndarray            # (N+1,) boundary times
    states: np.ndarray           # (N+1, 6) including the fixed x_0
    forces: np.ndarray           # (N, 2)
    contact: np.ndarray          # (N,)
    status: str
    iterations: int
    solve_time: float
    joint_angles: dict[int, np.ndarray] = field(default_factory=dict)
    joint_torques: dict[int, np.ndarray] = field(default_factory=dict)
    max_violation: float = 0.0
    degraded: bool = False
    primal: np.ndarray | None = None     # raw decision vector (warm starts)
    dual: np.ndarray | None = None


def build_srb_qp(refs: HorizonRefs, x0: np.ndarray, weights: MpcWeights,
                 constants: RobotConstants, validate: bool = False):
    """Transcribe the tracking problem into a QpProblem; returns (problem, map).

    Cost: sum_k gamma^k (|x_k - x_k^des|_Q^2 + |f_k - f_k^des|_R^2) with the
    k = N state term as the terminal cost.  The fixed x_0 only contributes a
    constant and is excluded.  Rows: dynamics equalities, then per-step
    friction cones |f_x| <= mu f_z and 0 <= f_z <= c_k f_max.
    """
    N = refs.horizon
    idx = SrbIndexMap(N)
    n = idx.n_vars
    x0 = np.asarray(x0, dtype=float)

    p_diag = np.zeros(n)
    q_lin = np.zeros(n)
    gam = weights.gamma
    for k in range(1, N + 1):
        w = (gam ** k) * weights.q_state
        p_diag[idx.x_slice(k)] = 2.0 * w
        q_lin[idx.x_slice(k)] = -2.0 * w * refs.x_ref[k]
    for k in range(N):
        w = (gam ** k) * weights.r_f
        p_diag[idx.f_slice(k)] = 2.0 * w
        q_lin[idx.f_slice(k)] = -2.0 * w * refs.f_ref[k]

    rows, cols, vals = [], [], []
    lower = np.zeros(NX * N + 3 * N)
    upper = np.zeros(NX * N + 3 * N)

    def put(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    for k in range(N):
        st = refs.steps[k]
        r0 = NX * k
        xs = idx.x_slice(k + 1)
        for i in range(NX):
            put(r0 + i, xs.start + i, 1.0)
        fs = idx.f_slice(k)
        for i in range(NX):
            for j in range(NF):
                if st.B[i, j] != 0.0:
                    put(r0 + i, fs.start + j, -st.B[i, j])
        if k == 0:
            rhs = st.A @ x0 + st.d
            lower[r0:r0 + NX] = rhs
            upper[r0:r0 + NX] = rhs
        else:
            xp = idx.x_slice(k)
            for i in range(NX):
                for j in range(NX):
                    if st.A[i, j] != 0.0:
                        put(r0 + i, xp.start + j, -st.A[i, j])
            lower[r0:r0 + NX] = st.d
            upper[r0:r0 + NX] = st.d

    mu = constants.friction_mu
    base = NX * N
    for k in range(N):
        st = refs.steps[k]
        fs = idx.f_slice(k)
        r = base + 3 * k
        put(r, fs.start, 1.0)
        put(r, fs.start + 1, -mu)
        lower[r] = -qp.QP_INF
        upper[r] = 0.0
        put(r + 1, fs.start, 1.0)
        put(r + 1, fs.start + 1, mu)
        lower[r + 1] = 0.0
        upper[r + 1] = qp.QP_INF
        put(r + 2, fs.start + 1, 1.0)
        lower[r + 2] = 0.0
        upper[r + 2] = st.contact * st.f_max
    m = NX * N + 3 * N
    A = sp.csc_matrix((vals, (rows, cols)), shape=(m, n))
    problem = qp.QpProblem(sp.diags(p_diag).tocsc(), q_lin, A, lower, upper,
                           validate=validate)
    return problem, idx


def shift_warm_start(primal: np.ndarray, dual: np.ndarray, idx: SrbIndexMap):
    """Shift a previous solution one step forward, repeating the tail.

    Duals shift within the dynamics and cone blocks with zero fill at the
    tail rows.
    """
    N = idx.horizon
    x = primal.copy()
    for k in range(1, N):
        x[idx.x_slice(k)] = primal[idx.x_slice(k + 1)]
    for k in range(N - 1):
        x[idx.f_slice(k)] = primal[idx.f_slice(k + 1)]
    y = dual.copy()
    dyn = NX * N
    y[:dyn - NX] = dual[NX:dyn]
    y[dyn - NX:dyn] = 0.0
    y[dyn:dyn + 3 * (N - 1)] = dual[dyn + 3:dyn + 3 * N]
    y[dyn + 3 * (N - 1):] = 0.0
    return x, y


def solve_srb(problem: qp.QpProblem, idx: SrbIndexMap, refs: HorizonRefs,
              x0: np.ndarray, settings: qp.SolverSettings | None = None,
              warm_start: tuple[np.ndarray, np.ndarray] | None = None,
              real_time: bool = False) -> MpcSolution:
    sol = qp.solve(problem, settings, warm_start=warm_start, real_time=real_time)
    states, forces = idx.unpack(sol.x, x0)
    return MpcSolution(
        times=refs.times.copy(), states=states, forces=forces,
        contact=np.array([s.contact for s in refs.steps]),
        status=sol.status, iterations=sol.iterations, solve_time=sol.solve_time,
        primal=sol.x, dual=sol.y,
        degraded=sol.status in ("primal_infeasible", "dual_infeasible"))
