"""SLIP template dynamics, gait library, and motion-sketch generation.

The template is a point mass on a massless prismatic spring.  Flight is
ballistic (integrated in closed form); stance integrates
``m p'' = m g + k (|r| - r0) r_hat`` with fixed-step RK4 plus bisection
refinement of the liftoff event.  Apex-to-apex return maps built on top of
the rollout drive an offline gait library: one fixed-point entry per
commanded speed with a least-squares deadbeat feedback gain on the
touchdown angle.

Conservative-SLIP note: energy is invariant under the return map for any
touchdown angle, so fixed points at a commanded speed form a one-parameter
family in (apex height, angle).  The library pins the apex height to the
configured gait height and solves the touchdown angle, which makes entries
unique, reproducible, and exactly mirror-symmetric in speed.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .state import ConfigError

try:
    from numba import njit
except ImportError:      # pragma: no cover - numba is a normal dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

STANCE_DT = 1e-4            # RK4 step for all template rollouts (s)
EVENT_TOL = 1e-10           # event-time bisection tolerance (s)
_MAX_STANCE_STEPS = 50000

STATUS_OK = 0
STATUS_GROUND_STRIKE = 1
STATUS_NO_LIFTOFF = 2


class SlipRolloutError(RuntimeError):
    """A template rollout hit a tagged failure (used by sketch generation)."""

    def __init__(self, tag: str):
        self.tag = tag
        super().__init__(f"SLIP rollout failed: {tag}")


class FixedPointError(RuntimeError):
    def __init__(self, speed: float, residual: float, message: str = ""):
        self.speed = speed
        self.residual = residual
        super().__init__(message or
                         f"no gait fixed point at {speed} m/s (residual {residual:.3e})")


class GaitLibraryError(ValueError):
    pass


@dataclass
class SlipParams:
    mass: float = 2.5
    stiffness: float = 1500.0      # prismatic spring constant (N/m)
    rest_length: float = 0.32
    gravity: float = 9.81

    def __post_init__(self):
        for name in ("mass", "stiffness", "rest_length", "gravity"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"SLIP {name} must be positive")


@dataclass
class ApexState:
    height: float       # p_cz at the apex (m)
    velocity: float     # forward speed at the apex (m/s)

    def as_array(self) -> np.ndarray:
        return np.array([self.height, self.velocity])


@dataclass
class GaitEntry:
    commanded_speed: float
    apex: ApexState
    alpha: float                 # touchdown leg angle from vertical, +forward (rad)
    gain: np.ndarray             # deadbeat row K (2,): alpha += K . (apex - apex*)
    residual: float              # fixed-point residual |apex - h(apex, alpha)|


@dataclass
class GaitTuple:
    """Interpolated (apex*, alpha*, K) as returned by a library query."""
    apex: ApexState
    alpha: float
    gain: np.ndarray


# ----------------------------------------------------------------------------
# stance integration kernels
# ----------------------------------------------------------------------------

@njit(cache=True)
def _accel(px, pz, foot_x, foot_z, m, ks, r0, g):
    rx = foot_x - px
    rz = foot_z - pz
    rn = math.sqrt(rx * rx + rz * rz)
    c = ks * (rn - r0) / (m * rn)
    return c * rx, c * rz - g


@njit(cache=True)
def _rk4_step(px, pz, vx, vz, foot_x, foot_z, m, ks, r0, g, dt):
    ax1, az1 = _accel(px, pz, foot_x, foot_z, m, ks, r0, g)
    px2 = px + 0.5 * dt * vx
    pz2 = pz + 0.5 * dt * vz
    vx2 = vx + 0.5 * dt * ax1
    vz2 = vz + 0.5 * dt * az1
    ax2, az2 = _accel(px2, pz2, foot_x, foot_z, m, ks, r0, g)
    px3 = px + 0.5 * dt * vx2
    pz3 = pz + 0.5 * dt * vz2
    vx3 = vx + 0.5 * dt * ax2
    vz3 = vz + 0.5 * dt * az2
    ax3, az3 = _accel(px3, pz3, foot_x, foot_z, m, ks, r0, g)
    px4 = px + dt * vx3
    pz4 = pz + dt * vz3
    vx4 = vx + dt * ax3
    vz4 = vz + dt * az3
    ax4, az4 = _accel(px4, pz4, foot_x, foot_z, m, ks, r0, g)
    px_n = px + dt / 6.0 * (vx + 2.0 * vx2 + 2.0 * vx3 + vx4)
    pz_n = pz + dt / 6.0 * (vz + 2.0 * vz2 + 2.0 * vz3 + vz4)
    vx_n = vx + dt / 6.0 * (ax1 + 2.0 * ax2 + 2.0 * ax3 + ax4)
    vz_n = vz + dt / 6.0 * (az1 + 2.0 * az2 + 2.0 * az3 + az4)
    return px_n, pz_n, vx_n, vz_n


@njit(cache=True)
def _leg_sq(px, pz, foot_x, foot_z):
    rx = foot_x - px
    rz = foot_z - pz
    return rx * rx + rz * rz


@njit(cache=True)
def _refine_liftoff(px, pz, vx, vz, foot_x, foot_z, m, ks, r0, g, dt):
    """Bisect the sub-step time at which |r| crosses r0 from below."""
    lo = 0.0
    hi = dt
    r0sq = r0 * r0
    while hi - lo > EVENT_TOL:
        mid = 0.5 * (lo + hi)
        qx, qz, _, _ = _rk4_step(px, pz, vx, vz, foot_x, foot_z, m, ks, r0, g, mid)
        if _leg_sq(qx, qz, foot_x, foot_z) >= r0sq:
            hi = mid
        else:
            lo = mid
    return _rk4_step(px, pz, vx, vz, foot_x, foot_z, m, ks, r0, g, hi), hi


@njit(cache=True)
def _stance_to_liftoff(px, pz, vx, vz, foot_x, foot_z, m, ks, r0, g, dt):
    """Integrate stance until liftoff; returns (status, t, px, pz, vx, vz)."""
    t = 0.0
    r0sq = r0 * r0
    inside = False
    for _ in range(_MAX_STANCE_STEPS):
        if pz <= 0.0:
            return STATUS_GROUND_STRIKE, t, px, pz, vx, vz
        nx, nz, nvx, nvz = _rk4_step(px, pz, vx, vz, foot_x, foot_z, m, ks, r0, g, dt)
        crossed = _leg_sq(nx, nz, foot_x, foot_z) >= r0sq
        if inside and crossed:
            (qx, qz, qvx, qvz), dt_ev = _refine_liftoff(
                px, pz, vx, vz, foot_x, foot_z, m, ks, r0, g, dt)
            return STATUS_OK, t + dt_ev, qx, qz, qvx, qvz
        if not crossed:
            inside = True
        px, pz, vx, vz = nx, nz, nvx, nvz
        t += dt
    return STATUS_NO_LIFTOFF, t, px, pz, vx, vz


@njit(cache=True)
def _stance_record(px, pz, vx, vz, foot_x, foot_z, m, ks, r0, g, dt, out):
    """Like _stance_to_liftoff but records (t, px, pz, vx, vz) every step into out."""
    t = 0.0
    r0sq = r0 * r0
    inside = False
    n = 0
    out[n, 0] = t
    out[n, 1] = px
    out[n, 2] = pz
    out[n, 3] = vx
    out[n, 4] = vz
    n += 1
    while n < out.shape[0]:
        if pz <= 0.0:
            return STATUS_GROUND_STRIKE, n, t
        nx, nz, nvx, nvz = _rk4_step(px, pz, vx, vz, foot_x, foot_z, m, ks, r0, g, dt)
        crossed = _leg_sq(nx, nz, foot_x, foot_z) >= r0sq
        if inside and crossed:
            (qx, qz, qvx, qvz), dt_ev = _refine_liftoff(
                px, pz, vx, vz, foot_x, foot_z, m, ks, r0, g, dt)
            out[n, 0] = t + dt_ev
            out[n, 1] = qx
            out[n, 2] = qz
            out[n, 3] = qvx
            out[n, 4] = qvz
            return STATUS_OK, n + 1, t + dt_ev
        if not crossed:
            inside = True
        px, pz, vx, vz = nx, nz, nvx, nvz
        t += dt
        out[n, 0] = t
        out[n, 1] = px
        out[n, 2] = pz
        out[n, 3] = vx
        out[n, 4] = vz
        n += 1
    return STATUS_NO_LIFTOFF, n, t


def slip_grf(p: np.ndarray, foot: np.ndarray, params: SlipParams) -> np.ndarray:
    """Spring force on the mass (the template GRF); upward under compression."""
    r = foot - p
    rn = float(np.hypot(r[0], r[1]))
    return params.stiffness * (rn - params.rest_length) * (r / rn)


def integrate_stance(p: np.ndarray, v: np.ndarray, foot: np.ndarray,
                     params: SlipParams, dt: float = STANCE_DT):
    """One RK4 step of the stance ODE; returns (p, v, grf at the new state)."""
    px, pz, vx, vz = _rk4_step(p[0], p[1], v[0], v[1], foot[0], foot[1],
                               params.mass, params.stiffness,
                               params.rest_length, params.gravity, dt)
    p_new = np.array([px, pz])
    return p_new, np.array([vx, vz]), slip_grf(p_new, foot, params)


def slip_energy(p: np.ndarray, v: np.ndarray, foot: np.ndarray,
                params: SlipParams) -> float:
    """Total mechanical energy of the template in stance."""
    r = float(np.hypot(foot[0] - p[0], foot[1] - p[1]))
    compression = r - params.rest_length
    return (0.5 * params.mass * float(v @ v)
            + params.mass * params.gravity * p[1]
            + 0.5 * params.stiffness * compression * compression)


# ----------------------------------------------------------------------------
# apex return map
# ----------------------------------------------------------------------------

@dataclass
class ReturnMapResult:
    ok: bool
    apex: ApexState | None
    reason: str = ""
    t_touchdown: float = math.nan     # relative to the starting apex
    t_liftoff: float = math.nan
    t_apex: float = math.nan
    touchdown: tuple | None = None    # (p, v, foot) at touchdown
    liftoff: tuple | None = None      # (p, v) at liftoff


def _flight_to_touchdown(apex: ApexState, alpha: float, params: SlipParams):
    """Analytic ballistic descent from the apex to leg contact at angle alpha."""
    touchdown_height = params.rest_length * math.cos(alpha)
    drop = apex.height - touchdown_height
    if drop < 0.0:
        return None
    t = math.sqrt(2.0 * drop / params.gravity)
    p = np.array([apex.velocity * t, touchdown_height])
    v = np.array([apex.velocity, -params.gravity * t])
    foot = np.array([p[0] + params.rest_length * math.sin(alpha), 0.0])
    return t, p, v, foot


def apex_return_map(apex: ApexState, alpha: float,
                    params: SlipParams) -> ReturnMapResult:
    """Simulate flight -> stance -> flight to the next apex; deterministic."""
    td = _flight_to_touchdown(apex, alpha, params)
    if td is None:
        return ReturnMapResult(False, None, "unreachable-touchdown")
    t_td, p_td, v_td, foot = td
    status, t_st, px, pz, vx, vz = _stance_to_liftoff(
        p_td[0], p_td[1], v_td[0], v_td[1], foot[0], foot[1],
        params.mass, params.stiffness, params.rest_length, params.gravity,
        STANCE_DT)
    if status == STATUS_GROUND_STRIKE:
        return ReturnMapResult(False, None, "ground-strike")
    if status == STATUS_NO_LIFTOFF:
        return ReturnMapResult(False, None, "no-liftoff")
    if vz <= 0.0:
        return ReturnMapResult(False, None, "no-apex")
    t_up = vz / params.gravity
    apex_next = ApexState(pz + 0.5 * vz * vz / params.gravity, vx)
    return ReturnMapResult(
        True, apex_next,
        t_touchdown=t_td, t_liftoff=t_td + t_st, t_apex=t_td + t_st + t_up,
        touchdown=(p_td, v_td, foot),
        liftoff=(np.array([px, pz]), np.array([vx, vz])))


# ----------------------------------------------------------------------------
# gait fixed points, deadbeat gains, library
# ----------------------------------------------------------------------------

FD_STEP_FIXED_POINT = 1e-6
FD_STEP_GAIN = 1e-5


def fixed_point_residual(height: float, speed: float, alpha: float,
                         params: SlipParams) -> np.ndarray | None:
    """apex - h(apex, alpha) for apex = (height, speed); None on rollout failure."""
    res = apex_return_map(ApexState(height, speed), alpha, params)
    if not res.ok:
        return None
    return np.array([height - res.apex.height, speed - res.apex.velocity])


def solve_fixed_point(target_speed: float, params: SlipParams,
                      initial_guess: tuple[float, float],
                      tol: float = 1e-9, max_iter: int = 100) -> GaitEntry:
    """Find the periodic gait at ``target_speed``.

    Levenberg-Marquardt with finite-difference derivatives on the touchdown
    angle, apex height pinned to the guess height (see module docstring for
    why the height direction is a gauge).  The reported residual is the full
    two-component fixed-point mismatch.
    """
    if abs(target_speed) > 3.0 + 1e-9:
        raise GaitLibraryError(f"speed {target_speed} outside library range [-3, 3]")
    height, alpha = float(initial_guess[0]), float(initial_guess[1])

    def speed_residual(a: float) -> float | None:
        r = fixed_point_residual(height, target_speed, a, params)
        return None if r is None else float(r[1])

    r = speed_residual(alpha)
    if r is None:
        raise FixedPointError(target_speed, math.inf,
                              f"initial guess infeasible at {target_speed} m/s")
    lam = 1e-3
    for _ in range(max_iter):
        if abs(r) < tol:
            break
        r_h = speed_residual(alpha + FD_STEP_FIXED_POINT)
        if r_h is None:
            r_h = speed_residual(alpha - FD_STEP_FIXED_POINT)
            slope = (r - r_h) / FD_STEP_FIXED_POINT if r_h is not None else None
        else:
            slope = (r_h - r) / FD_STEP_FIXED_POINT
        if slope is None or abs(slope) < 1e-12:
            raise FixedPointError(target_speed, abs(r), "degenerate angle sensitivity")
        accepted = False
        for _ in range(20):
            step = -slope * r / (slope * slope + lam)
            r_new = speed_residual(alpha + step)
            if r_new is not None and abs(r_new) < abs(r):
                alpha += step
                r = r_new
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            raise FixedPointError(target_speed, abs(r), "damping exhausted")
    else:
        raise FixedPointError(target_speed, abs(r))
    full = fixed_point_residual(height, target_speed, alpha, params)
    residual = float(np.linalg.norm(full)) if full is not None else math.inf
    if residual >= 1e-6:
        raise FixedPointError(target_speed, residual)
    return GaitEntry(target_speed, ApexState(height, target_speed), alpha,
                     np.zeros(2), residual)


def deadbeat_gain(entry: GaitEntry, params: SlipParams,
                  fd_step: float = FD_STEP_GAIN) -> np.ndarray:
    """Least-squares deadbeat row K = -(dh/dalpha)^+ (dh/dapex).

    Central finite differences of the return map around the fixed point.
    The closed-loop one-step map keeps a unit eigenvalue along the energy
    gradient (the template is conservative), so K nulls the error component
    reachable through the touchdown angle - in particular apex speed.
    """
    x0 = entry.apex.as_array()

    def h(px: float, vx: float, a: float) -> np.ndarray:
        res = apex_return_map(ApexState(px, vx), a, params)
        if not res.ok:
            raise FixedPointError(entry.commanded_speed, math.inf,
                                  f"return map failed while building gain: {res.reason}")
        return res.apex.as_array()

    A = np.zeros((2, 2))
    for j in range(2):
        dx = np.zeros(2)
        dx[j] = fd_step
        A[:, j] = (h(x0[0] + dx[0], x0[1] + dx[1], entry.alpha)
                   - h(x0[0] - dx[0], x0[1] - dx[1], entry.alpha)) / (2 * fd_step)
    B = (h(x0[0], x0[1], entry.alpha + fd_step)
         - h(x0[0], x0[1], entry.alpha - fd_step)) / (2 * fd_step)
    bn = float(B @ B)
    if math.sqrt(bn) < 1e-8:
        raise FixedPointError(entry.commanded_speed, math.nan,
                              "touchdown-angle sensitivity is singular")
    return -(B @ A) / bn


def deadbeat_alpha(tup: GaitTuple, apex: ApexState,
                   max_height_error: float = 0.15,
                   max_velocity_error: float = 0.5,
                   max_alpha: float = 0.75) -> float:
    """Touchdown angle from the deadbeat law with clamped apex error.

    The clamps keep large commanded-speed steps inside the linearization's
    region of validity; the library gain then removes the remaining error
    over the next hop or two.
    """
    err_h = min(max(apex.height - tup.apex.height, -max_height_error), max_height_error)
    err_v = min(max(apex.velocity - tup.apex.velocity, -max_velocity_error),
                max_velocity_error)
    alpha = tup.alpha + tup.gain[0] * err_h + tup.gain[1] * err_v
    return min(max(alpha, -max_alpha), max_alpha)


@dataclass
class GaitLibrary:
    params: SlipParams
    speeds: np.ndarray
    entries: list[GaitEntry] = field(default_factory=list)

    FORMAT = "hopper-gait-library"
    VERSION = 1

    def query(self, speed: float) -> GaitTuple:
        s = self.speeds
        if speed < s[0] - 1e-12 or speed > s[-1] + 1e-12:
            raise GaitLibraryError(
                f"speed {speed} outside library range [{s[0]}, {s[-1]}]")
        speed = min(max(speed, s[0]), s[-1])
        heights = np.array([e.apex.height for e in self.entries])
        alphas = np.array([e.alpha for e in self.entries])
        k0 = np.array([e.gain[0] for e in self.entries])
        k1 = np.array([e.gain[1] for e in self.entries])
        return GaitTuple(
            ApexState(float(np.interp(speed, s, heights)), speed),
            float(np.interp(speed, s, alphas)),
            np.array([np.interp(speed, s, k0), np.interp(speed, s, k1)]))

    def params_hash(self) -> str:
        key = repr((self.params.mass, self.params.stiffness,
                    self.params.rest_length, self.params.gravity,
                    [float(v) for v in self.speeds]))
        return hashlib.sha256(key.encode()).hexdigest()[:16]

    def save(self, path) -> None:
        doc = {
            "format": self.FORMAT,
            "version": self.VERSION,
            "params_hash": self.params_hash(),
            "params": {
                "mass": self.params.mass,
                "stiffness": self.params.stiffness,
                "rest_length": self.params.rest_length,
                "gravity": self.params.gravity,
            },
            "speeds": [float(v) for v in self.speeds],
            "entries": [
                {
                    "speed": e.commanded_speed,
                    "apex_height": e.apex.height,
                    "apex_velocity": e.apex.velocity,
                    "alpha": e.alpha,
                    "gain": [float(e.gain[0]), float(e.gain[1])],
                    "residual": e.residual,
                }
                for e in self.entries
            ],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GaitLibrary":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format") != cls.FORMAT:
            raise GaitLibraryError(f"{path}: not a gait library file")
        if doc.get("version") != cls.VERSION:
            raise GaitLibraryError(f"{path}: unsupported version {doc.get('version')}")
        p = doc["params"]
        lib = cls(SlipParams(p["mass"], p["stiffness"], p["rest_length"], p["gravity"]),
                  np.array(doc["speeds"]))
        for rec in doc["entries"]:
            lib.entries.append(GaitEntry(
                rec["speed"], ApexState(rec["apex_height"], rec["apex_velocity"]),
                rec["alpha"], np.array(rec["gain"]), rec["residual"]))
        if doc["params_hash"] != lib.params_hash():
            raise GaitLibraryError(f"{path}: params hash mismatch")
        return lib


def build_gait_library(params: SlipParams,
                       speeds: np.ndarray | None = None,
                       apex_height: float = 0.42) -> GaitLibrary:
    """Build the library over the speed grid (default -3..3 m/s, step 0.1).

    Solves outward from 0 m/s in both directions, warm-starting each entry
    with its inner neighbor's angle; every entry gets a deadbeat gain.
    """
    if speeds is None:
        speeds = np.linspace(-3.0, 3.0, 61)
    speeds = np.asarray(speeds, dtype=float)
    if np.any(np.diff(speeds) <= 0):
        raise GaitLibraryError("speed grid must be strictly increasing")
    by_speed: dict[int, GaitEntry] = {}
    order = np.argsort(np.abs(speeds), kind="stable")
    guesses: dict[int, float] = {}
    for idx in order:
        v = float(speeds[idx])
        alpha0 = guesses.get(idx, 0.02 * v)
        try:
            entry = solve_fixed_point(v, params, (apex_height, alpha0))
            entry.gain = deadbeat_gain(entry, params)
        except FixedPointError as exc:
            raise FixedPointError(v, exc.residual,
                                  f"gait library build failed at {v} m/s: {exc}") from exc
        by_speed[idx] = entry
        for nb in (idx - 1, idx + 1):
            if 0 <= nb < len(speeds) and nb not in by_speed:
                guesses[nb] = entry.alpha
    return GaitLibrary(params, speeds, [by_speed[i] for i in range(len(speeds))])


# ----------------------------------------------------------------------------
# motion sketches
# ----------------------------------------------------------------------------

@dataclass
class MotionSketch:
    """Time-indexed template reference for the MPC layers.

    ``times`` is a uniform grid starting at 0 (the generation instant);
    ``events`` holds the exact phase-transition times.  GRF samples are zero
    exactly where the contact flag is zero.
    """

    times: np.ndarray            # (n,)
    com_pos: np.ndarray          # (n, 2)
    com_vel: np.ndarray          # (n, 2)
    grf: np.ndarray              # (n, 2)
    contact: np.ndarray          # (n,) uint8
    touchdown_point: np.ndarray  # first-cycle foothold (2,)
    events: list[tuple[float, str]]          # sorted (time, 'touchdown'|'liftoff')
    footholds: list[tuple[float, float, np.ndarray]]   # (t_td, t_lo, foot) per stance
    apex_times: list[float]

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    def state6_at(self, t: float) -> np.ndarray:
        """[p_c, theta, v_c, theta_dot] with the rotational references at zero."""
        t = min(max(t, 0.0), self.duration)
        return np.array([
            np.interp(t, self.times, self.com_pos[:, 0]),
            np.interp(t, self.times, self.com_pos[:, 1]),
            0.0,
            np.interp(t, self.times, self.com_vel[:, 0]),
            np.interp(t, self.times, self.com_vel[:, 1]),
            0.0,
        ])

    def grf_at(self, t: float) -> np.ndarray:
        if not self.contact_at(t):
            return np.zeros(2)
        t = min(max(t, 0.0), self.duration)
        return np.array([np.interp(t, self.times, self.grf[:, 0]),
                         np.interp(t, self.times, self.grf[:, 1])])

    def contact_at(self, t: float) -> bool:
        for t_td, t_lo, _ in self.footholds:
            if t_td <= t < t_lo:
                return True
        return False

    def foothold_at(self, t: float) -> np.ndarray:
        """Foothold of the stance containing t, else of the next stance."""
        for t_td, t_lo, foot in self.footholds:
            if t < t_lo:
                return foot
        return self.footholds[-1][2] if self.footholds else self.touchdown_point

    def events_in(self, t0: float, t1: float) -> list[float]:
        return [t for t, _ in self.events if t0 < t < t1]


def _sample_segments(segments, footholds, dt_sample):
    """Stack per-phase samplers onto one uniform grid.

    segments: list of (t0, t1, kind, sampler) with sampler(t) ->
    (px, pz, vx, vz, fx, fz); kind is 'flight' or 'stance'.  The contact flag
    comes from the foothold windows [t_td, t_lo) so it matches contact_at().
    """
    t_end = segments[-1][1]
    n = int(math.floor(t_end / dt_sample)) + 1
    times = np.arange(n) * dt_sample
    if times[-1] < t_end - 1e-12:
        times = np.append(times, t_end)
    pos = np.zeros((len(times), 2))
    vel = np.zeros((len(times), 2))
    grf = np.zeros((len(times), 2))
    contact = np.zeros(len(times), dtype=np.uint8)
    for i, t in enumerate(times):
        for seg in segments:
            t0, t1, kind, sampler = seg
            if t <= t1 or seg is segments[-1]:
                px, pz, vx, vz, fx, fz = sampler(min(max(t, t0), t1))
                pos[i] = (px, pz)
                vel[i] = (vx, vz)
                if kind == "stance":
                    grf[i] = (fx, fz)
                break
        for t_td, t_lo, _ in footholds:
            if t_td <= t < t_lo:
                contact[i] = 1
                break
        if not contact[i]:
            grf[i] = 0.0
    return times, pos, vel, grf, contact


def _flight_sampler(t0, p0, v0, g):
    def sample(t):
        dt = t - t0
        return (p0[0] + v0[0] * dt, p0[1] + v0[1] * dt - 0.5 * g * dt * dt,
                v0[0], v0[1] - g * dt, 0.0, 0.0)
    return sample


def _stance_sampler(t0, rec, foot, params):
    ts = rec[:, 0] + t0

    def sample(t):
        px = np.interp(t, ts, rec[:, 1])
        pz = np.interp(t, ts, rec[:, 2])
        vx = np.interp(t, ts, rec[:, 3])
        vz = np.interp(t, ts, rec[:, 4])
        f = slip_grf(np.array([px, pz]), foot, params)
        return px, pz, vx, vz, f[0], f[1]
    return sample


def _run_stance_recorded(p, v, foot, params):
    buf = np.empty((_MAX_STANCE_STEPS, 5))
    status, n, t_lo = _stance_record(
        p[0], p[1], v[0], v[1], foot[0], foot[1],
        params.mass, params.stiffness, params.rest_length, params.gravity,
        STANCE_DT, buf)
    if status == STATUS_GROUND_STRIKE:
        raise SlipRolloutError("ground-strike")
    if status == STATUS_NO_LIFTOFF:
        raise SlipRolloutError("no-liftoff")
    return buf[:n].copy(), t_lo


def _append_cycle(segments, events, footholds, apex_times, t0, apex,
                  alpha, params):
    """Append one flight->stance->flight cycle starting at an apex at time t0."""
    td = _flight_to_touchdown(apex, alpha, params)
    if td is None:
        raise SlipRolloutError("unreachable-touchdown")
    t_fl, p_td, v_td, foot = td
    # the cycle's x-origin is the apex position of the caller's frame
    origin_x = segments[-1][3](t0)[0] if segments else 0.0
    p_td = p_td + np.array([origin_x, 0.0])
    foot = foot + np.array([origin_x, 0.0])
    p_apex = np.array([origin_x, apex.height])
    v_apex = np.array([apex.velocity, 0.0])
    segments.append((t0, t0 + t_fl, "flight",
                     _flight_sampler(t0, p_apex, v_apex, params.gravity)))
    rec, t_st = _run_stance_recorded(p_td, v_td, foot, params)
    t_td = t0 + t_fl
    t_lo = t_td + t_st
    events.append((t_td, "touchdown"))
    events.append((t_lo, "liftoff"))
    footholds.append((t_td, t_lo, foot))
    segments.append((t_td, t_lo, "stance", _stance_sampler(t_td, rec, foot, params)))
    p_lo = np.array([rec[-1, 1], rec[-1, 2]])
    v_lo = np.array([rec[-1, 3], rec[-1, 4]])
    if v_lo[1] <= 0.0:
        raise SlipRolloutError("no-apex")
    t_up = v_lo[1] / params.gravity
    segments.append((t_lo, t_lo + t_up, "flight",
                     _flight_sampler(t_lo, p_lo, v_lo, params.gravity)))
    apex_next = ApexState(p_lo[1] + 0.5 * v_lo[1] ** 2 / params.gravity, v_lo[0])
    apex_times.append(t_lo + t_up)
    return t_lo + t_up, apex_next


def generate_motion_sketch(current_apex: ApexState, tup: GaitTuple,
                           params: SlipParams, dt_sample: float = 1e-3,
                           cycles: int = 2) -> MotionSketch:
    """Sketch ``cycles`` hop cycles forward from a measured apex.

    The first cycle's touchdown angle comes from the deadbeat law at the
    measured apex; later cycles reapply the law at the predicted apexes, so
    the reference keeps converging toward the library gait.
    """
    segments: list = []
    events: list = []
    footholds: list = []
    apex_times: list = []
    t, apex = 0.0, current_apex
    for _ in range(cycles):
        alpha = deadbeat_alpha(tup, apex)
        t, apex = _append_cycle(segments, events, footholds, apex_times,
                                t, apex, alpha, params)
    times, pos, vel, grf, contact = _sample_segments(segments, footholds, dt_sample)
    return MotionSketch(times, pos, vel, grf, contact, footholds[0][2].copy(),
                        events, footholds, apex_times)


def sketch_from_stance(p: np.ndarray, v: np.ndarray, foot: np.ndarray,
                       tup: GaitTuple, params: SlipParams,
                       dt_sample: float = 1e-3, cycles: int = 1) -> MotionSketch:
    """Sketch starting mid-stance from a measured state (the touchdown reset).

    Integrates the template from the given state with the actual foothold,
    then appends ``cycles`` full cycles from the predicted apex.
    """
    segments: list = []
    events: list = [(0.0, "touchdown")]
    footholds: list = []
    apex_times: list = []
    rec, t_st = _run_stance_recorded(p, v, foot, params)
    footholds.append((0.0, t_st, np.asarray(foot, dtype=float)))
    segments.append((0.0, t_st, "stance", _stance_sampler(0.0, rec, foot, params)))
    events.append((t_st, "liftoff"))
    p_lo = np.array([rec[-1, 1], rec[-1, 2]])
    v_lo = np.array([rec[-1, 3], rec[-1, 4]])
    if v_lo[1] <= 0.0:
        raise SlipRolloutError("no-apex")
    t_up = v_lo[1] / params.gravity
    segments.append((t_st, t_st + t_up, "flight",
                     _flight_sampler(t_st, p_lo, v_lo, params.gravity)))
    t = t_st + t_up
    apex = ApexState(p_lo[1] + 0.5 * v_lo[1] ** 2 / params.gravity, v_lo[0])
    apex_times.append(t)
    for _ in range(cycles):
        alpha = deadbeat_alpha(tup, apex)
        t, apex = _append_cycle(segments, events, footholds, apex_times,
                                t, apex, alpha, params)
    times, pos, vel, grf, contact = _sample_segments(segments, footholds, dt_sample)
    return MotionSketch(times, pos, vel, grf, contact, footholds[0][2].copy(),
                        events, footholds, apex_times)
