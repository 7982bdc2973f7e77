"""Shared state vocabulary, frames, and robot constants.

Conventions used by every module in this package (defined once, here):

* World frame: x forward, z up.  Gravity is ``(0, -9.81)`` m/s^2.
* Torso pitch ``theta`` is counterclockwise in the x-z plane (positive tips
  the nose up); ``R(theta) = [[c, -s], [s, c]]`` maps torso vectors to world.
* Hip angle is measured from the torso-frame downward vertical, positive
  swings the thigh toward +x.  Knee angle is the shank angle relative to the
  thigh: 0 = straight leg, negative = flexed (foot tucks behind the knee).
* Planar wedge product: ``r ^ f = r_x * f_z - r_z * f_x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

GRAVITY = 9.81

# Widening applied to the joint box before a state is declared insane (rad).
JOINT_SANITY_MARGIN = 0.2


class ConfigError(ValueError):
    """Raised when a configuration value is out of range or inconsistent."""


@dataclass
class RobotState:
    """Full planar robot state; the single source of truth between layers."""

    p_c: np.ndarray          # CoM position, world (m)
    v_c: np.ndarray          # CoM velocity, world (m/s)
    theta: float             # torso pitch (rad)
    theta_dot: float         # pitch rate (rad/s)
    q: np.ndarray            # joint angles [hip, knee] (rad)
    qdot: np.ndarray         # joint velocities (rad/s)
    contact: bool            # True while the foot is pinned

    def copy(self) -> "RobotState":
        return RobotState(self.p_c.copy(), self.v_c.copy(), self.theta,
                          self.theta_dot, self.q.copy(), self.qdot.copy(),
                          self.contact)

    def srb_vector(self) -> np.ndarray:
        """Stack [p_c, theta, v_c, theta_dot] as the 6-vector used by the MPCs."""
        return np.array([self.p_c[0], self.p_c[1], self.theta,
                         self.v_c[0], self.v_c[1], self.theta_dot])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.p_c)) and np.all(np.isfinite(self.v_c))
                    and math.isfinite(self.theta) and math.isfinite(self.theta_dot)
                    and np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qdot)))


@dataclass
class RobotConstants:
    """Physical constants of the robot plus contact/joint limits."""

    mass: float = 2.5                      # kg
    inertia: float = 0.05                  # torso pitch inertia (kg m^2)
    slip_stiffness: float = 1500.0         # template spring (N/m)
    slip_rest_length: float = 0.32         # template rest length (m)
    friction_mu: float = 0.7
    q_min: np.ndarray = field(default_factory=lambda: np.array([0.0, -2.45]))
    q_max: np.ndarray = field(default_factory=lambda: np.array([math.pi / 2, -0.85]))
    tau_max: np.ndarray = field(default_factory=lambda: np.array([25.0, 25.0]))
    gravity: float = GRAVITY               # magnitude; world vector is (0, -gravity)

    def gravity_vector(self) -> np.ndarray:
        return np.array([0.0, -self.gravity])

    def q_sane(self, q: np.ndarray) -> bool:
        return bool(np.all(q >= self.q_min - JOINT_SANITY_MARGIN)
                    and np.all(q <= self.q_max + JOINT_SANITY_MARGIN))


def wedge(r: np.ndarray, f: np.ndarray) -> float:
    """Planar wedge r ^ f = r_x f_z - r_z f_x (torque about the out-of-plane axis)."""
    return float(r[0] * f[1] - r[1] * f[0])


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def validate_constants(overrides: dict | None = None, *,
                       max_reach: float | None = None) -> RobotConstants:
    """Build RobotConstants from an override mapping, range-checking every field.

    An empty/None override block yields the stock constants.  ``max_reach``
    (thigh + shank), when provided, is checked against the template rest
    length so an unreachable leg is rejected at load time.
    """
    overrides = dict(overrides or {})
    c = RobotConstants()
    scalar_fields = {
        "mass": (0.0, 100.0),
        "inertia": (0.0, 10.0),
        "slip_stiffness": (0.0, 1e6),
        "slip_rest_length": (0.0, 5.0),
        "friction_mu": (0.0, 5.0),
        "gravity": (0.0, 100.0),
    }
    for name, (lo, hi) in scalar_fields.items():
        if name in overrides:
            value = float(overrides.pop(name))
            if not (lo < value <= hi):
                raise ConfigError(f"{name} = {value} outside ({lo}, {hi}]")
            setattr(c, name, value)
    for name in ("q_min", "q_max", "tau_max"):
        if name in overrides:
            value = np.asarray(overrides.pop(name), dtype=float)
            if value.shape != (2,):
                raise ConfigError(f"{name} must be a 2-vector")
            setattr(c, name, value)
    if overrides:
        raise ConfigError(f"unknown robot constant keys: {sorted(overrides)}")
    if np.any(c.q_min >= c.q_max):
        raise ConfigError(f"q_min {c.q_min} must be below q_max {c.q_max}")
    if np.any(c.tau_max <= 0):
        raise ConfigError("tau_max must be positive")
    if max_reach is not None and c.slip_rest_length > max_reach:
        raise ConfigError(
            f"slip rest length {c.slip_rest_length} exceeds leg reach {max_reach}")
    return c
