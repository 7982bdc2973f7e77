"""Positive-power energy model, cost of transport, torque statistics.

Electrical power is mechanical output clamped at zero (no regeneration into
the battery) plus Joule heating of the windings:

    P+ = max(tau . qdot, 0) + |tau / K_t|^2 R
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .state import ConfigError


@dataclass
class MotorModel:
    torque_constant: float = 0.6      # effective N m / A after the gearbox
    winding_resistance: float = 0.17  # equivalent per-motor resistance (ohm)

    def __post_init__(self):
        if self.torque_constant <= 0 or self.winding_resistance <= 0:
            raise ConfigError("motor constants must be positive")


def power_sample(tau: np.ndarray, qdot: np.ndarray, motor: MotorModel) -> float:
    """Instantaneous electrical draw; always nonnegative."""
    mech = float(np.dot(tau, qdot))
    thermal = float(np.dot(tau, tau)) / (motor.torque_constant ** 2) \
        * motor.winding_resistance
    return max(mech, 0.0) + thermal


class EnergyError(ValueError):
    pass


@dataclass
class EnergyAccumulator:
    """Trapezoid-integrated positive energy plus distance/duration bookkeeping."""

    total_positive_energy: float = 0.0
    distance: float = 0.0
    duration: float = 0.0
    stance_torques: list = field(default_factory=list)   # per-sample (2,) |tau|
    _last_power: float | None = None

    def add_sample(self, power: float, vx: float, dt: float,
                   tau: np.ndarray | None = None, stance: bool = False) -> None:
        if self._last_power is None:
            self._last_power = power
        self.total_positive_energy += 0.5 * (self._last_power + power) * dt
        self._last_power = power
        self.distance += vx * dt
        self.duration += dt
        if stance and tau is not None:
            self.stance_torques.append(np.abs(np.asarray(tau, dtype=float)))


def cost_of_transport(acc: EnergyAccumulator, mass: float, g: float) -> float:
    """E+ / (m g d); undefined for in-place runs (report energy instead)."""
    if acc.distance <= 1e-9:
        raise EnergyError(
            f"cost of transport undefined for distance {acc.distance:.3e} m")
    return acc.total_positive_energy / (mass * g * acc.distance)


def torque_stats(stance_torques) -> dict[str, np.ndarray]:
    """Per-joint order statistics of |tau| over stance samples."""
    arr = np.asarray(stance_torques, dtype=float)
    if arr.size == 0:
        raise EnergyError("no stance torque samples")
    return {
        "mean": arr.mean(axis=0),
        "q25": np.percentile(arr, 25, axis=0),
        "median": np.percentile(arr, 50, axis=0),
        "q75": np.percentile(arr, 75, axis=0),
        "peak": arr.max(axis=0),
    }
