"""Joint position servo of the simulated plant.

The stabilizer never sees these gains: the servo exists inside the plant
(and in the contact-force oracle tests).  Defaults give roughly a 10 Hz
closed-loop bandwidth at the biped's reflected inertia, which is what makes
fast terrain changes hard in the first place.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from wbstab.model import RobotModel


@dataclass(eq=False)
class ServoParams:
    kp: np.ndarray            # N*m/rad
    kd: np.ndarray            # N*m*s/rad
    ki: np.ndarray            # N*m/(rad*s)
    torque_limits: np.ndarray
    gravity_comp: bool = False

    def __post_init__(self):
        self.kp = np.asarray(self.kp, dtype=float).reshape(-1)
        n = self.kp.shape[0]
        self.kd = np.asarray(self.kd, dtype=float).reshape(n)
        self.ki = np.asarray(self.ki, dtype=float).reshape(n)
        self.torque_limits = np.asarray(self.torque_limits, dtype=float).reshape(n)
        if (self.kp < 0).any() or (self.kd < 0).any() or (self.ki < 0).any():
            raise ValueError("servo gains must be >= 0")
        if (self.torque_limits <= 0).any():
            raise ValueError("torque limits must be > 0")

    def integral_clamp(self) -> np.ndarray:
        """Anti-windup clamp: integral limited to +-(torque_limit / ki)."""
        with np.errstate(divide="ignore"):
            return np.where(self.ki > 0.0, self.torque_limits / self.ki, 0.0)


@dataclass(eq=False)
class ServoState:
    integral_error: np.ndarray
    last_measured: tuple[np.ndarray, np.ndarray] | None = None

    @staticmethod
    def zero(n: int) -> "ServoState":
        return ServoState(np.zeros(n))


def default_servo_params(model: RobotModel, bandwidth_hz: float = 10.0,
                         reflected_inertia: float = 4.0,
                         damping_ratio: float = 1.0,
                         ki: float = 0.0) -> ServoParams:
    """Per-joint PD gains for a target closed-loop bandwidth."""
    w = 2.0 * np.pi * bandwidth_hz
    n = model.n_a
    kp = np.full(n, reflected_inertia * w * w)
    kd = np.full(n, 2.0 * damping_ratio * np.sqrt(kp[0] * reflected_inertia))
    _, _, _, taumax = model.joint_limits()
    return ServoParams(kp, kd, np.full(n, ki), taumax)


def servo_torque(p: ServoParams, s: ServoState, q_cmd, q_meas, qd_meas,
                 gravity_torque=None, dt: float = 1e-3):
    """One servo evaluation: tau = sat(kp*e - kd*qd + ki*int(e) [+ g]).

    Returns (tau, new state); the integral is updated first, then clamped.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    q_cmd = np.asarray(q_cmd, dtype=float)
    q_meas = np.asarray(q_meas, dtype=float)
    qd_meas = np.asarray(qd_meas, dtype=float)
    e = q_cmd - q_meas
    clamp = p.integral_clamp()
    integ = np.clip(s.integral_error + e * dt, -clamp, clamp)
    tau = p.kp * e - p.kd * qd_meas + p.ki * integ
    if p.gravity_comp and gravity_torque is not None:
        tau = tau + np.asarray(gravity_torque, dtype=float)
    tau = np.clip(tau, -p.torque_limits, p.torque_limits)
    return tau, ServoState(integ, (q_meas.copy(), qd_meas.copy()))
