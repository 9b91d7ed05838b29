"""Desk-scale plant: penalty foot-ground contact against movable platforms.

The robot is position controlled: each ``step`` applies the joint servo to
the commanded positions, evaluates per-corner penalty contact against the
platforms, and advances the whole-body dynamics with semi-implicit Euler at
a fixed substep (0.1 ms by default, for contact stability at the shipped
stiffnesses).  Platform motion is kinematic.

A separate constraint-based (bilateral, frictionless-limit) contact solver
is provided for oracle tests only; it is not part of the plant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from wbstab import _kernels, rbd
from wbstab.model import Configuration, RobotModel
from wbstab.servo import ServoParams, ServoState, default_servo_params
from wbstab.spatial import SpatialMotion, Transform

#: default plant substep (s)
SIM_DT = 1e-4
#: attitude amplitude used by the moving-platform scenarios (rad, ~8 deg)
ATTITUDE_AMP = math.radians(8.0)
#: height amplitude used by the moving-platform scenarios (m)
HEIGHT_AMP = 0.03
#: default sinusoid frequency (Hz); scenario rates scale frequencies from it
BASE_FREQ = 0.25


@dataclass(eq=False)
class Platform:
    """Kinematically driven contact surface (infinite mass)."""

    id: str
    kind: int                       # _kernels.PLAT_STATIC / PLAT_SINE / PLAT_DROP
    params: np.ndarray              # 13 floats, see _kernels._platform_pose_vel
    extent: tuple[float, float]     # half extents (m) in the platform plane
    attached_foot: str | None = None

    def __post_init__(self):
        par = np.zeros(13)
        arr = np.asarray(self.params, dtype=float).reshape(-1)
        par[:arr.shape[0]] = arr
        self.params = par

    def pose(self, t: float) -> Transform:
        Rp = np.empty((3, 3))
        pp = np.empty(3)
        w = np.empty(3)
        v = np.empty(3)
        _kernels._platform_pose_vel(self.kind, self.params, float(t), Rp, pp, w, v)
        return Transform(Rp, pp)

    def velocity(self, t: float) -> SpatialMotion:
        Rp = np.empty((3, 3))
        pp = np.empty(3)
        w = np.empty(3)
        v = np.empty(3)
        _kernels._platform_pose_vel(self.kind, self.params, float(t), Rp, pp, w, v)
        return SpatialMotion(w, v)


def static_platform(pid="ground", center=(0.0, 0.0, 0.0), roll=0.0, pitch=0.0,
                    extent=(1.0, 1.0), attached_foot=None) -> Platform:
    return Platform(pid, _kernels.PLAT_STATIC,
                    [center[0], center[1], center[2], roll, pitch],
                    extent, attached_foot)


@dataclass(eq=False)
class ContactModel:
    stiffness: float = 1e5          # N/m per corner
    damping: float = 1e3            # N*s/m per corner
    friction_mu: float = 0.7
    tangent_stiffness: float = 2e4  # N/m, stiction spring per corner
    tangent_damping: float = 2e2
    sensor_cutoff_hz: float = 200.0

    def __post_init__(self):
        if self.stiffness <= 0 or self.damping <= 0:
            raise ValueError("contact stiffness and damping must be > 0")
        if self.friction_mu <= 0:
            raise ValueError("friction coefficient must be > 0")


class WorldState:
    """Mutable plant state; advanced only by :meth:`step`, single thread."""

    def __init__(self, model: RobotModel, q0: Configuration,
                 platforms: list[Platform],
                 servo: ServoParams | None = None,
                 contact: ContactModel | None = None,
                 sim_dt: float = SIM_DT):
        self.model = model
        self.ev = rbd.KinematicsEvaluator(model)
        self.platforms = list(platforms)
        self.servo_params = servo if servo is not None else default_servo_params(model)
        self.contact = contact if contact is not None else ContactModel()
        self.sim_dt = float(sim_dt)
        self.t = 0.0
        self.diverged = False

        # robot state (owned, writable)
        self.Rb = q0.base_pose.rotation.copy()
        self.pb = q0.base_pose.translation.copy()
        self.qdot = q0.qdot().copy()
        self.th = q0.joints.copy()
        self.servo_integ = np.zeros(model.n_a)

        ncf = len(model.contact_frames)
        self.anchors = np.zeros((ncf, 4, 2))
        self.anchor_on = np.zeros((ncf, 4), dtype=np.int64)
        self.sensor_w = np.zeros((ncf, 6))
        self.raw_w = np.zeros((ncf, 6))
        self.audit = np.zeros(3)

        # frozen kernel argument blocks
        self._cf_link = np.array([self.ev.link_index[c.link]
                                  for c in model.contact_frames], dtype=np.int64)
        self._cf_offR = np.stack([c.offset.rotation for c in model.contact_frames])
        self._cf_offp = np.stack([c.offset.translation for c in model.contact_frames])
        corners = []
        for c in model.contact_frames:
            hx, hy = c.foot_half_extents
            corners.append([[hx, hy], [hx, -hy], [-hx, hy], [-hx, -hy]])
        self._cf_corners = np.array(corners) if corners else np.zeros((0, 4, 2))
        self._plat_kind = np.array([p.kind for p in self.platforms], dtype=np.int64)
        self._plat_par = np.stack([p.params for p in self.platforms])
        self._plat_ext = np.array([p.extent for p in self.platforms])
        assign = []
        for c in model.contact_frames:
            idx = 0
            for i, p in enumerate(self.platforms):
                if p.attached_foot == c.name:
                    idx = i
                    break
            assign.append(idx)
        self._cf_plat = np.array(assign, dtype=np.int64)

        nl, nv = self.ev.nl, self.ev.nv
        self._scr = (np.empty((nl, 3, 3)), np.empty((nl, 3)), np.empty((6, nv)),
                     np.empty((nl, 6)), np.empty((nl, 6)), np.empty((nl, 3)),
                     np.empty((nl, 6, 6)), np.empty((nv, nv)), np.empty(nv),
                     np.empty((3, nv)), np.empty(3))
        lpf_tau = 1.0 / (2.0 * math.pi * self.contact.sensor_cutoff_hz)
        self._lpf_alpha = self.sim_dt / (lpf_tau + self.sim_dt)

    # -- views ---------------------------------------------------------------

    @property
    def robot(self) -> Configuration:
        return Configuration(Transform(self.Rb.copy(), self.pb.copy()),
                             SpatialMotion(self.qdot[:3].copy(), self.qdot[3:6].copy()),
                             self.th, self.qdot[6:])

    @property
    def servo_state(self) -> ServoState:
        return ServoState(self.servo_integ.copy())

    @property
    def measured_wrenches(self) -> dict[str, np.ndarray]:
        """Filtered 6D wrenches (moment, force) in each sole frame."""
        return {c.name: self.sensor_w[i].copy()
                for i, c in enumerate(self.model.contact_frames)}

    def raw_wrenches(self) -> dict[str, np.ndarray]:
        return {c.name: self.raw_w[i].copy()
                for i, c in enumerate(self.model.contact_frames)}

    def energies(self) -> tuple[float, float]:
        st = self.ev.run(self.robot)
        return st.kinetic_energy(), st.potential_energy()

    # -- stepping ------------------------------------------------------------

    def step(self, q_cmd, dt: float) -> "WorldState":
        """Advance by dt (internally substepped); returns self."""
        if self.diverged:
            return self
        n_sub = max(1, int(round(dt / self.sim_dt)))
        sp = self.servo_params
        self.audit[:] = 0.0
        flag = _kernels.plant_steps(
            *self.ev.kernel_args(),
            self._cf_link, self._cf_offR, self._cf_offp, self._cf_corners,
            self._plat_kind, self._plat_par, self._plat_ext, self._cf_plat,
            sp.kp, sp.kd, sp.ki, sp.torque_limits, sp.integral_clamp(),
            self.contact.stiffness, self.contact.damping,
            self.contact.tangent_stiffness, self.contact.tangent_damping,
            self.contact.friction_mu, self._lpf_alpha,
            self.Rb, self.pb, self.qdot, self.th, self.servo_integ,
            self.anchors, self.anchor_on, self.sensor_w,
            np.asarray(q_cmd, dtype=float), self.t, n_sub, self.sim_dt,
            *self._scr, self.raw_w, self.audit)
        self.t += n_sub * self.sim_dt
        if flag:
            self.diverged = True
        return self


def make_standing_world(model: RobotModel, platforms=None, **kw) -> WorldState:
    from wbstab.model import standing_configuration
    if platforms is None:
        platforms = scenario_flat()
    return WorldState(model, standing_configuration(model), platforms, **kw)


# --------------------------------------------------------------------------
# scenarios

def scenario_flat() -> list[Platform]:
    return [static_platform()]


def _sine_platform(pid, center, height_rate, roll_rate, pitch_rate,
                   extent, phase=0.0, attached_foot=None,
                   ramp: float = 1.0) -> Platform:
    """Sinusoidal platform; per-channel frequency set from the peak rate at
    the fixed scenario amplitudes."""
    par = np.zeros(13)
    par[:3] = center
    if height_rate > 0.0:
        par[3] = HEIGHT_AMP
        par[4] = height_rate / (2.0 * math.pi * HEIGHT_AMP)
        par[5] = phase
    if roll_rate > 0.0:
        par[6] = ATTITUDE_AMP
        par[7] = roll_rate / (2.0 * math.pi * ATTITUDE_AMP)
        par[8] = phase
    if pitch_rate > 0.0:
        par[9] = ATTITUDE_AMP
        par[10] = pitch_rate / (2.0 * math.pi * ATTITUDE_AMP)
        par[11] = phase + 0.5 * math.pi
    par[12] = ramp
    if height_rate == 0.0 and roll_rate == 0.0 and pitch_rate == 0.0:
        return static_platform(pid, center, extent=extent,
                               attached_foot=attached_foot)
    return Platform(pid, _kernels.PLAT_SINE, par, extent, attached_foot)


def default_rates() -> tuple[float, float, float]:
    """Peak rates of the slow scenario: +-3 cm and +-8 deg at 0.25 Hz."""
    w = 2.0 * math.pi * BASE_FREQ
    return (HEIGHT_AMP * w, ATTITUDE_AMP * w, ATTITUDE_AMP * w)


def scenario_I_coupled(rates=None) -> list[Platform]:
    """One platform under both feet; height and attitude move together."""
    if rates is None:
        rates = default_rates()
    return [_sine_platform("platform", (0.0, 0.0, 0.0), rates[0], rates[1],
                           rates[2], extent=(0.8, 0.8))]


def scenario_I_independent(rates=None, foot_centers=((0.0078, 0.10),
                                                     (0.0078, -0.10))) -> list[Platform]:
    """Two platforms, one per foot, phase-shifted by pi."""
    if rates is None:
        rates = default_rates()
    left = _sine_platform("left_platform", (*foot_centers[0], 0.0), rates[0],
                          rates[1], rates[2], extent=(0.35, 0.12),
                          attached_foot="left_sole")
    right = _sine_platform("right_platform", (*foot_centers[1], 0.0), rates[0],
                           rates[1], rates[2], extent=(0.35, 0.12),
                           phase=math.pi, attached_foot="right_sole")
    return [left, right]


def scenario_II_drop(drop: float = 0.03, tilt: float = math.radians(5.0),
                     t_event: float = 3.5) -> list[Platform]:
    """Left platform falls abruptly at t_event and tilts; right stays flat."""
    if drop == 0.0 and tilt == 0.0:
        return [static_platform("left_platform", (0.0078, 0.10, 0.0),
                                extent=(0.35, 0.12), attached_foot="left_sole"),
                static_platform("right_platform", (0.0078, -0.10, 0.0),
                                extent=(0.35, 0.12), attached_foot="right_sole")]
    left = Platform("left_platform", _kernels.PLAT_DROP,
                    [0.0078, 0.10, 0.0, t_event, drop, tilt, 0.0],
                    (0.35, 0.12), "left_sole")
    right = static_platform("right_platform", (0.0078, -0.10, 0.0),
                            extent=(0.35, 0.12), attached_foot="right_sole")
    return [left, right]


# --------------------------------------------------------------------------
# constraint-based contact (oracle tests only)

def constrained_contact_forces(model: RobotModel, q: Configuration, tau,
                               active_contacts=None):
    """Bilateral rigid-contact forces from the KKT system
    [[H, -Jc^T], [Jc, 0]] [qdd; F] = [S^T tau - c; -Jc_dot qdot].

    Independent of the contact-inertia formulas; used to validate them.
    """
    dq = rbd.dynamics_quantities(model, q, active_contacts)
    nv = dq.H.shape[0]
    nc = dq.Jc.shape[0]
    K = np.zeros((nv + nc, nv + nc))
    K[:nv, :nv] = dq.H
    K[:nv, nv:] = -dq.Jc.T
    K[nv:, :nv] = dq.Jc
    gen = -dq.c.copy()
    gen[6:] += np.asarray(tau, dtype=float)
    rhs = np.concatenate([gen, -dq.Jc_dot_qdot])
    sol = np.linalg.solve(K, rhs)
    return sol[nv:], sol[:nv]
