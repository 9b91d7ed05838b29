"""Force-feedback whole-body stabilizer.

Each control tick runs two QPs:

1. ``reference_force``: an inverse-dynamics QP over (qdd, tau, F) that tracks
   the CoM and posture tasks subject to the whole-body dynamics, a zero
   contact-acceleration constraint, torque boxes, and linearized
   friction/CoP limits.  Its contact-force block is the reference F_ID.
2. ``track``: a differential-IK QP over (v, Delta) whose equality constraint
   ties the commanded contact-frame velocity to the measured force error
   through the contact inertia: Jc v = -Lambda_c^-1 K^-1 e_F + Delta, with
   the slack Delta penalized.  The joint part of v is integrated into the
   position command sent to the robot's servos.

The same ``track`` QP doubles as a plain kinematic tracker (foot-pose tasks,
no force constraint) for the ZMP baseline.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from wbstab import qp, rbd
from wbstab.model import Configuration, RobotModel
from wbstab.spatial import Transform, rot_log

#: minimum reference normal force per active foot (N); keeps the
#: contact-inertia feedback meaningful near unloading
F_MIN = 5.0


@dataclass(eq=False)
class TaskSpec:
    """One tracking objective: a frame pose, the CoM, or the posture."""

    name: str
    frame: str                 # frame name, "com", or "posture"
    weight: np.ndarray         # per-axis weights (diagonal of Q_i)
    kp: float = 100.0          # task-space stiffness (1/s^2 at accel level)
    kd: float = 20.0           # task-space damping (1/s)

    def __post_init__(self):
        self.weight = np.atleast_1d(np.asarray(self.weight, dtype=float))
        if (self.weight < 0).any():
            raise ValueError(f"task '{self.name}': weights must be >= 0")
        if self.kp < 0 or self.kd < 0:
            raise ValueError(f"task '{self.name}': gains must be >= 0")


@dataclass(eq=False)
class StabilizerConfig:
    tasks: list[TaskSpec]
    force_gain: np.ndarray          # K, negative definite (6nc x 6nc)
    torque_weight: float = 1e-4     # Q_tau
    disturbance_weight: float = 1e3  # Q_d
    friction_mu: float = 0.7
    f_min: float = F_MIN
    control_dt: float = 1e-3
    error_filter_hz: float = 40.0
    force_feedback: bool = True
    qp_tol: float = 1e-8
    qp_max_iter: int = 200

    def __post_init__(self):
        self.force_gain = np.asarray(self.force_gain, dtype=float)
        if self.force_gain.ndim == 2:
            eig = np.linalg.eigvalsh(0.5 * (self.force_gain + self.force_gain.T))
            if eig.max() >= 0:
                raise ValueError("force gain K must be negative definite")
        elif not np.all(self.force_gain < 0):
            raise ValueError("force gain K must be negative definite")
        if self.friction_mu <= 0:
            raise ValueError("friction coefficient must be > 0")


def default_config(model: RobotModel, k_force: float = -20.0,
                   force_feedback: bool = True,
                   foot_tasks: bool = False) -> StabilizerConfig:
    """Spec gains: Q_com = 1e2, Q_d = 1e3, Q_tau = 1e-4, K = -20 I."""
    tasks = [
        TaskSpec("com", "com", np.full(3, 1e2)),
        TaskSpec("base_orient", "torso_frame", np.full(3, 50.0)),
        TaskSpec("posture", "posture", np.full(model.n_a, 1e-2)),
    ]
    if foot_tasks:
        for c in model.contact_frames:
            tasks.insert(2, TaskSpec(f"foot_{c.name}", c.name, np.full(6, 2e2)))
    nc = len(model.contact_frames)
    return StabilizerConfig(tasks, np.full(6 * nc, float(k_force)),
                            force_feedback=force_feedback)


@dataclass(eq=False)
class References:
    """Per-tick targets; everything optional except the contact schedule."""

    com_pos: np.ndarray
    com_vel: np.ndarray = None
    com_acc: np.ndarray = None
    base_rotation: np.ndarray = None      # desired base orientation (3x3)
    base_angvel: np.ndarray = None
    posture: np.ndarray = None
    posture_vel: np.ndarray = None
    frame_targets: dict = field(default_factory=dict)
    # frame name -> (Transform, vel6) desired pose and spatial velocity
    active_contacts: tuple = ()
    force_bias: np.ndarray = None          # added to F_ID (test injection)

    def __post_init__(self):
        self.com_pos = np.asarray(self.com_pos, dtype=float)
        if self.com_vel is None:
            self.com_vel = np.zeros(3)
        if self.com_acc is None:
            self.com_acc = np.zeros(3)
        if self.base_rotation is None:
            self.base_rotation = np.eye(3)
        if self.base_angvel is None:
            self.base_angvel = np.zeros(3)


def standing_references(model: RobotModel, q0: Configuration) -> References:
    """Hold the initial CoM, upright base, and initial posture."""
    return References(
        com_pos=rbd.com_position(model, q0).copy(),
        base_rotation=q0.base_pose.rotation.copy(),
        posture=q0.joints.copy(),
        active_contacts=tuple(c.name for c in model.contact_frames),
    )


@dataclass(eq=False)
class StabilizerState:
    q_cmd: np.ndarray              # integrated joint position command
    f_id: np.ndarray               # last reference force stack
    e_f_filt: np.ndarray           # filtered force error
    warm11: qp.QpSolution = None
    warm15: qp.QpSolution = None


def init(model: RobotModel, q0: Configuration) -> StabilizerState:
    """Command starts at the measured joints (integration initial condition)."""
    nc = len(model.contact_frames)
    return StabilizerState(q0.joints.copy(), np.zeros(6 * nc), np.zeros(6 * nc))


@dataclass(eq=False)
class TrackDiagnostics:
    f_id: np.ndarray
    e_f: np.ndarray
    delta: np.ndarray
    cop: dict
    qp11_status: str
    qp15_status: str
    qp11_kkt: float
    qp15_kkt: float
    dyn_residual: float
    contact_residual: float
    solve_time_us: float
    tau_id: np.ndarray = None
    qdd_id: np.ndarray = None


class InfeasibleReference(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Eq. 11: reference contact force via inverse dynamics

def _sole_constraint_rows(model, st, contacts, mu, f_min):
    """Friction pyramid + CoP rectangle + yaw bound, in each sole frame."""
    rows, rhs = [], []
    mu_t = mu / np.sqrt(2.0)
    nF = 6 * len(contacts)
    for ci, name in enumerate(contacts):
        cf = model.contact_frame(name)
        hx, hy = cf.foot_half_extents
        gam = 0.5 * mu * np.hypot(hx, hy)
        Rs = st.frame_pose(name).rotation
        # local wrench components as rows over the foot's (m, f) block
        Lm = np.zeros((3, nF))
        Lf = np.zeros((3, nF))
        Lm[:, 6 * ci:6 * ci + 3] = Rs.T
        Lf[:, 6 * ci + 3:6 * ci + 6] = Rs.T
        fz = Lf[2]
        block = [
            (-fz, -f_min),                 # f_z >= f_min
            (Lf[0] - mu_t * fz, 0.0),      # |f_x| <= mu/sqrt2 f_z
            (-Lf[0] - mu_t * fz, 0.0),
            (Lf[1] - mu_t * fz, 0.0),
            (-Lf[1] - mu_t * fz, 0.0),
            (Lm[1] - hx * fz, 0.0),        # CoP: |m_y| <= hx f_z
            (-Lm[1] - hx * fz, 0.0),
            (Lm[0] - hy * fz, 0.0),        # CoP: |m_x| <= hy f_z
            (-Lm[0] - hy * fz, 0.0),
            (Lm[2] - gam * fz, 0.0),       # |m_z| <= gamma f_z
            (-Lm[2] - gam * fz, 0.0),
        ]
        for row, limit in block:
            rows.append(row)
            rhs.append(limit)
    return np.array(rows), np.array(rhs)


def _task_rows_accel(model, st, refs, cfg, nv):
    """(J, r, w) triples over qdd for every configured task."""
    out = []
    qdot = st.qdot
    for t in cfg.tasks:
        if t.frame == "com":
            J = st.com_jacobian()
            err = refs.com_pos - st.com()
            derr = refs.com_vel - J @ qdot
            r = refs.com_acc + t.kd * derr + t.kp * err - st.com_jdot_qdot()
        elif t.frame == "posture":
            if refs.posture is None:
                continue
            J = np.zeros((model.n_a, nv))
            J[:, 6:] = np.eye(model.n_a)
            pv = refs.posture_vel if refs.posture_vel is not None else 0.0
            r = t.kp * (refs.posture - st.q.joints) + t.kd * (pv - qdot[6:])
        elif t.frame in refs.frame_targets:
            X_ref, vel_ref = refs.frame_targets[t.frame]
            J6 = st.frame_jacobian(t.frame)
            X = st.frame_pose(t.frame)
            err = np.concatenate([rot_log(X_ref.rotation @ X.rotation.T),
                                  X_ref.translation - X.translation])
            derr = np.asarray(vel_ref, dtype=float) - J6 @ qdot
            r = t.kd * derr + t.kp * err - st.frame_jdot_qdot(t.frame)
            J = J6
        else:
            # orientation-only task on a named frame
            J6 = st.frame_jacobian(t.frame)
            X = st.frame_pose(t.frame)
            err = rot_log(refs.base_rotation @ X.rotation.T)
            derr = refs.base_angvel - J6[:3] @ qdot
            r = t.kd * derr + t.kp * err - st.frame_jdot_qdot(t.frame)[:3]
            J = J6[:3]
        out.append((J, r, t.weight))
    return out


def reference_force(model: RobotModel, q: Configuration, refs: References,
                    cfg: StabilizerConfig, state: StabilizerState = None,
                    st: rbd.KinematicsState = None):
    """Solve the inverse-dynamics QP; returns (F_ID, tau_ID, qdd_ID, extras).

    ``extras`` carries the kinematics state, contact Jacobian and QP solution
    so that ``track`` can reuse them within the same tick.
    """
    if st is None:
        st = rbd.evaluator(model).run(q)
    contacts = list(refs.active_contacts)
    if not contacts:
        raise InfeasibleReference("no active contacts")
    Jc, jdqd = st.contact_jacobian(contacts)
    sv = np.linalg.svd(Jc, compute_uv=False)
    if sv[-1] < 1e-8 * max(1.0, sv[0]):
        raise rbd.RankDeficientContact(float(sv[-1]))

    nv = model.nv
    na = model.n_a
    nF = 6 * len(contacts)
    n = nv + na + nF

    tasks = []
    for J, r, w in _task_rows_accel(model, st, refs, cfg, nv):
        Jf = np.zeros((J.shape[0], n))
        Jf[:, :nv] = J
        tasks.append((Jf, r, w))
    if na:
        Jtau = np.zeros((na, n))
        Jtau[:, nv:nv + na] = np.eye(na)
        tasks.append((Jtau, np.zeros(na), np.full(na, cfg.torque_weight)))
    prob = qp.weighted_lsq_to_qp(tasks)

    A = np.zeros((nv + nF, n))
    A[:nv, :nv] = st.H
    A[:nv, nv:nv + na][6:, :] = -np.eye(na)
    A[:nv, nv + na:] = -Jc.T
    A[nv:, :nv] = Jc
    b = np.concatenate([-st.bias, -jdqd])

    Cf, df = _sole_constraint_rows(model, st, contacts, cfg.friction_mu, cfg.f_min)
    C = np.zeros((Cf.shape[0], n))
    C[:, nv + na:] = Cf

    lower = np.full(n, -np.inf)
    upper = np.full(n, np.inf)
    if na:
        _, _, _, taumax = model.joint_limits()
        lower[nv:nv + na] = -taumax
        upper[nv:nv + na] = taumax

    prob.A, prob.b, prob.C, prob.d = A, b, C, df
    prob.lower, prob.upper = lower, upper
    warm = state.warm11 if state is not None else None
    sol = qp.solve(prob, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter, warm_start=warm)
    if sol.status == "infeasible":
        raise InfeasibleReference(
            f"reference-force QP infeasible (residual {sol.kkt_residual:.3e})")
    qdd = sol.x[:nv]
    tau = sol.x[nv:nv + na]
    F = sol.x[nv + na:]

    dyn_res = float(np.abs(st.H @ qdd + st.bias - np.concatenate(
        [np.zeros(6), tau]) - Jc.T @ F).max())
    dyn_scale = 1.0 + float(np.abs(st.bias).max())
    con_res = float(np.abs(Jc @ qdd + jdqd).max())
    extras = dict(st=st, Jc=Jc, jdqd=jdqd, sol=sol,
                  dyn_residual=dyn_res / dyn_scale,
                  contact_residual=con_res / (1.0 + float(np.abs(jdqd).max())))
    return F, tau, qdd, extras


# --------------------------------------------------------------------------
# Eqs. 14-16: CoM + force tracking via differential IK

def _task_rows_vel(model, st, refs, cfg, nv):
    out = []
    qdot = st.qdot
    for t in cfg.tasks:
        if t.frame == "com":
            J = st.com_jacobian()
            r = refs.com_vel + t.kp * (refs.com_pos - st.com())
        elif t.frame == "posture":
            if refs.posture is None:
                continue
            J = np.zeros((model.n_a, nv))
            J[:, 6:] = np.eye(model.n_a)
            pv = refs.posture_vel if refs.posture_vel is not None else 0.0
            r = pv + t.kp * (refs.posture - st.q.joints)
        elif t.frame in refs.frame_targets:
            X_ref, vel_ref = refs.frame_targets[t.frame]
            J = st.frame_jacobian(t.frame)
            X = st.frame_pose(t.frame)
            err = np.concatenate([rot_log(X_ref.rotation @ X.rotation.T),
                                  X_ref.translation - X.translation])
            r = np.asarray(vel_ref, dtype=float) + t.kp * err
        else:
            J6 = st.frame_jacobian(t.frame)
            X = st.frame_pose(t.frame)
            r = refs.base_angvel + t.kp * rot_log(refs.base_rotation @ X.rotation.T)
            J = J6[:3]
        out.append((J, r, t.weight))
    return out


def admittance_rhs(st: rbd.KinematicsState, Jc, e_f, force_gain):
    """-Lambda_c^-1 K^-1 e_F, evaluated at the current configuration."""
    K = np.asarray(force_gain, dtype=float)
    if K.ndim < 2:
        y = e_f / K if K.ndim == 1 else e_f / float(K)
    else:
        y = np.linalg.solve(K, e_f)
    Hf = cho_factor(st.H)
    A = Jc @ cho_solve(Hf, Jc.T)    # = Lambda_c^-1
    return -(A @ y)


def track(model: RobotModel, q: Configuration, refs: References,
          cfg: StabilizerConfig, state: StabilizerState, F_meas):
    """One stabilizer tick; returns (q_cmd_next, state, TrackDiagnostics).

    ``F_meas`` is the stacked measured contact wrench (moment, force per
    active contact), world-aligned at the sole origins.
    """
    t0 = time.perf_counter()
    st = rbd.evaluator(model).run(q)
    nv = model.nv
    contacts = list(refs.active_contacts)
    nF = 6 * len(contacts)

    if cfg.force_feedback:
        F_id, tau_id, qdd_id, extras = reference_force(
            model, q, refs, cfg, state, st=st)
        if refs.force_bias is not None:
            F_id = F_id + refs.force_bias
        Jc, jdqd = extras["Jc"], extras["jdqd"]
        e_raw = np.asarray(F_meas, dtype=float) - F_id
        alpha = 1.0
        if cfg.error_filter_hz > 0:
            lpf_tau = 1.0 / (2.0 * np.pi * cfg.error_filter_hz)
            alpha = cfg.control_dt / (lpf_tau + cfg.control_dt)
        e_f = state.e_f_filt + alpha * (e_raw - state.e_f_filt)
        rhs = admittance_rhs(st, Jc, e_f, cfg.force_gain)
    else:
        F_id = np.zeros(nF)
        tau_id = qdd_id = None
        extras = dict(sol=None, dyn_residual=0.0, contact_residual=0.0)
        e_f = e_raw = np.asarray(F_meas, dtype=float) - F_id
        Jc = rhs = None

    n = nv + (nF if cfg.force_feedback else 0)
    tasks = []
    for J, r, w in _task_rows_vel(model, st, refs, cfg, nv):
        if cfg.force_feedback:
            Jf = np.zeros((J.shape[0], n))
            Jf[:, :nv] = J
            tasks.append((Jf, r, w))
        else:
            tasks.append((J, r, w))
    if cfg.force_feedback:
        Jd = np.zeros((nF, n))
        Jd[:, nv:] = np.eye(nF)
        tasks.append((Jd, np.zeros(nF), np.full(nF, cfg.disturbance_weight)))
    prob = qp.weighted_lsq_to_qp(tasks)

    if cfg.force_feedback:
        A = np.zeros((nF, n))
        A[:, :nv] = Jc
        A[:, nv:] = -np.eye(nF)
        prob.A, prob.b = A, rhs

    lower = np.full(n, -np.inf)
    upper = np.full(n, np.inf)
    _, _, vmax, _ = model.joint_limits()
    lower[6:nv] = -vmax
    upper[6:nv] = vmax
    prob.lower, prob.upper = lower, upper

    sol = qp.solve(prob, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter,
                   warm_start=state.warm15)
    if sol.status == "infeasible":
        raise InfeasibleReference(
            f"tracking QP infeasible (residual {sol.kkt_residual:.3e})")
    v = sol.x[:nv]
    delta = sol.x[nv:] if cfg.force_feedback else np.zeros(nF)

    lo, hi, _, _ = model.joint_limits()
    q_cmd = np.clip(state.q_cmd + v[6:] * cfg.control_dt, lo, hi)

    cop = {}
    Fm = np.asarray(F_meas, dtype=float)
    for ci, name in enumerate(contacts):
        Rs = st.frame_pose(name).rotation
        m_l = Rs.T @ Fm[6 * ci:6 * ci + 3]
        f_l = Rs.T @ Fm[6 * ci + 3:6 * ci + 6]
        if f_l[2] > 1.0:
            cop[name] = np.array([-m_l[1] / f_l[2], m_l[0] / f_l[2]])
        else:
            cop[name] = np.zeros(2)

    new_state = StabilizerState(q_cmd, F_id.copy(), e_f.copy(),
                                warm11=extras.get("sol"), warm15=sol)
    diag = TrackDiagnostics(
        f_id=F_id, e_f=e_f, delta=delta, cop=cop,
        qp11_status=extras["sol"].status if extras.get("sol") else "off",
        qp15_status=sol.status,
        qp11_kkt=extras["sol"].kkt_residual if extras.get("sol") else 0.0,
        qp15_kkt=sol.kkt_residual,
        dyn_residual=extras["dyn_residual"],
        contact_residual=extras["contact_residual"],
        solve_time_us=(time.perf_counter() - t0) * 1e6,
        tau_id=tau_id, qdd_id=qdd_id)
    return q_cmd, new_state, diag
