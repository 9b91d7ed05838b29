"""Rigid-body dynamics over a RobotModel.

Two independent formulations are implemented on purpose:

* the main path (``KinematicsEvaluator`` backed by the ``_kernels`` numba
  pass) references every spatial quantity at the *world origin*, which turns
  Jacobian bookkeeping into one masked column table and the mass matrix into
  a single accumulation over links,
* ``inverse_dynamics`` is a classic link-local recursive Newton-Euler pass,
  used by the tests as an oracle against the main path.

Frame velocities and Jacobians handed to callers are world-aligned and
referenced at the frame origin: ``(omega_world, d/dt origin_world)``, rows
angular-then-linear.  ``frame_jacobian_dot_qdot`` is the classical
acceleration bias (the frame's (omega_dot, origin_ddot) at zero generalized
acceleration).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from wbstab import _kernels
from wbstab.model import Configuration, RobotModel
from wbstab.spatial import (GRAVITY, SpatialForce, SpatialMotion, Transform,
                            rot_exp, rot_to_quat, quat_to_rot, skew,
                            transform_force, transform_motion)

COM = "com"  # pseudo-frame name accepted where a task frame is expected


class RankDeficientContact(RuntimeError):
    def __init__(self, smallest_sv: float):
        super().__init__(f"contact Jacobian rank deficient "
                         f"(smallest singular value {smallest_sv:.3e})")
        self.smallest_sv = smallest_sv


@dataclass(eq=False)
class DynamicsQuantities:
    """Everything the stabilizer consumes in one tick."""

    H: np.ndarray
    c: np.ndarray
    Jc: np.ndarray
    Jc_dot_qdot: np.ndarray
    com: np.ndarray
    com_jacobian: np.ndarray


@dataclass(eq=False)
class ContactQuantities:
    lambda_c: np.ndarray
    gamma_c: np.ndarray
    h_c: np.ndarray


def _cr(a, b) -> np.ndarray:
    """3-vector cross product without numpy's generic-axis overhead."""
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


def _motion_cross(v: np.ndarray, m: np.ndarray) -> np.ndarray:
    return np.concatenate([np.cross(v[:3], m[:3]),
                           np.cross(v[:3], m[3:]) + np.cross(v[3:], m[:3])])


def _force_cross(v: np.ndarray, f: np.ndarray) -> np.ndarray:
    return np.concatenate([np.cross(v[:3], f[:3]) + np.cross(v[3:], f[3:]),
                           np.cross(v[:3], f[3:])])


class KinematicsEvaluator:
    """Preprocessed model arrays; one instance per thread."""

    def __init__(self, model: RobotModel):
        self.model = model
        joints = model.joints
        by_child = {j.child_link: j for j in joints}
        act_index = {j.name: i for i, j in enumerate(model.actuated_joints)}

        base = model.floating_joint.child_link
        order = [base]
        children = {}
        for j in joints:
            if j.kind == "revolute":
                children.setdefault(j.parent_link, []).append(j.child_link)
        i = 0
        while i < len(order):
            order.extend(children.get(order[i], []))
            i += 1
        self.link_names = order
        self.link_index = {n: k for k, n in enumerate(order)}
        nl, nv, na = len(order), model.nv, model.n_a
        self.nl, self.nv, self.na = nl, nv, na

        self.parent = np.full(nl, -1, dtype=np.int64)
        self.jcol = np.full(nl, -1, dtype=np.int64)   # generalized-velocity column
        self.axis_local = np.zeros((nl, 3))
        self.X_pj_R = np.zeros((nl, 3, 3))
        self.X_pj_p = np.zeros((nl, 3))
        self.jtl_R = np.zeros((nl, 3, 3))
        self.jtl_p = np.zeros((nl, 3))
        self.mass = np.zeros(nl)
        self.com_local = np.zeros((nl, 3))
        self.inertia_com_local = np.zeros((nl, 3, 3))
        self.mask = np.zeros((nl, nv))
        self.mask[:, :6] = 1.0

        for k, name in enumerate(order):
            link = model.link(name)
            I = link.inertia
            self.mass[k] = I.mass
            self.com_local[k] = I.com
            C = skew(I.com)
            self.inertia_com_local[k] = I.rot_inertia - I.mass * (C @ C.T)
            self.jtl_R[k] = link.joint_to_link.rotation
            self.jtl_p[k] = link.joint_to_link.translation
            j = by_child[name]
            self.X_pj_R[k] = j.origin.rotation
            self.X_pj_p[k] = j.origin.translation
            if j.kind == "revolute":
                p = self.link_index[j.parent_link]
                self.parent[k] = p
                col = 6 + act_index[j.name]
                self.jcol[k] = col
                self.axis_local[k] = j.axis
                self.mask[k] = self.mask[p].copy()
                self.mask[k, col] = 1.0

        self.frames = {}  # name -> (link index, offset R, offset p)
        for c in model.contact_frames:
            self.frames[c.name] = (self.link_index[c.link],
                                   c.offset.rotation, c.offset.translation)
        for t in model.task_frames:
            self.frames[t.name] = (self.link_index[t.link],
                                   t.offset.rotation, t.offset.translation)
        for n in order:
            self.frames[n] = (self.link_index[n], np.eye(3), np.zeros(3))

        self.total_mass = float(self.mass.sum())

    def kernel_args(self):
        return (self.parent, self.jcol, self.axis_local, self.X_pj_R,
                self.X_pj_p, self.jtl_R, self.jtl_p, self.mass,
                self.com_local, self.inertia_com_local, self.mask)

    def run(self, q: Configuration) -> "KinematicsState":
        nl, nv = self.nl, self.nv
        R = np.empty((nl, 3, 3))
        p = np.empty((nl, 3))
        Jall = np.empty((6, nv))
        u = np.empty((nl, 6))
        alpha = np.empty((nl, 6))
        comw = np.empty((nl, 3))
        I0 = np.empty((nl, 6, 6))
        H = np.empty((nv, nv))
        bias = np.empty(nv)
        comjac = np.empty((3, nv))
        compos = np.empty(3)
        qdot = q.qdot()
        _kernels.kin_dyn(*self.kernel_args(),
                         q.base_pose.rotation, q.base_pose.translation,
                         q.joints, qdot,
                         R, p, Jall, u, alpha, comw, I0, H, bias, comjac, compos)
        return KinematicsState(self, q, qdot, R, p, Jall, u, alpha, comw,
                               H, bias, comjac, compos)


class KinematicsState:
    """FK + velocity/bias results for one configuration."""

    def __init__(self, ev, q, qdot, R, p, Jall, u, alpha, com_w,
                 H, bias, comjac, compos):
        self.ev = ev
        self.q = q
        self.qdot = qdot
        self.R, self.p = R, p
        self.Jall = Jall        # world-origin referenced columns, all joints
        self.u = u              # link spatial velocities, world-origin referenced
        self.alpha = alpha      # kinematic bias accelerations, same referencing
        self.link_com_w = com_w
        self.H = H
        self.bias = bias
        self._comjac = comjac
        self._compos = compos

    def frame_pose(self, name: str) -> Transform:
        k, Ro, po = self.ev.frames[name]
        return Transform(self.R[k] @ Ro, self.R[k] @ po + self.p[k])

    def _frame_origin(self, name: str):
        k, Ro, po = self.ev.frames[name]
        return k, self.R[k] @ po + self.p[k]

    def frame_jacobian(self, name: str) -> np.ndarray:
        k, o = self._frame_origin(name)
        J = self.Jall * self.ev.mask[k][None, :]
        J[3:, :] -= skew(o) @ J[:3, :]
        return J

    def frame_velocity(self, name: str) -> np.ndarray:
        k, o = self._frame_origin(name)
        w = self.u[k, :3]
        return np.concatenate([w, self.u[k, 3:] + _cr(w, o)])

    def frame_jdot_qdot(self, name: str) -> np.ndarray:
        k, o = self._frame_origin(name)
        al = self.alpha[k]
        w = self.u[k, :3]
        odot = self.u[k, 3:] + _cr(w, o)
        return np.concatenate([al[:3], al[3:] + _cr(al[:3], o) + _cr(w, odot)])

    def com(self) -> np.ndarray:
        return self._compos

    def com_jacobian(self) -> np.ndarray:
        return self._comjac

    def com_jdot_qdot(self) -> np.ndarray:
        """CoM acceleration at zero generalized acceleration."""
        def rows_cross(a, b):
            out = np.empty_like(a)
            out[:, 0] = a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1]
            out[:, 1] = a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2]
            out[:, 2] = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
            return out

        c = self.link_com_w
        w = self.u[:, :3]
        cdot = self.u[:, 3:] + rows_cross(w, c)
        acc = self.alpha[:, 3:] + rows_cross(self.alpha[:, :3], c) + rows_cross(w, cdot)
        return self.ev.mass @ acc / self.ev.total_mass

    def contact_jacobian(self, contacts) -> tuple[np.ndarray, np.ndarray]:
        Jc = np.vstack([self.frame_jacobian(n) for n in contacts])
        bias = np.concatenate([self.frame_jdot_qdot(n) for n in contacts])
        return Jc, bias

    def kinetic_energy(self) -> float:
        return 0.5 * float(self.qdot @ self.H @ self.qdot)

    def potential_energy(self) -> float:
        return -float(self.ev.mass @ (self.link_com_w @ GRAVITY))


# --------------------------------------------------------------------------
# module-level operations (thin wrappers; hot loops keep their own evaluator)

def evaluator(model: RobotModel) -> KinematicsEvaluator:
    ev = getattr(model, "_evaluator", None)
    if ev is None:
        ev = KinematicsEvaluator(model)
        object.__setattr__(model, "_evaluator", ev)
    return ev


def _state(model: RobotModel, q: Configuration) -> KinematicsState:
    return evaluator(model).run(q)


def mass_matrix(model: RobotModel, q: Configuration) -> np.ndarray:
    return _state(model, q).H


def bias_forces(model: RobotModel, q: Configuration) -> np.ndarray:
    return _state(model, q).bias


def frame_pose(model: RobotModel, q: Configuration, frame: str) -> Transform:
    return _state(model, q).frame_pose(frame)


def frame_jacobian(model: RobotModel, q: Configuration, frame: str) -> np.ndarray:
    st = _state(model, q)
    if frame not in st.ev.frames:
        raise KeyError(f"unknown frame '{frame}'")
    return st.frame_jacobian(frame)


def frame_jacobian_dot_qdot(model: RobotModel, q: Configuration, frame: str) -> np.ndarray:
    st = _state(model, q)
    if frame not in st.ev.frames:
        raise KeyError(f"unknown frame '{frame}'")
    return st.frame_jdot_qdot(frame)


def com_position(model: RobotModel, q: Configuration) -> np.ndarray:
    return _state(model, q).com()


def com_jacobian(model: RobotModel, q: Configuration) -> np.ndarray:
    return _state(model, q).com_jacobian()


def dynamics_quantities(model: RobotModel, q: Configuration,
                        active_contacts=None) -> DynamicsQuantities:
    st = _state(model, q)
    contacts = [c.name for c in model.contact_frames] if active_contacts is None \
        else list(active_contacts)
    Jc, bias = st.contact_jacobian(contacts)
    return DynamicsQuantities(st.H, st.bias, Jc, bias, st.com(), st.com_jacobian())


def contact_quantities(model: RobotModel, q: Configuration, qdot=None,
                       active_contacts=None) -> ContactQuantities:
    """Lambda_c = (Jc H^-1 Jc^T)^-1 plus the command and drift maps
    Gamma_c = -Lambda_c Jc H^-1 S^T and h_c = Lambda_c (Jc H^-1 c - Jc_dot qdot)."""
    if qdot is not None:
        qdot = np.asarray(qdot, dtype=float)
        q = Configuration(q.base_pose, SpatialMotion(qdot[:3], qdot[3:6]),
                          q.joints, qdot[6:])
    st = _state(model, q)
    contacts = [c.name for c in model.contact_frames] if active_contacts is None \
        else list(active_contacts)
    if not contacts:
        raise ValueError("active_contacts must be nonempty")
    Jc, jdqd = st.contact_jacobian(contacts)
    return contact_quantities_from(st, Jc, jdqd)


def contact_quantities_from(st: KinematicsState, Jc, jdqd) -> ContactQuantities:
    Hf = cho_factor(st.H)
    Y = cho_solve(Hf, Jc.T)               # H^-1 Jc^T
    A = Jc @ Y
    A = 0.5 * (A + A.T)
    sv = np.linalg.svd(Jc, compute_uv=False)
    if sv[-1] < 1e-8 * max(1.0, sv[0]):
        raise RankDeficientContact(float(sv[-1]))
    Af = cho_factor(A)
    lam = cho_solve(Af, np.eye(A.shape[0]))
    lam = 0.5 * (lam + lam.T)
    gamma = -lam @ Y.T[:, 6:]
    h = lam @ (Y.T @ st.bias - jdqd)
    return ContactQuantities(lam, gamma, h)


def forward_dynamics(model: RobotModel, q: Configuration, tau,
                     external_wrenches: dict | None = None) -> np.ndarray:
    """Solve H qdd + c = S^T tau + sum J_f^T W_f for qdd.

    ``external_wrenches`` maps frame names to 6-vectors (moment, force),
    world-aligned at the frame origin.
    """
    st = _state(model, q)
    rhs = -st.bias
    rhs[6:] += np.asarray(tau, dtype=float)
    if external_wrenches:
        for name, w in external_wrenches.items():
            rhs += st.frame_jacobian(name).T @ np.asarray(w, dtype=float)
    return cho_solve(cho_factor(st.H), rhs)


def integrate(model: RobotModel, q: Configuration, qdot, dt: float) -> Configuration:
    """Advance the pose by one step of the local-twist retraction.

    The base rotation update is the quaternion/rotation exponential of the
    body angular velocity; the result is re-orthonormalized.
    """
    qdot = np.asarray(qdot, dtype=float)
    w, v = qdot[:3], qdot[3:6]
    Rb, pb = q.base_pose.rotation, q.base_pose.translation
    R_new = Rb @ rot_exp(w * dt)
    R_new = quat_to_rot(rot_to_quat(R_new))   # renormalize
    p_new = pb + Rb @ (v * dt)
    return Configuration(
        base_pose=Transform(R_new, p_new),
        base_twist=SpatialMotion(w, v),
        joints=q.joints + qdot[6:] * dt,
        joint_rates=qdot[6:],
    )


# --------------------------------------------------------------------------
# independent inverse dynamics (link-local recursive Newton-Euler)

def inverse_dynamics(model: RobotModel, q: Configuration, qdot, qdd,
                     external_wrenches: dict | None = None,
                     gravity: bool = True) -> np.ndarray:
    """Generalized forces H qdd + c - sum J^T W via a body-frame recursion.

    Kept deliberately independent of the world-origin formulation so the two
    can be cross-checked.
    """
    ev = evaluator(model)
    qdot = np.asarray(qdot, dtype=float)
    qdd = np.asarray(qdd, dtype=float)
    nl = ev.nl

    X_up = [None] * nl          # pose of link k in its parent's frame
    S = [None] * nl
    v = [None] * nl
    a = [None] * nl
    f = [np.zeros(6) for _ in range(nl)]

    Rb = q.base_pose.rotation
    v[0] = qdot[:6].copy()
    a[0] = qdd[:6].copy()
    if gravity:
        a[0][3:] -= Rb.T @ GRAVITY

    poses = [q.base_pose]
    for k in range(1, nl):
        th = q.joints[ev.jcol[k] - 6]
        rate = qdot[ev.jcol[k]]
        acc = qdd[ev.jcol[k]]
        P = Transform(ev.X_pj_R[k], ev.X_pj_p[k]).compose(
            Transform(rot_exp(ev.axis_local[k] * th), np.zeros(3))).compose(
            Transform(ev.jtl_R[k], ev.jtl_p[k]))
        X_up[k] = P
        poses.append(poses[ev.parent[k]].compose(P))
        jtl_inv = Transform(ev.jtl_R[k], ev.jtl_p[k]).inverse()
        Sm = transform_motion(jtl_inv, SpatialMotion(ev.axis_local[k], np.zeros(3)))
        S[k] = Sm.as_vector()
        Pinv = P.inverse()
        vp = transform_motion(Pinv, SpatialMotion(v[ev.parent[k]][:3],
                                                  v[ev.parent[k]][3:])).as_vector()
        ap = transform_motion(Pinv, SpatialMotion(a[ev.parent[k]][:3],
                                                  a[ev.parent[k]][3:])).as_vector()
        vJ = S[k] * rate
        v[k] = vp + vJ
        a[k] = ap + S[k] * acc + _motion_cross(v[k], vJ)

    for k in range(nl):
        m, c = ev.mass[k], ev.com_local[k]
        C = skew(c)
        I6k = np.zeros((6, 6))
        I6k[:3, :3] = ev.inertia_com_local[k] + m * (C @ C.T)
        I6k[:3, 3:] = m * C
        I6k[3:, :3] = m * C.T
        I6k[3:, 3:] = m * np.eye(3)
        f[k] = I6k @ a[k] + _force_cross(v[k], I6k @ v[k])

    if external_wrenches:
        for name, w in external_wrenches.items():
            kf, Ro, po = ev.frames[name]
            w = np.asarray(w, dtype=float)
            # world-aligned at frame origin -> link coordinates at link origin
            Rk = poses[kf].rotation
            o_f = poses[kf].apply_point(po)
            p_k = poses[kf].translation
            mom_w = w[:3] + np.cross(o_f - p_k, w[3:])
            f[kf] -= np.concatenate([Rk.T @ mom_w, Rk.T @ w[3:]])

    out = np.zeros(ev.nv)
    for k in range(nl - 1, 0, -1):
        out[ev.jcol[k]] = S[k] @ f[k]
        ff = transform_force(X_up[k], SpatialForce(f[k][:3], f[k][3:]))
        f[ev.parent[k]] += ff.as_vector()
    out[:6] = f[0]
    return out
