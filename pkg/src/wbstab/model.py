"""Robot description: kinematic tree, joints, contact frames, file format.

The model file format is line oriented, ``#`` starts a comment:

    link <name> mass=<f> com=<x,y,z> inertia=<ixx,iyy,izz,ixy,ixz,iyz>
    joint <name> <revolute|floating> parent=<link> child=<link> axis=<x,y,z>
          origin=<x,y,z,qw,qx,qy,qz> limits=<lo,hi> vmax=<f> taumax=<f>
    contact <name> link=<link> origin=<...> foot=<hx,hy>
    taskframe <name> link=<link> origin=<...>

All values SI, angles rad.  ``inertia`` is the rotational inertia about the
link frame origin.  The floating joint has parent ``world`` and its origin is
the home pose of the base; it carries no axis/limits.
"""

from __future__ import annotations

import importlib.resources
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from wbstab.spatial import (SpatialInertia, SpatialMotion, Transform,
                            quat_normalize, quat_to_rot)

WORLD = "world"


class ModelError(ValueError):
    """Parse or validation failure; message carries the offending line/field."""


@dataclass(frozen=True, eq=False)
class Link:
    name: str
    inertia: SpatialInertia
    joint_to_link: Transform = field(default_factory=Transform.identity)


@dataclass(frozen=True, eq=False)
class Joint:
    name: str
    kind: str                      # "revolute" | "floating"
    parent_link: str
    child_link: str
    origin: Transform              # joint frame in the parent link frame
    axis: np.ndarray | None = None # unit axis, revolute only
    position_limits: tuple[float, float] = (-math.inf, math.inf)
    velocity_limit: float = math.inf
    torque_limit: float = math.inf


@dataclass(frozen=True, eq=False)
class ContactFrame:
    name: str
    link: str
    offset: Transform
    foot_half_extents: tuple[float, float]


@dataclass(frozen=True, eq=False)
class TaskFrame:
    name: str
    link: str
    offset: Transform


@dataclass(frozen=True, eq=False)
class RobotModel:
    links: tuple[Link, ...]
    joints: tuple[Joint, ...]
    contact_frames: tuple[ContactFrame, ...]
    task_frames: tuple[TaskFrame, ...]

    def __post_init__(self):
        _validate(self)

    # -- convenience views ---------------------------------------------------

    @property
    def actuated_joints(self) -> tuple[Joint, ...]:
        return tuple(j for j in self.joints if j.kind == "revolute")

    @property
    def floating_joint(self) -> Joint:
        return next(j for j in self.joints if j.kind == "floating")

    @property
    def n_a(self) -> int:
        return len(self.actuated_joints)

    @property
    def nv(self) -> int:
        return 6 + self.n_a

    @property
    def total_mass(self) -> float:
        return sum(l.inertia.mass for l in self.links)

    def link(self, name: str) -> Link:
        for l in self.links:
            if l.name == name:
                return l
        raise KeyError(name)

    def contact_frame(self, name: str) -> ContactFrame:
        for c in self.contact_frames:
            if c.name == name:
                return c
        raise KeyError(name)

    def joint_limits(self):
        """(lo, hi, vmax, taumax) arrays over actuated joints, file order."""
        js = self.actuated_joints
        lo = np.array([j.position_limits[0] for j in js])
        hi = np.array([j.position_limits[1] for j in js])
        vmax = np.array([j.velocity_limit for j in js])
        taumax = np.array([j.torque_limit for j in js])
        return lo, hi, vmax, taumax


@dataclass(eq=False)
class Configuration:
    """Full robot state q, q-dot.

    ``base_twist`` is the base link's spatial velocity expressed in the base
    frame (angular, linear).  The generalized velocity vector is
    ``[base_twist, joint_rates]``.
    """

    base_pose: Transform
    base_twist: SpatialMotion
    joints: np.ndarray
    joint_rates: np.ndarray

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=float).reshape(-1).copy()
        self.joint_rates = np.asarray(self.joint_rates, dtype=float).reshape(-1).copy()

    def qdot(self) -> np.ndarray:
        return np.concatenate([self.base_twist.as_vector(), self.joint_rates])

    def copy(self) -> "Configuration":
        return Configuration(self.base_pose, self.base_twist,
                             self.joints.copy(), self.joint_rates.copy())

    def validate(self, model: RobotModel):
        self.base_pose.validate()
        if self.joints.shape != (model.n_a,) or self.joint_rates.shape != (model.n_a,):
            raise ModelError(
                f"configuration sized for {self.joints.shape[0]} joints, model has {model.n_a}")
        lo, hi, _, _ = model.joint_limits()
        bad = (self.joints < lo - 1e-12) | (self.joints > hi + 1e-12)
        if bad.any():
            names = [j.name for j, b in zip(model.actuated_joints, bad) if b]
            warnings.warn(f"joints outside position limits: {names}", stacklevel=2)


# --------------------------------------------------------------------------
# validation

def _validate(m: RobotModel):
    names = [l.name for l in m.links]
    if len(set(names)) != len(names):
        raise ModelError("duplicate link names")
    jnames = [j.name for j in m.joints]
    if len(set(jnames)) != len(jnames):
        raise ModelError("duplicate joint names")
    floating = [j for j in m.joints if j.kind == "floating"]
    if len(floating) > 1:
        raise ModelError("multiple floating joints")
    if len(floating) == 0:
        raise ModelError("no floating joint (the tree root must be floating)")
    root = floating[0]
    if root.parent_link != WORLD:
        raise ModelError("floating joint must have parent 'world'")

    for l in m.links:
        try:
            l.inertia.validate()
        except ValueError as e:
            raise ModelError(f"link '{l.name}': {e}") from e
        l.joint_to_link.validate()

    link_set = set(names)
    child_of = {}
    for j in m.joints:
        if j.child_link not in link_set:
            raise ModelError(f"joint '{j.name}': unknown child link '{j.child_link}'")
        if j.parent_link != WORLD and j.parent_link not in link_set:
            raise ModelError(f"joint '{j.name}': unknown parent link '{j.parent_link}'")
        if j.child_link in child_of:
            raise ModelError(f"link '{j.child_link}' has two parent joints")
        child_of[j.child_link] = j
        j.origin.validate()
        if j.kind == "revolute":
            if j.axis is None:
                raise ModelError(f"joint '{j.name}': revolute joint needs an axis")
            if abs(np.linalg.norm(j.axis) - 1.0) > 1e-9:
                raise ModelError(f"joint '{j.name}': axis not unit length")
            lo, hi = j.position_limits
            if not lo < hi:
                raise ModelError(f"joint '{j.name}': limits must satisfy lo < hi")
            if not j.velocity_limit > 0:
                raise ModelError(f"joint '{j.name}': velocity limit must be > 0")
            if not j.torque_limit > 0:
                raise ModelError(f"joint '{j.name}': torque limit must be > 0")

    for l in m.links:
        if l.name not in child_of:
            raise ModelError(f"link '{l.name}' is not connected by any joint")

    # connectivity/acyclicity: walk each link up to world
    for l in m.links:
        seen, cur = set(), l.name
        while cur != WORLD:
            if cur in seen:
                raise ModelError(f"cycle in kinematic tree at link '{cur}'")
            seen.add(cur)
            cur = child_of[cur].parent_link

    for c in m.contact_frames:
        if c.link not in link_set:
            raise ModelError(f"contact '{c.name}': unknown link '{c.link}'")
        c.offset.validate()
        hx, hy = c.foot_half_extents
        if not (hx > 0 and hy > 0):
            raise ModelError(f"contact '{c.name}': foot half extents must be > 0")
    for t in m.task_frames:
        if t.link not in link_set:
            raise ModelError(f"taskframe '{t.name}': unknown link '{t.link}'")
        t.offset.validate()
    fnames = [c.name for c in m.contact_frames] + [t.name for t in m.task_frames] + names
    if len(set(fnames)) != len(fnames):
        raise ModelError("frame names (links/contacts/taskframes) must be unique")


# --------------------------------------------------------------------------
# parsing

def _parse_floats(text: str, n: int, lineno: int, what: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != n:
        raise ModelError(f"line {lineno}: {what} needs {n} comma-separated values")
    try:
        return np.array([float(p) for p in parts])
    except ValueError as e:
        raise ModelError(f"line {lineno}: bad float in {what}: {e}") from e


def _parse_origin(text: str, lineno: int) -> Transform:
    v = _parse_floats(text, 7, lineno, "origin")
    return Transform(quat_to_rot(quat_normalize(v[3:])), v[:3])


def _kv(tokens: list[str], lineno: int) -> dict[str, str]:
    out = {}
    for t in tokens:
        if "=" not in t:
            raise ModelError(f"line {lineno}: expected key=value, got '{t}'")
        k, v = t.split("=", 1)
        if k in out:
            raise ModelError(f"line {lineno}: duplicate key '{k}'")
        out[k] = v
    return out


def _need(kv: dict, key: str, lineno: int) -> str:
    if key not in kv:
        raise ModelError(f"line {lineno}: missing required field '{key}'")
    return kv.pop(key)


def load_model(text: str) -> RobotModel:
    """Parse and validate a robot model from its text form."""
    links, joints, contacts, taskframes = [], [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        kind, rest = tokens[0], tokens[1:]
        if kind == "link":
            if len(rest) < 1:
                raise ModelError(f"line {lineno}: link needs a name")
            name, kv = rest[0], _kv(rest[1:], lineno)
            mass = float(_need(kv, "mass", lineno))
            com = _parse_floats(_need(kv, "com", lineno), 3, lineno, "com")
            i6 = _parse_floats(_need(kv, "inertia", lineno), 6, lineno, "inertia")
            ixx, iyy, izz, ixy, ixz, iyz = i6
            rot_inertia = np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
            links.append(Link(name, SpatialInertia(mass, com, rot_inertia)))
        elif kind == "joint":
            if len(rest) < 2 or rest[1] not in ("revolute", "floating"):
                raise ModelError(f"line {lineno}: joint needs a name and a type "
                                 "(revolute|floating)")
            name, jtype, kv = rest[0], rest[1], _kv(rest[2:], lineno)
            parent = _need(kv, "parent", lineno)
            child = _need(kv, "child", lineno)
            origin = _parse_origin(_need(kv, "origin", lineno), lineno)
            if jtype == "revolute":
                axis = _parse_floats(_need(kv, "axis", lineno), 3, lineno, "axis")
                lims = _parse_floats(_need(kv, "limits", lineno), 2, lineno, "limits")
                vmax = float(_need(kv, "vmax", lineno))
                taumax = float(_need(kv, "taumax", lineno))
                joints.append(Joint(name, jtype, parent, child, origin, axis,
                                    (lims[0], lims[1]), vmax, taumax))
            else:
                joints.append(Joint(name, jtype, parent, child, origin))
        elif kind == "contact":
            name, kv = rest[0], _kv(rest[1:], lineno)
            link = _need(kv, "link", lineno)
            origin = _parse_origin(_need(kv, "origin", lineno), lineno)
            foot = _parse_floats(_need(kv, "foot", lineno), 2, lineno, "foot")
            contacts.append(ContactFrame(name, link, origin, (foot[0], foot[1])))
        elif kind == "taskframe":
            name, kv = rest[0], _kv(rest[1:], lineno)
            link = _need(kv, "link", lineno)
            origin = _parse_origin(_need(kv, "origin", lineno), lineno)
            taskframes.append(TaskFrame(name, link, origin))
        else:
            raise ModelError(f"line {lineno}: unknown directive '{kind}'")
        if kind in ("link", "joint", "contact", "taskframe") and kv:
            raise ModelError(f"line {lineno}: unexpected fields {sorted(kv)}")
    if not links:
        raise ModelError("line 1: empty model (no links)")
    return RobotModel(tuple(links), tuple(joints), tuple(contacts), tuple(taskframes))


def _fmt(x: float) -> str:
    return repr(float(x))


def _fmt_vec(v) -> str:
    return ",".join(_fmt(x) for x in np.asarray(v, dtype=float).ravel())


def _fmt_origin(X: Transform) -> str:
    return _fmt_vec(np.concatenate([X.translation, X.quat()]))


def serialize(m: RobotModel) -> str:
    """Text form of a model; load_model(serialize(m)) reproduces all values."""
    out = []
    for l in m.links:
        I = l.inertia.rot_inertia
        i6 = [I[0, 0], I[1, 1], I[2, 2], I[0, 1], I[0, 2], I[1, 2]]
        out.append(f"link {l.name} mass={_fmt(l.inertia.mass)} "
                   f"com={_fmt_vec(l.inertia.com)} inertia={_fmt_vec(i6)}")
    for j in m.joints:
        if j.kind == "floating":
            out.append(f"joint {j.name} floating parent={j.parent_link} "
                       f"child={j.child_link} origin={_fmt_origin(j.origin)}")
        else:
            out.append(
                f"joint {j.name} revolute parent={j.parent_link} child={j.child_link} "
                f"axis={_fmt_vec(j.axis)} origin={_fmt_origin(j.origin)} "
                f"limits={_fmt(j.position_limits[0])},{_fmt(j.position_limits[1])} "
                f"vmax={_fmt(j.velocity_limit)} taumax={_fmt(j.torque_limit)}")
    for c in m.contact_frames:
        out.append(f"contact {c.name} link={c.link} origin={_fmt_origin(c.offset)} "
                   f"foot={_fmt(c.foot_half_extents[0])},{_fmt(c.foot_half_extents[1])}")
    for t in m.task_frames:
        out.append(f"taskframe {t.name} link={t.link} origin={_fmt_origin(t.offset)}")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# built-in biped

#: knee-bend angle of the biped's standing pose
BIPED_BEND = 0.40
#: leg segment lengths and frame offsets used by the shipped biped12 file
_BIPED_GEOM = dict(hip_drop=0.20, thigh=0.28, shank=0.26, ankle_drop=0.04,
                   sole_drop=0.06, hip_half_width=0.10)


def builtin_biped() -> RobotModel:
    """The 12-DOF biped used throughout: 2 legs x (hip yaw/roll/pitch, knee,
    ankle pitch/roll), 70 kg, soles at z=0 in the standing pose."""
    text = importlib.resources.files("wbstab").joinpath("models/biped12.model").read_text()
    return load_model(text)


def biped_home_height() -> float:
    g = _BIPED_GEOM
    return (g["hip_drop"] + (g["thigh"] + g["shank"]) * math.cos(BIPED_BEND)
            + g["ankle_drop"] + g["sole_drop"])


def standing_configuration(model: RobotModel) -> Configuration:
    """Default configuration: base at the floating joint's home pose, knees
    bent for the biped (zero joints for other models)."""
    joints = np.zeros(model.n_a)
    names = [j.name for j in model.actuated_joints]
    bend = {"hip_pitch": -BIPED_BEND, "knee_pitch": 2 * BIPED_BEND,
            "ankle_pitch": -BIPED_BEND}
    for i, n in enumerate(names):
        for key, val in bend.items():
            if n.endswith(key):
                joints[i] = val
    return Configuration(
        base_pose=model.floating_joint.origin,
        base_twist=SpatialMotion(np.zeros(3), np.zeros(3)),
        joints=joints,
        joint_rates=np.zeros(model.n_a),
    )
