"""Articulated hand model: descriptor I/O, forward kinematics and analytic SDF.

Descriptor format (``handdesc v1``), one statement per line, ``#`` comments::

    handdesc v1
    hand <name>
    palm_normal x,y,z
    link <name>                       # first link is the root
    box center=x,y,z rpy=r,p,y half=hx,hy,hz
    capsule a=x,y,z b=x,y,z radius=r  # attaches to the last declared link
    joint <name> parent=<link> child=<link> xyz=.. rpy=.. axis=.. limits=lo,hi
    keypoint <link> x,y,z             # exactly 15
    fingertip <link> x,y,z
    exclude <link> <link>             # extra self-collision exclusions

Joints are revolute and appear in ``q`` in declaration order; a joint must
be declared after the joint that creates its parent link.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DescriptorError, InvalidInputError
from .so3 import RigidTransform, exp_map, from_euler

N_KEYPOINTS = 15


@dataclass(frozen=True)
class Box:
    center: tuple
    rpy: tuple
    half: tuple

    def local_frame(self):
        return from_euler(self.rpy, "xyz"), np.array(self.center, dtype=float)

    def params(self):
        return np.array(self.half, dtype=float)

    def area(self):
        hx, hy, hz = self.half
        return 8.0 * (hx * hy + hy * hz + hx * hz)


@dataclass(frozen=True)
class Capsule:
    a: tuple
    b: tuple
    radius: float

    @property
    def half_length(self):
        return 0.5 * float(np.linalg.norm(np.subtract(self.b, self.a)))

    def local_frame(self):
        a, b = np.array(self.a, float), np.array(self.b, float)
        return _frame_z_to(b - a), 0.5 * (a + b)

    def params(self):
        return np.array([self.radius, self.half_length, 0.0])

    def area(self):
        r = self.radius
        return 4.0 * np.pi * r * r + 4.0 * np.pi * r * self.half_length


def _frame_z_to(d):
    """Rotation taking +z onto the direction of ``d``."""
    d = d / np.linalg.norm(d)
    z = np.array([0.0, 0.0, 1.0])
    v = np.cross(z, d)
    c = float(z @ d)
    if np.linalg.norm(v) < 1e-12:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    K = np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])
    return np.eye(3) + K + K @ K * (1.0 / (1.0 + c))


@dataclass(frozen=True)
class Link:
    name: str
    primitives: tuple = ()


@dataclass(frozen=True)
class Joint:
    name: str
    parent: str
    child: str
    xyz: tuple
    rpy: tuple
    axis: tuple
    lower: float
    upper: float


@dataclass(frozen=True)
class HandPose:
    root: RigidTransform
    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(-1))
        if not np.all(np.isfinite(self.q)):
            raise InvalidInputError("joint angles must be finite")

    @classmethod
    def make(cls, rotation, translation, q):
        return cls(RigidTransform(rotation, translation), q)

    def retract(self, delta):
        """Pose moved by a tangent step ``(w, t, q)``; rotation updated as ``exp(w) R``."""
        delta = np.asarray(delta, dtype=float)
        R = exp_map(delta[:3]) @ self.root.rotation
        return HandPose(RigidTransform(R, self.root.translation + delta[3:6]), self.q + delta[6:])

    @property
    def rotation(self):
        return self.root.rotation

    @property
    def translation(self):
        return self.root.translation


class HandModel:
    """Immutable kinematic tree with collision primitives and keypoints."""

    def __init__(self, name, links, joints, keypoint_defs, fingertip_defs=(), excludes=(),
                 palm_normal=(0.0, 0.0, 1.0)):
        self.name = name
        self.links = tuple(links)
        self.joints = tuple(joints)
        self.keypoint_defs = tuple(keypoint_defs)
        self.fingertip_defs = tuple(fingertip_defs)
        self.excludes = tuple(excludes)
        self.palm_normal = np.array(palm_normal, dtype=float) / np.linalg.norm(palm_normal)
        self._validate()
        self._build_arrays()

    # -- validation -----------------------------------------------------
    def _validate(self):
        if not self.links:
            raise DescriptorError("model has no links")
        names = [ln.name for ln in self.links]
        if len(set(names)) != len(names):
            raise DescriptorError("duplicate link names")
        index = {n: i for i, n in enumerate(names)}
        has_parent = {names[0]}
        seen_joints = set()
        for jt in self.joints:
            if jt.name in seen_joints:
                raise DescriptorError(f"duplicate joint {jt.name!r}")
            seen_joints.add(jt.name)
            for end in (jt.parent, jt.child):
                if end not in index:
                    raise DescriptorError(f"joint {jt.name!r} references unknown link {end!r}")
            if not jt.lower <= jt.upper:
                raise DescriptorError(f"joint {jt.name!r} has upper limit {jt.upper} < lower {jt.lower}")
            if np.linalg.norm(jt.axis) < 1e-12:
                raise DescriptorError(f"joint {jt.name!r} has a zero axis")
            if jt.child in has_parent:
                kind = "cycle through root" if jt.child == names[0] else "second parent (cycle or DAG)"
                raise DescriptorError(f"joint {jt.name!r}: link {jt.child!r} gets a {kind}")
            if jt.parent not in has_parent:
                raise DescriptorError(
                    f"joint {jt.name!r}: parent link {jt.parent!r} is not attached to the root yet")
            has_parent.add(jt.child)
        orphans = [n for n in names if n not in has_parent]
        if orphans:
            raise DescriptorError(f"links not connected to the root: {orphans}")
        for ln in self.links:
            for p in ln.primitives:
                dims = p.half if isinstance(p, Box) else (p.radius, p.half_length)
                if min(dims) <= 0:
                    raise DescriptorError(f"link {ln.name!r} has a primitive with non-positive size")
        if len(self.keypoint_defs) != N_KEYPOINTS:
            raise DescriptorError(f"expected {N_KEYPOINTS} keypoints, got {len(self.keypoint_defs)}")
        for link, _ in tuple(self.keypoint_defs) + tuple(self.fingertip_defs):
            if link not in index:
                raise DescriptorError(f"point attached to unknown link {link!r}")
        for a, b in self.excludes:
            if a not in index or b not in index:
                raise DescriptorError(f"exclude references unknown link ({a!r}, {b!r})")

    def _build_arrays(self):
        names = [ln.name for ln in self.links]
        idx = {n: i for i, n in enumerate(names)}
        self.link_index = idx
        self.n_links = len(names)
        K = len(self.joints)
        self.dof = K
        self.j_parent = np.array([idx[j.parent] for j in self.joints], dtype=np.int64)
        self.j_child = np.array([idx[j.child] for j in self.joints], dtype=np.int64)
        self.j_orig_R = np.array([from_euler(j.rpy, "xyz") for j in self.joints]).reshape(K, 3, 3)
        self.j_orig_p = np.array([j.xyz for j in self.joints], dtype=float).reshape(K, 3)
        ax = np.array([j.axis for j in self.joints], dtype=float).reshape(K, 3)
        self.j_axis = ax / np.linalg.norm(ax, axis=1, keepdims=True)
        self.lower = np.array([j.lower for j in self.joints], dtype=float)
        self.upper = np.array([j.upper for j in self.joints], dtype=float)

        parent_link = np.full(self.n_links, -1, dtype=np.int64)
        parent_joint = np.full(self.n_links, -1, dtype=np.int64)
        for k, j in enumerate(self.joints):
            parent_link[idx[j.child]] = idx[j.parent]
            parent_joint[idx[j.child]] = k
        self.parent_link = parent_link
        anc = np.zeros((self.n_links, K), dtype=np.bool_)
        for li in range(self.n_links):
            cur = li
            while parent_joint[cur] >= 0:
                anc[li, parent_joint[cur]] = True
                cur = parent_link[cur]
        self.anc = anc

        prim_link, prim_type, prim_R, prim_p, prim_param, prim_area = [], [], [], [], [], []
        for li, ln in enumerate(self.links):
            for p in ln.primitives:
                R, c = p.local_frame()
                prim_link.append(li)
                prim_type.append(kernels.BOX if isinstance(p, Box) else kernels.CAPSULE)
                prim_R.append(R)
                prim_p.append(c)
                prim_param.append(p.params())
                prim_area.append(p.area())
        P = len(prim_link)
        self.prim_link = np.array(prim_link, dtype=np.int64)
        self.prim_type = np.array(prim_type, dtype=np.int64)
        self.prim_R = np.array(prim_R, dtype=float).reshape(P, 3, 3)
        self.prim_p = np.array(prim_p, dtype=float).reshape(P, 3)
        self.prim_param = np.array(prim_param, dtype=float).reshape(P, 3)
        self.prim_area = np.array(prim_area, dtype=float)

        self.kp_link = np.array([idx[l] for l, _ in self.keypoint_defs], dtype=np.int64)
        self.kp_local = np.array([o for _, o in self.keypoint_defs], dtype=float).reshape(-1, 3)
        self.tip_link = np.array([idx[l] for l, _ in self.fingertip_defs], dtype=np.int64)
        self.tip_local = np.array([o for _, o in self.fingertip_defs], dtype=float).reshape(-1, 3)
        self.self_pairs = self._collision_pairs()

    def primitive_ancestor(self, li):
        """Nearest strict ancestor link carrying geometry (-1 if none)."""
        cur = self.parent_link[li]
        while cur >= 0 and not self.links[cur].primitives:
            cur = self.parent_link[cur]
        return int(cur)

    def adjacent(self, la, lb):
        if la == lb:
            return True
        if self.primitive_ancestor(la) == lb or self.primitive_ancestor(lb) == la:
            return True
        names = {self.links[la].name, self.links[lb].name}
        return any(names == {a, b} for a, b in self.excludes)

    def _collision_pairs(self):
        pairs = []
        P = len(self.prim_link)
        for i in range(P):
            for j in range(i + 1, P):
                if not self.adjacent(int(self.prim_link[i]), int(self.prim_link[j])):
                    pairs.append((i, j))
        return np.array(pairs, dtype=np.int64).reshape(-1, 2)

    # -- convenience ----------------------------------------------------
    def surface_cloud(self, n=2048, seed=0):
        """Cached body-fixed surface samples ``(links, local_points)``."""
        cache = self.__dict__.setdefault("_cloud_cache", {})
        key = (int(n), seed)
        if key not in cache:
            cache[key] = hand_cloud_local(self, n, seed)
        return cache[key]

    def mid_pose_q(self):
        return 0.5 * (self.lower + self.upper)

    def joint_names(self):
        return [j.name for j in self.joints]

    def __eq__(self, other):
        return isinstance(other, HandModel) and dumps_hand(self) == dumps_hand(other)

    def __hash__(self):
        return hash(dumps_hand(self))

    def __repr__(self):
        return f"HandModel({self.name!r}, links={self.n_links}, dof={self.dof})"


# ---------------------------------------------------------------- parsing


def _vec(text, n=3, what="vector"):
    try:
        v = tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise DescriptorError(f"bad {what} {text!r}") from exc
    if len(v) != n:
        raise DescriptorError(f"{what} {text!r} needs {n} components")
    return v


def _kv(tokens, lineno):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise DescriptorError(f"line {lineno}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def loads_hand(text):
    lines = text.splitlines()
    body = [(i + 1, ln.split("#", 1)[0].strip()) for i, ln in enumerate(lines)]
    body = [(i, ln) for i, ln in body if ln]
    if not body or body[0][1].split() != ["handdesc", "v1"]:
        raise DescriptorError("missing 'handdesc v1' header")
    name = "hand"
    palm_normal = (0.0, 0.0, 1.0)
    links, prims, joints, kps, tips, excl = [], {}, [], [], [], []
    for lineno, ln in body[1:]:
        tok = ln.split()
        kw, rest = tok[0], tok[1:]
        try:
            if kw == "hand":
                name = rest[0]
            elif kw == "palm_normal":
                palm_normal = _vec(rest[0], what="palm_normal")
            elif kw == "link":
                links.append(rest[0])
                prims[rest[0]] = []
            elif kw in ("box", "capsule"):
                if not links:
                    raise DescriptorError(f"line {lineno}: primitive before any link")
                kv = _kv(rest, lineno)
                if kw == "box":
                    p = Box(_vec(kv["center"], what="center"), _vec(kv["rpy"], what="rpy"),
                            _vec(kv["half"], what="half"))
                else:
                    p = Capsule(_vec(kv["a"], what="a"), _vec(kv["b"], what="b"), float(kv["radius"]))
                prims[links[-1]].append(p)
            elif kw == "joint":
                kv = _kv(rest[1:], lineno)
                lo, hi = _vec(kv["limits"], 2, "limits")
                joints.append(Joint(rest[0], kv["parent"], kv["child"], _vec(kv["xyz"], what="xyz"),
                                    _vec(kv["rpy"], what="rpy"), _vec(kv["axis"], what="axis"), lo, hi))
            elif kw in ("keypoint", "fingertip"):
                (kps if kw == "keypoint" else tips).append((rest[0], _vec(rest[1], what=kw)))
            elif kw == "exclude":
                excl.append((rest[0], rest[1]))
            else:
                raise DescriptorError(f"line {lineno}: unknown statement {kw!r}")
        except (KeyError, IndexError) as exc:
            raise DescriptorError(f"line {lineno}: incomplete {kw!r} statement") from exc
    link_objs = [Link(n, tuple(prims[n])) for n in links]
    return HandModel(name, link_objs, joints, kps, tips, excl, palm_normal)


def _fmt(v):
    return ",".join(repr(float(x)) for x in v)


def dumps_hand(model):
    out = ["handdesc v1", f"hand {model.name}", f"palm_normal {_fmt(model.palm_normal)}"]
    for ln in model.links:
        out.append(f"link {ln.name}")
        for p in ln.primitives:
            if isinstance(p, Box):
                out.append(f"box center={_fmt(p.center)} rpy={_fmt(p.rpy)} half={_fmt(p.half)}")
            else:
                out.append(f"capsule a={_fmt(p.a)} b={_fmt(p.b)} radius={float(p.radius)!r}")
    for j in model.joints:
        out.append(f"joint {j.name} parent={j.parent} child={j.child} xyz={_fmt(j.xyz)} "
                   f"rpy={_fmt(j.rpy)} axis={_fmt(j.axis)} limits={_fmt((j.lower, j.upper))}")
    for link, off in model.keypoint_defs:
        out.append(f"keypoint {link} {_fmt(off)}")
    for link, off in model.fingertip_defs:
        out.append(f"fingertip {link} {_fmt(off)}")
    for a, b in model.excludes:
        out.append(f"exclude {a} {b}")
    return "\n".join(out) + "\n"


def load_hand(path):
    return loads_hand(Path(path).read_text())


def save_hand(model, path):
    Path(path).write_text(dumps_hand(model))


_DEFAULT = None


def default_hand():
    """The bundled 22-DoF five-finger hand."""
    global _DEFAULT
    if _DEFAULT is None:
        text = resources.files("dexgrasp").joinpath("data/shadowlite.handdesc").read_text()
        _DEFAULT = loads_hand(text)
    return _DEFAULT


# ---------------------------------------------------------------- kinematics


@dataclass
class Kinematics:
    """Posed hand: link frames, joint axes/origins and world primitive frames."""

    link_R: np.ndarray
    link_p: np.ndarray
    axis_w: np.ndarray
    origin_w: np.ndarray
    prim_R: np.ndarray
    prim_p: np.ndarray
    root_t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def attached(self, links, local):
        """World positions of points given in their link frames."""
        return np.einsum("nij,nj->ni", self.link_R[links], local) + self.link_p[links]


def _check_q(model, pose):
    if pose.q.shape[0] != model.dof:
        raise InvalidInputError(f"pose has {pose.q.shape[0]} joint angles, model needs {model.dof}")


def posed(model, pose):
    _check_q(model, pose)
    R = np.ascontiguousarray(pose.rotation)
    t = np.ascontiguousarray(pose.translation)
    link_R, link_p, axis_w, origin_w = kernels.fk(
        R, t, np.ascontiguousarray(pose.q), model.j_parent, model.j_child,
        model.j_orig_R, model.j_orig_p, model.j_axis, model.n_links)
    prim_R, prim_p = kernels.prim_world(link_R, link_p, model.prim_link, model.prim_R, model.prim_p)
    return Kinematics(link_R, link_p, axis_w, origin_w, prim_R, prim_p, t.copy())


def forward_kinematics(model, pose):
    """World transform of every link, in model link order."""
    kin = posed(model, pose)
    return [RigidTransform(kin.link_R[i], kin.link_p[i]) for i in range(model.n_links)]


def keypoints(model, pose):
    return posed(model, pose).attached(model.kp_link, model.kp_local)


def fingertips(model, pose):
    return posed(model, pose).attached(model.tip_link, model.tip_local)


# ---------------------------------------------------------------- geometry


def _sample_primitive_local(prim_type, param, n, rng):
    if prim_type == kernels.BOX:
        hx, hy, hz = param
        areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
        face = rng.choice(6, size=n, p=areas / areas.sum())
        u = rng.uniform(-1.0, 1.0, size=(n, 3)) * np.array([hx, hy, hz])
        axis = face // 2
        sign = np.where(face % 2 == 0, 1.0, -1.0)
        u[np.arange(n), axis] = sign * np.array([hx, hy, hz])[axis]
        return u
    r, hl = param[0], param[1]
    side = 4.0 * np.pi * r * hl
    caps = 4.0 * np.pi * r * r
    on_side = rng.uniform(size=n) < side / (side + caps)
    out = np.empty((n, 3))
    ang = rng.uniform(0.0, 2.0 * np.pi, size=n)
    z = rng.uniform(-hl, hl, size=n)
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    cap = d * r
    cap[:, 2] += np.where(d[:, 2] >= 0.0, hl, -hl)
    out[:] = cap
    out[on_side] = np.stack([r * np.cos(ang), r * np.sin(ang), z], axis=1)[on_side]
    return out


def hand_cloud_local(model, n, rng_seed):
    """Area-weighted samples of every primitive surface, in link frames.

    Returns ``(links, local_points)``; points stay attached to their link
    when the hand moves.
    """
    rng = np.random.default_rng(rng_seed)
    w = model.prim_area / model.prim_area.sum()
    which = np.sort(rng.choice(len(w), size=n, p=w))
    links = np.empty(n, dtype=np.int64)
    local = np.empty((n, 3))
    for k in range(len(w)):
        m = which == k
        cnt = int(m.sum())
        if cnt == 0:
            continue
        u = _sample_primitive_local(model.prim_type[k], model.prim_param[k], cnt, rng)
        local[m] = u @ model.prim_R[k].T + model.prim_p[k]
        links[m] = model.prim_link[k]
    return links, local


def sample_surface(model, pose, n, rng_seed):
    """``n`` points on the outer surface of the posed hand.

    Samples falling inside another primitive are rejected so every returned
    point has hand SDF ~ 0.
    """
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    kin = posed(model, pose)
    rng = np.random.default_rng(rng_seed)
    kept = []
    total = 0
    while total < n:
        links, local = hand_cloud_local(model, 2 * (n - total) + 16, int(rng.integers(2 ** 63)))
        pts = kin.attached(links, local)
        s = kernels.sdf_points(pts, kin.prim_R, kin.prim_p, model.prim_type, model.prim_param)[0]
        pts = pts[s > -1e-9]
        kept.append(pts)
        total += len(pts)
    pts = np.concatenate(kept)
    # samples come grouped by primitive, so thin uniformly rather than truncate
    keep = np.sort(rng.choice(len(pts), size=n, replace=False))
    return pts[keep]


def hand_sdf_full(model, pose_or_kin, points):
    """SDF, world gradient and owning primitive index for each query point."""
    kin = pose_or_kin if isinstance(pose_or_kin, Kinematics) else posed(model, pose_or_kin)
    pts = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))
    return kernels.sdf_points(pts, kin.prim_R, kin.prim_p, model.prim_type, model.prim_param)


def hand_sdf(model, pose, points):
    """Signed distance (m) from each point to the hand; negative inside."""
    return hand_sdf_full(model, pose, points)[0]


def link_sdf(model, pose, points):
    """(N, n_links) per-link signed distances; +inf for links without geometry."""
    kin = posed(model, pose)
    pts = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))
    out = np.full((pts.shape[0], model.n_links), np.inf)
    for k in range(len(model.prim_link)):
        s = kernels.sdf_points(pts, kin.prim_R[k:k + 1], kin.prim_p[k:k + 1],
                               model.prim_type[k:k + 1], model.prim_param[k:k + 1])[0]
        li = model.prim_link[k]
        out[:, li] = np.minimum(out[:, li], s)
    return out
