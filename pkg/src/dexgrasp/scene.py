"""Table-top scenes, point-cloud canonicalization, contact heat and contact extraction.

The table is the plane z = 0 with free space above it. Object points are
stored in world coordinates together with outward unit normals.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import expit

from . import kernels
from .errors import InvalidInputError, SchemaError
from .hand import hand_sdf_full, posed
from .so3 import RigidTransform

DEFAULT_BETA = 60.0
DEFAULT_CONTACT_TOLERANCE = 0.01
SIDECAR_VERSION = 1


@dataclass(frozen=True)
class Scene:
    object_points: np.ndarray
    object_normals: np.ndarray
    object_pose: RigidTransform = field(default_factory=RigidTransform.identity)
    object_id: str = "object"
    scale: float = 1.0

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.object_points, dtype=float).reshape(-1, 3))
        nrm = np.ascontiguousarray(np.asarray(self.object_normals, dtype=float).reshape(-1, 3))
        if pts.shape[0] < 1:
            raise InvalidInputError("scene needs at least one object point")
        if nrm.shape != pts.shape:
            raise InvalidInputError("object normals must match object points")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(nrm))):
            raise InvalidInputError("object points and normals must be finite")
        if np.abs(np.linalg.norm(nrm, axis=1) - 1.0).max() > 1e-6:
            raise InvalidInputError("object normals must be unit length")
        object.__setattr__(self, "object_points", pts)
        object.__setattr__(self, "object_normals", nrm)

    @property
    def centroid(self):
        c = self.__dict__.get("_centroid")
        if c is None:
            c = self.object_points.mean(axis=0)
            object.__setattr__(self, "_centroid", c)
        return c

    @property
    def bounding_sphere(self):
        """``(center, radius)`` of an enclosing sphere; rotates with the object."""
        bs = self.__dict__.get("_bsphere")
        if bs is None:
            bs = enclosing_sphere(self.object_points)
            object.__setattr__(self, "_bsphere", bs)
        return bs

    @property
    def bounding_center(self):
        return self.bounding_sphere[0]

    @property
    def bounding_radius(self):
        return self.bounding_sphere[1]

    @property
    def top(self):
        return float(self.object_points[:, 2].max())

    def transformed(self, T):
        """The scene moved rigidly by ``T`` (points, normals and pose)."""
        return Scene(T.apply(self.object_points), self.object_normals @ T.rotation.T,
                     T @ self.object_pose, self.object_id, self.scale)


@dataclass(frozen=True)
class ContactMap:
    heat: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.heat, dtype=float).reshape(-1)
        if np.any(h < 0.0) or np.any(h > 1.0) or not np.all(np.isfinite(h)):
            raise InvalidInputError("contact heat must lie in [0, 1]")
        object.__setattr__(self, "heat", h)

    def __len__(self):
        return self.heat.shape[0]


@dataclass(frozen=True)
class ContactSet:
    points: np.ndarray
    normals: np.ndarray
    links: np.ndarray = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        nrm = np.asarray(self.normals, dtype=float).reshape(-1, 3)
        if nrm.shape != pts.shape:
            raise InvalidInputError("contact normals must match contact points")
        if len(nrm) and np.abs(np.linalg.norm(nrm, axis=1) - 1.0).max() > 1e-6:
            raise InvalidInputError("contact normals must be unit length")
        links = np.full(len(pts), -1, dtype=np.int64) if self.links is None else np.asarray(self.links, np.int64)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "normals", nrm)
        object.__setattr__(self, "links", links)

    def __len__(self):
        return self.points.shape[0]

    def __add__(self, other):
        return ContactSet(np.vstack([self.points, other.points]), np.vstack([self.normals, other.normals]),
                          np.concatenate([self.links, other.links]))


# ---------------------------------------------------------------- builders


def enclosing_sphere(points):
    """Ritter's enclosing sphere: within a few percent of the minimal one.

    Only distances and the point order enter, so rigidly moving the cloud
    moves the sphere with it.
    """
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    a = p[np.argmax(np.linalg.norm(p - p[0], axis=1))]
    b = p[np.argmax(np.linalg.norm(p - a, axis=1))]
    c, r = 0.5 * (a + b), 0.5 * float(np.linalg.norm(b - a))
    for x in p:
        d = float(np.linalg.norm(x - c))
        if d > r:
            r_new = 0.5 * (r + d)
            c = c + (d - r_new) / d * (x - c)
            r = r_new
    return c, r




def _fibonacci_sphere(n):
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def sphere_scene(radius=0.04, n=2048, object_id="sphere"):
    """Sphere of ``radius`` resting on the table, evenly sampled."""
    nrm = _fibonacci_sphere(n)
    center = np.array([0.0, 0.0, radius])
    return Scene(center + radius * nrm, nrm, RigidTransform(np.eye(3), center), object_id, 2.0 * radius)


def box_scene(scale=0.08, n=2048, object_id="cube", extents=None):
    """Box resting on the table; ``extents`` defaults to a cube of side ``scale``."""
    ext = np.full(3, float(scale)) if extents is None else np.asarray(extents, dtype=float)
    half = 0.5 * ext
    areas = np.array([ext[1] * ext[2], ext[0] * ext[2], ext[0] * ext[1]])
    per_face = n * np.repeat(areas, 2) / (2.0 * areas.sum())
    counts = np.floor(per_face).astype(int)
    counts[np.argsort(-(per_face - counts))[: n - counts.sum()]] += 1
    pts, nrm = [], []
    for f, cnt in enumerate(counts):
        axis, sign = f // 2, (1.0 if f % 2 == 0 else -1.0)
        u, v = [a for a in range(3) if a != axis]
        # near-square lattice on the face, cell-centred so no point sits on an edge
        ratio = ext[u] / ext[v]
        nu = max(1, int(round(np.sqrt(cnt * ratio))))
        nv = int(np.ceil(cnt / nu))
        gu, gv = np.meshgrid((np.arange(nu) + 0.5) / nu, (np.arange(nv) + 0.5) / nv, indexing="ij")
        grid = np.stack([gu.ravel(), gv.ravel()], axis=1)[:cnt]
        p = np.zeros((cnt, 3))
        p[:, axis] = sign * half[axis]
        p[:, u] = (grid[:, 0] - 0.5) * ext[u]
        p[:, v] = (grid[:, 1] - 0.5) * ext[v]
        d = np.zeros((cnt, 3))
        d[:, axis] = sign
        pts.append(p)
        nrm.append(d)
    center = np.array([0.0, 0.0, half[2]])
    return Scene(np.vstack(pts) + center, np.vstack(nrm), RigidTransform(np.eye(3), center), object_id, float(scale))


def rest_on_table(points, normals, rotation=np.eye(3), object_id="object", scale=1.0):
    """Rotate a local-frame object cloud and drop it so it rests on z = 0.

    A quasi-static stand-in for dropping the object onto the table: the cloud
    is centred in x, y and lifted so its lowest point touches the plane.
    """
    R = np.asarray(rotation, dtype=float)
    p = np.asarray(points, dtype=float) @ R.T
    lo, hi = p.min(axis=0), p.max(axis=0)
    shift = np.array([-0.5 * (lo[0] + hi[0]), -0.5 * (lo[1] + hi[1]), -lo[2]])
    return Scene(p + shift, np.asarray(normals, dtype=float) @ R.T, RigidTransform(R, shift), object_id, scale)


def estimate_normals(points, k=16):
    """Unit normals from a 16-NN plane fit, oriented away from the centroid."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] < 3:
        raise InvalidInputError("need at least 3 points to estimate normals")
    k = min(k, pts.shape[0])
    _, idx = cKDTree(pts).query(pts, k=k)
    nb = pts[idx] - pts[idx].mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", nb, nb)
    _, vecs = np.linalg.eigh(cov)
    n = vecs[:, :, 0]
    flip = np.einsum("ni,ni->n", n, pts - pts.mean(axis=0)) < 0.0
    n[flip] *= -1.0
    return n / np.linalg.norm(n, axis=1, keepdims=True)


# ---------------------------------------------------------------- operations


def canonicalize(points, r):
    """Express points in the frame of rotation ``r``: each x becomes r^-1 x."""
    return np.asarray(points, dtype=float) @ np.asarray(r, dtype=float)


def heat_from_distance(d, beta=DEFAULT_BETA):
    # 2 - 2 sigmoid(x) == 2 sigmoid(-x), which keeps the far tail from cancelling to 0
    return 2.0 * expit(-beta * np.asarray(d, dtype=float))


def contact_heat(object_points, hand_points, beta=DEFAULT_BETA):
    """Per-object-point heat ``2 - 2 sigmoid(beta * D)``, D = distance to the hand cloud."""
    obj = np.asarray(object_points, dtype=float).reshape(-1, 3)
    hp = np.asarray(hand_points, dtype=float).reshape(-1, 3)
    if obj.shape[0] == 0 or hp.shape[0] == 0:
        raise InvalidInputError("contact heat needs non-empty object and hand clouds")
    if not beta > 0:
        raise InvalidInputError("beta must be positive")
    d, _ = cKDTree(hp).query(obj)
    return ContactMap(heat_from_distance(d, beta))


def contact_candidates(scene, model, pose, tolerance=DEFAULT_CONTACT_TOLERANCE):
    """Object point indices with |hand_sdf| <= tolerance, their sdf and owning link."""
    if not tolerance > 0:
        raise InvalidInputError("tolerance must be positive")
    sdf, _, arg = hand_sdf_full(model, posed(model, pose), scene.object_points)
    idx = np.nonzero(np.abs(sdf) <= tolerance)[0]
    return idx, sdf[idx], model.prim_link[arg[idx]]


def extract_contacts(scene, model, pose, tolerance=DEFAULT_CONTACT_TOLERANCE, dedup=True):
    """Contacts for wrench analysis, at most one per hand link (the closest)."""
    idx, sdf, links = contact_candidates(scene, model, pose, tolerance)
    if dedup and idx.size:
        keep = []
        for li in np.unique(links):
            m = np.nonzero(links == li)[0]
            keep.append(m[np.argmin(np.abs(sdf[m]))])
        keep = np.array(keep, dtype=np.int64)
        idx, links = idx[keep], links[keep]
    return ContactSet(scene.object_points[idx], scene.object_normals[idx], links)


# ---------------------------------------------------------------- I/O


def write_ply(path, points, normals=None):
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    head = ["ply", "format ascii 1.0", f"element vertex {pts.shape[0]}",
            "property double x", "property double y", "property double z"]
    cols = [pts]
    if normals is not None:
        head += ["property double nx", "property double ny", "property double nz"]
        cols.append(np.asarray(normals, dtype=float).reshape(-1, 3))
    head.append("end_header")
    data = np.hstack(cols)
    lines = head + [" ".join(repr(float(v)) for v in row) for row in data]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path):
    """ASCII PLY vertices; returns ``(points, normals or None)``."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise SchemaError(f"{path}: not a PLY file")
    props, n, body, in_vertex = [], None, None, False
    for i, ln in enumerate(lines[1:], start=1):
        tok = ln.split()
        if not tok:
            continue
        if tok[0] == "format" and tok[1] != "ascii":
            raise SchemaError(f"{path}: only ASCII PLY is supported")
        if tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                n = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            body = i + 1
            break
    if n is None or body is None:
        raise SchemaError(f"{path}: malformed PLY header")
    data = np.array([[float(v) for v in ln.split()[: len(props)]] for ln in lines[body:body + n]]).reshape(n, -1)
    col = {p: k for k, p in enumerate(props)}
    pts = data[:, [col["x"], col["y"], col["z"]]]
    nrm = data[:, [col["nx"], col["ny"], col["nz"]]] if "nx" in col else None
    return pts, nrm


def save_scene(scene, path, extra=None):
    """Write ``<path>`` (PLY) plus ``<path>.json`` with pose, id, scale and any ``extra`` keys."""
    path = Path(path)
    write_ply(path, scene.object_points, scene.object_normals)
    side = {"version": SIDECAR_VERSION, "object_id": scene.object_id, "scale": scene.scale,
            "rotation": scene.object_pose.rotation.tolist(),
            "translation": scene.object_pose.translation.tolist(), **(extra or {})}
    path.with_name(path.name + ".json").write_text(json.dumps(side, indent=1, sort_keys=True) + "\n")


def load_scene(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"scene file not found: {path}")
    pts, nrm = read_ply(path)
    if nrm is None:
        nrm = estimate_normals(pts)
    side_path = path.with_name(path.name + ".json")
    pose, oid, scale = RigidTransform.identity(), path.stem, 1.0
    if side_path.exists():
        side = json.loads(side_path.read_text())
        if int(side.get("version", 1)) > SIDECAR_VERSION:
            raise SchemaError(f"{side_path}: sidecar version {side['version']} is newer than supported")
        pose = RigidTransform(np.array(side["rotation"]), np.array(side["translation"]))
        oid, scale = side.get("object_id", oid), float(side.get("scale", scale))
    nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
    return Scene(pts, nrm, pose, oid, scale)


def nearest_object_points(scene, queries):
    """Distance and index of the nearest object point for each query."""
    return kernels.nearest(np.ascontiguousarray(queries, dtype=float), scene.object_points)
