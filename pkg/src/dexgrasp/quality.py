"""Wrench-space grasp quality, quasi-static gravity resistance and penetration depth."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .errors import IndeterminateError, InvalidInputError
from .hand import posed
from .lp import INFEASIBLE, OPTIMAL, UNBOUNDED, linprog_max
from .scene import extract_contacts

GRAVITY = 9.81
AXIS_DIRECTIONS = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, -1.0, 0], [0, 0, 1.0], [0, 0, -1.0]])


@dataclass(frozen=True)
class FrictionModel:
    mu: float = 0.5
    cone_edges: int = 8

    def __post_init__(self):
        if not self.mu > 0:
            raise InvalidInputError("friction coefficient must be positive")
        if self.cone_edges < 3:
            raise InvalidInputError("friction cone needs at least 3 edges")


@dataclass(frozen=True)
class QualityConfig:
    contact_tolerance: float = 0.01
    invalid_table_pen: float = 0.01
    invalid_obj_pen: float = 0.005
    q1_directions: int = 4096
    torque_scale: float = None
    direction_seed: int = 0
    refine_starts: int = 8
    max_penetration: float = 0.001
    mass: float = 0.1

    def __post_init__(self):
        vals = [self.contact_tolerance, self.invalid_table_pen, self.invalid_obj_pen, self.q1_directions,
                self.max_penetration, self.mass]
        if self.torque_scale is not None:
            vals.append(self.torque_scale)
        if min(vals) <= 0:
            raise InvalidInputError("quality settings must be positive")


@dataclass(frozen=True)
class WrenchSet:
    wrenches: np.ndarray

    def __len__(self):
        return self.wrenches.shape[0]


def _tangent_basis(n):
    a = np.where(np.abs(n[:, :1]) < 0.9, np.array([[1.0, 0.0, 0.0]]), np.array([[0.0, 1.0, 0.0]]))
    t1 = np.cross(n, a)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    return t1, np.cross(n, t1)


def cone_edges(inward_normals, friction):
    """(M, m, 3) unit edge forces of the linearised friction cones."""
    n = np.asarray(inward_normals, dtype=float).reshape(-1, 3)
    t1, t2 = _tangent_basis(n)
    ang = 2.0 * np.pi * np.arange(friction.cone_edges) / friction.cone_edges
    f = (n[:, None, :] + friction.mu * (np.cos(ang)[None, :, None] * t1[:, None, :]
                                        + np.sin(ang)[None, :, None] * t2[:, None, :]))
    return f / np.linalg.norm(f, axis=2, keepdims=True)


def build_wrenches(contacts, friction=FrictionModel(), center=np.zeros(3), torque_scale=1.0):
    """Contact wrenches ``(f, rho (x - center) x f)`` for every cone edge."""
    if len(contacts) == 0:
        return WrenchSet(np.zeros((0, 6)))
    f = cone_edges(-contacts.normals, friction)
    arm = contacts.points - np.asarray(center, dtype=float)
    tau = torque_scale * np.cross(arm[:, None, :], f)
    return WrenchSet(np.concatenate([f, tau], axis=2).reshape(-1, 6))


# ---------------------------------------------------------------- Q1


def directions(n, seed=0):
    """Unit directions in R^6; the first k of n are the same set for any n >= k."""
    d = np.random.default_rng(seed).standard_normal((n, 6))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def origin_interior(W, tol=1e-9):
    """True iff the origin lies strictly inside conv(W) in R^6.

    Solves ``max s`` over ``lambda = mu + s >= 0`` with ``W lambda = 0``,
    ``sum lambda = 1``; the origin is interior iff W has rank 6 and s > 0.
    """
    W = np.asarray(W, dtype=float)
    if W.shape[0] < 7 or np.linalg.matrix_rank(W, tol=1e-10 * max(1.0, np.abs(W).max())) < 6:
        return False
    n = W.shape[0]
    A = np.zeros((7, n + 1))
    A[:6, :n] = W.T
    A[:6, n] = W.sum(axis=0)
    A[6, :n] = 1.0
    A[6, n] = n
    b = np.zeros(7)
    b[6] = 1.0
    c = np.zeros(n + 1)
    c[n] = 1.0
    res = linprog_max(c, A, b)
    return res.status == OPTIMAL and res.value > tol


def support_min(W, dirs, chunk=65536):
    """min over directions d of max over wrenches w of d.w, and the minimising d."""
    W = np.asarray(W, dtype=float)
    best, arg = np.inf, None
    for s in range(0, dirs.shape[0], chunk):
        h = (dirs[s:s + chunk] @ W.T).max(axis=1)
        k = int(np.argmin(h))
        if h[k] < best:
            best, arg = float(h[k]), dirs[s + k]
    return best, arg


def facet_distance(W, d):
    """Boundary point of conv(W) along ray d: facet normal and its distance to the origin."""
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    A = np.zeros((7, n + 1))
    A[:6, :n] = W.T
    A[:6, n] = -d
    A[6, :n] = 1.0
    b = np.zeros(7)
    b[6] = 1.0
    c = np.zeros(n + 1)
    c[n] = 1.0
    res = linprog_max(c, A, b)
    if res.status != OPTIMAL:
        raise IndeterminateError(f"ray-shooting LP ended {res.status}")
    a = -res.duals[:6]
    off = res.duals[6]
    na = np.linalg.norm(a)
    if na == 0.0:
        raise IndeterminateError("degenerate supporting hyperplane")
    return a / na, off / na


def refine_q1(W, start, max_iter=50):
    """Walk from ``start`` to a nearby closest facet of conv(W)."""
    d = np.asarray(start, dtype=float)
    d = d / np.linalg.norm(d)
    best = np.inf
    for _ in range(max_iter):
        normal, dist = facet_distance(W, d)
        if dist >= best - 1e-13 * max(1.0, best):
            break
        best = dist
        d = normal
    return best


def q1_from_wrenches(W, n_dirs=4096, seed=0, refine_starts=8):
    """Inscribed-ball radius of conv(W) at the origin, 0 if the origin is not interior.

    The support function is sampled over ``n_dirs`` directions; the
    ``refine_starts`` best directions are then walked to their closest facet
    with ray-shooting LPs, which turns the sampled upper bound into the exact
    facet distance in the usual case.
    """
    W = np.asarray(W, dtype=float).reshape(-1, 6)
    if W.shape[0] == 0 or not origin_interior(W):
        return 0.0
    dirs = directions(n_dirs, seed)
    h = (dirs @ W.T).max(axis=1)
    value = float(h.min())
    if refine_starts > 0:
        for k in np.argsort(h, kind="stable")[:refine_starts]:
            value = min(value, refine_q1(W, dirs[k]))
    return max(value, 0.0)


def exact_q1(W):
    """Inradius from a full convex hull (scipy/qhull); reference for small sets."""
    from scipy.spatial import ConvexHull

    W = np.asarray(W, dtype=float).reshape(-1, 6)
    if W.shape[0] == 0 or not origin_interior(W):
        return 0.0
    hull = ConvexHull(W)
    return float(max(0.0, (-hull.equations[:, -1]).min()))


# ---------------------------------------------------------------- penetration


def penetration_depth(scene, model, pose):
    """Deepest object point inside the hand (m), 0 when separated."""
    kin = posed(model, pose)
    sdf = kernels.sdf_points(scene.object_points, kin.prim_R, kin.prim_p, model.prim_type, model.prim_param)[0]
    return float(max(0.0, -sdf.min()))


def table_penetration(model, pose):
    """Depth of the lowest hand surface point below the table plane (m)."""
    kin = posed(model, pose)
    low = np.inf
    for k in range(len(model.prim_type)):
        R, c, prm = kin.prim_R[k], kin.prim_p[k], model.prim_param[k]
        if model.prim_type[k] == kernels.BOX:
            z = c[2] - np.abs(R[2]) @ prm
        else:
            z = c[2] - abs(R[2, 2]) * prm[1] - prm[0]
        low = min(low, z)
    return float(max(0.0, -low))


def torque_scale_for(scene, config):
    return config.torque_scale if config.torque_scale is not None else 1.0 / scene.bounding_radius


def grasp_wrenches(scene, model, pose, config=QualityConfig(), friction=FrictionModel()):
    contacts = extract_contacts(scene, model, pose, config.contact_tolerance)
    return build_wrenches(contacts, friction, scene.centroid, torque_scale_for(scene, config)), contacts


def q1(scene, model, pose, config=QualityConfig(), friction=FrictionModel()):
    """Relaxed epsilon quality; forced to 0 for grasps that penetrate too far."""
    if penetration_depth(scene, model, pose) > config.invalid_obj_pen:
        return 0.0
    if table_penetration(model, pose) > config.invalid_table_pen:
        return 0.0
    ws, _ = grasp_wrenches(scene, model, pose, config, friction)
    return q1_from_wrenches(ws.wrenches, config.q1_directions, config.direction_seed, config.refine_starts)


# ---------------------------------------------------------------- stability


def resists(W, direction, mass=0.1, g=GRAVITY):
    """Can non-negative edge forces cancel gravity ``mass g direction``?"""
    W = np.asarray(W, dtype=float).reshape(-1, 6)
    if W.shape[0] == 0:
        return False
    target = np.zeros(6)
    target[:3] = -mass * g * np.asarray(direction, dtype=float)
    res = linprog_max(np.zeros(W.shape[0]), W.T, target)
    if res.status not in (OPTIMAL, INFEASIBLE, UNBOUNDED):
        raise IndeterminateError(f"unexpected LP status {res.status}")
    return res.status == OPTIMAL


def resists_all(W, mass=0.1, g=GRAVITY, directions=AXIS_DIRECTIONS):
    return all(resists(W, d, mass, g) for d in directions)


def gravity_resistance(scene, model, pose, friction=FrictionModel(), mass=0.1, config=QualityConfig(),
                       directions=AXIS_DIRECTIONS):
    """Quasi-static check that contacts can hold the object against gravity along each direction."""
    ws, _ = grasp_wrenches(scene, model, pose, config, friction)
    return resists_all(ws.wrenches, mass, GRAVITY, directions)


@dataclass
class QualityReport:
    q1: float
    penetration: float
    table_penetration: float
    stable: bool
    mu: float
    m: int
    rho: float
    contacts: int

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


def evaluate_grasp(scene, model, pose, config=QualityConfig(), friction=FrictionModel()):
    pen = penetration_depth(scene, model, pose)
    tpen = table_penetration(model, pose)
    ws, contacts = grasp_wrenches(scene, model, pose, config, friction)
    invalid = pen > config.invalid_obj_pen or tpen > config.invalid_table_pen
    value = 0.0 if invalid else q1_from_wrenches(ws.wrenches, config.q1_directions, config.direction_seed,
                                                 config.refine_starts)
    stable = resists_all(ws.wrenches, config.mass)
    return QualityReport(value, pen, tpen, bool(stable), friction.mu, friction.cone_edges,
                         torque_scale_for(scene, config), len(contacts))

