"""Grasp energies with analytic gradients.

Gradients are taken w.r.t. the tangent coordinate ``(w, t, q)`` of a pose:
``w`` is a rotation vector applied on the left (``R <- exp(w) R``), ``t`` the
root translation and ``q`` the joint angles, so the gradient has ``6 + K``
entries.

Every term that depends on hand geometry reports, for a set of points fixed
to hand links, the derivative of the energy w.r.t. each point's world
position. :func:`dexgrasp.kernels.accumulate` maps those onto ``(w, t, q)``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import expit

from . import kernels
from .errors import InvalidInputError, UndefinedEnergyError
from .hand import posed
from .scene import DEFAULT_BETA, ContactMap, heat_from_distance

SPEN_THRESHOLD = 0.002
HAND_CLOUD_SIZE = 2048
HAND_CLOUD_SEED = 0
# contact normals are blended over cloud points within this lateral radius (m)
NORMAL_BANDWIDTH = 0.006


@dataclass(frozen=True)
class SynthesisWeights:
    w_dis: float = 100.0
    w_pen: float = 100000.0
    w_tpen: float = 50.0
    w_joints: float = 1.0
    w_spen: float = 10.0

    def __post_init__(self):
        if min(asdict(self).values()) < 0:
            raise InvalidInputError("energy weights must be non-negative")

    def as_terms(self):
        return {"fc": 1.0, "dis": self.w_dis, "pen": self.w_pen, "tpen": self.w_tpen,
                "joints": self.w_joints, "spen": self.w_spen}


@dataclass(frozen=True)
class TtaWeights:
    cmap: float = 0.07
    pen: float = 10000.0
    tpen: float = 1000.0
    spen: float = 10.0
    step_size: float = 0.001

    def __post_init__(self):
        if min(asdict(self).values()) < 0:
            raise InvalidInputError("energy weights must be non-negative")

    def as_terms(self):
        return {"cmap": self.cmap, "pen": self.pen, "tpen": self.tpen, "spen": self.spen}


JOINT_LOSS_WEIGHTS = TtaWeights(cmap=0.02, pen=500.0, tpen=50.0, spen=10.0)


@dataclass
class EnergyReport:
    total: float
    terms: dict
    weights: dict
    grad: np.ndarray = field(repr=False)

    def to_json(self):
        return json.dumps({"total": self.total, "terms": self.terms, "weights": self.weights,
                           "grad": [float(g) for g in self.grad]}, sort_keys=True)


class _Accumulator:
    """Collects per-point energy gradients attached to hand links."""

    def __init__(self, dof):
        self.grads, self.points, self.links = [], [], []
        self.g_q = np.zeros(dof)

    def add(self, grads, points, links, weight=1.0):
        if len(points):
            self.grads.append(weight * grads)
            self.points.append(points)
            self.links.append(links)

    def tangent(self, model, kin):
        if self.points:
            g_w, g_t, g_q = kernels.accumulate(
                np.ascontiguousarray(np.vstack(self.grads)), np.ascontiguousarray(np.vstack(self.points)),
                np.concatenate(self.links).astype(np.int64), kin.root_t, kin.axis_w, kin.origin_w, model.anc)
        else:
            g_w = g_t = np.zeros(3)
            g_q = np.zeros(model.dof)
        return np.concatenate([g_w, g_t, g_q + self.g_q])


# ---------------------------------------------------------------- raw terms


def force_closure(points, inward_normals, center, normal_jacobian=None):
    """``||sum c||^2 + ||sum (x - o) x c||^2`` and its gradient w.r.t. the points.

    ``normal_jacobian`` (M, 3, 3) holds d c / d x when the normals move with
    the points; without it the normals are treated as fixed.
    """
    x = np.asarray(points, dtype=float).reshape(-1, 3)
    c = np.asarray(inward_normals, dtype=float).reshape(-1, 3)
    if x.shape[0] < 2:
        raise UndefinedEnergyError("force-closure energy needs at least 2 contacts")
    arm = x - np.asarray(center, dtype=float)
    force = c.sum(axis=0)
    torque = np.cross(arm, c).sum(axis=0)
    value = float(force @ force + torque @ torque)
    grad = np.cross(c, torque)
    if normal_jacobian is not None:
        v = force[None, :] + np.cross(torque[None, :], arm)
        grad = grad + np.einsum("mab,ma->mb", normal_jacobian, v)
    return value, 2.0 * grad


def e_fc(contacts, center):
    """Force-closure energy of a ContactSet (object-outward normals)."""
    return force_closure(contacts.points, -contacts.normals, center)


def cmap_mse(current, target):
    a = current.heat if isinstance(current, ContactMap) else np.asarray(current, dtype=float)
    b = target.heat if isinstance(target, ContactMap) else np.asarray(target, dtype=float)
    if a.shape != b.shape:
        raise InvalidInputError(f"contact map lengths differ: {a.shape[0]} vs {b.shape[0]}")
    return float(np.mean((a - b) ** 2))


# ---------------------------------------------------------------- per-pose evaluation


def _term_fc(scene, model, kin, acc, w):
    tips = kin.attached(model.tip_link, model.tip_local)
    c, J = kernels.contact_normals(tips, scene.object_points, scene.object_normals, NORMAL_BANDWIDTH)
    value, g = force_closure(tips, c, scene.centroid, J)
    acc.add(g, tips, model.tip_link, w)
    return value


def _term_dis(scene, model, kin, acc, w):
    tips = kin.attached(model.tip_link, model.tip_local)
    d, j = kernels.nearest(tips, scene.object_points)
    diff = tips - scene.object_points[j]
    safe = np.where(d > 0.0, d, 1.0)
    acc.add(diff / safe[:, None], tips, model.tip_link, w)
    return float(d.sum())


def _term_pen(scene, model, kin, acc, w):
    sdf, grad, arg = kernels.sdf_points(scene.object_points, kin.prim_R, kin.prim_p,
                                        model.prim_type, model.prim_param)
    inside = sdf < 0.0
    s = sdf[inside]
    # moving the hand by v changes the sdf at a fixed object point by -grad . v
    acc.add(-2.0 * s[:, None] * grad[inside], scene.object_points[inside], model.prim_link[arg[inside]], w)
    return float(s @ s)


def _term_tpen(scene, model, kin, acc, w):
    links = np.concatenate([model.kp_link, model.tip_link])
    pts = kin.attached(links, np.vstack([model.kp_local, model.tip_local]))
    below = pts[:, 2] < 0.0
    g = np.zeros((int(below.sum()), 3))
    g[:, 2] = -1.0
    acc.add(g, pts[below], links[below], w)
    return float(-pts[below, 2].sum())


def joint_violation(model, q):
    q = np.asarray(q, dtype=float)
    up = q - model.upper
    lo = model.lower - q
    value = float(np.maximum(up, 0.0).sum() + np.maximum(lo, 0.0).sum())
    return value, (up > 0.0).astype(float) - (lo > 0.0).astype(float)


def _term_joints(model, q, acc, w):
    value, g = joint_violation(model, q)
    acc.g_q += w * g
    return value


def _term_spen(model, kin, acc, w, threshold=SPEN_THRESHOLD):
    if model.self_pairs.shape[0] == 0:
        return 0.0
    dist, pa, pb, nrm = kernels.pair_distances(kin.prim_R, kin.prim_p, model.prim_type, model.prim_param,
                                               model.self_pairs, threshold)
    viol = threshold - dist
    act = viol > 0.0
    if not act.any():
        return 0.0
    v = viol[act]
    dd = -2.0 * v[:, None]
    n = nrm[act]
    pairs = model.self_pairs[act]
    # separation changes by -n . v_A(pa) + n . v_B(pb)
    acc.add(-dd * n, pa[act], model.prim_link[pairs[:, 0]], w)
    acc.add(dd * n, pb[act], model.prim_link[pairs[:, 1]], w)
    return float(v @ v)


def _term_cmap(scene, model, kin, acc, w, target, beta, cloud):
    links, local = cloud
    hp = kin.attached(links, local)
    d, j = cKDTree(hp).query(scene.object_points)
    heat = heat_from_distance(d, beta)
    sig, rest = expit(beta * d), 0.5 * heat  # sigmoid and 1 - sigmoid
    tgt = target.heat if isinstance(target, ContactMap) else np.asarray(target, dtype=float)
    if tgt.shape != heat.shape:
        raise InvalidInputError(f"target map has {tgt.shape[0]} entries, scene has {heat.shape[0]} points")
    n = heat.shape[0]
    r = heat - tgt
    dE_dD = (2.0 / n) * r * (-2.0 * beta * sig * rest)
    diff = hp[j] - scene.object_points
    safe = np.where(d > 0.0, d, 1.0)
    acc.add((dE_dD / safe)[:, None] * diff, hp[j], links[j], w)
    return float(r @ r / n)


def evaluate(scene, model, pose, weights, target=None, beta=DEFAULT_BETA, hand_cloud=None,
             spen_threshold=SPEN_THRESHOLD, need_grad=True):
    """Weighted sum of the named terms; ``weights`` maps term name to weight."""
    kin = posed(model, pose)
    acc = _Accumulator(model.dof)
    terms = {}
    for name, w in weights.items():
        if name == "fc":
            terms[name] = _term_fc(scene, model, kin, acc, w)
        elif name == "dis":
            terms[name] = _term_dis(scene, model, kin, acc, w)
        elif name == "pen":
            terms[name] = _term_pen(scene, model, kin, acc, w)
        elif name == "tpen":
            terms[name] = _term_tpen(scene, model, kin, acc, w)
        elif name == "joints":
            terms[name] = _term_joints(model, pose.q, acc, w)
        elif name == "spen":
            terms[name] = _term_spen(model, kin, acc, w, spen_threshold)
        elif name == "cmap":
            if target is None:
                raise InvalidInputError("the contact-map term needs a target map")
            cloud = hand_cloud if hand_cloud is not None else model.surface_cloud(HAND_CLOUD_SIZE, HAND_CLOUD_SEED)
            terms[name] = _term_cmap(scene, model, kin, acc, w, target, beta, cloud)
        else:
            raise InvalidInputError(f"unknown energy term {name!r}")
    total = float(sum(weights[k] * v for k, v in terms.items()))
    grad = acc.tangent(model, kin) if need_grad else np.zeros(6 + model.dof)
    return EnergyReport(total, terms, dict(weights), grad)


def _single(name, scene, model, pose, **kw):
    r = evaluate(scene, model, pose, {name: 1.0}, **kw)
    return r.total, r.grad


def e_dis(scene, model, pose):
    return _single("dis", scene, model, pose)


def e_pen(scene, model, pose):
    return _single("pen", scene, model, pose)


def e_tpen(model, pose, scene=None):
    kin = posed(model, pose)
    acc = _Accumulator(model.dof)
    value = _term_tpen(scene, model, kin, acc, 1.0)
    return value, acc.tangent(model, kin)


def e_joints(model, q):
    value, g = joint_violation(model, q)
    return value, np.concatenate([np.zeros(6), g])


def e_spen(model, pose, threshold=SPEN_THRESHOLD):
    kin = posed(model, pose)
    acc = _Accumulator(model.dof)
    value = _term_spen(model, kin, acc, 1.0, threshold)
    return value, acc.tangent(model, kin)


def e_fc_pose(scene, model, pose):
    """Force-closure energy at the fingertip pads against their nearest object normals."""
    return _single("fc", scene, model, pose)


def e_cmap(scene, model, pose, target, beta=DEFAULT_BETA, hand_cloud=None):
    return _single("cmap", scene, model, pose, target=target, beta=beta, hand_cloud=hand_cloud)


_SYNTH_TERMS = ("fc", "dis", "pen", "tpen", "joints", "spen")


def synthesis_kernel_args(scene, model, weights=SynthesisWeights(), spen_threshold=SPEN_THRESHOLD):
    """Model, scene and weight arguments of the fused kernels, in kernel order after the pose."""
    if model.tip_link.shape[0] < 2:
        raise UndefinedEnergyError("force-closure energy needs at least 2 fingertip contacts")
    wt = weights.as_terms()
    w = np.array([wt[k] for k in _SYNTH_TERMS])
    return (model.j_parent, model.j_child, model.j_orig_R, model.j_orig_p, model.j_axis, model.anc,
            model.prim_link, model.prim_R, model.prim_p, model.prim_type, model.prim_param, model.self_pairs,
            model.kp_link, model.kp_local, model.tip_link, model.tip_local, model.lower, model.upper,
            scene.object_points, scene.object_normals, scene.centroid, w, float(spen_threshold),
            NORMAL_BANDWIDTH)


def synthesis_energy(scene, model, pose, weights=SynthesisWeights(), spen_threshold=SPEN_THRESHOLD):
    """``E_fc + w_dis E_dis + w_pen E_pen + w_tpen E_tpen + w_joints E_joints + w_spen E_spen``.

    Evaluated by one fused kernel; :func:`evaluate` gives the same numbers
    term by term.
    """
    if pose.q.shape[0] != model.dof:
        raise InvalidInputError(f"pose has {pose.q.shape[0]} joint angles, model needs {model.dof}")
    args = synthesis_kernel_args(scene, model, weights, spen_threshold)
    total, terms, grad = kernels.synth_energy(np.ascontiguousarray(pose.rotation),
                                              np.ascontiguousarray(pose.translation), pose.q, *args)
    return EnergyReport(float(total), {k: float(v) for k, v in zip(_SYNTH_TERMS, terms)},
                        weights.as_terms(), grad)


def tta_energy(scene, model, pose, target_map, weights=TtaWeights(), beta=DEFAULT_BETA, hand_cloud=None,
               need_grad=True):
    """Contact-map matching energy used for test-time refinement."""
    return evaluate(scene, model, pose, weights.as_terms(), target=target_map, beta=beta,
                    hand_cloud=hand_cloud, need_grad=need_grad)


def joint_additional_loss(scene, model, pose, target_map, weights=JOINT_LOSS_WEIGHTS, beta=DEFAULT_BETA,
                          hand_cloud=None):
    """The same four terms with the training-time weights."""
    return tta_energy(scene, model, pose, target_map, weights, beta, hand_cloud)


def hand_contact_map(scene, model, pose, beta=DEFAULT_BETA, hand_cloud=None):
    """Contact heat of the object under the posed hand's body-fixed surface samples."""
    links, local = hand_cloud if hand_cloud is not None else model.surface_cloud(HAND_CLOUD_SIZE, HAND_CLOUD_SEED)
    hp = posed(model, pose).attached(links, local)
    d, _ = cKDTree(hp).query(scene.object_points)
    return ContactMap(heat_from_distance(d, beta))
