"""Grasp initialisation, energy-descent synthesis, contact-map refinement and validation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .energies import (HAND_CLOUD_SEED, HAND_CLOUD_SIZE, SynthesisWeights, TtaWeights, synthesis_energy,
                       synthesis_kernel_args, tta_energy)
from .errors import DivergedError, InvalidInputError
from .hand import HandPose
from .quality import FrictionModel, QualityConfig, grasp_wrenches, penetration_depth, resists_all
from .records import TTA_OPTIMIZER, GraspRecord, OptimizerConfig
from .so3 import RigidTransform, rot_z

INIT_RADIUS = (0.2, 0.35)
INIT_JOINT_NOISE = 0.1


@dataclass
class GraspTrajectory:
    energies: np.ndarray
    pose: HandPose
    accepted: int = 0


def _frame_towards(forward, roll):
    """Rotation taking the hand's palm normal (+z) to ``forward``, rolled about it."""
    z = forward / np.linalg.norm(forward)
    a = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = np.cross(a, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    base = np.stack([x, y, z], axis=1)
    return base @ rot_z(roll)


def init_grasp(scene, model, rng_seed=0, yaw=0.0):
    """Random hand above the object with the palm facing its centre.

    The root sits on the upper hemisphere of radius 0.2-0.35 m around the
    bounding-sphere centre (above the object top), the palm normal points at the
    centre with a random roll, and joints are at mid-range plus small noise.
    ``yaw`` rotates the sampling frame about the world z axis.
    """
    rng = np.random.default_rng(rng_seed)
    center = scene.bounding_center
    top = scene.top
    Rz = rot_z(yaw)
    for _ in range(1000):
        d = rng.standard_normal(3)
        d[2] = abs(d[2])
        d /= np.linalg.norm(d)
        r = rng.uniform(*INIT_RADIUS)
        root = center + r * (Rz @ d)
        if root[2] > top:
            break
    roll = rng.uniform(-np.pi, np.pi)
    noise = rng.uniform(-INIT_JOINT_NOISE, INIT_JOINT_NOISE, model.dof)
    # built in the unrotated sampling frame, then yawed, so the init is SO(2)-equivariant
    R = Rz @ _frame_towards(-d, roll) @ _palm_to_z(model.palm_normal)
    q = np.clip(model.mid_pose_q() + noise, model.lower, model.upper)
    return HandPose(RigidTransform(R, root), q)


def _palm_to_z(n):
    # rotation taking the model's palm normal onto +z
    z = np.array([0.0, 0.0, 1.0])
    v = np.cross(n, z)
    s, c = np.linalg.norm(v), float(n @ z)
    if s < 1e-12:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    k = v / s
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    ang = np.arctan2(s, c)
    return np.eye(3) + np.sin(ang) * K + (1 - np.cos(ang)) * K @ K


def _preconditioner(model, config):
    return np.concatenate([np.full(3, config.rotation_step), np.full(3, config.translation_step),
                           np.full(model.dof, config.joint_step)])


def _project(model, pose):
    q = np.clip(pose.q, model.lower, model.upper)
    return pose if np.array_equal(q, pose.q) else HandPose(pose.root, q)


def descend(energy_fn, model, pose, config, project=True):
    """Preconditioned descent on the pose tangent; returns a :class:`GraspTrajectory`.

    ``energy_fn(pose)`` returns ``(energy, gradient)``. With line search the
    step is backtracked until the energy does not increase, so the trajectory
    is non-increasing. With ``config.langevin`` Gaussian noise is added and
    the move accepted by a Metropolis test at an annealed temperature.
    """
    D = _preconditioner(model, config)
    rng = np.random.default_rng(config.seed)
    energies = np.empty(config.steps + 1)
    e, g = energy_fn(pose)
    if not np.isfinite(e):
        raise DivergedError(0)
    energies[0] = e
    alpha = config.step_size
    temp = config.temperature
    accepted = 0
    for step in range(1, config.steps + 1):
        if config.langevin:
            noise = np.sqrt(2.0 * alpha * D * temp) * config.noise_scale * rng.standard_normal(D.shape[0])
            cand = pose.retract(-alpha * D * g + noise)
            cand = _project(model, cand) if project else cand
            e_new, g_new = energy_fn(cand)
            if not np.isfinite(e_new):
                raise DivergedError(step)
            if e_new <= e or rng.random() < np.exp(-(e_new - e) / max(temp, 1e-300)):
                pose, e, g = cand, e_new, g_new
                accepted += 1
            temp *= config.anneal
        elif config.line_search:
            a = alpha
            for _ in range(config.max_backtracks + 1):
                cand = pose.retract(-a * D * g)
                cand = _project(model, cand) if project else cand
                e_new, g_new = energy_fn(cand)
                if not np.isfinite(e_new):
                    raise DivergedError(step)
                if e_new <= e:
                    pose, e, g = cand, e_new, g_new
                    accepted += 1
                    alpha = a * config.growth
                    break
                a *= 0.5
            else:
                alpha = max(a, 1e-12)
        else:
            pose = pose.retract(-alpha * D * g)
            pose = _project(model, pose) if project else pose
            e, g = energy_fn(pose)
            if not np.isfinite(e):
                raise DivergedError(step)
            accepted += 1
        energies[step] = e
    return GraspTrajectory(energies, pose, accepted)


def synthesize(scene, model, weights=SynthesisWeights(), config=OptimizerConfig(), init=None, yaw=0.0,
               config_hash=""):
    """Optimise a random initial grasp into a low-energy grasp of ``scene``."""
    pose = init if init is not None else init_grasp(scene, model, config.seed, yaw)
    if pose.q.shape[0] != model.dof:
        raise InvalidInputError(f"pose has {pose.q.shape[0]} joint angles, model needs {model.dof}")
    if config.line_search and not config.langevin:
        # whole loop inside the kernel module; same schedule as descend()
        energies, R, t, q, accepted, bad = kernels.synth_descend(
            np.ascontiguousarray(pose.rotation), np.ascontiguousarray(pose.translation), pose.q.copy(),
            *synthesis_kernel_args(scene, model, weights), _preconditioner(model, config), config.steps,
            config.step_size, config.growth, config.max_backtracks)
        if bad >= 0:
            raise DivergedError(bad)
        traj = GraspTrajectory(energies, HandPose(RigidTransform(R, t), q), accepted)
    else:
        def energy_fn(p):
            rep = synthesis_energy(scene, model, p, weights)
            return rep.total, rep.grad

        traj = descend(energy_fn, model, pose, config)
    final = synthesis_energy(scene, model, traj.pose, weights)
    metrics = {"energy": final.total}
    metrics.update({f"e_{k}": v for k, v in final.terms.items()})
    return GraspRecord(scene.object_id, scene.scale, scene.object_pose, traj.pose, metrics, config.seed,
                       config_hash, trajectory=traj)


def tta_refine(scene, model, pose, target_map, weights=TtaWeights(), config=TTA_OPTIMIZER, hand_cloud=None,
               return_trajectory=False):
    """Refine ``pose`` towards a fixed target contact map.

    Steps are plain gradient steps of length ``config.step_size`` scaled per
    block, taken with the Adam moment normalisation so that the very
    different term weights do not need a hand-tuned step.
    """
    heat = np.asarray(getattr(target_map, "heat", target_map), dtype=float)
    if heat.shape[0] != scene.object_points.shape[0]:
        raise InvalidInputError("target map length must match the object point count")
    cloud = hand_cloud if hand_cloud is not None else model.surface_cloud(HAND_CLOUD_SIZE, HAND_CLOUD_SEED)

    def energy_fn(p):
        rep = tta_energy(scene, model, p, heat, weights, hand_cloud=cloud)
        return rep.total, rep.grad

    b1, b2, eps = 0.9, 0.999, 1e-12
    lr = weights.step_size if config is TTA_OPTIMIZER else config.step_size
    m = np.zeros(6 + model.dof)
    v = np.zeros(6 + model.dof)
    energies = np.empty(config.steps + 1)
    e, g = energy_fn(pose)
    if not np.isfinite(e):
        raise DivergedError(0)
    energies[0] = e
    for step in range(1, config.steps + 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** step)
        vh = v / (1 - b2 ** step)
        delta = -lr * mh / (np.sqrt(vh) + eps)
        if np.any(delta):
            pose = pose.retract(delta)
        e, g = energy_fn(pose)
        if not np.isfinite(e):
            raise DivergedError(step)
        energies[step] = e
    traj = GraspTrajectory(energies, pose, config.steps)
    return (pose, traj) if return_trajectory else pose


@dataclass
class ValidationResult:
    passed: bool
    penetration: float
    penetration_ok: bool
    stable: bool
    contacts: int


def validate(scene, model, record, config=QualityConfig(), friction=FrictionModel()):
    """Keep grasps that penetrate at most ``max_penetration`` and resist gravity in 6 directions."""
    pose = record.hand_pose if isinstance(record, GraspRecord) else record
    pen = penetration_depth(scene, model, pose)
    ws, contacts = grasp_wrenches(scene, model, pose, config, friction)
    stable = bool(resists_all(ws.wrenches, config.mass))
    ok = pen <= config.max_penetration
    return ValidationResult(bool(ok and stable), pen, bool(ok), stable, len(contacts))
