"""Yaw canonicalisation of rollout states and the goal-conditioned lifting reward."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import InvalidInputError
from .hand import HandPose
from .records import RewardSettings
from .so3 import RigidTransform, rot_x, rot_z


@dataclass(frozen=True)
class CanonicalFrame:
    """Static frame at the initial hand position ``(0, 0, h0)`` rotated by ``yaw`` about z."""

    height: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.height) and np.isfinite(self.yaw)):
            raise InvalidInputError("frame height and yaw must be finite")

    @property
    def origin(self):
        return np.array([0.0, 0.0, self.height])

    @property
    def rotation(self):
        return rot_z(self.yaw)

    def to_local(self):
        """World-to-frame transform."""
        return RigidTransform(self.rotation, self.origin).inverse()


def initial_hand_rotation(yaw):
    """Hand root orientation at reset: palm rotated by pi/2 about x, then by ``yaw`` about z."""
    return rot_z(yaw) @ rot_x(np.pi / 2)


@dataclass(frozen=True)
class RewardWeights:
    w_gq: float = 0.1
    w_gt: float = 0.6
    w_gR: float = 0.1
    w_r: float = 0.5
    w_l: float = 0.1
    w_m: float = 2.0
    w_b: float = 10.0
    lambda_f1: float = 0.05
    lambda_f2: float = 0.25
    lambda_0: float = 0.02
    keypoint_weights: tuple = None  # None: uniform 1/J

    def __post_init__(self):
        vals = [v for k, v in asdict(self).items() if k != "keypoint_weights"]
        if self.keypoint_weights is not None:
            vals += list(self.keypoint_weights)
        if min(vals) < 0:
            raise InvalidInputError("reward weights and thresholds must be non-negative")

    @classmethod
    def from_settings(cls, s: RewardSettings):
        return cls(**asdict(s))

    def joint_weights(self, n):
        if self.keypoint_weights is None:
            return np.full(n, 1.0 / n)
        w = np.asarray(self.keypoint_weights, dtype=float)
        if w.shape != (n,):
            raise InvalidInputError(f"expected {n} keypoint weights, got {w.shape[0]}")
        return w


@dataclass(frozen=True)
class RolloutState:
    """One simulator step; world-frame unless canonicalised.

    ``goal`` is the goal root pose and joint angles in the object frame and
    ``goal_keypoints`` the goal keypoints in the object frame. ``a_z`` is the
    normalised lift action in [-1, 1].
    """

    hand: HandPose
    fingertips: np.ndarray
    keypoints: np.ndarray
    object_pos: np.ndarray
    object_rot: np.ndarray
    target_pos: np.ndarray
    goal: HandPose
    goal_keypoints: np.ndarray
    a_z: float = 0.0
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("fingertips", "keypoints", "goal_keypoints"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1, 3))
        for name in ("object_pos", "target_pos"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        object.__setattr__(self, "object_rot", np.asarray(self.object_rot, dtype=float).reshape(3, 3))
        arrays = [self.fingertips, self.keypoints, self.goal_keypoints, self.object_pos, self.object_rot,
                  self.target_pos, self.hand.translation, self.hand.rotation, [self.a_z]]
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise InvalidInputError("rollout state must be finite")
        if self.keypoints.shape != self.goal_keypoints.shape:
            raise InvalidInputError("keypoints and goal keypoints must have the same count")
        if self.hand.q.shape != self.goal.q.shape:
            raise InvalidInputError("hand and goal joint vectors must have the same length")

    def to_dict(self):
        pose = lambda p: {"rotation": p.rotation.tolist(), "translation": p.translation.tolist(),  # noqa: E731
                          "q": p.q.tolist()}
        return {"hand": pose(self.hand), "fingertips": self.fingertips.tolist(), "keypoints": self.keypoints.tolist(),
                "object_pos": self.object_pos.tolist(), "object_rot": self.object_rot.tolist(),
                "target_pos": self.target_pos.tolist(), "goal": pose(self.goal),
                "goal_keypoints": self.goal_keypoints.tolist(), "a_z": float(self.a_z)}

    @classmethod
    def from_dict(cls, d):
        pose = lambda p: HandPose.make(np.array(p["rotation"]), np.array(p["translation"]), np.array(p["q"]))  # noqa: E731
        known = {"hand", "fingertips", "keypoints", "object_pos", "object_rot", "target_pos", "goal",
                 "goal_keypoints", "a_z"}
        return cls(pose(d["hand"]), d["fingertips"], d["keypoints"], d["object_pos"], d["object_rot"],
                   d["target_pos"], pose(d["goal"]), d["goal_keypoints"], float(d.get("a_z", 0.0)),
                   {k: v for k, v in d.items() if k not in known})


def transform_state(state, T):
    """Apply the rigid map ``T`` to every world-frame quantity; object-frame goals are unchanged."""
    R = T.rotation
    hand = HandPose(T @ state.hand.root, state.hand.q)
    return replace(state, hand=hand, fingertips=T.apply(state.fingertips), keypoints=T.apply(state.keypoints),
                   object_pos=T.apply(state.object_pos), object_rot=R @ state.object_rot,
                   target_pos=T.apply(state.target_pos))


def canonicalize_state(state, frame):
    return transform_state(state, frame.to_local())


def rotation_distance(Ra, Rb):
    """``acos((trace(Ra Rb^T) - 1) / 2)``, clipped into the arccos domain."""
    c = 0.5 * (np.trace(Ra @ Rb.T) - 1.0)
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def hand_in_object(state):
    """Hand root translation and rotation expressed in the object frame."""
    Ro = state.object_rot
    return Ro.T @ (state.hand.translation - state.object_pos), Ro.T @ state.hand.rotation


def lift_flag(state, weights=RewardWeights()):
    """Number of satisfied lifting conditions (0..3)."""
    Ro = state.object_rot
    kp_obj = (state.keypoints - state.object_pos) @ Ro
    w = weights.joint_weights(kp_obj.shape[0])
    pose_gap = float(w @ np.linalg.norm(kp_obj - state.goal_keypoints, axis=1))
    reach = float(np.linalg.norm(state.fingertips - state.object_pos, axis=1).sum())
    d_obj = float(np.linalg.norm(state.object_pos - state.target_pos))
    return int(pose_gap < weights.lambda_f1) + int(reach < weights.lambda_f2) + int(d_obj > weights.lambda_0)


def reward(state, weights=RewardWeights()):
    """Total reward and its four components ``goal``, ``reach``, ``lift``, ``move``."""
    t_obj, R_obj = hand_in_object(state)
    l_rot = rotation_distance(R_obj, state.goal.rotation)
    r_goal = -(weights.w_gq * float(np.abs(state.hand.q - state.goal.q).sum())
               + weights.w_gt * float(np.linalg.norm(t_obj - state.goal.translation))
               + weights.w_gR * l_rot)
    reach = float(np.linalg.norm(state.fingertips - state.object_pos, axis=1).sum())
    r_reach = -weights.w_r * reach
    a_z = float(np.clip(state.a_z, -1.0, 1.0))
    r_lift = weights.w_l * (1.0 + a_z) if lift_flag(state, weights) == 3 else 0.0
    d_obj = float(np.linalg.norm(state.object_pos - state.target_pos))
    r_move = -weights.w_m * d_obj
    if d_obj < weights.lambda_0:
        r_move += 1.0 / (1.0 + weights.w_b * d_obj)
    comps = {"goal": r_goal, "reach": r_reach, "lift": r_lift, "move": r_move}
    return r_goal + r_reach + r_lift + r_move, comps


def reward_log_line(step, state, weights=RewardWeights()):
    """One JSON line with the step's total and components for external trainers."""
    total, comps = reward(state, weights)
    return json.dumps({"step": int(step), "total": total, **comps}, sort_keys=True)
