import json

import numpy as np
import pytest

from dexgrasp import so3
from dexgrasp.errors import InvalidInputError
from dexgrasp.hand import HandPose
from dexgrasp.policy import (CanonicalFrame, RewardWeights, RolloutState, canonicalize_state, initial_hand_rotation,
                             lift_flag, reward, reward_log_line, rotation_distance, transform_state)
from dexgrasp.records import RewardSettings
from dexgrasp.so3 import RigidTransform, rot_z

K, J = 22, 15


def random_state(rng, scale=0.1):
    hand = HandPose.make(so3.random_rotations(1, rng)[0], rng.normal(scale=scale, size=3), rng.normal(size=K))
    goal = HandPose.make(so3.random_rotations(1, rng)[0], rng.normal(scale=scale, size=3), rng.normal(size=K))
    return RolloutState(hand, rng.normal(scale=scale, size=(5, 3)), rng.normal(scale=scale, size=(J, 3)),
                        rng.normal(scale=scale, size=3), so3.random_rotations(1, rng)[0],
                        rng.normal(scale=scale, size=3), goal, rng.normal(scale=scale, size=(J, 3)),
                        float(rng.uniform(-1.5, 1.5)))


def at_goal(rng):
    """Hand exactly at its goal, fingertips on the object, object resting at the target."""
    s = random_state(rng)
    Ro, po = s.object_rot, s.object_pos
    hand = HandPose.make(Ro @ s.goal.rotation, po + Ro @ s.goal.translation, s.goal.q)
    kp = po + s.goal_keypoints @ Ro.T
    return RolloutState(hand, np.tile(po, (5, 1)), kp, po, Ro, po, s.goal, s.goal_keypoints, 0.0)


def test_default_weights():
    w = RewardWeights()
    assert (w.w_gq, w.w_gt, w.w_gR, w.w_r, w.w_l, w.w_m, w.w_b) == (0.1, 0.6, 0.1, 0.5, 0.1, 2.0, 10.0)
    assert (w.lambda_f1, w.lambda_f2, w.lambda_0) == (0.05, 0.25, 0.02)
    assert RewardWeights.from_settings(RewardSettings()) == w
    assert np.allclose(w.joint_weights(J), 1.0 / J)
    with pytest.raises(InvalidInputError):
        RewardWeights(w_m=-1.0)
    with pytest.raises(InvalidInputError):
        RewardWeights(keypoint_weights=(1.0, 2.0)).joint_weights(J)


def test_reward_rigid_invariance(rng):
    worst = 0.0
    for _ in range(1000):
        s = random_state(rng)
        T = RigidTransform(rot_z(rng.uniform(-np.pi, np.pi)), rng.normal(size=3))
        a, ca = reward(s)
        b, cb = reward(transform_state(s, T))
        worst = max(worst, abs(a - b), *(abs(ca[k] - cb[k]) for k in ca))
        assert lift_flag(s) == lift_flag(transform_state(s, T))
    assert worst < 1e-6


def test_reward_at_goal(rng):
    s = at_goal(rng)
    total, comps = reward(s)
    assert comps["goal"] == pytest.approx(0.0, abs=1e-7)
    assert comps["reach"] == pytest.approx(0.0, abs=1e-12)
    # object has not moved from the target: bonus 1, and not all lift conditions hold
    assert comps["move"] == pytest.approx(1.0)
    assert lift_flag(s) == 2 and comps["lift"] == 0.0
    assert total == pytest.approx(sum(comps.values()))


def test_component_values(rng):
    w = RewardWeights()
    for _ in range(50):
        s = random_state(rng)
        total, comps = reward(s, w)
        assert comps["goal"] <= 0 and comps["reach"] <= 0 and comps["lift"] >= 0
        assert total == pytest.approx(sum(comps.values()))
        reach = np.linalg.norm(s.fingertips - s.object_pos, axis=1).sum()
        assert comps["reach"] == pytest.approx(-0.5 * reach)
        t_obj = s.object_rot.T @ (s.hand.translation - s.object_pos)
        R_obj = s.object_rot.T @ s.hand.rotation
        expect = -(0.1 * np.abs(s.hand.q - s.goal.q).sum() + 0.6 * np.linalg.norm(t_obj - s.goal.translation)
                   + 0.1 * so3.geodesic_angle(R_obj, s.goal.rotation))
        assert comps["goal"] == pytest.approx(expect)
        d = np.linalg.norm(s.object_pos - s.target_pos)
        assert comps["move"] == pytest.approx(-2.0 * d + (1.0 / (1.0 + 10.0 * d) if d < 0.02 else 0.0))


def test_lift_term_and_clipping(rng):
    s = at_goal(rng)
    lifted = RolloutState(s.hand, s.fingertips, s.keypoints, s.object_pos, s.object_rot,
                          s.object_pos + [0.0, 0.0, -0.1], s.goal, s.goal_keypoints, 0.5)
    assert lift_flag(lifted) == 3
    assert reward(lifted)[1]["lift"] == pytest.approx(0.1 * 1.5)
    over = RolloutState(**{**lifted.__dict__, "a_z": 7.0})
    assert reward(over)[1]["lift"] == pytest.approx(0.2)
    under = RolloutState(**{**lifted.__dict__, "a_z": -3.0})
    assert reward(under)[1]["lift"] == 0.0


def test_lift_flag_monotone_in_thresholds(rng):
    for _ in range(100):
        s = random_state(rng)
        loose = RewardWeights(lambda_f1=10.0, lambda_f2=10.0, lambda_0=0.0)
        tight = RewardWeights(lambda_f1=0.0, lambda_f2=0.0, lambda_0=10.0)
        assert lift_flag(s, tight) <= lift_flag(s) <= lift_flag(s, loose)
        assert lift_flag(s, tight) == 0


def test_rotation_distance(rng):
    Rs = so3.random_rotations(40, rng)
    for a, b in zip(Rs[:20], Rs[20:]):
        assert rotation_distance(a, b) == pytest.approx(so3.geodesic_angle(a, b), abs=1e-7)
    assert rotation_distance(Rs[0], Rs[0]) == pytest.approx(0.0, abs=1e-7)
    assert rotation_distance(np.eye(3), so3.rot_x(np.pi)) == pytest.approx(np.pi)


def test_canonical_frame(rng):
    s = random_state(rng)
    ident = canonicalize_state(s, CanonicalFrame())
    assert np.allclose(ident.keypoints, s.keypoints) and np.allclose(ident.hand.rotation, s.hand.rotation)
    frame = CanonicalFrame(height=0.2, yaw=0.7)
    c = canonicalize_state(s, frame)
    # frame origin maps to zero; object-frame goal untouched
    assert np.allclose(frame.to_local().apply(frame.origin), 0.0)
    assert np.allclose(c.goal_keypoints, s.goal_keypoints)
    # yaw-rotating the world and the frame together leaves the canonical state unchanged
    T = RigidTransform(rot_z(1.3), np.zeros(3))
    spun = canonicalize_state(transform_state(s, T), CanonicalFrame(0.2, 0.7 + 1.3))
    for name in ("fingertips", "keypoints", "object_pos", "object_rot", "target_pos"):
        assert np.allclose(getattr(spun, name), getattr(c, name))
    assert np.allclose(spun.hand.root.as_matrix(), c.hand.root.as_matrix())
    twice = canonicalize_state(c, CanonicalFrame())
    assert np.allclose(twice.keypoints, c.keypoints)
    with pytest.raises(InvalidInputError):
        CanonicalFrame(yaw=np.nan)


def test_initial_rotation():
    R = initial_hand_rotation(0.0)
    assert np.allclose(so3.to_euler(R), [np.pi / 2, 0.0, 0.0])
    assert np.allclose(initial_hand_rotation(0.4), rot_z(0.4) @ R)


def test_state_validation_and_log(rng):
    s = random_state(rng)
    back = RolloutState.from_dict(json.loads(json.dumps({**s.to_dict(), "step": 3})))
    assert reward(back) == reward(s) and back.extra == {"step": 3}
    d = s.to_dict()
    d["keypoints"] = d["keypoints"][:-1]
    with pytest.raises(InvalidInputError):
        RolloutState.from_dict(d)
    d = s.to_dict()
    d["object_pos"] = [0.0, np.inf, 0.0]
    with pytest.raises(InvalidInputError):
        RolloutState.from_dict(d)
    line = json.loads(reward_log_line(7, s))
    assert line["step"] == 7 and set(line) == {"step", "total", "goal", "reach", "lift", "move"}
    assert line["total"] == pytest.approx(reward(s)[0])
