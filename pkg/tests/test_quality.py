import json

import numpy as np
import pytest

from dexgrasp import so3
from dexgrasp.errors import InvalidInputError
from dexgrasp.hand import HandPose, hand_sdf, posed
from dexgrasp.quality import (AXIS_DIRECTIONS, FrictionModel, QualityConfig, build_wrenches, cone_edges,
                              directions, evaluate_grasp, exact_q1, gravity_resistance, penetration_depth, q1,
                              q1_from_wrenches, resists, resists_all, support_min, table_penetration)
from dexgrasp.scene import ContactSet, Scene
from oracles import vertex_feasible


def on_sphere(dirs, r=0.04):
    d = np.asarray(dirs, dtype=float)
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    return ContactSet(r * d, d)


TETRA = [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]]
THREE = [[1, 0, 0.3], [-0.5, 0.866, 0.3], [-0.5, -0.866, -0.2]]


def wrenches(cs, mu=0.5, m=8, rho=25.0):
    return build_wrenches(cs, FrictionModel(mu, m), np.zeros(3), rho).wrenches


def test_friction_model_invariants():
    with pytest.raises(InvalidInputError):
        FrictionModel(0.0)
    with pytest.raises(InvalidInputError):
        FrictionModel(0.5, 2)
    with pytest.raises(InvalidInputError):
        QualityConfig(contact_tolerance=0)


def test_build_wrenches_shape_and_norms(rng):
    cs = on_sphere(rng.normal(size=(5, 3)))
    W = wrenches(cs, m=7)
    assert W.shape == (35, 6)
    assert np.allclose(np.linalg.norm(W[:, :3], axis=1), 1.0, atol=1e-12)
    tight = cone_edges(-cs.normals, FrictionModel(1e-12, 8))
    assert np.allclose(tight, -cs.normals[:, None, :], atol=1e-11)
    # edges make the cone half-angle atan(mu) with the normal
    e = cone_edges(-cs.normals, FrictionModel(0.5, 8))
    cosang = np.einsum("mkj,mj->mk", e, -cs.normals)
    assert np.allclose(cosang, 1 / np.sqrt(1.25))
    assert len(build_wrenches(ContactSet(np.zeros((0, 3)), np.zeros((0, 3))))) == 0


def test_q1_empty_and_degenerate():
    assert q1_from_wrenches(np.zeros((0, 6))) == 0.0
    assert q1_from_wrenches(wrenches(on_sphere([[1, 0, 0], [-1, 0, 0]]))) == 0.0


@pytest.mark.parametrize("dirs", [TETRA, THREE, [[1, 0, 0.15], [1, 0, -0.15], [-1, 0.15, 0], [-1, -0.15, 0]]])
def test_q1_matches_exact_hull(dirs):
    W = wrenches(on_sphere(dirs))
    exact = exact_q1(W)
    assert exact > 0
    approx = q1_from_wrenches(W)
    assert approx == pytest.approx(exact, rel=1e-6)
    # pure sampling is an upper bound of the true inradius
    assert support_min(W, directions(4096))[0] >= exact - 1e-12


def test_q1_monotone_in_directions_and_contacts(rng):
    W = wrenches(on_sphere(THREE))
    vals = [support_min(W, directions(n))[0] for n in (64, 256, 1024, 4096, 16384)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    for _ in range(10):
        base = rng.normal(size=(4, 3))
        extra = rng.normal(size=(1, 3))
        Wa = wrenches(on_sphere(base))
        Wb = wrenches(on_sphere(np.vstack([base, extra])))
        assert exact_q1(Wb) >= exact_q1(Wa) - 1e-12
        assert q1_from_wrenches(Wb) >= q1_from_wrenches(Wa) - 1e-9


def test_penetration_depth(model):
    pose = HandPose.make(np.eye(3), np.zeros(3), np.zeros(model.dof))
    scene = Scene([[0, 0, 0.0025], [0.3, 0, 0]], [[0, 0, 1.0], [1.0, 0, 0]])
    assert penetration_depth(scene, model, pose) == pytest.approx(0.01)
    far = HandPose.make(np.eye(3), [1.0, 0, 0], np.zeros(model.dof))
    assert penetration_depth(Scene([[0, 0, 0.0025]], [[0, 0, 1.0]]), model, far) == 0.0


def test_penetration_matches_scan(model, sphere, sphere_grasp):
    pose = sphere_grasp.hand_pose
    pose = HandPose(so3.RigidTransform(pose.rotation, pose.translation - 0.004 * np.array([0, 0, 1.0])), pose.q)
    s = hand_sdf(model, pose, sphere.object_points)
    assert penetration_depth(sphere, model, pose) == pytest.approx(max(0.0, -s.min()), abs=0)


def _shift(scene, pose, dz):
    T = so3.RigidTransform(np.eye(3), [0.0, 0.0, dz])
    return scene.transformed(T), HandPose(T @ pose.root, pose.q)


def test_q1_invalidation_thresholds(model, sphere, sphere_grasp):
    pose = sphere_grasp.hand_pose
    base = q1(sphere, model, pose)
    assert base > 0
    # object penetration: add one object point 6 mm inside the palm box
    kin = posed(model, pose)
    half_z = model.prim_param[0][2]
    inside = kin.prim_p[0] + kin.prim_R[0][:, 2] * (half_z - 0.006)
    deep = Scene(np.vstack([sphere.object_points, inside]), np.vstack([sphere.object_normals, [0, 0, 1.0]]),
                 sphere.object_pose, sphere.object_id, sphere.scale)
    assert penetration_depth(deep, model, pose) == pytest.approx(0.006, abs=1e-12)
    assert q1(deep, model, pose) == 0.0
    assert q1(deep, model, pose, QualityConfig(invalid_obj_pen=0.0061)) > 0
    # table penetration: sink hand and object together so the lowest hand point sits at -depth
    _, sunk = _shift(sphere, pose, -1.0)
    lowest = 1.0 - table_penetration(model, sunk)
    for depth, expect_zero in ((0.0099, False), (0.0101, True)):
        s2, p2 = _shift(sphere, pose, -(lowest + depth))
        assert table_penetration(model, p2) == pytest.approx(depth, abs=1e-12)
        v = q1(s2, model, p2)
        assert v == 0.0 if expect_zero else v == pytest.approx(base, rel=1e-6)


def test_gravity_resistance_cases():
    single = ContactSet([[0.04, 0, 0]], [[1.0, 0, 0]])
    assert not resists_all(wrenches(single, mu=1e-12))
    assert not resists_all(np.array([[-1.0, 0, 0, 0, 0, 0]]))
    assert resists_all(wrenches(on_sphere(TETRA)))
    assert resists_all(wrenches(on_sphere(np.vstack([np.eye(3), -np.eye(3)]))))
    assert not resists(np.zeros((0, 6)), [0, 0, -1])


def test_adding_contacts_never_breaks_stability(rng):
    checked_pass = 0
    for _ in range(200):
        k = rng.integers(3, 6)
        base = rng.normal(size=(k, 3))
        Wa = wrenches(on_sphere(base))
        Wb = wrenches(on_sphere(np.vstack([base, rng.normal(size=(1, 3))])))
        if resists_all(Wa):
            checked_pass += 1
            assert resists_all(Wb)
    assert checked_pass > 10


@pytest.mark.parametrize("seed", range(12))
def test_stability_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 5))
    W = wrenches(on_sphere(rng.normal(size=(k, 3))), mu=float(rng.uniform(0.2, 1.0)), m=3)
    for d in AXIS_DIRECTIONS:
        target = np.zeros(6)
        target[:3] = -0.1 * 9.81 * d
        assert resists(W, d) == vertex_feasible(W.T, target)


def test_gravity_resistance_yaw_invariant(model, sphere, sphere_grasp, rng):
    pose = sphere_grasp.hand_pose
    Rz = so3.rot_z(rng.uniform(-np.pi, np.pi))
    T = so3.RigidTransform(Rz, np.zeros(3))
    for dirs in (AXIS_DIRECTIONS, rng.normal(size=(4, 3))):
        a = gravity_resistance(sphere, model, pose, directions=dirs)
        b = gravity_resistance(sphere.transformed(T), model, HandPose(T @ pose.root, pose.q),
                               directions=dirs @ Rz.T)
        assert a == b
    assert gravity_resistance(sphere, model, pose)


def test_evaluate_grasp_report(model, sphere, sphere_grasp):
    rep = evaluate_grasp(sphere, model, sphere_grasp.hand_pose)
    d = json.loads(rep.to_json())
    assert {"q1", "penetration", "table_penetration", "stable", "mu", "m", "rho"} <= set(d)
    assert d["mu"] == 0.5 and d["m"] == 8
    assert d["rho"] == pytest.approx(1 / sphere.bounding_radius)
    assert rep.q1 == pytest.approx(q1(sphere, model, sphere_grasp.hand_pose), rel=1e-12)
