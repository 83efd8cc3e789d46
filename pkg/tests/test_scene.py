import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dexgrasp import so3
from dexgrasp.errors import InvalidInputError
from dexgrasp.hand import HandPose, hand_sdf
from dexgrasp.scene import (ContactMap, ContactSet, Scene, box_scene, canonicalize, contact_candidates,
                            contact_heat, estimate_normals, extract_contacts, heat_from_distance, load_scene,
                            rest_on_table, save_scene, sphere_scene)


def test_scene_invariants():
    with pytest.raises(InvalidInputError):
        Scene(np.zeros((0, 3)), np.zeros((0, 3)))
    with pytest.raises(InvalidInputError):
        Scene(np.zeros((1, 3)), [[0, 0, 2.0]])
    s = sphere_scene(0.05, 500)
    assert s.object_points[:, 2].min() >= -1e-12
    assert np.allclose(np.linalg.norm(s.object_points - [0, 0, 0.05], axis=1), 0.05)
    b = box_scene(0.1, 600)
    assert len(b.object_points) == 600
    assert b.object_points[:, 2].min() == pytest.approx(0.0, abs=1e-12)


def test_canonicalize(rng):
    X = rng.normal(size=(50, 3))
    assert np.allclose(canonicalize(X, np.eye(3)), X)
    R1, R2 = so3.random_rotations(2, rng)
    assert np.allclose(canonicalize(X, R1 @ R2), canonicalize(canonicalize(X, R1), R2))
    Y = canonicalize(X, R1)
    dx = np.linalg.norm(X[:, None] - X[None], axis=2)
    dy = np.linalg.norm(Y[:, None] - Y[None], axis=2)
    assert np.allclose(dx, dy)
    assert np.allclose(Y, (R1.T @ X.T).T)


def test_heat_values():
    assert heat_from_distance(0.0) == pytest.approx(1.0)
    assert heat_from_distance(0.01, 60.0) == pytest.approx(2 - 2 / (1 + np.exp(-0.6)), abs=1e-12)
    assert heat_from_distance(0.01, 60.0) == pytest.approx(0.7086, abs=1e-4)
    d = np.linspace(0, 2, 500)
    h = heat_from_distance(d)
    assert np.all(np.diff(h) < 0) and h[-1] < 1e-40
    with pytest.raises(InvalidInputError):
        contact_heat(np.zeros((0, 3)), np.zeros((2, 3)))
    with pytest.raises(InvalidInputError):
        contact_heat(np.zeros((1, 3)), np.zeros((2, 3)), beta=0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(1.0, 200.0))
def test_heat_bounds_and_rigid_invariance(seed, beta):
    rng = np.random.default_rng(seed)
    obj = rng.normal(scale=0.1, size=(60, 3))
    hand = rng.normal(scale=0.1, size=(40, 3))
    a = contact_heat(obj, hand, beta).heat
    assert np.all((a >= 0) & (a <= 1))
    T = so3.RigidTransform(so3.random_rotations(1, rng)[0], rng.normal(size=3))
    b = contact_heat(T.apply(obj), T.apply(hand), beta).heat
    assert np.allclose(a, b, atol=1e-12)


def test_contact_map_bounds():
    with pytest.raises(InvalidInputError):
        ContactMap([0.5, 1.2])
    with pytest.raises(InvalidInputError):
        ContactSet([[0, 0, 0]], [[0, 0, 2]])


def test_contacts_far_hand_empty(model, sphere):
    far = HandPose.make(np.eye(3), [1.0, 1.0, 1.0], model.mid_pose_q())
    assert len(extract_contacts(sphere, model, far)) == 0


def test_contacts_match_brute_scan(model, sphere, sphere_grasp):
    pose = sphere_grasp.hand_pose
    sdf = hand_sdf(model, pose, sphere.object_points)
    brute = set(np.nonzero(np.abs(sdf) <= 0.01)[0])
    idx, _, links = contact_candidates(sphere, model, pose)
    assert set(idx) == brute and brute
    cs = extract_contacts(sphere, model, pose)
    assert len(cs) == len(np.unique(links))
    # one contact per link, the closest
    for p, li in zip(cs.points, cs.links):
        m = links == li
        best = idx[m][np.argmin(np.abs(sdf[idx[m]]))]
        assert np.array_equal(p, sphere.object_points[best])


def test_contacts_monotone_in_tolerance(model, box, box_grasp):
    pose = box_grasp.hand_pose
    sizes = [len(contact_candidates(box, model, pose, t)[0]) for t in (0.001, 0.003, 0.01, 0.03)]
    assert sizes == sorted(sizes)
    with pytest.raises(InvalidInputError):
        contact_candidates(box, model, pose, 0.0)


def test_estimate_normals_on_sphere():
    s = sphere_scene(0.05, 1500)
    n = estimate_normals(s.object_points)
    assert np.min(np.einsum("ij,ij->i", n, s.object_normals)) > 0.98


def test_rest_on_table(rng):
    b = box_scene(0.1, 300)
    R = so3.random_rotations(1, rng)[0]
    s = rest_on_table(b.object_points, b.object_normals, R)
    assert s.object_points[:, 2].min() == pytest.approx(0.0, abs=1e-12)


def test_scene_file_roundtrip(tmp_path):
    s = box_scene(0.06, 300)
    p = tmp_path / "cube.ply"
    save_scene(s, p, {"config_hash": "abc"})
    back = load_scene(p)
    assert np.allclose(back.object_points, s.object_points)
    assert np.allclose(back.object_normals, s.object_normals)
    assert back.object_id == "cube" and back.scale == pytest.approx(0.06)
    with pytest.raises(FileNotFoundError):
        load_scene(tmp_path / "missing.ply")
