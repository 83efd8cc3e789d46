"""The numba kernels and their numpy twins must agree."""
from dataclasses import replace

import numpy as np
import pytest

from dexgrasp import _kernels_numba, _kernels_numpy, kernels
from dexgrasp.energies import evaluate, synthesis_energy
from dexgrasp.hand import forward_kinematics, hand_sdf_full, posed
from dexgrasp.records import OptimizerConfig
from dexgrasp.synthesis import synthesize
from gradcheck import random_pose_near

NAMES = ("accumulate", "contact_normals", "fk", "nearest", "pair_distances", "prim_world", "sdf_points",
         "synth_descend", "synth_energy")


@pytest.fixture
def both(monkeypatch):
    def call(fn, *args, **kw):
        out = []
        for mod in (_kernels_numba, _kernels_numpy):
            for name in NAMES:
                monkeypatch.setattr(kernels, name, getattr(mod, name))
            out.append(fn(*args, **kw))
        return out

    return call


def close(a, b, tol=1e-9):
    assert np.allclose(a, b, rtol=tol, atol=tol)


def test_kinematics_and_sdf(both, model, sphere, rng):
    for _ in range(10):
        pose = random_pose_near(sphere, model, rng)
        ka, kb = both(posed, model, pose)
        for name in ("link_R", "link_p", "axis_w", "origin_w", "prim_R", "prim_p"):
            close(getattr(ka, name), getattr(kb, name))
        fa, fb = both(forward_kinematics, model, pose)
        for a, b in zip(fa, fb):
            close(a.as_matrix(), b.as_matrix())
        pts = rng.normal(scale=0.08, size=(500, 3)) + pose.translation
        kin = posed(model, pose)
        (sa, ga, ia), (sb, gb, ib) = both(hand_sdf_full, model, kin, pts)
        close(sa, sb)
        close(ga, gb)
        # the nearest primitive may differ only where two primitives tie
        for i in np.nonzero(ia != ib)[0]:
            both_sdf = [_kernels_numpy.sdf_points(pts[i:i + 1], kin.prim_R[[k]], kin.prim_p[[k]],
                                                  model.prim_type[[k]], model.prim_param[[k]])[0][0]
                        for k in (ia[i], ib[i])]
            assert both_sdf[0] == pytest.approx(both_sdf[1], abs=1e-12)


def test_energy_terms(both, model, sphere, box, rng):
    weights = {"fc": 1.0, "dis": 10.0, "pen": 100.0, "tpen": 1.0, "joints": 1.0, "spen": 10.0, "cmap": 1.0}
    for scene in (sphere, box):
        target = rng.uniform(size=scene.object_points.shape[0])
        cloud = model.surface_cloud(256, 0)
        for _ in range(5):
            pose = random_pose_near(scene, model, rng, q_margin=0.1)
            ra, rb = both(evaluate, scene, model, pose, weights, target, hand_cloud=cloud)
            close(ra.total, rb.total)
            close(ra.grad, rb.grad)
            ea, eb = both(synthesis_energy, scene, model, pose)
            close(ea.total, eb.total)
            close(ea.grad, eb.grad)


def test_nearest(rng):
    a, b = rng.normal(size=(300, 3)), rng.normal(size=(1000, 3))
    da, ja = _kernels_numba.nearest(a, b)
    db, jb = _kernels_numpy.nearest(a, b)
    close(da, db)
    assert np.array_equal(ja, jb)


def test_descent_loop(both, model, sphere):
    cfg = replace(OptimizerConfig(), steps=200, seed=3)
    ra, rb = both(synthesize, sphere, model, config=cfg)
    close(ra.trajectory.energies, rb.trajectory.energies, 1e-7)
    close(ra.hand_pose.root.as_matrix(), rb.hand_pose.root.as_matrix(), 1e-7)
    close(ra.hand_pose.q, rb.hand_pose.q, 1e-7)
