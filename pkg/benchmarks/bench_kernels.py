"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both backends are imported directly, so ``DEXGRASP_NUMBA`` does not matter
here. The numba column excludes compilation (one warm-up call first).
"""
import argparse
import time

import numpy as np

from dexgrasp import _kernels_numba, _kernels_numpy
from dexgrasp.energies import synthesis_kernel_args
from dexgrasp.hand import default_hand, posed
from dexgrasp.records import OptimizerConfig
from dexgrasp.scene import sphere_scene
from dexgrasp.synthesis import _preconditioner, init_grasp


def best_of(fn, repeat):
    fn()  # warm-up / compile
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(model, scene, pose):
    kin = posed(model, pose)
    rng = np.random.default_rng(0)
    pts = pose.translation + rng.normal(scale=0.06, size=(10_000, 3))
    R, t, q = np.ascontiguousarray(pose.rotation), np.ascontiguousarray(pose.translation), pose.q.copy()
    args = synthesis_kernel_args(scene, model)
    pre = _preconditioner(model, OptimizerConfig())
    return {
        "fk": lambda K: K.fk(R, t, q, model.j_parent, model.j_child, model.j_orig_R, model.j_orig_p, model.j_axis,
                             model.n_links),
        "sdf_points (10k points)": lambda K: K.sdf_points(pts, kin.prim_R, kin.prim_p, model.prim_type,
                                                          model.prim_param),
        "pair_distances": lambda K: K.pair_distances(kin.prim_R, kin.prim_p, model.prim_type, model.prim_param,
                                                     model.self_pairs, 0.02),
        "nearest (5 x 2048)": lambda K: K.nearest(pts[:5], scene.object_points),
        "synth_energy": lambda K: K.synth_energy(R, t, q, *args),
        "synth_descend (200 steps)": lambda K: K.synth_descend(R, t, q, *args, pre, 200, 1.0, 1.5, 30),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args()
    model, scene = default_hand(), sphere_scene()
    pose = init_grasp(scene, model, 0)
    print(f"{'kernel':28s} {'numpy ms':>10s} {'numba ms':>10s} {'speed-up':>9s}")
    for name, call in cases(model, scene, pose).items():
        t_np = best_of(lambda: call(_kernels_numpy), a.repeat)
        t_nb = best_of(lambda: call(_kernels_numba), a.repeat)
        print(f"{name:28s} {1e3 * t_np:10.3f} {1e3 * t_nb:10.3f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
