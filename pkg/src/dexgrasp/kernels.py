"""Hot geometry kernels, dispatched to numba or numpy per ``_accel.USE_NUMBA``."""
from ._accel import BACKEND, USE_NUMBA

if USE_NUMBA:
    from ._kernels_numba import (accumulate, contact_normals, fk, nearest, pair_distances, prim_world, sdf_points,
                                 synth_descend, synth_energy)
else:
    from ._kernels_numpy import (accumulate, contact_normals, fk, nearest, pair_distances, prim_world, sdf_points,
                                 synth_descend, synth_energy)

BOX = 0
CAPSULE = 1

__all__ = [
    "BACKEND",
    "BOX",
    "CAPSULE",
    "accumulate",
    "contact_normals",
    "fk",
    "nearest",
    "pair_distances",
    "prim_world",
    "sdf_points",
    "synth_descend",
    "synth_energy",
]
