"""Rotation algebra, equivolumetric SO(3) grids and grid-normalised densities.

Rotations are plain ``(3, 3)`` float arrays; batches are ``(n, 3, 3)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation as _SciRot

from .errors import CapacityError, DegenerateInputError, InvalidInputError

SO3_VOLUME = np.pi ** 2
BASE_CELLS = 72
MAX_GRID_CELLS = 1 << 26


def hat(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def exp_map(w):
    """Rotation matrix for rotation vector ``w`` (axis * angle)."""
    w = np.asarray(w, dtype=float)
    theta = np.sqrt(w @ w)
    K = hat(w)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + (np.sin(theta) / theta) * K + ((1.0 - np.cos(theta)) / theta ** 2) * (K @ K)


def log_map(R):
    return _SciRot.from_matrix(R).as_rotvec()


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def from_quat(wxyz):
    w, x, y, z = np.asarray(wxyz, dtype=float)
    return _SciRot.from_quat([x, y, z, w]).as_matrix()


def to_quat(R):
    """Unit quaternion (w, x, y, z) with w >= 0."""
    x, y, z, w = _SciRot.from_matrix(R).as_quat()
    q = np.array([w, x, y, z])
    return -q if w < 0 else q


def from_euler(angles, seq="xyz"):
    return _SciRot.from_euler(seq, angles).as_matrix()


def to_euler(R, seq="xyz"):
    return _SciRot.from_matrix(R).as_euler(seq)


def random_rotations(n, rng):
    """``n`` Haar-uniform rotations drawn with a numpy Generator."""
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return _SciRot.from_quat(q).as_matrix()


def is_rotation(R, tol=1e-9):
    R = np.asarray(R, dtype=float)
    return (R.shape == (3, 3) and np.all(np.isfinite(R))
            and np.allclose(R.T @ R, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1.0) <= tol)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))
        if not np.all(np.isfinite(self.translation)):
            raise InvalidInputError("translation must be finite")

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points):
        return np.asarray(points) @ self.rotation.T + self.translation

    def inverse(self):
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def __matmul__(self, other):
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def as_matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T


def geodesic_angle(a, b):
    """Angle in radians of the relative rotation ``a b^T``, in [0, pi]."""
    c = 0.5 * (np.trace(np.asarray(a) @ np.asarray(b).T) - 1.0)
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def geodesic_angles(rotations, r):
    """Vectorised :func:`geodesic_angle` of every rotation in a batch against ``r``."""
    tr = np.einsum("nij,ij->n", rotations, r)
    return np.arccos(np.clip(0.5 * (tr - 1.0), -1.0, 1.0))


# ---------------------------------------------------------------- grids


def _healpix_ring_pix2ang(nside, pix):
    """HEALPix RING-scheme pixel centres as (theta, phi)."""
    pix = np.asarray(pix, dtype=np.int64)
    npix = 12 * nside * nside
    ncap = 2 * nside * (nside - 1)
    fact2 = 4.0 / npix
    theta = np.empty(pix.shape)
    phi = np.empty(pix.shape)

    north = pix < ncap
    south = pix >= npix - ncap
    equ = ~(north | south)

    p = pix[north]
    iring = (1 + np.floor(np.sqrt(1 + 2 * p)).astype(np.int64)) >> 1
    iphi = p + 1 - 2 * iring * (iring - 1)
    theta[north] = np.arccos(1.0 - iring ** 2 * fact2)
    phi[north] = (iphi - 0.5) * np.pi / (2.0 * iring)

    p = pix[equ] - ncap
    iring = p // (4 * nside) + nside
    iphi = p % (4 * nside) + 1
    fodd = np.where(((iring + nside) & 1) == 1, 1.0, 0.5)
    theta[equ] = np.arccos((2 * nside - iring) * (2.0 / (3.0 * nside)))
    phi[equ] = (iphi - fodd) * np.pi / (2.0 * nside)

    p = npix - pix[south]
    iring = (1 + np.floor(np.sqrt(2 * p - 1)).astype(np.int64)) >> 1
    iphi = 4 * iring + 1 - (p - 2 * iring * (iring - 1))
    theta[south] = np.arccos(-1.0 + iring ** 2 * fact2)
    phi[south] = (iphi - 0.5) * np.pi / (2.0 * iring)
    return theta, phi


@dataclass(frozen=True)
class So3Grid:
    rotations: np.ndarray
    level: int = 0

    @property
    def size(self):
        return self.rotations.shape[0]

    @property
    def cell_volume(self):
        return SO3_VOLUME / self.size


def grid_size(level):
    return BASE_CELLS * 8 ** level


def make_grid(level, max_cells=MAX_GRID_CELLS):
    """Hopf-fibration grid: HEALPix sphere cells times a uniform circle.

    Returns ``72 * 8**level`` rotations ``Rz(phi) Ry(theta) Rz(psi)`` of equal
    Haar volume.
    """
    level = int(level)
    if level < 0:
        raise InvalidInputError("resolution level must be non-negative")
    M = grid_size(level)
    if M > max_cells:
        raise CapacityError(f"level {level} needs {M} cells (limit {max_cells})")
    nside = 2 ** level
    theta, phi = _healpix_ring_pix2ang(nside, np.arange(12 * nside * nside))
    psi = np.linspace(0.0, 2.0 * np.pi, 6 * 2 ** level, endpoint=False)
    P = np.repeat(phi, psi.size)
    T = np.repeat(theta, psi.size)
    S = np.tile(psi, phi.size)
    R = _SciRot.from_euler("ZYZ", np.stack([P, T, S], axis=1)).as_matrix()
    return So3Grid(R, level)


def write_grid_csv(grid, path, extra=None):
    """Header ``M=<cells> V=<cell volume> [key=value ...]`` then one w,x,y,z quaternion per row."""
    path = Path(path)
    tail = "".join(f" {k}={v}" for k, v in (extra or {}).items())
    with path.open("w", newline="\n") as fh:
        fh.write(f"M={grid.size} V={grid.cell_volume!r}{tail}\n")
        for R in grid.rotations:
            fh.write(",".join(repr(float(v)) for v in to_quat(R)) + "\n")


def read_grid_csv(path):
    lines = Path(path).read_text().splitlines()
    header = dict(tok.split("=", 1) for tok in lines[0].split())
    quats = [from_quat([float(v) for v in ln.split(",")]) for ln in lines[1:] if ln.strip()]
    if int(header["M"]) != len(quats):
        raise InvalidInputError(f"header says M={header['M']} but file has {len(quats)} rows")
    return np.array(quats)


# ---------------------------------------------------------------- densities


@dataclass(frozen=True)
class So3GridDensity:
    grid: So3Grid
    log_scores: np.ndarray
    probabilities: np.ndarray

    def cell_masses(self):
        return self.probabilities * self.grid.cell_volume


def normalize(grid, log_scores):
    """Per-volume density ``softmax(log_scores) / V`` over the grid cells."""
    s = np.asarray(log_scores, dtype=float).reshape(-1)
    if s.size != grid.size:
        raise InvalidInputError(f"expected {grid.size} scores, got {s.size}")
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("log scores must be finite")
    e = np.exp(s - s.max())
    mass = e / e.sum()
    return So3GridDensity(grid, s, mass / grid.cell_volume)


def nearest_cell(grid, r):
    tr = grid.rotations.reshape(grid.size, 9) @ np.asarray(r, dtype=float).reshape(9)
    return int(np.argmax(tr))


def nll(density, r):
    """Negative log density of the grid cell geodesically nearest to ``r``."""
    p = density.probabilities[nearest_cell(density.grid, r)]
    return float(-np.log(p)) if p > 0 else float("inf")


def sample(density, rng_seed, n):
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    mass = density.cell_masses()
    idx = rng.choice(density.grid.size, size=n, p=mass / mass.sum())
    return density.grid.rotations[idx]


def chordal_mean(rotations):
    """argmin_R sum ||R - R_i||_F^2, via projection of the mean onto SO(3)."""
    Rs = np.asarray(rotations, dtype=float).reshape(-1, 3, 3)
    if Rs.shape[0] == 0:
        raise InvalidInputError("need at least one rotation")
    U, s, Vt = np.linalg.svd(Rs.mean(axis=0))
    if s[1] <= 1e-10 * max(s[0], 1e-300):
        raise DegenerateInputError("mean matrix has rank < 2; chordal mean undefined")
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt)) or 1.0])
    return U @ D @ Vt


def rotation_std(rotations):
    """RMS geodesic angle (degrees) from the samples to their chordal mean."""
    Rs = np.asarray(rotations, dtype=float).reshape(-1, 3, 3)
    m = chordal_mean(Rs)
    ang = geodesic_angles(Rs, m)
    return float(np.degrees(np.sqrt(np.mean(ang ** 2))))
