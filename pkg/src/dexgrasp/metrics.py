"""Diversity, pose-error and execution-success metrics."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .hand import keypoints
from .so3 import rotation_std

LIFT_HEIGHT = 0.3
SUCCESS_RADIUS = 0.05
SAME_ROTATION_TOL = 1e-9
CSV_COLUMNS = ("method", "q1", "obj_pen_cm", "sigma_R_deg", "sigma_T_given_R_cm", "sigma_theta_given_R_deg",
               "sigma_keypoints_cm")


def _rms_std(values):
    # per-dimension population std, then RMS across dimensions
    return float(np.sqrt(np.mean(np.var(values, axis=0)))) if values.shape[1] else 0.0


def same_rotation(poses, tol=SAME_ROTATION_TOL):
    R0 = poses[0].rotation
    return all(np.abs(p.rotation - R0).max() <= tol for p in poses[1:])


def conditional_std(poses):
    """Spread of translation (cm) and joint angles (degrees) among poses sharing one rotation."""
    poses = list(poses)
    if len(poses) < 2:
        raise InvalidInputError("conditional_std needs at least 2 poses")
    if not same_rotation(poses):
        raise InvalidInputError("conditional_std needs poses that share one root rotation")
    t = np.array([p.translation for p in poses])
    q = np.array([p.q for p in poses])
    return 100.0 * _rms_std(t), float(np.degrees(_rms_std(q)))


def keypoint_std(model, poses):
    """Mean over keypoints of the RMS distance to that keypoint's mean position (cm)."""
    poses = list(poses)
    if len(poses) < 2:
        raise InvalidInputError("keypoint_std needs at least 2 poses")
    kp = np.array([keypoints(model, p) for p in poses])
    spread = np.sqrt(((kp - kp.mean(axis=0)) ** 2).sum(axis=2).mean(axis=0))
    return 100.0 * float(spread.mean())


def mpe(model, pose, goal):
    """Mean keypoint position error between two poses of the same hand (cm)."""
    d = np.linalg.norm(keypoints(model, pose) - keypoints(model, goal), axis=1)
    return 100.0 * float(d.mean())


def success(object_pos, initial_pos):
    """Lift succeeded iff the object ends within 5 cm of 0.3 m above its start."""
    object_pos = np.asarray(object_pos, dtype=float)
    initial_pos = np.asarray(initial_pos, dtype=float)
    if not (np.all(np.isfinite(object_pos)) and np.all(np.isfinite(initial_pos))):
        raise InvalidInputError("positions must be finite")
    target = initial_pos + np.array([0.0, 0.0, LIFT_HEIGHT])
    return bool(np.linalg.norm(object_pos - target) < SUCCESS_RADIUS)


def rotation_groups(poses, tol=SAME_ROTATION_TOL):
    """Indices of poses grouped by (numerically) identical root rotation, in first-seen order."""
    groups = []
    for i, p in enumerate(poses):
        for g in groups:
            if np.abs(poses[g[0]].rotation - p.rotation).max() <= tol:
                g.append(i)
                break
        else:
            groups.append([i])
    return groups


@dataclass
class MetricReport:
    """Aggregate metrics of a grasp set; ``None`` marks a value that does not apply."""

    count: int
    sigma_R: float
    sigma_T_given_R: float
    sigma_theta_given_R: float
    sigma_keypoints: float
    q1_mean: float = None
    q1_std: float = None
    penetration_mean: float = None
    penetration_max: float = None

    def row(self, method=""):
        pen = None if self.penetration_mean is None else 100.0 * self.penetration_mean
        return {"method": method, "q1": self.q1_mean, "obj_pen_cm": pen, "sigma_R_deg": self.sigma_R,
                "sigma_T_given_R_cm": self.sigma_T_given_R, "sigma_theta_given_R_deg": self.sigma_theta_given_R,
                "sigma_keypoints_cm": self.sigma_keypoints}


def metric_report(model, poses, q1_values=None, penetrations=None):
    """Diversity of a pose set plus optional Q1 / penetration statistics.

    A single pose gives 0 for every spread. Conditional spreads average the
    groups that share a rotation and have at least two members; if there is
    no such group they are reported as not applicable.
    """
    poses = list(poses)
    if not poses:
        raise InvalidInputError("metric_report needs at least one pose")
    n = len(poses)
    if n == 1:
        sig_r = sig_t = sig_q = sig_k = 0.0
    else:
        sig_r = rotation_std([p.rotation for p in poses])
        sig_k = keypoint_std(model, poses)
        groups = [g for g in rotation_groups(poses) if len(g) >= 2]
        if groups:
            vals = np.array([conditional_std([poses[i] for i in g]) for g in groups])
            sig_t, sig_q = float(vals[:, 0].mean()), float(vals[:, 1].mean())
        else:
            sig_t = sig_q = None
    rep = MetricReport(n, sig_r, sig_t, sig_q, sig_k)
    if q1_values is not None and len(q1_values):
        q = np.asarray(q1_values, dtype=float)
        rep.q1_mean, rep.q1_std = float(q.mean()), float(q.std())
    if penetrations is not None and len(penetrations):
        p = np.asarray(penetrations, dtype=float)
        rep.penetration_mean, rep.penetration_max = float(p.mean()), float(p.max())
    return rep


def _cell(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "n/a"
    return repr(float(v)) if not isinstance(v, str) else v


def metrics_csv(rows, header_comment=None):
    """CSV text in the table column order; ``rows`` are dicts from :meth:`MetricReport.row`."""
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in CSV_COLUMNS])
    return buf.getvalue()
