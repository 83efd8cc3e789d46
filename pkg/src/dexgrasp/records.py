"""Grasp records (JSON lines) and the run configuration file."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np

from .energies import SynthesisWeights, TtaWeights
from .errors import InvalidInputError, SchemaError
from .hand import HandPose
from .so3 import RigidTransform

SCHEMA_VERSION = "1.0"
SCALES = (0.06, 0.08, 0.10, 0.12, 0.15)


def _major(version):
    return int(str(version).split(".")[0])


def check_version(version, what="record"):
    if _major(version) > _major(SCHEMA_VERSION):
        raise SchemaError(f"{what} schema {version} is newer than supported {SCHEMA_VERSION}")


@dataclass
class GraspRecord:
    object_id: str
    scale: float
    object_pose: RigidTransform
    hand_pose: HandPose
    metrics: dict = field(default_factory=dict)
    seed: int = 0
    config_hash: str = ""
    trajectory: object = field(default=None, repr=False, compare=False)

    def validate(self, strict=True):
        if strict and not any(abs(self.scale - s) < 1e-12 for s in SCALES):
            raise InvalidInputError(f"scale {self.scale} is not one of {SCALES}")
        if not (np.all(np.isfinite(self.hand_pose.translation)) and np.all(np.isfinite(self.hand_pose.q))):
            raise InvalidInputError("hand pose must be finite")
        return self

    def to_dict(self):
        return {
            "schema": SCHEMA_VERSION,
            "object_id": self.object_id,
            "scale": float(self.scale),
            "object_pose": {"rotation": self.object_pose.rotation.tolist(),
                            "translation": self.object_pose.translation.tolist()},
            "hand_pose": {"rotation": self.hand_pose.rotation.tolist(),
                          "translation": self.hand_pose.translation.tolist(),
                          "q": self.hand_pose.q.tolist()},
            "metrics": {k: _plain(v) for k, v in sorted(self.metrics.items())},
            "provenance": {"seed": int(self.seed), "config_hash": self.config_hash},
        }

    @classmethod
    def from_dict(cls, d, strict=False):
        check_version(d.get("schema", SCHEMA_VERSION))
        op, hp = d["object_pose"], d["hand_pose"]
        rec = cls(str(d["object_id"]), float(d["scale"]),
                  RigidTransform(np.array(op["rotation"]), np.array(op["translation"])),
                  HandPose(RigidTransform(np.array(hp["rotation"]), np.array(hp["translation"])), np.array(hp["q"])),
                  dict(d.get("metrics", {})), int(d.get("provenance", {}).get("seed", 0)),
                  str(d.get("provenance", {}).get("config_hash", "")))
        return rec.validate(strict) if strict else rec


def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


def dumps_record(rec):
    # repr-exact floats keep the round trip bit-identical
    return json.dumps(rec.to_dict(), sort_keys=True, separators=(",", ":"))


def write_records(path, records):
    with Path(path).open("w", newline="\n") as fh:
        for rec in records:
            fh.write(dumps_record(rec) + "\n")


def read_records(path, strict=False):
    out = []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(GraspRecord.from_dict(json.loads(line), strict))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"{path}:{lineno}: malformed record ({exc})") from exc
    return out


# ---------------------------------------------------------------- run configuration


@dataclass(frozen=True)
class OptimizerConfig:
    steps: int = 6000
    step_size: float = 1.0
    rotation_step: float = 0.05
    translation_step: float = 0.005
    joint_step: float = 0.02
    line_search: bool = True
    max_backtracks: int = 30
    growth: float = 1.5
    langevin: bool = False
    temperature: float = 1.0
    anneal: float = 0.999
    noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidInputError("steps must be >= 1")
        if not (self.step_size > 0 and self.rotation_step > 0 and self.translation_step > 0
                and self.joint_step > 0):
            raise InvalidInputError("step sizes must be positive")


TTA_OPTIMIZER = OptimizerConfig(steps=300, step_size=0.001, line_search=False)


@dataclass(frozen=True)
class RewardSettings:
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


@dataclass(frozen=True)
class QualitySettings:
    contact_tolerance: float = 0.01
    invalid_table_pen: float = 0.01
    invalid_obj_pen: float = 0.005
    q1_directions: int = 4096
    torque_scale: float = None
    direction_seed: int = 0
    refine_starts: int = 8
    max_penetration: float = 0.001
    mass: float = 0.1
    mu: float = 0.5
    cone_edges: int = 8


@dataclass(frozen=True)
class RunConfig:
    version: str = SCHEMA_VERSION
    synthesis_weights: SynthesisWeights = SynthesisWeights()
    optimizer: OptimizerConfig = OptimizerConfig()
    tta_weights: TtaWeights = TtaWeights()
    tta_optimizer: OptimizerConfig = TTA_OPTIMIZER
    quality: QualitySettings = QualitySettings()
    reward: RewardSettings = RewardSettings()
    hand_cloud_size: int = 2048
    scene_points: int = 2048
    beta: float = 60.0
    strict_scale: bool = True

    def to_dict(self):
        return asdict(self)

    def dumps(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def quality_config(self):
        from .quality import QualityConfig

        q = asdict(self.quality)
        q.pop("mu")
        q.pop("cone_edges")
        return QualityConfig(**q)

    def friction(self):
        from .quality import FrictionModel

        return FrictionModel(self.quality.mu, self.quality.cone_edges)


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise SchemaError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise SchemaError(f"{where}: unknown key(s) {unknown}")
    kw = {}
    for name, value in data.items():
        default = getattr(cls(), name) if cls is not RunConfig else getattr(RunConfig(), name)
        if is_dataclass(default):
            kw[name] = _build(type(default), value, f"{where}.{name}")
        else:
            kw[name] = value
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: {exc}") from exc


def config_from_dict(data):
    cfg = _build(RunConfig, data, "config")
    check_version(cfg.version, "config")
    return cfg


def load_config(path):
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)
