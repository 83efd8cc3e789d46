"""Dexterous grasp synthesis, evaluation and goal-conditioned policy support."""
from ._accel import BACKEND
from .errors import (CapacityError, DegenerateInputError, DescriptorError, DexgraspError, DivergedError,
                     IndeterminateError, InvalidInputError, SchemaError, UndefinedEnergyError)
from .hand import HandModel, HandPose, default_hand, load_hand
from .records import GraspRecord, RunConfig, load_config, read_records, write_records
from .scene import Scene, box_scene, load_scene, sphere_scene
from .so3 import RigidTransform

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CapacityError",
    "DegenerateInputError",
    "DescriptorError",
    "DexgraspError",
    "DivergedError",
    "GraspRecord",
    "HandModel",
    "HandPose",
    "IndeterminateError",
    "InvalidInputError",
    "RigidTransform",
    "RunConfig",
    "Scene",
    "SchemaError",
    "UndefinedEnergyError",
    "box_scene",
    "default_hand",
    "load_config",
    "load_hand",
    "load_scene",
    "read_records",
    "sphere_scene",
    "write_records",
]
