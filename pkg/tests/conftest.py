import sys

import numpy as np
import pytest

from dexgrasp.hand import default_hand
from dexgrasp.scene import box_scene, sphere_scene


@pytest.fixture(scope="session")
def model():
    return default_hand()


@pytest.fixture(scope="session")
def sphere():
    return sphere_scene(0.04, 2048)


@pytest.fixture(scope="session")
def box():
    return box_scene(0.08, 2048)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def first_valid_grasp(scene, model, seeds=range(12)):
    from dataclasses import replace

    from dexgrasp.records import OptimizerConfig
    from dexgrasp.synthesis import synthesize, validate

    for s in seeds:
        rec = synthesize(scene, model, config=replace(OptimizerConfig(), seed=s))
        if validate(scene, model, rec).passed:
            return rec
    raise RuntimeError("no validated grasp in the seed range")


@pytest.fixture(scope="session")
def sphere_grasp(model, sphere):
    return first_valid_grasp(sphere, model)


@pytest.fixture(scope="session")
def box_grasp(model, box):
    return first_valid_grasp(box, model)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.LINES:
        terminalreporter.section("acceptance criteria")
        for line in mod.LINES:
            terminalreporter.write_line(line)
