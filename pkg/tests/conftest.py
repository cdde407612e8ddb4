import sys

import numpy as np
import pytest

from mvslam.geometry import Pose, Quaternion, quat_to_rot


def random_rotation(rng) -> np.ndarray:
    q = rng.normal(size=4)
    return quat_to_rot(Quaternion(*q))


def random_pose(rng, scale=1.0, scaled=True) -> Pose:
    return Pose(random_rotation(rng), rng.normal(size=3) * scale, scaled)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
