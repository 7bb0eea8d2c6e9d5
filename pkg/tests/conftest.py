import numpy as np
import pytest

from demoforge.demo import ActionRecord, Demonstration, Frame, PointCloud, Pose, Workspace

WS = Workspace()
DOWN = (1.0, 0.0, 0.0, 0.0)  # 180 deg about x


def make_demo(positions, keyframes, grip=None, demo_id="d0", instruction="do the thing", dt=0.05, clouds=False):
    positions = np.asarray(positions, dtype=np.float64)
    n = len(positions)
    grip = np.ones(n, dtype=int) if grip is None else np.asarray(grip)
    frames, store = [], {}
    for i in range(n):
        ref = f"frame_{i:04d}.bpc"
        frames.append(Frame(i, round(i * dt, 6), ActionRecord(Pose.from_arrays(positions[i], DOWN), int(grip[i]), 0), ref))
        if clouds:
            store[ref] = PointCloud(positions[i][None, :] + [[0, 0, 0], [0.01, 0, 0]], [[255, 0, 0], [0, 0, 255]])
    return Demonstration(demo_id, "task", instruction, tuple(frames), tuple(keyframes), clouds=store)


def line(n, start=(0.0, 0.0, 1.0), step=(0.004, 0.0, 0.0)):
    return np.asarray(start) + np.arange(n)[:, None] * np.asarray(step)


@pytest.fixture
def ws():
    return WS


@pytest.fixture
def demo100():
    """100-frame straight demo with keyframes 30, 60, 99."""
    return make_demo(line(100), (30, 60, 99))
