"""Deterministic synthetic demonstrations exhibiting specific data pathologies.

Scenarios:

``pick_place``       clean grasp-and-place demo
``zigzag_wipe``      wiping segment with two sharp corners (frames 25 and 55)
``drawer_boundary``  exactly one keypose within the workspace boundary margin
``low_clearance``    one keypose closer to the floor than 8 mm
``cluttered_zone``   two consecutive segments crossing a declared risk zone

Motion between keyposes follows a minimum-jerk profile, so the arm slows to a
stop at every keypose, then dwells while the gripper actuates.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from demoforge.demo import ActionRecord, Demonstration, Frame, PointCloud, Pose, Workspace
from demoforge.repair import RiskZone

SCENARIOS = ("pick_place", "zigzag_wipe", "drawer_boundary", "low_clearance", "cluttered_zone")
DT = 0.05
WORKSPACE = Workspace()

ZIGZAG_SEGMENT = (10, 80)
ZIGZAG_CORNERS = (25, 55)

TASK_NAMES = (
    "close_jar", "open_drawer", "slide_block", "sweep_to_dustpan", "meat_off_grill",
    "turn_tap", "put_in_drawer", "stack_cups", "place_cups", "place_wine",
    "push_buttons", "put_in_safe", "put_in_cupboard", "screw_bulb", "sort_shape",
    "stack_blocks", "insert_peg", "drag_stick",
)


def min_jerk(n: int) -> np.ndarray:
    """Progress s(τ) = 10τ³ - 15τ⁴ + 6τ⁵ sampled at τ = 1/n, ..., 1."""
    tau = np.arange(1, n + 1) / n
    return 10 * tau**3 - 15 * tau**4 + 6 * tau**5


def _yaw_quat(yaw: float) -> np.ndarray:
    # gripper pointing down, rotated about world z
    return (Rotation.from_euler("z", yaw) * Rotation.from_euler("x", np.pi)).as_quat()


def _waypoint_track(
    waypoints: Sequence[tuple[np.ndarray, np.ndarray, int]],
    seg_frames: Sequence[int],
    dwell: int,
):
    """Positions, quaternions, gripper flags and keyframe list positions.

    ``waypoints[0]`` is the start pose. Each later waypoint is reached after
    ``seg_frames[k]`` frames of min-jerk motion; the keyframe is the first
    frame at rest there, where the gripper flag switches. The final waypoint
    has no dwell and its arrival frame ends the demo.
    """
    pos = [np.asarray(waypoints[0][0], float)]
    quat = [np.asarray(waypoints[0][1], float)]
    grip = [waypoints[0][2]]
    keys = []
    last = len(waypoints) - 1
    for k in range(1, len(waypoints)):
        p0, q0, g0 = pos[-1], quat[-1], grip[-1]
        p1, q1, g1 = waypoints[k]
        s = min_jerk(seg_frames[k - 1])
        slerp = Slerp([0.0, 1.0], Rotation.from_quat(np.stack([q0, q1])))
        qs = slerp(s).as_quat()
        for si, qi in zip(s, qs):
            pos.append(p0 + si * (np.asarray(p1, float) - p0))
            quat.append(qi)
            grip.append(g0)
        if k == last:
            keys.append(len(pos) - 1)
            break
        for d in range(dwell):
            pos.append(pos[-1].copy())
            quat.append(quat[-1].copy())
            grip.append(g1)
        keys.append(len(pos) - dwell)
    return np.array(pos), np.array(quat), np.array(grip, dtype=int), keys


def _scene_cloud(rng: np.random.Generator, ws: Workspace, n_table: int = 400) -> PointCloud:
    lo, hi = ws.lo, ws.hi
    table = np.column_stack(
        [
            rng.uniform(lo[0] + 0.05, hi[0] - 0.05, n_table),
            rng.uniform(lo[1] + 0.05, hi[1] - 0.05, n_table),
            np.full(n_table, ws.floor_z),
        ]
    )
    table_rgb = np.tile([150, 120, 90], (n_table, 1))
    blocks, colors = [], []
    for color in ([200, 30, 30], [20, 20, 20], [30, 160, 40]):
        c = np.array([rng.uniform(lo[0] + 0.2, hi[0] - 0.2), rng.uniform(lo[1] + 0.2, hi[1] - 0.2), ws.floor_z + 0.025])
        blocks.append(c + rng.uniform(-0.025, 0.025, (60, 3)))
        colors.append(np.tile(color, (60, 1)))
    return PointCloud(np.vstack([table, *blocks]), np.vstack([table_rgb, *colors]))


def _gripper_points(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    offs = np.array([[0, 0, 0], [0.01, 0, 0], [-0.01, 0, 0], [0, 0.01, 0], [0, -0.01, 0], [0, 0, 0.02]])
    return p + offs, np.tile([90, 90, 200], (len(offs), 1))


def _assemble(
    demo_id: str,
    task: str,
    instruction: str,
    pos: np.ndarray,
    quat: np.ndarray,
    grip: np.ndarray,
    keys: list[int],
    scene: PointCloud | None,
) -> Demonstration:
    frames = []
    clouds = {}
    for i in range(len(pos)):
        ref = f"frame_{i:04d}.bpc"
        action = ActionRecord(Pose.from_arrays(pos[i], quat[i]), int(grip[i]), 0)
        frames.append(Frame(i, round(i * DT, 6), action, ref))
        if scene is not None:
            gp, gc = _gripper_points(pos[i])
            clouds[ref] = PointCloud(np.vstack([scene.xyz, gp]), np.vstack([scene.rgb, gc]))
    return Demonstration(demo_id, task, instruction, tuple(frames), tuple(keys), clouds=clouds)


def _pick_place_waypoints(rng: np.random.Generator, ws: Workspace):
    lo, hi, fz = ws.lo, ws.hi, ws.floor_z
    grasp = np.array([rng.uniform(lo[0] + 0.25, hi[0] - 0.45), rng.uniform(lo[1] + 0.2, hi[1] - 0.2), fz + 0.03])
    place = np.array([rng.uniform(lo[0] + 0.55, hi[0] - 0.2), rng.uniform(lo[1] + 0.2, hi[1] - 0.2), fz + 0.05])
    yaw = rng.uniform(-0.5, 0.5)
    q = _yaw_quat(yaw)
    up = np.array([0, 0, 0.15])
    start = np.array([(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, fz + 0.45])
    return [
        (start, _yaw_quat(0.0), 1),
        (grasp + up, q, 1),
        (grasp, q, 0),
        (grasp + up, q, 0),
        (place + up, q, 0),
        (place, q, 1),
        (place + up, q, 1),
    ]


def synth_demo(scenario: str, seed: int = 0, ws: Workspace = WORKSPACE, with_clouds: bool = True) -> Demonstration:
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
    rng = np.random.default_rng([seed, SCENARIOS.index(scenario)])
    scene = _scene_cloud(rng, ws) if with_clouds else None
    demo_id = f"{scenario}_{seed:04d}"

    if scenario == "zigzag_wipe":
        return _zigzag(rng, ws, demo_id, scene)

    wps = _pick_place_waypoints(rng, ws)
    task, instruction = "pick_place", "pick up the red block and place it on the green pad"
    if scenario == "drawer_boundary":
        handle = np.array([ws.hi[0] - 0.02, rng.uniform(-0.1, 0.1), ws.floor_z + 0.2])
        q = _yaw_quat(0.0)
        wps = [
            wps[0],
            (handle - [0.15, 0, 0], q, 1),
            (handle, q, 0),
            (handle - [0.3, 0, 0], q, 0),
            (handle + [-0.3, 0, 0.15], q, 1),
        ]
        task, instruction = "open_drawer", "open the top drawer"
    elif scenario == "low_clearance":
        p, q, g = wps[2]
        wps[2] = (np.array([p[0], p[1], ws.floor_z + 0.003]), q, g)
        task, instruction = "hockey", "hit the ball into the net"
    elif scenario == "cluttered_zone":
        task, instruction = "empty_dishwasher", "take the plate out of the dishwasher"

    seg = [int(v) for v in rng.integers(18, 26, len(wps) - 1)]
    pos, quat, grip, keys = _waypoint_track(wps, seg, dwell=4)
    return _assemble(demo_id, task, instruction, pos, quat, grip, keys, scene)


def _zigzag(rng, ws: Workspace, demo_id: str, scene) -> Demonstration:
    a, c1, c2 = ZIGZAG_SEGMENT[0], *ZIGZAG_CORNERS
    b = ZIGZAG_SEGMENT[1]
    z = ws.floor_z + 0.02
    x0 = ws.lo[0] + 0.25
    p_start = np.array([x0, -0.2, z + 0.3])
    p_a = np.array([x0, -0.2, z])
    p_c1 = p_a + [0.3, 0.0, 0.0]
    p_c2 = p_c1 + [0.0, 0.3, 0.0]
    p_b = p_c2 + [-0.3, 0.0, 0.0]
    p_end = p_b + [0.0, 0.0, 0.3]
    legs = [(0, a, p_start, p_a), (a, c1, p_a, p_c1), (c1, c2, p_c1, p_c2), (c2, b, p_c2, p_b), (b, 99, p_b, p_end)]
    pos = np.zeros((100, 3))
    for f0, f1, q0, q1 in legs:
        t = (np.arange(f0, f1 + 1) - f0) / (f1 - f0)
        pos[f0 : f1 + 1] = q0 + t[:, None] * (q1 - q0)
    pos[1:-1] += rng.normal(0.0, 1e-4, (98, 3))
    quat = np.tile(_yaw_quat(0.0), (100, 1))
    grip = np.zeros(100, dtype=int)
    keys = [a, b, 99]
    return _assemble(demo_id, "wipe_desk", "wipe dirt off the desk", pos, quat, grip, keys, scene)


def scenario_risk_zones(scenario: str, demo: Demonstration) -> list[RiskZone]:
    """Risk zones matching the scenario; only ``cluttered_zone`` declares one.

    The zone is a box around the midpoint of the chord between keyposes 3 and
    4, reaching out to cover the midpoint of chord 4 to 5 as well.
    """
    if scenario != "cluttered_zone":
        return []
    kp = [p.xyz for p in demo.keyposes()]
    m1 = (kp[2] + kp[3]) / 2
    m2 = (kp[3] + kp[4]) / 2
    lo = np.minimum(m1, m2) - 0.03
    hi = np.maximum(m1, m2) + 0.03
    prep = Pose.from_arrays((m1 + m2) / 2 + [0, 0, 0.12], demo.keyposes()[3].orientation)
    return [RiskZone(tuple(lo), tuple(hi), prep)]


# --- corpus ------------------------------------------------------------------


def synth_corpus(
    n_tasks: int = 18,
    n_demos: int = 100,
    n_keyframes: int = 8,
    n_frames: int = 200,
    seed: int = 0,
    ws: Workspace = WORKSPACE,
) -> list[Demonstration]:
    """Cloud-free demos for buffer accounting: keyposes drawn inside the workspace."""
    demos = []
    for t in range(n_tasks):
        task = TASK_NAMES[t % len(TASK_NAMES)] + ("" if t < len(TASK_NAMES) else f"_{t}")
        instruction = task.replace("_", " ")
        for d in range(n_demos):
            rng = np.random.default_rng([seed, t, d])
            demos.append(_corpus_demo(rng, f"{task}_{d:04d}", task, instruction, n_keyframes, n_frames, ws))
    return demos


def _corpus_demo(rng, demo_id, task, instruction, n_kf, n_frames, ws) -> Demonstration:
    lo = ws.lo + 0.1
    hi = ws.hi - 0.1
    lo[2] = ws.floor_z + 0.02
    pts = rng.uniform(lo, hi, (n_kf + 1, 3))
    grip = [1]
    for _ in range(n_kf):
        grip.append(grip[-1] if rng.random() < 0.5 else 1 - grip[-1])
    wps = [(pts[k], _yaw_quat(rng.uniform(-np.pi / 2, np.pi / 2)), grip[k]) for k in range(n_kf + 1)]
    dwell = 3
    budget = n_frames - 1 - dwell * (n_kf - 1)
    cuts = np.sort(rng.choice(np.arange(1, budget), n_kf - 1, replace=False))
    seg = np.diff(np.concatenate([[0], cuts, [budget]]))
    seg = np.maximum(seg, 4)
    pos, quat, g, keys = _waypoint_track(wps, [int(s) for s in seg], dwell)
    return _assemble(demo_id, task, instruction, pos, quat, g, keys, None)
