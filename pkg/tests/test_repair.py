import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.spatial.transform import Rotation

from demoforge.demo import Pose, Workspace
from demoforge.replay import DEMO_AUG, KEYFRAME, ReplaySample
from demoforge.demo import ActionRecord
from demoforge.repair import (
    NotApplicable,
    RepairConfig,
    RiskZone,
    apply_height_clearance,
    discover_keyframes,
    insert_defensive_viapoints,
    insert_via_keyframes,
    motion_saliency_filter,
    retreat_boundary_keyposes,
    retreat_keypose,
    segment_hits_box,
)
from demoforge.synth import WORKSPACE, ZIGZAG_CORNERS, ZIGZAG_SEGMENT, scenario_risk_zones, synth_demo

from conftest import line, make_demo

WS = Workspace()


def _yaw(q):
    return Rotation.from_quat(q).as_euler("zyx")[0]


def _aug(obs, target, kind=DEMO_AUG):
    return ReplaySample(kind, "d", 0, 1, ActionRecord(Pose.from_arrays(target)), "i", Pose.from_arrays(obs))


# --- keyframe discovery ---


def test_gripper_flip_is_keyframe():
    grip = np.ones(100, dtype=int)
    grip[40:] = 0
    assert 40 in discover_keyframes(make_demo(line(100), (99,), grip=grip))


def test_constant_velocity_gives_last_frame_only():
    assert discover_keyframes(make_demo(line(100), (99,))) == [99]


def _scan_oracle(pos, dt, eps):
    """Direct scan: stop = speed under eps right after a frame above it."""
    v = [None] + [np.linalg.norm(pos[i] - pos[i - 1]) / dt for i in range(1, len(pos))]
    out = [i for i in range(2, len(pos)) if v[i] < eps and v[i - 1] >= eps]
    if not out or out[-1] != len(pos) - 1:
        out.append(len(pos) - 1)
    return out


def test_velocity_dips_at_30_and_70():
    step = np.full(100, 0.004)
    step[[30, 70]] = 0.0
    step[0] = 0.0
    pos = np.zeros((100, 3)) + [0.0, 0.0, 1.0]
    pos[:, 0] = np.cumsum(step)
    got = discover_keyframes(make_demo(pos, (99,)))
    assert got == _scan_oracle(pos, 0.05, 0.002) == [30, 70, 99]


def test_synthetic_demos_recover_their_keyframes():
    for scenario in ("pick_place", "drawer_boundary", "low_clearance", "cluttered_zone"):
        d = synth_demo(scenario, seed=3, with_clouds=False)
        assert discover_keyframes(d) == list(d.keyframe_indices), scenario


# --- saliency ---


def test_saliency_examples():
    keep = _aug((0, 0, 0), (0, 0, 0.05))
    drop = _aug((0, 0, 0), (0, 0, 0))
    kf = _aug((0, 0, 0), (0, 0, 0), kind=KEYFRAME)
    assert motion_saliency_filter([keep, drop, kf], 0.02) == [keep, kf]


def test_saliency_count_matches_scan():
    rng = np.random.default_rng(11)
    d = rng.uniform(0, 0.04, 100)
    samples = [_aug((0, 0, 0), (x, 0, 0)) for x in d]
    kept = motion_saliency_filter(samples, 0.02)
    assert len(kept) == sum(1 for x in d if x > 0.02)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 0.1), min_size=0, max_size=30), st.floats(0, 0.05))
def test_saliency_idempotent(dists, thr):
    s = [_aug((0, 0, 0), (x, 0, 0)) for x in dists]
    once = motion_saliency_filter(s, thr)
    assert motion_saliency_filter(once, thr) == once
    assert all(np.linalg.norm(x.obs_pose.xyz - x.target_action.pose.xyz) > thr for x in once)


# --- retreat ---

EDGE = np.array([0.68, 0.0, 1.0])


def test_retreat_linear():
    ws = Workspace(aabb_min=(-0.5, -0.5, -0.5), aabb_max=(1.02, 0.5, 0.5), floor_z=-0.5)
    r = retreat_keypose(Pose((0, 0, 0), (0, 0, 0, 1)), Pose((1, 0, 0), (0, 0, 0, 1)), 0.8, ws)
    np.testing.assert_allclose(r.xyz, [0.8, 0, 0], atol=1e-12)


def test_retreat_alpha_one_is_identity():
    tgt = Pose.from_arrays(EDGE, Rotation.from_euler("z", 0.3).as_quat())
    r = retreat_keypose(Pose.from_arrays((0.2, 0.0, 1.0)), tgt, 1.0, WS)
    np.testing.assert_allclose(r.xyz, tgt.xyz, atol=1e-12)
    assert abs(abs(np.dot(r.quat, tgt.quat)) - 1) < 1e-12


def test_retreat_yaw_slerp():
    prev = Pose.from_arrays((0.2, 0.0, 1.0), Rotation.from_euler("z", 0).as_quat())
    tgt = Pose.from_arrays(EDGE, Rotation.from_euler("z", 90, degrees=True).as_quat())
    r = retreat_keypose(prev, tgt, 0.85, WS)
    assert math.degrees(_yaw(r.quat)) == pytest.approx(76.5, abs=1e-9)


def test_retreat_not_applicable_away_from_boundary():
    with pytest.raises(NotApplicable):
        retreat_keypose(Pose.from_arrays((0, 0, 1)), Pose.from_arrays((0.2, 0, 1.1)), 0.85, WS)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_retreat_monotone(a1, a2):
    assume(a1 < a2)
    prev = Pose.from_arrays((0.1, 0.1, 1.0))
    tgt = Pose.from_arrays(EDGE)
    d1 = np.linalg.norm(retreat_keypose(prev, tgt, a1, WS).xyz - prev.xyz)
    d2 = np.linalg.norm(retreat_keypose(prev, tgt, a2, WS).xyz - prev.xyz)
    assert d1 < d2


def test_retreat_along_path_hits_arc_fraction():
    d = synth_demo("drawer_boundary", seed=1, with_clouds=False)
    cfg = RepairConfig(retreat_along_path=True)
    out = retreat_boundary_keyposes(d, cfg, WORKSPACE)
    moved = [k for k in out if k.origin == "retreat"]
    assert len(moved) == 1
    kfs = list(d.keyframe_indices)
    n = kfs.index(moved[0].frame)
    path = d.positions()[kfs[n - 1] : kfs[n] + 1]
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    before = moved[0].pose.xyz
    # arc length from path start to the retreated point, measured segment by segment
    cum = np.concatenate([[0], np.cumsum(seg)])
    i = int(np.searchsorted(cum, 0.85 * cum[-1], side="right") - 1)
    arc = cum[i] + np.linalg.norm(before - path[i])
    assert abs(arc / cum[-1] - 0.85) < 1e-9


# --- curvature via-points ---


def _turn_oracle(pos, a, b, count):
    """Brute force: rank interior frames by turning angle between incoming and outgoing steps."""
    ang = {}
    for j in range(a + 1, b):
        u, w = pos[j] - pos[j - 1], pos[j + 1] - pos[j]
        c = np.dot(u, w) / (np.linalg.norm(u) * np.linalg.norm(w))
        ang[j] = math.acos(np.clip(c, -1, 1))
    return sorted(sorted(ang, key=lambda j: -ang[j])[:count])


def test_zigzag_corners():
    d = synth_demo("zigzag_wipe", seed=0, with_clouds=False)
    got = insert_via_keyframes(d, ZIGZAG_SEGMENT, 2)
    assert got == list(ZIGZAG_CORNERS) == _turn_oracle(d.positions(), *ZIGZAG_SEGMENT, 2)


@pytest.mark.parametrize("seed", range(5))
def test_zigzag_corners_any_seed(seed):
    d = synth_demo("zigzag_wipe", seed=seed, with_clouds=False)
    assert insert_via_keyframes(d, ZIGZAG_SEGMENT, 2) == [25, 55]


def test_straight_line_lowest_index_wins():
    d = make_demo(line(50), (49,))
    assert insert_via_keyframes(d, (0, 49), 1) == [1]
    assert insert_via_keyframes(d, (0, 49), 0) == []


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_via_points_interior_and_spaced(seed, count):
    rng = np.random.default_rng(seed)
    pos = np.cumsum(rng.normal(0, 0.01, (30, 3)), axis=0) + [0, 0, 1]
    d = make_demo(pos, (29,))
    got = insert_via_keyframes(d, (3, 25), count)
    assert len(got) == count
    assert all(3 < g < 25 for g in got)
    assert all(b - a >= 2 for a, b in zip(got, got[1:]))


# --- clearance ---


def test_clearance_examples():
    fz = 0.752
    low = Pose((0.0, 0.0, fz + 0.001), (0, 0, 0, 1))
    high = Pose((0.0, 0.0, fz + 0.5), (0, 0, 0, 1))
    out = apply_height_clearance([low, high], fz, 0.008)
    assert out[0].position[2] == fz + 0.008
    assert out[1] == high
    assert apply_height_clearance([low, high], fz, 0.0) == [low, high]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.6, 1.6), min_size=1, max_size=20), st.floats(0, 0.05))
def test_clearance_postcondition(zs, delta):
    fz = 0.752
    out = apply_height_clearance([Pose((0, 0, z), (0, 0, 0, 1)) for z in zs], fz, delta)
    assert min(p.position[2] for p in out) >= fz + delta


def test_low_clearance_scenario_repaired():
    d = synth_demo("low_clearance", seed=7, with_clouds=False)
    kp = d.keyposes()
    assert min(p.position[2] for p in kp) < WORKSPACE.floor_z + 0.008
    fixed = apply_height_clearance(kp, WORKSPACE.floor_z, 0.008)
    assert min(p.position[2] for p in fixed) >= WORKSPACE.floor_z + 0.008


# --- defensive via-points ---

ZONE = RiskZone((0.4, -0.1, -0.1), (0.6, 0.1, 0.1), Pose((0.5, 0.0, 0.3), (0, 0, 0, 1)))


def _crosses(p0, p1, lo, hi, n=20001):
    t = np.linspace(0, 1, n)[:, None]
    pts = np.asarray(p0) + t * (np.asarray(p1) - np.asarray(p0))
    return bool(np.any(np.all((pts >= lo) & (pts <= hi), axis=1)))


def test_defensive_single_crossing():
    d = make_demo([(0, 0, 0), (1, 0, 0)], (0, 1))
    out = insert_defensive_viapoints(d, [ZONE])
    assert [k.origin for k in out] == ["demo", "defensive", "demo"]
    assert out[1].pose == ZONE.prep_pose


def test_defensive_no_crossing():
    d = make_demo([(0, 1, 0), (1, 1, 0)], (0, 1))
    assert [k.origin for k in insert_defensive_viapoints(d, [ZONE])] == ["demo", "demo"]


def test_defensive_two_consecutive_segments():
    pts = [(0, 0, 0), (1, 0, 0), (0, 0.05, 0.05)]
    d = make_demo(pts, (0, 1, 2))
    out = insert_defensive_viapoints(d, [ZONE])
    expected = sum(_crosses(pts[i], pts[i + 1], ZONE.lo, ZONE.hi) for i in range(2))
    assert expected == 2
    assert [k.origin for k in out].count("defensive") == 2
    assert [k.origin for k in out] == ["demo", "defensive", "demo", "defensive", "demo"]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1, 2), min_size=6, max_size=6))
def test_slab_test_matches_sampling(c):
    p0, p1 = c[:3], c[3:]
    hit = segment_hits_box(p0, p1, ZONE.lo, ZONE.hi) is not None
    sampled = _crosses(p0, p1, ZONE.lo, ZONE.hi)
    # sampling can only miss grazing hits
    assert hit or not sampled
    if hit and not sampled:
        assert _crosses(p0, p1, np.array(ZONE.lo) - 1e-3, np.array(ZONE.hi) + 1e-3)


def test_cluttered_zone_scenario():
    d = synth_demo("cluttered_zone", seed=2, with_clouds=False)
    zones = scenario_risk_zones("cluttered_zone", d)
    kp = [p.xyz for p in d.keyposes()]
    crossings = sum(_crosses(kp[i], kp[i + 1], zones[0].lo, zones[0].hi) for i in range(len(kp) - 1))
    out = insert_defensive_viapoints(d, zones, WORKSPACE)
    assert [k.origin for k in out].count("defensive") == crossings >= 2


def test_prep_pose_outside_workspace_rejected():
    d = make_demo([(0, 0, 1), (0.2, 0, 1)], (0, 1))
    bad = RiskZone((0, 0, 0), (1, 1, 1), Pose((5, 0, 0), (0, 0, 0, 1)))
    with pytest.raises(ValueError):
        insert_defensive_viapoints(d, [bad], WS)
