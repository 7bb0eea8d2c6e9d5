from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from demoforge.demo import Pose
from demoforge.repair import RepairConfig
from demoforge.replay import (
    DEMO_AUG,
    KEYFRAME,
    ReplayBuffer,
    ReplaySample,
    build_buffer,
    build_conventional,
    build_optimized,
    dedup,
    index_lines,
    make_cyclic_schedule,
    read_buffer,
    transition_draws,
    write_buffer,
)

from conftest import line, make_demo

NO_FILTER = RepairConfig(saliency_min_dist=0.0)


def enumerate_conventional(n_frames, kfs, interval):
    """Brute-force (type, obs, target) triples for the conventional rule."""
    out = []
    for t in range(0, n_frames, interval):
        if t in kfs or t >= kfs[-1]:
            continue
        nxt = min(k for k in kfs if k > t)
        out.append((DEMO_AUG, t, nxt))
        chain = [k for k in kfs if k >= nxt]
        out.extend((KEYFRAME, a, b) for a, b in zip(chain, chain[1:]))
    return out


def _triples(samples):
    return [(s.sample_type, s.obs_frame, s.target_frame) for s in samples]


def test_conventional_matches_oracle(demo100):
    got = build_conventional(demo100, 10)
    assert _triples(got) == enumerate_conventional(100, [30, 60, 99], 10)
    types = Counter(s.sample_type for s in got)
    assert types[DEMO_AUG] == 8
    assert sorted(s.obs_frame for s in got if s.sample_type == DEMO_AUG) == [0, 10, 20, 40, 50, 70, 80, 90]
    assert types[KEYFRAME] == 3 * 2 + 2 * 1 == 8


@settings(max_examples=60, deadline=None)
@given(st.integers(20, 150), st.integers(1, 25), st.data())
def test_conventional_oracle_property(n, interval, data):
    inner = data.draw(st.lists(st.integers(1, n - 2), max_size=8, unique=True))
    kfs = sorted(inner) + [n - 1]
    d = make_demo(line(n), tuple(kfs))
    assert _triples(build_conventional(d, interval)) == enumerate_conventional(n, kfs, interval)


def test_keyframes_at_every_obs_frame():
    d = make_demo(line(50), tuple(range(0, 50, 10)) + (49,))
    assert not [s for s in build_conventional(d, 10) if s.sample_type == DEMO_AUG]


def test_interval_longer_than_demo():
    d = make_demo(line(20), (10, 19))
    got = build_conventional(d, 100)
    assert {s.obs_frame for s in got if s.sample_type == DEMO_AUG} == {0}


def test_optimized_counts(demo100):
    got = build_optimized(demo100, 10)
    kf = [(s.obs_frame, s.target_frame) for s in got if s.sample_type == KEYFRAME]
    assert kf == [(30, 60), (60, 99)]
    assert len([s for s in got if s.sample_type == DEMO_AUG]) == 8
    assert build_optimized(demo100, 10) == got


def test_optimized_drops_static_obs():
    pos = line(100)
    pos[50] = pos[60]
    d = make_demo(pos, (30, 60, 99))
    obs = [s.obs_frame for s in build_optimized(d, 10) if s.sample_type == DEMO_AUG]
    assert 50 not in obs and len(obs) == 7


def test_dedup_equals_unfiltered_optimized(demo100):
    a = dedup(build_conventional(demo100, 10))
    b = build_optimized(demo100, 10, NO_FILTER)
    assert set(a) == set(b) and len(a) == len(b)


def test_dedup_trivia(demo100):
    s = build_optimized(demo100, 10)
    assert dedup(s) == s
    assert len(dedup(s + s[:1])) == len(s)


def test_reduction_property():
    for n_kf in (3, 5, 8):
        kfs = tuple(np.linspace(0, 199, n_kf + 1).astype(int)[1:])
        d = make_demo(line(200, step=(0.002, 0, 0)), kfs)
        assert len(build_optimized(d, 10)) < len(build_conventional(d, 10))


# --- schedule ---


def _buffer(n_kf, n_aug):
    pose = Pose((0, 0, 1), (0, 0, 0, 1))
    from demoforge.demo import ActionRecord

    s = [ReplaySample(KEYFRAME, "d", i, i + 1, ActionRecord(pose), "x", pose, transition=i + 1) for i in range(n_kf)]
    s += [ReplaySample(DEMO_AUG, "d", 100 + i, 200, ActionRecord(pose), "x", pose, transition=0) for i in range(n_aug)]
    return ReplayBuffer(tuple(s), "optimized")


def _types(buf, sched):
    return "".join("K" if buf.samples[i].sample_type == KEYFRAME else "D" for i in sched.permutation)


def test_schedule_alternates_equal_classes():
    b = _buffer(4, 4)
    assert _types(b, make_cyclic_schedule(b, 0, 8)) == "KDKDKDKD"


def test_schedule_minority_exhaustion():
    b = _buffer(2, 6)
    assert _types(b, make_cyclic_schedule(b, 0, 8)) == "KDKDDDDD"


def test_schedule_transition_counts():
    demos = [make_demo(line(40), (10, 20, 30, 39), demo_id=f"d{i}") for i in range(10)]
    buf = ReplayBuffer(tuple(s for d in demos for s in build_optimized(d, 100) if s.sample_type == KEYFRAME), "optimized")
    assert len(buf) == 30
    sched = make_cyclic_schedule(buf, 5, 30)
    per_ordinal = Counter(buf.samples[i].transition for i in sched.permutation)
    assert dict(per_ordinal) == {1: 10, 2: 10, 3: 10}


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6))
def test_schedule_permutation_and_balance(seed, n_demos):
    demos = [make_demo(line(100), (30, 60, 99), demo_id=f"d{i}") for i in range(n_demos)]
    buf = build_buffer(demos, "optimized", 10)
    s1 = make_cyclic_schedule(buf, seed)
    assert sorted(s1.permutation) == list(range(len(buf)))
    assert make_cyclic_schedule(buf, seed).permutation == s1.permutation
    half = s1.permutation[: len(buf) // 2]
    counts = transition_draws(buf, half, KEYFRAME)
    assert max(counts.values()) - min(counts.values()) <= 1


def test_schedule_rejects_empty():
    with pytest.raises(ValueError):
        make_cyclic_schedule(ReplayBuffer((), "optimized"), 0)


def test_single_type_buffer_flagged():
    b = _buffer(3, 0)
    assert make_cyclic_schedule(b, 0).degenerate


# --- persistence ---


def test_buffer_roundtrip(tmp_path, demo100):
    buf = build_buffer([demo100], "conventional", 10)
    write_buffer(buf, tmp_path / "b")
    back = read_buffer(tmp_path / "b")
    assert back.samples == buf.samples
    write_buffer(back, tmp_path / "c")
    assert (tmp_path / "b" / "buffer_index.jsonl").read_bytes() == (tmp_path / "c" / "buffer_index.jsonl").read_bytes()


def test_index_line_is_compact_json(demo100):
    line0 = next(iter(index_lines(build_optimized(demo100, 10))))
    assert line0.endswith("\n") and ", " not in line0


def test_threads_do_not_change_output():
    demos = [make_demo(line(100), (30, 60, 99), demo_id=f"d{i}") for i in range(8)]
    assert build_buffer(demos, "conventional", 10, threads=4) == build_buffer(demos, "conventional", 10)


def test_unknown_strategy():
    with pytest.raises(ValueError):
        build_buffer([], "lazy")
