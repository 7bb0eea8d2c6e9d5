"""Replay buffer construction (conventional and optimized) and the cyclic schedule.

The conventional strategy reproduces the classic keyframe buffer: every
observation frame re-emits the whole chain of subsequent keyframe samples.
The optimized strategy emits each keyframe transition once per demo, each
observation sample once, and then drops near-static observations.
"""

from __future__ import annotations

import json
import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from demoforge.demo import ActionRecord, Demonstration, Pose
from demoforge.repair import RepairConfig, motion_saliency_filter

KEYFRAME = "keyframe"
DEMO_AUG = "demo_aug"
INDEX_FILE = "buffer_index.jsonl"
STATS_FILE = "buffer_stats.json"


@dataclass(frozen=True)
class ReplaySample:
    sample_type: str
    demo_id: str
    obs_frame: int
    target_frame: int
    target_action: ActionRecord
    instruction: str
    obs_pose: Pose
    obs_cloud: str = ""
    # index of target_frame in the demo's keyframe list
    transition: int = 0

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.demo_id, self.obs_frame, self.target_frame)


@dataclass(frozen=True)
class ReplayBuffer:
    samples: tuple[ReplaySample, ...]
    strategy: str
    stats: object | None = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)


@dataclass(frozen=True)
class CyclicSchedule:
    permutation: tuple[int, ...]
    seed: int
    degenerate: bool = False


def _sample(demo: Demonstration, kind: str, obs: int, n: int) -> ReplaySample:
    target = demo.keyframe_indices[n]
    of = demo.frame(obs)
    return ReplaySample(
        sample_type=kind,
        demo_id=demo.demo_id,
        obs_frame=obs,
        target_frame=target,
        target_action=demo.frame(target).action,
        instruction=demo.instruction,
        obs_pose=of.action.pose,
        obs_cloud=_cloud_ref(demo, obs),
        transition=n,
    )


def _cloud_ref(demo: Demonstration, index: int) -> str:
    folder = demo.source_dir.name if demo.source_dir is not None else demo.demo_id
    return f"{folder}/{demo.frame(index).cloud_ref}"


def _check(demo: Demonstration, interval: int) -> None:
    if interval < 1:
        raise ValueError("interval must be >= 1")
    if not demo.keyframe_indices:
        raise ValueError(f"demo {demo.demo_id} has no keyframes")


def observation_frames(demo: Demonstration, interval: int) -> list[int]:
    """Frames sampled every ``interval`` that are not keyframes and precede the last keyframe."""
    kfs = set(demo.keyframe_indices)
    last = demo.keyframe_indices[-1]
    first = demo.frames[0].index
    return [
        f.index
        for f in demo.frames
        if (f.index - first) % interval == 0 and f.index not in kfs and f.index < last
    ]


def _next_keyframe(kfs: Sequence[int], t: int) -> int:
    """Position in ``kfs`` of the first keyframe strictly after frame ``t``."""
    return int(np.searchsorted(kfs, t, side="right"))


def build_conventional(demo: Demonstration, interval: int = 10) -> list[ReplaySample]:
    _check(demo, interval)
    kfs = list(demo.keyframe_indices)
    out: list[ReplaySample] = []
    for t in observation_frames(demo, interval):
        n = _next_keyframe(kfs, t)
        out.append(_sample(demo, DEMO_AUG, t, n))
        for i in range(n, len(kfs) - 1):
            out.append(_sample(demo, KEYFRAME, kfs[i], i + 1))
    return out


def build_optimized(
    demo: Demonstration, interval: int = 10, cfg: RepairConfig = RepairConfig()
) -> list[ReplaySample]:
    _check(demo, interval)
    kfs = list(demo.keyframe_indices)
    out = [_sample(demo, KEYFRAME, kfs[i], i + 1) for i in range(len(kfs) - 1)]
    for t in observation_frames(demo, interval):
        out.append(_sample(demo, DEMO_AUG, t, _next_keyframe(kfs, t)))
    return motion_saliency_filter(out, cfg.saliency_min_dist)


def dedup(samples: Iterable[ReplaySample]) -> list[ReplaySample]:
    seen: set[tuple[str, int, int]] = set()
    out = []
    for s in samples:
        if s.key not in seen:
            seen.add(s.key)
            out.append(s)
    return out


def build_buffer(
    demos: Iterable[Demonstration],
    strategy: str = "optimized",
    interval: int = 10,
    cfg: RepairConfig = RepairConfig(),
    threads: int = 1,
) -> ReplayBuffer:
    if strategy == "conventional":
        fn = lambda d: build_conventional(d, interval)  # noqa: E731
    elif strategy == "optimized":
        fn = lambda d: build_optimized(d, interval, cfg)  # noqa: E731
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    demos = list(demos)
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(fn, demos))
    else:
        parts = [fn(d) for d in demos]
    return ReplayBuffer(tuple(s for part in parts for s in part), strategy)


# --- schedule ----------------------------------------------------------------


def _round_robin(groups: list[list[int]]) -> list[int]:
    """One pass: r-th member of every group still holding one, for r = 0, 1, ..."""
    out = []
    depth = max((len(g) for g in groups), default=0)
    for r in range(depth):
        out.extend(g[r] for g in groups if r < len(g))
    return out


def _type_pass(buffer: ReplayBuffer, kind: str, rng: np.random.Generator) -> list[int]:
    by_key: dict[tuple[str, int], list[int]] = defaultdict(list)
    for i, s in enumerate(buffer.samples):
        if s.sample_type == kind:
            by_key[(s.demo_id, s.transition)].append(i)
    keys = sorted(by_key)
    groups = []
    for ki in rng.permutation(len(keys)):
        members = by_key[keys[ki]]
        groups.append([members[j] for j in rng.permutation(len(members))])
    return _round_robin(groups)


def make_cyclic_schedule(buffer: ReplayBuffer, seed: int, epoch_len: int | None = None) -> CyclicSchedule:
    """Alternate keyframe / demo_aug draws, round-robin over (demo, transition) within each type.

    Alternation starts with a keyframe sample and runs until the smaller type is
    exhausted, after which the other drains. With ``epoch_len`` equal to the
    buffer size (the default) the result is a permutation of buffer indices;
    longer epochs continue with fresh passes.
    """
    if not len(buffer):
        raise ValueError("cannot schedule an empty buffer")
    epoch_len = len(buffer) if epoch_len is None else epoch_len
    if epoch_len < 1:
        raise ValueError("epoch_len must be >= 1")
    rng = np.random.default_rng(seed)
    kinds = {s.sample_type for s in buffer.samples}
    order: list[int] = []
    while len(order) < epoch_len:
        ks = _type_pass(buffer, KEYFRAME, rng)
        ds = _type_pass(buffer, DEMO_AUG, rng)
        m = min(len(ks), len(ds))
        for a, b in zip(ks[:m], ds[:m]):
            order.extend((a, b))
        order.extend(ks[m:] or ds[m:])
    return CyclicSchedule(tuple(order[:epoch_len]), seed, degenerate=len(kinds) < 2)


def transition_draws(buffer: ReplayBuffer, indices: Iterable[int], kind: str | None = KEYFRAME) -> dict:
    """Draw counts per (demo_id, transition) over ``indices``, optionally restricted to one type."""
    counts: dict[tuple[str, int], int] = defaultdict(int)
    for s in buffer.samples:
        if kind is None or s.sample_type == kind:
            counts[(s.demo_id, s.transition)] += 0
    for i in indices:
        s = buffer.samples[i]
        if kind is None or s.sample_type == kind:
            counts[(s.demo_id, s.transition)] += 1
    return dict(counts)


# --- persistence -------------------------------------------------------------


def sample_to_record(s: ReplaySample, cloud_root: str = "") -> dict:
    a = s.target_action
    return {
        "sample_type": s.sample_type,
        "demo_id": s.demo_id,
        "obs_frame": s.obs_frame,
        "target_frame": s.target_frame,
        "transition": s.transition,
        "target_pose": a.pose.as_list(),
        "gripper_open": a.gripper_open,
        "ignore_collision": a.ignore_collision,
        "instruction": s.instruction,
        "obs_pose": s.obs_pose.as_list(),
        "obs_cloud": f"{cloud_root}/{s.obs_cloud}" if cloud_root else s.obs_cloud,
    }


def record_to_sample(rec: dict) -> ReplaySample:
    tp, op = rec["target_pose"], rec["obs_pose"]
    return ReplaySample(
        sample_type=rec["sample_type"],
        demo_id=rec["demo_id"],
        obs_frame=int(rec["obs_frame"]),
        target_frame=int(rec["target_frame"]),
        target_action=ActionRecord(
            Pose.from_arrays(tp[:3], tp[3:]), int(rec["gripper_open"]), int(rec["ignore_collision"])
        ),
        instruction=rec["instruction"],
        obs_pose=Pose.from_arrays(op[:3], op[3:]),
        obs_cloud=rec["obs_cloud"],
        transition=int(rec["transition"]),
    )


def index_lines(samples: Iterable[ReplaySample], cloud_root: str = "") -> Iterable[str]:
    for s in samples:
        yield json.dumps(sample_to_record(s, cloud_root), separators=(",", ":"), ensure_ascii=False) + "\n"


def index_nbytes(samples: Iterable[ReplaySample], cloud_root: str = "") -> int:
    return sum(len(line.encode("utf-8")) for line in index_lines(samples, cloud_root))


def write_buffer(buffer: ReplayBuffer, out_dir, demo_root=None, stats: dict | None = None) -> Path:
    """Write ``buffer_index.jsonl`` and, when given, ``buffer_stats.json``.

    Cloud paths are written relative to ``out_dir`` when ``demo_root`` (the
    directory holding the demo bundles) is known; clouds are never copied.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root = os.path.relpath(Path(demo_root), out_dir) if demo_root is not None else ""
    with open(out_dir / INDEX_FILE, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(index_lines(buffer.samples, root.replace(os.sep, "/")))
    if stats is not None:
        write_stats(stats, out_dir)
    return out_dir / INDEX_FILE


def write_stats(stats: dict, out_dir) -> Path:
    path = Path(out_dir) / STATS_FILE
    path.write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_buffer(path) -> ReplayBuffer:
    path = Path(path)
    index = path / INDEX_FILE if path.is_dir() else path
    samples = []
    with open(index, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                samples.append(record_to_sample(json.loads(line)))
    strategy = "unknown"
    stats_path = index.parent / STATS_FILE
    if stats_path.is_file():
        strategy = json.loads(stats_path.read_text(encoding="utf-8")).get("strategy", strategy)
    return ReplayBuffer(tuple(samples), strategy)
