"""Keyframe discovery and trajectory repair heuristics.

Five remedies for the failure modes that surface once redundant keyframe
samples are removed from the buffer:

* near-static demo_aug samples      -> :func:`motion_saliency_filter`
* keyposes at the workspace edge     -> :func:`retreat_keypose`
* collisions in cluttered regions    -> :func:`insert_defensive_viapoints`
* shape-constrained motions (wiping) -> :func:`insert_via_keyframes`
* keyposes scraping the floor        -> :func:`apply_height_clearance`
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from demoforge.demo import Demonstration, Pose, Workspace


class NotApplicable(Exception):
    """The remedy does not apply to this input; callers skip it."""


@dataclass(frozen=True)
class RiskZone:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    prep_pose: Pose


@dataclass(frozen=True)
class RepairConfig:
    saliency_min_dist: float = 0.02
    retreat_alpha: float = 0.85
    clearance_delta: float = 0.008
    via_count: int = 2
    risk_zones: tuple[RiskZone, ...] = ()
    gripper_change_detect: bool = True
    velocity_epsilon: float = 0.002
    retreat_along_path: bool = False

    def __post_init__(self):
        for name in ("saliency_min_dist", "clearance_delta", "velocity_epsilon"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 < self.retreat_alpha <= 1.0:
            raise ValueError("retreat_alpha must lie in (0, 1]")
        if self.via_count < 0:
            raise ValueError("via_count must be >= 0")


@dataclass(frozen=True)
class Keypose:
    """A keypose in a repaired sequence; ``frame`` is None for synthesized poses."""

    pose: Pose
    frame: int | None
    origin: str = "demo"


# --- discovery --------------------------------------------------------------


def frame_speeds(demo: Demonstration) -> np.ndarray:
    """Backward finite-difference end-effector speed (m/s); entry 0 is NaN."""
    pos = demo.positions()
    t = np.array([f.timestamp for f in demo.frames], dtype=np.float64)
    speed = np.full(len(pos), np.nan)
    if len(pos) > 1:
        dist = np.linalg.norm(np.diff(pos, axis=0), axis=1)
        dt = np.diff(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(dt > 0, dist / np.where(dt > 0, dt, 1.0), np.inf)
        speed[1:] = v
    return speed


def discover_keyframes(demo: Demonstration, cfg: RepairConfig = RepairConfig()) -> list[int]:
    """Keyframes from gripper changes and motion stops, plus the final frame.

    A stop is the first frame whose speed falls under ``velocity_epsilon``
    after a frame that was above it. Stops within one frame of the previous
    keyframe are dropped; gripper changes are always kept.
    """
    n = len(demo.frames)
    if n < 2:
        raise ValueError(f"demo {demo.demo_id}: need at least 2 frames, got {n}")
    speed = frame_speeds(demo)
    grip = [f.action.gripper_open for f in demo.frames]
    picked: list[tuple[int, bool]] = []  # (list position, is_gripper_change)
    for j in range(1, n):
        changed = cfg.gripper_change_detect and grip[j] != grip[j - 1]
        stopped = j >= 2 and speed[j] < cfg.velocity_epsilon and speed[j - 1] >= cfg.velocity_epsilon
        if changed:
            picked.append((j, True))
        elif stopped and (not picked or j - picked[-1][0] >= 2):
            picked.append((j, False))
    last = n - 1
    if not picked or picked[-1][0] != last:
        if picked and last - picked[-1][0] < 2 and not picked[-1][1]:
            picked.pop()
        picked.append((last, False))
    return [demo.frames[j].index for j, _ in picked]


# --- saliency ----------------------------------------------------------------


def motion_saliency_filter(samples: Iterable, min_dist: float) -> list:
    """Drop demo_aug samples whose observation pose is within ``min_dist`` of the target.

    Keyframe samples pass untouched. Samples need ``sample_type``, ``obs_pose``
    and ``target_action`` attributes.
    """
    kept = []
    for s in samples:
        if s.sample_type != "demo_aug":
            kept.append(s)
            continue
        d = np.linalg.norm(s.obs_pose.xyz - s.target_action.pose.xyz)
        if d > min_dist:
            kept.append(s)
    return kept


# --- retreat -----------------------------------------------------------------


def slerp(q0, q1, t: float) -> np.ndarray:
    rots = Rotation.from_quat(np.stack([q0, q1]))
    return Slerp([0.0, 1.0], rots)([t]).as_quat()[0]


def retreat_keypose(
    prev: Pose,
    target: Pose,
    alpha: float,
    ws: Workspace,
    path: np.ndarray | None = None,
) -> Pose:
    """Pull a boundary keypose back toward ``prev`` so it sits at fraction ``alpha``.

    Without ``path`` the position is the straight-line interpolation. With a
    dense ``path`` (positions from prev to target inclusive) the result sits at
    arc-length fraction ``alpha`` along it. Orientation is slerped at ``alpha``.
    Raises :class:`NotApplicable` when ``target`` is not near the workspace boundary.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if not ws.near_boundary(target.position):
        raise NotApplicable(f"target {target.position} is not within the boundary margin")
    if path is None:
        pos = prev.xyz + alpha * (target.xyz - prev.xyz)
    else:
        pos = point_at_arc_fraction(np.asarray(path, dtype=np.float64), alpha)
    quat = slerp(prev.quat, target.quat, alpha)
    return Pose.from_arrays(pos, quat)


def point_at_arc_fraction(path: np.ndarray, alpha: float) -> np.ndarray:
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total == 0:
        return path[0].copy()
    s = alpha * total
    i = int(np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1))
    f = (s - cum[i]) / seg[i] if seg[i] > 0 else 0.0
    return path[i] + f * (path[i + 1] - path[i])


def retreat_boundary_keyposes(demo: Demonstration, cfg: RepairConfig, ws: Workspace) -> list[Keypose]:
    """Apply :func:`retreat_keypose` to every keypose that sits near the boundary."""
    out: list[Keypose] = []
    kfs = list(demo.keyframe_indices)
    pos = demo.positions()
    where = {f.index: i for i, f in enumerate(demo.frames)}
    for n, k in enumerate(kfs):
        target = demo.frame(k).pose
        prev_frame = kfs[n - 1] if n > 0 else demo.frames[0].index
        prev = demo.frame(prev_frame).pose
        path = pos[where[prev_frame] : where[k] + 1] if cfg.retreat_along_path else None
        try:
            out.append(Keypose(retreat_keypose(prev, target, cfg.retreat_alpha, ws, path), k, "retreat"))
        except NotApplicable:
            out.append(Keypose(target, k, "demo"))
    return out


# --- curvature via-points ----------------------------------------------------


def discrete_curvature(positions: np.ndarray) -> np.ndarray:
    """κ_j = ‖Δ²p_j‖ / (mean step)² for interior points; endpoints are 0."""
    p = np.asarray(positions, dtype=np.float64)
    kappa = np.zeros(len(p))
    if len(p) < 3:
        return kappa
    mean_step = np.linalg.norm(np.diff(p, axis=0), axis=1).mean()
    if mean_step == 0:
        return kappa
    second = p[2:] - 2 * p[1:-1] + p[:-2]
    kappa[1:-1] = np.linalg.norm(second, axis=1) / mean_step**2
    return kappa


def insert_via_keyframes(demo: Demonstration, segment: tuple[int, int], count: int) -> list[int]:
    """Pick ``count`` interior frames of ``segment`` at curvature peaks.

    Local maxima rank first, then by curvature (rounded to 1e-9 so numerical
    noise on straight runs ties), then by lower index. Picks keep a minimum
    separation of 2 frames.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return []
    start, end = segment
    where = {f.index: i for i, f in enumerate(demo.frames)}
    if start not in where or end not in where or where[end] <= where[start]:
        raise ValueError(f"bad segment {segment} for demo {demo.demo_id}")
    a, b = where[start], where[end]
    if b - a + 1 < count + 2:
        raise ValueError(f"segment {segment} too short for {count} via keyframes")
    pos = demo.positions()[a : b + 1]
    kappa = np.round(discrete_curvature(pos), 9)
    interior = range(1, len(pos) - 1)

    def is_peak(j: int) -> bool:
        left = kappa[j - 1] if j - 1 >= 1 else -np.inf
        right = kappa[j + 1] if j + 1 <= len(pos) - 2 else -np.inf
        return kappa[j] > 0 and kappa[j] >= left and kappa[j] >= right

    order = sorted(interior, key=lambda j: (not is_peak(j), -kappa[j], j))
    chosen: list[int] = []
    for j in order:
        if all(abs(j - c) >= 2 for c in chosen):
            chosen.append(j)
            if len(chosen) == count:
                break
    if len(chosen) < count:
        raise ValueError(f"segment {segment} cannot fit {count} via keyframes 2 frames apart")
    return sorted(demo.frames[a + j].index for j in chosen)


# --- clearance ---------------------------------------------------------------


def apply_height_clearance(keyposes: Sequence[Pose], floor_z: float, delta: float) -> list[Pose]:
    if delta < 0:
        raise ValueError("delta must be >= 0")
    floor = floor_z + delta
    out = []
    for p in keyposes:
        if p.position[2] < floor:
            p = Pose((p.position[0], p.position[1], floor), p.orientation)
        out.append(p)
    return out


# --- defensive via-points ----------------------------------------------------


def segment_hits_box(p0, p1, lo, hi) -> float | None:
    """Slab test. Returns the entry parameter in [0, 1] or None if the chord misses."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    d = p1 - p0
    t0, t1 = 0.0, 1.0
    for ax in range(3):
        if d[ax] == 0.0:
            if p0[ax] < lo[ax] or p0[ax] > hi[ax]:
                return None
            continue
        with np.errstate(over="ignore"):  # +-inf is the right limit for a near-parallel chord
            ta = (lo[ax] - p0[ax]) / d[ax]
            tb = (hi[ax] - p0[ax]) / d[ax]
        if ta > tb:
            ta, tb = tb, ta
        t0, t1 = max(t0, ta), min(t1, tb)
        if t0 > t1:
            return None
    return t0


def insert_defensive_viapoints(
    demo: Demonstration, zones: Sequence[RiskZone], ws: Workspace | None = None
) -> list[Keypose]:
    """Keyposes with each zone's prep pose placed before every segment target whose chord crosses it."""
    if ws is not None:
        for z in zones:
            if not ws.contains(z.prep_pose.position):
                raise ValueError(f"prep pose {z.prep_pose.position} lies outside the workspace")
    kfs = list(demo.keyframe_indices)
    out: list[Keypose] = []
    for n, k in enumerate(kfs):
        target = demo.frame(k).pose
        if n > 0:
            source = demo.frame(kfs[n - 1]).pose
            hits = []
            for zi, z in enumerate(zones):
                t = segment_hits_box(source.position, target.position, z.lo, z.hi)
                if t is not None:
                    hits.append((t, zi, z))
            seen: set[Pose] = set()
            for _, _, z in sorted(hits, key=lambda h: (h[0], h[1])):
                if z.prep_pose in seen:
                    continue
                seen.add(z.prep_pose)
                out.append(Keypose(z.prep_pose, None, "defensive"))
        out.append(Keypose(target, k, "demo"))
    return out
