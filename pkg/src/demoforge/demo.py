"""Demonstration types, the BPC1 cloud codec and the on-disk demo bundle.

World frame is z-up. Quaternions are stored (x, y, z, w).

Bundle layout::

    <demo_dir>/manifest.json
    <demo_dir>/<cloud_file>      one BPC1 file per frame
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

BPC_MAGIC = b"BPC1"
BPC_HEADER = 8
BPC_RECORD = 15
QUAT_TOL = 1e-6

_BPC_DTYPE = np.dtype(
    [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("r", "u1"), ("g", "u1"), ("b", "u1")]
)
assert _BPC_DTYPE.itemsize == BPC_RECORD


class CloudFormatError(ValueError):
    """Malformed BPC1 payload. ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int, path: str | None = None):
        self.offset = offset
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (offset {offset})")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Pose:
    position: tuple[float, float, float]
    orientation: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 1.0)

    @classmethod
    def from_arrays(cls, position, orientation=(0.0, 0.0, 0.0, 1.0)) -> "Pose":
        return cls(
            tuple(float(v) for v in position),  # type: ignore[arg-type]
            tuple(float(v) for v in orientation),  # type: ignore[arg-type]
        )

    @property
    def xyz(self) -> np.ndarray:
        return np.asarray(self.position, dtype=np.float64)

    @property
    def quat(self) -> np.ndarray:
        return np.asarray(self.orientation, dtype=np.float64)

    def quat_norm_ok(self, tol: float = QUAT_TOL) -> bool:
        return abs(float(np.linalg.norm(self.quat)) - 1.0) <= tol

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.position + self.orientation)

    def with_position(self, position) -> "Pose":
        return Pose.from_arrays(position, self.orientation)

    def as_list(self) -> list[float]:
        return [*self.position, *self.orientation]


@dataclass(frozen=True)
class ActionRecord:
    """8D action: pose, gripper state, collision-ignore flag."""

    pose: Pose
    gripper_open: int = 1
    ignore_collision: int = 0


@dataclass(frozen=True)
class Frame:
    index: int
    timestamp: float
    action: ActionRecord
    cloud_ref: str

    @property
    def pose(self) -> Pose:
        return self.action.pose


@dataclass(eq=False)
class PointCloud:
    """Colored points in world coordinates. ``xyz`` is float32 (N, 3), ``rgb`` uint8 (N, 3)."""

    xyz: np.ndarray
    rgb: np.ndarray

    def __post_init__(self):
        self.xyz = np.ascontiguousarray(self.xyz, dtype=np.float32).reshape(-1, 3)
        self.rgb = np.ascontiguousarray(self.rgb, dtype=np.uint8).reshape(-1, 3)
        if len(self.xyz) != len(self.rgb):
            raise ValueError(f"xyz has {len(self.xyz)} rows but rgb has {len(self.rgb)}")

    def __len__(self) -> int:
        return len(self.xyz)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)))

    @classmethod
    def concat(cls, clouds: Sequence["PointCloud"]) -> "PointCloud":
        if not clouds:
            return cls.empty()
        return cls(
            np.concatenate([c.xyz for c in clouds]),
            np.concatenate([c.rgb for c in clouds]),
        )

    def select(self, mask: np.ndarray) -> "PointCloud":
        return PointCloud(self.xyz[mask], self.rgb[mask])

    def to_bytes(self) -> bytes:
        rec = np.empty(len(self), dtype=_BPC_DTYPE)
        rec["x"], rec["y"], rec["z"] = self.xyz[:, 0], self.xyz[:, 1], self.xyz[:, 2]
        rec["r"], rec["g"], rec["b"] = self.rgb[:, 0], self.rgb[:, 1], self.rgb[:, 2]
        return BPC_MAGIC + struct.pack("<I", len(self)) + rec.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, path: str | None = None) -> "PointCloud":
        if len(data) < 4 or data[:4] != BPC_MAGIC:
            raise CloudFormatError(f"bad magic {bytes(data[:4])!r}", 0, path)
        if len(data) < BPC_HEADER:
            raise CloudFormatError("truncated header", 4, path)
        (n,) = struct.unpack_from("<I", data, 4)
        have = (len(data) - BPC_HEADER) // BPC_RECORD
        if have < n:
            raise CloudFormatError(
                f"truncated payload: header declares {n} points, {have} complete records",
                BPC_HEADER + have * BPC_RECORD,
                path,
            )
        end = BPC_HEADER + n * BPC_RECORD
        if len(data) != end:
            raise CloudFormatError(
                f"point-count mismatch: {len(data) - end} trailing bytes after {n} records",
                end,
                path,
            )
        rec = np.frombuffer(data, dtype=_BPC_DTYPE, count=n, offset=BPC_HEADER)
        xyz = np.stack([rec["x"], rec["y"], rec["z"]], axis=1)
        rgb = np.stack([rec["r"], rec["g"], rec["b"]], axis=1)
        return cls(xyz, rgb)


def read_cloud(path) -> PointCloud:
    path = Path(path)
    return PointCloud.from_bytes(path.read_bytes(), str(path))


def write_cloud(cloud: PointCloud, path) -> None:
    Path(path).write_bytes(cloud.to_bytes())


@dataclass(frozen=True)
class Workspace:
    aabb_min: tuple[float, float, float] = (-0.3, -0.5, 0.6)
    aabb_max: tuple[float, float, float] = (0.7, 0.5, 1.6)
    floor_z: float = 0.752
    boundary_margin: float = 0.05

    def __post_init__(self):
        lo, hi = np.asarray(self.aabb_min), np.asarray(self.aabb_max)
        if not np.all(lo < hi):
            raise ValueError(f"workspace min {self.aabb_min} not below max {self.aabb_max}")
        if self.floor_z < self.aabb_min[2]:
            raise ValueError("floor_z lies below the workspace")
        if self.boundary_margin < 0:
            raise ValueError("boundary_margin must be non-negative")

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.aabb_min, dtype=np.float64)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.aabb_max, dtype=np.float64)

    @property
    def center(self) -> np.ndarray:
        return (self.lo + self.hi) / 2

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=np.float64)
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))

    def face_distance(self, p) -> float:
        """Smallest per-axis distance from ``p`` to any AABB face (negative outside)."""
        p = np.asarray(p, dtype=np.float64)
        return float(min(np.min(p - self.lo), np.min(self.hi - p)))

    def near_boundary(self, p) -> bool:
        return self.face_distance(p) < self.boundary_margin


@dataclass(frozen=True)
class Demonstration:
    demo_id: str
    task: str
    instruction: str
    frames: tuple[Frame, ...]
    keyframe_indices: tuple[int, ...]
    clouds: Mapping[str, PointCloud] = field(default_factory=dict, compare=False, repr=False)
    source_dir: Path | None = field(default=None, compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.frames)

    def frame(self, index: int) -> Frame:
        """Frame by its ``index`` field (which is not necessarily the list position)."""
        pos = self._positions().get(index)
        if pos is None:
            raise KeyError(f"demo {self.demo_id} has no frame {index}")
        return self.frames[pos]

    def _positions(self) -> dict[int, int]:
        cache = self.__dict__.get("_pos_cache")
        if cache is None:
            cache = {f.index: i for i, f in enumerate(self.frames)}
            object.__setattr__(self, "_pos_cache", cache)
        return cache

    def positions(self) -> np.ndarray:
        return np.array([f.action.pose.position for f in self.frames], dtype=np.float64)

    def keyposes(self) -> list[Pose]:
        return [self.frame(k).pose for k in self.keyframe_indices]

    def cloud(self, index: int) -> PointCloud:
        ref = self.frame(index).cloud_ref
        if ref in self.clouds:
            return self.clouds[ref]
        if self.source_dir is None:
            raise FileNotFoundError(f"demo {self.demo_id}: no cloud payload for {ref}")
        return read_cloud(self.source_dir / ref)

    def cloud_path(self, index: int) -> Path | None:
        if self.source_dir is None:
            return None
        return self.source_dir / self.frame(index).cloud_ref

    def replace(self, **changes) -> "Demonstration":
        kw = dict(
            demo_id=self.demo_id,
            task=self.task,
            instruction=self.instruction,
            frames=self.frames,
            keyframe_indices=self.keyframe_indices,
            clouds=self.clouds,
            source_dir=self.source_dir,
        )
        kw.update(changes)
        return Demonstration(**kw)


@dataclass(frozen=True)
class Violation:
    kind: str
    frame: int | None = None
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    demo_id: str
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> list[str]:
        return [v.kind for v in self.violations]

    def to_dict(self) -> dict:
        return {
            "demo_id": self.demo_id,
            "ok": self.ok,
            "violations": [
                {"kind": v.kind, "frame": v.frame, "detail": v.detail} for v in self.violations
            ],
        }


def validate_demonstration(demo: Demonstration, ws: Workspace, check_clouds: bool = True) -> ValidationReport:
    """Collect every violation in ``demo``; never raises on malformed content.

    Cloud files that exist but cannot be opened (permissions, I/O faults)
    propagate as ``OSError`` naming the file.
    """
    out: list[Violation] = []
    if not demo.instruction or not demo.instruction.strip():
        out.append(Violation("EmptyInstruction"))
    if not demo.frames:
        out.append(Violation("EmptyDemo"))

    prev_idx, prev_t = None, None
    for f in demo.frames:
        p = f.action.pose
        if f.index < 0 or (prev_idx is not None and f.index <= prev_idx):
            out.append(Violation("FrameOrder", f.index, "indices must strictly increase"))
        if prev_t is not None and not f.timestamp >= prev_t:
            out.append(Violation("TimestampOrder", f.index, "timestamps must not decrease"))
        prev_idx, prev_t = f.index, f.timestamp
        if not p.is_finite():
            out.append(Violation("NonFinitePose", f.index))
            continue
        if not ws.contains(p.position):
            out.append(Violation("OutOfWorkspace", f.index, f"position {p.position}"))
        if not p.quat_norm_ok():
            out.append(
                Violation("NonUnitQuaternion", f.index, f"norm {np.linalg.norm(p.quat):.9f}")
            )
        if f.action.gripper_open not in (0, 1) or f.action.ignore_collision not in (0, 1):
            out.append(Violation("BadFlag", f.index))

    known = {f.index for f in demo.frames}
    kfs = list(demo.keyframe_indices)
    for k in kfs:
        if k not in known:
            out.append(Violation("KeyframeOutOfRange", k))
    if kfs != sorted(set(kfs)):
        out.append(Violation("KeyframeOrder", None, "keyframe indices must be sorted and unique"))
    if demo.frames and (not kfs or kfs[-1] != demo.frames[-1].index):
        out.append(Violation("LastFrameNotKeyframe", demo.frames[-1].index))

    if check_clouds:
        for f in demo.frames:
            out.extend(_check_cloud(demo, f))
    return ValidationReport(demo.demo_id, tuple(out))


def _check_cloud(demo: Demonstration, f: Frame) -> list[Violation]:
    if f.cloud_ref in demo.clouds:
        cloud = demo.clouds[f.cloud_ref]
    else:
        if demo.source_dir is None:
            return [Violation("MissingCloud", f.index, f.cloud_ref)]
        path = demo.source_dir / f.cloud_ref
        if not path.is_file():
            return [Violation("MissingCloud", f.index, str(path))]
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise OSError(f"cannot read cloud file {path}: {exc}") from exc
        try:
            cloud = PointCloud.from_bytes(data, str(path))
        except CloudFormatError as exc:
            return [Violation("CorruptCloud", f.index, str(exc))]
    if not np.all(np.isfinite(cloud.xyz)):
        return [Violation("NonFiniteCloud", f.index, f.cloud_ref)]
    return []


# --- bundle I/O -------------------------------------------------------------

MANIFEST = "manifest.json"


def demo_to_manifest(demo: Demonstration) -> dict:
    return {
        "demo_id": demo.demo_id,
        "task": demo.task,
        "instruction": demo.instruction,
        "keyframe_indices": list(demo.keyframe_indices),
        "frames": [
            {
                "index": f.index,
                "timestamp_s": f.timestamp,
                "pose": f.action.pose.as_list(),
                "gripper_open": f.action.gripper_open,
                "ignore_collision": f.action.ignore_collision,
                "cloud_file": f.cloud_ref,
            }
            for f in demo.frames
        ],
    }


def demo_from_manifest(doc: dict, source_dir: Path | None = None) -> Demonstration:
    try:
        frames = []
        for rec in doc["frames"]:
            pose = rec["pose"]
            if len(pose) != 7:
                raise ManifestError(f"frame {rec.get('index')}: pose needs 7 numbers")
            frames.append(
                Frame(
                    index=int(rec["index"]),
                    timestamp=float(rec["timestamp_s"]),
                    action=ActionRecord(
                        Pose.from_arrays(pose[:3], pose[3:]),
                        int(rec["gripper_open"]),
                        int(rec["ignore_collision"]),
                    ),
                    cloud_ref=str(rec["cloud_file"]),
                )
            )
        return Demonstration(
            demo_id=str(doc["demo_id"]),
            task=str(doc["task"]),
            instruction=str(doc["instruction"]),
            frames=tuple(frames),
            keyframe_indices=tuple(int(k) for k in doc["keyframe_indices"]),
            source_dir=source_dir,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ManifestError):
            raise
        raise ManifestError(f"malformed manifest: {exc!r}") from exc


def load_demopack(path) -> Demonstration:
    path = Path(path)
    try:
        doc = json.loads((path / MANIFEST).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path / MANIFEST}: {exc}") from exc
    return demo_from_manifest(doc, source_dir=path)


def save_demopack(demo: Demonstration, path) -> Path:
    """Write manifest and one BPC1 file per frame. Existing cloud bytes are copied verbatim."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    text = json.dumps(demo_to_manifest(demo), indent=2, ensure_ascii=False) + "\n"
    (path / MANIFEST).write_text(text, encoding="utf-8")
    for f in demo.frames:
        dst = path / f.cloud_ref
        dst.parent.mkdir(parents=True, exist_ok=True)
        if f.cloud_ref in demo.clouds:
            dst.write_bytes(demo.clouds[f.cloud_ref].to_bytes())
        elif demo.source_dir is not None:
            src = demo.source_dir / f.cloud_ref
            if src.resolve() != dst.resolve():
                dst.write_bytes(src.read_bytes())
        else:
            raise FileNotFoundError(f"demo {demo.demo_id}: no cloud payload for {f.cloud_ref}")
    return path


def validate_path(path, ws: Workspace) -> ValidationReport:
    """Validate a bundle directory straight from disk, reporting manifest faults too."""
    path = Path(path)
    try:
        demo = load_demopack(path)
    except (OSError, ManifestError, UnicodeDecodeError) as exc:
        return ValidationReport(path.name, (Violation("BadManifest", None, str(exc)),))
    return validate_demonstration(demo, ws)
