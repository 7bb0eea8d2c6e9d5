"""Orthographic multi-view rendering of colored point clouds.

Each view looks at one face of an axis-aligned cube. Pixel mapping, used
everywhere in the package::

    col = floor((a - lo_a) / side_a * W)   clamped to W - 1
    row = floor((b - lo_b) / side_b * H)   clamped to H - 1

where (a, b) are the view's image axes. Depth is the distance from the
camera face along the viewing axis.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from demoforge.demo import ActionRecord, PointCloud, Pose, Workspace

IMG_MAGIC = b"IMG1"

# axis name -> (depth axis, camera on max side?, column axis, row axis)
AXES = {
    "+z": (2, True, 0, 1),
    "+x": (0, True, 1, 2),
    "-x": (0, False, 1, 2),
    "+y": (1, True, 0, 2),
    "-y": (1, False, 0, 2),
}
DEFAULT_AXES = ("+z", "-y", "+y", "-x", "+x")  # top, front, back, left, right


class EmptyRender(Exception):
    """No point survives clipping to the view cube."""


class ResampleNeeded(Exception):
    """The perturbed action left the workspace; retry with another seed."""


@dataclass(frozen=True)
class View:
    axis: str
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    height: int = 224
    width: int = 224

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown view axis {self.axis!r}")
        if self.height < 1 or self.width < 1:
            raise ValueError("resolution must be positive")
        if not all(a < b for a, b in zip(self.lo, self.hi)):
            raise ValueError("view cube min must be below max")

    @property
    def image_axes(self) -> tuple[int, int]:
        _, _, col, row = AXES[self.axis]
        return col, row

    def meters_per_pixel(self) -> tuple[float, float]:
        col, row = self.image_axes
        return (
            (self.hi[col] - self.lo[col]) / self.width,
            (self.hi[row] - self.lo[row]) / self.height,
        )

    def continuous_pixel(self, xyz: np.ndarray) -> np.ndarray:
        """(col, row) in continuous raster units; pixel j spans [j, j + 1)."""
        xyz = np.asarray(xyz, dtype=np.float64)
        col, row = self.image_axes
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        u = (xyz[..., col] - lo[col]) / (hi[col] - lo[col]) * self.width
        v = (xyz[..., row] - lo[row]) / (hi[row] - lo[row]) * self.height
        return np.stack([u, v], axis=-1)

    def pixel(self, xyz: np.ndarray) -> np.ndarray:
        """Integer (col, row) per the floor-and-clamp rule."""
        uv = np.floor(self.continuous_pixel(xyz)).astype(np.int64)
        uv[..., 0] = np.clip(uv[..., 0], 0, self.width - 1)
        uv[..., 1] = np.clip(uv[..., 1], 0, self.height - 1)
        return uv

    def depth(self, xyz: np.ndarray) -> np.ndarray:
        ax, on_max, _, _ = AXES[self.axis]
        xyz = np.asarray(xyz, dtype=np.float64)
        return self.hi[ax] - xyz[..., ax] if on_max else xyz[..., ax] - self.lo[ax]


@dataclass(frozen=True)
class ViewSet:
    views: tuple[View, ...]

    def __post_init__(self):
        if not self.views:
            raise ValueError("a ViewSet needs at least one view")

    def __len__(self) -> int:
        return len(self.views)

    def __iter__(self):
        return iter(self.views)

    def __getitem__(self, i) -> View:
        return self.views[i]

    @classmethod
    def cube(cls, lo, hi, resolution: int = 224, axes: Sequence[str] = DEFAULT_AXES) -> "ViewSet":
        lo = tuple(float(v) for v in lo)
        hi = tuple(float(v) for v in hi)
        return cls(tuple(View(a, lo, hi, resolution, resolution) for a in axes))

    @classmethod
    def for_workspace(cls, ws: Workspace, resolution: int = 224, axes: Sequence[str] = DEFAULT_AXES) -> "ViewSet":
        return cls.cube(ws.aabb_min, ws.aabb_max, resolution, axes)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.views[0].lo, dtype=np.float64)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.views[0].hi, dtype=np.float64)

    def with_cube(self, lo, hi) -> "ViewSet":
        lo = tuple(float(v) for v in lo)
        hi = tuple(float(v) for v in hi)
        return ViewSet(tuple(replace(v, lo=lo, hi=hi) for v in self.views))


@dataclass(eq=False)
class RenderedView:
    rgb: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) float32, inf where empty
    occupancy: np.ndarray  # (H, W) bool
    inverted: bool = False

    def __eq__(self, other) -> bool:
        if not isinstance(other, RenderedView):
            return NotImplemented
        return (
            np.array_equal(self.rgb, other.rgb)
            and np.array_equal(self.depth, other.depth)
            and np.array_equal(self.occupancy, other.occupancy)
        )


def clip_to_cube(cloud: PointCloud, lo, hi) -> PointCloud:
    lo, hi = np.asarray(lo, np.float64), np.asarray(hi, np.float64)
    xyz = cloud.xyz.astype(np.float64)
    return cloud.select(np.all((xyz >= lo) & (xyz <= hi), axis=1))


def _disk(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    du, dv = np.meshgrid(r, r, indexing="xy")
    keep = du**2 + dv**2 <= radius**2
    return np.stack([du[keep], dv[keep]], axis=1)


def render_view(cloud: PointCloud, view: View, splat_radius: int = 0) -> RenderedView:
    """Z-buffered orthographic splat. Ties in depth go to the lower point index."""
    pts = clip_to_cube(cloud, view.lo, view.hi)
    if len(pts) == 0:
        raise EmptyRender(f"no points inside the {view.axis} view cube")
    H, W = view.height, view.width
    xyz = pts.xyz.astype(np.float64)
    uv = view.pixel(xyz)
    depth = view.depth(xyz)
    idx = np.arange(len(pts))
    if splat_radius > 0:
        offs = _disk(splat_radius)
        uv = (uv[:, None, :] + offs[None, :, :]).reshape(-1, 2)
        depth = np.repeat(depth, len(offs))
        idx = np.repeat(idx, len(offs))
        inside = (uv[:, 0] >= 0) & (uv[:, 0] < W) & (uv[:, 1] >= 0) & (uv[:, 1] < H)
        uv, depth, idx = uv[inside], depth[inside], idx[inside]
    flat = uv[:, 1] * W + uv[:, 0]
    order = np.lexsort((idx, depth, flat))
    flat_sorted = flat[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    win = order[first]
    pix = flat[win]

    rgb = np.zeros((H * W, 3), dtype=np.uint8)
    dep = np.full(H * W, np.inf, dtype=np.float32)
    occ = np.zeros(H * W, dtype=bool)
    rgb[pix] = pts.rgb[idx[win]]
    dep[pix] = depth[win]
    occ[pix] = True
    return RenderedView(rgb.reshape(H, W, 3), dep.reshape(H, W), occ.reshape(H, W))


def render_orthographic(cloud: PointCloud, views: ViewSet, splat_radius: int = 0) -> list[RenderedView]:
    # one clip test for the whole set so an empty cube fails before any raster work
    if len(clip_to_cube(cloud, views.lo, views.hi)) == 0:
        raise EmptyRender("all points lie outside the workspace")
    return [render_view(cloud, v, splat_radius) for v in views]


def invert_views(views: Sequence[RenderedView], mode: str = "occupied") -> list[RenderedView]:
    """Per-channel 255 - c. ``mode='occupied'`` keeps the background black; ``'image'`` inverts every pixel."""
    if mode not in ("occupied", "image"):
        raise ValueError(f"unknown invert mode {mode!r}")
    out = []
    for v in views:
        rgb = v.rgb.copy()
        if mode == "occupied":
            rgb[v.occupancy] = 255 - rgb[v.occupancy]
        else:
            rgb = 255 - rgb
        out.append(RenderedView(rgb, v.depth.copy(), v.occupancy.copy(), not v.inverted))
    return out


def foreground_contrast(view: RenderedView) -> float:
    """Mean |foreground - background| per channel; background is black."""
    if not view.occupancy.any():
        return 0.0
    bg = view.rgb[~view.occupancy].astype(np.float64).mean(axis=0) if (~view.occupancy).any() else np.zeros(3)
    fg = view.rgb[view.occupancy].astype(np.float64)
    return float(np.abs(fg - bg).mean())


def zoom_box(center, side: float, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Cube of ``side`` around ``center``, shifted to fit inside [lo, hi]."""
    if side <= 0:
        raise ValueError("side must be > 0")
    lo, hi = np.asarray(lo, np.float64), np.asarray(hi, np.float64)
    c = np.asarray(center, np.float64)
    half = side / 2
    c = np.clip(c, lo + half, hi - half)
    c = np.where(hi - lo < side, (lo + hi) / 2, c)
    return c - half, c + half


def zoom_crop(cloud: PointCloud, center, side: float, views: ViewSet) -> tuple[PointCloud, ViewSet]:
    """Points inside the zoom cube plus a ViewSet over it at the original resolution."""
    if not np.all((np.asarray(center) >= views.lo) & (np.asarray(center) <= views.hi)):
        raise ValueError(f"zoom center {center} lies outside the view cube")
    lo, hi = zoom_box(center, side, views.lo, views.hi)
    crop = clip_to_cube(cloud, lo, hi)
    if len(crop) == 0:
        raise EmptyRender("zoom crop holds no points")
    return crop, views.with_cube(lo, hi)


# --- SE(3) augmentation ------------------------------------------------------


def perturb_se3(
    cloud: PointCloud,
    action: ActionRecord,
    bounds: tuple[Sequence[float], float],
    seed: int,
    ws: Workspace,
    translation: Sequence[float] | None = None,
    yaw: float | None = None,
) -> tuple[PointCloud, ActionRecord]:
    """Apply one random rigid motion to the cloud and the action pose.

    ``bounds`` is (max |translation| per axis in meters, max |yaw| in radians).
    Yaw turns about the vertical axis through the workspace center.
    ``translation`` / ``yaw`` override the random draw.
    """
    tmax, yaw_max = bounds
    tmax = np.broadcast_to(np.asarray(tmax, np.float64), (3,))
    rng = np.random.default_rng(seed)
    t_draw = rng.uniform(-1.0, 1.0, 3) * tmax
    y_draw = rng.uniform(-1.0, 1.0) * yaw_max
    t = np.asarray(translation, np.float64) if translation is not None else t_draw
    theta = float(yaw) if yaw is not None else float(y_draw)

    rot = Rotation.from_euler("z", theta)
    R = rot.as_matrix()
    c = ws.center

    def move(p: np.ndarray) -> np.ndarray:
        if theta == 0.0:
            return p + t
        return (p - c) @ R.T + c + t

    pose = action.pose
    new_pos = move(pose.xyz[None, :])[0]
    if not ws.contains(new_pos):
        raise ResampleNeeded(f"perturbed action position {new_pos} left the workspace")
    new_quat = pose.quat if theta == 0.0 else (rot * Rotation.from_quat(pose.quat)).as_quat()
    new_cloud = PointCloud(move(cloud.xyz.astype(np.float64)), cloud.rgb.copy())
    new_action = ActionRecord(Pose.from_arrays(new_pos, new_quat), action.gripper_open, action.ignore_collision)
    return new_cloud, new_action


def perturb_se3_retry(cloud, action, bounds, seed: int, ws: Workspace, attempts: int = 20):
    """Retry :func:`perturb_se3` with seeds seed, seed+1, ... up to ``attempts`` times."""
    for k in range(attempts):
        try:
            return perturb_se3(cloud, action, bounds, seed + k, ws)
        except ResampleNeeded:
            continue
    raise RuntimeError(f"no in-workspace perturbation after {attempts} attempts from seed {seed}")


# --- IMG1 --------------------------------------------------------------------


def encode_img(array: np.ndarray) -> bytes:
    """uint8 (H, W, 3) rgb or float32 (H, W) depth."""
    if array.ndim == 3 and array.shape[2] == 3:
        h, w, ch = array.shape
        payload = np.ascontiguousarray(array, dtype=np.uint8).tobytes()
    elif array.ndim == 2:
        (h, w), ch = array.shape, 1
        payload = np.ascontiguousarray(array, dtype="<f4").tobytes()
    else:
        raise ValueError(f"unsupported raster shape {array.shape}")
    return IMG_MAGIC + struct.pack("<III", h, w, ch) + payload


def decode_img(data: bytes) -> np.ndarray:
    if data[:4] != IMG_MAGIC:
        raise ValueError("bad IMG1 magic (offset 0)")
    if len(data) < 16:
        raise ValueError("truncated IMG1 header (offset 4)")
    h, w, ch = struct.unpack_from("<III", data, 4)
    if ch == 3:
        need, dtype, shape = h * w * 3, np.uint8, (h, w, 3)
    elif ch == 1:
        need, dtype, shape = h * w * 4, np.dtype("<f4"), (h, w)
    else:
        raise ValueError(f"unsupported channel count {ch} (offset 12)")
    if len(data) - 16 != need:
        raise ValueError(f"IMG1 payload is {len(data) - 16} bytes, expected {need} (offset 16)")
    return np.frombuffer(data, dtype=dtype, offset=16).reshape(shape).copy()


def write_views(views: Sequence[RenderedView], viewset: ViewSet, out_dir, prefix: str = "view") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for v, view in zip(views, viewset):
        tag = view.axis.replace("+", "p").replace("-", "m")
        stem = f"{prefix}_{tag}{'_inv' if v.inverted else ''}"
        for suffix, arr in (("rgb", v.rgb), ("depth", v.depth)):
            p = out_dir / f"{stem}_{suffix}.img"
            p.write_bytes(encode_img(arr))
            paths.append(p)
    return paths
