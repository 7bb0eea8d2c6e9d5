"""Action heatmaps, multi-view back-projection and coarse-to-fine localization."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from demoforge.demo import PointCloud
from demoforge.render import EmptyRender, RenderedView, ViewSet, render_orthographic, zoom_crop

HMP_MAGIC = b"HMP1"


class ZeroEvidence(Exception):
    """Every heatmap is zero, so there is nothing to localize."""


@dataclass(eq=False)
class Heatmap:
    scores: np.ndarray  # (H, W) float64, non-negative

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2:
            raise ValueError("heatmap scores must be 2-D")

    @property
    def mass(self) -> float:
        return float(self.scores.sum())

    def argmax_pixel(self) -> tuple[int, int]:
        """(col, row) of the first maximum in row-major order."""
        r, c = np.unravel_index(int(np.argmax(self.scores)), self.scores.shape)
        return int(c), int(r)


@dataclass(frozen=True)
class LocalizationResult:
    position: np.ndarray
    score: float
    stage: str
    fallback: bool = False
    coarse_position: np.ndarray | None = None


def make_gt_heatmaps(target, views: ViewSet, sigma: float = 1.5) -> list[Heatmap]:
    """Unit-mass Gaussians (std ``sigma`` px, cut at 3σ) on the target's pixel in each view."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    t = np.asarray(target, dtype=np.float64)
    out = []
    for v in views:
        if not np.all((t >= np.asarray(v.lo)) & (t <= np.asarray(v.hi))):
            raise ValueError(f"target {t} lies outside the view cube")
        col, row = v.pixel(t)
        cu, cv = col + 0.5, row + 0.5
        u = np.arange(v.width) + 0.5
        w = np.arange(v.height) + 0.5
        d2 = (u[None, :] - cu) ** 2 + (w[:, None] - cv) ** 2
        g = np.exp(-d2 / (2 * sigma * sigma))
        g[d2 > (3 * sigma) ** 2] = 0.0
        out.append(Heatmap(g / g.sum()))
    return out


def _bilinear(scores: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample at continuous raster coords (pixel centers at j + 0.5), edge-clamped.

    Written in lerp form so a constant region samples back exactly.
    """
    H, W = scores.shape
    x = np.clip(u - 0.5, 0.0, W - 1.0)
    y = np.clip(v - 0.5, 0.0, H - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.int64), W - 1)
    y0 = np.minimum(np.floor(y).astype(np.int64), H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx, fy = x - x0, y - y0
    flat = scores.ravel()
    r0, r1 = y0 * W, y1 * W
    a, b = flat[r0 + x0], flat[r0 + x1]
    c, d = flat[r1 + x0], flat[r1 + x1]
    top = a + fx * (b - a)
    bot = c + fx * (d - c)
    return top + fy * (bot - top)


def voxel_centers(lo, hi, grid: int) -> list[np.ndarray]:
    lo, hi = np.asarray(lo, np.float64), np.asarray(hi, np.float64)
    return [lo[a] + (np.arange(grid) + 0.5) * (hi[a] - lo[a]) / grid for a in range(3)]


def _check_inputs(heatmaps: Sequence[Heatmap], views: ViewSet, grid: int) -> None:
    if len(heatmaps) != len(views):
        raise ValueError(f"{len(heatmaps)} heatmaps for {len(views)} views")
    if grid < 2:
        raise ValueError("grid must be >= 2")
    for h, v in zip(heatmaps, views):
        if h.scores.shape != (v.height, v.width):
            raise ValueError(f"heatmap shape {h.scores.shape} does not match view {v.height}x{v.width}")
    if all(not np.any(h.scores) for h in heatmaps):
        raise ZeroEvidence("all heatmaps are zero")


def score_volume(heatmaps: Sequence[Heatmap], views: ViewSet, grid: int) -> np.ndarray:
    """Dense (grid, grid, grid) score: sum over views of the bilinear sample at each voxel center.

    A voxel's projection in a view depends only on the view's two image axes,
    so each view is sampled once on its (grid x grid) lattice and broadcast
    along the depth axis; every voxel still receives every view's sample.
    """
    _check_inputs(heatmaps, views, grid)
    centers = voxel_centers(views.lo, views.hi, grid)
    vol = np.zeros((grid, grid, grid), dtype=np.float64)
    for h, v in zip(heatmaps, views):
        col, row = v.image_axes
        probe = np.zeros((grid, grid, 3))
        probe[..., col] = centers[col][:, None]
        probe[..., row] = centers[row][None, :]
        uv = v.continuous_pixel(probe)
        plane = _bilinear(h.scores, uv[..., 0], uv[..., 1])  # indexed [col-axis, row-axis]
        shape = [1, 1, 1]
        shape[col], shape[row] = grid, grid
        if col < row:
            vol += plane.reshape(shape)
        else:
            vol += plane.T.reshape(shape)
    return vol


def score_volume_reference(heatmaps: Sequence[Heatmap], views: ViewSet, grid: int, chunk: int = 50_000) -> np.ndarray:
    """Per-voxel projection and sampling with no shared work. Test oracle for :func:`score_volume`.

    Voxels are processed in slabs of ``chunk`` only to stay cache-friendly.
    """
    _check_inputs(heatmaps, views, grid)
    cx, cy, cz = voxel_centers(views.lo, views.hi, grid)
    X, Y, Z = np.meshgrid(cx, cy, cz, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    total = np.zeros(len(pts))
    for start in range(0, len(pts), chunk):
        p = pts[start : start + chunk]
        acc = np.zeros(len(p))
        for h, v in zip(heatmaps, views):
            uv = v.continuous_pixel(p)
            acc += _bilinear(h.scores, uv[:, 0], uv[:, 1])
        total[start : start + chunk] = acc
    return total.reshape(grid, grid, grid)


def back_project_argmax(heatmaps: Sequence[Heatmap], views: ViewSet, grid: int = 100, scorer=score_volume) -> LocalizationResult:
    """Best voxel center; ties resolve to the lexicographically smallest (i, j, k)."""
    vol = scorer(heatmaps, views, grid)
    flat = int(np.argmax(vol))
    i, j, k = np.unravel_index(flat, vol.shape)
    centers = voxel_centers(views.lo, views.hi, grid)
    pos = np.array([centers[0][i], centers[1][j], centers[2][k]])
    return LocalizationResult(pos, float(vol.flat[flat]), "coarse")


HeatmapProvider = Callable[[Sequence[RenderedView], ViewSet], Sequence[Heatmap]]


def gt_provider(target, sigma: float = 1.5) -> HeatmapProvider:
    """Provider that ignores the rasters and returns ground-truth heatmaps for ``target``."""

    def provide(rendered: Sequence[RenderedView], views: ViewSet) -> list[Heatmap]:
        return make_gt_heatmaps(target, views, sigma)

    return provide


def two_stage_localize(
    cloud: PointCloud,
    provider: HeatmapProvider,
    views: ViewSet,
    coarse_grid: int = 100,
    zoom_side: float = 0.2,
    fine_grid: int = 100,
    splat_radius: int = 0,
    scorer=score_volume,
) -> LocalizationResult:
    """Coarse argmax over the full cube, then re-render and re-argmax inside a zoom cube.

    If the zoom crop is empty the coarse result comes back with ``fallback=True``.
    """
    rendered = render_orthographic(cloud, views, splat_radius)
    coarse = back_project_argmax(provider(rendered, views), views, coarse_grid, scorer)
    try:
        crop, zviews = zoom_crop(cloud, coarse.position, zoom_side, views)
        zrendered = render_orthographic(crop, zviews, splat_radius)
    except EmptyRender:
        return LocalizationResult(coarse.position, coarse.score, "coarse", True, coarse.position)
    fine = back_project_argmax(provider(zrendered, zviews), zviews, fine_grid, scorer)
    return LocalizationResult(fine.position, fine.score, "fine", False, coarse.position)


# --- HMP1 --------------------------------------------------------------------


def encode_hmp(heatmaps: Sequence[Heatmap]) -> bytes:
    if not heatmaps:
        raise ValueError("need at least one heatmap")
    H, W = heatmaps[0].scores.shape
    if any(h.scores.shape != (H, W) for h in heatmaps):
        raise ValueError("heatmaps differ in shape")
    data = np.stack([h.scores for h in heatmaps]).astype("<f4")
    return HMP_MAGIC + struct.pack("<III", len(heatmaps), H, W) + data.tobytes()


def decode_hmp(data: bytes) -> list[Heatmap]:
    if data[:4] != HMP_MAGIC:
        raise ValueError("bad HMP1 magic (offset 0)")
    if len(data) < 16:
        raise ValueError("truncated HMP1 header (offset 4)")
    K, H, W = struct.unpack_from("<III", data, 4)
    need = K * H * W * 4
    if len(data) - 16 != need:
        raise ValueError(f"HMP1 payload is {len(data) - 16} bytes, expected {need} (offset 16)")
    arr = np.frombuffer(data, dtype="<f4", offset=16).reshape(K, H, W)
    return [Heatmap(a.astype(np.float64)) for a in arr]
