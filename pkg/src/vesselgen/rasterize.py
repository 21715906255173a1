"""Rasterize vascular trees into binary masks and centerline maps.

Voxel (i, j, k) spans the unit cube [i, i+1) x [j, j+1) x [k, k+1)
with its center at (i+0.5, j+0.5, k+0.5). A voxel belongs to the mask
when its center lies inside some segment capsule; the voxel containing
each centerline point is set unconditionally so hairline vessels never
vanish.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .treegen import VesselTree
from .volgrid import VolumeKind, VoxelVolume


class RasterizationError(Exception):
    """The tree does not fit the requested grid."""


@dataclass
class RasterOutput:
    mask: VoxelVolume        # all vessel voxels
    centerline: VoxelVolume  # voxels containing centerline polyline points


def _paint_capsule(mask: np.ndarray, a: np.ndarray, b: np.ndarray, r: float) -> None:
    """Set voxels whose centers lie within distance r of segment a-b."""
    dims = mask.shape
    lo = np.maximum(np.floor(np.minimum(a, b) - r - 0.5).astype(int), 0)
    hi = np.minimum(np.ceil(np.maximum(a, b) + r - 0.5).astype(int) + 1,
                    np.asarray(dims))
    if (lo >= hi).any():
        return
    xs = np.arange(lo[0], hi[0]) + 0.5
    ys = np.arange(lo[1], hi[1]) + 0.5
    zs = np.arange(lo[2], hi[2]) + 0.5
    ab = b - a
    denom = float(ab @ ab)
    # t(v) = (v - a).ab / |ab|^2 is separable, so build it by broadcasting
    if denom > 1e-300:
        t = ((xs[:, None, None] - a[0]) * ab[0]
             + (ys[None, :, None] - a[1]) * ab[1]
             + (zs[None, None, :] - a[2]) * ab[2]) / denom
        np.clip(t, 0.0, 1.0, out=t)
    else:
        t = np.zeros((len(xs), len(ys), len(zs)))
    dx = xs[:, None, None] - (a[0] + t * ab[0])
    dy = ys[None, :, None] - (a[1] + t * ab[1])
    dz = zs[None, None, :] - (a[2] + t * ab[2])
    inside = dx * dx + dy * dy + dz * dz <= r * r
    mask[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] |= inside


def rasterize_tree(tree: VesselTree, dims: tuple[int, int, int] | None = None) -> RasterOutput:
    """Convert a tree to a binary mask plus centerline map on a voxel grid.

    The capsule radius tapers linearly along each segment between
    radius_start and radius_end, held constant within each sub-step and
    evaluated at the sub-step's arc-length midpoint.
    """
    if dims is None:
        dims = tree.params.domain_dims
    dims = tuple(int(n) for n in dims)
    mask = np.zeros(dims, bool)
    center = np.zeros(dims, bool)
    bounds = np.asarray(dims, float)

    for seg in tree.segments:
        pts = np.asarray(seg.points, float)
        if (pts < 0).any() or (pts > bounds).any():
            raise RasterizationError(
                f"segment {seg.start_node}->{seg.end_node} leaves the {dims} grid"
            )
        steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        total = steps.sum()
        if total > 0:
            cum = np.concatenate([[0.0], np.cumsum(steps)])
            mid_frac = (cum[:-1] + cum[1:]) / (2.0 * total)
        else:
            mid_frac = np.zeros(max(len(pts) - 1, 0))
        radii = seg.radius_start + (seg.radius_end - seg.radius_start) * mid_frac
        for i, r in enumerate(radii):
            _paint_capsule(mask, pts[i], pts[i + 1], float(r))
        # minimum-thickness rule: centerline voxels always present
        idx = np.minimum(np.floor(pts).astype(int), np.asarray(dims) - 1)
        idx = np.maximum(idx, 0)
        center[idx[:, 0], idx[:, 1], idx[:, 2]] = True

    mask |= center
    return RasterOutput(
        mask=VoxelVolume(mask.astype(np.uint8), VolumeKind.BINARY_MASK),
        centerline=VoxelVolume(center.astype(np.uint8), VolumeKind.BINARY_MASK),
    )


def occupancy_fraction(mask: VoxelVolume | np.ndarray) -> float:
    """Fraction of voxels set in a binary mask."""
    data = mask.data if isinstance(mask, VoxelVolume) else np.asarray(mask)
    return float(np.count_nonzero(data)) / data.size
