"""Overlap and topology-aware segmentation metrics.

dice measures plain voxel overlap. cl_dice scores topology by asking how
much of each mask's morphological skeleton the other mask covers. cb_dice
additionally weighs skeleton voxels by how well the local calibers agree,
so a prediction tracing the right centerline at the wrong thickness
scores between the two.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .patchqc import connected_components
from .volgrid import VoxelVolume

_SE6 = ndimage.generate_binary_structure(3, 1)


def _as_bool(mask: VoxelVolume | np.ndarray) -> np.ndarray:
    data = mask.data if isinstance(mask, VoxelVolume) else np.asarray(mask)
    return data != 0


def _check_dims(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"mask dims differ: {pred.shape} vs {gt.shape}")


def dice(pred: VoxelVolume | np.ndarray, gt: VoxelVolume | np.ndarray) -> float:
    """2|P & G| / (|P| + |G|); two empty masks agree perfectly (1.0)."""
    p, g = _as_bool(pred), _as_bool(gt)
    _check_dims(p, g)
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / total


def skeletonize(mask: VoxelVolume | np.ndarray, iterations: int = 8) -> np.ndarray:
    """Morphological skeleton: union of erosion residues.

    Each round adds (mask minus its opening) to the skeleton, then
    erodes the mask, both with the 6-neighborhood structuring element
    and background outside the volume. Stops early once the mask erodes
    to nothing.
    """
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    m = _as_bool(mask).copy()
    skel = np.zeros(m.shape, bool)
    for _ in range(iterations):
        if not m.any():
            break
        opened = ndimage.binary_opening(m, _SE6)
        skel |= m & ~opened
        m = ndimage.binary_erosion(m, _SE6)
    return skel


def cl_dice(pred: VoxelVolume | np.ndarray, gt: VoxelVolume | np.ndarray,
            iterations: int = 8) -> float:
    """Harmonic mean of topology precision and sensitivity.

    Tprec = |skel(P) & G| / |skel(P)|, Tsens = |skel(G) & P| / |skel(G)|.
    Both masks empty scores 1.0; exactly one empty skeleton scores 0.0,
    as does Tprec + Tsens = 0.
    """
    p, g = _as_bool(pred), _as_bool(gt)
    _check_dims(p, g)
    if not p.any() and not g.any():
        return 1.0
    sp, sg = skeletonize(p, iterations), skeletonize(g, iterations)
    if sp.any() != sg.any():
        return 0.0
    if not sp.any():  # both empty but masks were not both empty
        return 0.0
    tprec = int((sp & g).sum()) / int(sp.sum())
    tsens = int((sg & p).sum()) / int(sg.sum())
    if tprec + tsens == 0:
        return 0.0
    return 2.0 * tprec * tsens / (tprec + tsens)


def cb_dice(pred: VoxelVolume | np.ndarray, gt: VoxelVolume | np.ndarray,
            iterations: int = 8) -> float:
    """Caliber-weighted cl_dice.

    Each mask's Euclidean distance-to-background map D estimates local
    caliber. A skeleton voxel x of mask A earns credit
    min(D_B(x) / max(D_A(x), 1), 1) against the other mask B; the score
    sums credits over both skeletons divided by the total skeleton voxel
    count. Empty conventions match cl_dice.
    """
    p, g = _as_bool(pred), _as_bool(gt)
    _check_dims(p, g)
    if not p.any() and not g.any():
        return 1.0
    sp, sg = skeletonize(p, iterations), skeletonize(g, iterations)
    if sp.any() != sg.any():
        return 0.0
    if not sp.any():
        return 0.0
    dp = ndimage.distance_transform_edt(p)
    dg = ndimage.distance_transform_edt(g)
    credit_p = np.minimum(dg[sp] / np.maximum(dp[sp], 1.0), 1.0).sum()
    credit_g = np.minimum(dp[sg] / np.maximum(dg[sg], 1.0), 1.0).sum()
    denom = int(sp.sum()) + int(sg.sum())
    if credit_p + credit_g == 0:
        return 0.0
    return float(credit_p + credit_g) / denom


def remove_small_components(mask: VoxelVolume | np.ndarray, min_volume: int = 30) -> np.ndarray:
    """Drop 26-connected components smaller than min_volume voxels.

    Components of exactly min_volume voxels survive. Idempotent.
    """
    m = _as_bool(mask)
    labels, sizes = connected_components(m, 26)
    if len(sizes) == 0:
        return m.copy()
    keep = np.concatenate([[False], sizes >= min_volume])
    return keep[labels]


@dataclass
class MetricsReport:
    dice: float
    cl_dice: float
    cb_dice: float
    pred_components: int
    gt_components: int

    def to_dict(self) -> dict:
        return {
            "dice": self.dice,
            "cl_dice": self.cl_dice,
            "cb_dice": self.cb_dice,
            "pred_components": self.pred_components,
            "gt_components": self.gt_components,
        }


def compute_report(pred: VoxelVolume | np.ndarray, gt: VoxelVolume | np.ndarray,
                   iterations: int = 8) -> MetricsReport:
    """All metrics plus 26-connected component counts for one case."""
    p, g = _as_bool(pred), _as_bool(gt)
    _check_dims(p, g)
    _, p_sizes = connected_components(p, 26)
    _, g_sizes = connected_components(g, 26)
    return MetricsReport(
        dice=dice(p, g),
        cl_dice=cl_dice(p, g, iterations),
        cb_dice=cb_dice(p, g, iterations),
        pred_components=len(p_sizes),
        gt_components=len(g_sizes),
    )
