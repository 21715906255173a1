"""Quality control for vessel patches and patch extraction.

A patch is usable for training when it carries enough vessel signal
(occupancy), contains no floating islands (components touching no patch
face, which real contiguous vasculature cannot produce), and has at
least one component spanning the patch (touching two or more faces).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .rasterize import RasterOutput

OCCUPANCY_THRESHOLD = 0.05

_STRUCTURE_26 = np.ones((3, 3, 3), bool)
_STRUCTURE_6 = ndimage.generate_binary_structure(3, 1)


def connected_components(mask: np.ndarray, connectivity: int = 26) -> tuple[np.ndarray, np.ndarray]:
    """Label connected components, largest first.

    Returns (labels, sizes) where labels is an int32 array with values
    0 (background) and 1..n, label 1 being the largest component. Ties
    break toward the component whose first voxel comes earliest in
    x-fastest scan order. sizes[k] is the voxel count of label k+1.
    """
    if connectivity == 26:
        structure = _STRUCTURE_26
    elif connectivity == 6:
        structure = _STRUCTURE_6
    else:
        raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")
    raw, n = ndimage.label(np.asarray(mask) != 0, structure=structure)
    if n == 0:
        return raw.astype(np.int32), np.zeros(0, np.int64)
    flat = raw.ravel(order="F")  # x-fastest scan
    sizes = np.bincount(flat, minlength=n + 1)[1:]
    first = np.full(n + 1, flat.size, np.int64)
    # first occurrence of each label in scan order
    labels_seen, first_idx = np.unique(flat, return_index=True)
    first[labels_seen] = first_idx
    order = sorted(range(1, n + 1), key=lambda k: (-sizes[k - 1], first[k]))
    remap = np.zeros(n + 1, np.int32)
    for new, old in enumerate(order, start=1):
        remap[old] = new
    return remap[raw], sizes[np.asarray(order) - 1]


@dataclass
class QCReport:
    occupancy: float
    component_count: int
    floating_islands: int
    continuity_ok: bool
    passed: bool

    def to_dict(self) -> dict:
        return {
            "occupancy": self.occupancy,
            "component_count": self.component_count,
            "floating_islands": self.floating_islands,
            "continuity_ok": self.continuity_ok,
            "passed": self.passed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QCReport":
        return cls(
            occupancy=float(d["occupancy"]),
            component_count=int(d["component_count"]),
            floating_islands=int(d["floating_islands"]),
            continuity_ok=bool(d["continuity_ok"]),
            passed=bool(d["passed"]),
        )


def qc_patch(patch_mask: np.ndarray, occupancy_threshold: float = OCCUPANCY_THRESHOLD) -> QCReport:
    """Score one binary patch. Components use 26-connectivity."""
    data = np.asarray(patch_mask) != 0
    occupancy = float(np.count_nonzero(data)) / data.size
    labels, _ = connected_components(data, 26)
    n = int(labels.max())
    faces_per_label = np.zeros(n + 1, np.int32)
    for axis in range(3):
        for side in (0, -1):
            face = np.take(labels, side, axis=axis)
            present = np.unique(face)
            faces_per_label[present[present > 0]] += 1
    touching = np.count_nonzero(faces_per_label[1:] > 0)
    floating = n - touching
    continuity_ok = bool((faces_per_label[1:] >= 2).any())
    passed = occupancy >= occupancy_threshold and floating == 0 and continuity_ok
    return QCReport(
        occupancy=occupancy,
        component_count=n,
        floating_islands=floating,
        continuity_ok=continuity_ok,
        passed=passed,
    )


@dataclass
class PatchSpec:
    origin: tuple[int, int, int]
    size: int


def _extract_with_rejections(
    raster: RasterOutput,
    rng: np.random.Generator,
    max_accepted: int = 50,
    max_attempts: int = 200,
    patch_size: int = 96,
    occupancy_threshold: float = OCCUPANCY_THRESHOLD,
) -> tuple[list[tuple[PatchSpec, QCReport]], dict[str, int]]:
    """extract_patches plus a histogram of rejection reasons.

    A rejected patch is charged to the first failing check in the order
    low_occupancy, floating_islands, discontinuous.
    """
    mask = raster.mask.data
    dims = mask.shape
    if any(patch_size > n for n in dims):
        raise ValueError(f"patch size {patch_size} exceeds volume dims {dims}")
    hi = [n - patch_size + 1 for n in dims]
    accepted: list[tuple[PatchSpec, QCReport]] = []
    rejections = {"low_occupancy": 0, "floating_islands": 0, "discontinuous": 0}
    min_count = occupancy_threshold * patch_size ** 3
    for _ in range(max_attempts):
        if len(accepted) >= max_accepted:
            break
        o = tuple(int(rng.integers(0, h)) for h in hi)
        window = mask[o[0]:o[0] + patch_size, o[1]:o[1] + patch_size, o[2]:o[2] + patch_size]
        # occupancy is by far the common failure; skip the component
        # analysis for windows that cannot pass it
        if np.count_nonzero(window) < min_count:
            rejections["low_occupancy"] += 1
            continue
        report = qc_patch(window, occupancy_threshold)
        if report.passed:
            accepted.append((PatchSpec(o, patch_size), report))
        elif report.occupancy < occupancy_threshold:
            rejections["low_occupancy"] += 1
        elif report.floating_islands > 0:
            rejections["floating_islands"] += 1
        else:
            rejections["discontinuous"] += 1
    return accepted, rejections


def extract_patches(
    raster: RasterOutput,
    rng: np.random.Generator,
    max_accepted: int = 50,
    max_attempts: int = 200,
    patch_size: int = 96,
    occupancy_threshold: float = OCCUPANCY_THRESHOLD,
) -> list[tuple[PatchSpec, QCReport]]:
    """Sample patch origins uniformly and keep those that pass QC.

    Origins are drawn uniformly over the valid corner lattice (one
    3-component draw per attempt). Sampling stops after max_accepted
    acceptances or max_attempts draws, whichever comes first; returning
    zero patches is a valid outcome.
    """
    accepted, _ = _extract_with_rejections(
        raster, rng, max_accepted, max_attempts, patch_size, occupancy_threshold
    )
    return accepted
