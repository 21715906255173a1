"""Domain-randomized angiography-like appearance synthesis.

Labels are geometry, images are appearance: given a binary vessel label,
synthesize_image builds an intensity volume in a fixed pipeline order so
that one (label, generator state) pair always yields the same image:

  (1) fill with a background intensity,
  (2) composite random dim shapes (later shapes overwrite earlier),
  (3) paint vessel voxels with a vessel intensity plus per-voxel jitter,
  (4) optionally inject a skull-like ellipsoid shell over background,
  (5) optional contrast inversion, then Gaussian blur with sampled sigma,
  (6) additive Gaussian noise,
  (7) clamp to [0, 1].

The label volume is never altered. apply_cutout is a separate corruption
pass used for inpainting-style training targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volgrid import VolumeKind, VoxelVolume

SHAPE_KINDS = ("sphere", "ellipsoid", "box", "slab")
CUTOUT_FILL = -1.0


@dataclass
class SkullParams:
    semi_axes_range: tuple[float, float] = (40.0, 80.0)
    shell_thickness_range: tuple[float, float] = (2.0, 6.0)
    shell_intensity_range: tuple[float, float] = (0.8, 1.0)
    center_jitter: float = 8.0

    def validate(self) -> None:
        for name in ("semi_axes_range", "shell_thickness_range", "shell_intensity_range"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ValueError(f"{name} must satisfy 0 <= lo <= hi, got {(lo, hi)}")
        # shell carved inward from the ellipsoid surface must not reach the center
        if self.shell_thickness_range[1] >= self.semi_axes_range[0]:
            raise ValueError("max shell thickness must stay below the min semi-axis")
        if self.center_jitter < 0:
            raise ValueError("center_jitter must be non-negative")


@dataclass
class CutoutParams:
    cube_edge_range: tuple[int, int] = (2, 16)
    cube_count_range: tuple[int, int] = (1, 12)
    fill_value: float = CUTOUT_FILL

    def validate(self) -> None:
        lo, hi = self.cube_edge_range
        if not 1 <= lo <= hi:
            raise ValueError(f"cube_edge_range must satisfy 1 <= lo <= hi, got {(lo, hi)}")
        lo, hi = self.cube_count_range
        if not 0 <= lo <= hi:
            raise ValueError(f"cube_count_range must satisfy 0 <= lo <= hi, got {(lo, hi)}")
        if self.fill_value != CUTOUT_FILL:
            raise ValueError("cutout fill value is fixed at -1 so corrupted voxels are unambiguous")


@dataclass
class AppearanceParams:
    shape_count_range: tuple[int, int] = (1, 8)
    shape_kinds: tuple[str, ...] = SHAPE_KINDS
    background_intensity_range: tuple[float, float] = (0.0, 0.4)
    vessel_intensity_range: tuple[float, float] = (0.6, 1.0)
    intensity_jitter_sd: float = 0.05
    blur_sigma_range: tuple[float, float] = (0.0, 1.5)
    noise_sigma_range: tuple[float, float] = (0.01, 0.10)
    contrast_invert_prob: float = 0.0
    skull: SkullParams | None = None

    def validate(self) -> None:
        lo, hi = self.shape_count_range
        if not 0 <= lo <= hi:
            raise ValueError(f"shape_count_range must satisfy 0 <= lo <= hi, got {(lo, hi)}")
        if not self.shape_kinds:
            raise ValueError("shape_kinds must not be empty")
        for kind in self.shape_kinds:
            if kind not in SHAPE_KINDS:
                raise ValueError(f"unknown shape kind {kind!r}; choose from {SHAPE_KINDS}")
        for name in ("background_intensity_range", "vessel_intensity_range",
                     "blur_sigma_range", "noise_sigma_range"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ValueError(f"{name} must satisfy 0 <= lo <= hi, got {(lo, hi)}")
        if self.background_intensity_range[1] > 1 or self.vessel_intensity_range[1] > 1:
            raise ValueError("intensity ranges must stay within [0, 1]")
        if self.intensity_jitter_sd < 0:
            raise ValueError("intensity_jitter_sd must be non-negative")
        if not 0 <= self.contrast_invert_prob <= 1:
            raise ValueError("contrast_invert_prob must lie in [0, 1]")
        if self.skull is not None:
            self.skull.validate()


def _centers_1d(dims: tuple[int, ...]) -> list[np.ndarray]:
    return [np.arange(n) + 0.5 for n in dims]


def _paint_shapes(canvas: np.ndarray, params: AppearanceParams, rng: np.random.Generator) -> None:
    """Composite n random shapes, later shapes overwriting earlier ones.

    Per shape the draw order is fixed: kind index, center (3), size
    parameters, intensity.
    """
    dims = canvas.shape
    xs, ys, zs = _centers_1d(dims)
    n = int(rng.integers(params.shape_count_range[0], params.shape_count_range[1] + 1))
    lo, hi = params.background_intensity_range
    for _ in range(n):
        kind = params.shape_kinds[int(rng.integers(0, len(params.shape_kinds)))]
        c = rng.uniform(0.0, 1.0, 3) * np.asarray(dims)
        if kind == "sphere":
            r = rng.uniform(0.05, 0.4) * min(dims)
            intensity = rng.uniform(lo, hi)
            region = ((xs[:, None, None] - c[0]) ** 2
                      + (ys[None, :, None] - c[1]) ** 2
                      + (zs[None, None, :] - c[2]) ** 2) <= r * r
        elif kind == "ellipsoid":
            a = rng.uniform(0.05, 0.35, 3) * np.asarray(dims)
            intensity = rng.uniform(lo, hi)
            region = (((xs[:, None, None] - c[0]) / a[0]) ** 2
                      + ((ys[None, :, None] - c[1]) / a[1]) ** 2
                      + ((zs[None, None, :] - c[2]) / a[2]) ** 2) <= 1.0
        elif kind == "box":
            h = rng.uniform(0.05, 0.3, 3) * np.asarray(dims)
            intensity = rng.uniform(lo, hi)
            region = ((np.abs(xs[:, None, None] - c[0]) <= h[0])
                      & (np.abs(ys[None, :, None] - c[1]) <= h[1])
                      & (np.abs(zs[None, None, :] - c[2]) <= h[2]))
        else:  # slab
            normal = rng.normal(0.0, 1.0, 3)
            norm = np.linalg.norm(normal)
            if norm < 1e-12:
                normal = np.array([1.0, 0.0, 0.0])
            else:
                normal = normal / norm
            t = rng.uniform(2.0, 12.0)
            intensity = rng.uniform(lo, hi)
            plane = ((xs[:, None, None] - c[0]) * normal[0]
                     + (ys[None, :, None] - c[1]) * normal[1]
                     + (zs[None, None, :] - c[2]) * normal[2])
            region = np.abs(plane) <= t / 2.0
        canvas[region] = intensity


def _skull_shell_region(dims: tuple[int, ...], center: np.ndarray,
                        semi_axes: np.ndarray, thickness: float) -> np.ndarray:
    """Boolean shell: 1 - t/min(a) <= ||(v - c) / a|| <= 1 in normalized coords."""
    xs, ys, zs = _centers_1d(dims)
    rho = np.sqrt(((xs[:, None, None] - center[0]) / semi_axes[0]) ** 2
                  + ((ys[None, :, None] - center[1]) / semi_axes[1]) ** 2
                  + ((zs[None, None, :] - center[2]) / semi_axes[2]) ** 2)
    inner = 1.0 - thickness / float(np.min(semi_axes))
    return (rho >= inner) & (rho <= 1.0)


def inject_skull(image: VoxelVolume, label: VoxelVolume, params: SkullParams,
                 rng: np.random.Generator) -> VoxelVolume:
    """Overlay a bright ellipsoid shell on background voxels only.

    Draw order: semi-axes (3), thickness, intensity, center jitter (3).
    The shell is centered near the volume center and clipped silently at
    the volume boundary; vessel voxels keep their intensity.
    """
    params.validate()
    if image.data.shape != label.data.shape:
        raise ValueError(f"image dims {image.data.shape} != label dims {label.data.shape}")
    canvas = image.data.astype(np.float64)
    _inject_skull_canvas(canvas, label.data, params, rng)
    return VoxelVolume(canvas.astype(np.float32), VolumeKind.INTENSITY, image.spacing)


def _inject_skull_canvas(canvas: np.ndarray, label: np.ndarray, params: SkullParams,
                         rng: np.random.Generator) -> None:
    dims = canvas.shape
    semi_axes = rng.uniform(params.semi_axes_range[0], params.semi_axes_range[1], 3)
    thickness = rng.uniform(params.shell_thickness_range[0], params.shell_thickness_range[1])
    intensity = rng.uniform(params.shell_intensity_range[0], params.shell_intensity_range[1])
    center = (np.asarray(dims) / 2.0
              + rng.uniform(-params.center_jitter, params.center_jitter, 3))
    region = _skull_shell_region(dims, center, semi_axes, thickness)
    canvas[region & (label == 0)] = intensity


def synthesize_image(label: VoxelVolume, params: AppearanceParams,
                     rng: np.random.Generator) -> VoxelVolume:
    """Render an intensity volume for a binary vessel label.

    Draw order (fixed): background intensity, shape draws, vessel
    intensity, vessel jitter field, skull draws if configured, contrast
    gate, blur sigma, noise field. The gate draw happens even when
    contrast_invert_prob is 0 so configurations differing only in that
    probability stay draw-aligned.
    """
    params.validate()
    lab = label.data
    canvas = np.empty(lab.shape, np.float64)
    canvas.fill(rng.uniform(params.background_intensity_range[0],
                            params.background_intensity_range[1]))
    _paint_shapes(canvas, params, rng)

    vessel = lab != 0
    v_int = rng.uniform(params.vessel_intensity_range[0], params.vessel_intensity_range[1])
    jitter = rng.normal(0.0, params.intensity_jitter_sd, int(vessel.sum()))
    canvas[vessel] = v_int + jitter

    if params.skull is not None:
        _inject_skull_canvas(canvas, lab, params.skull, rng)

    if rng.uniform(0.0, 1.0) < params.contrast_invert_prob:
        canvas = 1.0 - canvas

    sigma = rng.uniform(params.blur_sigma_range[0], params.blur_sigma_range[1])
    if sigma > 0:
        canvas = ndimage.gaussian_filter(canvas, sigma, mode="reflect")

    noise_sigma = rng.uniform(params.noise_sigma_range[0], params.noise_sigma_range[1])
    canvas += rng.normal(0.0, 1.0, lab.shape) * noise_sigma

    np.clip(canvas, 0.0, 1.0, out=canvas)
    return VoxelVolume(canvas.astype(np.float32), VolumeKind.INTENSITY, label.spacing)


def synthesize_background_sample(patch_size: int | tuple[int, int, int],
                                 params: AppearanceParams,
                                 rng: np.random.Generator) -> tuple[VoxelVolume, VoxelVolume]:
    """Vessel-free training sample: background fill, shapes, contrast
    gate, blur, noise, clamp, paired with an all-zero label."""
    params.validate()
    dims = (patch_size,) * 3 if isinstance(patch_size, int) else tuple(patch_size)
    canvas = np.empty(dims, np.float64)
    canvas.fill(rng.uniform(params.background_intensity_range[0],
                            params.background_intensity_range[1]))
    _paint_shapes(canvas, params, rng)

    if rng.uniform(0.0, 1.0) < params.contrast_invert_prob:
        canvas = 1.0 - canvas

    sigma = rng.uniform(params.blur_sigma_range[0], params.blur_sigma_range[1])
    if sigma > 0:
        canvas = ndimage.gaussian_filter(canvas, sigma, mode="reflect")
    noise_sigma = rng.uniform(params.noise_sigma_range[0], params.noise_sigma_range[1])
    canvas += rng.normal(0.0, 1.0, dims) * noise_sigma
    np.clip(canvas, 0.0, 1.0, out=canvas)

    image = VoxelVolume(canvas.astype(np.float32), VolumeKind.INTENSITY)
    label = VoxelVolume(np.zeros(dims, np.uint8), VolumeKind.BINARY_MASK)
    return image, label


def apply_cutout(image: VoxelVolume, params: CutoutParams,
                 rng: np.random.Generator) -> tuple[VoxelVolume, VoxelVolume]:
    """Blank out n random cubes with the sentinel fill value -1.

    n is uniform over cube_count_range (inclusive); each cube draws its
    edge length (uniform integer over cube_edge_range, inclusive) then
    its origin (uniform over positions keeping the cube inside). Returns
    (corrupted image, corruption mask); the mask is 1 exactly on
    corrupted voxels.
    """
    params.validate()
    dims = image.data.shape
    if min(dims) < params.cube_edge_range[1]:
        raise ValueError(
            f"volume dims {dims} cannot hold a cube of edge {params.cube_edge_range[1]}"
        )
    corrupted = image.data.copy()
    cut = np.zeros(dims, bool)
    n = int(rng.integers(params.cube_count_range[0], params.cube_count_range[1] + 1))
    for _ in range(n):
        e = int(rng.integers(params.cube_edge_range[0], params.cube_edge_range[1] + 1))
        o = [int(rng.integers(0, d - e + 1)) for d in dims]
        cut[o[0]:o[0] + e, o[1]:o[1] + e, o[2]:o[2] + e] = True
    corrupted[cut] = np.float32(params.fill_value)
    return (
        VoxelVolume(corrupted, VolumeKind.INTENSITY, image.spacing),
        VoxelVolume(cut.astype(np.uint8), VolumeKind.BINARY_MASK, image.spacing),
    )
