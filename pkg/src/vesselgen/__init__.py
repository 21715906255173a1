"""Synthetic 3D vascular trees, volumes, and training patches.

Grow stochastic vessel trees, rasterize them to labeled voxel grids,
cut quality-controlled patches, render angiography-like intensities,
and score segmentations with overlap and topology metrics. Dataset
generation is deterministic down to the file bytes given a master seed.
"""

from .appearance import (
    AppearanceParams,
    CutoutParams,
    SkullParams,
    apply_cutout,
    inject_skull,
    synthesize_background_sample,
    synthesize_image,
)
from .manifest import SampleClass, SampleManifestEntry, read_manifest, write_manifest
from .metrics import (
    MetricsReport,
    cb_dice,
    cl_dice,
    compute_report,
    dice,
    remove_small_components,
    skeletonize,
)
from .patchqc import PatchSpec, QCReport, connected_components, extract_patches, qc_patch
from .pipeline import (
    ClassCounts,
    DatasetConfig,
    GenerationError,
    GenerationStats,
    derive_seed,
    desk_config,
    evaluate,
    generate_dataset,
    paper_config,
    preview_mip,
)
from .rasterize import RasterizationError, RasterOutput, occupancy_fraction, rasterize_tree
from .server import PatchServer, ServerConfig, build_sample, parse_multipart_sample, serve
from .treegen import (
    GrowthError,
    GrowthParams,
    VesselTree,
    grow_tree,
    grow_tree_with_stats,
    load_tree,
    measure_tortuosity,
    propose_segment,
    sample_bifurcation,
    save_tree,
    validate_path,
)
from .volgrid import NiftiParseError, VolumeKind, VoxelVolume, read_nifti, write_nifti

__version__ = "0.1.0"

__all__ = [
    "AppearanceParams",
    "ClassCounts",
    "CutoutParams",
    "DatasetConfig",
    "GenerationError",
    "GenerationStats",
    "GrowthError",
    "GrowthParams",
    "MetricsReport",
    "NiftiParseError",
    "PatchServer",
    "PatchSpec",
    "QCReport",
    "RasterOutput",
    "RasterizationError",
    "SampleClass",
    "SampleManifestEntry",
    "ServerConfig",
    "SkullParams",
    "VesselTree",
    "VolumeKind",
    "VoxelVolume",
    "apply_cutout",
    "build_sample",
    "cb_dice",
    "cl_dice",
    "compute_report",
    "connected_components",
    "derive_seed",
    "desk_config",
    "dice",
    "evaluate",
    "extract_patches",
    "generate_dataset",
    "grow_tree",
    "grow_tree_with_stats",
    "inject_skull",
    "load_tree",
    "measure_tortuosity",
    "occupancy_fraction",
    "paper_config",
    "parse_multipart_sample",
    "preview_mip",
    "propose_segment",
    "qc_patch",
    "rasterize_tree",
    "read_manifest",
    "read_nifti",
    "remove_small_components",
    "sample_bifurcation",
    "save_tree",
    "serve",
    "skeletonize",
    "synthesize_background_sample",
    "synthesize_image",
    "validate_path",
    "write_manifest",
    "write_nifti",
]
