"""Deterministic dataset generation, evaluation, and previews.

Every sample's randomness flows from one u64 master seed through
derive_seed, so any sample can be regenerated in isolation and the
output is byte-identical no matter how many workers produced it.
Parallel runs grow trees speculatively; results are consumed in tree
index order and any overshoot past the requested sample count is
deleted, which keeps manifests and volumes worker-count independent.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from .appearance import AppearanceParams, CutoutParams, SkullParams, apply_cutout, \
    synthesize_background_sample, synthesize_image
from .manifest import SampleClass, SampleManifestEntry, read_manifest, write_manifest
from .metrics import compute_report, remove_small_components
from .patchqc import QCReport, _extract_with_rejections, qc_patch
from .rasterize import rasterize_tree
from .treegen import GrowthParams, grow_tree
from .volgrid import VolumeKind, VoxelVolume, read_nifti, write_nifti

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_STREAM_TAGS = {"train": 0, "val": 1}

# Philox key words separating the per-sample random streams. The tree
# stream lives in treegen; these must stay distinct from it and from
# each other (appearance/cutout bases are offset by the patch index,
# which extract_patches caps far below 2**16).
_PATCH_STREAM = 0x70617463
_APPEARANCE_STREAM = 0x61700000
_CUTOUT_STREAM = 0x63750000

# Disjoint per-class sample index spaces: class tag in the high bits,
# per-class counter in the low 48.
_CLASS_BASE = {
    SampleClass.LOW_TORT: 0 << 48,
    SampleClass.HIGH_TORT: 1 << 48,
    SampleClass.SKULL: 2 << 48,
    SampleClass.BACKGROUND: 3 << 48,
}

_REJECTION_KEYS = ("low_occupancy", "floating_islands", "discontinuous")
_STAGE_KEYS = ("grow", "rasterize", "extract", "synthesize", "write")


class GenerationError(Exception):
    """Dataset generation could not reach the requested counts."""

    def __init__(self, message: str, shortfall: dict[str, int], rejections: dict[str, int]):
        super().__init__(message)
        self.shortfall = shortfall
        self.rejections = rejections


def splitmix64(state: int) -> int:
    """One SplitMix64 step: golden-ratio increment, then the finalizer."""
    z = (state + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, stream: str, sample_index: int) -> int:
    """Per-sample u64 seed: SplitMix64 over master ^ (tag << 63) ^ index.

    The tag bit separates train from val; SplitMix64 is a bijection on
    u64 so distinct sample indices always yield distinct seeds.
    """
    if stream not in _STREAM_TAGS:
        raise ValueError(f"stream must be one of {sorted(_STREAM_TAGS)}, got {stream!r}")
    if not 0 <= sample_index <= _MASK64:
        raise ValueError(f"sample_index must be a u64, got {sample_index}")
    x = (master_seed & _MASK64) ^ (_STREAM_TAGS[stream] << 63) ^ sample_index
    return splitmix64(x)


@dataclass
class ClassCounts:
    low_tort: int = 0
    high_tort: int = 0
    skull: int = 0
    background: int = 0

    def for_class(self, cls: SampleClass) -> int:
        return getattr(self, cls.value)

    def total(self) -> int:
        return self.low_tort + self.high_tort + self.skull + self.background

    def validate(self) -> None:
        for cls in SampleClass:
            if self.for_class(cls) < 0:
                raise ValueError(f"negative count for class {cls.value}")


def dataset_growth_defaults() -> GrowthParams:
    """Growth parameters tuned for dense trees whose 96-voxel windows
    routinely clear the occupancy floor."""
    return GrowthParams(
        root_radius_range=(10.0, 14.0),
        segment_length_range=(8.0, 20.0),
        branch_prob_decay=0.95,
        flow_split_range=(0.25, 0.75),
        tortuosity=0.6,
    )


@dataclass
class DatasetConfig:
    master_seed: int = 42
    train_counts: ClassCounts = field(
        default_factory=lambda: ClassCounts(low_tort=50, high_tort=50, skull=25, background=25))
    val_counts: ClassCounts = field(
        default_factory=lambda: ClassCounts(low_tort=5, high_tort=5, skull=3, background=2))
    growth: GrowthParams = field(default_factory=dataset_growth_defaults)
    # per-class partial GrowthParams overrides keyed by class name;
    # low_tort always ends at tortuosity 0 regardless
    growth_overrides: dict = field(default_factory=dict)
    appearance: AppearanceParams = field(default_factory=AppearanceParams)
    skull: SkullParams = field(default_factory=SkullParams)
    cutout: CutoutParams | None = None
    patch_size: int = 96
    max_patches_per_tree: int = 50
    max_patch_attempts: int = 200
    tree_budget_factor: int = 20
    out_dir: str | None = None
    workers: int = 1

    def validate(self) -> None:
        self.train_counts.validate()
        self.val_counts.validate()
        self.growth.validate()
        self.appearance.validate()
        self.skull.validate()
        if self.cutout is not None:
            self.cutout.validate()
        for cls in SampleClass:
            class_growth(self, cls).validate()
        if self.patch_size < 1 or any(self.patch_size > n for n in self.growth.domain_dims):
            raise ValueError("patch_size must fit inside the growth domain")
        if self.max_patches_per_tree < 1 or self.max_patch_attempts < 1:
            raise ValueError("patch caps must be positive")
        if self.tree_budget_factor < 1:
            raise ValueError("tree_budget_factor must be positive")
        if self.workers < 1:
            raise ValueError("workers must be positive")


def desk_config(master_seed: int = 42) -> DatasetConfig:
    """Small 150-train / 15-val configuration that runs in minutes."""
    return DatasetConfig(master_seed=master_seed)


def paper_config(master_seed: int = 42) -> DatasetConfig:
    """Full-scale 15,000-train / 1,500-val configuration."""
    return DatasetConfig(
        master_seed=master_seed,
        train_counts=ClassCounts(low_tort=5000, high_tort=5000, skull=2500, background=2500),
        val_counts=ClassCounts(low_tort=500, high_tort=500, skull=250, background=250),
    )


def class_growth(config: DatasetConfig, cls: SampleClass) -> GrowthParams:
    """Growth parameters for one sample class.

    Applies the class's partial override onto the base parameters, then
    forces tortuosity to 0 for low_tort. The skull class grows the same
    trees as high_tort unless overridden.
    """
    params = config.growth
    override = dict(config.growth_overrides.get(cls.value, {}))
    for name, value in override.items():
        if isinstance(getattr(params, name), tuple) and isinstance(value, list):
            override[name] = tuple(value)
    if override:
        params = dataclasses.replace(params, **override)
    if cls is SampleClass.LOW_TORT:
        params = dataclasses.replace(params, tortuosity=0.0)
    return params


def _dataclass_from(cls_t, d: dict):
    """Build a dataclass from a partial dict, list-to-tuple coercing
    fields whose defaults are tuples."""
    proto = cls_t()
    kwargs = {}
    valid = {f.name for f in dataclasses.fields(cls_t)}
    unknown = set(d) - valid
    if unknown:
        raise ValueError(f"unknown {cls_t.__name__} fields: {sorted(unknown)}")
    for name, value in d.items():
        if isinstance(getattr(proto, name), tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    return dataclasses.replace(proto, **kwargs)


def config_to_dict(config: DatasetConfig) -> dict:
    return dataclasses.asdict(config)


def config_from_dict(d: dict) -> DatasetConfig:
    d = dict(d)
    parts = {}
    if "train_counts" in d:
        parts["train_counts"] = _dataclass_from(ClassCounts, d.pop("train_counts"))
    if "val_counts" in d:
        parts["val_counts"] = _dataclass_from(ClassCounts, d.pop("val_counts"))
    if "growth" in d:
        parts["growth"] = _dataclass_from(GrowthParams, d.pop("growth"))
    if "appearance" in d:
        a = dict(d.pop("appearance"))
        skull = a.pop("skull", None)
        ap = _dataclass_from(AppearanceParams, a)
        if skull is not None:
            ap = dataclasses.replace(ap, skull=_dataclass_from(SkullParams, skull))
        parts["appearance"] = ap
    if "skull" in d:
        parts["skull"] = _dataclass_from(SkullParams, d.pop("skull"))
    if "cutout" in d:
        cut = d.pop("cutout")
        parts["cutout"] = None if cut is None else _dataclass_from(CutoutParams, cut)
    base = _dataclass_from(DatasetConfig, d)
    return dataclasses.replace(base, **parts)


def load_config(path: str | Path) -> DatasetConfig:
    with open(path, "r", encoding="utf-8") as f:
        return config_from_dict(json.load(f))


def params_hash(config: DatasetConfig) -> str:
    """Hash of the generation-relevant configuration.

    out_dir and workers are execution details excluded so the same
    logical dataset hashes identically wherever and however it ran.
    """
    d = config_to_dict(config)
    d.pop("out_dir", None)
    d.pop("workers", None)
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class ClassStats:
    trees_grown: int = 0
    patches_attempted: int = 0
    patches_accepted: int = 0
    rejections: dict = field(
        default_factory=lambda: {k: 0 for k in _REJECTION_KEYS})


@dataclass
class GenerationStats:
    """Bookkeeping for one generate_dataset run.

    Counts cover only trees consumed toward the dataset. Attempt and
    rejection counts depend on scheduling (per-tree patch caps shrink as
    the run fills up), so they may differ across worker counts even
    though the generated samples never do. Stage times are summed
    across workers.
    """
    per_class: dict = field(default_factory=dict)  # "stream/class" -> ClassStats
    stage_seconds: dict = field(default_factory=lambda: {k: 0.0 for k in _STAGE_KEYS})
    wall_seconds: float = 0.0

    def trees_grown(self) -> int:
        return sum(s.trees_grown for s in self.per_class.values())

    def to_dict(self) -> dict:
        return {
            "trees_grown": self.trees_grown(),
            "per_class": {k: dataclasses.asdict(v) for k, v in sorted(self.per_class.items())},
            "stage_seconds": {k: round(v, 3) for k, v in self.stage_seconds.items()},
            "wall_seconds": round(self.wall_seconds, 3),
        }


@dataclass
class _TreeResult:
    tree_index: int
    entries: list          # SampleManifestEntry per accepted patch
    entry_files: list      # per entry, the relative paths written for it
    attempted: int
    rejections: dict
    timings: dict


def _class_appearance(config: DatasetConfig, cls: SampleClass) -> AppearanceParams:
    if cls is SampleClass.SKULL:
        return dataclasses.replace(config.appearance, skull=config.skull)
    return config.appearance


def _write_sample_files(out_root: Path, stream: str, sample_id: str,
                        image: VoxelVolume, label: VoxelVolume,
                        config: DatasetConfig, seed: int,
                        patch_index: int = 0) -> tuple[str, str, list[str]]:
    """Write one sample's volumes (plus cutout variant when configured).

    Returns (image_rel, label_rel, all_rel_paths)."""
    image_rel = f"{stream}/{sample_id}_image.nii.gz"
    label_rel = f"{stream}/{sample_id}_label.nii.gz"
    files = [image_rel, label_rel]
    write_nifti(image, out_root / image_rel)
    write_nifti(label, out_root / label_rel)
    if config.cutout is not None:
        crng = np.random.Generator(
            np.random.Philox(key=[seed, _CUTOUT_STREAM + patch_index]))
        corrupted, cut_mask = apply_cutout(image, config.cutout, crng)
        corrupt_rel = f"{stream}/{sample_id}_corrupt.nii.gz"
        cutmask_rel = f"{stream}/{sample_id}_cutmask.nii.gz"
        write_nifti(corrupted, out_root / corrupt_rel)
        write_nifti(cut_mask, out_root / cutmask_rel)
        files += [corrupt_rel, cutmask_rel]
    return image_rel, label_rel, files


def _vessel_task(config: DatasetConfig, stream: str, cls: SampleClass,
                 out_root: str, cfg_hash: str, max_accepted: int,
                 tree_index: int) -> _TreeResult:
    """Grow one tree and write up to max_accepted patches that pass QC.

    Pure function of its arguments; safe to run in any process. Accepted
    patches form a prefix of the attempt sequence, so a smaller
    max_accepted yields a prefix of a larger one and trimming the cap to
    the remaining need never changes which samples are kept.
    """
    out_root = Path(out_root)
    seed = derive_seed(config.master_seed, stream, _CLASS_BASE[cls] + tree_index)
    timings = {k: 0.0 for k in _STAGE_KEYS}

    t0 = time.perf_counter()
    tree = grow_tree(class_growth(config, cls), seed)
    timings["grow"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    raster = rasterize_tree(tree)
    timings["rasterize"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    prng = np.random.Generator(np.random.Philox(key=[seed, _PATCH_STREAM]))
    accepted, rejections = _extract_with_rejections(
        raster, prng, min(max_accepted, config.max_patches_per_tree),
        config.max_patch_attempts, config.patch_size)
    timings["extract"] = time.perf_counter() - t0

    appearance = _class_appearance(config, cls)
    entries: list[SampleManifestEntry] = []
    entry_files: list[list[str]] = []
    for p_idx, (spec, qc) in enumerate(accepted):
        o, s = spec.origin, spec.size
        label = VoxelVolume(
            raster.mask.data[o[0]:o[0] + s, o[1]:o[1] + s, o[2]:o[2] + s].copy(),
            VolumeKind.BINARY_MASK)
        t0 = time.perf_counter()
        arng = np.random.Generator(np.random.Philox(key=[seed, _APPEARANCE_STREAM + p_idx]))
        image = synthesize_image(label, appearance, arng)
        timings["synthesize"] += time.perf_counter() - t0

        sample_id = f"{stream}_{cls.value}_t{tree_index:05d}_p{p_idx:02d}"
        t0 = time.perf_counter()
        image_rel, label_rel, files = _write_sample_files(
            out_root, stream, sample_id, image, label, config, seed, p_idx)
        timings["write"] += time.perf_counter() - t0
        entries.append(SampleManifestEntry(
            sample_id=sample_id, sample_class=cls, seed=seed,
            image_path=image_rel, label_path=label_rel, qc=qc,
            params_hash=cfg_hash))
        entry_files.append(files)

    return _TreeResult(
        tree_index=tree_index, entries=entries, entry_files=entry_files,
        attempted=len(accepted) + sum(rejections.values()),
        rejections=rejections, timings=timings)


def _background_task(config: DatasetConfig, stream: str, out_root: str,
                     cfg_hash: str, index: int) -> _TreeResult:
    out_root = Path(out_root)
    seed = derive_seed(config.master_seed, stream,
                       _CLASS_BASE[SampleClass.BACKGROUND] + index)
    timings = {k: 0.0 for k in _STAGE_KEYS}
    t0 = time.perf_counter()
    arng = np.random.Generator(np.random.Philox(key=[seed, _APPEARANCE_STREAM]))
    image, label = synthesize_background_sample(config.patch_size, config.appearance, arng)
    timings["synthesize"] = time.perf_counter() - t0

    sample_id = f"{stream}_background_t{index:05d}_p00"
    t0 = time.perf_counter()
    image_rel, label_rel, files = _write_sample_files(
        out_root, stream, sample_id, image, label, config, seed)
    timings["write"] = time.perf_counter() - t0
    qc = QCReport(occupancy=0.0, component_count=0, floating_islands=0,
                  continuity_ok=False, passed=False)
    entry = SampleManifestEntry(
        sample_id=sample_id, sample_class=SampleClass.BACKGROUND, seed=seed,
        image_path=image_rel, label_path=label_rel, qc=qc, params_hash=cfg_hash)
    return _TreeResult(tree_index=index, entries=[entry], entry_files=[files],
                       attempted=1, rejections={k: 0 for k in _REJECTION_KEYS},
                       timings=timings)


def _delete_files(out_root: Path, rel_paths: list[str]) -> None:
    for rel in rel_paths:
        try:
            os.remove(out_root / rel)
        except FileNotFoundError:
            pass


def _consume_results(results, needed: int, out_root: Path, stats: ClassStats,
                     stage_seconds: dict, kept: list) -> int:
    """Take entries from in-order results until needed is met.

    Returns how many entries were taken. Results arriving after the
    count is met are deleted wholesale so the retained file set depends
    only on tree index order.
    """
    taken = 0
    for result in results:
        have = len(kept)
        if have >= needed:
            _delete_files(out_root, [f for fs in result.entry_files for f in fs])
            continue
        stats.trees_grown += 1
        stats.patches_attempted += result.attempted
        for key, n in result.rejections.items():
            stats.rejections[key] += n
        for key, s in result.timings.items():
            stage_seconds[key] += s
        take = min(len(result.entries), needed - have)
        kept.extend(result.entries[:take])
        stats.patches_accepted += take
        for files in result.entry_files[take:]:
            _delete_files(out_root, files)
        taken += take
    return taken


def generate_dataset(config: DatasetConfig, out_dir: str | Path | None = None,
                     workers: int | None = None) -> tuple[Path, GenerationStats]:
    """Generate the full dataset and write manifest.jsonl.

    Raises GenerationError when a class cannot reach its requested count
    within tree_budget_factor times that count trees.
    """
    config.validate()
    out_root = Path(out_dir if out_dir is not None else config.out_dir or "dataset_out")
    workers = int(workers if workers is not None else config.workers)
    if workers < 1:
        raise ValueError("workers must be positive")
    cfg_hash = params_hash(config)

    wall_start = time.perf_counter()
    for stream in _STREAM_TAGS:
        (out_root / stream).mkdir(parents=True, exist_ok=True)

    stats = GenerationStats()
    entries: list[SampleManifestEntry] = []
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for stream, counts in (("train", config.train_counts), ("val", config.val_counts)):
            for cls in SampleClass:
                needed = counts.for_class(cls)
                cls_stats = stats.per_class.setdefault(f"{stream}/{cls.value}", ClassStats())
                if needed == 0:
                    continue
                if cls is SampleClass.BACKGROUND:
                    budget = needed
                else:
                    budget = needed * config.tree_budget_factor
                kept: list[SampleManifestEntry] = []
                next_index = 0
                while len(kept) < needed and next_index < budget:
                    chunk_hi = min(next_index + workers, budget)
                    if cls is SampleClass.BACKGROUND:
                        task = partial(_background_task, config, stream,
                                       str(out_root), cfg_hash)
                        chunk_hi = min(next_index + max(workers, needed - len(kept)), budget)
                    else:
                        # cap each tree's work at what is still missing;
                        # kept only grows, so the consumed prefix per tree
                        # stays within the cap it ran with
                        cap = needed - len(kept)
                        task = partial(_vessel_task, config, stream, cls,
                                       str(out_root), cfg_hash, cap)
                    indices = range(next_index, chunk_hi)
                    if pool is not None:
                        results = pool.map(task, indices)
                    else:
                        results = map(task, indices)
                    _consume_results(results, needed, out_root, cls_stats,
                                     stats.stage_seconds, kept)
                    next_index = chunk_hi
                if len(kept) < needed:
                    shortfall = {f"{stream}/{cls.value}": needed - len(kept)}
                    raise GenerationError(
                        f"exhausted tree budget ({budget}) with "
                        f"{needed - len(kept)} samples missing for {stream}/{cls.value}; "
                        f"rejections: {cls_stats.rejections}",
                        shortfall=shortfall, rejections=dict(cls_stats.rejections))
                entries.extend(kept)
    finally:
        if pool is not None:
            pool.shutdown()

    manifest_path = out_root / "manifest.jsonl"
    write_manifest(manifest_path, entries)
    stats.wall_seconds = time.perf_counter() - wall_start
    with open(out_root / "stats.json", "w", encoding="utf-8") as f:
        json.dump(stats.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest_path, stats


def evaluate(pred_dir: str | Path, gt_dir: str | Path, postprocess: bool = False,
             min_volume: int = 30) -> dict:
    """Score every prediction against the ground truth of the same name.

    Both directories must contain exactly matching *.nii.gz filenames;
    any unmatched file on either side is an error. Returns per-case
    metric reports plus aggregate mean and standard deviation.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    pred_names = {p.name for p in pred_dir.glob("*.nii.gz")}
    gt_names = {p.name for p in gt_dir.glob("*.nii.gz")}
    if pred_names != gt_names:
        only_pred = sorted(pred_names - gt_names)
        only_gt = sorted(gt_names - pred_names)
        raise ValueError(
            f"prediction/ground-truth mismatch: only in predictions {only_pred}, "
            f"only in ground truth {only_gt}")
    if not pred_names:
        raise ValueError("no .nii.gz volumes found to evaluate")

    cases = {}
    for name in sorted(pred_names):
        pred = read_nifti(pred_dir / name)
        gt = read_nifti(gt_dir / name)
        for vol, side in ((pred, "prediction"), (gt, "ground truth")):
            if vol.kind is not VolumeKind.BINARY_MASK:
                raise ValueError(f"{side} {name} is not a binary mask volume")
        pred_data = pred.data != 0
        if postprocess:
            pred_data = remove_small_components(pred_data, min_volume)
        cases[name] = compute_report(pred_data, gt.data != 0).to_dict()

    metric_names = ("dice", "cl_dice", "cb_dice", "pred_components", "gt_components")
    aggregate = {"mean": {}, "sd": {}}
    for m in metric_names:
        values = np.asarray([cases[name][m] for name in cases], float)
        aggregate["mean"][m] = float(values.mean())
        aggregate["sd"][m] = float(values.std())
    return {
        "cases": cases,
        "aggregate": aggregate,
        "postprocess": postprocess,
        "min_volume": min_volume if postprocess else None,
    }


_AXIS_INDEX = {"x": 0, "y": 1, "z": 2}


def preview_mip(volume: VoxelVolume | str | Path, axis: str = "z",
                out_path: str | Path | None = None) -> np.ndarray:
    """Maximum-intensity projection as a uint8 grayscale image.

    Corrupted voxels (-1) render as black. Returns the projection
    indexed by the two remaining axes in x,y,z order; when out_path is
    given, also writes a PNG with the first remaining axis horizontal.
    """
    if axis not in _AXIS_INDEX:
        raise ValueError(f"axis must be one of x, y, z, got {axis!r}")
    vol = read_nifti(volume) if isinstance(volume, (str, Path)) else volume
    data = np.maximum(vol.data.astype(np.float64), 0.0) * 255.0
    mip = data.max(axis=_AXIS_INDEX[axis])
    img = np.clip(np.round(mip), 0, 255).astype(np.uint8)
    if out_path is not None:
        from PIL import Image

        Image.fromarray(img.T, mode="L").save(out_path)
    return img


def reverify_dataset(out_root: str | Path) -> dict:
    """Re-check every manifest entry's volumes from disk.

    Recomputes each label's QC report and compares it with the recorded
    one. Returns {"checked": n, "mismatches": [sample ids]}.
    """
    out_root = Path(out_root)
    entries = read_manifest(out_root / "manifest.jsonl")
    mismatches = []
    for entry in entries:
        label = read_nifti(out_root / entry.label_path)
        report = qc_patch(label.data)
        if report.to_dict() != entry.qc.to_dict():
            mismatches.append(entry.sample_id)
    return {"checked": len(entries), "mismatches": mismatches}
