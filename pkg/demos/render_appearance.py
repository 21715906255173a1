"""
Angiography-like appearance and cutout corruption
=================================================

Takes one QC-passing patch and renders it three ways: plain, with a
skull shell, and with cutout cubes blanked to the -1 sentinel.
"""

import numpy as np

from vesselgen import (
    AppearanceParams,
    CutoutParams,
    GrowthParams,
    SkullParams,
    VolumeKind,
    VoxelVolume,
    apply_cutout,
    extract_patches,
    grow_tree,
    preview_mip,
    rasterize_tree,
    synthesize_image,
)

params = GrowthParams(root_radius_range=(10.0, 14.0), tortuosity=0.6,
                      branch_prob_decay=0.95)
raster = rasterize_tree(grow_tree(params, seed=5))
rng = np.random.Generator(np.random.Philox(5))
(spec, report), = extract_patches(raster, rng, max_accepted=1)
o, s = spec.origin, spec.size
label = VoxelVolume(raster.mask.data[o[0]:o[0] + s, o[1]:o[1] + s, o[2]:o[2] + s].copy(),
                    VolumeKind.BINARY_MASK)
print(f"patch at {spec.origin}, occupancy {report.occupancy:.3f}")

plain = synthesize_image(label, AppearanceParams(), np.random.Generator(np.random.Philox(11)))
preview_mip(plain, out_path="patch_plain.png")

# same draw protocol, now with a bright ellipsoid shell behind the vessels
with_skull = synthesize_image(
    label,
    AppearanceParams(skull=SkullParams()),
    np.random.Generator(np.random.Philox(11)),
)
preview_mip(with_skull, out_path="patch_skull.png")

corrupted, cut_mask = apply_cutout(plain, CutoutParams(),
                                   np.random.Generator(np.random.Philox(12)))
print(f"cutout blanked {int(cut_mask.data.sum())} voxels "
      f"({cut_mask.data.mean():.1%} of the patch)")
print(f"corrupted intensity range: {corrupted.data.min():.0f} .. {corrupted.data.max():.2f}")
preview_mip(corrupted, out_path="patch_corrupted.png")

print("wrote patch_plain.png, patch_skull.png, patch_corrupted.png")
