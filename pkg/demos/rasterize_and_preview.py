"""
Rasterizing a tree into a labeled volume
========================================

Grows one tree, voxelizes it, and writes a maximum-intensity
projection you can open in any image viewer.
"""

from vesselgen import (
    GrowthParams,
    grow_tree,
    occupancy_fraction,
    preview_mip,
    rasterize_tree,
    write_nifti,
)

params = GrowthParams(
    domain_dims=(128, 128, 128),
    root_radius_range=(8.0, 11.0),
    tortuosity=0.5,
)
tree = grow_tree(params, seed=21)
out = rasterize_tree(tree)

mask = out.mask
print(f"volume dims {mask.data.shape}, vessel occupancy "
      f"{occupancy_fraction(mask):.1%}")
print(f"centerline voxels: {int(out.centerline.data.sum())}")

write_nifti(mask, "tree_mask.nii.gz")
write_nifti(out.centerline, "tree_centerline.nii.gz")

# project along each axis; z is usually the most readable
for axis in ("x", "y", "z"):
    preview_mip(mask, axis=axis, out_path=f"tree_mip_{axis}.png")
print("wrote tree_mask.nii.gz and tree_mip_{x,y,z}.png")
