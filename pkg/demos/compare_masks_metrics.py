# Scoring a degraded prediction with overlap and topology metrics.

import numpy as np

from vesselgen import (
    GrowthParams,
    compute_report,
    grow_tree,
    rasterize_tree,
    remove_small_components,
)

raster = rasterize_tree(grow_tree(GrowthParams(domain_dims=(128, 128, 128),
                                               root_radius_range=(8.0, 11.0)), seed=9))
gt = raster.mask.data != 0

# fake a prediction: erode-ish corruption plus salt islands
rng = np.random.Generator(np.random.Philox(1))
pred = gt.copy()
pred &= rng.uniform(size=gt.shape) > 0.05          # drop 5% of vessel voxels
salt = rng.uniform(size=gt.shape) > 0.9995          # sprinkle tiny islands
pred |= salt

raw = compute_report(pred, gt)
print("raw prediction:")
print(f"  dice    {raw.dice:.4f}")
print(f"  clDice  {raw.cl_dice:.4f}")
print(f"  cbDice  {raw.cb_dice:.4f}")
print(f"  components {raw.pred_components} (gt has {raw.gt_components})")

cleaned = remove_small_components(pred, min_volume=30)
post = compute_report(cleaned, gt)
print("after removing components under 30 voxels:")
print(f"  dice    {post.dice:.4f}")
print(f"  clDice  {post.cl_dice:.4f}")
print(f"  cbDice  {post.cb_dice:.4f}")
print(f"  components {post.pred_components}")
