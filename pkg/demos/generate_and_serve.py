"""
Dataset generation and the patch server
=======================================

Generates a miniature dataset (same machinery as the full run, just
tiny counts), then serves samples over HTTP and fetches one back.
"""

import json
import tempfile
import urllib.request
from pathlib import Path

from vesselgen import (
    ClassCounts,
    DatasetConfig,
    GrowthParams,
    PatchServer,
    ServerConfig,
    generate_dataset,
    parse_multipart_sample,
    read_manifest,
)

config = DatasetConfig(
    master_seed=42,
    train_counts=ClassCounts(low_tort=1, high_tort=1, background=1),
    val_counts=ClassCounts(background=1),
)

out_dir = Path(tempfile.mkdtemp(prefix="vesselgen_demo_"))
manifest_path, stats = generate_dataset(config, out_dir=out_dir, workers=1)
print(f"generated {out_dir} in {stats.wall_seconds:.1f}s "
      f"({stats.trees_grown()} trees grown)")
for entry in read_manifest(manifest_path):
    print(f"  {entry.sample_id}  seed={entry.seed:#018x}")

# the server computes the same samples on demand: no dataset on disk needed
server = PatchServer(ServerConfig(
    port=0,  # pick a free port
    growth=GrowthParams(domain_dims=(96, 96, 96), root_radius_range=(8.0, 12.0),
                        tortuosity=0.4),
    patch_size=64,
))
server.start()
host, port = server.address
print(f"server on {host}:{port}")

url = f"http://{host}:{port}/sample?class=high_tort&index=0&cutout=true"
with urllib.request.urlopen(url, timeout=120) as response:
    parts = parse_multipart_sample(response.read())

print("sample metadata:", json.dumps(parts["metadata"], indent=2, sort_keys=True))
print(f"image part: {len(parts['image'])} bytes of gzipped volume")
print(f"corruption mask part present: {'corruption_mask' in parts}")
server.shutdown()
