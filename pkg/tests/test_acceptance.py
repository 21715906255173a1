"""Acceptance gates for the whole package.

Each test is one numbered criterion with its tolerance pinned in the
assertions and prints one [acceptance] PASS/FAIL line (visible with -s,
or in the captured output of a failing run; the -v test status line
carries the same verdict). The oracles here are deliberately
self-contained re-derivations, independent of the library internals
they check.
"""

import hashlib
import time
from pathlib import Path

import numpy as np
import pytest

from vesselgen.appearance import CutoutParams, apply_cutout
from vesselgen.manifest import SampleClass, read_manifest
from vesselgen.metrics import cb_dice, cl_dice, dice, remove_small_components
from vesselgen.patchqc import qc_patch
from vesselgen.pipeline import desk_config, generate_dataset, paper_config
from vesselgen.rasterize import rasterize_tree
from vesselgen.server import PatchServer, ServerConfig
from vesselgen.treegen import (
    GrowthParams,
    TreeNode,
    TreeSegment,
    VesselTree,
    grow_tree,
    measure_tortuosity,
    propose_segment,
)
from vesselgen.volgrid import VolumeKind, VoxelVolume, read_nifti


class _criterion:
    """Prints one PASS/FAIL line per criterion regardless of outcome."""

    def __init__(self, number, name):
        self.number = number
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        verdict = "PASS" if exc_type is None else "FAIL"
        print(f"[acceptance] criterion {self.number:02d} {self.name}: {verdict}",
              flush=True)
        return False


def _rng(seed):
    return np.random.Generator(np.random.Philox(seed))


def _point_to_segments(points, a, b):
    """Distances from n points to m segments, (n, m)."""
    ab = b - a
    denom = (ab * ab).sum(axis=1)
    ap = points[:, None, :] - a[None, :, :]
    t = (ap * ab[None, :, :]).sum(axis=2) / np.where(denom == 0.0, 1.0, denom)
    t = np.clip(t, 0.0, 1.0)
    diff = ap - t[:, :, None] * ab[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


# ---------------------------------------------------------------------------
# criterion 1: radius conservation at every bifurcation


def test_criterion_01_murray_conservation():
    with _criterion(1, "murray radius conservation, 500 trees"):
        params = GrowthParams()
        start = time.perf_counter()
        forks_checked = 0
        for seed in range(500):
            tree = grow_tree(params, seed)
            children = {}
            for seg in tree.segments:
                children.setdefault(seg.start_node, []).append(seg)
            for node_id, segs in children.items():
                if len(segs) != 2:
                    continue
                parent_r = tree.nodes[node_id].radius
                total = segs[0].radius_start ** 3 + segs[1].radius_start ** 3
                assert abs(total - parent_r ** 3) <= 1e-9 * parent_r ** 3, \
                    (seed, node_id)
                forks_checked += 1
        elapsed = time.perf_counter() - start
        assert forks_checked >= 1000
        assert elapsed < 120.0, f"500 trees took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# criterion 2: collision-free margins between non-adjacent segments


def test_criterion_02_collision_free_margins():
    with _criterion(2, "non-adjacent segment gaps exceed the margin, 20 trees"):
        params = GrowthParams()
        margin = params.collision_margin
        pairs_checked = 0
        for seed in range(20):
            tree = grow_tree(params, seed)
            segs = tree.segments
            parents = np.asarray([n.parent for n in tree.nodes])
            s_start = np.asarray([s.start_node for s in segs])
            s_end = np.asarray([s.end_node for s in segs])
            p_start = parents[s_start]
            radii = np.asarray([s.radius_start for s in segs])

            piece_a = np.concatenate([s.points[:-1] for s in segs])
            piece_b = np.concatenate([s.points[1:] for s in segs])
            counts = np.asarray([len(s.points) - 1 for s in segs])
            block_starts = np.concatenate([[0], np.cumsum(counts)[:-1]])

            for ia, seg in enumerate(segs):
                d = _point_to_segments(seg.points, piece_a, piece_b).min(axis=0)
                per_seg = np.minimum.reduceat(d, block_starts)
                exempt = (
                    (s_start == s_start[ia]) | (s_start == s_end[ia])
                    | (p_start == s_start[ia]) | (p_start == s_end[ia])
                    | (s_end == s_start[ia])
                    | (s_start == p_start[ia]) | (s_end == p_start[ia])
                )
                exempt[ia] = True
                limits = radii[ia] + radii + margin
                bad = ~exempt & (per_seg <= limits)
                assert not bad.any(), (seed, ia, np.nonzero(bad)[0][:5])
                pairs_checked += int((~exempt).sum())
        assert pairs_checked > 100_000


# ---------------------------------------------------------------------------
# criterion 3: rasterization equals an exhaustive voxel-center oracle


def _single_segment_tree(start, end, r0, r1, dims):
    start, end = np.asarray(start, float), np.asarray(end, float)
    n = max(int(np.ceil(np.linalg.norm(end - start) / 0.5)), 1)
    t = np.linspace(0.0, 1.0, n + 1)
    pts = start[None, :] + t[:, None] * (end - start)[None, :]
    seg = TreeSegment(start_node=0, end_node=1, points=pts,
                      radius_start=r0, radius_end=r1)
    nodes = [TreeNode(position=pts[0], radius=r0, depth=0, parent=-1),
             TreeNode(position=pts[-1], radius=r1, depth=0, parent=0)]
    return VesselTree(params=GrowthParams(domain_dims=dims), seed=0,
                      nodes=nodes, segments=[seg])


def _oracle_raster(tree, dims):
    xs, ys, zs = (np.arange(n) + 0.5 for n in dims)
    centers = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1).reshape(-1, 3)
    mask = np.zeros(len(centers), bool)
    center_map = np.zeros(dims, bool)
    for seg in tree.segments:
        pts = seg.points
        steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        total = steps.sum()
        cum = np.concatenate([[0.0], np.cumsum(steps)])
        for i in range(len(pts) - 1):
            frac = (cum[i] + cum[i + 1]) / (2.0 * total) if total > 0 else 0.0
            r = seg.radius_start + (seg.radius_end - seg.radius_start) * frac
            a, b = pts[i], pts[i + 1]
            ab = b - a
            denom = float(ab @ ab)
            if denom == 0.0:
                d = np.linalg.norm(centers - a, axis=1)
            else:
                tt = np.clip((centers - a) @ ab / denom, 0.0, 1.0)
                d = np.linalg.norm(centers - (a + tt[:, None] * ab), axis=1)
            mask |= d <= r
        idx = np.clip(np.floor(pts).astype(int), 0, np.asarray(dims) - 1)
        center_map[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return mask.reshape(dims) | center_map, center_map


def test_criterion_03_raster_matches_oracle():
    with _criterion(3, "rasterization exact against exhaustive oracle, 50 segments"):
        rng = _rng(7)
        dims = (32, 32, 32)
        for trial in range(50):
            r0 = float(rng.uniform(0.3, 4.0))
            r1 = float(rng.uniform(0.3, 4.0))
            pad = max(r0, r1) + 1.0
            start = rng.uniform(pad, 32.0 - pad, 3)
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            length = float(rng.uniform(2.0, 18.0))
            end = np.clip(start + d * length, pad, 32.0 - pad)
            tree = _single_segment_tree(start, end, r0, r1, dims)
            out = rasterize_tree(tree)
            want_mask, want_centerline = _oracle_raster(tree, dims)
            np.testing.assert_array_equal(
                out.mask.data.astype(bool), want_mask, err_msg=f"trial {trial}")
            np.testing.assert_array_equal(
                out.centerline.data.astype(bool), want_centerline,
                err_msg=f"trial {trial}")


# ---------------------------------------------------------------------------
# criteria 4, 5, 9 share one generated desk-scale dataset


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk_w1")
    start = time.perf_counter()
    generate_dataset(desk_config(master_seed=42), out_dir=out, workers=1)
    return out, time.perf_counter() - start


def test_criterion_04_patch_qc_reverified_from_disk(desk_run):
    with _criterion(4, "desk dataset QC re-verified from disk under 600s"):
        out_root, gen_seconds = desk_run
        start = time.perf_counter()
        entries = read_manifest(out_root / "manifest.jsonl")
        vessel = [e for e in entries if e.sample_class is not SampleClass.BACKGROUND]
        assert len(vessel) == 138  # 125 train + 13 val
        for entry in vessel:
            label = read_nifti(out_root / entry.label_path)
            report = qc_patch(label.data)
            assert report.occupancy >= 0.05, entry.sample_id
            assert report.floating_islands == 0, entry.sample_id
            assert report.continuity_ok, entry.sample_id
            assert report.passed, entry.sample_id
            assert report.to_dict() == entry.qc.to_dict(), entry.sample_id
        elapsed = gen_seconds + (time.perf_counter() - start)
        assert elapsed < 600.0, f"generation plus verification took {elapsed:.1f}s"


def test_criterion_05_dataset_composition(desk_run):
    with _criterion(5, "class composition 2:2:1:1 at both scales"):
        paper = paper_config()
        assert paper.train_counts.total() == 15000
        assert paper.val_counts.total() == 1500
        for counts, unit in ((paper.train_counts, 2500), (paper.val_counts, 250)):
            assert (counts.low_tort, counts.high_tort, counts.skull,
                    counts.background) == (2 * unit, 2 * unit, unit, unit)

        out_root, _ = desk_run
        entries = read_manifest(out_root / "manifest.jsonl")
        got = {}
        for e in entries:
            stream = e.sample_id.split("_")[0]
            key = (stream, e.sample_class.value)
            got[key] = got.get(key, 0) + 1
        assert got == {
            ("train", "low_tort"): 50, ("train", "high_tort"): 50,
            ("train", "skull"): 25, ("train", "background"): 25,
            ("val", "low_tort"): 5, ("val", "high_tort"): 5,
            ("val", "skull"): 3, ("val", "background"): 2,
        }
        assert sum(n for (s, _), n in got.items() if s == "train") == 150
        assert sum(n for (s, _), n in got.items() if s == "val") == 15


# ---------------------------------------------------------------------------
# criterion 6: tortuosity dial


def test_criterion_06_tortuosity_dial():
    with _criterion(6, "arc/chord ratio tracks the tortuosity parameter"):
        means = []
        for tau in (0.0, 0.2, 0.4, 0.6):
            params = GrowthParams(tortuosity=tau)
            rng = _rng(1234)
            ratios = []
            for _ in range(200):
                d = rng.normal(size=3)
                d /= np.linalg.norm(d)
                pts = propose_segment(np.array([80.0, 80.0, 80.0]), d,
                                      1.0, params, rng)
                ratios.append(measure_tortuosity(pts))
            means.append(float(np.mean(ratios)))
        assert means[0] == pytest.approx(1.0, abs=1e-3)
        for lo, hi in zip(means, means[1:]):
            assert hi > lo, means
        assert means[-1] >= 1.05, means


# ---------------------------------------------------------------------------
# criterion 7: metric oracles


def test_criterion_07_metric_oracles():
    with _criterion(7, "dice/clDice/cbDice against counting oracles"):
        rng = _rng(99)
        for _ in range(1000):
            p = rng.uniform(size=(16, 16, 16)) < 0.3
            g = rng.uniform(size=(16, 16, 16)) < 0.3
            # independent route: joint histogram of the 2-bit code 2p+g
            hist = np.bincount((p.astype(np.int64) * 2 + g.astype(np.int64)).ravel(),
                               minlength=4)
            inter, n_p, n_g = hist[3], hist[2] + hist[3], hist[1] + hist[3]
            want = 1.0 if n_p + n_g == 0 else 2.0 * inter / (n_p + n_g)
            assert dice(p, g) == pytest.approx(want, abs=1e-12)

        for trial in range(100):
            m = _rng(5000 + trial).uniform(size=(16, 16, 16)) < 0.3
            assert dice(m, m) == 1.0
            assert cl_dice(m, m) == 1.0
            assert cb_dice(m, m) == 1.0

        a = np.zeros((16, 16, 16), bool)
        b = np.zeros((16, 16, 16), bool)
        a[4, 4, :] = True
        b[12, 12, :] = True
        assert cl_dice(a, b) == 0.0
        assert dice(a, b) == 0.0


# ---------------------------------------------------------------------------
# criterion 8: cutout corruption semantics


def test_criterion_08_cutout_union_oracle():
    with _criterion(8, "cutout equals a replayed cube union, fill exactly -1"):
        dims = (32, 32, 32)
        params = CutoutParams()
        for seed in range(200):
            img = VoxelVolume(
                _rng(10_000 + seed).uniform(0.0, 1.0, dims).astype(np.float32),
                VolumeKind.INTENSITY)
            corrupted, mask = apply_cutout(img, params, _rng(seed))
            rng = _rng(seed)
            n = int(rng.integers(1, 13))
            assert 1 <= n <= 12
            want = np.zeros(dims, bool)
            for _ in range(n):
                e = int(rng.integers(2, 17))
                assert 2 <= e <= 16
                o = [int(rng.integers(0, d - e + 1)) for d in dims]
                want[o[0]:o[0] + e, o[1]:o[1] + e, o[2]:o[2] + e] = True
            np.testing.assert_array_equal(mask.data != 0, want, err_msg=f"seed {seed}")
            assert np.all(corrupted.data[want] == np.float32(-1.0))
            np.testing.assert_array_equal(corrupted.data[~want], img.data[~want])


# ---------------------------------------------------------------------------
# criterion 9: determinism across worker counts and server restarts


def _digest_tree(root):
    h = hashlib.sha256()
    for path in sorted(Path(root).rglob("*")):
        if path.is_dir() or path.name == "stats.json":  # stats carry timings
            continue
        h.update(str(path.relative_to(root)).encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def test_criterion_09_determinism(desk_run, tmp_path_factory):
    with _criterion(9, "byte-identical across worker counts and restarts"):
        dir_w1, _ = desk_run
        dir_w8 = tmp_path_factory.mktemp("desk_w8")
        generate_dataset(desk_config(master_seed=42), out_dir=dir_w8, workers=8)
        assert _digest_tree(dir_w1) == _digest_tree(dir_w8)

        def server_config():
            return ServerConfig(
                port=0,
                growth=GrowthParams(domain_dims=(96, 96, 96),
                                    root_radius_range=(8.0, 12.0),
                                    tortuosity=0.4, branch_prob_decay=0.95,
                                    flow_split_range=(0.25, 0.75)),
                patch_size=64,
            )

        import urllib.request

        bodies = []
        for _ in range(2):  # fresh process-independent server each round
            server = PatchServer(server_config())
            server.start()
            try:
                host, port = server.address
                url = f"http://{host}:{port}/sample?class=high_tort&index=0"
                with urllib.request.urlopen(url, timeout=120) as r:
                    plain = r.read()
                with urllib.request.urlopen(url + "&cutout=true", timeout=120) as r:
                    cut = r.read()
                bodies.append((plain, cut))
            finally:
                server.shutdown()
        assert bodies[0] == bodies[1]


# ---------------------------------------------------------------------------
# criterion 10: small component removal


def test_criterion_10_small_component_removal():
    with _criterion(10, "components below 30 voxels removed, others exact"):
        mask = np.zeros((24, 24, 24), bool)
        mask[0, 0, 0:5] = True                 # 5, removed
        mask[6:9, 0:3, 6:9] = True             # 27
        mask[9, 1, 6:8] = True                 # 29, removed
        keep = np.zeros_like(mask)
        keep[14:17, 14:17, 14:17] = True       # 27
        keep[17, 15, 14:17] = True             # exactly 30, kept
        big = np.zeros_like(mask)
        big[0:8, 14:24, 19:24] = True          # 400, kept
        merged = mask | keep | big
        out = remove_small_components(merged, min_volume=30)
        np.testing.assert_array_equal(out, keep | big)
        assert int(out.sum()) == 430
        np.testing.assert_array_equal(remove_small_components(out, 30), out)

        rng = _rng(3)
        noisy = rng.uniform(size=(20, 20, 20)) < 0.2
        once = remove_small_components(noisy)
        np.testing.assert_array_equal(remove_small_components(once), once)
