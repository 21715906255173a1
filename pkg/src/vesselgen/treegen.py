"""Stochastic growth of 3-D vascular trees.

A tree grows breadth-first from a root placed on the domain boundary.
Tips advance by biased-random-walk segments; after each committed
segment a tip either continues at the same depth or bifurcates with a
probability that decays with depth. Child radii follow Murray's law.
Candidate paths are rejected when they leave the domain or approach
committed geometry closer than the collision margin allows.

All randomness comes from a counter-based generator (Philox) keyed by
the tree seed, and the draw order is fixed by the growth loop, so a
(params, seed) pair always yields the same tree.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

# second Philox key word for the tree-growth stream
_TREE_STREAM = 0x74726565


class GrowthError(Exception):
    """Growth cannot proceed (e.g. the domain cannot fit the root)."""


@dataclass
class GrowthParams:
    """Knobs for tree growth. Lengths and radii are in voxel units.

    tortuosity scales the per-step turn cap (30 degrees); persistence
    blends the previous direction back into each rotated step.
    """

    domain_dims: tuple[int, int, int] = (160, 160, 160)
    root_radius_range: tuple[float, float] = (3.0, 6.0)
    min_radius: float = 0.5
    segment_length_range: tuple[float, float] = (8.0, 24.0)
    step_length: float = 0.5
    tortuosity: float = 0.0
    persistence: float = 0.1
    branch_prob_base: float = 0.9
    branch_prob_decay: float = 0.85
    branch_angle_range: tuple[float, float] = (20.0, 60.0)
    murray_exponent: float = 3.0
    flow_split_range: tuple[float, float] = (0.35, 0.65)
    max_depth: int = 12
    max_attempts: int = 10
    collision_margin: float = 0.5

    MAX_TURN_DEG = 30.0   # per-step turn cap, scaled by tortuosity
    ROOT_TILT_DEG = 15.0  # max perturbation of the root's inward normal

    def validate(self) -> None:
        if not (0.0 <= self.tortuosity <= 1.0):
            raise ValueError(f"tortuosity must lie in [0, 1], got {self.tortuosity}")
        if not (0.0 <= self.persistence <= 1.0):
            raise ValueError(f"persistence must lie in [0, 1], got {self.persistence}")
        if not (0.0 <= self.branch_prob_base <= 1.0):
            raise ValueError(f"branch_prob_base must lie in [0, 1], got {self.branch_prob_base}")
        if not (0.0 < self.branch_prob_decay <= 1.0):
            raise ValueError(f"branch_prob_decay must lie in (0, 1], got {self.branch_prob_decay}")
        if self.step_length <= 0:
            raise ValueError("step_length must be positive")
        if self.min_radius <= 0:
            raise ValueError("min_radius must be positive")
        lo, hi = self.flow_split_range
        if not (0.0 < lo <= hi < 1.0):
            raise ValueError(f"flow_split_range must sit inside (0, 1), got {self.flow_split_range}")


@dataclass
class TreeNode:
    position: np.ndarray  # (3,) float64
    radius: float
    depth: int
    parent: int  # node index, -1 for the root


@dataclass
class TreeSegment:
    start_node: int
    end_node: int
    points: np.ndarray  # (n, 3) centerline polyline including both endpoints
    radius_start: float
    radius_end: float


@dataclass
class VesselTree:
    params: GrowthParams
    seed: int
    nodes: list[TreeNode]
    segments: list[TreeSegment]
    root_node: int = 0


@dataclass
class GrowthStats:
    """Per-depth branch decision counts plus growth bookkeeping.

    branch_decisions[k] counts Bernoulli draws made at depth k;
    branch_taken[k] counts the draws that came out "bifurcate".
    """

    branch_decisions: np.ndarray
    branch_taken: np.ndarray
    segments_committed: int = 0
    tips_terminated: int = 0
    proposals_rejected: int = 0


# ---------------------------------------------------------------------------
# small vector helpers

def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        raise ValueError("cannot normalize a near-zero vector")
    return v / n


def _perpendicular_basis(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors spanning the plane perpendicular to unit d."""
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(d)))] = 1.0
    e1 = _unit(np.cross(helper, d))
    e2 = np.cross(d, e1)
    return e1, e2


def _rotate_about(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation of v about a unit axis."""
    c, s = math.cos(angle), math.sin(angle)
    return v * c + np.cross(axis, v) * s + axis * float(np.dot(axis, v)) * (1.0 - c)


def _point_to_segment_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances from each point (n,3) to each segment a->b (m,3), shape (n,m)."""
    ab = b - a
    denom = np.einsum("md,md->m", ab, ab)
    ap = points[:, None, :] - a[None, :, :]
    t = np.einsum("nmd,md->nm", ap, ab) / np.maximum(denom, 1e-300)
    np.clip(t, 0.0, 1.0, out=t)
    closest = a[None, :, :] + t[:, :, None] * ab[None, :, :]
    return np.linalg.norm(points[:, None, :] - closest, axis=2)


# ---------------------------------------------------------------------------
# spatial index

class OccupancyIndex:
    """Uniform spatial hash over capsules for broad-phase collision queries.

    Each committed segment is split into one capsule per random-walk
    sub-step. A capsule is registered in every grid cell that overlaps
    its radius-inflated axis-aligned bounding box, so any box query that
    covers a capsule's true extent is guaranteed to return it.
    """

    def __init__(self, cell_size: float):
        if cell_size <= 0:
            raise ValueError("cell_size must be positive")
        self.cell_size = float(cell_size)
        self._cells: dict[tuple[int, int, int], list[int]] = {}
        cap = 1024
        self._a = np.empty((cap, 3))
        self._b = np.empty((cap, 3))
        self._r = np.empty(cap)
        self._seg = np.empty(cap, np.int64)
        self._nodes = np.empty((cap, 2), np.int64)
        self._n = 0

    def __len__(self) -> int:
        return self._n

    def _ensure(self, extra: int) -> None:
        need = self._n + extra
        cap = len(self._r)
        if need <= cap:
            return
        while cap < need:
            cap *= 2
        for name in ("_a", "_b", "_r", "_seg", "_nodes"):
            old = getattr(self, name)
            grown = np.empty((cap,) + old.shape[1:], old.dtype)
            grown[: self._n] = old[: self._n]
            setattr(self, name, grown)

    def _cell_range(self, lo: np.ndarray, hi: np.ndarray):
        lo_c = np.floor(lo / self.cell_size).astype(int)
        hi_c = np.floor(hi / self.cell_size).astype(int)
        return lo_c, hi_c

    def add_segment(self, seg_id: int, start_node: int, end_node: int,
                    points: np.ndarray, radius: float) -> None:
        m = len(points) - 1
        self._ensure(m)
        a, b = points[:-1], points[1:]
        i0 = self._n
        self._a[i0 : i0 + m] = a
        self._b[i0 : i0 + m] = b
        self._r[i0 : i0 + m] = radius
        self._seg[i0 : i0 + m] = seg_id
        self._nodes[i0 : i0 + m] = (start_node, end_node)
        self._n += m
        for k in range(m):
            lo = np.minimum(a[k], b[k]) - radius
            hi = np.maximum(a[k], b[k]) + radius
            lo_c, hi_c = self._cell_range(lo, hi)
            for cx in range(lo_c[0], hi_c[0] + 1):
                for cy in range(lo_c[1], hi_c[1] + 1):
                    for cz in range(lo_c[2], hi_c[2] + 1):
                        self._cells.setdefault((cx, cy, cz), []).append(i0 + k)

    def query_box(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """Indices of capsules registered in cells overlapping [lo, hi]."""
        lo_c, hi_c = self._cell_range(np.asarray(lo, float), np.asarray(hi, float))
        hits: list[int] = []
        for cx in range(lo_c[0], hi_c[0] + 1):
            for cy in range(lo_c[1], hi_c[1] + 1):
                for cz in range(lo_c[2], hi_c[2] + 1):
                    bucket = self._cells.get((cx, cy, cz))
                    if bucket:
                        hits.extend(bucket)
        if not hits:
            return np.empty(0, np.int64)
        return np.unique(np.asarray(hits, np.int64))

    def capsules(self, idx: np.ndarray):
        """(a, b, r, seg_ids, node_pairs) rows for the given capsule indices."""
        return (self._a[idx], self._b[idx], self._r[idx],
                self._seg[idx], self._nodes[idx])

    def registered_cells(self, capsule_index: int) -> list[tuple[int, int, int]]:
        return [key for key, bucket in self._cells.items() if capsule_index in bucket]


# ---------------------------------------------------------------------------
# growth operations

def propose_segment(tip_position: np.ndarray, tip_direction: np.ndarray,
                    radius: float, params: GrowthParams,
                    rng: np.random.Generator) -> np.ndarray:
    """Sample one biased-random-walk centerline polyline from a tip.

    Total arc length is drawn from segment_length_range and walked in
    sub-steps of step_length (the last sub-step may be shorter). At each
    sub-step the direction is rotated about a uniformly sampled axis
    perpendicular to the current direction by an angle drawn from
    [0, tortuosity * 30 deg], then blended back toward the previous
    direction with weight `persistence` and re-normalized. The radius
    argument is the caller's bookkeeping; the walk itself does not use it.
    """
    step = params.step_length
    total = rng.uniform(*params.segment_length_range)
    n_full = int(total // step)
    tail = total - n_full * step
    lengths = [step] * n_full
    if tail > 1e-9:
        lengths.append(tail)
    n = len(lengths)

    theta_cap = params.tortuosity * math.radians(params.MAX_TURN_DEG)
    thetas = rng.uniform(0.0, theta_cap, size=n).tolist()
    gauss = rng.normal(size=(n, 3)).tolist()

    # scalar float math: this loop dominates growth time
    kappa = params.persistence
    blend = 1.0 - kappa
    dx, dy, dz = (float(v) for v in tip_direction)
    px, py, pz = (float(v) for v in tip_position)
    points = np.empty((n + 1, 3))
    points[0] = (px, py, pz)
    for i, ds in enumerate(lengths):
        gx, gy, gz = gauss[i]
        proj = gx * dx + gy * dy + gz * dz
        ax, ay, az = gx - proj * dx, gy - proj * dy, gz - proj * dz
        norm = math.sqrt(ax * ax + ay * ay + az * az)
        if norm < 1e-12:
            ax, ay, az = _perpendicular_basis(np.array([dx, dy, dz]))[0]
        else:
            ax, ay, az = ax / norm, ay / norm, az / norm
        c, s = math.cos(thetas[i]), math.sin(thetas[i])
        # Rodrigues with axis perpendicular to d: d_rot = d cos + (axis x d) sin
        rx = dx * c + (ay * dz - az * dy) * s
        ry = dy * c + (az * dx - ax * dz) * s
        rz = dz * c + (ax * dy - ay * dx) * s
        bx, by, bz = kappa * dx + blend * rx, kappa * dy + blend * ry, kappa * dz + blend * rz
        bn = math.sqrt(bx * bx + by * by + bz * bz)
        dx, dy, dz = bx / bn, by / bn, bz / bn
        px, py, pz = px + ds * dx, py + ds * dy, pz + ds * dz
        points[i + 1] = (px, py, pz)
    return points


def validate_path(polyline: np.ndarray, radius_profile, index: OccupancyIndex,
                  params: GrowthParams, exclude_nodes: tuple[int, ...] = ()) -> bool:
    """Check a candidate centerline for containment and collisions.

    Accepts iff (a) every polyline point keeps a clearance of at least
    its local radius from all six domain walls, and (b) at step
    resolution, the gap between the candidate capsule chain and every
    committed capsule exceeds r_candidate + r_committed +
    collision_margin. The gap test is bidirectional: candidate points
    against committed capsule axes, and committed capsule endpoints
    against candidate capsule axes. Capsules of segments that touch any
    node in `exclude_nodes` (the growing tip's node and its parent node)
    are exempt, which permits the geometrically necessary overlap where
    parent, sibling, and grandparent segments meet. The index is not
    mutated.
    """
    pts = np.asarray(polyline, float)
    n = len(pts)
    prof = np.broadcast_to(np.asarray(radius_profile, float), (n,))

    dims = np.asarray(params.domain_dims, float)
    if (pts < prof[:, None]).any() or (pts > dims[None, :] - prof[:, None]).any():
        return False

    if len(index) == 0:
        return True
    r_cand_max = float(prof.max())
    pad = r_cand_max + params.collision_margin + 1e-6
    hits = index.query_box(pts.min(axis=0) - pad, pts.max(axis=0) + pad)
    if hits.size == 0:
        return True
    a, b, r_comm, _seg, node_pairs = index.capsules(hits)
    if exclude_nodes:
        keep = np.ones(len(a), bool)
        for node in exclude_nodes:
            keep &= (node_pairs[:, 0] != node) & (node_pairs[:, 1] != node)
        if not keep.all():
            a, b, r_comm = a[keep], b[keep], r_comm[keep]
    if len(a) == 0:
        return True

    # tight AABB prefilter (the cell query is coarse)
    cand_lo, cand_hi = pts.min(axis=0), pts.max(axis=0)
    reach = r_comm + (r_cand_max + params.collision_margin + 1e-6)
    near = ((np.minimum(a, b) - reach[:, None] <= cand_hi) &
            (np.maximum(a, b) + reach[:, None] >= cand_lo)).all(axis=1)
    if not near.any():
        return True
    a, b, r_comm = a[near], b[near], r_comm[near]

    # candidate points vs committed capsule axes
    d1 = _point_to_segment_distances(pts, a, b)
    limit1 = prof[:, None] + r_comm[None, :] + params.collision_margin
    gap1 = d1 - limit1
    if (gap1 <= 0.0).any():
        return False
    # the reverse direction can only dip half a sub-step below the forward
    # minimum (plus any radius change between adjacent samples), so skip
    # it when the forward gap is comfortable
    slack = 0.5 * params.step_length + float(np.abs(np.diff(prof)).max(initial=0.0))
    if gap1.min() > slack:
        return True

    # committed capsule endpoints vs candidate capsule axes
    cand_a, cand_b = pts[:-1], pts[1:]
    cand_r = np.maximum(prof[:-1], prof[1:])
    ends = np.concatenate([a, b], axis=0)
    ends_r = np.concatenate([r_comm, r_comm])
    d2 = _point_to_segment_distances(ends, cand_a, cand_b)
    limit2 = ends_r[:, None] + cand_r[None, :] + params.collision_margin
    return not (d2 <= limit2).any()


def sample_bifurcation(parent_radius: float, flow_split: float,
                       gamma: float) -> tuple[float, float]:
    """Child radii from Murray's law: r1^g + r2^g = parent^g.

    flow_split u is the fraction of parent flow taken by child 1, so
    r1 = parent * u^(1/g) and r2 = parent * (1-u)^(1/g).
    """
    if not (0.0 < flow_split < 1.0):
        raise ValueError(f"flow split u must lie in (0, 1), got {flow_split}")
    if parent_radius <= 0 or gamma <= 0:
        raise ValueError("parent_radius and gamma must be positive")
    inv = 1.0 / gamma
    return (parent_radius * flow_split ** inv,
            parent_radius * (1.0 - flow_split) ** inv)


def measure_tortuosity(polyline: np.ndarray) -> float:
    """Arc length divided by endpoint chord length."""
    pts = np.asarray(polyline, float)
    if len(pts) < 2:
        raise ValueError("polyline needs at least 2 points")
    chord = float(np.linalg.norm(pts[-1] - pts[0]))
    if chord < 1e-12:
        raise ValueError("coincident endpoints: chord length is zero, ratio undefined")
    arc = float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())
    return arc / chord


@dataclass
class _Tip:
    node: int
    direction: np.ndarray
    radius: float
    depth: int


def _place_root(params: GrowthParams, rng: np.random.Generator):
    """Root position on a random face, inset by the root radius."""
    dims = np.asarray(params.domain_dims, float)
    for _ in range(params.max_attempts):
        face = int(rng.integers(6))
        axis, high = face % 3, face >= 3
        r0 = float(rng.uniform(*params.root_radius_range))
        if (dims < 2.0 * r0).any():
            continue
        pos = np.empty(3)
        for i in range(3):
            if i == axis:
                pos[i] = dims[i] - r0 if high else r0
            else:
                pos[i] = rng.uniform(r0, dims[i] - r0)
        normal = np.zeros(3)
        normal[axis] = -1.0 if high else 1.0
        e1, e2 = _perpendicular_basis(normal)
        phi = rng.uniform(0.0, 2.0 * math.pi)
        tilt = rng.uniform(0.0, math.radians(params.ROOT_TILT_DEG))
        tilt_axis = math.cos(phi) * e1 + math.sin(phi) * e2
        direction = _rotate_about(normal, tilt_axis, tilt)
        return pos, direction, r0
    raise GrowthError("domain too small for root radius")


def grow_tree_with_stats(params: GrowthParams, seed: int) -> tuple[VesselTree, GrowthStats]:
    """Grow one tree; also return branch decision counts per depth."""
    params.validate()
    rng = np.random.Generator(np.random.Philox(key=[seed, _TREE_STREAM]))
    stats = GrowthStats(
        branch_decisions=np.zeros(params.max_depth + 1, np.int64),
        branch_taken=np.zeros(params.max_depth + 1, np.int64),
    )

    root_pos, root_dir, r0 = _place_root(params, rng)
    nodes = [TreeNode(position=root_pos, radius=r0, depth=0, parent=-1)]
    segments: list[TreeSegment] = []
    index = OccupancyIndex(cell_size=2.0 * params.root_radius_range[1])
    frontier: deque[_Tip] = deque([_Tip(node=0, direction=root_dir, radius=r0, depth=0)])

    angle_lo, angle_hi = params.branch_angle_range
    while frontier:
        tip = frontier.popleft()
        tip_pos = nodes[tip.node].position
        exempt = (tip.node, nodes[tip.node].parent)
        committed = None
        for _ in range(params.max_attempts):
            poly = propose_segment(tip_pos, tip.direction, tip.radius, params, rng)
            if validate_path(poly, tip.radius, index, params, exclude_nodes=exempt):
                committed = poly
                break
            stats.proposals_rejected += 1
        if committed is None:
            stats.tips_terminated += 1
            continue

        end_node = len(nodes)
        nodes.append(TreeNode(position=committed[-1].copy(), radius=tip.radius,
                              depth=tip.depth, parent=tip.node))
        seg_id = len(segments)
        segments.append(TreeSegment(start_node=tip.node, end_node=end_node,
                                    points=committed, radius_start=tip.radius,
                                    radius_end=tip.radius))
        index.add_segment(seg_id, tip.node, end_node, committed, tip.radius)
        stats.segments_committed += 1
        out_dir = _unit(committed[-1] - committed[-2])

        stats.branch_decisions[tip.depth] += 1
        p_branch = params.branch_prob_base * params.branch_prob_decay ** tip.depth
        if rng.uniform() < p_branch:
            stats.branch_taken[tip.depth] += 1
            u = rng.uniform(*params.flow_split_range)
            r1, r2 = sample_bifurcation(tip.radius, u, params.murray_exponent)
            e1, e2 = _perpendicular_basis(out_dir)
            phi = rng.uniform(0.0, 2.0 * math.pi)
            in_plane = math.cos(phi) * e1 + math.sin(phi) * e2
            th_a = math.radians(rng.uniform(angle_lo, angle_hi))
            th_b = math.radians(rng.uniform(angle_lo, angle_hi))
            th_near, th_far = min(th_a, th_b), max(th_a, th_b)
            # the larger-radius child deviates least, on the opposite side
            big_r, small_r = (r1, r2) if r1 >= r2 else (r2, r1)
            dir_big = out_dir * math.cos(th_near) + in_plane * math.sin(th_near)
            dir_small = out_dir * math.cos(th_far) - in_plane * math.sin(th_far)
            child_depth = tip.depth + 1
            if child_depth <= params.max_depth:
                for child_r, child_dir in ((big_r, dir_big), (small_r, dir_small)):
                    if child_r >= params.min_radius:
                        frontier.append(_Tip(node=end_node, direction=child_dir,
                                             radius=child_r, depth=child_depth))
        else:
            frontier.append(_Tip(node=end_node, direction=out_dir,
                                 radius=tip.radius, depth=tip.depth))

    tree = VesselTree(params=params, seed=int(seed), nodes=nodes, segments=segments)
    return tree, stats


def grow_tree(params: GrowthParams, seed: int) -> VesselTree:
    """Grow one vascular tree deterministically from (params, seed)."""
    tree, _ = grow_tree_with_stats(params, seed)
    return tree


# ---------------------------------------------------------------------------
# serialization (JSON, for debugging and golden tests)

def tree_to_json(tree: VesselTree) -> dict:
    return {
        "seed": tree.seed,
        "params": asdict(tree.params),
        "root_node": tree.root_node,
        "nodes": [
            {"position": list(map(float, n.position)), "radius": n.radius,
             "depth": n.depth, "parent": n.parent}
            for n in tree.nodes
        ],
        "segments": [
            {"start_node": s.start_node, "end_node": s.end_node,
             "radius_start": s.radius_start, "radius_end": s.radius_end,
             "points": [list(map(float, p)) for p in s.points]}
            for s in tree.segments
        ],
    }


def tree_from_json(doc: dict) -> VesselTree:
    params_doc = dict(doc["params"])
    for key in ("domain_dims", "root_radius_range", "segment_length_range",
                "branch_angle_range", "flow_split_range"):
        params_doc[key] = tuple(params_doc[key])
    return VesselTree(
        params=GrowthParams(**params_doc),
        seed=int(doc["seed"]),
        root_node=int(doc.get("root_node", 0)),
        nodes=[TreeNode(position=np.asarray(n["position"], float), radius=n["radius"],
                        depth=n["depth"], parent=n["parent"]) for n in doc["nodes"]],
        segments=[TreeSegment(start_node=s["start_node"], end_node=s["end_node"],
                              points=np.asarray(s["points"], float),
                              radius_start=s["radius_start"], radius_end=s["radius_end"])
                  for s in doc["segments"]],
    )


def save_tree(tree: VesselTree, path: str | Path) -> None:
    Path(path).write_text(json.dumps(tree_to_json(tree), indent=1, sort_keys=True))


def load_tree(path: str | Path) -> VesselTree:
    return tree_from_json(json.loads(Path(path).read_text()))
