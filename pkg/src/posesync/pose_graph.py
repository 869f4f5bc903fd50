"""Scans, the sparse pose graph, and overlap scoring.

An edge ``(i, j)`` with ``i < j`` carries ``T_ij``, which maps points of
scan ``j`` into the frame of scan ``i``. With camera-to-world poses
``T_i`` this is ``T_i⁻¹ ∘ T_j``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import (DimensionMismatch, EmptyScan, InsufficientScans, InvalidInput,
                     MissingFeatures, NotNormalized)
from .geometry import RigidTransform

DEFAULT_K = 10
FEATURE_NORM_TOL = 1e-6
SCORE_NORM_TOL = 1e-3


@dataclass(frozen=True, eq=False)
class Scan:
    """One point cloud. ``points`` is ``None`` when only metadata was loaded."""

    id: int
    points: Optional[np.ndarray] = None
    descriptors: Optional[np.ndarray] = None
    global_feature: Optional[np.ndarray] = None
    points_path: Optional[str] = None
    descriptors_path: Optional[str] = None

    def __post_init__(self):
        if self.points is not None:
            pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
            object.__setattr__(self, "points", pts)
        if self.descriptors is not None:
            desc = np.atleast_2d(np.asarray(self.descriptors, dtype=float))
            if self.points is not None and len(desc) != len(self.points):
                raise DimensionMismatch(
                    f"scan {self.id}: {len(desc)} descriptors for {len(self.points)} points")
            object.__setattr__(self, "descriptors", desc)
        if self.global_feature is not None:
            f = np.asarray(self.global_feature, dtype=float).ravel()
            if abs(np.linalg.norm(f) - 1.0) > FEATURE_NORM_TOL:
                raise NotNormalized(f"scan {self.id}: global feature norm {np.linalg.norm(f):.8f}")
            object.__setattr__(self, "global_feature", f)

    @property
    def n_points(self) -> int:
        return 0 if self.points is None else len(self.points)


@dataclass(frozen=True)
class Edge:
    i: int
    j: int
    overlap_score: float
    relative_pose: Optional[RigidTransform] = field(default=None, compare=False)
    inlier_count: Optional[int] = None
    weight: Optional[float] = None

    def __post_init__(self):
        if self.i == self.j:
            raise InvalidInput(f"self-edge on node {self.i}")
        if self.i > self.j:
            raise InvalidInput(f"edge ({self.i}, {self.j}) must satisfy i < j; use Edge.oriented")
        if not 0.0 <= self.overlap_score <= 1.0:
            raise InvalidInput(f"overlap score {self.overlap_score} outside [0, 1]")
        if self.inlier_count is not None and self.inlier_count < 0:
            raise InvalidInput("inlier_count must be non-negative")
        if self.weight is not None and self.weight < 0:
            raise InvalidInput("weight must be non-negative")

    @classmethod
    def oriented(cls, a: int, b: int, overlap_score: float,
                 relative_pose: Optional[RigidTransform] = None, **kw) -> Edge:
        """Build the edge for the pair ``(a, b)`` given ``T_ab``, whatever the order."""
        if a > b and relative_pose is not None:
            relative_pose = relative_pose.inverse()
        return cls(min(a, b), max(a, b), overlap_score, relative_pose, **kw)

    @property
    def key(self) -> tuple[int, int]:
        return (self.i, self.j)


class PoseGraph:
    """Undirected graph of scans. Treat as immutable; derive new graphs with
    :meth:`with_edges`."""

    def __init__(self, scans: Sequence[Scan], edges: Sequence[Edge] = ()):
        self.scans = tuple(scans)
        for idx, s in enumerate(self.scans):
            if s.id != idx:
                raise InvalidInput(f"scan at position {idx} has id {s.id}")
        self.edges = tuple(edges)
        self._index = {}
        n = len(self.scans)
        for e_idx, e in enumerate(self.edges):
            if not (0 <= e.i < n and 0 <= e.j < n):
                raise InvalidInput(f"edge ({e.i}, {e.j}) references a missing scan (n={n})")
            if e.key in self._index:
                raise InvalidInput(f"duplicate edge ({e.i}, {e.j})")
            self._index[e.key] = e_idx

    @property
    def n(self) -> int:
        return len(self.scans)

    def __len__(self):
        return len(self.edges)

    def has_edge(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self._index

    def edge_index(self, a: int, b: int) -> int:
        return self._index[(min(a, b), max(a, b))]

    def edge(self, a: int, b: int) -> Edge:
        return self.edges[self.edge_index(a, b)]

    def relative_pose(self, a: int, b: int) -> RigidTransform:
        """``T_ab`` for either orientation; inverted on the fly when ``a > b``."""
        e = self.edge(a, b)
        if e.relative_pose is None:
            raise InvalidInput(f"edge ({e.i}, {e.j}) has no relative pose")
        return e.relative_pose if a < b else e.relative_pose.inverse()

    def neighbors(self, a: int) -> list[int]:
        return sorted({e.j if e.i == a else e.i for e in self.edges if a in (e.i, e.j)})

    def degree(self, a: int) -> int:
        return len(self.neighbors(a))

    def with_edges(self, edges: Sequence[Edge]) -> PoseGraph:
        return PoseGraph(self.scans, edges)

    def with_scans(self, scans: Sequence[Scan]) -> PoseGraph:
        return PoseGraph(scans, self.edges)

    def map_edges(self, fn: Callable[[Edge], Edge]) -> PoseGraph:
        return PoseGraph(self.scans, [fn(e) for e in self.edges])


def overlap_score(fa, fb) -> float:
    """Overlap estimate ``(faᵀ fb + 1) / 2`` of two unit global features."""
    fa = np.asarray(fa, dtype=float).ravel()
    fb = np.asarray(fb, dtype=float).ravel()
    if fa.shape != fb.shape:
        raise DimensionMismatch(f"feature dimensions {fa.size} and {fb.size} differ")
    for f in (fa, fb):
        if abs(np.linalg.norm(f) - 1.0) > SCORE_NORM_TOL:
            raise NotNormalized(f"feature norm {np.linalg.norm(f):.6f} is not 1")
    s = (float(fa @ fb) + 1.0) / 2.0
    return min(1.0, max(0.0, s))


class FeatureScore:
    """Scores a pair from the scans' global feature vectors."""

    def __call__(self, a: Scan, b: Scan) -> float:
        if a.global_feature is None or b.global_feature is None:
            missing = a.id if a.global_feature is None else b.id
            raise MissingFeatures(f"scan {missing} has no global feature")
        return overlap_score(a.global_feature, b.global_feature)


class OracleScore:
    """Scores a pair by ground-truth geometric overlap (synthetic data only)."""

    def __init__(self, poses: Sequence[RigidTransform], radius: float):
        self.poses = list(poses)
        self.radius = radius

    def __call__(self, a: Scan, b: Scan) -> float:
        if a.points is None or b.points is None:
            raise MissingFeatures(f"oracle needs points for scans {a.id} and {b.id}")
        if max(a.id, b.id) >= len(self.poses):
            raise MissingFeatures(f"no ground-truth pose for scan {max(a.id, b.id)}")
        return geometric_overlap_oracle(a, b, self.poses[a.id], self.poses[b.id], self.radius)


def score_matrix(scans: Sequence[Scan], score_source) -> np.ndarray:
    n = len(scans)
    s = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            s[a, b] = s[b, a] = score_source(scans[a], scans[b])
    return s


def select_top_k(scores: np.ndarray, k: int) -> list[tuple[int, int]]:
    """Union of every node's ``k`` best partners, as sorted ``(i, j)`` pairs.

    Ties go to the smaller node index.
    """
    n = len(scores)
    pairs = set()
    for a in range(n):
        others = [b for b in range(n) if b != a]
        others.sort(key=lambda b: (-scores[a, b], b))
        for b in others[:k]:
            pairs.add((min(a, b), max(a, b)))
    return sorted(pairs)


def build_sparse_graph(scans: Sequence[Scan], k: int = DEFAULT_K,
                       score_source=None) -> PoseGraph:
    """Connect every scan to its ``k`` highest-scoring partners.

    ``score_source`` is any callable ``(Scan, Scan) -> float``; it defaults
    to :class:`FeatureScore`.
    """
    n = len(scans)
    if n < 2:
        raise InsufficientScans(f"need at least 2 scans, got {n}")
    if not 1 <= k < n:
        raise InvalidInput(f"k must satisfy 1 <= k < N={n}, got {k}")
    score_source = score_source or FeatureScore()
    scores = score_matrix(scans, score_source)
    edges = [Edge(i, j, float(scores[i, j])) for i, j in select_top_k(scores, k)]
    return PoseGraph(scans, edges)


def _world_points(scan: Scan, pose: RigidTransform) -> np.ndarray:
    if scan.points is None or len(scan.points) == 0:
        raise EmptyScan(f"scan {scan.id} has no points")
    return pose.apply(scan.points)


def directional_overlap(pa: np.ndarray, pb: np.ndarray, radius: float) -> np.ndarray:
    """Mask over ``pa``: which points have a neighbor in ``pb`` within ``radius``."""
    d, _ = cKDTree(pb).query(pa, k=1, distance_upper_bound=radius)
    return d <= radius


def geometric_overlap_oracle(scan_a: Scan, scan_b: Scan, pose_a: RigidTransform,
                             pose_b: RigidTransform, radius: float) -> float:
    """Symmetrized fraction of points with a cross-scan neighbor within ``radius``."""
    if radius <= 0:
        raise InvalidInput("radius must be positive")
    pa = _world_points(scan_a, pose_a)
    pb = _world_points(scan_b, pose_b)
    fa = directional_overlap(pa, pb, radius).mean()
    fb = directional_overlap(pb, pa, radius).mean()
    return float(0.5 * (fa + fb))


def components_from_pairs(n: int, pairs) -> list[set[int]]:
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, set[int]] = {}
    for v in range(n):
        groups.setdefault(find(v), set()).add(v)
    return sorted(groups.values(), key=min)


def connected_components(g: PoseGraph) -> list[set[int]]:
    """Node sets connected by edges, ordered by smallest member."""
    return components_from_pairs(g.n, (e.key for e in g.edges))


def with_weights(g: PoseGraph, weights) -> PoseGraph:
    return PoseGraph(g.scans, [replace(e, weight=float(w)) for e, w in zip(g.edges, weights)])
