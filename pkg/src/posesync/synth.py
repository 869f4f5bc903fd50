"""Synthetic multiview scenes with planted ground truth.

A scene is a world point cloud; each scan is a local patch of it expressed
in the scan's own frame. Neighboring patches share world points exactly, so
geometric overlap can be measured with a tiny radius.

``ring`` places patches as angular windows on an annular band (adjacent
windows share about half their points, non-adjacent ones nothing);
``random_knn`` places ball-shaped patches along a random walk.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidSpec
from .geometry import RigidTransform, axis_angle, random_rotation, random_unit_vector
from .pose_graph import Edge, PoseGraph, Scan, components_from_pairs, select_top_k

log = logging.getLogger(__name__)

STRUCTURES = ("ring", "random_knn")


@dataclass(frozen=True)
class SceneSpec:
    n_scans: int = 20
    points_per_scan: int = 500
    scene_extent: float = 4.0
    overlap_structure: str = "random_knn"
    rotation_noise_deg: float = 1.0
    translation_noise_m: float = 0.01
    outlier_edge_fraction: float = 0.15
    outlier_min_angle_deg: float = 60.0
    seed: int = 0
    descriptor_dim: int = 32
    scan_radius: float = 1.0
    overlap_radius: float = 0.01
    with_features: bool = True

    def __post_init__(self):
        if self.n_scans < 2:
            raise InvalidSpec(f"n_scans must be >= 2, got {self.n_scans}")
        if self.points_per_scan < 3:
            raise InvalidSpec("points_per_scan must be >= 3")
        if self.overlap_structure not in STRUCTURES:
            raise InvalidSpec(f"overlap_structure must be one of {STRUCTURES}")
        if not 0.0 <= self.outlier_edge_fraction < 1.0:
            raise InvalidSpec("outlier_edge_fraction must lie in [0, 1)")
        if self.rotation_noise_deg < 0 or self.translation_noise_m < 0:
            raise InvalidSpec("noise levels must be non-negative")
        if not 3 * self.rotation_noise_deg < self.outlier_min_angle_deg <= 180.0:
            raise InvalidSpec("outlier_min_angle_deg must exceed 3x rotation noise and be <= 180")
        if self.scene_extent <= 0 or self.scan_radius <= 0 or self.overlap_radius <= 0:
            raise InvalidSpec("lengths must be positive")
        if self.descriptor_dim < 0:
            raise InvalidSpec("descriptor_dim must be >= 0")


@dataclass(frozen=True, eq=False)
class PlantedScene:
    spec: SceneSpec
    scans: tuple
    poses: tuple
    overlaps: np.ndarray
    world_indices: tuple = field(repr=False)

    def relative_pose(self, i: int, j: int) -> RigidTransform:
        return self.poses[i].relative_to(self.poses[j])


def _ring_layout(spec: SceneSpec, rng):
    n, pps = spec.n_scans, spec.points_per_scan
    radius = spec.scene_extent / 2.0
    band = 0.1 * spec.scene_extent
    n_world = max(pps, math.ceil(pps * n / 2))
    theta = rng.uniform(0.0, 2.0 * np.pi, n_world)
    r = radius + rng.uniform(-band, band, n_world)
    world = np.column_stack([r * np.cos(theta), r * np.sin(theta), rng.uniform(-band, band, n_world)])
    centers, members = [], []
    for i in range(n):
        th = 2.0 * np.pi * i / n
        gap = np.abs(np.angle(np.exp(1j * (theta - th))))
        members.append(np.sort(np.argsort(gap, kind="stable")[:pps]))
        centers.append(np.array([radius * np.cos(th), radius * np.sin(th), 0.0]))
    return world, centers, members


def _random_knn_layout(spec: SceneSpec, rng):
    n, pps, rho = spec.n_scans, spec.points_per_scan, spec.scan_radius
    half = spec.scene_extent / 2.0
    box = half + rho
    n_world = math.ceil(pps * (2 * box) ** 3 / (4.0 / 3.0 * np.pi * rho ** 3))
    world = rng.uniform(-box, box, (n_world, 3))
    tree = cKDTree(world)
    c = rng.uniform(-half, half, 3)
    centers, members = [], []
    for i in range(n):
        if i:
            c = c + 0.5 * rho * random_unit_vector(rng)
            c = np.where(c > half, 2 * half - c, c)
            c = np.where(c < -half, -2 * half - c, c)
        _, idx = tree.query(c, k=pps)
        centers.append(c.copy())
        members.append(np.sort(np.atleast_1d(idx)))
    return world, centers, members


def _feature(world_pts: np.ndarray, lo: np.ndarray, cell: float, dims: np.ndarray) -> np.ndarray:
    """Occupancy histogram over a voxel grid, L2-normalized."""
    ijk = np.clip(np.floor((world_pts - lo) / cell).astype(int), 0, dims - 1)
    flat = np.ravel_multi_index(ijk.T, dims)
    hist = np.bincount(flat, minlength=int(np.prod(dims))).astype(float)
    return hist / np.linalg.norm(hist)


def overlap_matrix(scans, poses, radius: float) -> np.ndarray:
    """All-pairs geometric overlap (same rule as the oracle, trees built once)."""
    n = len(scans)
    world = [p.apply(s.points) for s, p in zip(scans, poses)]
    trees = [cKDTree(w) for w in world]
    out = np.eye(n)
    for a in range(n):
        for b in range(a + 1, n):
            da, _ = trees[b].query(world[a], k=1, distance_upper_bound=radius)
            db, _ = trees[a].query(world[b], k=1, distance_upper_bound=radius)
            out[a, b] = out[b, a] = 0.5 * (np.mean(da <= radius) + np.mean(db <= radius))
    return out


def generate_scene(spec: SceneSpec) -> PlantedScene:
    rng = np.random.default_rng(spec.seed)
    if spec.overlap_structure == "ring":
        world, centers, members = _ring_layout(spec, rng)
    else:
        world, centers, members = _random_knn_layout(spec, rng)
    desc = None
    if spec.descriptor_dim:
        desc = rng.standard_normal((len(world), spec.descriptor_dim))
        desc /= np.linalg.norm(desc, axis=1, keepdims=True)

    lo = world.min(axis=0)
    cell = 0.5 * spec.scan_radius
    dims = np.maximum(1, np.ceil((world.max(axis=0) - lo) / cell).astype(int) + 1)

    scans, poses = [], []
    for i, (c, idx) in enumerate(zip(centers, members)):
        pose = RigidTransform(random_rotation(rng), c)
        local = pose.inverse().apply(world[idx])
        feat = _feature(world[idx], lo, cell, dims) if spec.with_features else None
        scans.append(Scan(i, local, None if desc is None else desc[idx], feat))
        poses.append(pose)
    overlaps = overlap_matrix(scans, poses, spec.overlap_radius)
    return PlantedScene(spec, tuple(scans), tuple(poses), overlaps, tuple(members))


def _noise_angle(rng, sigma: float) -> float:
    if sigma == 0:
        return 0.0
    while True:
        a = abs(rng.normal(0.0, sigma))
        if a <= 3.0 * sigma:
            return a


def _pick_outliers(rng, n: int, pairs, support: np.ndarray, count: int) -> np.ndarray:
    """Choose ``count`` edges uniformly at random, never one that is a bridge
    of the remaining inlier support graph."""
    chosen = np.zeros(len(pairs), dtype=bool)
    support = support.copy()
    base = len(components_from_pairs(n, (p for p, s in zip(pairs, support) if s)))
    for e in rng.permutation(len(pairs)):
        if chosen.sum() >= count:
            break
        trial = support.copy()
        trial[e] = False
        if len(components_from_pairs(n, (p for p, s in zip(pairs, trial) if s))) == base:
            chosen[e] = True
            support = trial
    if chosen.sum() < count:
        log.warning("only %d of %d requested outlier edges avoid bridges", chosen.sum(), count)
    return chosen


def inject_edges(scene: PlantedScene, k: int, spec: Optional[SceneSpec] = None):
    """Top-k graph over ground-truth overlaps with noisy and outlier relative poses.

    Returns ``(graph, is_outlier)`` with ``is_outlier`` aligned to
    ``graph.edges``.
    """
    spec = spec or scene.spec
    rng = np.random.default_rng([spec.seed, 7919])
    n = len(scene.scans)
    if not 1 <= k < n:
        raise InvalidSpec(f"k must satisfy 1 <= k < {n}")
    pairs = select_top_k(scene.overlaps, k)
    ov = np.array([scene.overlaps[i, j] for i, j in pairs])
    inlier_counts = np.rint(ov * spec.points_per_scan * 0.5).astype(int)
    support = inlier_counts > 0
    n_out = int(round(spec.outlier_edge_fraction * len(pairs)))
    is_out = _pick_outliers(rng, n, pairs, support, n_out)

    edges = []
    for e, (i, j) in enumerate(pairs):
        gt = scene.relative_pose(i, j)
        if is_out[e]:
            ang = rng.uniform(spec.outlier_min_angle_deg, 180.0)
            rot = gt.rotation @ axis_angle(random_unit_vector(rng), ang)
            half = spec.scene_extent / 2.0
            pose = RigidTransform(rot, rng.uniform(-half, half, 3))
            count = int(rng.integers(3, 21))
        else:
            ang = _noise_angle(rng, spec.rotation_noise_deg)
            rot = gt.rotation @ axis_angle(random_unit_vector(rng), ang) if ang else gt.rotation
            trans = gt.translation
            if spec.translation_noise_m:
                trans = trans + rng.normal(0.0, spec.translation_noise_m, 3)
            pose = RigidTransform(rot, trans)
            count = int(inlier_counts[e])
        edges.append(Edge(i, j, float(min(1.0, ov[e])), pose, count))
    return PoseGraph(scene.scans, edges), is_out


def planted_graph(spec: SceneSpec, k: int):
    """Convenience: ``generate_scene`` then ``inject_edges``."""
    scene = generate_scene(spec)
    graph, is_out = inject_edges(scene, k, spec)
    return scene, graph, is_out


def with_spec(spec: SceneSpec, **changes) -> SceneSpec:
    return replace(spec, **changes)
