"""Pairwise registration on graph edges: descriptor matching, RANSAC, inlier counts."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import (DegenerateConfiguration, DimensionMismatch, MissingDescriptors, NoConsensus,
                     TooFewCorrespondences)
from .geometry import RigidTransform, fit_rigid, fit_rigid_batch
from .pose_graph import PoseGraph, Scan

log = logging.getLogger(__name__)

DEFAULT_TAU = 0.1
DEFAULT_RANSAC_ITERATIONS = 1000
_COLLINEAR_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Matched pairs; ``p[k]`` lives in scan i's frame, ``q[k]`` in scan j's."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(-1, 3)
        q = np.asarray(self.q, dtype=float).reshape(-1, 3)
        if p.shape != q.shape:
            raise DimensionMismatch(f"{len(p)} source points vs {len(q)} target points")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    def __len__(self):
        return len(self.p)

    def swapped(self) -> CorrespondenceSet:
        return CorrespondenceSet(self.q, self.p)


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    transform: RigidTransform
    inlier_count: int
    inlier_mask: np.ndarray


def match_descriptors(scan_i: Scan, scan_j: Scan, mutual: bool = True) -> CorrespondenceSet:
    """Nearest-neighbor descriptor matching from scan i into scan j."""
    for s in (scan_i, scan_j):
        if s.descriptors is None or s.points is None:
            raise MissingDescriptors(f"scan {s.id} has no descriptors loaded")
    di, dj = scan_i.descriptors, scan_j.descriptors
    if di.shape[1] != dj.shape[1]:
        raise DimensionMismatch(f"descriptor dims {di.shape[1]} and {dj.shape[1]} differ")
    _, fwd = cKDTree(dj).query(di, k=1)
    src = np.arange(len(di))
    if mutual:
        _, back = cKDTree(di).query(dj, k=1)
        keep = back[fwd] == src
        src, fwd = src[keep], fwd[keep]
    return CorrespondenceSet(scan_i.points[src], scan_j.points[fwd])


def _residuals_sq(c: CorrespondenceSet, rotation, translation) -> np.ndarray:
    d = c.p - (c.q @ np.asarray(rotation).T + translation)
    return np.einsum("ij,ij->i", d, d)


def count_inliers(c: CorrespondenceSet, t: RigidTransform, tau: float) -> int:
    """Pairs with ``‖p - (R q + t)‖² < τ²`` (τ is a distance)."""
    if len(c) == 0:
        return 0
    return int(np.count_nonzero(_residuals_sq(c, t.rotation, t.translation) < tau * tau))


def _non_degenerate(pts: np.ndarray) -> np.ndarray:
    """Mask over ``(b, 3, 3)`` triangles: True unless collinear or coincident."""
    e1 = pts[:, 1] - pts[:, 0]
    e2 = pts[:, 2] - pts[:, 0]
    area = np.linalg.norm(np.cross(e1, e2), axis=1)
    scale = np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
    return area > _COLLINEAR_TOL * scale + 1e-300


def _draw_samples(rng: np.random.Generator, c: CorrespondenceSet, count: int) -> np.ndarray:
    """``count`` non-degenerate 3-subsets of correspondence indices.

    Degenerate draws are discarded and replaced, so they never use up the
    iteration budget.
    """
    n = len(c)
    out = []
    have = 0
    attempts = 0
    while have < count:
        if attempts > 100:
            raise NoConsensus("could not draw a non-degenerate 3-point sample")
        attempts += 1
        batch = count - have
        idx = _distinct_triples(rng, n, batch)
        ok = _non_degenerate(c.q[idx]) & _non_degenerate(c.p[idx])
        out.append(idx[ok])
        have += int(ok.sum())
    return np.concatenate(out)[:count]


def _distinct_triples(rng: np.random.Generator, n: int, batch: int) -> np.ndarray:
    a = rng.integers(0, n, size=batch)
    b = rng.integers(0, n - 1, size=batch)
    b = b + (b >= a)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    c = rng.integers(0, n - 2, size=batch)
    c = c + (c >= lo)
    c = c + (c >= hi)
    return np.stack([a, b, c], axis=1)


def ransac_register(c: CorrespondenceSet, inlier_threshold: float = DEFAULT_TAU,
                    max_iterations: int = DEFAULT_RANSAC_ITERATIONS, seed: int = 0,
                    chunk: int = 256) -> RegistrationResult:
    """3-point RANSAC for ``p ≈ R q + t`` with a final refit on the consensus set."""
    if len(c) < 3:
        raise TooFewCorrespondences(f"RANSAC needs >= 3 correspondences, got {len(c)}")
    if max_iterations < 1:
        raise ValueError("max_iterations must be positive")
    rng = np.random.default_rng(seed)
    tau2 = inlier_threshold * inlier_threshold
    samples = _draw_samples(rng, c, max_iterations)

    best_count, best_model = -1, None
    for start in range(0, len(samples), chunk):
        idx = samples[start:start + chunk]
        rot, trans = fit_rigid_batch(c.q[idx], c.p[idx])
        pred = np.einsum("bij,nj->bni", rot, c.q) + trans[:, None, :]
        d = c.p[None] - pred
        counts = np.count_nonzero(np.einsum("bni,bni->bn", d, d) < tau2, axis=1)
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count, best_model = int(counts[k]), (rot[k], trans[k])

    if best_count < 3:
        raise NoConsensus(f"best model has only {best_count} inliers")
    mask = _residuals_sq(c, *best_model) < tau2
    try:
        model = fit_rigid(c.q[mask], c.p[mask])
    except DegenerateConfiguration:
        model = RigidTransform(*best_model)
    mask = _residuals_sq(c, model.rotation, model.translation) < tau2
    return RegistrationResult(model, int(mask.sum()), mask)


def register_edges(g: PoseGraph, tau: float = DEFAULT_TAU,
                   iterations: int = DEFAULT_RANSAC_ITERATIONS, seed: int = 0,
                   mutual: bool = True, threads: int = 1) -> PoseGraph:
    """Estimate ``T_ij`` and ``r_ij`` on every edge.

    Edge ``e`` uses RANSAC seed ``seed ^ e``, so the result does not depend on
    ``threads``. An edge without consensus keeps the identity pose and an
    inlier count of 0, which gives it zero initial weight.
    """

    def one(e_idx):
        e = g.edges[e_idx]
        corr = match_descriptors(g.scans[e.i], g.scans[e.j], mutual=mutual)
        try:
            res = ransac_register(corr, tau, iterations, seed ^ e_idx)
        except (NoConsensus, TooFewCorrespondences) as exc:
            log.warning("edge (%d, %d): %s; keeping it with zero inliers", e.i, e.j, exc)
            return replace(e, relative_pose=RigidTransform.identity(), inlier_count=0)
        return replace(e, relative_pose=res.transform, inlier_count=res.inlier_count)

    order = range(len(g.edges))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            edges = list(pool.map(one, order))
    else:
        edges = [one(k) for k in order]
    return g.with_edges(edges)
