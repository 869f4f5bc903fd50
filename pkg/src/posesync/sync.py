"""Closed-form weighted rotation and translation synchronization.

Rotations come from the spectral relaxation of
``min Σ w_ij ‖R_ij - R_iᵀ R_j‖²_F``: the three eigenvectors of the
smallest eigenvalues of the block matrix ``L`` are stacked and projected
block-wise onto SO(3). Translations then solve the weighted linear least
squares ``min Σ w_ij ‖R_i t_ij + t_i - t_j‖²``.

The gauge is fixed with node 0 at the identity.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import DegenerateBlock, DegenerateMatrix, DisconnectedGraph, InvalidInput, SingularSystem
from .geometry import RigidTransform, project_to_so3_batch
from .pose_graph import components_from_pairs

WEIGHT_FLOOR = 1e-8
NULLSPACE_TOL = 1e-8
DENSE_LIMIT = 4_000_000


@dataclass(frozen=True, eq=False)
class SyncProblem:
    """Weighted relative-pose measurements on ``n`` nodes.

    ``rotations[e]``/``translations[e]`` hold ``T_ij`` for edge
    ``(i[e], j[e])``. Edges whose weight is at or below ``weight_floor`` are
    ignored by both solvers.
    """

    n: int
    i: np.ndarray
    j: np.ndarray
    weights: np.ndarray
    rotations: np.ndarray
    translations: np.ndarray
    weight_floor: float = WEIGHT_FLOOR

    def __post_init__(self):
        conv = {
            "i": np.asarray(self.i, dtype=int).ravel(),
            "j": np.asarray(self.j, dtype=int).ravel(),
            "weights": np.asarray(self.weights, dtype=float).ravel(),
            "rotations": np.asarray(self.rotations, dtype=float).reshape(-1, 3, 3),
            "translations": np.asarray(self.translations, dtype=float).reshape(-1, 3),
        }
        m = len(conv["i"])
        if any(len(v) != m for v in conv.values()):
            raise InvalidInput("edge arrays of a SyncProblem must have equal length")
        if m and (conv["i"].min() < 0 or max(conv["i"].max(), conv["j"].max()) >= self.n):
            raise InvalidInput("edge endpoint out of range")
        if np.any(conv["i"] == conv["j"]):
            raise InvalidInput("self-edges are not allowed")
        if np.any(conv["weights"] < 0):
            raise InvalidInput("weights must be non-negative")
        for k, v in conv.items():
            v.setflags(write=False)
            object.__setattr__(self, k, v)

    @classmethod
    def from_edges(cls, n: int, edges, weight_floor: float = WEIGHT_FLOOR) -> SyncProblem:
        """Build from ``(i, j, w, T_ij)`` tuples."""
        edges = list(edges)
        return cls(
            n,
            [e[0] for e in edges], [e[1] for e in edges], [e[2] for e in edges],
            np.array([e[3].rotation for e in edges]).reshape(-1, 3, 3),
            np.array([e[3].translation for e in edges]).reshape(-1, 3),
            weight_floor,
        )

    def with_weights(self, weights) -> SyncProblem:
        return SyncProblem(self.n, self.i, self.j, weights, self.rotations,
                           self.translations, self.weight_floor)

    @property
    def active(self) -> np.ndarray:
        return self.weights > self.weight_floor

    def check_connected(self) -> None:
        act = self.active
        if self.n > 1 and not act.any():
            raise DisconnectedGraph("no edge has weight above the floor")
        comps = components_from_pairs(self.n, zip(self.i[act], self.j[act]))
        if len(comps) > 1:
            raise DisconnectedGraph(
                f"{len(comps)} components above weight floor {self.weight_floor:g}")


@dataclass(frozen=True, eq=False)
class RotationSolve:
    rotations: list
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    eigen_residual: float
    matrix_norm: float
    trace: float


@dataclass(frozen=True, eq=False)
class SyncSolution:
    poses: list
    rotation_spectrum: np.ndarray


def rotation_matrix(p: SyncProblem) -> np.ndarray:
    """The symmetric ``3n x 3n`` matrix ``L``, assembled sparse, returned dense."""
    act = p.active
    i, j, w, rot = p.i[act], p.j[act], p.weights[act], p.rotations[act]
    deg = np.bincount(i, weights=w, minlength=p.n) + np.bincount(j, weights=w, minlength=p.n)
    ar = np.arange(3)
    diag = 3 * np.arange(p.n)[:, None] + ar
    bi = ar[None, :, None]
    bj = ar[None, None, :]
    off_r = 3 * i[:, None, None] + bi
    off_c = 3 * j[:, None, None] + bj
    blocks = -w[:, None, None] * rot
    rows = [diag.ravel(), np.broadcast_to(off_r, blocks.shape).ravel(),
            np.broadcast_to(off_c, blocks.shape).transpose(0, 2, 1).ravel()]
    cols = [diag.ravel(), np.broadcast_to(off_c, blocks.shape).ravel(),
            np.broadcast_to(off_r, blocks.shape).transpose(0, 2, 1).ravel()]
    vals = [np.repeat(deg, 3), blocks.ravel(), blocks.transpose(0, 2, 1).ravel()]
    size = 3 * p.n
    mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(size, size))
    return mat.toarray()


def solve_rotations(p: SyncProblem) -> RotationSolve:
    """Spectral rotation synchronization with eigen diagnostics."""
    p.check_connected()
    if p.n == 1:
        return RotationSolve([np.eye(3)], np.zeros(3), np.eye(3), 0.0, 0.0, 0.0)
    lmat = rotation_matrix(p)
    size = lmat.shape[0]
    n_eig = min(6, size)
    vals, vecs = scipy.linalg.eigh(lmat, subset_by_index=[0, n_eig - 1])
    scale = float(np.max(np.diag(lmat)))
    if n_eig > 3 and vals[3] < NULLSPACE_TOL * scale:
        raise DisconnectedGraph(
            f"fourth eigenvalue {vals[3]:.3e} indicates a null space larger than 3")

    v = vecs[:, :3].copy()
    blocks = v.reshape(p.n, 3, 3)
    dets = np.linalg.det(blocks)
    if np.count_nonzero(dets < 0) > p.n / 2:
        v[:, 2] *= -1.0
        blocks = v.reshape(p.n, 3, 3)

    try:
        # v_i approximates R_iᵀ up to a common orthogonal factor
        rotations = project_to_so3_batch(blocks.transpose(0, 2, 1))
    except DegenerateMatrix as exc:
        raise DegenerateBlock(str(exc)) from exc
    rotations = list(rotations[0].T @ rotations)
    rotations[0] = np.eye(3)

    # L is positive semidefinite, so its spectral norm is the top eigenvalue
    norm = float(scipy.linalg.eigvalsh(lmat, subset_by_index=[size - 1, size - 1])[0])
    resid = np.linalg.norm(lmat @ vecs - vecs * vals, axis=0)
    rel = float(resid.max() / norm) if norm > 0 else 0.0
    return RotationSolve(rotations, vals, vecs[:, :3], rel, norm, float(np.trace(lmat)))


def rotation_synchronize(p: SyncProblem) -> list:
    return solve_rotations(p).rotations


def translation_synchronize(p: SyncProblem, rotations: Sequence[np.ndarray]) -> np.ndarray:
    """Weighted least-squares translations with ``t_0 = 0``; returns ``(n, 3)``."""
    p.check_connected()
    if p.n == 1:
        return np.zeros((1, 3))
    act = p.active
    i, j, w, tij = p.i[act], p.j[act], p.weights[act], p.translations[act]
    n_e = len(i)
    rot = np.asarray(rotations, dtype=float)

    # B: +I at column block j, -I at column block i; A: per-edge weights; H: R_i t_ij
    ar = np.arange(3)
    rows = np.tile(3 * np.arange(n_e)[:, None] + ar, (2, 1)).ravel()
    cols = np.concatenate([3 * j[:, None] + ar, 3 * i[:, None] + ar]).ravel()
    vals = np.concatenate([np.ones(3 * n_e), -np.ones(3 * n_e)])
    a_diag = np.repeat(w, 3)
    h = np.einsum("eij,ej->ei", rot[i], tij).ravel()
    if 9 * n_e * p.n <= DENSE_LIMIT:
        bmat = np.zeros((3 * n_e, 3 * p.n))
        bmat[rows, cols] = vals
        bta = bmat.T * a_diag
        normal = (bta @ bmat)[3:, 3:]
        rhs = (bta @ h)[3:]
    else:
        bmat = sp.csr_matrix((vals, (rows, cols)), shape=(3 * n_e, 3 * p.n))
        bta = bmat.T @ sp.diags(a_diag)
        normal = (bta @ bmat).toarray()[3:, 3:]
        rhs = (bta @ h)[3:]
    try:
        factor = scipy.linalg.cho_factor(normal)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"translation normal equations are singular: {exc}") from exc
    sol = scipy.linalg.cho_solve(factor, rhs)
    if not np.all(np.isfinite(sol)):
        raise SingularSystem("non-finite translation solution")
    return np.vstack([np.zeros(3), sol.reshape(-1, 3)])


def synchronize(p: SyncProblem) -> SyncSolution:
    rs = solve_rotations(p)
    trans = translation_synchronize(p, rs.rotations)
    poses = [RigidTransform(r, t) for r, t in zip(rs.rotations, trans)]
    return SyncSolution(poses, rs.eigenvalues)


def rotation_objective(p: SyncProblem, rotations) -> float:
    act = p.active
    rot = np.asarray(rotations)
    pred = np.einsum("eki,ekj->eij", rot[p.i[act]], rot[p.j[act]])
    diff = p.rotations[act] - pred
    return float(np.sum(p.weights[act] * np.einsum("eij,eij->e", diff, diff)))


def translation_objective(p: SyncProblem, rotations, translations) -> float:
    act = p.active
    rot = np.asarray(rotations)
    t = np.asarray(translations)
    i, j = p.i[act], p.j[act]
    r = np.einsum("eij,ej->ei", rot[i], p.translations[act]) + t[i] - t[j]
    return float(np.sum(p.weights[act] * np.einsum("ei,ei->e", r, r)))
