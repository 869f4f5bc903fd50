"""IRLS pose synchronization with history reweighting.

Each iteration synchronizes poses under the current edge weights, measures
the rotation residual of every edge against the synchronized poses, and
recomputes the weights as ``w0 * exp(-Σ_m g(m) δ^(m))``, an increasing
coefficient schedule applied to the whole residual history.
"""
from __future__ import annotations

import csv
import enum
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import EmptyComponent, MissingInlierCount, OutOfRange
from .formats import atomic_write
from .geometry import RigidTransform, angular_distances
from .pose_graph import PoseGraph, components_from_pairs
from .sync import WEIGHT_FLOOR, SyncProblem, SyncSolution, solve_rotations, translation_synchronize

DEFAULT_ITERATIONS = 50


class Reweighting(str, enum.Enum):
    HISTORY = "history"
    CURRENT_ONLY = "current_only"            # ablation: no history
    UNIFORM_COEFFICIENTS = "uniform_coefficients"  # ablation: g(m) = 1/M


@dataclass(frozen=True)
class IrlsConfig:
    iterations: int = DEFAULT_ITERATIONS
    use_overlap_in_init: bool = True
    use_inliers_in_init: bool = True
    reweighting: Reweighting = Reweighting.HISTORY
    weight_floor: float = WEIGHT_FLOOR
    delta_scale: float = 1.0

    def __post_init__(self):
        if self.iterations < 1:
            raise OutOfRange(f"iterations must be >= 1, got {self.iterations}")
        object.__setattr__(self, "reweighting", Reweighting(self.reweighting))

    @classmethod
    def ablated(cls, flags, **kw) -> IrlsConfig:
        """Config with ablation switches ``s``, ``r``, ``hr``, ``inc`` applied."""
        flags = set(flags)
        unknown = flags - {"s", "r", "hr", "inc"}
        if unknown:
            raise OutOfRange(f"unknown ablation flag(s): {sorted(unknown)}")
        if {"hr", "inc"} <= flags:
            raise OutOfRange("ablations 'hr' and 'inc' are mutually exclusive")
        mode = Reweighting.HISTORY
        if "hr" in flags:
            mode = Reweighting.CURRENT_ONLY
        elif "inc" in flags:
            mode = Reweighting.UNIFORM_COEFFICIENTS
        return cls(use_overlap_in_init="s" not in flags, use_inliers_in_init="r" not in flags,
                   reweighting=mode, **kw)


@dataclass
class IrlsState:
    """Owned, mutable bookkeeping of one IRLS run over all graph edges."""

    init_weights: np.ndarray
    weights: np.ndarray
    penalty: np.ndarray
    iteration: int = 0
    poses: list = field(default_factory=list)
    log: list = field(default_factory=list)
    spectra: dict = field(default_factory=dict)
    eigen_checks: list = field(default_factory=list)


def coefficient_exact(m: int, total: int, mode=Reweighting.HISTORY) -> Fraction:
    """Weight ``g(m)`` of iteration ``m`` out of ``total``, as an exact rational."""
    if not 1 <= m <= total:
        raise OutOfRange(f"iteration {m} outside 1..{total}")
    if Reweighting(mode) is Reweighting.UNIFORM_COEFFICIENTS:
        return Fraction(1, total)
    return Fraction(2 * m, total * (total + 1))


def coefficient(m: int, total: int, mode=Reweighting.HISTORY) -> float:
    """:func:`coefficient_exact` rounded to the nearest float."""
    return float(coefficient_exact(m, total, mode))


def init_weights(g: PoseGraph, cfg: IrlsConfig = IrlsConfig()) -> np.ndarray:
    """``s_ij * r_ij`` per edge, divided by the largest value."""
    raw = np.ones(len(g.edges))
    for k, e in enumerate(g.edges):
        if cfg.use_overlap_in_init:
            raw[k] *= e.overlap_score
        if cfg.use_inliers_in_init:
            if e.inlier_count is None:
                raise MissingInlierCount(f"edge ({e.i}, {e.j}) has no inlier count")
            raw[k] *= e.inlier_count
    top = raw.max() if len(raw) else 0.0
    return raw / top if top > 0 else raw


def reweight(state: IrlsState, residuals_deg: np.ndarray, cfg: IrlsConfig,
             edges: Optional[np.ndarray] = None) -> np.ndarray:
    """Fold one iteration's residuals (degrees) into the weights.

    ``state.iteration`` must already hold the index ``n`` of the residuals.
    Only ``edges`` (all edges by default) are updated.
    """
    n, total = state.iteration, cfg.iterations
    if edges is None:
        edges = np.arange(len(state.weights))
    delta = np.radians(np.asarray(residuals_deg, dtype=float)) * cfg.delta_scale
    g_n = coefficient(n, total, cfg.reweighting)
    if cfg.reweighting is Reweighting.CURRENT_ONLY:
        # rescaled so a persistent residual reaches the history-mode total at n = M
        step = g_n * delta / coefficient(total, total, cfg.reweighting)
        state.penalty[edges] = step
    else:
        state.penalty[edges] += g_n * delta
    state.weights[edges] = state.init_weights[edges] * np.exp(-state.penalty[edges])
    return state.weights


def edge_residuals(rel_rotations: np.ndarray, i: np.ndarray, j: np.ndarray,
                   rotations) -> np.ndarray:
    """Rotation residual in degrees between ``R_ij`` and ``R_iᵀ R_j``."""
    rot = np.asarray(rotations)
    return angular_distances(rel_rotations, np.einsum("eki,ekj->eij", rot[i], rot[j]))


@dataclass(frozen=True, eq=False)
class IrlsResult:
    solution: SyncSolution
    state: IrlsState
    components: list


def run_irls(g: PoseGraph, cfg: IrlsConfig = IrlsConfig(),
             callback: Optional[Callable[[int, list], None]] = None) -> IrlsResult:
    """Run ``cfg.iterations`` rounds of synchronize/reweight on every component.

    Components are taken over edges whose initial weight clears the floor;
    each is solved with its smallest node as the identity. ``callback`` (if
    given) receives ``(n, poses)`` after every iteration's synchronization,
    where ``poses`` covers all nodes.
    """
    for e in g.edges:
        if e.relative_pose is None:
            raise EmptyComponent(f"edge ({e.i}, {e.j}) has no relative pose")
    w0 = init_weights(g, cfg)
    state = IrlsState(w0.copy(), w0.copy(), np.zeros(len(w0)))
    e_i = np.array([e.i for e in g.edges], dtype=int)
    e_j = np.array([e.j for e in g.edges], dtype=int)
    rel_rot = np.array([e.relative_pose.rotation for e in g.edges]).reshape(-1, 3, 3)
    rel_t = np.array([e.relative_pose.translation for e in g.edges]).reshape(-1, 3)

    live = w0 > cfg.weight_floor
    comps = components_from_pairs(g.n, zip(e_i[live], e_j[live]))
    poses = [RigidTransform.identity() for _ in range(g.n)]
    spectra = {}

    plan = []
    for comp in comps:
        if not comp:
            raise EmptyComponent("empty component")
        nodes = np.array(sorted(comp))
        local = -np.ones(g.n, dtype=int)
        local[nodes] = np.arange(len(nodes))
        members = np.flatnonzero((local[e_i] >= 0) & (local[e_j] >= 0))
        if len(nodes) == 1:
            continue
        problem = SyncProblem(len(nodes), local[e_i[members]], local[e_j[members]],
                              state.weights[members], rel_rot[members], rel_t[members],
                              cfg.weight_floor)
        plan.append((nodes, members, problem))

    for n in range(1, cfg.iterations + 1):
        state.iteration = n
        for nodes, members, problem in plan:
            problem = problem.with_weights(state.weights[members])
            rs = solve_rotations(problem)
            trans = translation_synchronize(problem, rs.rotations)
            for loc, node in enumerate(nodes):
                poses[node] = RigidTransform(rs.rotations[loc], trans[loc])
            spectra[int(nodes[0])] = rs.eigenvalues
            state.eigen_checks.append((n, int(nodes[0]), rs.eigen_residual,
                                       rs.eigenvalues[:3].copy(), rs.trace))
            delta = edge_residuals(problem.rotations, problem.i, problem.j, rs.rotations)
            reweight(state, delta, cfg, members)
            state.log.extend(
                (n, int(e_i[m]), int(e_j[m]), float(d), float(state.weights[m]))
                for m, d in zip(members, delta))
        state.poses = list(poses)
        if callback is not None:
            callback(n, list(poses))

    state.spectra = spectra
    spectrum = spectra[min(spectra)] if spectra else np.zeros(0)
    return IrlsResult(SyncSolution(list(poses), spectrum), state, comps)


LOG_COLUMNS = ("iteration", "edge_i", "edge_j", "residual_deg", "weight")


def write_log_csv(path, state: IrlsState) -> None:
    with atomic_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for it, i, j, d, wt in state.log:
            w.writerow([it, i, j, repr(d), repr(wt)])


def final_weights_relative(state: IrlsState) -> np.ndarray:
    top = state.weights.max() if len(state.weights) else 0.0
    return state.weights / top if top > 0 else state.weights.copy()


def history_invariant_gap(state: IrlsState) -> float:
    """max |log(w0 / w) - S| over edges with positive initial weight."""
    pos = state.init_weights > 0
    if not pos.any():
        return 0.0
    gap = np.log(state.init_weights[pos] / state.weights[pos]) - state.penalty[pos]
    return float(np.max(np.abs(gap))) if gap.size else 0.0

