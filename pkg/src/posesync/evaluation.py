"""Pose-graph evaluation on relative poses: rotation/translation errors,
registration recall and ECDF tables. Every metric is computed from
``T_i⁻¹ ∘ T_j`` and is therefore independent of the global gauge."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyEvaluationSet, EmptyInput
from .formats import atomic_write
from .geometry import RigidTransform, angular_distance
from .pose_graph import PoseGraph, directional_overlap

ROTATION_THRESHOLDS = (3.0, 5.0, 10.0, 30.0, 45.0)
TRANSLATION_THRESHOLDS = (0.05, 0.1, 0.25, 0.5, 0.75)
RR_THRESHOLD = 0.2


def pose_errors(pred_i: RigidTransform, pred_j: RigidTransform,
                gt_i: RigidTransform, gt_j: RigidTransform) -> tuple[float, float]:
    """(rotation error in degrees, translation error in meters) of the pair."""
    rel_pred = pred_i.relative_to(pred_j)
    rel_gt = gt_i.relative_to(gt_j)
    re = angular_distance(rel_pred.rotation, rel_gt.rotation)
    te = float(np.linalg.norm(rel_pred.translation - rel_gt.translation))
    return re, te


@dataclass(frozen=True, eq=False)
class EvalPair:
    """A scan pair plus the points of scan ``j`` (in j's frame) used for recall."""

    i: int
    j: int
    points: np.ndarray


def alignment_distance(pred_i, pred_j, gt_i, gt_j, points) -> float:
    """Mean distance between ``points`` mapped by predicted and true ``T_ij``."""
    a = pred_i.relative_to(pred_j).apply(points)
    b = gt_i.relative_to(gt_j).apply(points)
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def registration_recall(pred: Sequence[RigidTransform], gt: Sequence[RigidTransform],
                        pairs: Sequence[EvalPair], dist_threshold: float = RR_THRESHOLD) -> float:
    if not pairs:
        raise EmptyEvaluationSet("no evaluation pairs")
    ok = [alignment_distance(pred[p.i], pred[p.j], gt[p.i], gt[p.j], p.points) < dist_threshold
          for p in pairs]
    return float(np.mean(ok))


@dataclass
class EcdfTables:
    rotation: dict
    translation: dict
    mean_re: float
    median_re: float
    mean_te: float
    median_te: float


def ecdf_report(errors: Sequence[tuple[float, float]],
                rotation_thresholds=ROTATION_THRESHOLDS,
                translation_thresholds=TRANSLATION_THRESHOLDS) -> EcdfTables:
    if len(errors) == 0:
        raise EmptyInput("no errors to summarize")
    arr = np.asarray(errors, dtype=float).reshape(-1, 2)
    re, te = arr[:, 0], arr[:, 1]
    return EcdfTables(
        {th: float(np.mean(re <= th)) for th in rotation_thresholds},
        {th: float(np.mean(te <= th)) for th in translation_thresholds},
        float(re.mean()), float(np.median(re)), float(te.mean()), float(np.median(te)),
    )


@dataclass
class PairRecord:
    i: int
    j: int
    re: float
    te: float
    distance: float
    success: bool


@dataclass
class MetricsReport:
    records: list
    recall: float
    ecdf: EcdfTables
    rr_threshold: float = RR_THRESHOLD
    extra: dict = field(default_factory=dict)

    def summary(self) -> str:
        e = self.ecdf
        lines = [
            f"pairs evaluated: {len(self.records)}",
            f"registration recall (<{self.rr_threshold:g} m): {self.recall:.4f}",
            f"rotation error  mean {e.mean_re:.4f} deg  median {e.median_re:.4f} deg",
            f"translation err mean {e.mean_te:.4f} m    median {e.median_te:.4f} m",
            "ECDF rotation:    " + "  ".join(f"{k:g}deg:{v:.3f}" for k, v in e.rotation.items()),
            "ECDF translation: " + "  ".join(f"{k:g}m:{v:.3f}" for k, v in e.translation.items()),
        ]
        lines += [f"{k}: {v}" for k, v in self.extra.items()]
        return "\n".join(lines) + "\n"


def evaluate(pred: Sequence[RigidTransform], gt: Sequence[RigidTransform],
             pairs: Sequence[EvalPair], rr_threshold: float = RR_THRESHOLD) -> MetricsReport:
    if not pairs:
        raise EmptyEvaluationSet("no evaluation pairs")
    records = []
    for p in pairs:
        re, te = pose_errors(pred[p.i], pred[p.j], gt[p.i], gt[p.j])
        dist = alignment_distance(pred[p.i], pred[p.j], gt[p.i], gt[p.j], p.points)
        records.append(PairRecord(p.i, p.j, re, te, dist, dist < rr_threshold))
    recall = float(np.mean([r.success for r in records]))
    tables = ecdf_report([(r.re, r.te) for r in records])
    return MetricsReport(records, recall, tables, rr_threshold)


def evaluation_pairs(g: PoseGraph, gt: Sequence[RigidTransform], min_overlap: float = 0.3,
                     radius: float = 0.05, include_edges: bool = True) -> list[EvalPair]:
    """Graph edges plus every pair whose true overlap reaches ``min_overlap``.

    The recall points of a pair are the points of scan j that have a
    neighbor in scan i under the true poses; all of scan j's points when the
    pair does not overlap at all.
    """
    world = []
    for s, pose in zip(g.scans, gt):
        if s.points is None or len(s.points) == 0:
            raise EmptyEvaluationSet(f"scan {s.id} has no points loaded")
        world.append(pose.apply(s.points))
    pairs = []
    for a in range(g.n):
        for b in range(a + 1, g.n):
            in_b = directional_overlap(world[b], world[a], radius)
            in_a = directional_overlap(world[a], world[b], radius)
            overlap = 0.5 * (in_a.mean() + in_b.mean())
            if overlap >= min_overlap or (include_edges and g.has_edge(a, b)):
                pts = g.scans[b].points[in_b] if in_b.any() else g.scans[b].points
                pairs.append(EvalPair(a, b, pts))
    return pairs


REPORT_COLUMNS = ("i", "j", "re_deg", "te_m", "mean_dist_m", "success")


def write_report(report: MetricsReport, csv_path, summary_path: Optional[str] = None) -> None:
    with atomic_write(csv_path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in report.records:
            w.writerow([r.i, r.j, repr(r.re), repr(r.te), repr(r.distance), int(r.success)])
    if summary_path is not None:
        with atomic_write(summary_path) as fh:
            fh.write(report.summary())
