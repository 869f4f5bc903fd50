import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_pose
from posesync.errors import EmptyEvaluationSet, EmptyInput
from posesync.evaluation import (EvalPair, ecdf_report, evaluate, evaluation_pairs, pose_errors,
                                 registration_recall, write_report)
from posesync.geometry import RigidTransform, axis_angle, random_rotation
from posesync.synth import SceneSpec, planted_graph


def test_perfect_prediction(rng):
    a, b = random_pose(rng), random_pose(rng)
    assert pose_errors(a, b, a, b) == (0.0, 0.0)


def test_constructed_rotation_perturbation(rng):
    gi, gj = random_pose(rng), random_pose(rng)
    rel = gi.relative_to(gj)
    bent = RigidTransform(rel.rotation @ axis_angle(rng.standard_normal(3), 25.0), rel.translation)
    re, te = pose_errors(gi, gi.compose(bent), gi, gj)
    assert re == pytest.approx(25.0, abs=1e-6)
    assert te == pytest.approx(0.0, abs=1e-12)


def test_translation_error_is_a_length(rng):
    gi, gj = random_pose(rng), random_pose(rng)
    shift = RigidTransform(np.eye(3), [0.0, 0.3, 0.4])
    pred_j = gi.compose(shift.compose(gi.relative_to(gj)))
    _, te = pose_errors(gi, pred_j, gi, gj)
    assert te == pytest.approx(0.5, abs=1e-12)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_gauge_invariance(seed):
    rng = np.random.default_rng(seed)
    pi, pj, gi, gj = (random_pose(rng) for _ in range(4))
    g = random_pose(rng, 10.0)
    base = pose_errors(pi, pj, gi, gj)
    moved = pose_errors(g.compose(pi), g.compose(pj), gi, gj)
    assert moved == pytest.approx(base, abs=1e-9)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_pair_order_symmetry_of_rotation_error(seed):
    rng = np.random.default_rng(seed)
    pi, pj, gi, gj = (random_pose(rng) for _ in range(4))
    assert pose_errors(pi, pj, gi, gj)[0] == pytest.approx(pose_errors(pj, pi, gj, gi)[0], abs=1e-9)


def test_symmetry_on_exact_rotations(rng):
    gi, gj = random_pose(rng), random_pose(rng)
    offset = RigidTransform(np.eye(3), [0.1, -0.2, 0.05])
    pi, pj = gi, gj.compose(offset)
    assert pose_errors(pi, pj, gi, gj)[1] == pytest.approx(pose_errors(pj, pi, gj, gi)[1], abs=1e-9)


def four_pairs(rng):
    gt = [random_pose(rng) for _ in range(5)]
    pairs = [EvalPair(k, k + 1, rng.uniform(-1, 1, (40, 3))) for k in range(4)]
    return gt, pairs


def test_recall_perfect_and_corrupted(rng):
    gt, pairs = four_pairs(rng)
    assert registration_recall(gt, gt, pairs) == 1.0
    pred = list(gt)
    pred[4] = pred[4].compose(RigidTransform(np.eye(3), [1.0, 0, 0]))
    assert registration_recall(pred, gt, pairs, 0.2) == 0.75


def test_recall_monotone_in_threshold(rng):
    gt, pairs = four_pairs(rng)
    pred = [p.compose(RigidTransform(random_rotation(rng) if k else np.eye(3), [0.1 * k, 0, 0]))
            for k, p in enumerate(gt)]
    values = [registration_recall(pred, gt, pairs, th) for th in (0.01, 0.1, 0.5, 1.0, 5.0, 50.0)]
    assert values == sorted(values)


def test_recall_needs_pairs(rng):
    with pytest.raises(EmptyEvaluationSet):
        registration_recall([], [], [])


def test_ecdf_examples():
    zero = ecdf_report([(0.0, 0.0)] * 4)
    assert set(zero.rotation.values()) == {1.0} and set(zero.translation.values()) == {1.0}
    t = ecdf_report([(2.0, 0.0), (4.0, 0.0), (12.0, 0.0)])
    assert list(t.rotation.values()) == pytest.approx([1 / 3, 2 / 3, 2 / 3, 1, 1])
    assert list(t.rotation) == [3.0, 5.0, 10.0, 30.0, 45.0]
    assert list(t.translation) == [0.05, 0.1, 0.25, 0.5, 0.75]
    assert (t.mean_re, t.median_re) == pytest.approx((6.0, 4.0))
    with pytest.raises(EmptyInput):
        ecdf_report([])


@given(st.lists(st.tuples(st.floats(0, 180), st.floats(0, 5)), min_size=1, max_size=30))
def test_ecdf_non_decreasing(errors):
    t = ecdf_report(errors)
    for table in (t.rotation, t.translation):
        vals = list(table.values())
        assert vals == sorted(vals)
        assert all(0 <= v <= 1 for v in vals)


def test_report_on_planted_scene(tmp_path):
    scene, g, _ = planted_graph(SceneSpec(n_scans=8, points_per_scan=150, seed=1), 3)
    pairs = evaluation_pairs(g, scene.poses)
    keys = {(p.i, p.j) for p in pairs}
    assert all(e.key in keys for e in g.edges)
    for p in pairs:
        assert len(p.points) > 0
    report = evaluate(scene.poses, scene.poses, pairs)
    assert report.recall == 1.0
    assert report.recall == sum(r.success for r in report.records) / len(report.records)
    write_report(report, tmp_path / "report.csv", tmp_path / "summary.txt")
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0] == "i,j,re_deg,te_m,mean_dist_m,success"
    assert len(lines) == len(pairs) + 1
    assert "registration recall" in (tmp_path / "summary.txt").read_text()
