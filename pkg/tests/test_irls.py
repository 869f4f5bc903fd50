import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posesync.errors import MissingInlierCount, OutOfRange
from posesync.geometry import RigidTransform, angular_distance
from posesync.irls import (IrlsConfig, IrlsState, Reweighting, coefficient, history_invariant_gap,
                           init_weights, reweight, run_irls, write_log_csv)
from posesync.pose_graph import Edge, PoseGraph, Scan
from posesync.synth import SceneSpec, planted_graph


def fresh_state(w0):
    w0 = np.asarray(w0, dtype=float)
    return IrlsState(w0.copy(), w0.copy(), np.zeros(len(w0)))


def feed(state, cfg, history):
    """Run ``reweight`` over a residual history (rows = iterations)."""
    out = []
    for n, row in enumerate(history, start=1):
        state.iteration = n
        out.append(reweight(state, np.asarray(row, dtype=float), cfg).copy())
    return out


def test_coefficient_examples():
    assert coefficient(1, 50) == pytest.approx(2 / 2550, rel=1e-15)
    assert coefficient(1, 50) == pytest.approx(7.843e-4, abs=1e-7)
    assert math.fsum(coefficient(m, 50) for m in range(1, 51)) == pytest.approx(1.0, abs=1e-12)
    assert coefficient(1, 1) == 1.0
    assert coefficient(7, 10, Reweighting.UNIFORM_COEFFICIENTS) == 0.1
    assert coefficient(7, 10, Reweighting.CURRENT_ONLY) == coefficient(7, 10)


def test_coefficient_matches_exact_rationals():
    for total in (1, 2, 7, 50, 123):
        for m in (1, total // 2 + 1, total):
            exact = Fraction(2 * m, total * (total + 1))
            assert coefficient(m, total) == pytest.approx(float(exact), rel=1e-15)


def test_coefficient_range_errors():
    with pytest.raises(OutOfRange):
        coefficient(0, 5)
    with pytest.raises(OutOfRange):
        coefficient(6, 5)


def edge_graph(specs):
    """Two-scan-per-edge graph from (overlap, inliers) tuples on a path."""
    n = len(specs) + 1
    edges = [Edge(k, k + 1, s, RigidTransform.identity(), r) for k, (s, r) in enumerate(specs)]
    return PoseGraph([Scan(i) for i in range(n)], edges)


def test_init_weights_examples():
    g = edge_graph([(0.5, 100), (1.0, 200)])
    np.testing.assert_allclose(init_weights(g), [0.25, 1.0])
    ablated = init_weights(edge_graph([(0.5, 100)]), IrlsConfig.ablated({"r"}))
    assert ablated[0] == 1.0  # raw 0.5, normalized by itself
    raw_s_only = init_weights(edge_graph([(0.5, 100), (0.25, 1)]), IrlsConfig.ablated({"r"}))
    np.testing.assert_allclose(raw_s_only, [1.0, 0.5])
    zero = init_weights(edge_graph([(0.5, 0), (0.5, 10)]))
    np.testing.assert_array_equal(zero, [0.0, 1.0])


def test_init_weights_needs_inlier_counts():
    g = PoseGraph([Scan(0), Scan(1)], [Edge(0, 1, 0.5, RigidTransform.identity())])
    with pytest.raises(MissingInlierCount):
        init_weights(g)
    assert init_weights(g, IrlsConfig.ablated({"r"}))[0] == 1.0


def test_zero_residuals_keep_initial_weights():
    cfg = IrlsConfig(iterations=10)
    state = fresh_state([0.3, 1.0])
    for w in feed(state, cfg, np.zeros((10, 2))):
        np.testing.assert_array_equal(w, [0.3, 1.0])


@pytest.mark.parametrize("mode", [Reweighting.HISTORY, Reweighting.CURRENT_ONLY,
                                  Reweighting.UNIFORM_COEFFICIENTS])
def test_constant_residual_telescopes(mode):
    total, delta = 50, 40.0
    cfg = IrlsConfig(iterations=total, reweighting=mode)
    state = fresh_state([0.8])
    final = feed(state, cfg, np.full((total, 1), delta))[-1]
    assert final[0] == pytest.approx(0.8 * math.exp(-math.radians(delta)), rel=1e-12)


def test_history_ratio_for_thirty_degrees():
    cfg = IrlsConfig(iterations=50)
    state = fresh_state([1.0, 1.0])
    history = np.column_stack([np.zeros(50), np.full(50, 30.0)])
    final = feed(state, cfg, history)[-1]
    assert final[0] / final[1] == pytest.approx(math.exp(30 * math.pi / 180), abs=1e-12)
    assert final[0] / final[1] == pytest.approx(1.6881, abs=1e-4)


def test_delta_scale_multiplies_residuals():
    plain = feed(fresh_state([1.0]), IrlsConfig(iterations=4), np.full((4, 1), 10.0))[-1]
    scaled = feed(fresh_state([1.0]), IrlsConfig(iterations=4, delta_scale=2.0),
                  np.full((4, 1), 10.0))[-1]
    assert scaled[0] == pytest.approx(plain[0] ** 2, rel=1e-12)


residual_rows = st.lists(st.floats(0.0, 180.0), min_size=3, max_size=3)


@settings(max_examples=60)
@given(st.lists(residual_rows, min_size=1, max_size=25), st.floats(1e-3, 1.0))
def test_history_invariants(history, w_scale):
    total = len(history)
    cfg = IrlsConfig(iterations=total)
    state = fresh_state(np.array([1.0, 0.5, 0.25]) * w_scale)
    prev = np.zeros(3)
    for n, row in enumerate(history, start=1):
        state.iteration = n
        reweight(state, np.asarray(row), cfg)
        assert np.all(state.penalty >= prev)
        assert np.all(state.weights > 0)
        assert history_invariant_gap(state) < 1e-9
        expect = state.init_weights * np.exp(-state.penalty)
        np.testing.assert_allclose(state.weights, expect, rtol=1e-12)
        prev = state.penalty.copy()


@settings(max_examples=60)
@given(st.lists(st.tuples(st.floats(0, 90), st.floats(0, 90)), min_size=1, max_size=20))
def test_larger_residuals_never_get_more_weight(pairs):
    cfg = IrlsConfig(iterations=len(pairs))
    state = fresh_state([1.0, 1.0])
    for n, (x, y) in enumerate(pairs, start=1):
        state.iteration = n
        hi, lo = max(x, y), min(x, y)
        reweight(state, np.array([hi, lo]), cfg)
        assert state.weights[0] <= state.weights[1]


@given(st.lists(st.floats(0, 180), min_size=2, max_size=12), st.data())
def test_accumulation_is_the_coefficient_weighted_sum(values, data):
    total = len(values)
    a, b = data.draw(st.integers(0, total - 1)), data.draw(st.integers(0, total - 1))
    swapped = list(values)
    swapped[a], swapped[b] = swapped[b], swapped[a]
    cfg = IrlsConfig(iterations=total)
    for hist in (values, swapped):
        state = fresh_state([1.0])
        feed(state, cfg, np.array(hist)[:, None])
        direct = math.fsum(coefficient(m, total) * math.radians(v)
                           for m, v in enumerate(hist, start=1))
        assert state.penalty[0] == pytest.approx(direct, rel=1e-12, abs=1e-15)


def test_ablation_flags():
    assert IrlsConfig.ablated(set()) == IrlsConfig()
    cfg = IrlsConfig.ablated({"s", "hr"}, iterations=7)
    assert not cfg.use_overlap_in_init and cfg.use_inliers_in_init
    assert cfg.reweighting is Reweighting.CURRENT_ONLY and cfg.iterations == 7
    assert IrlsConfig.ablated({"inc"}).reweighting is Reweighting.UNIFORM_COEFFICIENTS
    with pytest.raises(OutOfRange):
        IrlsConfig.ablated({"hr", "inc"})
    with pytest.raises(OutOfRange):
        IrlsConfig.ablated({"x"})
    with pytest.raises(OutOfRange):
        IrlsConfig(iterations=0)


def clean_graph(seed=0, n=12):
    spec = SceneSpec(n_scans=n, points_per_scan=120, outlier_edge_fraction=0.0,
                     rotation_noise_deg=0.0, translation_noise_m=0.0, seed=seed, descriptor_dim=0)
    return planted_graph(spec, 4)


def test_outlier_free_graph_is_a_fixed_point():
    scene, g, _ = clean_graph()
    res = run_irls(g, IrlsConfig(iterations=5))
    first = [row for row in res.state.log if row[0] == 1]
    assert max(row[3] for row in first) < 1e-6
    np.testing.assert_allclose(res.state.weights, res.state.init_weights, rtol=1e-9)
    for a in range(g.n):
        for b in range(a + 1, g.n):
            p = res.solution.poses[a].relative_to(res.solution.poses[b])
            t = scene.relative_pose(a, b)
            assert angular_distance(p.rotation, t.rotation) < 1e-6
            assert np.linalg.norm(p.translation - t.translation) < 1e-9


def test_outliers_are_suppressed():
    spec = SceneSpec(n_scans=20, points_per_scan=300, seed=2, descriptor_dim=0)
    _, g, is_out = planted_graph(spec, 6)
    res = run_irls(g)
    w = res.state.weights / res.state.weights.max()
    assert np.median(w[is_out]) < np.median(w[~is_out])


def test_run_is_deterministic(tmp_path):
    spec = SceneSpec(n_scans=10, points_per_scan=150, seed=8, descriptor_dim=0)
    _, g, _ = planted_graph(spec, 4)
    a = run_irls(g, IrlsConfig(iterations=8))
    b = run_irls(g, IrlsConfig(iterations=8))
    assert a.state.log == b.state.log
    assert all(p.same_as(q) for p, q in zip(a.solution.poses, b.solution.poses))
    write_log_csv(tmp_path / "a.csv", a.state)
    write_log_csv(tmp_path / "b.csv", b.state)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == "iteration,edge_i,edge_j,residual_deg,weight"
    assert len((tmp_path / "a.csv").read_text().splitlines()) == 1 + 8 * len(g.edges)


def test_callback_sees_every_iteration():
    _, g, _ = clean_graph(n=6)
    seen = []
    run_irls(g, IrlsConfig(iterations=4), callback=lambda n, poses: seen.append((n, len(poses))))
    assert seen == [(1, 6), (2, 6), (3, 6), (4, 6)]


def test_components_are_solved_independently():
    _, g1, _ = clean_graph(seed=1, n=5)
    shifted = [Edge(e.i + 5, e.j + 5, e.overlap_score, e.relative_pose, e.inlier_count)
               for e in g1.edges]
    g = PoseGraph([Scan(i) for i in range(11)], list(g1.edges) + shifted)
    res = run_irls(g, IrlsConfig(iterations=2))
    assert res.components == [set(range(5)), set(range(5, 10)), {10}]
    for off in (0, 5):
        assert res.solution.poses[off].same_as(RigidTransform.identity())
    for a in range(5):
        x = res.solution.poses[0].relative_to(res.solution.poses[a]).as_matrix()
        y = res.solution.poses[5].relative_to(res.solution.poses[5 + a]).as_matrix()
        np.testing.assert_allclose(x, y, atol=1e-9)
