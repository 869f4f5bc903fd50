import numpy as np
import pytest

from posesync.geometry import RigidTransform, random_rotation

# criterion id -> (passed, detail); filled by test_acceptance, printed at the end
ACCEPTANCE_LINES: dict = {}


def record(criterion: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k)):
        ok, detail = ACCEPTANCE_LINES[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_pose(rng, scale: float = 2.0) -> RigidTransform:
    return RigidTransform(random_rotation(rng), rng.uniform(-scale, scale, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_graph(rng, with_points: bool = True):
    """A random PoseGraph whose scan data survives float32 storage exactly."""
    from posesync.pose_graph import Edge, PoseGraph, Scan

    n = int(rng.integers(2, 9))
    dim = int(rng.integers(1, 6))
    scans = []
    for i in range(n):
        pts = desc = None
        if with_points:
            m = int(rng.integers(1, 30))
            pts = rng.standard_normal((m, 3)).astype(np.float32).astype(float)
            desc = rng.standard_normal((m, dim)).astype(np.float32).astype(float)
        feat = None
        if rng.uniform() < 0.7:
            feat = rng.standard_normal(dim)
            feat /= np.linalg.norm(feat)
        scans.append(Scan(i, pts, desc, feat))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.uniform() < 0.5]
    edges = []
    for i, j in pairs:
        pose = random_pose(rng) if rng.uniform() < 0.8 else None
        count = int(rng.integers(0, 500)) if rng.uniform() < 0.8 else None
        weight = float(rng.uniform()) if rng.uniform() < 0.5 else None
        edges.append(Edge(i, j, float(rng.uniform()), pose, count, weight))
    return PoseGraph(scans, edges)


def graphs_identical(a, b) -> bool:
    """Field-for-field, bit-exact comparison of two graphs."""
    if a.n != b.n or len(a.edges) != len(b.edges):
        return False
    for s, t in zip(a.scans, b.scans):
        if s.id != t.id:
            return False
        for x, y in ((s.points, t.points), (s.descriptors, t.descriptors),
                     (s.global_feature, t.global_feature)):
            if (x is None) != (y is None) or (x is not None and not np.array_equal(x, y)):
                return False
    for e, f in zip(a.edges, b.edges):
        if (e.i, e.j, e.overlap_score, e.inlier_count, e.weight) != \
                (f.i, f.j, f.overlap_score, f.inlier_count, f.weight):
            return False
        if (e.relative_pose is None) != (f.relative_pose is None):
            return False
        if e.relative_pose is not None and not e.relative_pose.same_as(f.relative_pose):
            return False
    return True


def poses_identical(a, b) -> bool:
    return len(a) == len(b) and all(p.same_as(q) for p, q in zip(a, b))
