"""On-disk formats.

* graph file: JSON with ``version``, ``scans`` and ``edges``; poses are 4x4
  row-major ``[R | t; 0 0 0 1]`` matrices.
* poses file: JSON with ``version`` and ``poses`` (``id`` + 4x4 ``matrix``).
* point clouds: ASCII PLY (vertex x y z) or ``.xyz.bin`` (little-endian
  float32 triples).
* descriptors: 8-byte header (count, dim as little-endian uint32) followed
  by little-endian float32 rows.

All writers go through :func:`atomic_write` so a failed run never leaves a
half-written file behind.
"""
from __future__ import annotations

import json
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import GraphFormatError, IOFailure
from .geometry import RigidTransform
from .pose_graph import Edge, PoseGraph, Scan

FORMAT_VERSION = 1


@contextmanager
def atomic_write(path, mode="w"):
    """Write to a temporary sibling, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc.strerror or exc}") from exc


# point clouds

def read_xyz_bin(path) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) % 12:
        raise IOFailure(f"{path}: size {len(raw)} is not a multiple of 12 bytes")
    return np.frombuffer(raw, dtype="<f4").reshape(-1, 3).astype(float)


def write_xyz_bin(path, points) -> None:
    data = np.ascontiguousarray(np.asarray(points).reshape(-1, 3), dtype="<f4")
    with atomic_write(path, "wb") as fh:
        fh.write(data.tobytes())


def read_ply(path) -> np.ndarray:
    """ASCII PLY reader; only the vertex x/y/z properties are kept."""
    text = _read_bytes(path).decode("ascii", errors="replace").splitlines()
    if not text or text[0].strip() != "ply":
        raise IOFailure(f"{path}: not a PLY file")
    n_vertex, props, in_vertex, fmt = 0, [], False, None
    body_start = None
    for idx, line in enumerate(text[1:], start=1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                n_vertex = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            body_start = idx + 1
            break
    if fmt != "ascii":
        raise IOFailure(f"{path}: only ASCII PLY is supported (got {fmt})")
    if body_start is None or not {"x", "y", "z"} <= set(props):
        raise IOFailure(f"{path}: malformed PLY header")
    cols = [props.index(c) for c in ("x", "y", "z")]
    rows = text[body_start:body_start + n_vertex]
    if len(rows) < n_vertex:
        raise IOFailure(f"{path}: expected {n_vertex} vertices, found {len(rows)}")
    if n_vertex == 0:
        return np.zeros((0, 3))
    data = np.array([r.split() for r in rows], dtype=float)
    return data[:, cols]


def write_ply(path, points) -> None:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    with atomic_write(path) as fh:
        fh.write(f"ply\nformat ascii 1.0\nelement vertex {len(points)}\n"
                 "property float x\nproperty float y\nproperty float z\nend_header\n")
        for x, y, z in points.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")


def read_points(path) -> np.ndarray:
    name = str(path)
    if name.endswith(".xyz.bin"):
        return read_xyz_bin(path)
    if name.endswith(".ply"):
        return read_ply(path)
    raise IOFailure(f"{path}: unknown point-cloud extension")


def write_points(path, points) -> None:
    if str(path).endswith(".ply"):
        write_ply(path, points)
    else:
        write_xyz_bin(path, points)


def read_descriptors(path) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise IOFailure(f"{path}: truncated descriptor header")
    count, dim = np.frombuffer(raw[:8], dtype="<u4")
    expected = 8 + 4 * int(count) * int(dim)
    if len(raw) != expected:
        raise IOFailure(f"{path}: expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw[8:], dtype="<f4").reshape(int(count), int(dim)).astype(float)


def write_descriptors(path, descriptors) -> None:
    d = np.ascontiguousarray(np.atleast_2d(descriptors), dtype="<f4")
    header = np.array(d.shape, dtype="<u4").tobytes()
    with atomic_write(path, "wb") as fh:
        fh.write(header + d.tobytes())


# pose matrices

def _matrix_to_json(t: RigidTransform) -> list:
    return t.as_matrix().tolist()


def _matrix_from_json(m, where: str) -> RigidTransform:
    arr = np.asarray(m, dtype=float)
    if arr.shape != (4, 4):
        raise GraphFormatError(f"{where}: pose must be a 4x4 matrix")
    return RigidTransform.from_matrix(arr)


# graph file

def graph_to_dict(g: PoseGraph) -> dict:
    scans = []
    for s in g.scans:
        scans.append({
            "id": s.id,
            "points": s.points_path,
            "descriptors": s.descriptors_path,
            "feature": None if s.global_feature is None else s.global_feature.tolist(),
        })
    edges = []
    for e in g.edges:
        edges.append({
            "i": e.i,
            "j": e.j,
            "overlap_score": e.overlap_score,
            "pose": None if e.relative_pose is None else _matrix_to_json(e.relative_pose),
            "inlier_count": e.inlier_count,
            "weight": e.weight,
        })
    return {"version": FORMAT_VERSION, "scans": scans, "edges": edges}


def graph_from_dict(doc: dict, base_dir=None, load_points: bool = True,
                    load_descriptors: bool = False) -> PoseGraph:
    if doc.get("version") != FORMAT_VERSION:
        raise GraphFormatError(f"unsupported graph version {doc.get('version')!r}")
    base = Path(base_dir) if base_dir is not None else Path(".")
    scans = []
    try:
        for entry in doc["scans"]:
            pts_path, desc_path = entry.get("points"), entry.get("descriptors")
            pts = desc = None
            if pts_path and load_points:
                pts = read_points(base / pts_path)
            if load_descriptors:
                if not desc_path:
                    raise IOFailure(f"scan {entry['id']}: no descriptor file recorded")
                desc = read_descriptors(base / desc_path)
            feat = entry.get("feature")
            scans.append(Scan(int(entry["id"]), pts, desc,
                              None if feat is None else np.asarray(feat, dtype=float),
                              pts_path, desc_path))
        edges = []
        for entry in doc["edges"]:
            where = f"edge ({entry['i']}, {entry['j']})"
            pose = entry.get("pose")
            count = entry.get("inlier_count")
            weight = entry.get("weight")
            edges.append(Edge(
                int(entry["i"]), int(entry["j"]), float(entry["overlap_score"]),
                None if pose is None else _matrix_from_json(pose, where),
                None if count is None else int(count),
                None if weight is None else float(weight),
            ))
    except (KeyError, TypeError) as exc:
        raise GraphFormatError(f"malformed graph document: {exc!r}") from exc
    return PoseGraph(scans, edges)


def default_scan_paths(scan_id: int) -> tuple[str, str]:
    return f"scans/scan_{scan_id:04d}.xyz.bin", f"scans/scan_{scan_id:04d}.desc.bin"


def save_graph(g: PoseGraph, path, write_scans: bool = True) -> PoseGraph:
    """Write the graph file, plus point/descriptor files for in-memory scans.

    Scans without a recorded path get one under ``scans/`` next to the graph
    file. Returns the graph with those paths filled in.
    """
    path = Path(path)
    scans = []
    for s in g.scans:
        pts_path, desc_path = s.points_path, s.descriptors_path
        if write_scans and s.points is not None:
            pts_path = pts_path or default_scan_paths(s.id)[0]
            write_points(path.parent / pts_path, s.points)
        if write_scans and s.descriptors is not None:
            desc_path = desc_path or default_scan_paths(s.id)[1]
            write_descriptors(path.parent / desc_path, s.descriptors)
        scans.append(Scan(s.id, s.points, s.descriptors, s.global_feature, pts_path, desc_path))
    out = PoseGraph(scans, g.edges)
    with atomic_write(path) as fh:
        json.dump(graph_to_dict(out), fh, indent=1)
        fh.write("\n")
    return out


def load_graph(path, load_points: bool = True, load_descriptors: bool = False) -> PoseGraph:
    path = Path(path)
    try:
        doc = json.loads(_read_bytes(path))
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{path}: invalid JSON ({exc})") from exc
    return graph_from_dict(doc, path.parent, load_points, load_descriptors)


# poses file

def save_poses(path, poses: Sequence[RigidTransform], ids: Optional[Sequence[int]] = None) -> None:
    ids = list(range(len(poses))) if ids is None else list(ids)
    doc = {"version": FORMAT_VERSION,
           "poses": [{"id": int(i), "matrix": _matrix_to_json(p)} for i, p in zip(ids, poses)]}
    with atomic_write(path) as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_poses(path) -> list[RigidTransform]:
    """Poses ordered by id; ids must be exactly ``0..n-1``."""
    try:
        doc = json.loads(_read_bytes(path))
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{path}: invalid JSON ({exc})") from exc
    if doc.get("version") != FORMAT_VERSION:
        raise GraphFormatError(f"{path}: unsupported poses version {doc.get('version')!r}")
    entries = sorted(doc.get("poses", []), key=lambda e: e["id"])
    if [e["id"] for e in entries] != list(range(len(entries))):
        raise GraphFormatError(f"{path}: pose ids must be 0..n-1")
    return [_matrix_from_json(e["matrix"], f"{path} pose {e['id']}") for e in entries]
