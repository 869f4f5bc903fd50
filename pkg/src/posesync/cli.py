"""Command-line front end: ``posesync {synth,graph,pairwise,sync,eval,pipeline}``.

Option values resolve as command-line flag, then the JSON ``--config``
file, then the built-in default. Errors raised by the library exit with
their class's code: 3 for I/O, 4 for a disconnected graph, 5 for a
degenerate solve, 6 for invalid input (2 is argparse's usage error).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

from . import __version__
from .errors import InvalidOption as InvalidInput, IOFailure, PoseSyncError
from .evaluation import RR_THRESHOLD, evaluate, evaluation_pairs, write_report
from .formats import load_graph, load_poses, save_graph, save_poses
from .irls import IrlsConfig, init_weights, run_irls, write_log_csv
from .pairwise import DEFAULT_RANSAC_ITERATIONS, DEFAULT_TAU, register_edges
from .pose_graph import DEFAULT_K, FeatureScore, OracleScore, build_sparse_graph, with_weights
from .sync import SyncProblem, synchronize
from .synth import SceneSpec, generate_scene, inject_edges

log = logging.getLogger("posesync")

DEFAULTS = {
    "k": DEFAULT_K,
    "tau": DEFAULT_TAU,
    "ransac_iters": DEFAULT_RANSAC_ITERATIONS,
    "iters": 50,
    "seed": 0,
    "ablate": [],
    "delta_scale": 1.0,
    "rr_threshold": RR_THRESHOLD,
    "mode": "irls",
    "threads": None,
    "n_scans": 20,
    "points_per_scan": 500,
    "extent": 4.0,
    "structure": "random_knn",
    "rotation_noise": 1.0,
    "translation_noise": 0.01,
    "outlier_fraction": 0.15,
    "outlier_min_angle": 60.0,
    "descriptor_dim": 32,
    "oracle_radius": 0.01,
    "eval_overlap": 0.3,
    "eval_radius": 0.05,
    "register": False,
}


def _resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset options from the config file, then from DEFAULTS."""
    config = {}
    if getattr(args, "config", None):
        try:
            config = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise IOFailure(f"cannot read config {args.config}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise InvalidInput(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(config, dict):
            raise InvalidInput("config file must hold a JSON object")
        config = {k.replace("-", "_"): v for k, v in config.items()}
    for key, default in DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, config.get(key, default))
    return args


def _threads(args) -> int:
    raw = args.threads if args.threads is not None else os.environ.get("POSESYNC_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise InvalidInput(f"thread count must be an integer, got {raw!r}") from exc
    if n < 1:
        raise InvalidInput(f"thread count must be >= 1, got {n}")
    return n


def _positive(args, *names) -> None:
    for name in names:
        value = getattr(args, name)
        if value is None or value <= 0:
            raise InvalidInput(f"--{name.replace('_', '-')} must be positive, got {value}")


def _scene_spec(args) -> SceneSpec:
    return SceneSpec(
        n_scans=args.n_scans, points_per_scan=args.points_per_scan, scene_extent=args.extent,
        overlap_structure=args.structure, rotation_noise_deg=args.rotation_noise,
        translation_noise_m=args.translation_noise, outlier_edge_fraction=args.outlier_fraction,
        outlier_min_angle_deg=args.outlier_min_angle, seed=args.seed,
        descriptor_dim=args.descriptor_dim, overlap_radius=args.oracle_radius,
    )


def _irls_config(args) -> IrlsConfig:
    return IrlsConfig.ablated(args.ablate or [], iterations=args.iters,
                              delta_scale=args.delta_scale)


# stages shared by the subcommands and the pipeline

def stage_synth(args, out_dir: Path):
    spec = _scene_spec(args)
    scene = generate_scene(spec)
    graph, is_out = inject_edges(scene, args.k, spec)
    graph = save_graph(graph, out_dir / "graph.json")
    save_poses(out_dir / "gt_poses.json", scene.poses)
    log.info("synth: %d scans, %d edges (%d outliers) -> %s",
             graph.n, len(graph.edges), int(is_out.sum()), out_dir)
    return graph, list(scene.poses)


def stage_pairwise(args, graph_path: Path, out_path: Path):
    g = load_graph(graph_path, load_points=True, load_descriptors=True)
    g = register_edges(g, args.tau, args.ransac_iters, args.seed, threads=_threads(args))
    save_graph(g, out_path, write_scans=False)
    log.info("pairwise: registered %d edges -> %s", len(g.edges), out_path)
    return g


def stage_sync(args, g, poses_out: Path, log_out: Optional[Path] = None):
    if args.mode == "once":
        w0 = init_weights(g, IrlsConfig.ablated(args.ablate or []))
        problem = SyncProblem.from_edges(
            g.n, [(e.i, e.j, w, e.relative_pose) for e, w in zip(g.edges, w0)])
        poses = synchronize(problem).poses
        weights = w0
        state = None
    else:
        result = run_irls(g, _irls_config(args))
        poses, state = result.solution.poses, result.state
        weights = state.weights
        if log_out is not None:
            write_log_csv(log_out, state)
    save_poses(poses_out, poses)
    log.info("sync (%s): %d poses -> %s", args.mode, len(poses), poses_out)
    return poses, with_weights(g, weights), state


def stage_eval(args, g, pred, gt, out_dir: Path):
    if len(pred) != g.n or len(gt) != g.n:
        raise InvalidInput(f"pose counts (pred {len(pred)}, gt {len(gt)}) do not match "
                           f"the graph's {g.n} scans")
    pairs = evaluation_pairs(g, gt, args.eval_overlap, args.eval_radius)
    report = evaluate(pred, gt, pairs, args.rr_threshold)
    write_report(report, out_dir / "report.csv", out_dir / "summary.txt")
    log.info("eval: recall %.4f over %d pairs", report.recall, len(report.records))
    return report


# subcommands

def cmd_synth(args) -> int:
    _positive(args, "k")
    stage_synth(args, Path(args.out))
    return 0


def cmd_graph(args) -> int:
    _positive(args, "k")
    g = load_graph(args.graph, load_points=args.gt is not None)
    if args.gt is not None:
        source = OracleScore(load_poses(args.gt), args.oracle_radius)
    else:
        source = FeatureScore()
    out = build_sparse_graph(g.scans, args.k, source)
    save_graph(out, args.out or args.graph, write_scans=False)
    return 0


def cmd_pairwise(args) -> int:
    _positive(args, "tau", "ransac_iters")
    stage_pairwise(args, Path(args.graph), Path(args.out or args.graph))
    return 0


def cmd_sync(args) -> int:
    _positive(args, "iters", "delta_scale")
    g = load_graph(args.graph, load_points=False)
    _, weighted, _ = stage_sync(args, g, Path(args.out), Path(args.log) if args.log else None)
    if args.graph_out:
        save_graph(weighted, args.graph_out, write_scans=False)
    return 0


def cmd_eval(args) -> int:
    _positive(args, "rr_threshold")
    g = load_graph(args.graph, load_points=True)
    report = stage_eval(args, g, load_poses(args.pred), load_poses(args.gt), Path(args.out_dir))
    sys.stdout.write(report.summary())
    return 0


def cmd_pipeline(args) -> int:
    _positive(args, "k", "tau", "ransac_iters", "iters", "delta_scale", "rr_threshold")
    out = Path(args.out)
    gt = None
    if args.input_graph:
        graph_path = Path(args.input_graph)
        if args.gt:
            gt = load_poses(args.gt)
    else:
        _, gt = stage_synth(args, out)
        graph_path = out / "graph.json"
    g = load_graph(graph_path, load_points=False)
    if args.register or any(e.relative_pose is None for e in g.edges):
        registered = out / "graph_registered.json"
        stage_pairwise(args, graph_path, registered)
        graph_path = registered
        g = load_graph(graph_path, load_points=False)
    _, weighted, _ = stage_sync(args, g, out / "poses.json", out / "irls_log.csv")
    save_graph(weighted, out / "graph_final.json", write_scans=False)
    if gt is not None:
        g = load_graph(graph_path, load_points=True)
        report = stage_eval(args, g, load_poses(out / "poses.json"), gt, out)
        sys.stdout.write(report.summary())
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with option defaults")
    p.add_argument("--threads", type=int, help="worker cap (falls back to POSESYNC_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_synth_opts(p) -> None:
    p.add_argument("--n-scans", type=int)
    p.add_argument("--points-per-scan", type=int)
    p.add_argument("--extent", type=float, help="scene extent in meters")
    p.add_argument("--structure", choices=["ring", "random_knn"])
    p.add_argument("--rotation-noise", type=float, help="inlier rotation noise, degrees")
    p.add_argument("--translation-noise", type=float, help="inlier translation noise, meters")
    p.add_argument("--outlier-fraction", type=float)
    p.add_argument("--outlier-min-angle", type=float, help="degrees")
    p.add_argument("--descriptor-dim", type=int)
    p.add_argument("--oracle-radius", type=float, help="overlap oracle radius, meters")
    p.add_argument("--k", type=int, help="partners per scan in the sparse graph")
    p.add_argument("--seed", type=int)


def _add_sync_opts(p) -> None:
    p.add_argument("--mode", choices=["once", "irls"])
    p.add_argument("--iters", type=int, help="IRLS iterations M")
    p.add_argument("--ablate", nargs="+", choices=["s", "r", "hr", "inc"])
    p.add_argument("--delta-scale", type=float, help="factor on residuals (radians) in the reweighting")


def _add_eval_opts(p) -> None:
    p.add_argument("--rr-threshold", type=float, help="registration recall threshold, meters")
    p.add_argument("--eval-overlap", type=float, help="true overlap that makes a pair evaluated")
    p.add_argument("--eval-radius", type=float, help="neighbor radius for true overlap, meters")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="posesync", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene and pose graph")
    _add_common(p)
    _add_synth_opts(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("graph", help="build the top-k sparse graph over a graph file's scans")
    _add_common(p)
    p.add_argument("--graph", required=True, help="graph file whose scans are used")
    p.add_argument("--k", type=int)
    p.add_argument("--gt", help="ground-truth poses: score with the geometric oracle")
    p.add_argument("--oracle-radius", type=float)
    p.add_argument("--out", help="output graph file (default: overwrite --graph)")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("pairwise", help="RANSAC relative poses and inlier counts per edge")
    _add_common(p)
    p.add_argument("--graph", required=True)
    p.add_argument("--tau", type=float, help="inlier threshold, meters")
    p.add_argument("--iters", dest="ransac_iters", type=int, help="RANSAC iterations")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output graph file (default: overwrite --graph)")
    p.set_defaults(func=cmd_pairwise)

    p = sub.add_parser("sync", help="synchronize global poses")
    _add_common(p)
    p.add_argument("--graph", required=True)
    _add_sync_opts(p)
    p.add_argument("--log", help="IRLS log CSV")
    p.add_argument("--out", required=True, help="output poses file")
    p.add_argument("--graph-out", help="also write the graph with final weights")
    p.set_defaults(func=cmd_sync)

    p = sub.add_parser("eval", help="compare predicted poses against ground truth")
    _add_common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--graph", required=True)
    _add_eval_opts(p)
    p.add_argument("--out-dir", default=".", help="where report.csv and summary.txt go")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="synth (or input graph), pairwise, sync, eval")
    _add_common(p)
    _add_synth_opts(p)
    _add_sync_opts(p)
    _add_eval_opts(p)
    p.add_argument("--input-graph", help="use this graph instead of a synthetic scene")
    p.add_argument("--gt", help="ground-truth poses for --input-graph")
    p.add_argument("--register", action="store_true", default=None,
                   help="run pairwise registration even if edges carry poses")
    p.add_argument("--tau", type=float)
    p.add_argument("--ransac-iters", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(_resolve(args))
    except PoseSyncError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: [io] {exc}", file=sys.stderr)
        return IOFailure.exit_code


if __name__ == "__main__":
    sys.exit(main())
