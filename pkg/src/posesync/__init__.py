"""Multiview point-cloud registration by IRLS pose synchronization with
history reweighting."""
from .errors import PoseSyncError
from .evaluation import MetricsReport, ecdf_report, evaluate, pose_errors, registration_recall
from .geometry import RigidTransform, angular_distance, fit_rigid, project_to_so3
from .irls import IrlsConfig, IrlsState, Reweighting, coefficient, init_weights, reweight, run_irls
from .pairwise import CorrespondenceSet, count_inliers, match_descriptors, ransac_register, register_edges
from .pose_graph import (Edge, PoseGraph, Scan, build_sparse_graph, connected_components,
                         geometric_overlap_oracle, overlap_score)
from .sync import SyncProblem, SyncSolution, rotation_synchronize, synchronize, translation_synchronize
from .synth import SceneSpec, generate_scene, inject_edges

__version__ = "0.1.0"
