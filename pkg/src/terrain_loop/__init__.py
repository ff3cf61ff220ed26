"""Loop-closure detection between terrain submaps using Gaussian-process gradient maps.

Typical library use::

    from terrain_loop import SubmapDatabase, Submap, read_pointcloud

    db = SubmapDatabase()
    db.build_entry(Submap(0, read_pointcloud("a.xyz")))
    db.build_entry(Submap(1, read_pointcloud("b.xyz")))
    result = db.match_pair(1, 0)
"""
from .config import BuildConfig, Config, EvalConfig, MatchConfig, load_config
from .errors import *  # noqa: F401,F403
from .evaluation import OverlapLabel, PrPoint, box_iou, label_pairs, precision_recall
from .features import Association, DetectorParams, Keypoint, describe, detect, match
from .geometry import Se2Transform, WorldPose, wrap_angle
from .gp import (GpModel, Hyperparams, fit_hyperparameters, infer_elevation, infer_gradient,
                 log_marginal_likelihood, train)
from .ingest import PointCloud, Submap, downsample, parse_pointcloud, read_pointcloud, write_pointcloud
from .pipeline import Entry, SubmapDatabase
from .raster import GradientMap, render
from .registration import MatchResult, RansacParams, classify, estimate_se2, ransac_match, ssd_metric
from .synth import GroundTruthPair, TerrainSpec, generate_terrain, sample_pair

__version__ = "0.1.0"
