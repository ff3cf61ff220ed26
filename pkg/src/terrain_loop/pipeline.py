"""Submap database: build gradient maps and features, match queries against the rest.

On disk a database is a directory with ``manifest.json`` and one
subdirectory per submap id::

    db/
      manifest.json
      0003/
        entry.json          id, name, world pose, hyperparameters, GP offset
        cloud.ply           input cloud (binary little-endian doubles)
        model_xy.npy        GP training inputs (after downsampling)
        model_alpha.npy     (K + sigma_z^2 I)^-1 z
        grad.f32/.json      gradient-magnitude raster + sidecar
        var.f32/.json       variance raster + sidecar
        keypoints.csv
        descriptors.npy
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import features, gp, ingest, raster
from .config import BuildConfig, MatchConfig, config_hash
from .errors import DuplicateId, TerrainLoopError, UnknownId
from .geometry import WorldPose
from .ingest import Submap
from .registration import MatchResult, ransac_match

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


@dataclass
class Entry:
    submap: Submap
    hyper: gp.Hyperparams
    gmap: raster.GradientMap
    keypoints: list
    descriptors: np.ndarray
    train_xy: np.ndarray
    alpha: np.ndarray
    z_offset: float = 0.0
    model: Optional[gp.GpModel] = None


def _annotate(exc: Exception, submap_id, stage: str) -> Exception:
    if exc.args:
        exc.args = (f"submap {submap_id} [{stage}]: {exc.args[0]}",) + tuple(exc.args[1:])
    exc.submap_id = submap_id
    return exc


def build_artifacts(submap: Submap, config: BuildConfig, keep_model: bool = False) -> Entry:
    """Downsample, fit, train, render, detect and describe one submap."""
    timings = {}
    stage = "downsample"
    try:
        t = time.perf_counter()
        cloud = ingest.downsample(submap.cloud, config.downsample_target, config.seed)
        timings[stage] = time.perf_counter() - t

        stage = "fit"
        t = time.perf_counter()
        hyper = gp.initial_hyperparams(cloud, config.sigma_z, config.kernel, config.length_init)
        if config.fit_hyperparameters and cloud.count >= 3:
            hyper = gp.fit_hyperparameters(cloud, hyper, max_points=config.fit_max_points, seed=config.seed)
        timings[stage] = time.perf_counter() - t

        stage = "train"
        t = time.perf_counter()
        model = gp.train(cloud, hyper)
        timings[stage] = time.perf_counter() - t

        stage = "render"
        t = time.perf_counter()
        gmap = raster.render(model, ingest.bounding_box(cloud), config.resolution, max_pixels=config.max_pixels)
        timings[stage] = time.perf_counter() - t

        stage = "features"
        t = time.perf_counter()
        kps = features.detect(gmap, config.detector())
        desc = features.describe_all(gmap, kps)
        timings[stage] = time.perf_counter() - t
    except TerrainLoopError as exc:
        raise _annotate(exc, submap.id, stage)
    except ValueError as exc:
        raise _annotate(exc, submap.id, stage)
    log.info("submap %s built: %s, %d keypoints", submap.id,
             " ".join(f"{k}={v:.2f}s" for k, v in timings.items()), len(kps))
    return Entry(submap, hyper, gmap, kps, desc, model.train_xy, model.alpha, model.z_offset,
                 model if keep_model else None)


class SubmapDatabase:
    def __init__(self, config: BuildConfig = BuildConfig()):
        config.validate()
        self.config = config
        self.entries: dict[int, Entry] = {}

    def __contains__(self, submap_id):
        return submap_id in self.entries

    def __len__(self):
        return len(self.entries)

    @property
    def ids(self) -> list[int]:
        return sorted(self.entries)

    def build_entry(self, submap: Submap, keep_model: bool = False) -> Entry:
        if submap.id in self.entries:
            raise DuplicateId(f"submap id {submap.id} already in database")
        entry = build_artifacts(submap, self.config, keep_model)
        self.entries[submap.id] = entry
        return entry

    def build_many(self, submaps: Sequence[Submap], threads: int = 1) -> None:
        ids = [s.id for s in submaps]
        dup = {i for i in ids if ids.count(i) > 1} | (set(ids) & set(self.entries))
        if dup:
            raise DuplicateId(f"duplicate submap ids: {sorted(dup)}")
        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            built = list(pool.map(lambda s: build_artifacts(s, self.config), submaps))
        for s, e in zip(submaps, built):
            self.entries[s.id] = e

    def match_pair(self, query_id: int, db_id: int, config: MatchConfig = MatchConfig()) -> MatchResult:
        for i in (query_id, db_id):
            if i not in self.entries:
                raise UnknownId(f"unknown submap id {i}")
        q, d = self.entries[query_id], self.entries[db_id]
        assoc = features.match(q.keypoints, q.descriptors, d.keypoints, d.descriptors,
                               q.gmap, d.gmap, ratio=config.ratio)
        return ransac_match(assoc, q.gmap, d.gmap, config.ransac())

    def match_query(self, query_id: int, config: MatchConfig = MatchConfig(),
                    threads: int = 1) -> list[tuple[int, int, MatchResult]]:
        """Match one query against every other entry, in ascending id order."""
        if query_id not in self.entries:
            raise UnknownId(f"unknown submap id {query_id}")
        others = [i for i in self.ids if i != query_id]
        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            results = list(pool.map(lambda d: self.match_pair(query_id, d, config), others))
        return [(query_id, d, r) for d, r in zip(others, results)]

    def match_all_pairs(self, config: MatchConfig = MatchConfig(),
                        threads: int = 1) -> list[tuple[int, int, MatchResult]]:
        """Every unordered pair once; the newer (larger) id acts as the query."""
        ids = self.ids
        pairs = [(q, d) for i, q in enumerate(ids) for d in ids[:i]]
        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            results = list(pool.map(lambda p: self.match_pair(p[0], p[1], config), pairs))
        return [(q, d, r) for (q, d), r in zip(pairs, results)]

    # ------------------------------------------------------------------ persistence

    def save(self, root) -> None:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        listing = []
        for sid in self.ids:
            listing.append(_save_entry(self.entries[sid], root))
        manifest = {
            "format": 1,
            "config_hash": config_hash(self.config),
            "config": self.config.__dict__,
            "entries": listing,
        }
        (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, root) -> "SubmapDatabase":
        root = Path(root)
        manifest = read_manifest(root)
        config = BuildConfig(**manifest["config"])
        if config_hash(config) != manifest["config_hash"]:
            raise TerrainLoopError(f"config hash mismatch in {root / MANIFEST}")
        db = cls(config)
        for item in manifest["entries"]:
            entry = _load_entry(root / item["dir"])
            db.entries[entry.submap.id] = entry
        return db


def read_manifest(root) -> dict:
    path = Path(root) / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no database manifest at {path}")
    return json.loads(path.read_text())


def entry_dirname(submap_id: int) -> str:
    return f"{submap_id:04d}"


def _save_entry(entry: Entry, root: Path) -> dict:
    sid = entry.submap.id
    d = root / entry_dirname(sid)
    d.mkdir(parents=True, exist_ok=True)
    files = {
        "cloud": "cloud.ply",
        "grad": "grad.f32",
        "var": "var.f32",
        "keypoints": "keypoints.csv",
        "descriptors": "descriptors.npy",
        "model_xy": "model_xy.npy",
        "model_alpha": "model_alpha.npy",
    }
    ingest.write_pointcloud(entry.submap.cloud, d / files["cloud"], "ply")
    raster.write_raster(entry.gmap, "grad", d / "grad")
    raster.write_raster(entry.gmap, "var", d / "var")
    features.write_keypoints(entry.keypoints, d / files["keypoints"])
    np.save(d / files["descriptors"], entry.descriptors)
    np.save(d / files["model_xy"], entry.train_xy)
    np.save(d / files["model_alpha"], entry.alpha)
    meta = {
        "id": sid,
        "name": entry.submap.name,
        "world_pose": entry.submap.world_pose.as_dict() if entry.submap.world_pose else None,
        "hyper": entry.hyper.as_dict(),
        "z_offset": entry.z_offset,
        "keypoints": len(entry.keypoints),
        "files": files,
    }
    (d / "entry.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return {"id": sid, "name": entry.submap.name, "dir": d.name, "files": files}


def _load_entry(d: Path) -> Entry:
    meta = json.loads((d / "entry.json").read_text())
    files = meta["files"]
    cloud = ingest.read_pointcloud(d / files["cloud"], "ply")
    pose = WorldPose.from_dict(meta["world_pose"]) if meta["world_pose"] else None
    submap = Submap(meta["id"], cloud, pose, meta.get("name", ""))
    grad, gmeta = raster.read_raster(d / "grad")
    var, _ = raster.read_raster(d / "var")
    gmap = raster.GradientMap(tuple(gmeta["origin"]), gmeta["resolution"], grad, var, gmeta["prior_var"])
    hyper = gp.Hyperparams(**meta["hyper"])
    kps = features.read_keypoints(d / files["keypoints"])
    desc = np.load(d / files["descriptors"])
    return Entry(submap, hyper, gmap, kps, desc, np.load(d / files["model_xy"]),
                 np.load(d / files["model_alpha"]), meta["z_offset"])


def load_submaps(root) -> list[Submap]:
    """Submaps (clouds and poses) of a saved database, without rasters."""
    root = Path(root)
    out = []
    for item in read_manifest(root)["entries"]:
        meta = json.loads((root / item["dir"] / "entry.json").read_text())
        cloud = ingest.read_pointcloud(root / item["dir"] / meta["files"]["cloud"], "ply")
        pose = WorldPose.from_dict(meta["world_pose"]) if meta["world_pose"] else None
        out.append(Submap(meta["id"], cloud, pose, meta.get("name", "")))
    return out

