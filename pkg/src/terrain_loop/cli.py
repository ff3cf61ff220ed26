"""Command-line interface: ``terrain-loop build|match|eval|synth``.

Exit codes: 0 success, 1 internal error, 2 input error, 3 unknown submap id,
4 labeling error.
"""
from __future__ import annotations

import functools
import json
import logging
import math
import os
import sys
from pathlib import Path

import click

from . import evaluation, ingest, synth
from .config import Config, config_hash, load_config
from .errors import (ConfigError, EmptyCloud, MissingPose, NoOverlap, ParseError,
                     TerrainLoopError, UnknownId, UnlabeledPair)
from .geometry import Se2Transform, WorldPose
from .ingest import Submap
from .pipeline import SubmapDatabase, load_submaps, read_manifest
from .registration import MatchResult, classify

log = logging.getLogger("terrain_loop")

EXIT_INTERNAL, EXIT_INPUT, EXIT_UNKNOWN_ID, EXIT_LABEL = 1, 2, 3, 4


def _fail(code, message):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def exit_codes(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except UnknownId as exc:
            _fail(EXIT_UNKNOWN_ID, exc)
        except (UnlabeledPair, MissingPose) as exc:
            _fail(EXIT_LABEL, exc)
        except (ConfigError, ParseError, EmptyCloud, NoOverlap, FileNotFoundError, ValueError) as exc:
            _fail(EXIT_INPUT, exc)
        except OSError as exc:
            _fail(EXIT_INPUT, exc)
        except TerrainLoopError as exc:
            _fail(EXIT_INTERNAL, exc)
    return wrapper


def _threads(value):
    if value is not None:
        return value
    env = os.environ.get("TERRAIN_LOOP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"TERRAIN_LOOP_THREADS must be an integer, got {env!r}")
    return None


def _config(path, threads=None) -> Config:
    cfg = load_config(path)
    threads = _threads(threads)
    if threads is not None:
        cfg = Config(cfg.build, cfg.match, cfg.eval, threads).validate()
    return cfg


def _read_poses(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid poses file {path}: {exc}") from exc
    return {str(k): WorldPose.from_dict(v) for k, v in data.items()}


@click.group()
@click.option("-v", "--verbose", count=True, help="Log stage timings (-v) or debug output (-vv).")
def main(verbose):
    """Loop-closure detection between terrain submaps via GP gradient maps."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


# --------------------------------------------------------------------------- build

@main.command()
@click.argument("files", nargs=-1, required=True)
@click.option("--out", "out", required=True, type=click.Path(file_okay=False), help="Database directory.")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--resolution", type=float, default=None, help="Raster resolution in m/pixel (default 0.03).")
@click.option("--kernel", type=click.Choice(["literal", "squared"]), default=None,
              help="Length parameterization: exp(-d^2/(2 l)) or exp(-d^2/(2 l^2)).")
@click.option("--sigma-z", type=float, default=None, help="Initial observation noise std (m).")
@click.option("--tau-v", "tau_v_rel", type=float, default=None, help="Variance mask, fraction of prior variance.")
@click.option("--downsample", "downsample_target", type=int, default=None)
@click.option("--fit-max-points", type=int, default=None)
@click.option("--no-fit", is_flag=True, help="Keep initial hyperparameters.")
@click.option("--seed", type=int, default=None)
@click.option("--poses", "poses_path", type=click.Path(dir_okay=False), default=None,
              help="JSON of world poses keyed by file stem or id.")
@click.option("--dump-rasters", is_flag=True, help="Also write 16-bit PGM previews.")
@click.option("--threads", type=int, default=None)
@exit_codes
def build(files, out, config_path, resolution, kernel, sigma_z, tau_v_rel, downsample_target,
          fit_max_points, no_fit, seed, poses_path, dump_rasters, threads):
    """Build database entries from point-cloud files (.xyz, .csv, .ply)."""
    for f in files:
        if not Path(f).is_file():
            raise FileNotFoundError(f"input file not found: {f}")
    cfg = _config(config_path, threads).with_overrides(
        "build", resolution=resolution, kernel=kernel, sigma_z=sigma_z, tau_v_rel=tau_v_rel,
        downsample_target=downsample_target, fit_max_points=fit_max_points, seed=seed,
        fit_hyperparameters=False if no_fit else None)
    out = Path(out)
    if (out / "manifest.json").exists():
        db = SubmapDatabase.load(out)
        if config_hash(db.config) != config_hash(cfg.build):
            raise ConfigError(f"{out} was built with a different configuration")
    else:
        db = SubmapDatabase(cfg.build)
    poses = _read_poses(poses_path)
    next_id = max(db.ids, default=-1) + 1
    submaps = []
    for i, f in enumerate(files):
        sid = next_id + i
        stem = Path(f).stem
        pose = poses.get(str(sid), poses.get(stem))
        submaps.append(Submap(sid, ingest.read_pointcloud(f), pose, stem))
    db.build_many(submaps, threads=cfg.threads)
    db.save(out)
    if dump_rasters:
        from .raster import write_pgm
        for s in submaps:
            for ch in ("grad", "var"):
                write_pgm(db.entries[s.id].gmap, ch, out / f"{s.id:04d}" / f"preview_{ch}")
    for s in submaps:
        click.echo(f"{s.id}\t{s.name}\t{len(db.entries[s.id].keypoints)} keypoints")


# --------------------------------------------------------------------------- match

@main.command()
@click.argument("database", type=click.Path(file_okay=False))
@click.option("--query", "query_id", type=int, default=None, help="Match one submap id against the rest.")
@click.option("--all-pairs", is_flag=True, help="Match every unordered pair once.")
@click.option("--out", "out", type=click.Path(dir_okay=False), default=None, help="JSON-lines output (default stdout).")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--min-inliers", type=int, default=None, help="Mark records accepted only when n >= this.")
@click.option("--iterations", "max_iterations", type=int, default=None)
@click.option("--inlier-dist", type=float, default=None, help="Inlier distance in metres.")
@click.option("--ssd-max", type=float, default=None)
@click.option("--ssd-mode", type=click.Choice(["weights", "count", "sum"]), default=None)
@click.option("--ratio", type=float, default=None, help="Lowe ratio; see --no-ratio.")
@click.option("--no-ratio", is_flag=True, help="Plain nearest-neighbour matching.")
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=None)
@exit_codes
def match(database, query_id, all_pairs, out, config_path, min_inliers, max_iterations, inlier_dist,
          ssd_max, ssd_mode, ratio, no_ratio, seed, threads):
    """Match submaps of a built database and write one JSON record per pair."""
    if (query_id is None) == (not all_pairs):
        raise ConfigError("give exactly one of --query ID or --all-pairs")
    cfg = _config(config_path, threads).with_overrides(
        "match", max_iterations=max_iterations, inlier_dist=inlier_dist, ssd_max=ssd_max,
        ssd_mode=ssd_mode, ratio=ratio, seed=seed)
    if no_ratio:
        cfg = Config(cfg.build, _replace(cfg.match, ratio=None), cfg.eval, cfg.threads)
    db = SubmapDatabase.load(database)
    if config_path is not None and config_hash(cfg.build) != config_hash(db.config):
        raise ConfigError("config build section does not match the database manifest")
    if all_pairs:
        results = db.match_all_pairs(cfg.match, threads=cfg.threads)
    else:
        results = db.match_query(query_id, cfg.match, threads=cfg.threads)
    lines = []
    for q, d, r in results:
        rec = r.record(q, d)
        if min_inliers is not None:
            rec["accepted"] = classify(r, min_inliers)
        lines.append(json.dumps(rec, sort_keys=False))
    text = "".join(line + "\n" for line in lines)
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)


def _replace(obj, **kw):
    import dataclasses
    return dataclasses.replace(obj, **kw)


def read_results(path) -> list[tuple[int, int, MatchResult]]:
    out = []
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            r = MatchResult(Se2Transform(rec["theta_rad"], rec["tx_m"], rec["ty_m"]),
                            int(rec["n"]), rec["h"], bool(rec["accepted"]))
            out.append((int(rec["query_id"]), int(rec["db_id"]), r))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"bad result record: {exc}", offset=f"{path} line {line_no}") from None
    return out


# --------------------------------------------------------------------------- eval

@main.command("eval")
@click.argument("results", type=click.Path(dir_okay=False))
@click.option("--db", "database", required=True, type=click.Path(file_okay=False),
              help="Database whose clouds define the overlap boxes.")
@click.option("--poses", "poses_path", type=click.Path(dir_okay=False), default=None,
              help="World poses keyed by id or name; overrides poses stored in the database.")
@click.option("--iou-threshold", type=float, default=None, help="True match when IoU exceeds this (default 0.3).")
@click.option("--sweep-min", type=int, default=None, help="Smallest inlier threshold (default 1).")
@click.option("--sweep-max", type=int, default=None, help="Largest inlier threshold (default 20).")
@click.option("--exclude-consecutive", is_flag=True, default=None)
@click.option("--out", "out", type=click.Path(dir_okay=False), default=None, help="PR CSV (default stdout).")
@click.option("--labels-out", type=click.Path(dir_okay=False), default=None)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@exit_codes
def eval_cmd(results, database, poses_path, iou_threshold, sweep_min, sweep_max, exclude_consecutive, out,
             labels_out, config_path):
    """Label pairs by bounding-box IoU and sweep the inlier threshold."""
    cfg = _config(config_path).with_overrides(
        "eval", iou_threshold=iou_threshold, sweep_min=sweep_min, sweep_max=sweep_max,
        exclude_consecutive=exclude_consecutive or None)
    manifest = read_manifest(database)
    if config_path is not None and config_hash(cfg.build) != manifest["config_hash"]:
        raise ConfigError("config build section does not match the database manifest")
    submaps = load_submaps(database)
    poses = _read_poses(poses_path)
    if poses:
        submaps = [Submap(s.id, s.cloud, poses.get(str(s.id), poses.get(s.name, s.world_pose)), s.name)
                   for s in submaps]
    labels = evaluation.label_pairs(submaps, cfg.eval.iou_threshold, cfg.eval.exclude_consecutive)
    recs = read_results(results)
    if cfg.eval.exclude_consecutive:
        recs = [r for r in recs if abs(r[0] - r[1]) != 1]
    points = evaluation.precision_recall(recs, labels, cfg.eval.thresholds)
    if labels_out:
        evaluation.write_labels_csv(labels, labels_out)
    if out:
        evaluation.write_pr_csv(points, out)
    else:
        click.echo("threshold,precision,recall,tp,fp,fn")
        for p in points:
            click.echo(f"{p.threshold},{p.precision!r},{p.recall!r},{p.tp},{p.fp},{p.fn}")


# --------------------------------------------------------------------------- synth

@main.command("synth")
@click.option("--out", "out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=0)
@click.option("--overlap", type=float, default=0.5, help="Overlap fraction of the two windows.")
@click.option("--yaw", type=float, default=0.0, help="Query yaw relative to the database, degrees.")
@click.option("--direction", type=float, default=0.0, help="Direction of the window offset, degrees.")
@click.option("--points", type=int, default=5000)
@click.option("--noise", type=float, default=0.02, help="Vertical noise std (m).")
@click.option("--window", type=float, default=4.0, help="Window side (m).")
@click.option("--extent", type=float, default=8.0, help="Terrain side (m).")
@click.option("--bumps", type=int, default=synth.TerrainSpec().bump_count)
@click.option("--bump-amplitude", type=(float, float), default=synth.TerrainSpec().bump_amplitude)
@click.option("--bump-radius", type=(float, float), default=synth.TerrainSpec().bump_radius)
@click.option("--base-amplitude", type=float, default=synth.TerrainSpec().base_amplitude)
@click.option("--base-correlation", type=float, default=synth.TerrainSpec().base_correlation)
@click.option("--format", "fmt", type=click.Choice(["xyz", "ply", "csv"]), default="xyz")
@exit_codes
def synth_cmd(out, seed, overlap, yaw, direction, points, noise, window, extent, bumps, bump_amplitude,
              bump_radius, base_amplitude, base_correlation, fmt):
    """Write a synthetic overlapping submap pair with ground truth."""
    if points < 1 or window <= 0:
        raise ConfigError("--points and --window must be positive")
    spec = synth.TerrainSpec(extent=(extent, extent), base_amplitude=base_amplitude,
                             base_correlation=base_correlation, bump_count=bumps,
                             bump_amplitude=tuple(bump_amplitude), bump_radius=tuple(bump_radius),
                             noise_sigma=noise, seed=seed)
    terrain = synth.generate_terrain(spec)
    win_d = synth.Window((extent / 2, extent / 2), 0.0, (window, window))
    win_q = synth.window_for_overlap(win_d, overlap, math.radians(yaw), math.radians(direction))
    pair = synth.sample_pair(terrain, win_q, win_d, points, noise, seed=seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ingest.write_pointcloud(pair.submap_q.cloud, out / f"query.{fmt}", fmt)
    ingest.write_pointcloud(pair.submap_d.cloud, out / f"database.{fmt}", fmt)
    truth = pair.record()
    (out / "truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    poses = {"query": pair.submap_q.world_pose.as_dict(), "database": pair.submap_d.world_pose.as_dict()}
    (out / "poses.json").write_text(json.dumps(poses, indent=2, sort_keys=True) + "\n")
    click.echo(f"theta={truth['theta']!r} tx={truth['tx']!r} ty={truth['ty']!r} "
               f"overlap={truth['overlap_fraction']!r}")


if __name__ == "__main__":
    main()
