"""Precision-recall on a synthetic trajectory database.

Samples a chain of 4 m submaps along a random walk over one terrain, runs
the CLI-equivalent build / all-pairs match / IoU labeling, and writes the PR
curve over the inlier threshold.

    python scripts/pr_sweep.py --submaps 8 --out-dir pr_run
"""
import argparse
import json
import math
from pathlib import Path

import numpy as np

from terrain_loop import evaluation, synth
from terrain_loop.config import Config
from terrain_loop.pipeline import SubmapDatabase


def trajectory_submaps(n, seed=0, step=(1.0, 2.5), window=4.0, n_points=5000):
    spec = synth.TerrainSpec(extent=(16.0, 16.0), bump_count=320, seed=seed)
    terrain = synth.generate_terrain(spec)
    rng = np.random.default_rng([seed, 0x5B])
    pos, heading = np.array([5.0, 5.0]), float(rng.uniform(-math.pi, math.pi))
    out = []
    for i in range(n):
        w = synth.Window(tuple(pos), float(rng.uniform(-math.pi, math.pi)), (window, window))
        out.append(synth.sample_submap(terrain, w, n_points, spec.noise_sigma, seed=int(rng.integers(2**31)), id=i))
        heading += float(rng.normal(scale=0.8))
        pos = np.clip(pos + rng.uniform(*step) * np.array([math.cos(heading), math.sin(heading)]), 3, 13)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--submaps", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--iou-threshold", type=float, default=0.3)
    ap.add_argument("--out-dir", default="pr_run")
    args = ap.parse_args(argv)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = Config()
    subs = trajectory_submaps(args.submaps, args.seed)
    db = SubmapDatabase(cfg.build)
    for s in subs:
        db.build_entry(s)
        print(f"built {s.id}: {len(db.entries[s.id].keypoints)} keypoints", flush=True)
    results = db.match_all_pairs(cfg.match)
    with open(out / "results.jsonl", "w") as fh:
        for q, d, r in results:
            fh.write(json.dumps(r.record(q, d)) + "\n")
    labels = evaluation.label_pairs(subs, args.iou_threshold)
    points = evaluation.precision_recall(results, labels, cfg.eval.thresholds)
    evaluation.write_labels_csv(labels, out / "labels.csv")
    evaluation.write_pr_csv(points, out / "pr.csv")
    print(f"{sum(l.is_true for l in labels)} true pairs of {len(labels)}")
    for p in points:
        print(f"n>={p.threshold:2d}  P={p.precision:.3f}  R={p.recall:.3f}  tp={p.tp} fp={p.fp} fn={p.fn}")


if __name__ == "__main__":
    main()
