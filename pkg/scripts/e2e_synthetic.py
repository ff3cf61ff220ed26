"""End-to-end synthetic loop closure: seeded overlapping pairs plus cross-terrain negatives.

Builds both submaps of each pair, matches query against database, then
matches each query against the database of the next pair (an unrelated
terrain) as a negative.  Writes one JSON line per match and prints a summary.

    python scripts/e2e_synthetic.py --pairs 20 --out e2e.jsonl
"""
import argparse
import json
import math
import sys
import time

import numpy as np

from terrain_loop import synth
from terrain_loop.config import BuildConfig, MatchConfig
from terrain_loop.geometry import angle_difference
from terrain_loop.ingest import Submap
from terrain_loop.pipeline import SubmapDatabase


def run(n_pairs=20, seed0=0, config=BuildConfig(), match=MatchConfig(), log=print):
    db = SubmapDatabase(config)
    truths = []
    t0 = time.perf_counter()
    for k in range(n_pairs):
        pair = synth.random_pair(seed0 + k)
        db.build_many([Submap(2 * k, pair.submap_q.cloud, pair.submap_q.world_pose),
                       Submap(2 * k + 1, pair.submap_d.cloud, pair.submap_d.world_pose)])
        truths.append(pair)
        log(f"built pair {k} ({time.perf_counter() - t0:.0f}s)")
    rows = []
    for k, pair in enumerate(truths):
        res = db.match_pair(2 * k, 2 * k + 1, match)
        T = pair.true_transform
        rows.append({
            "kind": "positive", "pair": k, "seed": seed0 + k, "overlap": pair.overlap_fraction,
            **res.record(2 * k, 2 * k + 1),
            "err_theta_deg": math.degrees(angle_difference(res.transform.theta, T.theta)),
            "err_t_m": float(np.hypot(res.transform.tx - T.tx, res.transform.ty - T.ty)),
        })
    for k in range(n_pairs):
        other = (k + 1) % n_pairs
        res = db.match_pair(2 * k, 2 * other + 1, match)
        rows.append({"kind": "negative", "pair": k, "against": other, **res.record(2 * k, 2 * other + 1)})
    return rows, time.perf_counter() - t0


def summarize(rows, max_deg=2.0, max_m=0.06, min_inliers=4):
    pos = [r for r in rows if r["kind"] == "positive"]
    neg = [r for r in rows if r["kind"] == "negative"]
    good = [r for r in pos if r["accepted"] and r["err_theta_deg"] <= max_deg and r["err_t_m"] <= max_m]
    false_acc = [r for r in neg if r["accepted"] and r["n"] >= min_inliers]
    return {"positives": len(pos), "accurate_accepts": len(good),
            "accepted": sum(r["accepted"] for r in pos), "negatives": len(neg),
            "negatives_accepted": len(false_acc)}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None)
    args = ap.parse_args(argv)
    rows, elapsed = run(args.pairs, args.seed)
    if args.out:
        with open(args.out, "w") as fh:
            for r in rows:
                fh.write(json.dumps(r) + "\n")
    for r in rows:
        if r["kind"] == "positive":
            print(f"pair {r['pair']:2d} overlap {r['overlap']:.2f} n={r['n']:3d} accepted={r['accepted']!s:5} "
                  f"dtheta={r['err_theta_deg']:.2f}deg dt={r['err_t_m']:.3f}m")
        else:
            print(f"neg  {r['pair']:2d}->{r['against']:2d} n={r['n']:3d} accepted={r['accepted']}")
    print(json.dumps(summarize(rows)), f"elapsed {elapsed:.0f}s")


if __name__ == "__main__":
    sys.exit(main())
