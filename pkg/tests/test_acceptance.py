"""Acceptance criteria, one test each; a PASS/FAIL line per criterion is printed at the end of the run."""
import json
import math
import time

import numpy as np
import pytest
from click.testing import CliRunner

from terrain_loop import gp, synth
from terrain_loop.cli import main
from terrain_loop.config import BuildConfig, MatchConfig
from terrain_loop.evaluation import OverlapLabel, box_iou, label_pairs, precision_recall
from terrain_loop.geometry import Se2Transform, angle_difference
from terrain_loop.gp import Hyperparams
from terrain_loop.ingest import Submap, bounding_box
from terrain_loop.pipeline import SubmapDatabase
from terrain_loop.raster import GradientMap, render
from terrain_loop.registration import MatchResult, classify, estimate_se2, ssd_metric

from conftest import criterion, random_cloud
from oracles import dense_gp, naive_ssd, rect_iou


def test_01_gp_oracle_equivalence():
    with criterion(1, "GP inference equals dense-inverse oracle") as c:
        start = time.perf_counter()
        worst = 0.0
        rng = np.random.default_rng(2024)
        for i in range(50):
            n = int(rng.integers(1, 51))
            param = ("literal", "squared")[i % 2]
            cloud = random_cloud(n, seed=1000 + i)
            h = Hyperparams(float(rng.uniform(0.005, 2.0)),
                            float(rng.uniform(0.005, 0.1) if param == "literal" else rng.uniform(0.05, 0.4)),
                            float(rng.uniform(0.005, 0.2)), param)
            model = gp.train(cloud, h)
            q = rng.uniform(-0.2, 1.2, size=(10, 2))
            r = gp.predict(model, q)
            m, v, gx, gy = dense_gp(cloud.xy, cloud.z, q, h.sigma_k, h.denominator, h.sigma_z)
            for got, want in ((r["mean"], m), (r["var"], v), (r["dzdx"], gx), (r["dzdy"], gy)):
                worst = max(worst, float(np.max(np.abs(got - want))))
        elapsed = time.perf_counter() - start
        c.detail = f"(max abs error {worst:.2e}, {elapsed:.2f}s)"
        assert worst <= 1e-9
        assert elapsed < 10


def test_02_gradient_operator_vs_finite_differences():
    with criterion(2, "gradient operator matches central differences") as c:
        start = time.perf_counter()
        cloud = random_cloud(200, seed=7)
        model = gp.train(cloud, Hyperparams(0.01, 0.01, 0.02))
        q = np.random.default_rng(8).uniform(0.1, 0.9, size=(100, 2))
        r = gp.predict(model, q, variance=False)
        h = 1e-4
        mean = lambda pts: gp.predict(model, pts, variance=False, gradient=False)["mean"]
        fdx = (mean(q + [h, 0]) - mean(q - [h, 0])) / (2 * h)
        fdy = (mean(q + [0, h]) - mean(q - [0, h])) / (2 * h)
        err = max(np.max(np.abs(r["dzdx"] - fdx)), np.max(np.abs(r["dzdy"] - fdy)))
        elapsed = time.perf_counter() - start
        c.detail = f"(max abs error {err:.2e}, {elapsed:.2f}s)"
        assert err <= 1e-4
        assert elapsed < 10


def test_03_variance_bounds():
    with criterion(3, "posterior variance within [0, sigma_k], prior in the far field") as c:
        start = time.perf_counter()
        cloud = random_cloud(300, seed=3)
        h = Hyperparams(0.04, 0.01, 0.02)
        model = gp.train(cloud, h)
        q = np.random.default_rng(4).uniform(-0.5, 1.5, size=(10_000, 2))
        var = gp.predict(model, q, mean=False, gradient=False)["var"]
        far = gp.predict(model, q + 100.0, mean=False, gradient=False)["var"]
        elapsed = time.perf_counter() - start
        c.detail = f"(min {var.min():.2e}, max {var.max():.4f}, far-field gap {np.max(h.sigma_k - far):.1e}, {elapsed:.2f}s)"
        assert var.min() >= 0 and var.max() <= h.sigma_k + 1e-9
        assert np.all(np.abs(far - h.sigma_k) <= 1e-6 * h.sigma_k)
        assert elapsed < 5


def test_04_elevation_invariance():
    with criterion(4, "rendered gradient invariant to elevation offset") as c:
        pair = synth.random_pair(11, n_points=1500, window=2.0)
        cloud = pair.submap_q.cloud
        h = gp.initial_hyperparams(cloud)
        bbox = bounding_box(cloud)
        a = render(gp.train(cloud, h), bbox)
        b = render(gp.train(cloud.translated(dz=7.3), h), bbox)
        diff = float(np.max(np.abs(a.grad - b.grad)))
        c.detail = f"(max per-pixel change {diff:.1e} over {a.grad.size} pixels)"
        assert diff <= 1e-9


def test_05_se2_estimator():
    with criterion(5, "SE(2) estimator exact without noise, accurate with 0.01 m noise") as c:
        T = Se2Transform(math.radians(30), 1.0, 2.0)
        q = np.random.default_rng(0).uniform(-2, 2, size=(20, 2))
        est = estimate_se2(list(zip(q, T.apply(q))))
        exact = max(angle_difference(est.theta, T.theta), abs(est.tx - 1), abs(est.ty - 2))
        assert exact <= 1e-9
        worst_deg = worst_m = 0.0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            q = rng.uniform(-2, 2, size=(20, 2))
            d = T.apply(q) + rng.normal(scale=0.01, size=q.shape)
            est = estimate_se2(list(zip(q, d)))
            worst_deg = max(worst_deg, math.degrees(angle_difference(est.theta, T.theta)))
            worst_m = max(worst_m, math.hypot(est.tx - T.tx, est.ty - T.ty))
        c.detail = f"(noiseless error {exact:.1e}; noisy worst {worst_deg:.3f} deg, {worst_m:.4f} m)"
        assert worst_deg <= 0.5 and worst_m <= 0.02


def test_06_ssd_oracle_equivalence():
    with criterion(6, "SSD metric equals pixel-loop oracle; identity gives 0") as c:
        rng = np.random.default_rng(6)
        worst = 0.0
        compared = 0
        for i in range(20):
            def rmap(shape):
                res = float(rng.choice([0.03, 0.05]))
                centred = -0.5 * res * np.array(shape[::-1]) + rng.uniform(-0.1, 0.1, 2)
                return GradientMap(tuple(centred), res,
                                   rng.uniform(0, 2, shape), rng.uniform(0.05, 1.0, shape), 1.0)
            mq = rmap(tuple(rng.integers(15, 40, 2)))
            md = rmap(tuple(rng.integers(15, 40, 2)))
            T = Se2Transform(rng.uniform(-math.pi, math.pi), *rng.uniform(-0.2, 0.2, 2))
            got, want = ssd_metric(T, mq, md), naive_ssd(T.theta, T.tx, T.ty, mq, md)
            assert (got is None) == (want is None)
            if want is not None:
                compared += 1
                worst = max(worst, abs(got - want))
            assert ssd_metric(Se2Transform.identity(), mq, mq) == 0.0
        c.detail = f"(max abs error {worst:.1e} on {compared} overlapping cases)"
        assert compared >= 15
        assert worst <= 1e-9


@pytest.mark.slow
def test_07_end_to_end_synthetic_loop_closure():
    with criterion(7, "end-to-end synthetic loop closure") as c:
        start = time.perf_counter()
        db = SubmapDatabase(BuildConfig())
        pairs = []
        for k in range(20):
            pair = synth.random_pair(k, window=4.0, n_points=5000)
            assert pair.overlap_fraction >= 0.4 - 1e-9
            db.build_many([Submap(2 * k, pair.submap_q.cloud, pair.submap_q.world_pose),
                           Submap(2 * k + 1, pair.submap_d.cloud, pair.submap_d.world_pose)])
            pairs.append(pair)
        good = 0
        lines = []
        for k, pair in enumerate(pairs):
            res = db.match_pair(2 * k, 2 * k + 1, MatchConfig())
            T = pair.true_transform
            dth = math.degrees(angle_difference(res.transform.theta, T.theta))
            dt = math.hypot(res.transform.tx - T.tx, res.transform.ty - T.ty)
            ok = res.accepted and dth <= 2.0 and dt <= 0.06
            good += ok
            lines.append(f"pair {k}: n={res.n} accepted={res.accepted} dtheta={dth:.2f}deg dt={dt:.3f}m")
        false_accepts = 0
        for k in range(20):
            # query of terrain k against the database submap of the independent terrain k+1
            res = db.match_pair(2 * k, 2 * ((k + 1) % 20) + 1, MatchConfig())
            false_accepts += classify(res, 4)
        elapsed = time.perf_counter() - start
        print("\n".join(lines))
        c.detail = (f"({good}/20 accepted within 2 deg and 0.06 m; {false_accepts}/20 negatives accepted; "
                    f"{elapsed / 60:.1f} min)")
        assert good >= 18
        assert false_accepts == 0


def test_08_pr_harness_arithmetic():
    with criterion(8, "precision-recall arithmetic and sweep") as c:
        labels = [OverlapLabel((0, i), 0.5, True) for i in range(1, 6)]
        labels += [OverlapLabel((1, i), 0.0, False) for i in range(2, 6)]
        ok = lambda n: MatchResult(Se2Transform.identity(), n, 0.001, True)
        results = [(1, 0, ok(12)), (2, 0, ok(9)), (3, 0, ok(4)), (2, 1, ok(5)), (3, 1, ok(1)),
                   (4, 0, MatchResult(Se2Transform.identity(), 0, None, False))]
        (p,) = precision_recall(results, labels, [4])
        assert (p.tp, p.fp, p.fn) == (3, 1, 2)
        assert p.precision == 0.75 and p.recall == 0.6
        sweep = precision_recall(results, labels)
        recalls = [s.recall for s in sweep]
        c.detail = f"(P={p.precision}, R={p.recall}, {len(sweep)} sweep rows)"
        assert len(sweep) == 20 and [s.threshold for s in sweep] == list(range(1, 21))
        assert all(a >= b for a, b in zip(recalls, recalls[1:]))


def test_09_iou_labels():
    with criterion(9, "IoU analytic cases and threshold labeling") as c:
        sq = (0.0, 2.0, 0.0, 2.0)
        assert box_iou(sq, sq) == 1.0
        assert box_iou(sq, (3.0, 4.0, 3.0, 4.0)) == 0.0
        assert abs(box_iou(sq, (1.0, 3.0, 0.0, 2.0)) - 1 / 3) <= 1e-12
        # synthetic database along a winding trajectory
        rng = np.random.default_rng(9)
        terrain = synth.generate_terrain(synth.TerrainSpec(extent=(30, 30)))
        subs, boxes = [], []
        pos = np.array([5.0, 5.0])
        for i in range(14):
            pos = pos + rng.uniform(0.3, 2.5, 2)
            s = synth.sample_submap(terrain, synth.Window(tuple(pos), float(rng.uniform(-np.pi, np.pi))),
                                    300, 0.02, seed=i, id=i)
            subs.append(s)
            world = np.array([s.world_pose.se2.apply(p) for p in s.cloud.xy])  # per-point, independent path
            boxes.append((world[:, 0].min(), world[:, 0].max(), world[:, 1].min(), world[:, 1].max()))
        counts = {}
        for thr in (0.3, 0.1):
            labels = label_pairs(subs, thr)
            assert len(labels) == 14 * 13 // 2
            for lab in labels:
                want = rect_iou(boxes[lab.pair[0]], boxes[lab.pair[1]])
                assert abs(lab.iou - want) <= 1e-12
                assert lab.is_true == (want > thr)
            counts[thr] = sum(l.is_true for l in labels)
        c.detail = f"(true pairs: {counts[0.3]} at IoU>0.3, {counts[0.1]} at IoU>0.1)"
        assert 0 < counts[0.3] < counts[0.1] < 91


def test_10_determinism(tmp_path):
    with criterion(10, "build+match+eval byte-identical across runs") as c:
        runner = CliRunner()

        def run(*args):
            r = runner.invoke(main, [str(a) for a in args], catch_exceptions=False)
            assert r.exit_code == 0, r.output

        snapshots = []
        for k in ("first", "second"):
            d = tmp_path / k
            run("synth", "--out", d, "--seed", 1, "--window", 2.5, "--overlap", 0.7, "--yaw", 45,
                "--direction", 60, "--points", 2500)
            run("build", "--out", d / "db", "--poses", d / "poses.json", d / "query.xyz", d / "database.xyz")
            run("match", d / "db", "--all-pairs", "--out", d / "results.jsonl")
            run("eval", d / "results.jsonl", "--db", d / "db", "--out", d / "pr.csv", "--labels-out", d / "labels.csv")
            snapshots.append({str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()})
        c.detail = f"({len(snapshots[0])} files compared)"
        assert snapshots[0].keys() == snapshots[1].keys()
        assert snapshots[0] == snapshots[1]
        assert json.loads((tmp_path / "first" / "results.jsonl").read_text())["accepted"]
