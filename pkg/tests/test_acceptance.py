"""Acceptance gate: one pass/fail line per criterion at pinned tolerances.

The three comparison studies run once per session (they dominate the
runtime) and several criteria read their shared results.  Run with
``pytest tests/test_acceptance.py -v -s`` to see the printed lines.
"""

import time

import numpy as np
import pytest

from conformal_vo import conformal, harness, reasoning, vision
from conformal_vo.classifier import (
    _Head,
    extract_features_batch,
    head_loss_and_grad,
)
from conformal_vo.cli import main as cli_main


def report(name, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'}: {name}"
    if detail:
        line += f" ({detail})"
    print(line)
    assert ok, line


@pytest.fixture(scope="session")
def studies():
    config = harness.ExperimentConfig()
    t0 = time.time()
    results = {
        "sample": harness.run_sample_efficiency(config),
        "capacity": harness.run_parametric_efficiency(config),
        "noise": harness.run_noise_robustness(config),
    }
    return results, time.time() - t0


class TestCoverageGuarantee:
    def test_marginal_coverage_in_band(self):
        t0 = time.time()
        audit = harness.run_coverage_audit(seed=0, alpha=0.1, n_calib=99, resplits=500)
        elapsed = time.time() - t0
        means = {h: round(v["mean_coverage"], 4) for h, v in audit["heads"].items()}
        report(
            "coverage guarantee (n=99, alpha=0.1, 500 resplits, all heads in band)",
            audit["all_in_band"] and elapsed < 120,
            f"means {means}, {elapsed:.0f}s",
        )


class TestQuantileRule:
    def test_hundred_random_pairs_vs_sort_oracle(self):
        rng = np.random.default_rng(42)
        ok = True
        fallback_seen = False
        for _ in range(100):
            n = int(rng.integers(1, 300))
            alpha = float(rng.uniform(0.005, 0.99))
            scores = rng.uniform(0, 1, n)
            rank = int(np.ceil((n + 1) * (1 - alpha)))
            expect = 1.0 if rank > n else float(np.sort(scores)[rank - 1])
            fallback_seen |= rank > n
            ok &= conformal.conformal_quantile(scores, alpha) == expect
        report("quantile rule vs sort oracle (100 random (n, alpha), incl. fallback)",
               ok and fallback_seen)


class TestMultimodality:
    def test_symmetric_world_produces_disjoint_sets(self):
        t0 = time.time()
        config = harness.ExperimentConfig()
        world = harness.build_world(config, 0)
        arms = harness.train_arms(world, config, 0, training_fraction=0.4)
        te0, te1 = world.splits["test"]
        feats = extract_features_batch(world.frames[te0:te1], blocks=config.blocks)
        psets = conformal.predict_set_batch(arms.cal, feats)
        multimodal = 0
        products_ok = True
        for ps in psets:
            region = conformal.to_region(ps, arms.cal.grid)
            # independent count: runs of consecutive class indices per head
            expect = int(np.prod([harness._interval_count(c) for c in ps.classes]))
            products_ok &= region.cuboid_count == expect
            products_ok &= sum(1 for _ in region.iter_cuboids()) == expect
            if any(harness._interval_count(ps.classes[d]) >= 2 for d in range(3)):
                multimodal += 1
        frac = multimodal / len(psets)
        elapsed = time.time() - t0
        report(
            "multimodality existence (>=5% test frames with >=2 disjoint position "
            "intervals at alpha=0.1; cuboid counts = interval products)",
            frac >= 0.05 and products_ok and elapsed < 300,
            f"multimodal fraction {frac:.2f}, {elapsed:.0f}s",
        )


class TestKContraction:
    def test_interval_widths_contract_with_k(self):
        wins = 0
        n_seeds = 10
        for seed in range(n_seeds):
            widths = {}
            for k in (10, 50):
                cfg = harness.ExperimentConfig(
                    k=k, max_epochs=200, capacity_tier="small", augment_sigmas=(0.0,)
                )
                world = harness.build_world(cfg, seed)
                arms = harness.train_arms(world, cfg, seed)
                te0, te1 = world.splits["test"]
                feats = extract_features_batch(world.frames[te0:te1], blocks=cfg.blocks)
                psets = conformal.predict_set_batch(arms.cal, feats)
                w = []
                for ps in psets:
                    region = conformal.to_region(ps, arms.cal.grid)
                    for iv in region.intervals:
                        w.extend(hi - lo for lo, hi in iv)
                widths[k] = float(np.mean(w))
            if widths[50] < widths[10]:
                wins += 1
        report(
            "K-contraction (mean interval width at K=50 < K=10, majority of 10 seeds)",
            wins > n_seeds // 2,
            f"{wins}/{n_seeds} seeds",
        )


def _axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    K = vision.skew(axis)
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


class TestEpipolarStack:
    def test_hundred_random_motions(self):
        rng = np.random.default_rng(7)
        rot_ok = dir_ok = res_ok = True
        for _ in range(100):
            pts = np.column_stack([
                rng.uniform(-1.5, 1.5, 40), rng.uniform(-1.5, 1.5, 40),
                rng.uniform(4.0, 9.0, 40),
            ])
            R = _axis_angle(rng.normal(size=3), rng.uniform(0.05, 0.3))
            t = rng.normal(size=3)
            t /= np.linalg.norm(t)
            pts1 = pts @ R.T + t
            corr = vision.Correspondences.from_normalized(
                pts[:, :2] / pts[:, 2:3], pts1[:, :2] / pts1[:, 2:3]
            )
            E = vision.estimate_essential(corr)
            res_ok &= float(vision.epipolar_residuals(E, corr).max()) < 1e-9
            motion = vision.decompose_essential(E, corr)
            angle = np.arccos(np.clip((np.trace(motion.rotation @ R.T) - 1) / 2, -1, 1))
            rot_ok &= angle < 1e-6
            dir_ok &= abs(float(np.dot(motion.translation, t))) > 1.0 - 1e-9
        report(
            "epipolar stack (100 random (R, t): rot err < 1e-6 rad, "
            "|cos| > 1-1e-9, residual < 1e-9)",
            rot_ok and dir_ok and res_ok,
        )


class TestFlowRecovery:
    def test_fifty_shifted_frames(self):
        from scipy import ndimage

        rng0 = np.random.default_rng(6)
        tex = ndimage.gaussian_filter(rng0.uniform(0, 1, (220, 220)), 2.0)
        tex = (tex - tex.min()) / (tex.max() - tex.min())

        def crop(dy=0.0, dx=0.0):
            ys, xs = np.meshgrid(np.arange(100) + 60 + dy, np.arange(100) + 60 + dx,
                                 indexing="ij")
            return ndimage.map_coordinates(tex, [ys, xs], order=1, mode="nearest")

        frame_a = crop()
        corners = vision.harris_corners(frame_a, 40)
        central = np.all((corners >= 30) & (corners <= 70), axis=1)
        corners = corners[central]
        rng = np.random.default_rng(8)
        ok = len(corners) >= 6
        worst = 0.0
        for _ in range(50):
            dy, dx = rng.uniform(-5, 5, 2)
            frame_b = crop(dy=dy, dx=dx)
            tracked, status = vision.lucas_kanade(frame_a, frame_b, corners)
            ok &= status.mean() > 0.5
            err = tracked[status] - corners[status] + np.array([dx, dy])
            worst = max(worst, float(np.max(np.linalg.norm(err, axis=1))))
        report(
            "flow recovery (LK within 0.2 px for shifts <= 5 px, 50 frames)",
            ok and worst < 0.2,
            f"worst {worst:.4f} px",
        )


class TestReasoningImprovement:
    def test_wins_and_ratio_across_studies(self, studies):
        results, elapsed = studies
        all_ok = True
        details = []
        ratios = []
        for name, res in results.items():
            wins = res.properties["conformal_win_seeds"]
            n = res.properties["n_seeds"]
            for cond, w in wins.items():
                all_ok &= w >= 8
                details.append(f"{name}/{cond}: {w}/{n}")
            ratios.extend(
                r["improvement_ratio"] for r in res.rows if np.isfinite(r["improvement_ratio"])
            )
        median_ratio = float(np.median(ratios))
        all_ok &= median_ratio >= 1.5
        all_ok &= elapsed < 1800
        report(
            "reasoning improvement (>=8/10 wins per condition, median ratio >= 1.5, < 30 min)",
            all_ok,
            f"median ratio {median_ratio:.2f}, {elapsed:.0f}s, wins {'; '.join(details)}",
        )


class TestAdaptivity:
    def test_set_size_monotonicity(self, studies):
        results, _ = studies
        noise_seeds = results["noise"].properties["set_size_non_decreasing_in_sigma_seeds"]
        frac_seeds = results["sample"].properties["set_size_non_increasing_in_fraction_seeds"]
        n = results["noise"].properties["n_seeds"]
        report(
            "adaptivity (set size non-decreasing in sigma and non-increasing in "
            "training fraction, each >= 8/10 seeds)",
            noise_seeds >= 8 and frac_seeds >= 8,
            f"sigma {noise_seeds}/{n}, fraction {frac_seeds}/{n}",
        )


class TestCapacityConsistency:
    def test_conformal_spread_small_while_classical_large(self, studies):
        results, _ = studies
        props = results["capacity"].properties
        ok_spread = props["conformal_spread_within_1p5_seeds"]
        ok_larger = props["classical_spread_larger_seeds"]
        n = props["n_seeds"]
        report(
            "capacity consistency (conformal spread <= 1.5 while classical exceeds, "
            "majority of seeds)",
            ok_spread > n // 2 and ok_larger > n // 2,
            f"spread<=1.5 in {ok_spread}/{n}, classical larger in {ok_larger}/{n}",
        )


class TestDeterminism:
    def test_cli_experiment_reruns_byte_identical(self, tmp_path):
        args = ["experiment", "--study", "noise", "--seed", "3", "--n-seeds", "1",
                "--n-frames", "80", "--k", "8", "--capacity-tier", "small"]
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert cli_main([*args, "--out", str(out1)]) == 0
        assert cli_main([*args, "--out", str(out2)]) == 0
        same = all(
            (out1 / f).read_bytes() == (out2 / f).read_bytes()
            for f in ("noise_robustness.csv", "noise_robustness.json")
        )
        report("determinism (CLI experiment rerun byte-identical CSV/JSON)", same)


class TestGradientCheck:
    def test_twenty_random_instances(self):
        rng = np.random.default_rng(11)
        ok = True
        for trial in range(20):
            n = int(rng.integers(3, 8))
            f = int(rng.integers(2, 6))
            k = int(rng.integers(2, 5))
            cap = int(rng.choice([0, 3]))
            x = rng.normal(size=(n, f))
            y = np.zeros((n, k))
            y[np.arange(n), rng.integers(0, k, n)] = 1.0
            if cap == 0:
                head = _Head(None, None, rng.normal(size=(f, k)), rng.normal(size=k), k)
            else:
                head = _Head(rng.normal(size=(f, cap)), rng.normal(size=cap),
                             rng.normal(size=(cap, k)), rng.normal(size=k), k)
            _, grads = head_loss_and_grad(head, x, y, l2=0.01)
            for param, g in grads.items():
                w = getattr(head, param)
                fd = np.zeros_like(w)
                it = np.nditer(w, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index
                    orig = w[idx]
                    w[idx] = orig + 1e-5
                    lp, _ = head_loss_and_grad(head, x, y, 0.01)
                    w[idx] = orig - 1e-5
                    lm, _ = head_loss_and_grad(head, x, y, 0.01)
                    w[idx] = orig
                    fd[idx] = (lp - lm) / 2e-5
                denom = max(float(np.max(np.abs(fd))), 1e-8)
                ok &= float(np.max(np.abs(g - fd))) / denom < 1e-4
        report("gradient check (analytic vs central differences, 1e-4 rel, 20 instances)", ok)
