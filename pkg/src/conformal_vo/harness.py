"""Experiment orchestration: configs, the three comparison studies, and the audit.

Each study trains the conformalized pipeline and the classical regression arm
on identical features and data, evaluates both on held-out frames, and
reports RMSE pairs, improvement ratios, set sizes, coverage, and fallback
rates per condition and seed.  Every run is a pure function of its config;
improvement ratios are always recomputed from the two RMSE columns at
emission time.
"""

from __future__ import annotations

import dataclasses
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import baseline as baseline_mod
from . import conformal, reasoning, world as world_mod
from .classifier import extract_features_batch, train_baseline, train_multihead
from .discretize import encode_batch, fit_grid
from .errors import InvalidInputError
from .geometry import Trajectory

CAPACITY_TIERS = {"small": 0, "medium": 32, "large": 256}
SAMPLE_FRACTIONS = (0.4, 0.8, 1.0)
NOISE_SIGMAS = (0.0, 0.05, 0.1, 0.2)

RESULT_COLUMNS = (
    "condition",
    "seed",
    "conformal_rmse",
    "classical_rmse",
    "improvement_ratio",
    "mean_set_size",
    "coverage",
    "fallback_rate",
)


@dataclass
class ExperimentConfig:
    seed: int = 0
    k: int = 50
    alpha: float = 0.1
    capacity_tier: str = "medium"
    training_fraction: float = 1.0
    noise_sigma: float = 0.0
    n_frames: int = 300
    n_seeds: int = 10
    n_landmarks: int = 40
    symmetric: bool = True
    image_size: int = 128
    blocks: int = 8
    focal: float = 110.0
    laps: float = 2.1
    temperature: float = 2.0
    label_smoothing: float = 0.05
    l2: float = 1e-4
    max_epochs: int = 600
    augment_sigmas: tuple = (0.0, 0.1, 0.25)
    output_dir: str = "results"

    def __post_init__(self):
        if self.k < 2:
            raise InvalidInputError("k must be >= 2")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidInputError("alpha must be in (0, 1)")
        if self.capacity_tier not in CAPACITY_TIERS:
            raise InvalidInputError(f"capacity_tier must be one of {sorted(CAPACITY_TIERS)}")
        if not 0.0 < self.training_fraction <= 1.0:
            raise InvalidInputError("training_fraction must be in (0, 1]")
        if self.noise_sigma < 0.0:
            raise InvalidInputError("noise_sigma must be >= 0")
        if self.n_frames < 50:
            raise InvalidInputError("n_frames must be >= 50")
        self.augment_sigmas = tuple(self.augment_sigmas)
        if any(s < 0 for s in self.augment_sigmas) or not self.augment_sigmas:
            raise InvalidInputError("augment_sigmas must be a non-empty tuple of sigmas >= 0")

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def build_world(config, seed):
    return world_mod.generate_world(
        seed,
        n_frames=config.n_frames,
        laps=config.laps,
        n_landmarks=config.n_landmarks,
        symmetric=config.symmetric,
        image_size=config.image_size,
        focal=config.focal,
    )


@dataclass
class TrainedArms:
    cal: conformal.CalibratedModel
    regressor: object
    train_range: tuple  # frame range the training subsample was drawn from


def _augment_training_frames(frames, config, seed):
    """Replicate the training frames at each augmentation noise level.

    Both arms train on the same augmented set, so noise robustness is a
    property of the shared features rather than an advantage handed to one
    arm.  Returns (frames, replica count).
    """
    out = []
    for j, sigma in enumerate(config.augment_sigmas):
        out.extend(world_mod.add_pixel_noise(frames, sigma, seed * 7919 + j))
    return tuple(out), len(config.augment_sigmas)


def train_arms(world, config, seed, training_fraction=None, capacity=None):
    """Fit grid + classifier + calibration and the regression baseline.

    A reduced training fraction keeps every n-th frame of the training block
    rather than a prefix, so less data means sparser coverage of the same
    pose range instead of an unseen region (frames are temporally ordered).
    """
    frac = config.training_fraction if training_fraction is None else training_fraction
    cap = CAPACITY_TIERS[config.capacity_tier] if capacity is None else capacity

    tr0, tr1 = world.splits["train"]
    n_train = max(int(round(frac * (tr1 - tr0))), config.k + 1)
    train_idx = tr0 + np.round(np.linspace(0, tr1 - tr0 - 1, n_train)).astype(int)
    ca0, ca1 = world.splits["calib"]

    pose_matrix = world.trajectory.as_matrix()
    train_poses = pose_matrix[train_idx]
    train_frames = tuple(world.frames[i] for i in train_idx)
    aug_frames, replicas = _augment_training_frames(train_frames, config, seed)
    feats_train = extract_features_batch(aug_frames, blocks=config.blocks)
    aug_poses = np.concatenate([train_poses] * replicas)
    feats_calib = extract_features_batch(world.frames[ca0:ca1], blocks=config.blocks)

    grid = fit_grid(train_poses, config.k)
    labels_train = np.concatenate([encode_batch(train_poses, grid)] * replicas)
    labels_calib = encode_batch(pose_matrix[ca0:ca1], grid)

    model = train_multihead(
        feats_train, labels_train, grid.class_counts, cap, seed,
        l2=config.l2, max_epochs=config.max_epochs,
        temperature=config.temperature, blocks=config.blocks,
        label_smoothing=config.label_smoothing,
    )
    cal = conformal.calibrate(model, grid, feats_calib, labels_calib, config.alpha)
    regressor = train_baseline(
        feats_train, aug_poses, cap, seed,
        l2=config.l2, max_epochs=config.max_epochs, blocks=config.blocks,
    )
    return TrainedArms(cal=cal, regressor=regressor, train_range=(tr0, tr1))


def evaluate_arms(world, arms, config, noise_sigma=None, noise_seed=0):
    """Both arms on the (optionally noise-corrupted) test block."""
    sigma = config.noise_sigma if noise_sigma is None else noise_sigma
    te0, te1 = world.splits["test"]
    test_frames = world.frames[te0:te1]
    if sigma > 0:
        test_frames = world_mod.add_pixel_noise(test_frames, sigma, noise_seed)
    truth = Trajectory(tuple(range(te1 - te0)), world.trajectory.poses[te0:te1])

    pred, diagnostics = reasoning.rollout(arms.cal, test_frames, world.scene.intrinsics)
    conf_rmse = baseline_mod.rmse(pred, truth)

    base_result = baseline_mod.baseline_rollout(arms.regressor, test_frames)
    class_rmse = baseline_mod.rmse(base_result.trajectory, truth)

    feats_test = extract_features_batch(test_frames, blocks=config.blocks)
    psets = conformal.predict_set_batch(arms.cal, feats_test)
    labels_test = encode_batch(world.trajectory.as_matrix()[te0:te1], arms.cal.grid)
    live = [h for h in range(7) if not arms.cal.grid.degenerate[h]]
    cov = conformal.coverage_audit(arms.cal, feats_test, labels_test)

    fallback_steps = sum(1 for d in diagnostics[1:] if d["mode"] != "reasoning")
    multimodal = sum(
        1 for ps in psets
        if any(_interval_count(ps.classes[d]) >= 2 for d in range(3))
    )
    return {
        "conformal_rmse": conf_rmse,
        "classical_rmse": class_rmse,
        "mean_set_size": conformal.mean_set_size(psets),
        "coverage": float(np.mean(cov[live])) if live else 1.0,
        "fallback_rate": fallback_steps / max(len(diagnostics) - 1, 1),
        "multimodal_position_frames": multimodal / len(psets),
        "orientation_error_conformal": baseline_mod.orientation_error(pred, truth),
        "orientation_error_classical": baseline_mod.orientation_error(
            base_result.trajectory, truth
        ),
        "diagnostics": diagnostics,
    }


def _interval_count(class_indices):
    idx = np.sort(np.asarray(class_indices))
    return 1 + int(np.sum(np.diff(idx) > 1))


@dataclass
class StudyResult:
    study: str
    rows: list  # per (condition, seed) dicts with RESULT_COLUMNS keys
    summary: list  # per condition medians
    properties: dict = field(default_factory=dict)

    def to_csv(self):
        buf = io.StringIO()
        buf.write(",".join(RESULT_COLUMNS) + "\n")
        for row in self.rows:
            row = dict(row)
            row["improvement_ratio"] = _ratio(row["classical_rmse"], row["conformal_rmse"])
            buf.write(",".join(_cell(row[c]) for c in RESULT_COLUMNS) + "\n")
        return buf.getvalue()

    def to_json(self):
        summary = []
        for row in self.summary:
            row = dict(row)
            row["improvement_ratio"] = _ratio(row["classical_rmse"], row["conformal_rmse"])
            summary.append(row)
        return json.dumps(
            {
                "schema": "study-result-v1",
                "study": self.study,
                "rows": self.rows,
                "summary": summary,
                "properties": self.properties,
            },
            sort_keys=True,
        )


def _ratio(classical, conf):
    return classical / conf if conf > 0 else math.inf


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _collect(rows, condition, seed, metrics):
    rows.append(
        {
            "condition": condition,
            "seed": seed,
            "conformal_rmse": metrics["conformal_rmse"],
            "classical_rmse": metrics["classical_rmse"],
            "improvement_ratio": _ratio(metrics["classical_rmse"], metrics["conformal_rmse"]),
            "mean_set_size": metrics["mean_set_size"],
            "coverage": metrics["coverage"],
            "fallback_rate": metrics["fallback_rate"],
        }
    )


def _summarize(rows, conditions):
    summary = []
    for cond in conditions:
        sub = [r for r in rows if r["condition"] == cond]
        summary.append(
            {
                "condition": cond,
                "seed": "median",
                "conformal_rmse": float(np.median([r["conformal_rmse"] for r in sub])),
                "classical_rmse": float(np.median([r["classical_rmse"] for r in sub])),
                "improvement_ratio": float(np.median([r["improvement_ratio"] for r in sub])),
                "mean_set_size": float(np.median([r["mean_set_size"] for r in sub])),
                "coverage": float(np.median([r["coverage"] for r in sub])),
                "fallback_rate": float(np.median([r["fallback_rate"] for r in sub])),
            }
        )
    return summary


def _win_counts(rows, conditions):
    return {
        str(cond): sum(
            1 for r in rows
            if r["condition"] == cond and r["conformal_rmse"] < r["classical_rmse"]
        )
        for cond in conditions
    }


def run_sample_efficiency(config):
    """Both arms at training fractions 0.4 / 0.8 / 1.0 over the seed suite."""
    rows = []
    monotone = 0
    for i in range(config.n_seeds):
        seed = config.seed + i
        world = build_world(config, seed)
        sizes = {}
        for frac in SAMPLE_FRACTIONS:
            arms = train_arms(world, config, seed, training_fraction=frac)
            metrics = evaluate_arms(world, arms, config, noise_sigma=0.0)
            _collect(rows, frac, seed, metrics)
            sizes[frac] = metrics["mean_set_size"]
        if sizes[0.4] >= sizes[0.8] - 1e-12 >= sizes[1.0] - 2e-12:
            monotone += 1
    conditions = list(SAMPLE_FRACTIONS)
    return StudyResult(
        study="sample_efficiency",
        rows=rows,
        summary=_summarize(rows, conditions),
        properties={
            "set_size_non_increasing_in_fraction_seeds": monotone,
            "conformal_win_seeds": _win_counts(rows, conditions),
            "n_seeds": config.n_seeds,
        },
    )


def run_parametric_efficiency(config):
    """Both arms across the small/medium/large capacity tiers."""
    rows = []
    conf_spread_ok = 0
    classical_spread_larger = 0
    for i in range(config.n_seeds):
        seed = config.seed + i
        world = build_world(config, seed)
        conf_rmse, class_rmse = {}, {}
        for tier, cap in CAPACITY_TIERS.items():
            arms = train_arms(world, config, seed, capacity=cap)
            metrics = evaluate_arms(world, arms, config, noise_sigma=0.0)
            _collect(rows, tier, seed, metrics)
            conf_rmse[tier] = metrics["conformal_rmse"]
            class_rmse[tier] = metrics["classical_rmse"]
        conf_spread = max(conf_rmse.values()) / max(min(conf_rmse.values()), 1e-12)
        class_spread = max(class_rmse.values()) / max(min(class_rmse.values()), 1e-12)
        if conf_spread <= 1.5:
            conf_spread_ok += 1
        if class_spread > conf_spread:
            classical_spread_larger += 1
    conditions = list(CAPACITY_TIERS)
    return StudyResult(
        study="parametric_efficiency",
        rows=rows,
        summary=_summarize(rows, conditions),
        properties={
            "conformal_spread_within_1p5_seeds": conf_spread_ok,
            "classical_spread_larger_seeds": classical_spread_larger,
            "conformal_win_seeds": _win_counts(rows, conditions),
            "n_seeds": config.n_seeds,
        },
    )


def run_noise_robustness(config):
    """Fixed trained arms; Gaussian pixel noise on test frames only."""
    rows = []
    monotone = 0
    for i in range(config.n_seeds):
        seed = config.seed + i
        world = build_world(config, seed)
        arms = train_arms(world, config, seed)
        sizes = []
        for sigma in NOISE_SIGMAS:
            metrics = evaluate_arms(
                world, arms, config, noise_sigma=sigma, noise_seed=seed * 1000 + int(sigma * 100)
            )
            _collect(rows, sigma, seed, metrics)
            sizes.append(metrics["mean_set_size"])
        if all(a <= b + 1e-12 for a, b in zip(sizes, sizes[1:])):
            monotone += 1
    conditions = list(NOISE_SIGMAS)
    return StudyResult(
        study="noise_robustness",
        rows=rows,
        summary=_summarize(rows, conditions),
        properties={
            "set_size_non_decreasing_in_sigma_seeds": monotone,
            "conformal_win_seeds": _win_counts(rows, conditions),
            "n_seeds": config.n_seeds,
        },
    )


STUDIES = {
    "sample": run_sample_efficiency,
    "capacity": run_parametric_efficiency,
    "noise": run_noise_robustness,
}


def trajectory_to_json(trajectory):
    return json.dumps(
        {
            "schema": "trajectory-v1",
            "frames": [
                {"frame_index": i, "pose": pose.as_vector().tolist()}
                for i, pose in trajectory
            ],
        },
        sort_keys=True,
    )


def trajectory_from_json(text):
    from .geometry import Pose

    doc = json.loads(text)
    if doc.get("schema") != "trajectory-v1":
        raise InvalidInputError("unrecognized trajectory schema")
    frames = doc["frames"]
    return Trajectory(
        tuple(f["frame_index"] for f in frames),
        tuple(Pose.from_vector(np.array(f["pose"])) for f in frames),
    )


def run_coverage_audit(seed=0, alpha=0.1, n_calib=99, resplits=500, pool_test=200,
                       n_train=150, k=10, capacity=0, max_epochs=120, blocks=8,
                       temperature=2.0):
    """Monte-Carlo marginal-coverage audit on exchangeable i.i.d. samples.

    Samples a pool of i.i.d. pose/frame pairs, trains once, then repeatedly
    resplits the pool into calibration (n_calib) and test.  Coverage uses the
    pure threshold rule (no empty-set fallback) so the split-conformal bound
    is exactly testable.  Returns per-head means, Monte-Carlo standard
    errors, and the target band.
    """
    pool_size = n_calib + pool_test
    scene, poses, frames = world_mod.sample_iid_poses(seed, n_train + pool_size)
    feats = extract_features_batch(frames, blocks=blocks)
    pose_matrix = np.stack([p.as_vector() for p in poses])

    grid = fit_grid(pose_matrix[:n_train], k)
    labels = encode_batch(pose_matrix, grid)
    model = train_multihead(
        feats[:n_train], labels[:n_train], grid.class_counts, capacity, seed,
        max_epochs=max_epochs, temperature=temperature, blocks=blocks,
    )

    pool_feats = feats[n_train:]
    pool_labels = labels[n_train:]
    scores = model.scores(pool_feats)
    live = [h for h in range(7) if not grid.degenerate[h]]
    # nonconformity score of each pool sample per head
    pool_scores = {
        h: 1.0 - scores[h][np.arange(pool_size), pool_labels[:, h]] for h in live
    }

    rng = np.random.default_rng(seed + 7)
    per_head = {h: np.empty(resplits) for h in live}
    for r in range(resplits):
        perm = rng.permutation(pool_size)
        calib_idx, test_idx = perm[:n_calib], perm[n_calib:]
        for h in live:
            qhat = conformal.conformal_quantile(pool_scores[h][calib_idx], alpha)
            per_head[h][r] = float(np.mean(pool_scores[h][test_idx] < qhat))

    heads = {}
    for h in live:
        mean = float(np.mean(per_head[h]))
        se = float(np.std(per_head[h], ddof=1) / np.sqrt(resplits))
        lo = 1.0 - alpha - 3.0 * se
        hi = 1.0 - alpha + 1.0 / (n_calib + 1) + 3.0 * se
        heads[str(h)] = {
            "mean_coverage": mean,
            "std_error": se,
            "band": [lo, hi],
            "in_band": bool(lo <= mean <= hi),
        }
    return {
        "schema": "coverage-audit-v1",
        "alpha": alpha,
        "n_calib": n_calib,
        "resplits": resplits,
        "heads": heads,
        "all_in_band": all(v["in_band"] for v in heads.values()),
    }
