"""Command-line interface.

Subcommands mirror the pipeline stages: ``generate`` a synthetic world,
``train`` both arms, ``calibrate`` the classifier, ``rollout`` a trajectory,
run an ``experiment`` study, or ``audit`` marginal coverage.  Experiment and
audit reports are written as CSV/JSON (byte-deterministic for a fixed
config) with matplotlib figures alongside.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from . import baseline as baseline_mod
from . import conformal, harness, plots, reasoning, world as world_mod
from .classifier import extract_features_batch, model_from_json, model_to_json, train_baseline, train_multihead
from .discretize import QuantileGrid, encode_batch, fit_grid
from .geometry import Trajectory
from .vision import SyntheticScene, write_pgm


def _config_from_args(args):
    kwargs = {}
    for name in ("seed", "k", "alpha", "capacity_tier", "training_fraction",
                 "noise_sigma", "n_frames", "n_seeds", "symmetric", "temperature"):
        v = getattr(args, name, None)
        if v is not None:
            kwargs[name] = v
    if getattr(args, "config", None):
        cfg = harness.ExperimentConfig.from_json(Path(args.config).read_text())
        for key, val in kwargs.items():
            setattr(cfg, key, val)
        return cfg
    return harness.ExperimentConfig(**kwargs)


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def cmd_generate(args):
    cfg = _config_from_args(args)
    world = harness.build_world(cfg, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "config.json", cfg.to_json())
    _write(out / "scene.json", world.scene.to_json())
    _write(out / "trajectory.json", harness.trajectory_to_json(world.trajectory))
    _write(out / "splits.json", json.dumps(world.splits, sort_keys=True))
    np.savez_compressed(out / "frames.npz", frames=np.stack(world.frames))
    for i in range(min(args.dump_frames, len(world.frames))):
        write_pgm(world.frames[i], out / f"frame_{i:04d}.pgm")
    print(f"world written to {out} ({len(world.frames)} frames)")
    return 0


def _load_world(world_dir):
    world_dir = Path(world_dir)
    cfg = harness.ExperimentConfig.from_json((world_dir / "config.json").read_text())
    scene = SyntheticScene.from_json((world_dir / "scene.json").read_text())
    trajectory = harness.trajectory_from_json((world_dir / "trajectory.json").read_text())
    splits = {k: tuple(v) for k, v in json.loads((world_dir / "splits.json").read_text()).items()}
    frames = tuple(np.load(world_dir / "frames.npz")["frames"])
    return cfg, world_mod.World(scene=scene, trajectory=trajectory, frames=frames, splits=splits)


def cmd_train(args):
    cfg, world = _load_world(args.world)
    cap = harness.CAPACITY_TIERS[args.capacity_tier or cfg.capacity_tier]
    tr0, tr1 = world.splits["train"]
    poses = world.trajectory.as_matrix()[tr0:tr1]
    aug_frames, replicas = harness._augment_training_frames(world.frames[tr0:tr1], cfg, cfg.seed)
    feats = extract_features_batch(aug_frames, blocks=cfg.blocks)
    grid = fit_grid(poses, args.k or cfg.k)
    labels = np.concatenate([encode_batch(poses, grid)] * replicas)
    aug_poses = np.concatenate([poses] * replicas)
    model = train_multihead(feats, labels, grid.class_counts, cap, cfg.seed,
                            l2=cfg.l2, max_epochs=cfg.max_epochs,
                            temperature=cfg.temperature, blocks=cfg.blocks,
                            label_smoothing=cfg.label_smoothing)
    regressor = train_baseline(feats, aug_poses, cap, cfg.seed,
                               l2=cfg.l2, max_epochs=cfg.max_epochs, blocks=cfg.blocks)
    out = Path(args.out)
    _write(out / "grid.json", grid.to_json())
    _write(out / "model.json", model_to_json(model))
    _write(out / "baseline.json", model_to_json(regressor))
    print(f"models written to {out}")
    return 0


def cmd_calibrate(args):
    cfg, world = _load_world(args.world)
    model_dir = Path(args.models)
    grid = QuantileGrid.from_json((model_dir / "grid.json").read_text())
    model = model_from_json((model_dir / "model.json").read_text())
    alpha = args.alpha if args.alpha is not None else cfg.alpha
    ca0, ca1 = world.splits["calib"]
    feats = extract_features_batch(world.frames[ca0:ca1], blocks=cfg.blocks)
    labels = encode_batch(world.trajectory.as_matrix()[ca0:ca1], grid)
    cal = conformal.calibrate(model, grid, feats, labels, alpha)
    report = {
        "schema": "calibration-v1",
        "alpha": alpha,
        "n": cal.record.n,
        "thresholds": cal.thresholds.tolist(),
        "scores": [s.tolist() for s in cal.record.scores],
        "degenerate_heads": list(grid.degenerate),
    }
    out = Path(args.out)
    _write(out / "calibrated.json", json.dumps(report, sort_keys=True))
    print(f"calibration written to {out} (thresholds {np.round(cal.thresholds, 4).tolist()})")
    return 0


def _load_calibrated(model_dir):
    model_dir = Path(model_dir)
    grid = QuantileGrid.from_json((model_dir / "grid.json").read_text())
    model = model_from_json((model_dir / "model.json").read_text())
    doc = json.loads((model_dir / "calibrated.json").read_text())
    record = conformal.CalibrationRecord(
        scores=[np.array(s) for s in doc["scores"]], n=int(doc["n"]), alpha=float(doc["alpha"])
    )
    return conformal.CalibratedModel(
        model=model, grid=grid, thresholds=np.array(doc["thresholds"]),
        record=record, alpha=float(doc["alpha"]),
    )


def cmd_rollout(args):
    cfg, world = _load_world(args.world)
    cal = _load_calibrated(args.models)
    te0, te1 = world.splits["test"]
    frames = world.frames[te0:te1]
    if args.noise_sigma:
        frames = world_mod.add_pixel_noise(frames, args.noise_sigma, cfg.seed)
    pred, diagnostics = reasoning.rollout(cal, frames, world.scene.intrinsics)
    truth = Trajectory(tuple(range(te1 - te0)), world.trajectory.poses[te0:te1])
    out = Path(args.out)
    _write(out / "trajectory.json", harness.trajectory_to_json(pred))
    _write(out / "diagnostics.jsonl", reasoning.diagnostics_to_jsonl(diagnostics))
    plots.plot_trajectory(pred, truth, out / "trajectory.png")
    print(f"rollout RMSE {baseline_mod.rmse(pred, truth):.4f}; outputs in {out}")
    return 0


def cmd_experiment(args):
    cfg = _config_from_args(args)
    runner = harness.STUDIES[args.study]
    result = runner(cfg)
    out = Path(args.out if args.out else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{result.study}"
    _write(out / f"{stem}.csv", result.to_csv())
    _write(out / f"{stem}.json", result.to_json())
    plots.plot_study(result, out / f"{stem}.png")
    for row in result.summary:
        print(
            f"{result.study} condition={row['condition']}: "
            f"conformal={row['conformal_rmse']:.4f} classical={row['classical_rmse']:.4f} "
            f"ratio={row['improvement_ratio']:.2f} set_size={row['mean_set_size']:.2f}"
        )
    return 0


def cmd_audit(args):
    audit = harness.run_coverage_audit(
        seed=args.seed or 0, alpha=args.alpha if args.alpha is not None else 0.1,
        resplits=args.resplits,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "coverage.json", json.dumps(audit, sort_keys=True))
    plots.plot_coverage(audit, out / "coverage.png")
    for h, v in sorted(audit["heads"].items(), key=lambda kv: int(kv[0])):
        print(f"head {h}: coverage {v['mean_coverage']:.4f} (band {v['band'][0]:.4f}..{v['band'][1]:.4f})")
    print("all heads in band" if audit["all_in_band"] else "coverage band violated")
    return 0 if audit["all_in_band"] else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="conformal-vo",
                                     description="Conformalized multimodal pose uncertainty pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--k", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--n-frames", dest="n_frames", type=int)
        p.add_argument("--n-seeds", dest="n_seeds", type=int)
        p.add_argument("--symmetric", action="store_true", default=None)
        p.add_argument("--capacity-tier", dest="capacity_tier",
                       choices=sorted(harness.CAPACITY_TIERS))

    p = sub.add_parser("generate", help="generate a synthetic world")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-frames", type=int, default=0, help="write the first N frames as PGM")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train classifier and baseline on a world")
    p.add_argument("--world", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--capacity-tier", dest="capacity_tier", choices=sorted(harness.CAPACITY_TIERS))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="conformal calibration on the calib split")
    p.add_argument("--world", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("rollout", help="reasoning rollout over the test split")
    p.add_argument("--world", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=0.0)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("experiment", help="run one comparison study")
    common(p)
    p.add_argument("--study", required=True, choices=sorted(harness.STUDIES))
    p.add_argument("--out")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("audit", help="Monte-Carlo marginal coverage audit")
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--resplits", type=int, default=500)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # component failure -> machine-readable record
        record = {
            "error": type(exc).__name__,
            "message": str(exc),
            "command": args.command,
        }
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        if "--debug" in (argv or sys.argv):
            traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
