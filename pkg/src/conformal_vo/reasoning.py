"""Mode discrimination among disjoint uncertainty regions via relative motion.

Each cuboid of an uncertainty region yields one candidate pose at its
per-dimension interval midpoints.  The orientation candidate is chosen by
minimizing the Euclidean quaternion distance to the motion-propagated
orientation (R_next = R_rel @ R_prev); the position candidate by matching
the normalized predicted step against the epipolar translation direction.
The rollout never aborts: any vision-stage degeneracy falls back to the
highest-softmax decode for that step and is flagged in the diagnostics.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from . import conformal, vision
from .classifier import extract_features_batch
from .errors import NoCandidateError
from .geometry import (
    Pose,
    Trajectory,
    compose_rotation,
    normalize_quat,
    quat_distance,
    quat_to_rotmat,
    rotmat_to_quat,
)

TIE_TOL = 1e-9
STATIONARY_TOL = 1e-9
# An Eq. (2) objective above this bound (roughly a 35 degree direction error)
# means no moving candidate explains the observed translation direction well;
# if a below-resolution candidate exists the motion was probably smaller than
# one grid cell, so that candidate is preferred.  The bound is deliberately
# tight: wrongly preferring a below-resolution candidate costs at most one
# grid cell, while wrongly accepting a distant candidate can cost the whole
# scene diameter.
MISMATCH_BOUND = 0.6
# Eq. (2) matches directions only, so a candidate along the motion direction
# but many cells away fits as well as the adjacent cell.  The rollout treats
# steps beyond this many grid-resolution units per frame as implausible for
# position selection (consecutive frames move by about one cell).
PLAUSIBLE_STEP_FACTOR = 16.0
# When no candidate is reachable (the prediction set momentarily misses every
# cell near the previous position, e.g. under heavy pixel noise), the rollout
# holds its position rather than teleporting to a far candidate.  If the
# condition persists this many consecutive steps the anchor itself is suspect
# and the rollout re-anchors to the highest-mass candidate, searching an
# expanding radius: nearby first (a momentarily missed cell), then globally
# (a wrong-mode anchor) if consecutive re-anchors keep failing to stick.
REANCHOR_PATIENCE = 3
REANCHOR_RADIUS_BASE = 2.0
# Per-subspace candidate cap.  Selection enumerates the position (3-dim) and
# orientation (4-dim) marginal cuboids separately, so the cap bounds each
# marginal product rather than the full 7-dim cuboid count.
MAX_CANDIDATES = 4096

POSITION_DIMS = (0, 1, 2)
ORIENTATION_DIMS = (3, 4, 5, 6)


@dataclass(frozen=True)
class CandidatePose:
    """One cuboid's candidate: interval-midpoint position and orientation."""

    position: np.ndarray
    orientation: np.ndarray
    source: tuple  # per-dimension interval indices of the originating cuboid
    mass: float  # product of per-dimension softmax interval masses
    index: int  # enumeration order, used as the final tie-break


def enumerate_candidates(region):
    """One candidate per cuboid; candidates whose quaternion midpoints are
    all near zero cannot be normalized and are skipped."""
    mids = [[(lo + hi) / 2.0 for lo, hi in iv] for iv in region.intervals]
    masses = region.masses or [[1.0] * len(iv) for iv in region.intervals]
    out = []
    for index, combo in enumerate(itertools.product(*[range(len(m)) for m in mids])):
        vec = np.array([mids[d][i] for d, i in enumerate(combo)])
        q = vec[3:]
        if np.linalg.norm(q) < 1e-6:
            continue
        mass = float(np.prod([masses[d][i] for d, i in enumerate(combo)]))
        out.append(
            CandidatePose(
                position=vec[:3],
                orientation=normalize_quat(q),
                source=combo,
                mass=mass,
                index=index,
            )
        )
    return out


def marginal_candidates(region, dims):
    """One candidate per cuboid of the subspace spanned by ``dims``.

    The orientation objective reads only the quaternion components and the
    position objective only the position components, so each selection can
    enumerate its own marginal cuboids.  This is selection-equivalent to
    enumerating the full 7-dim product (the ignored subspace contributes the
    same mass factor to every candidate) while keeping the candidate count
    additive instead of multiplicative across the two subspaces.
    """
    mids = [[(lo + hi) / 2.0 for lo, hi in region.intervals[d]] for d in dims]
    masses = region.masses or [[1.0] * len(iv) for iv in region.intervals]
    orientation_space = tuple(dims) == ORIENTATION_DIMS
    out = []
    for index, combo in enumerate(itertools.product(*[range(len(m)) for m in mids])):
        vec = np.array([mids[j][i] for j, i in enumerate(combo)])
        if orientation_space:
            if np.linalg.norm(vec) < 1e-6:
                continue
            position, orientation = np.zeros(3), normalize_quat(vec)
        else:
            position, orientation = vec, np.array([1.0, 0.0, 0.0, 0.0])
        mass = float(np.prod([masses[d][i] for d, i in zip(dims, combo)]))
        out.append(
            CandidatePose(
                position=position, orientation=orientation,
                source=combo, mass=mass, index=index,
            )
        )
    return out


def _argmin_with_tiebreak(candidates, objectives):
    best = float(np.min(objectives))
    contenders = [c for c, o in zip(candidates, objectives) if o <= best + TIE_TOL]
    contenders.sort(key=lambda c: (-c.mass, c.index))
    return contenders[0]


def select_orientation(candidates, r_relative, q_previous):
    """Candidate whose orientation is closest to the propagated next rotation."""
    if not candidates:
        raise NoCandidateError("no valid orientation candidates")
    r_next = compose_rotation(r_relative, quat_to_rotmat(q_previous))
    q_next = rotmat_to_quat(r_next)
    objectives = [quat_distance(c.orientation, q_next) for c in candidates]
    return _argmin_with_tiebreak(candidates, objectives)


def select_position(candidates, t_relative, t_previous, stationary_tol=STATIONARY_TOL,
                    mismatch_bound=MISMATCH_BOUND):
    """Candidate whose normalized step best matches the translation direction.

    Candidates closer to the previous position than ``stationary_tol`` have
    no usable step direction and compete on softmax mass instead: they win
    when there is no moving candidate at all, or when even the best moving
    candidate mismatches the observed direction by more than
    ``mismatch_bound`` (the motion was below grid resolution, so every
    resolvable step direction is an artifact of quantization).

    Returns (candidate, stationary) where the flag marks a below-resolution
    selection.
    """
    if not candidates:
        raise NoCandidateError("no valid position candidates")
    t_relative = np.asarray(t_relative, dtype=float)
    t_previous = np.asarray(t_previous, dtype=float)
    moving, objectives, stationary = [], [], []
    for c in candidates:
        step = c.position - t_previous
        norm = np.linalg.norm(step)
        if norm <= stationary_tol:
            stationary.append(c)
            continue
        moving.append(c)
        objectives.append(float(np.linalg.norm(t_relative - step / norm)))
    if not moving:
        fallback = sorted(candidates, key=lambda c: (-c.mass, c.index))[0]
        return fallback, True
    best = _argmin_with_tiebreak(moving, objectives)
    if stationary and float(np.min(objectives)) > mismatch_bound:
        return sorted(stationary, key=lambda c: (-c.mass, c.index))[0], True
    return best, False


def _grid_resolution(grid):
    """Half the median position bin width: steps below this are unresolvable."""
    widths = []
    for d in range(3):
        b = np.asarray(grid.boundaries[d])
        if len(b) > 1:
            widths.extend(np.diff(b))
    if not widths:
        return STATIONARY_TOL
    return max(0.5 * float(np.median(widths)), STATIONARY_TOL)


def argmax_decode(cal, features):
    """Highest-softmax pose decode per frame (no sets, no reasoning)."""
    from .discretize import decode_midpoint

    scores = cal.model.scores(np.atleast_2d(features))
    n = scores[0].shape[0]
    poses = []
    for i in range(n):
        label = np.array([int(np.argmax(p[i])) for p in scores])
        vec = decode_midpoint(label, cal.grid)
        q = vec[3:]
        if np.linalg.norm(q) < 1e-6:
            q = np.array([1.0, 0.0, 0.0, 0.0])
        poses.append(Pose(vec[:3], normalize_quat(q)))
    return poses


def estimate_relative_motion(frame_a, frame_b, intrinsics, max_corners=80):
    """Harris + LK + eight-point + cheirality on one frame pair.

    Returns (RelativeMotion, info) or (None, info) when any stage degenerates.
    """
    info = {"n_corners": 0, "n_tracked": 0, "max_epipolar_residual": None, "failure": None}
    corners = vision.harris_corners(frame_a, max_corners)
    info["n_corners"] = len(corners)
    if len(corners) < 8:
        info["failure"] = "too_few_corners"
        return None, info
    tracked, status = vision.lucas_kanade(frame_a, frame_b, corners)
    info["n_tracked"] = int(status.sum())
    if status.sum() < 8:
        info["failure"] = "too_few_tracks"
        return None, info
    corr = vision.Correspondences.from_pixels(corners[status], tracked[status], intrinsics)
    try:
        E = vision.estimate_essential(corr)
        motion = vision.decompose_essential(E, corr)
    except (vision.DegenerateConfigurationError, vision.AmbiguousDecompositionError,
            vision.InvalidInputError) as exc:
        info["failure"] = type(exc).__name__
        return None, info
    info["max_epipolar_residual"] = float(vision.epipolar_residuals(E, corr).max())
    return motion, info


def rollout(cal, frames, intrinsics, alpha=None, max_corners=80, max_candidates=MAX_CANDIDATES):
    """Sequential pose selection over a frame sequence.

    Step 0 is the argmax-softmax decode; each later step predicts a set,
    enumerates cuboid candidates, estimates relative motion from the frame
    pair, and selects the orientation and position modes independently.
    Returns (Trajectory, diagnostics), one diagnostics record per step.
    """
    if len(frames) < 2:
        raise vision.InvalidInputError("rollout needs at least two frames")
    thresholds = cal.thresholds if alpha is None else cal.thresholds_for(alpha)
    stationary_tol = _grid_resolution(cal.grid)
    feats = extract_features_batch(frames, blocks=cal.model.blocks)
    all_scores = cal.model.scores(feats)
    argmax_poses = argmax_decode(cal, feats)

    poses = [argmax_poses[0]]
    diagnostics = [{"step": 0, "mode": "argmax_start"}]
    unreachable_streak = 0
    reanchor_escalation = 0
    for i in range(1, len(frames)):
        scores_i = [p[i] for p in all_scores]
        pset = conformal._sets_from_scores(scores_i, thresholds, cal.grid)
        region = conformal.to_region(pset, cal.grid, scores=scores_i)
        diag = {
            "step": i,
            "set_sizes": pset.sizes.tolist(),
            "empty_set_fallbacks": pset.fallback.tolist(),
            "cuboid_count": region.cuboid_count,
            "mode": "reasoning",
        }
        pos_cands = marginal_candidates(region, POSITION_DIMS)
        ori_cands = marginal_candidates(region, ORIENTATION_DIMS)
        viable = 0 < len(ori_cands) <= max_candidates and \
            0 < len(pos_cands) <= max_candidates
        if not viable:
            diag["mode"] = "argmax_fallback"
            diag["failure"] = "too_many_cuboids" if pos_cands and ori_cands else "no_candidates"

        motion = None
        if viable:
            motion, info = estimate_relative_motion(
                frames[i - 1], frames[i], intrinsics, max_corners
            )
            diag.update(info)
        if not viable or motion is None:
            poses.append(argmax_poses[i])
            if diag["mode"] == "reasoning":
                diag["mode"] = "argmax_fallback"
            diagnostics.append(diag)
            continue

        prev = poses[-1]
        orient = select_orientation(ori_cands, motion.rotation, prev.orientation)
        r_next = compose_rotation(motion.rotation, quat_to_rotmat(prev.orientation))
        step_dir = -r_next.T @ motion.translation
        step_dir /= np.linalg.norm(step_dir)
        max_step = PLAUSIBLE_STEP_FACTOR * stationary_tol
        reachable = [
            c for c in pos_cands
            if np.linalg.norm(c.position - prev.position) <= max_step
        ]
        if reachable:
            unreachable_streak = 0
            reanchor_escalation = 0
            pos, stationary = select_position(reachable, step_dir, prev.position,
                                              stationary_tol=stationary_tol)
            position = pos.position
            diag["stationary_fallback"] = stationary
            diag["selected_cuboids"] = {
                "orientation": list(orient.source), "position": list(pos.source)
            }
        else:
            # every candidate implies an implausibly large step; teleporting to
            # one would dominate the trajectory error, so hold position, and if
            # the condition persists treat the anchor as wrong and re-anchor
            unreachable_streak += 1
            if unreachable_streak >= REANCHOR_PATIENCE or reanchor_escalation > 0:
                unreachable_streak = 0
                reanchor_escalation = min(reanchor_escalation + 1, 20)
                radius = max_step * REANCHOR_RADIUS_BASE ** reanchor_escalation
                local = [
                    c for c in pos_cands
                    if np.linalg.norm(c.position - prev.position) <= radius
                ]
                pool = local or pos_cands
                pos = sorted(pool, key=lambda c: (-c.mass, c.index))[0]
                position = pos.position
                diag["position_reanchor"] = True
            else:
                position = prev.position
                diag["position_hold"] = True
        poses.append(Pose(position, orient.orientation))
        diagnostics.append(diag)
    return Trajectory(tuple(range(len(frames))), tuple(poses)), diagnostics


def diagnostics_to_jsonl(diagnostics):
    """One JSON record per rollout step."""
    return "\n".join(json.dumps(d, sort_keys=True) for d in diagnostics) + "\n"
