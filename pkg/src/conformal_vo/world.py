"""Synthetic scene and trajectory generation for the experiment harness.

The camera travels a smooth closed loop around a random landmark cloud,
looking inward, for a configurable number of laps; positions come from a
periodic cubic spline through random control points and orientations from
slerp between look-at keyframes with small perturbations.  Because the loop
repeats, the contiguous train/calibration/test blocks revisit the same region
of pose space, which is what makes learned pose classification meaningful.

The symmetric variant builds a landmark field with an exact 180-degree
rotational symmetry about the vertical axis and a path with the matching
symmetry, so frames half a lap apart are near-identical (up to a small
intensity asymmetry) and position/orientation prediction sets split into
disjoint modes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DegenerateViewError, GenerationError, InvalidInputError
from .geometry import Pose, Trajectory, normalize_quat, rotmat_to_quat
from .vision import Intrinsics, SyntheticScene, random_patches, render

SYMMETRY_INTENSITY_RATIO = 0.85  # mild asymmetry keeps the argmax start well-defined


def slerp(q0, q1, t):
    """Spherical interpolation between unit quaternions (shortest arc)."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 1.0 - 1e-12:
        return normalize_quat(q0 + t * (q1 - q0))
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    return normalize_quat(
        (np.sin((1 - t) * theta) * q0 + np.sin(t * theta) * q1) / np.sin(theta)
    )


def look_at_rotation(position, target, up=(0.0, 0.0, 1.0)):
    """World-to-camera rotation pointing the optical axis from position to target."""
    forward = np.asarray(target, dtype=float) - np.asarray(position, dtype=float)
    n = np.linalg.norm(forward)
    if n < 1e-9:
        raise InvalidInputError("camera position coincides with the look-at target")
    forward = forward / n
    right = np.cross(forward, np.asarray(up, dtype=float))
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
        rn = np.linalg.norm(right)
    right = right / rn
    down = np.cross(forward, right)
    return np.stack([right, down, forward])


def _axis_angle_quat(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2.0)], np.sin(angle / 2.0) * axis])


def _quat_multiply(a, b):
    w0, x0, y0, z0 = a
    w1, x1, y1, z1 = b
    return np.array(
        [
            w0 * w1 - x0 * x1 - y0 * y1 - z0 * z1,
            w0 * x1 + x0 * w1 + y0 * z1 - z0 * y1,
            w0 * y1 - x0 * z1 + y0 * w1 + z0 * x1,
            w0 * z1 + x0 * y1 - y0 * x1 + z0 * w1,
        ]
    )


@dataclass(frozen=True)
class World:
    """A generated scene, its ground-truth trajectory, rendered frames, and splits."""

    scene: SyntheticScene
    trajectory: Trajectory
    frames: tuple
    splits: dict  # name -> (start, stop) frame ranges; contiguous and disjoint


def _loop_controls(rng, n_keys, radius, radial_amp, z_amp, symmetric):
    """Control points of the closed loop; the symmetric variant satisfies
    p(s + 1/2) = Rz(pi) p(s)."""
    if symmetric and n_keys % 2:
        raise InvalidInputError("symmetric loops need an even key count")
    angles = 2.0 * np.pi * np.arange(n_keys) / n_keys
    if symmetric:
        half = n_keys // 2
        dr_half = rng.uniform(-radial_amp, radial_amp, half)
        dz_half = rng.uniform(-z_amp, z_amp, half)
        dr = np.concatenate([dr_half, dr_half])
        dz = np.concatenate([dz_half, dz_half])
    else:
        dr = rng.uniform(-radial_amp, radial_amp, n_keys)
        dz = rng.uniform(-z_amp, z_amp, n_keys)
    r = radius + dr
    return np.column_stack([r * np.cos(angles), r * np.sin(angles), dz])


def _key_orientations(rng, controls, wiggle, symmetric):
    n_keys = len(controls)
    if symmetric:
        half = n_keys // 2
        axes = rng.normal(size=(half, 3))
        angs = rng.uniform(-wiggle, wiggle, half)
        axes = np.concatenate([axes, axes])
        angs = np.concatenate([angs, angs])
    else:
        axes = rng.normal(size=(n_keys, 3))
        angs = rng.uniform(-wiggle, wiggle, n_keys)
    quats = []
    for p, ax, an in zip(controls, axes, angs):
        q_look = rotmat_to_quat(look_at_rotation(p, np.zeros(3)))
        quats.append(normalize_quat(_quat_multiply(_axis_angle_quat(ax, an), q_look)))
    return quats


def generate_world(
    seed,
    n_frames=300,
    laps=2.1,
    n_landmarks=40,
    symmetric=False,
    image_size=128,
    focal=110.0,
    split_fractions=(0.6, 0.2, 0.2),
    loop_radius=6.0,
    cloud_radius=2.2,
    n_keys=12,
    orientation_wiggle=0.12,
):
    """Deterministic world: scene, spline/slerp trajectory, frames, block splits."""
    if n_frames < 10:
        raise InvalidInputError("n_frames must be at least 10")
    if abs(sum(split_fractions) - 1.0) > 1e-9:
        raise InvalidInputError("split fractions must sum to 1")
    rng = np.random.default_rng(seed)

    base = rng.uniform(-cloud_radius, cloud_radius, size=(n_landmarks, 3))
    base_intensity = rng.uniform(0.45, 1.0, n_landmarks)
    base_patches = random_patches(rng, n_landmarks, 5)
    if symmetric:
        # half-turn copy about the vertical axis; reusing the base textures
        # makes frames half a lap apart near-identical
        mirrored = base.copy()
        mirrored[:, 0] = -mirrored[:, 0]
        mirrored[:, 1] = -mirrored[:, 1]
        landmarks = np.vstack([base, mirrored])
        intensities = np.concatenate([base_intensity, base_intensity * SYMMETRY_INTENSITY_RATIO])
        patches = np.concatenate([base_patches, base_patches])
    else:
        landmarks = base
        intensities = base_intensity
        patches = base_patches
    intr = Intrinsics(fx=focal, fy=focal, cx=image_size / 2.0, cy=image_size / 2.0)
    scene = SyntheticScene(
        landmarks=landmarks, intensities=intensities, intrinsics=intr,
        height=image_size, width=image_size, patches=patches,
    )

    controls = _loop_controls(rng, n_keys, loop_radius, 0.4, 0.3, symmetric)
    key_s = np.arange(n_keys + 1) / n_keys
    closed = np.vstack([controls, controls[:1]])
    spline = CubicSpline(key_s, closed, bc_type="periodic")
    key_quats = _key_orientations(rng, controls, orientation_wiggle, symmetric)

    poses = []
    for i in range(n_frames):
        s = (i * laps / n_frames) % 1.0
        p = spline(s)
        seg = min(int(s * n_keys), n_keys - 1)
        t = s * n_keys - seg
        q = slerp(key_quats[seg], key_quats[(seg + 1) % n_keys], t)
        poses.append(Pose(p, q))
    trajectory = Trajectory(tuple(range(n_frames)), tuple(poses))

    frames = []
    for pose in poses:
        try:
            frames.append(render(scene, pose))
        except DegenerateViewError as exc:
            raise GenerationError(f"infeasible scene for seed {seed}: {exc}") from exc

    n_train = int(round(split_fractions[0] * n_frames))
    n_calib = int(round(split_fractions[1] * n_frames))
    splits = {
        "train": (0, n_train),
        "calib": (n_train, n_train + n_calib),
        "test": (n_train + n_calib, n_frames),
    }
    return World(scene=scene, trajectory=trajectory, frames=tuple(frames), splits=splits)


def add_pixel_noise(frames, sigma, seed):
    """I.i.d. Gaussian pixel noise, clamped back to [0, 1]; deterministic."""
    if sigma < 0:
        raise InvalidInputError("noise sigma must be >= 0")
    if sigma == 0:
        return tuple(frames)
    rng = np.random.default_rng(seed)
    return tuple(np.clip(f + rng.normal(0.0, sigma, f.shape), 0.0, 1.0) for f in frames)


def sample_iid_poses(seed, n, **world_kwargs):
    """Exchangeable pose/frame pool: i.i.d. loop positions on a fixed world.

    Used by the coverage audit, where the conformal guarantee needs
    exchangeable calibration/test data rather than a temporally ordered
    trajectory.  Returns (scene, poses, frames).
    """
    base = generate_world(seed, n_frames=10, **world_kwargs)
    spline, key_quats, nk = _audit_path(seed, **world_kwargs)
    rng = np.random.default_rng(seed + 1)
    poses = []
    frames = []
    while len(poses) < n:
        s = rng.uniform(0.0, 1.0)
        p = spline(s)
        seg = min(int(s * nk), nk - 1)
        t = s * nk - seg
        q = slerp(key_quats[seg], key_quats[(seg + 1) % nk], t)
        pose = Pose(p, q)
        try:
            frame = render(base.scene, pose)
        except DegenerateViewError:
            continue
        poses.append(pose)
        frames.append(frame)
    return base.scene, tuple(poses), tuple(frames)


def _audit_path(seed, n_keys=12, loop_radius=6.0, symmetric=False,
                orientation_wiggle=0.12, **_ignored):
    """Rebuild the same loop path generate_world(seed) uses."""
    rng = np.random.default_rng(seed)
    # consume the landmark draws exactly as generate_world does
    n_landmarks = _ignored.get("n_landmarks", 40)
    cloud_radius = _ignored.get("cloud_radius", 2.2)
    rng.uniform(-cloud_radius, cloud_radius, size=(n_landmarks, 3))
    rng.uniform(0.45, 1.0, n_landmarks)
    random_patches(rng, n_landmarks, 5)
    controls = _loop_controls(rng, n_keys, loop_radius, 0.4, 0.3, symmetric)
    key_s = np.arange(n_keys + 1) / n_keys
    spline = CubicSpline(key_s, np.vstack([controls, controls[:1]]), bc_type="periodic")
    key_quats = _key_orientations(rng, controls, orientation_wiggle, symmetric)
    return spline, key_quats, n_keys
