"""Pose, quaternion, and rotation-matrix primitives.

Conventions used throughout the package:
  - Quaternions are length-4 arrays ordered (w, x, y, z), unit norm.
  - Canonical sign: w >= 0; if w == 0, the first nonzero of (x, y, z) >= 0.
    The double cover q / -q therefore maps to a single representative, which
    makes the Euclidean quaternion distance well-defined.
  - A pose's orientation stores the world-to-camera rotation: for a camera at
    position p with rotation matrix R, a world point X appears in camera
    coordinates as R @ (X - p).  With this convention the relative rotation
    recovered from the epipolar geometry composes by left multiplication:
    R_next = R_rel @ R_prev.

All types are immutable after construction and all operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

UNIT_TOL = 1e-6
ORTHO_TOL = 1e-6
DRIFT_TOL = 1e-12


def canonicalize_quat(q):
    """Return the canonical-sign representative of a quaternion.

    Flips the sign so w >= 0; when w == 0 the first nonzero of (x, y, z)
    is made non-negative.  Idempotent.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (4,):
        raise InvalidInputError(f"quaternion must have shape (4,), got {q.shape}")
    w = q[0]
    if w < 0.0:
        return -q
    if w == 0.0:
        for c in q[1:]:
            if c != 0.0:
                return -q if c < 0.0 else q.copy()
    return q.copy()


def normalize_quat(q):
    """Normalize to unit length and canonical sign."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise InvalidInputError("cannot normalize a near-zero quaternion")
    return canonicalize_quat(q / n)


def _check_unit(q):
    q = np.asarray(q, dtype=float)
    if q.shape != (4,):
        raise InvalidInputError(f"quaternion must have shape (4,), got {q.shape}")
    if abs(np.linalg.norm(q) - 1.0) > UNIT_TOL:
        raise InvalidInputError(f"quaternion norm {np.linalg.norm(q):.6g} is not 1")
    return q


def validate_rotation(R, tol=ORTHO_TOL):
    """Check orthonormality and det == +1; returns the matrix as float array."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise InvalidInputError(f"rotation matrix must be 3x3, got {R.shape}")
    err = np.max(np.abs(R.T @ R - np.eye(3)))
    if err > tol:
        raise InvalidInputError(f"matrix is not orthonormal (max deviation {err:.3g})")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise InvalidInputError(f"matrix determinant {np.linalg.det(R):.6g} is not +1")
    return R


def project_to_rotation(M):
    """Nearest rotation matrix in the Frobenius sense (polar decomposition)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    R = U @ Vt
    if np.linalg.det(R) < 0:
        U = U.copy()
        U[:, -1] = -U[:, -1]
        R = U @ Vt
    return R


def quat_to_rotmat(q):
    """Rotation matrix of a unit quaternion (w, x, y, z)."""
    q = _check_unit(q)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotmat_to_quat(R):
    """Unit quaternion (canonical sign) of a rotation matrix.

    Uses the trace-branching construction for numerical stability across
    all rotation angles.
    """
    R = validate_rotation(R)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] >= R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    return normalize_quat(q)


def compose_rotation(R_rel, R_prev):
    """Compose two rotations as R_rel @ R_prev, re-projecting if drift appears."""
    R_rel = validate_rotation(R_rel)
    R_prev = validate_rotation(R_prev)
    R = R_rel @ R_prev
    if np.max(np.abs(R.T @ R - np.eye(3))) > DRIFT_TOL:
        R = project_to_rotation(R)
    return R


def quat_distance(a, b):
    """Euclidean distance between canonicalized unit quaternions; in [0, 2]."""
    a = canonicalize_quat(_check_unit(a))
    b = canonicalize_quat(_check_unit(b))
    return float(np.linalg.norm(a - b))


@dataclass(frozen=True)
class Pose:
    """Camera pose: position in meters plus a unit orientation quaternion."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float)
        if p.shape != (3,):
            raise InvalidInputError(f"position must have shape (3,), got {p.shape}")
        q = normalize_quat(self.orientation)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)
        self.position.setflags(write=False)
        self.orientation.setflags(write=False)

    def rotation_matrix(self):
        return quat_to_rotmat(self.orientation)

    def as_vector(self):
        """7-vector (x, y, z, qw, qx, qy, qz)."""
        return np.concatenate([self.position, self.orientation])

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (7,):
            raise InvalidInputError(f"pose vector must have shape (7,), got {v.shape}")
        return cls(v[:3], normalize_quat(v[3:]))


@dataclass(frozen=True)
class Trajectory:
    """Ordered (frame_index, Pose) sequence with strictly increasing indices."""

    frame_indices: tuple = field(default_factory=tuple)
    poses: tuple = field(default_factory=tuple)

    def __post_init__(self):
        idx = tuple(int(i) for i in self.frame_indices)
        poses = tuple(self.poses)
        if len(idx) != len(poses):
            raise InvalidInputError("frame_indices and poses must have equal length")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise InvalidInputError("frame indices must be strictly increasing")
        object.__setattr__(self, "frame_indices", idx)
        object.__setattr__(self, "poses", poses)

    def __len__(self):
        return len(self.poses)

    def __iter__(self):
        return iter(zip(self.frame_indices, self.poses))

    def as_matrix(self):
        """n x 7 matrix of pose vectors."""
        if not self.poses:
            raise InvalidInputError("trajectory is empty")
        return np.stack([p.as_vector() for p in self.poses])

    def slice(self, start, stop):
        return Trajectory(self.frame_indices[start:stop], self.poses[start:stop])
