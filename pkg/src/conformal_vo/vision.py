"""Synthetic scene rendering and the two-frame geometric stack.

Rendering projects textured 3-D landmarks through a pinhole camera; the
geometric stack recovers relative motion between consecutive frames via
Harris corners, pyramidal Lucas-Kanade tracking, the normalized eight-point
essential-matrix estimate, and its SVD decomposition with a cheirality test.

Coordinate conventions:
  - Pixel points are (x, y) = (column, row), floats.
  - A pose's orientation is world-to-camera: Xc = R @ (X - p).
  - The recovered RelativeMotion satisfies Xc1 ~ R_rel @ Xc0 + s * t with
    R_rel = R1 @ R0^T and t proportional to R1 @ (p0 - p1); t is returned
    unit length, sign resolved by the cheirality test.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import (
    AmbiguousDecompositionError,
    DegenerateConfigurationError,
    DegenerateViewError,
    InvalidInputError,
)
from .geometry import project_to_rotation, validate_rotation

MIN_DEPTH = 0.1
MIN_VISIBLE = 8

# Harris defaults (the detector is parameter-free at call sites)
HARRIS_K = 0.04
HARRIS_SIGMA = 1.0
HARRIS_NMS_RADIUS = 5
HARRIS_REL_THRESHOLD = 0.003

# Lucas-Kanade defaults
LK_WINDOW = 15
LK_LEVELS = 3
LK_MAX_ITERS = 30
LK_RESIDUAL_THRESHOLD = 0.2
LK_MIN_EIG = 1e-4


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidInputError("focal lengths must be positive")

    def normalize(self, pts):
        """Pixel (x, y) points to normalized camera coordinates."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.column_stack([(pts[:, 0] - self.cx) / self.fx, (pts[:, 1] - self.cy) / self.fy])


@dataclass(frozen=True)
class SyntheticScene:
    """Landmark field with per-landmark texture patches and a camera model.

    Each landmark carries its own aperiodic random patch; a periodic texture
    (e.g. a checkerboard) would let the tracker alias onto integer-shifted
    alignments.
    """

    landmarks: np.ndarray  # N x 3, meters
    intensities: np.ndarray  # N, in (0, 1]
    intrinsics: Intrinsics
    height: int = 96
    width: int = 96
    patch_size: int = 5
    patches: np.ndarray | None = None  # N x patch_size x patch_size, in [0, 1]

    def __post_init__(self):
        lm = np.asarray(self.landmarks, dtype=float)
        inten = np.asarray(self.intensities, dtype=float)
        if lm.ndim != 2 or lm.shape[1] != 3 or len(inten) != len(lm):
            raise InvalidInputError("landmarks must be N x 3 with matching intensities")
        if self.height < 32 or self.width < 32:
            raise InvalidInputError("frames must be at least 32 x 32")
        if self.patches is None:
            patches = np.tile(_default_patch(self.patch_size), (len(lm), 1, 1))
        else:
            patches = np.asarray(self.patches, dtype=float)
            if patches.shape != (len(lm), self.patch_size, self.patch_size):
                raise InvalidInputError("patches must be N x patch_size x patch_size")
        lm.setflags(write=False)
        inten.setflags(write=False)
        patches.setflags(write=False)
        object.__setattr__(self, "landmarks", lm)
        object.__setattr__(self, "intensities", inten)
        object.__setattr__(self, "patches", patches)

    def to_json(self):
        return json.dumps(
            {
                "schema": "synthetic-scene-v1",
                "landmarks": self.landmarks.tolist(),
                "intensities": self.intensities.tolist(),
                "intrinsics": [self.intrinsics.fx, self.intrinsics.fy,
                               self.intrinsics.cx, self.intrinsics.cy],
                "height": self.height,
                "width": self.width,
                "patch_size": self.patch_size,
                "patches": self.patches.tolist(),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("schema") != "synthetic-scene-v1":
            raise InvalidInputError("unrecognized scene schema")
        fx, fy, cx, cy = doc["intrinsics"]
        return cls(
            landmarks=np.array(doc["landmarks"]),
            intensities=np.array(doc["intensities"]),
            intrinsics=Intrinsics(fx, fy, cx, cy),
            height=int(doc["height"]),
            width=int(doc["width"]),
            patch_size=int(doc["patch_size"]),
            patches=np.array(doc["patches"]) if "patches" in doc else None,
        )


def _default_patch(size):
    rng = np.random.default_rng(12345)
    return rng.uniform(0.1, 1.0, size=(size, size))


def random_patches(rng, n, size):
    """Aperiodic high-contrast texture patches, one per landmark."""
    return rng.uniform(0.1, 1.0, size=(n, size, size))


def render(scene, pose):
    """Render a frame: each visible landmark stamped as its texture patch.

    Patches are placed with bilinear sub-pixel weighting so intensities vary
    smoothly under fractional camera motion.  Raises DegenerateViewError when
    fewer than 8 landmarks fall inside the image.
    """
    R = pose.rotation_matrix()
    cam = (scene.landmarks - pose.position) @ R.T
    z = cam[:, 2]
    frame = np.zeros((scene.height, scene.width))
    half = scene.patch_size // 2
    visible = 0
    K = scene.intrinsics
    for i in np.flatnonzero(z > MIN_DEPTH):
        u = K.fx * cam[i, 0] / z[i] + K.cx
        v = K.fy * cam[i, 1] / z[i] + K.cy
        r0, c0 = int(np.floor(v)) - half, int(np.floor(u)) - half
        fr, fc = v - np.floor(v), u - np.floor(u)
        if r0 < 0 or c0 < 0 or r0 + scene.patch_size + 1 > scene.height or \
           c0 + scene.patch_size + 1 > scene.width:
            continue
        visible += 1
        p = scene.patches[i] * scene.intensities[i]
        s = scene.patch_size
        frame[r0:r0 + s, c0:c0 + s] += p * (1 - fr) * (1 - fc)
        frame[r0:r0 + s, c0 + 1:c0 + s + 1] += p * (1 - fr) * fc
        frame[r0 + 1:r0 + s + 1, c0:c0 + s] += p * fr * (1 - fc)
        frame[r0 + 1:r0 + s + 1, c0 + 1:c0 + s + 1] += p * fr * fc
    if visible < MIN_VISIBLE:
        raise DegenerateViewError(f"only {visible} landmarks visible")
    return np.clip(frame, 0.0, 1.0)


def harris_corners(frame, max_points, k=HARRIS_K, sigma=HARRIS_SIGMA,
                   nms_radius=HARRIS_NMS_RADIUS, rel_threshold=HARRIS_REL_THRESHOLD,
                   border=None):
    """Harris corner detection with non-maximum suppression.

    Returns up to ``max_points`` (x, y) points sorted by decreasing response;
    may be empty on featureless frames.
    """
    frame = np.asarray(frame, dtype=float)
    gy, gx = np.gradient(frame)
    ixx = ndimage.gaussian_filter(gx * gx, sigma)
    iyy = ndimage.gaussian_filter(gy * gy, sigma)
    ixy = ndimage.gaussian_filter(gx * gy, sigma)
    response = ixx * iyy - ixy * ixy - k * (ixx + iyy) ** 2
    peak = response.max()
    if peak <= 1e-12:
        return np.empty((0, 2))
    if border is None:
        border = LK_WINDOW // 2 + 2
    footprint = 2 * nms_radius + 1
    local_max = ndimage.maximum_filter(response, size=footprint)
    mask = (response == local_max) & (response > rel_threshold * peak)
    mask[:border, :] = mask[-border:, :] = False
    mask[:, :border] = mask[:, -border:] = False
    rows, cols = np.nonzero(mask)
    if len(rows) == 0:
        return np.empty((0, 2))
    order = np.argsort(-response[rows, cols], kind="stable")[:max_points]
    return np.column_stack([cols[order], rows[order]]).astype(float)


def _pyramid(frame, levels):
    pyr = [np.asarray(frame, dtype=float)]
    for _ in range(levels - 1):
        pyr.append(ndimage.gaussian_filter(pyr[-1], 1.0)[::2, ::2])
    return pyr


def _sample(img, xs, ys):
    """Bilinear sampling at (P, w, w) coordinate grids."""
    return ndimage.map_coordinates(img, [ys.ravel(), xs.ravel()], order=1, mode="nearest").reshape(xs.shape)


def lucas_kanade(frame_a, frame_b, points, window=LK_WINDOW, levels=LK_LEVELS,
                 max_iters=LK_MAX_ITERS, residual_threshold=LK_RESIDUAL_THRESHOLD,
                 min_eig=LK_MIN_EIG):
    """Pyramidal Lucas-Kanade tracking of points from frame_a into frame_b.

    Returns (tracked_points, status): per point, its (x, y) location in
    frame_b and whether tracking is trusted.  Points with a near-singular
    structure tensor, out-of-bounds windows, or a large final residual are
    rejected via status, never raised.
    """
    frame_a = np.asarray(frame_a, dtype=float)
    frame_b = np.asarray(frame_b, dtype=float)
    if frame_a.shape != frame_b.shape:
        raise InvalidInputError("frames must share a shape")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(points)
    if n == 0:
        return np.empty((0, 2)), np.empty(0, dtype=bool)

    pyr_a = _pyramid(frame_a, levels)
    pyr_b = _pyramid(frame_b, levels)
    half = window // 2
    off = np.arange(-half, half + 1, dtype=float)
    ox, oy = np.meshgrid(off, off)

    disp = np.zeros((n, 2))
    status = np.ones(n, dtype=bool)
    residual = np.zeros(n)
    for level in range(levels - 1, -1, -1):
        a, b = pyr_a[level], pyr_b[level]
        h, w = a.shape
        gy_a, gx_a = np.gradient(a)
        pts = points / (2.0 ** level)
        disp *= 2.0 if level < levels - 1 else 1.0

        xs = pts[:, 0][:, None, None] + ox
        ys = pts[:, 1][:, None, None] + oy
        inb = (xs.min(axis=(1, 2)) >= 0) & (ys.min(axis=(1, 2)) >= 0) & \
              (xs.max(axis=(1, 2)) <= w - 1) & (ys.max(axis=(1, 2)) <= h - 1)
        status &= inb
        tmpl = _sample(a, xs, ys)
        gx = _sample(gx_a, xs, ys)
        gy = _sample(gy_a, xs, ys)
        gxx = (gx * gx).sum(axis=(1, 2))
        gyy = (gy * gy).sum(axis=(1, 2))
        gxy = (gx * gy).sum(axis=(1, 2))
        tr = gxx + gyy
        det = gxx * gyy - gxy * gxy
        min_eigs = (tr - np.sqrt(np.maximum(tr * tr - 4 * det, 0.0))) / 2.0
        status &= min_eigs / (window * window) > min_eig

        for _ in range(max_iters):
            bx = xs + disp[:, 0][:, None, None]
            by = ys + disp[:, 1][:, None, None]
            cur = _sample(b, bx, by)
            diff = tmpl - cur
            ex = (gx * diff).sum(axis=(1, 2))
            ey = (gy * diff).sum(axis=(1, 2))
            safe_det = np.where(np.abs(det) < 1e-12, 1.0, det)
            du = (gyy * ex - gxy * ey) / safe_det
            dv = (gxx * ey - gxy * ex) / safe_det
            step = np.column_stack([du, dv])
            step[~status] = 0.0
            disp += step
            if np.max(np.abs(step)) < 1e-3:
                break
        bx = xs + disp[:, 0][:, None, None]
        by = ys + disp[:, 1][:, None, None]
        inb_b = (bx.min(axis=(1, 2)) >= 0) & (by.min(axis=(1, 2)) >= 0) & \
                (bx.max(axis=(1, 2)) <= w - 1) & (by.max(axis=(1, 2)) <= h - 1)
        status &= inb_b
        residual = np.mean(np.abs(tmpl - _sample(b, bx, by)), axis=(1, 2))
    status &= residual <= residual_threshold
    return points + disp, status


@dataclass(frozen=True)
class Correspondences:
    """Paired points between two frames, pixel and normalized coordinates."""

    p0: np.ndarray
    p1: np.ndarray
    x0: np.ndarray
    x1: np.ndarray

    def __len__(self):
        return len(self.p0)

    @classmethod
    def from_pixels(cls, p0, p1, intrinsics):
        p0 = np.atleast_2d(np.asarray(p0, dtype=float))
        p1 = np.atleast_2d(np.asarray(p1, dtype=float))
        if p0.shape != p1.shape:
            raise InvalidInputError("point lists must have equal shapes")
        return cls(p0=p0, p1=p1, x0=intrinsics.normalize(p0), x1=intrinsics.normalize(p1))

    @classmethod
    def from_normalized(cls, x0, x1):
        x0 = np.atleast_2d(np.asarray(x0, dtype=float))
        x1 = np.atleast_2d(np.asarray(x1, dtype=float))
        if x0.shape != x1.shape:
            raise InvalidInputError("point lists must have equal shapes")
        return cls(p0=x0, p1=x1, x0=x0, x1=x1)

    def to_json(self):
        return json.dumps(
            {
                "schema": "correspondences-v1",
                "p0": self.p0.tolist(), "p1": self.p1.tolist(),
                "x0": self.x0.tolist(), "x1": self.x1.tolist(),
            },
            sort_keys=True,
        )


@dataclass(frozen=True)
class RelativeMotion:
    """Relative rotation and unit translation direction in camera-1 frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = validate_rotation(self.rotation)
        t = np.asarray(self.translation, dtype=float)
        if abs(np.linalg.norm(t) - 1.0) > 1e-9:
            raise InvalidInputError("translation must be unit length")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)


def _hartley_normalize(x):
    centroid = x.mean(axis=0)
    d = np.linalg.norm(x - centroid, axis=1).mean()
    scale = np.sqrt(2.0) / d if d > 1e-12 else 1.0
    T = np.array([
        [scale, 0.0, -scale * centroid[0]],
        [0.0, scale, -scale * centroid[1]],
        [0.0, 0.0, 1.0],
    ])
    xh = np.column_stack([x, np.ones(len(x))]) @ T.T
    return xh[:, :2], T


def estimate_essential(corr):
    """Normalized eight-point estimate of the essential matrix.

    Satisfies x1^T E x0 = 0 on the correspondences; singular values are
    projected to (s, s, 0).  Raises on fewer than 8 points or a
    rank-deficient design matrix.
    """
    if len(corr) < 8:
        raise InvalidInputError(f"need >= 8 correspondences, got {len(corr)}")
    x0, t0 = _hartley_normalize(corr.x0)
    x1, t1 = _hartley_normalize(corr.x1)
    a = np.column_stack([
        x1[:, 0] * x0[:, 0], x1[:, 0] * x0[:, 1], x1[:, 0],
        x1[:, 1] * x0[:, 0], x1[:, 1] * x0[:, 1], x1[:, 1],
        x0[:, 0], x0[:, 1], np.ones(len(x0)),
    ])
    _, s, vt = np.linalg.svd(a)
    if len(s) < 9 or s[7] < 1e-9 * s[0]:
        raise DegenerateConfigurationError("correspondence configuration is degenerate")
    e = vt[-1].reshape(3, 3)
    e = t1.T @ e @ t0
    # project onto the essential manifold: singular values (s, s, 0)
    u, sv, vvt = np.linalg.svd(e)
    sm = (sv[0] + sv[1]) / 2.0
    e = u @ np.diag([sm, sm, 0.0]) @ vvt
    return e / np.linalg.norm(e) * np.sqrt(2.0)


def _triangulate_depths(x0, x1, R, t):
    """Depths of DLT-triangulated points in both cameras for P0=[I|0], P1=[R|t]."""
    p0 = np.hstack([np.eye(3), np.zeros((3, 1))])
    p1 = np.hstack([R, t.reshape(3, 1)])
    z0 = np.empty(len(x0))
    z1 = np.empty(len(x0))
    for i in range(len(x0)):
        a = np.stack([
            x0[i, 0] * p0[2] - p0[0],
            x0[i, 1] * p0[2] - p0[1],
            x1[i, 0] * p1[2] - p1[0],
            x1[i, 1] * p1[2] - p1[1],
        ])
        _, _, vt = np.linalg.svd(a)
        xh = vt[-1]
        if abs(xh[3]) < 1e-12:
            z0[i] = z1[i] = 0.0
            continue
        pt = xh[:3] / xh[3]
        z0[i] = pt[2]
        z1[i] = (R @ pt + t)[2]
    return z0, z1


def decompose_essential(E, corr):
    """SVD factorization of E into the cheirality-consistent (R, t) candidate."""
    if len(corr) < 1:
        raise InvalidInputError("need at least one correspondence for disambiguation")
    u, s, vt = np.linalg.svd(np.asarray(E, dtype=float))
    if s[0] <= 0 or (s[0] - s[1]) / s[0] > 1e-3 or s[2] / s[0] > 1e-3:
        raise InvalidInputError(f"singular values {s} are not (s, s, 0)")
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    r1 = project_to_rotation(u @ w @ vt)
    r2 = project_to_rotation(u @ w.T @ vt)
    t = u[:, 2]
    candidates = [(r1, t), (r1, -t), (r2, t), (r2, -t)]
    counts = []
    for R, tc in candidates:
        z0, z1 = _triangulate_depths(corr.x0, corr.x1, R, tc)
        counts.append(int(np.sum((z0 > 0) & (z1 > 0))))
    best = int(np.argmax(counts))
    if counts.count(counts[best]) > 1:
        raise AmbiguousDecompositionError(f"cheirality tie among candidates: {counts}")
    R, tc = candidates[best]
    return RelativeMotion(rotation=R, translation=tc / np.linalg.norm(tc))


def skew(v):
    v = np.asarray(v, dtype=float)
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])


def epipolar_residuals(E, corr):
    """|x1^T E x0| per correspondence."""
    x0h = np.column_stack([corr.x0, np.ones(len(corr))])
    x1h = np.column_stack([corr.x1, np.ones(len(corr))])
    return np.abs(np.einsum("ij,jk,ik->i", x1h, E, x0h))


def write_pgm(frame, path):
    """Serialize a [0,1] intensity frame as an 8-bit binary PGM (P5)."""
    img = np.clip(np.asarray(frame, dtype=float) * 255.0, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise InvalidInputError("not a binary PGM file")
    w, h = map(int, parts[1].split())
    img = np.frombuffer(parts[3], dtype=np.uint8, count=h * w).reshape(h, w)
    return img.astype(float) / 255.0
