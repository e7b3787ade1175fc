"""Feature extraction, the multi-head softmax classifier, and the regression baseline.

The feature extractor is deliberately simple and deterministic: block-mean
intensities plus block-mean gradient magnitudes.  Both the classifier and the
baseline regressor consume the same features, so comparisons between the two
arms differ only in the prediction machinery.

Training is full-batch gradient descent with step halving on any loss
increase, which keeps the loss monotone non-increasing and the whole
procedure bit-deterministic for a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import InvalidInputError
from .geometry import normalize_quat

CONVERGENCE_RTOL = 1e-6
MAX_HALVINGS = 50


def extract_features(frame, blocks=8):
    """Block-statistics feature vector of a grayscale frame.

    Concatenates blocks x blocks intensity means with per-block mean
    horizontal and vertical gradient magnitudes (3 * blocks**2 features).
    Two choices keep the features stable under i.i.d. pixel noise: gradients
    are taken on a smoothed copy of the frame (the rectified gradient of raw
    noise would add a large positive bias to every block), and each channel
    is centered by its frame-wide mean, which cancels the common-mode shift
    that clamped noise adds to dark regions.  Frame height and width must be
    divisible by ``blocks``.
    """
    frame = np.asarray(frame, dtype=float)
    if frame.ndim != 2:
        raise InvalidInputError("frame must be a 2-D intensity grid")
    h, w = frame.shape
    if h % blocks or w % blocks:
        raise InvalidInputError(f"frame shape {frame.shape} not divisible into {blocks} blocks")
    gy, gx = np.gradient(gaussian_filter(frame, 2.0))

    def channel(img):
        m = img.reshape(blocks, h // blocks, blocks, w // blocks).mean(axis=(1, 3))
        return (m - m.mean()).ravel()

    return np.concatenate([channel(frame), channel(np.abs(gx)), channel(np.abs(gy))])


def extract_features_batch(frames, blocks=8):
    return np.stack([extract_features(f, blocks) for f in frames])


def softmax(logits, axis=-1):
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class _Head:
    """One classification head; ``w1 is None`` means a plain linear head."""

    w1: np.ndarray | None
    b1: np.ndarray | None
    w2: np.ndarray
    b2: np.ndarray
    n_classes: int
    constant_class: int | None = None  # set when training saw a single label

    def logits(self, x):
        if self.w1 is None:
            return x @ self.w2 + self.b2
        return np.tanh(x @ self.w1 + self.b1) @ self.w2 + self.b2


def head_loss_and_grad(head, x, y_onehot, l2=0.0):
    """Mean cross-entropy (plus L2 on weights) and its analytic gradients.

    Returns (loss, grads) where grads mirrors the head's parameter layout;
    kept as a standalone function so finite-difference checks can call it.
    """
    n = x.shape[0]
    if head.w1 is None:
        logits = x @ head.w2 + head.b2
        p = softmax(logits)
        loss = -np.mean(np.sum(y_onehot * np.log(p + 1e-300), axis=1))
        loss += 0.5 * l2 * np.sum(head.w2**2)
        delta = (p - y_onehot) / n
        return loss, {"w2": x.T @ delta + l2 * head.w2, "b2": delta.sum(axis=0)}
    z1 = x @ head.w1 + head.b1
    h = np.tanh(z1)
    logits = h @ head.w2 + head.b2
    p = softmax(logits)
    loss = -np.mean(np.sum(y_onehot * np.log(p + 1e-300), axis=1))
    loss += 0.5 * l2 * (np.sum(head.w1**2) + np.sum(head.w2**2))
    delta = (p - y_onehot) / n
    dh = delta @ head.w2.T
    dz1 = dh * (1.0 - h * h)
    return loss, {
        "w1": x.T @ dz1 + l2 * head.w1,
        "b1": dz1.sum(axis=0),
        "w2": h.T @ delta + l2 * head.w2,
        "b2": delta.sum(axis=0),
    }


def _descend(head, x, y_onehot, l2, lr, max_epochs, loss_fn):
    """Gradient descent with step halving; returns the per-epoch loss trace."""
    params = ["w2", "b2"] if head.w1 is None else ["w1", "b1", "w2", "b2"]
    loss, grads = loss_fn(head, x, y_onehot, l2)
    trace = [loss]
    for _ in range(max_epochs):
        stepped = False
        for _ in range(MAX_HALVINGS):
            backup = {p: getattr(head, p).copy() for p in params}
            for p in params:
                setattr(head, p, getattr(head, p) - lr * grads[p])
            new_loss, new_grads = loss_fn(head, x, y_onehot, l2)
            if new_loss <= loss:
                stepped = True
                lr *= 1.1
                break
            for p, v in backup.items():
                setattr(head, p, v)
            lr *= 0.5
        if not stepped:
            break
        converged = abs(loss - new_loss) <= CONVERGENCE_RTOL * max(abs(loss), 1e-12)
        loss, grads = new_loss, new_grads
        trace.append(loss)
        if converged:
            break
    return trace


@dataclass
class MultiHeadModel:
    """Per-dimension softmax heads over a shared standardized feature vector."""

    heads: list
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    capacity: int
    blocks: int
    temperature: float = 1.0
    loss_traces: list = field(default_factory=list)

    @property
    def n_features(self):
        return len(self.feature_mean)

    @property
    def class_counts(self):
        return tuple(h.n_classes for h in self.heads)

    def _standardize(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_features:
            raise InvalidInputError(
                f"feature length {x.shape[-1]} does not match model ({self.n_features})"
            )
        return _standardize_with(x, self.feature_mean, self.feature_scale)

    def scores(self, x):
        """Per-head softmax probabilities; x is a vector or an n x F matrix."""
        single = np.asarray(x).ndim == 1
        xs = self._standardize(np.atleast_2d(x))
        out = []
        for head in self.heads:
            if head.constant_class is not None:
                p = np.zeros((xs.shape[0], head.n_classes))
                p[:, head.constant_class] = 1.0
            else:
                p = softmax(head.logits(xs) / self.temperature)
            out.append(p[0] if single else p)
        return out


def predict_scores(model, feature):
    """Per-head probability vectors for one feature vector."""
    return model.scores(feature)


STANDARDIZED_CLIP = 10.0


def _standardizer(x):
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale < 1e-12] = 1.0
    return mean, scale


def _standardize_with(x, mean, scale):
    """Standardize and clip.

    The clip bounds features that were near-constant during training (tiny
    scale) so that a small absolute shift at test time, e.g. from pixel
    noise, cannot blow up into an arbitrarily large z-score.
    """
    z = (np.asarray(x, dtype=float) - mean) / scale
    return np.clip(z, -STANDARDIZED_CLIP, STANDARDIZED_CLIP)


def _init_head(rng, n_features, n_classes, capacity):
    if capacity <= 0:
        return _Head(None, None, np.zeros((n_features, n_classes)), np.zeros(n_classes), n_classes)
    # w2 starts at zero so the untrained head is exactly uniform; it picks up
    # a nonzero gradient on the first step, after which w1 trains normally.
    w1 = rng.normal(0.0, np.sqrt(1.0 / n_features), size=(n_features, capacity))
    return _Head(w1, np.zeros(capacity), np.zeros((capacity, n_classes)), np.zeros(n_classes), n_classes)


def train_multihead(
    features,
    labels,
    class_counts,
    capacity,
    seed,
    l2=1e-3,
    lr=1.0,
    max_epochs=400,
    temperature=1.0,
    blocks=8,
    label_smoothing=0.0,
):
    """Train one softmax head per pose dimension.

    ``class_counts`` gives the effective class count per head (from the
    fitted grid).  ``capacity`` is the hidden width; 0 trains plain
    multinomial logistic regression on the features.  A head whose training
    labels are a single class becomes a flagged constant one-hot predictor.

    ``label_smoothing`` moves that much target mass to each ordinally
    adjacent class (the classes are contiguous value intervals, so a sample
    near a boundary is evidence for its neighbors too).  With few samples
    per class this lets the heads assign mass to bins that have no training
    sample of their own, which keeps calibrated prediction sets compact.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=int)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise InvalidInputError("features and labels must be matching 2-D arrays")
    if capacity < 0:
        raise InvalidInputError("capacity must be >= 0")
    if not 0.0 <= label_smoothing < 0.5:
        raise InvalidInputError("label_smoothing must be in [0, 0.5)")
    rng = np.random.default_rng(seed)
    mean, scale = _standardizer(x)
    xs = _standardize_with(x, mean, scale)

    heads, traces = [], []
    for d, k in enumerate(class_counts):
        head = _init_head(rng, x.shape[1], k, capacity)
        present = np.unique(y[:, d])
        if len(present) == 1:
            head.constant_class = int(present[0])
            traces.append([])
        else:
            n = x.shape[0]
            targets = np.zeros((n, k))
            targets[np.arange(n), y[:, d]] = 1.0 - 2.0 * label_smoothing
            if label_smoothing > 0.0:
                # edge classes fold the out-of-range neighbor share back in
                left = np.clip(y[:, d] - 1, 0, k - 1)
                right = np.clip(y[:, d] + 1, 0, k - 1)
                np.add.at(targets, (np.arange(n), left), label_smoothing)
                np.add.at(targets, (np.arange(n), right), label_smoothing)
            else:
                targets[np.arange(n), y[:, d]] = 1.0
            traces.append(_descend(head, xs, targets, l2, lr, max_epochs, head_loss_and_grad))
        heads.append(head)
    return MultiHeadModel(
        heads=heads,
        feature_mean=mean,
        feature_scale=scale,
        capacity=capacity,
        blocks=blocks,
        temperature=temperature,
        loss_traces=traces,
    )


@dataclass
class RegressionBaseline:
    """Direct 7-vector pose regressor sharing the classifier's features."""

    head: _Head
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    capacity: int
    blocks: int
    loss_trace: list = field(default_factory=list)

    def predict(self, x):
        """Predicted 7-vectors with the quaternion part renormalized."""
        single = np.asarray(x).ndim == 1
        xs = _standardize_with(np.atleast_2d(x), self.feature_mean, self.feature_scale)
        out = xs @ self.head.w2 + self.head.b2 if self.head.w1 is None else self.head.logits(xs)
        out = out.copy()
        for i in range(out.shape[0]):
            q = out[i, 3:]
            if np.linalg.norm(q) < 1e-9:
                out[i, 3:] = np.array([1.0, 0.0, 0.0, 0.0])
            else:
                out[i, 3:] = normalize_quat(q)
        return out[0] if single else out


def _regression_loss_and_grad(head, x, y, l2=0.0):
    n = x.shape[0]
    if head.w1 is None:
        pred = x @ head.w2 + head.b2
        resid = pred - y
        loss = 0.5 * np.mean(np.sum(resid**2, axis=1)) + 0.5 * l2 * np.sum(head.w2**2)
        delta = resid / n
        return loss, {"w2": x.T @ delta + l2 * head.w2, "b2": delta.sum(axis=0)}
    z1 = x @ head.w1 + head.b1
    h = np.tanh(z1)
    pred = h @ head.w2 + head.b2
    resid = pred - y
    loss = 0.5 * np.mean(np.sum(resid**2, axis=1))
    loss += 0.5 * l2 * (np.sum(head.w1**2) + np.sum(head.w2**2))
    delta = resid / n
    dh = delta @ head.w2.T
    dz1 = dh * (1.0 - h * h)
    return loss, {
        "w1": x.T @ dz1 + l2 * head.w1,
        "b1": dz1.sum(axis=0),
        "w2": h.T @ delta + l2 * head.w2,
        "b2": delta.sum(axis=0),
    }


def train_baseline(features, poses, capacity, seed, l2=1e-3, lr=1.0, max_epochs=400, blocks=8):
    """Train the classical regression arm on the same features and capacity."""
    x = np.asarray(features, dtype=float)
    y = np.asarray(poses, dtype=float)
    if x.ndim != 2 or y.ndim != 2 or y.shape[1] != 7 or x.shape[0] != y.shape[0]:
        raise InvalidInputError("features must be n x F and poses n x 7")
    rng = np.random.default_rng(seed)
    mean, scale = _standardizer(x)
    xs = _standardize_with(x, mean, scale)
    head = _init_head(rng, x.shape[1], 7, capacity)
    trace = _descend(head, xs, y, l2, lr, max_epochs, _regression_loss_and_grad)
    return RegressionBaseline(
        head=head, feature_mean=mean, feature_scale=scale, capacity=capacity, blocks=blocks,
        loss_trace=trace,
    )


def _head_to_doc(head):
    return {
        "w1": None if head.w1 is None else head.w1.tolist(),
        "b1": None if head.b1 is None else head.b1.tolist(),
        "w2": head.w2.tolist(),
        "b2": head.b2.tolist(),
        "n_classes": head.n_classes,
        "constant_class": head.constant_class,
    }


def _head_from_doc(doc):
    return _Head(
        w1=None if doc["w1"] is None else np.array(doc["w1"]),
        b1=None if doc["b1"] is None else np.array(doc["b1"]),
        w2=np.array(doc["w2"]),
        b2=np.array(doc["b2"]),
        n_classes=int(doc["n_classes"]),
        constant_class=doc["constant_class"],
    )


def model_to_json(model):
    if isinstance(model, MultiHeadModel):
        doc = {
            "schema": "multihead-model-v1",
            "heads": [_head_to_doc(h) for h in model.heads],
            "feature_mean": model.feature_mean.tolist(),
            "feature_scale": model.feature_scale.tolist(),
            "capacity": model.capacity,
            "blocks": model.blocks,
            "temperature": model.temperature,
        }
    else:
        doc = {
            "schema": "baseline-model-v1",
            "head": _head_to_doc(model.head),
            "feature_mean": model.feature_mean.tolist(),
            "feature_scale": model.feature_scale.tolist(),
            "capacity": model.capacity,
            "blocks": model.blocks,
        }
    return json.dumps(doc, sort_keys=True)


def model_from_json(text):
    doc = json.loads(text)
    if doc.get("schema") == "multihead-model-v1":
        return MultiHeadModel(
            heads=[_head_from_doc(h) for h in doc["heads"]],
            feature_mean=np.array(doc["feature_mean"]),
            feature_scale=np.array(doc["feature_scale"]),
            capacity=int(doc["capacity"]),
            blocks=int(doc["blocks"]),
            temperature=float(doc["temperature"]),
        )
    if doc.get("schema") == "baseline-model-v1":
        return RegressionBaseline(
            head=_head_from_doc(doc["head"]),
            feature_mean=np.array(doc["feature_mean"]),
            feature_scale=np.array(doc["feature_scale"]),
            capacity=int(doc["capacity"]),
            blocks=int(doc["blocks"]),
        )
    raise InvalidInputError("unrecognized model schema")
