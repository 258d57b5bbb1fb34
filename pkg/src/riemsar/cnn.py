"""Small convolutional classifier with analytic backpropagation.

Fixed architecture for 9x9 feature patches: three 3x3 valid convolutions
(channels N -> 32 -> 64 -> C) with ReLU after the first two, global
average pooling, and a softmax head (spatial sizes 9 -> 7 -> 5 -> 3 -> 1).
Everything is plain float64 numpy: im2col convolutions, hand-derived
gradients, Adam updates. Gradients are exact, which the finite-difference
checks in the test suite pin down.

Patches are cut from the projected pixel-feature image around every
labeled pixel (reflect padding at borders) and split 10/90 per class.
Patch sets stay lazy: they hold the padded image plus center indices and
materialize windows per batch, so the 90% test split never costs
full-image memory.

Model checkpoints use the PSARCNN1 binary format: magic, u32 channel and
class counts, per-tensor dimension headers, float64 payloads in
declaration order (little-endian throughout).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import (
    BadMagicError,
    DimensionMismatchError,
    EmptyClassError,
    ShapeMismatchError,
    TruncatedFileError,
)

KERNEL = 3
HIDDEN1 = 32
HIDDEN2 = 64
CNN_MAGIC = b"PSARCNN1"


@dataclass
class TrainConfig:
    """Training hyperparameters; Adam moments and the split live here too."""

    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 50
    patch_size: int = 9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    train_ratio: float = 0.10


@dataclass
class CnnModel:
    """Weights of the three-convolution classifier."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    @property
    def channels(self) -> int:
        return self.w1.shape[1]

    @property
    def classes(self) -> int:
        return self.w3.shape[0]

    def params(self) -> List[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def set_params(self, tensors):
        self.w1, self.b1, self.w2, self.b2, self.w3, self.b3 = tensors


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def for_model(cls, model: CnnModel) -> "AdamState":
        return cls(
            [np.zeros_like(p) for p in model.params()],
            [np.zeros_like(p) for p in model.params()],
        )


def init_model(channels: int, classes: int, seed: int = 0) -> CnnModel:
    """He-uniform initialization scaled by fan-in, deterministic per seed."""
    rng = np.random.default_rng(seed)

    def he(shape):
        fan_in = int(np.prod(shape[1:]))
        limit = np.sqrt(6.0 / fan_in)
        return rng.uniform(-limit, limit, size=shape)

    return CnnModel(
        he((HIDDEN1, channels, KERNEL, KERNEL)),
        np.zeros(HIDDEN1),
        he((HIDDEN2, HIDDEN1, KERNEL, KERNEL)),
        np.zeros(HIDDEN2),
        he((classes, HIDDEN2, KERNEL, KERNEL)),
        np.zeros(classes),
    )


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(B, C, H, W) -> (B, H-k+1, W-k+1, C*k*k) window matrix (copy)."""
    b, c, h, w = x.shape
    ho, wo = h - k + 1, w - k + 1
    sb, sc, sh, sw = x.strides
    win = as_strided(x, (b, c, ho, wo, k, k), (sb, sc, sh, sw, sh, sw))
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        b, ho, wo, c * k * k
    )


def _conv_forward(x, w, b):
    o = w.shape[0]
    cols = _im2col(x, KERNEL)
    out = cols @ w.reshape(o, -1).T + b
    return out.transpose(0, 3, 1, 2), cols


def _conv_backward_weights(cols, dout):
    """Weight/bias gradients from cached im2col columns."""
    o = dout.shape[1]
    dmat = dout.transpose(0, 2, 3, 1).reshape(-1, o)
    dw = dmat.T @ cols.reshape(-1, cols.shape[-1])
    db = dmat.sum(axis=0)
    return dw.reshape(o, -1, KERNEL, KERNEL), db


def _conv_backward_input(dout, w):
    """Gradient w.r.t. the conv input: full correlation with flipped kernels."""
    pad = KERNEL - 1
    dpad = np.pad(dout, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    wflip = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    grad, _ = _conv_forward(dpad, np.ascontiguousarray(wflip), np.zeros(w.shape[1]))
    return grad


def _check_input(model: CnnModel, x: np.ndarray):
    if x.ndim != 4:
        raise ShapeMismatchError(f"expected a 4-D batch, got {x.shape}")
    if x.shape[1] != model.channels:
        raise ShapeMismatchError(
            f"batch has {x.shape[1]} channels, model expects {model.channels}"
        )
    if x.shape[2] != x.shape[3] or x.shape[2] < 3 * (KERNEL - 1) + 1:
        raise ShapeMismatchError(f"patch {x.shape[2]}x{x.shape[3]} too small")


def _forward_full(model: CnnModel, x: np.ndarray):
    z1, cols1 = _conv_forward(x, model.w1, model.b1)
    a1 = np.maximum(z1, 0.0)
    z2, cols2 = _conv_forward(a1, model.w2, model.b2)
    a2 = np.maximum(z2, 0.0)
    z3, cols3 = _conv_forward(a2, model.w3, model.b3)
    logits = z3.mean(axis=(2, 3))
    return logits, (x, z1, a1, cols1, z2, a2, cols2, z3, cols3)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(model: CnnModel, x: np.ndarray) -> np.ndarray:
    """Class probabilities for a (B, N, k, k) batch; rows sum to one."""
    x = np.asarray(x, dtype=np.float64)
    _check_input(model, x)
    logits, _ = _forward_full(model, x)
    return _softmax(logits)


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean negative log-likelihood, computed via log-sum-exp."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + logits.max(axis=1)
    return float(np.mean(lse - logits[np.arange(len(targets)), targets]))


def gradients(model: CnnModel, x: np.ndarray, targets: np.ndarray):
    """Loss and analytic gradients for every parameter tensor."""
    x = np.asarray(x, dtype=np.float64)
    _check_input(model, x)
    targets = np.asarray(targets)
    if targets.shape != (x.shape[0],):
        raise ShapeMismatchError("one target per sample required")
    logits, cache = _forward_full(model, x)
    _, z1, a1, cols1, z2, a2, cols2, z3, cols3 = cache
    loss = cross_entropy(logits, targets)

    b = x.shape[0]
    dlogits = _softmax(logits)
    dlogits[np.arange(b), targets] -= 1.0
    dlogits /= b

    hw3 = z3.shape[2] * z3.shape[3]
    dz3 = np.broadcast_to(
        (dlogits / hw3)[:, :, None, None], z3.shape
    ).astype(np.float64)
    dw3, db3 = _conv_backward_weights(cols3, dz3)
    da2 = _conv_backward_input(dz3, model.w3)
    dz2 = da2 * (z2 > 0.0)
    dw2, db2 = _conv_backward_weights(cols2, dz2)
    da1 = _conv_backward_input(dz2, model.w2)
    dz1 = da1 * (z1 > 0.0)
    dw1, db1 = _conv_backward_weights(cols1, dz1)
    return loss, [dw1, db1, dw2, db2, dw3, db3]


def backward_and_step(
    model: CnnModel,
    x: np.ndarray,
    targets: np.ndarray,
    cfg: TrainConfig,
    state: AdamState,
) -> float:
    """One Adam update from the analytic gradients; returns pre-step loss."""
    loss, grads = gradients(model, x, targets)
    state.t += 1
    params = model.params()
    bc1 = 1.0 - cfg.beta1**state.t
    bc2 = 1.0 - cfg.beta2**state.t
    new_params = []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        step = cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        new_params.append(p - step)
    model.set_params(new_params)
    return loss


@dataclass
class PatchSet:
    """Lazy patch collection: padded feature image plus center indices."""

    padded: np.ndarray       # (H + 2p, W + 2p, N) reflect-padded features
    centers: np.ndarray      # flat pixel indices into the original H x W
    labels: np.ndarray       # class ids 1..C
    patch_size: int
    image_shape: Tuple[int, int]

    def __len__(self) -> int:
        return len(self.centers)

    def gather(self, idx) -> np.ndarray:
        """Materialize patches (B, N, k, k) for the given subset."""
        k = self.patch_size
        h, w = self.image_shape
        n = self.padded.shape[2]
        sh, sw, sn = self.padded.strides
        win = as_strided(
            self.padded,
            (h, w, k, k, n),
            (sh, sw, sh, sw, sn),
        )
        centers = self.centers[idx]
        patches = win[centers // w, centers % w]  # (B, k, k, N) copy
        return np.ascontiguousarray(patches.transpose(0, 3, 1, 2))


def _pad_features(features: np.ndarray, patch_size: int) -> np.ndarray:
    p = patch_size // 2
    return np.pad(features, ((p, p), (p, p), (0, 0)), mode="reflect")


def extract_patches(features: np.ndarray, labels: np.ndarray, cfg: TrainConfig):
    """Stratified train/test patch split over labeled pixels.

    Every pixel with label > 0 contributes one patch centered on it;
    per class, round(train_ratio * count) pixels go to the train set
    (deterministic per cfg.seed), the rest to the test set.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.shape[:2] != labels.shape:
        raise DimensionMismatchError("feature image and label map disagree")
    flat = labels.ravel()
    n_classes = int(flat.max())
    if n_classes < 1:
        raise EmptyClassError("no labeled pixels")
    rng = np.random.default_rng(cfg.seed)
    train_idx, test_idx = [], []
    for c in range(1, n_classes + 1):
        members = np.flatnonzero(flat == c)
        if members.size == 0:
            raise EmptyClassError(f"class {c} has no labeled pixels")
        perm = rng.permutation(members.size)
        n_train = int(np.floor(cfg.train_ratio * members.size + 0.5))
        train_idx.append(members[perm[:n_train]])
        test_idx.append(members[perm[n_train:]])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    padded = _pad_features(features, cfg.patch_size)
    make = lambda idx: PatchSet(
        padded, idx, flat[idx].astype(np.int64), cfg.patch_size, labels.shape
    )
    return make(train_idx), make(test_idx)


def train(model: CnnModel, train_set: PatchSet, cfg: TrainConfig):
    """Mini-batch Adam training; returns the model and per-epoch mean loss."""
    if len(train_set) == 0:
        raise EmptyClassError("empty training set")
    state = AdamState.for_model(model)
    rng = np.random.default_rng(cfg.seed)
    targets_all = train_set.labels - 1
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(train_set))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            x = train_set.gather(sel)
            loss = backward_and_step(model, x, targets_all[sel], cfg, state)
            epoch_loss += loss * len(sel)
        losses.append(epoch_loss / len(order))
    return model, losses


def classify_image(
    model: CnnModel,
    features: np.ndarray,
    patch_size: int = 9,
    chunk: int = 256,
) -> np.ndarray:
    """Per-pixel argmax classification map (class ids 1..C, ties -> lower id)."""
    features = np.asarray(features, dtype=np.float64)
    h, w, _ = features.shape
    padded = _pad_features(features, patch_size)
    everything = PatchSet(
        padded,
        np.arange(h * w),
        np.zeros(h * w, dtype=np.int64),
        patch_size,
        (h, w),
    )
    out = np.empty(h * w, dtype=np.int32)
    for start in range(0, h * w, chunk):
        idx = np.arange(start, min(start + chunk, h * w))
        probs = forward(model, everything.gather(idx))
        out[idx] = np.argmax(probs, axis=1) + 1
    return out.reshape(h, w)


def save_model(path, model: CnnModel):
    """Write a PSARCNN1 checkpoint (float64 tensors, declaration order)."""
    tensors = model.params()
    with open(path, "wb") as fh:
        fh.write(CNN_MAGIC)
        fh.write(struct.pack("<III", model.channels, model.classes, len(tensors)))
        for t in tensors:
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
        for t in tensors:
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_model(path) -> CnnModel:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CNN_MAGIC:
            raise BadMagicError(f"expected {CNN_MAGIC!r}, got {magic!r}")
        head = fh.read(12)
        if len(head) < 12:
            raise TruncatedFileError("checkpoint header truncated")
        channels, classes, n_tensors = struct.unpack("<III", head)
        shapes = []
        for _ in range(n_tensors):
            (ndim,) = struct.unpack("<I", fh.read(4))
            shapes.append(struct.unpack(f"<{ndim}I", fh.read(4 * ndim)))
        tensors = []
        for shape in shapes:
            count = int(np.prod(shape))
            raw = fh.read(count * 8)
            if len(raw) < count * 8:
                raise TruncatedFileError("checkpoint payload truncated")
            tensors.append(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
    model = CnnModel(*tensors)
    if model.channels != channels or model.classes != classes:
        raise DimensionMismatchError("checkpoint header disagrees with tensors")
    return model
