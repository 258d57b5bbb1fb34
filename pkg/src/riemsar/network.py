"""Unfolded sparse-coding network over superpixels.

The iterative optimizer is unrolled into K layers. Each layer performs
one proximal-gradient update of every superpixel's code against the
current dictionary, then one Riemannian CG dictionary update on the whole
batch (unless the dictionary is frozen). Initialization draws the atoms
at random from labeled pixels, class by class, and warm-starts the codes
with the projected-gradient routine.

There are no trained weights beyond the codes and the atoms; step size
and sparsity weight are fixed hyperparameters. Two ablation switches
mirror the module study: `freeze_dictionary` keeps the atoms fixed, and
`skip_unfolding` replaces the unrolled layers with the reference ISTA
solver run to convergence at the initial dictionary.

Per-superpixel feature vectors (the final codes) serialize as PSARFEA1:
magic, u32 segment count, u32 feature dim, float64 payload row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .coding import (
    Dictionary,
    EncodingProblem,
    SrsrConfig,
    ista_step,
    objective,
    solve_ista,
    spg_init,
    whiten_atoms,
)
from .dictlearn import DictBatch, DictLearnConfig, dict_update
from .errors import (
    BadMagicError,
    DimensionMismatchError,
    InsufficientLabelsError,
    MissingSegmentError,
    ReconstructionNotPDError,
    TruncatedFileError,
)
from .hpd import validate_hpd

FEA_MAGIC = b"PSARFEA1"


@dataclass
class SrsrNet:
    """Dictionary plus unfolding configuration; forward() mutates the atoms."""

    dictionary: Dictionary
    config: SrsrConfig = field(default_factory=SrsrConfig)
    dict_config: DictLearnConfig = field(default_factory=DictLearnConfig)
    freeze_dictionary: bool = False
    skip_unfolding: bool = False


@dataclass
class ForwardDiagnostics:
    """Observability for the descent claims: per-layer traces and failures.

    objective_trace has one row per recorded stage (initialization, then
    each layer) and one column per superpixel; dict_change holds the
    Frobenius norm of the atom movement per layer.
    """

    objective_trace: np.ndarray
    dict_change: list
    failed_counts: list
    failed_segments: np.ndarray

    @property
    def mean_objective(self) -> np.ndarray:
        return self.objective_trace.mean(axis=1)


def init_network(
    labels: np.ndarray,
    img: np.ndarray,
    atoms_per_class: int,
    seed: int = 0,
    config: SrsrConfig = None,
    dict_config: DictLearnConfig = None,
    **net_flags,
) -> SrsrNet:
    """Draw M random labeled pixels per class as the initial dictionary."""
    labels = np.asarray(labels)
    if labels.shape != img.shape[:2]:
        raise DimensionMismatchError("label map and image disagree")
    d = img.shape[2]
    flat_labels = labels.ravel()
    flat_img = img.reshape(-1, d, d)
    classes = np.unique(flat_labels[flat_labels > 0])
    if classes.size == 0:
        raise InsufficientLabelsError("no labeled pixels at all")
    rng = np.random.default_rng(seed)
    atoms, atom_labels = [], []
    for c in classes:
        members = np.flatnonzero(flat_labels == c)
        if members.size < atoms_per_class:
            raise InsufficientLabelsError(
                f"class {c} has {members.size} labeled pixels, needs {atoms_per_class}"
            )
        pick = rng.choice(members, size=atoms_per_class, replace=False)
        for p in pick:
            atoms.append(validate_hpd(flat_img[p], tol=1e-9))
            atom_labels.append(int(c))
    dictionary = Dictionary(np.stack(atoms), np.asarray(atom_labels), atoms_per_class)
    return SrsrNet(
        dictionary,
        config or SrsrConfig(),
        dict_config or DictLearnConfig(),
        **net_flags,
    )


def _safe_objectives(problems, codes, dictionary, cfg):
    out = np.empty(len(problems))
    for i, (p, a) in enumerate(zip(problems, codes)):
        try:
            out[i] = objective(p, a, dictionary, cfg.lam, cfg.pd_floor)
        except ReconstructionNotPDError:
            out[i] = np.inf
    return out


def forward(net: SrsrNet, superpixels):
    """Encode every superpixel; returns (feature field, diagnostics).

    The field is a (K, N) array indexed by segment id. Failed proximal
    steps keep the superpixel's last feasible code and are flagged in the
    diagnostics rather than aborting the batch. Unless frozen, the
    dictionary on `net` is replaced by the updated one after each layer.
    """
    problems = [EncodingProblem.from_target(sp.mean) for sp in superpixels]
    cfg = net.config
    codes = [spg_init(p, net.dictionary, cfg) for p in problems]
    trace = [_safe_objectives(problems, codes, net.dictionary, cfg)]
    failed = np.zeros(len(problems), dtype=bool)
    dict_change, failed_counts = [], []

    if net.skip_unfolding:
        solved = [
            solve_ista(p, net.dictionary, cfg, alpha0=a)
            for p, a in zip(problems, codes)
        ]
        codes = [s.alpha for s in solved]
        trace.append(np.array([s.objective for s in solved]))
    else:
        for _ in range(cfg.layers):
            whitened = [whiten_atoms(p, net.dictionary.atoms) for p in problems]
            layer_failures = 0
            for i, p in enumerate(problems):
                step = ista_step(p, codes[i], net.dictionary, cfg, whitened[i])
                if step.failed:
                    layer_failures += 1
                    failed[i] = True
                else:
                    codes[i] = step.alpha
            failed_counts.append(layer_failures)
            if net.freeze_dictionary:
                dict_change.append(0.0)
            else:
                batch = DictBatch.from_pairs(problems, codes)
                updated = dict_update(batch, net.dictionary, net.dict_config)
                dict_change.append(
                    float(np.linalg.norm(updated.atoms - net.dictionary.atoms))
                )
                net.dictionary = updated
            trace.append(_safe_objectives(problems, codes, net.dictionary, cfg))

    field_arr = np.stack(codes) if codes else np.zeros((0, net.dictionary.size))
    diags = ForwardDiagnostics(np.stack(trace), dict_change, failed_counts, failed)
    return field_arr, diags


def project_to_pixels(field: np.ndarray, seg_map: np.ndarray) -> np.ndarray:
    """Broadcast per-segment codes to an (H, W, N) pixel-feature image."""
    field = np.asarray(field, dtype=np.float64)
    seg_map = np.asarray(seg_map)
    if seg_map.max() >= field.shape[0]:
        raise MissingSegmentError(
            f"segment id {int(seg_map.max())} outside field of {field.shape[0]} rows"
        )
    return field[seg_map]


def raw_pixel_features(img: np.ndarray) -> np.ndarray:
    """Vectorized covariance as d*d real channels (the no-coding baseline).

    Channel order: real diagonals, then (re, im) of each upper off-diagonal
    entry in row-major order.
    """
    h, w, d, _ = img.shape
    feats = np.empty((h, w, d * d), dtype=np.float64)
    for k in range(d):
        feats[..., k] = img[..., k, k].real
    pos = d
    for r in range(d):
        for c in range(r + 1, d):
            feats[..., pos] = img[..., r, c].real
            feats[..., pos + 1] = img[..., r, c].imag
            pos += 2
    return feats


def save_features(path, field: np.ndarray):
    """Write a (K, N) feature field in PSARFEA1 format."""
    field = np.asarray(field, dtype=np.float64)
    k, n = field.shape
    with open(path, "wb") as fh:
        fh.write(FEA_MAGIC)
        fh.write(struct.pack("<II", k, n))
        fh.write(field.astype("<f8").tobytes())


def load_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != FEA_MAGIC:
            raise BadMagicError(f"expected {FEA_MAGIC!r}, got {magic!r}")
        head = fh.read(8)
        if len(head) < 8:
            raise TruncatedFileError("feature header truncated")
        k, n = struct.unpack("<II", head)
        raw = fh.read(k * n * 8)
        if len(raw) < k * n * 8:
            raise TruncatedFileError("feature payload truncated")
    return np.frombuffer(raw, dtype="<f8").reshape(k, n).copy()
