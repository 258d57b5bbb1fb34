"""Superpixel segmentation and per-segment mean covariance.

The segmenter is a SLIC-style local k-means run in a joint space of
(a) a 6-dim real feature per pixel taken from the matrix logarithm of its
covariance (3 log-diagonals + magnitudes of the 3 upper off-diagonals) and
(b) spatial coordinates weighted by compactness / sqrt(scale).

Log-domain features respect the curved geometry of covariance data far
better than raw matrix entries while staying cheap. The module also
ingests externally computed superpixel maps (PSARLAB1 rasters), so a
higher-fidelity segmenter can be swapped in without touching the rest of
the pipeline.

Each segment is summarized by the entrywise mean of its members'
covariance matrices, which is again HPD (the PD cone is convex).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptySegmentError,
    ImageTooSmallError,
)
from .hpd import validate_hpd


@dataclass(frozen=True)
class SegmenterConfig:
    """Target mean segment area (pixels), spatial weight, k-means sweeps."""

    scale: float = 100.0
    compactness: float = 10.0
    iterations: int = 10

    def __post_init__(self):
        if self.scale < 4:
            raise ValueError("scale must be >= 4 pixels")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.compactness < 0:
            raise ValueError("compactness must be >= 0")


@dataclass(frozen=True)
class Superpixel:
    """One segment: member pixels (flat indices), mean covariance, centroid."""

    id: int
    members: np.ndarray
    mean: np.ndarray
    centroid: tuple


def pixel_log_features(img: np.ndarray) -> np.ndarray:
    """Per-pixel 6-dim real feature from the covariance matrix logarithm."""
    h, w, d, _ = img.shape
    flat = img.reshape(-1, d, d)
    evals, vecs = np.linalg.eigh(flat)
    evals = np.maximum(evals, 1e-300)  # guard: rank-deficient pixels
    logm = np.einsum("pij,pj,pkj->pik", vecs, np.log(evals), vecs.conj())
    feats = np.empty((h * w, 6), dtype=np.float64)
    feats[:, 0] = logm[:, 0, 0].real
    feats[:, 1] = logm[:, 1, 1].real
    feats[:, 2] = logm[:, 2, 2].real if d >= 3 else 0.0
    feats[:, 3] = np.abs(logm[:, 0, 1])
    feats[:, 4] = np.abs(logm[:, 0, 2]) if d >= 3 else 0.0
    feats[:, 5] = np.abs(logm[:, 1, 2]) if d >= 3 else 0.0
    return feats.reshape(h, w, 6)


def _seed_grid(h, w, step):
    rows = np.arange(step // 2, h, step)
    cols = np.arange(step // 2, w, step)
    return [(r, c) for r in rows for c in cols]


def _perturb_seeds(seeds, feats):
    """Move each seed to the lowest-gradient pixel in its 3x3 window."""
    h, w = feats.shape[:2]
    if h < 3 or w < 3:
        return seeds
    grad = np.full((h, w), np.inf)
    dx = feats[2:, 1:-1] - feats[:-2, 1:-1]
    dy = feats[1:-1, 2:] - feats[1:-1, :-2]
    grad[1:-1, 1:-1] = (dx**2).sum(-1) + (dy**2).sum(-1)
    out = []
    for r, c in seeds:
        r0, r1 = max(r - 1, 0), min(r + 2, h)
        c0, c1 = max(c - 1, 0), min(c + 2, w)
        win = grad[r0:r1, c0:c1]
        k = int(np.argmin(win))
        out.append((r0 + k // win.shape[1], c0 + k % win.shape[1]))
    return out


def _connected_components(labels: np.ndarray):
    """4-connected components; returns (comp map, list of (first_pixel, label))."""
    h, w = labels.shape
    comp = np.full((h, w), -1, dtype=np.int32)
    comps = []
    nxt = 0
    flat = labels.ravel()
    comp_flat = comp.ravel()
    for start in range(h * w):
        if comp_flat[start] >= 0:
            continue
        lab = flat[start]
        comp_flat[start] = nxt
        queue = deque([start])
        while queue:
            p = queue.popleft()
            r, c = divmod(p, w)
            for q in (p - w, p + w, p - 1, p + 1):
                if q == p - 1 and c == 0:
                    continue
                if q == p + 1 and c == w - 1:
                    continue
                if 0 <= q < h * w and comp_flat[q] < 0 and flat[q] == lab:
                    comp_flat[q] = nxt
                    queue.append(q)
        comps.append((start, lab))
        nxt += 1
    return comp, comps


def _absorb_orphans(assign: np.ndarray, comp: np.ndarray, comps):
    """Keep each label's largest component, merge the rest into neighbors.

    Orphan components are absorbed into the adjacent segment with the
    largest pixel count, processed in component order until stable.
    """
    h, w = assign.shape
    n_comp = len(comps)
    sizes = np.bincount(comp.ravel(), minlength=n_comp)
    # largest component per label is the core; ties go to the lower comp id
    core_of_label = {}
    for cid, (_, lab) in enumerate(comps):
        best = core_of_label.get(lab)
        if best is None or sizes[cid] > sizes[best]:
            core_of_label[lab] = cid
    is_core = np.zeros(n_comp, dtype=bool)
    for cid in core_of_label.values():
        is_core[cid] = True

    out = np.where(is_core[comp], assign, -1).astype(np.int32)
    pending = [cid for cid in range(n_comp) if not is_core[cid]]
    while pending:
        progressed = False
        still = []
        for cid in pending:
            mask = comp == cid
            rs, cs = np.nonzero(mask)
            neigh = set()
            for r, c in zip(rs, cs):
                for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    if 0 <= rr < h and 0 <= cc < w and out[rr, cc] >= 0:
                        neigh.add(int(out[rr, cc]))
            if not neigh:
                still.append(cid)
                continue
            counts = np.bincount(out[out >= 0].ravel())
            target = max(neigh, key=lambda s: (counts[s] if s < len(counts) else 0, -s))
            out[mask] = target
            progressed = True
        if not progressed:
            # isolated ring of orphans; promote the first to its own segment
            cid = still[0]
            out[comp == cid] = int(assign[comp == cid].ravel()[0])
            still = still[1:]
        pending = still
    return out


def _compact_ids(labels: np.ndarray) -> np.ndarray:
    """Relabel to [0, K) by first appearance in raster order.

    The same canonical numbering `ingest_labels` produces, so reloading a
    saved segmentation is the identity.
    """
    flat = labels.ravel()
    uniq, first = np.unique(flat, return_index=True)
    remap = np.empty(int(uniq.max()) + 1, dtype=np.int32)
    remap[uniq[np.argsort(first)]] = np.arange(len(uniq), dtype=np.int32)
    return remap[labels]


def segment(img: np.ndarray, cfg: SegmenterConfig = SegmenterConfig()) -> np.ndarray:
    """SLIC-style segmentation; returns an (H, W) map of ids in [0, K).

    Deterministic for a fixed input: seeds come from a sqrt(scale) lattice,
    assignment ties go to the lowest segment id, orphan blobs are absorbed
    into their largest neighbor.
    """
    h, w = img.shape[:2]
    if h * w < cfg.scale:
        raise ImageTooSmallError(
            f"{h}x{w} image is smaller than one superpixel of scale {cfg.scale}"
        )
    step = max(int(round(np.sqrt(cfg.scale))), 1)
    feats = pixel_log_features(img)
    seeds = _perturb_seeds(_seed_grid(h, w, step), feats)

    centroids_f = np.array([feats[r, c] for r, c in seeds])
    centroids_s = np.array(seeds, dtype=np.float64)
    spatial_w = (cfg.compactness / np.sqrt(cfg.scale)) ** 2

    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    assign = np.zeros((h, w), dtype=np.int32)
    for _ in range(cfg.iterations):
        best = np.full((h, w), np.inf)
        assign.fill(-1)
        for k in range(len(seeds)):
            r0 = max(int(centroids_s[k, 0]) - step, 0)
            r1 = min(int(centroids_s[k, 0]) + step + 1, h)
            c0 = max(int(centroids_s[k, 1]) - step, 0)
            c1 = min(int(centroids_s[k, 1]) + step + 1, w)
            if r0 >= r1 or c0 >= c1:
                continue
            df = feats[r0:r1, c0:c1] - centroids_f[k]
            ds = (rr[r0:r1, c0:c1] - centroids_s[k, 0]) ** 2 + (
                cc[r0:r1, c0:c1] - centroids_s[k, 1]
            ) ** 2
            dist = (df**2).sum(-1) + spatial_w * ds
            win_best = best[r0:r1, c0:c1]
            better = dist < win_best  # strict: equal distance keeps lower id
            win_best[better] = dist[better]
            assign[r0:r1, c0:c1][better] = k

        # pixels outside every window fall back to the nearest centroid
        miss = assign < 0
        if miss.any():
            mr, mc = np.nonzero(miss)
            d2 = (mr[:, None] - centroids_s[:, 0]) ** 2 + (
                mc[:, None] - centroids_s[:, 1]
            ) ** 2
            assign[mr, mc] = np.argmin(d2, axis=1)

        flat = assign.ravel()
        counts = np.bincount(flat, minlength=len(seeds))
        nonzero = counts > 0
        sums_f = np.zeros_like(centroids_f)
        np.add.at(sums_f, flat, feats.reshape(-1, 6))
        sums_r = np.bincount(flat, weights=rr.ravel(), minlength=len(seeds))
        sums_c = np.bincount(flat, weights=cc.ravel(), minlength=len(seeds))
        centroids_f[nonzero] = sums_f[nonzero] / counts[nonzero, None]
        centroids_s[nonzero, 0] = sums_r[nonzero] / counts[nonzero]
        centroids_s[nonzero, 1] = sums_c[nonzero] / counts[nonzero]

    comp, comps = _connected_components(assign)
    merged = _absorb_orphans(assign, comp, comps)
    return _compact_ids(merged)


def ingest_labels(raster) -> np.ndarray:
    """Adopt an externally computed superpixel map.

    Accepts a path to a PSARLAB1 raster or a 2-D id array. Disconnected
    blobs sharing an id are split, then ids are compacted to [0, K) in
    raster order of each segment's first pixel.
    """
    if isinstance(raster, (str, bytes)) or hasattr(raster, "__fspath__"):
        from .data import load_labels

        raster = load_labels(raster)
    labels = np.asarray(raster)
    if labels.ndim != 2:
        raise DimensionMismatchError("superpixel map must be 2-D")
    if labels.min() < 0:
        raise ValueError("segment ids must be non-negative")
    comp, _ = _connected_components(labels.astype(np.int32))
    return comp.astype(np.int32)


def segment_count(seg_map: np.ndarray) -> int:
    return int(seg_map.max()) + 1


def mean_covariance(img: np.ndarray, seg_map: np.ndarray):
    """Entrywise mean covariance per segment; returns Superpixels by id.

    The mean of HPD matrices is HPD, which `validate_hpd` re-asserts.
    """
    h, w, d, _ = img.shape
    if seg_map.shape != (h, w):
        raise DimensionMismatchError(
            f"segment map {seg_map.shape} does not match image {(h, w)}"
        )
    k = segment_count(seg_map)
    flat_img = img.reshape(-1, d, d)
    flat_seg = seg_map.ravel()
    counts = np.bincount(flat_seg, minlength=k)
    if (counts == 0).any():
        raise EmptySegmentError("segment id range [0, K) has an empty id")

    sums = np.zeros((k, d, d), dtype=np.complex128)
    np.add.at(sums, flat_seg, flat_img)
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    rsum = np.bincount(flat_seg, weights=rr.ravel(), minlength=k)
    csum = np.bincount(flat_seg, weights=cc.ravel(), minlength=k)

    order = np.argsort(flat_seg, kind="stable")
    bounds = np.cumsum(counts)[:-1]
    members = np.split(order, bounds)

    out = []
    for sid in range(k):
        mean = validate_hpd(sums[sid] / counts[sid], tol=1e-9)
        centroid = (rsum[sid] / counts[sid], csum[sid] / counts[sid])
        out.append(Superpixel(sid, members[sid], mean, centroid))
    return out
