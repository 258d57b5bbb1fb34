"""Synthetic PolSAR scenes and raster I/O.

A scene is an H x W raster of d x d HPD covariance matrices plus a class
label map. Pixels are L-look sample covariances of circularly-symmetric
complex Gaussian scattering vectors,

    X = (1/L) sum_k z_k z_k^H,   z_k = chol(Sigma_c) (g1 + i g2) / sqrt(2),

i.e. complex-Wishart distributed around the class prototype Sigma_c.

File formats (all little-endian):

    PSARCOV1: magic "PSARCOV1" | u32 height, width, d |
              row-major pixels, each d*d complex entries as float64 (re, im)
    PSARLAB1: magic "PSARLAB1" | u32 height, width | u16 ids row-major
    PPM P6:   classification maps, fixed 8-color palette, id 0 = black
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    DimensionMismatchError,
    InvalidSpecError,
    TruncatedFileError,
    UnsupportedDimError,
)
from .hpd import hermitize, validate_hpd

COV_MAGIC = b"PSARCOV1"
LAB_MAGIC = b"PSARLAB1"

# ColorBrewer-style palette for classification maps; ids beyond 8 cycle.
PALETTE = np.array(
    [
        (0, 0, 0),          # 0 = unlabeled
        (228, 26, 28),
        (55, 126, 184),
        (77, 175, 74),
        (152, 78, 163),
        (255, 127, 0),
        (255, 255, 51),
        (166, 86, 40),
        (247, 129, 191),
    ],
    dtype=np.uint8,
)


@dataclass(frozen=True)
class GridLayout:
    """Rectangular partition: rows x cols tiles, classes assigned cyclically."""

    rows: int = 1
    cols: int = 3


@dataclass(frozen=True)
class VoronoiLayout:
    """Nearest-site partition with `sites` seeded random sites."""

    sites: int = 12


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for a synthetic scene: geometry, prototypes, looks, layout, seed."""

    height: int
    width: int
    prototypes: tuple  # per-class HPD matrices, class ids 1..C
    looks: int = 16
    layout: object = field(default_factory=GridLayout)
    seed: int = 0

    @property
    def class_count(self) -> int:
        return len(self.prototypes)

    @property
    def dim(self) -> int:
        return self.prototypes[0].shape[0]


def default_prototypes(class_count: int, dim: int = 3) -> tuple:
    """Built-in family of well-separated HPD prototypes (up to 8 classes).

    Distinct diagonal power profiles plus a complex cross-channel
    correlation; separation was chosen so that a maximum-likelihood
    classifier on 16-look samples stays above ~97% accuracy.
    """
    if dim != 3:
        raise UnsupportedDimError("built-in prototypes are defined for d=3 only")
    if not 1 <= class_count <= 8:
        raise InvalidSpecError("built-in prototypes support 1..8 classes")
    profiles = [
        ((1.00, 0.05, 0.30), 0.85, 0.4),
        ((0.45, 0.55, 0.50), 0.15, -1.1),
        ((2.20, 0.25, 1.40), -0.60, 2.3),
        ((0.12, 0.10, 0.90), 0.40, 0.0),
        ((3.00, 1.00, 0.20), 0.10, -2.2),
        ((0.70, 0.08, 0.07), -0.30, 1.0),
        ((1.50, 2.00, 1.60), 0.55, -0.4),
        ((0.25, 0.60, 2.50), -0.20, 2.9),
    ]
    protos = []
    for diag, rho, phase in profiles[:class_count]:
        m = np.diag(np.asarray(diag, dtype=np.complex128))
        c13 = rho * np.exp(1j * phase) * np.sqrt(diag[0] * diag[2])
        m[0, 2] = c13
        m[2, 0] = np.conj(c13)
        protos.append(validate_hpd(m))
    return tuple(protos)


def _layout_labels(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    h, w, c = spec.height, spec.width, spec.class_count
    if isinstance(spec.layout, GridLayout):
        rows, cols = spec.layout.rows, spec.layout.cols
        if rows < 1 or cols < 1:
            raise InvalidSpecError("grid layout needs at least one tile")
        ri = np.minimum(np.arange(h) * rows // h, rows - 1)
        ci = np.minimum(np.arange(w) * cols // w, cols - 1)
        tile = ri[:, None] * cols + ci[None, :]
        return (tile % c + 1).astype(np.int32)
    if isinstance(spec.layout, VoronoiLayout):
        n = spec.layout.sites
        if n < c:
            raise InvalidSpecError("voronoi layout needs at least one site per class")
        sites = np.stack([rng.uniform(0, h, n), rng.uniform(0, w, n)], axis=1)
        rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        d2 = (rr[..., None] - sites[:, 0]) ** 2 + (cc[..., None] - sites[:, 1]) ** 2
        nearest = np.argmin(d2, axis=-1)  # argmin takes the lowest site on ties
        return (nearest % c + 1).astype(np.int32)
    raise InvalidSpecError(f"unknown layout {spec.layout!r}")


def generate_wishart_scene(spec: SceneSpec):
    """Sample a (covariance image, label map) pair from the scene spec.

    Deterministic given the seed. Every pixel is an L-look complex-Wishart
    sample of its class prototype; L >= d guarantees full rank.
    """
    d = spec.dim
    if spec.height < 1 or spec.width < 1:
        raise InvalidSpecError("scene must have positive height and width")
    if spec.looks < d:
        raise InvalidSpecError(f"looks {spec.looks} < matrix dim {d} gives singular pixels")
    chols = []
    for proto in spec.prototypes:
        chols.append(np.linalg.cholesky(validate_hpd(proto)))

    rng = np.random.default_rng(spec.seed)
    labels = _layout_labels(spec, rng)
    img = np.empty((spec.height, spec.width, d, d), dtype=np.complex128)
    flat_labels = labels.ravel()
    flat_img = img.reshape(-1, d, d)
    for c in range(1, spec.class_count + 1):
        idx = np.flatnonzero(flat_labels == c)
        if idx.size == 0:
            continue
        g = rng.standard_normal((idx.size, spec.looks, d, 2))
        z = (g[..., 0] + 1j * g[..., 1]) / np.sqrt(2.0)
        z = z @ chols[c - 1].T  # rows become (chol @ g)^T, covariance Sigma_c
        flat_img[idx] = np.einsum("plc,pld->pcd", z, z.conj()) / spec.looks
    img = hermitize(img)
    return img, labels


def save_covariance(path, img: np.ndarray):
    """Write a covariance raster in PSARCOV1 format (lossless float64)."""
    img = np.asarray(img, dtype=np.complex128)
    h, w, d, d2 = img.shape
    if d != d2:
        raise DimensionMismatchError("covariance pixels must be square")
    payload = np.empty((h, w, d, d, 2), dtype="<f8")
    payload[..., 0] = img.real
    payload[..., 1] = img.imag
    with open(path, "wb") as fh:
        fh.write(COV_MAGIC)
        fh.write(struct.pack("<III", h, w, d))
        fh.write(payload.tobytes())


def load_covariance(path) -> np.ndarray:
    """Read a PSARCOV1 raster; bit-exact round trip with save_covariance."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != COV_MAGIC:
            raise BadMagicError(f"expected {COV_MAGIC!r}, got {magic!r}")
        header = fh.read(12)
        if len(header) < 12:
            raise TruncatedFileError("covariance header truncated")
        h, w, d = struct.unpack("<III", header)
        need = h * w * d * d * 2 * 8
        raw = fh.read(need)
        if len(raw) < need:
            raise TruncatedFileError(
                f"payload holds {len(raw)} bytes, header declares {need}"
            )
    flat = np.frombuffer(raw, dtype="<f8").reshape(h, w, d, d, 2)
    return (flat[..., 0] + 1j * flat[..., 1]).astype(np.complex128)


def save_labels(path, labels: np.ndarray):
    """Write a label / segment-id raster in PSARLAB1 format (u16 ids)."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise DimensionMismatchError("label map must be 2-D")
    if labels.min() < 0 or labels.max() > np.iinfo(np.uint16).max:
        raise ValueError("label ids must fit in u16")
    h, w = labels.shape
    with open(path, "wb") as fh:
        fh.write(LAB_MAGIC)
        fh.write(struct.pack("<II", h, w))
        fh.write(labels.astype("<u2").tobytes())


def load_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != LAB_MAGIC:
            raise BadMagicError(f"expected {LAB_MAGIC!r}, got {magic!r}")
        header = fh.read(8)
        if len(header) < 8:
            raise TruncatedFileError("label header truncated")
        h, w = struct.unpack("<II", header)
        need = h * w * 2
        raw = fh.read(need)
        if len(raw) < need:
            raise TruncatedFileError(
                f"payload holds {len(raw)} bytes, header declares {need}"
            )
    return np.frombuffer(raw, dtype="<u2").reshape(h, w).astype(np.int32)


def save_ppm(path, rgb: np.ndarray):
    """Write an 8-bit RGB image as binary PPM (P6)."""
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(rgb.tobytes())


def labels_to_rgb(labels: np.ndarray) -> np.ndarray:
    """Colorize a class/label map with the fixed palette (ids cycle past 8)."""
    labels = np.asarray(labels)
    idx = np.where(labels == 0, 0, (labels - 1) % (len(PALETTE) - 1) + 1)
    return PALETTE[idx]


def _percentile_scale(channel: np.ndarray) -> np.ndarray:
    lo, hi = np.percentile(channel, [2.0, 98.0])
    if hi <= lo:
        return np.zeros(channel.shape, dtype=np.uint8)
    scaled = np.clip((channel - lo) / (hi - lo), 0.0, 1.0)
    return (scaled * 255.0 + 0.5).astype(np.uint8)


def pauli_rgb(img: np.ndarray) -> np.ndarray:
    """Render a d=3 covariance raster as an RGB quicklook.

    Channels are the three diagonal (real) covariance intensities, each
    clipped to its 2nd..98th percentile and scaled to 0..255. Purely
    cosmetic; invariant under a global positive rescale of the image.
    """
    img = np.asarray(img)
    if img.ndim != 4 or img.shape[2] != 3 or img.shape[3] != 3:
        raise UnsupportedDimError("pauli_rgb expects an (H, W, 3, 3) raster")
    chans = [img[..., k, k].real for k in range(3)]
    return np.stack([_percentile_scale(c) for c in chans], axis=-1)
