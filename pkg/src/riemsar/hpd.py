"""Complex Hermitian positive-definite (HPD) matrix kernel.

Validation, eigendecomposition, spectral matrix functions and the
affine-invariant Riemannian metric (AIRM) on the HPD cone:

    d(X, Y)      = || log(X^{-1/2} Y X^{-1/2}) ||_F
    <u, v>_p     = Re tr(p^{-1} u p^{-1} v)

The AIRM distance is invariant under congruence X -> A X A^H for any
invertible A, and under matrix inversion.

All math is in 64-bit floats (complex128). Matrices are plain numpy
arrays; `validate_hpd` is the gate that turns raw data into a trusted HPD
matrix (Hermitian-symmetrized, spectrum checked).
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import (
    ConvergenceFailureError,
    DimensionMismatchError,
    NotHermitianError,
    NotPositiveDefiniteError,
)

# Eigenvalue floor, relative to the largest eigenvalue: matrices whose
# smallest eigenvalue falls in (0, EIG_FLOOR_REL * max] are nudged by
# EIG_FLOOR_REL * max * I; at or below zero they are rejected.
EIG_FLOOR_REL = 1e-12


class HermEigen(NamedTuple):
    """Eigendecomposition of a Hermitian matrix, eigenvalues ascending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def hermitize(a: np.ndarray) -> np.ndarray:
    """Hermitian part (A + A^H) / 2; cheap guard against float drift."""
    return 0.5 * (a + a.conj().swapaxes(-1, -2))


def hermitian_deviation(a: np.ndarray) -> float:
    """Largest absolute deviation from Hermitian symmetry."""
    return float(np.max(np.abs(a - a.conj().swapaxes(-1, -2))))


def validate_hpd(raw: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Validate and admit a raw matrix as HPD.

    Returns the Hermitian-symmetrized matrix, possibly regularized by the
    eigenvalue-floor policy. Raises NotHermitianError if the asymmetry
    exceeds `tol`, NotPositiveDefiniteError if the spectrum cannot be
    rescued by the floor.
    """
    raw = np.asarray(raw, dtype=np.complex128)
    if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got shape {raw.shape}")
    if hermitian_deviation(raw) > tol:
        raise NotHermitianError(
            f"Hermitian deviation {hermitian_deviation(raw):.3e} exceeds tol {tol:.3e}"
        )
    x = hermitize(raw)
    w = _eigvalsh(x)
    lo, hi = w[0], w[-1]
    if hi <= 0.0 or lo <= 0.0:
        raise NotPositiveDefiniteError(f"min eigenvalue {lo:.3e} is not positive")
    floor = EIG_FLOOR_REL * hi
    if lo <= floor:
        x = x + floor * np.eye(x.shape[0])
    return x


def herm_eig(x: np.ndarray) -> HermEigen:
    """Eigendecomposition of a Hermitian matrix (symmetrized first).

    Eigenvalues come back ascending; V diag(w) V^H reconstructs the input.
    """
    x = hermitize(np.asarray(x, dtype=np.complex128))
    try:
        w, v = np.linalg.eigh(x)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailureError(str(exc)) from exc
    return HermEigen(w, v)


def _eigvalsh(x: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.eigvalsh(x)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailureError(str(exc)) from exc


_SPECTRAL_FNS = {
    "log": np.log,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "invsqrt": lambda w: 1.0 / np.sqrt(w),
}

_NEEDS_PD = frozenset({"log", "sqrt", "invsqrt"})


def spectral_fn(x: np.ndarray, fn: str) -> np.ndarray:
    """Apply f to the spectrum: V diag(f(w)) V^H.

    `fn` is one of "log", "exp", "sqrt", "invsqrt". The first three of the
    PD-requiring functions reject non-positive spectra; "exp" accepts any
    Hermitian input.
    """
    if fn not in _SPECTRAL_FNS:
        raise ValueError(f"unknown spectral function {fn!r}")
    w, v = herm_eig(x)
    if fn in _NEEDS_PD and w[0] <= 0.0:
        raise NotPositiveDefiniteError(
            f"spectral {fn} needs a positive spectrum, min eigenvalue {w[0]:.3e}"
        )
    fw = _SPECTRAL_FNS[fn](w)
    out = (v * fw) @ v.conj().T
    return hermitize(out)


def logm(x):
    return spectral_fn(x, "log")


def expm(x):
    return spectral_fn(x, "exp")


def sqrtm(x):
    return spectral_fn(x, "sqrt")


def invsqrtm(x):
    return spectral_fn(x, "invsqrt")


def _check_same_dim(x: np.ndarray, y: np.ndarray):
    if x.shape != y.shape:
        raise DimensionMismatchError(f"shape mismatch: {x.shape} vs {y.shape}")


def airm_distance(x: np.ndarray, y: np.ndarray) -> float:
    """Geodesic distance || log(X^{-1/2} Y X^{-1/2}) ||_F between HPD matrices."""
    _check_same_dim(x, y)
    h = invsqrtm(x)
    w = _eigvalsh(hermitize(h @ y @ h))
    if w[0] <= 0.0:
        raise NotPositiveDefiniteError(
            f"whitened matrix has min eigenvalue {w[0]:.3e}"
        )
    return float(np.sqrt(np.sum(np.log(w) ** 2)))


def airm_inner(p: np.ndarray, u: np.ndarray, v: np.ndarray) -> float:
    """Riemannian inner product Re tr(p^{-1} u p^{-1} v) at base point p."""
    _check_same_dim(p, u)
    _check_same_dim(p, v)
    pinv = np.linalg.inv(p)
    return float(np.trace(pinv @ u @ pinv @ v).real)


def airm_norm(p: np.ndarray, u: np.ndarray) -> float:
    """Riemannian norm sqrt(<u, u>_p)."""
    return float(np.sqrt(max(airm_inner(p, u, u), 0.0)))


def random_hpd(
    dim: int, rng: np.random.Generator, scale: float = 1.0, jitter: float = 1e-3
) -> np.ndarray:
    """Random HPD matrix A A^H + jitter*I from a complex Gaussian A."""
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return validate_hpd(scale * (a @ a.conj().T) + jitter * np.eye(dim))


def random_hermitian(dim: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Random Hermitian matrix (tangent-vector material)."""
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return scale * hermitize(a)
