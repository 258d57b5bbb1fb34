"""Sparse coding of HPD matrices under the affine-invariant metric.

A target covariance X is approximated by a non-negative combination
M(a) = sum_i a_i D_i of HPD dictionary atoms by minimizing

    phi(a) = 1/2 || log(H M(a) H) ||_F^2 + lam * sum(a),   H = X^{-1/2},

over a >= 0 (the l1 term reduces to a plain sum on the feasible set).
The smooth part has the closed-form partial derivatives

    d f1 / d a_p = Re tr( log(W) W^{-1} H D_p H ),   W = H M(a) H,

which drive a proximal-gradient (ISTA) update with one-sided shrinkage

    a' = max(a - t * grad_f1(a) - lam * t, 0),

the exact proximal operator of lam*||.||_1 plus the a >= 0 indicator.
Steps are safeguarded: a trial that leaves the PD cone or increases the
objective triggers step halving, so objective traces are non-increasing.
A fixed-step unsafeguarded mode is available for faithfulness studies.

Initial codes come from a projected-gradient method with Barzilai-Borwein
step lengths (a spectral projected gradient in the loose sense); the best
iterate by objective is returned, so the init never loses to the uniform
starting point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import DimensionMismatchError, ReconstructionNotPDError
from .hpd import hermitize

# Relative positive-definiteness floor: M(a) counts as PD only if its
# smallest eigenvalue exceeds PD_FLOOR_REL * tr(M)/d.
PD_FLOOR_REL = 1e-10


@dataclass(frozen=True)
class Dictionary:
    """N = M*C HPD atoms with class labels, M atoms per class."""

    atoms: np.ndarray
    labels: np.ndarray
    atoms_per_class: int

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=np.complex128)
        labels = np.asarray(self.labels)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "labels", labels)
        if atoms.ndim != 3 or atoms.shape[1] != atoms.shape[2]:
            raise DimensionMismatchError("atoms must be a stack of square matrices")
        if labels.shape != (atoms.shape[0],):
            raise DimensionMismatchError("one label per atom required")
        counts = np.unique(labels, return_counts=True)[1]
        if (counts != self.atoms_per_class).any():
            raise ValueError("labels must partition atoms evenly into classes")

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def class_count(self) -> int:
        return self.size // self.atoms_per_class


@dataclass(frozen=True)
class EncodingProblem:
    """A target HPD matrix with its precomputed whitener H = X^{-1/2}."""

    target: np.ndarray
    whitener: np.ndarray

    @classmethod
    def from_target(cls, target: np.ndarray) -> "EncodingProblem":
        from .hpd import invsqrtm

        return cls(np.asarray(target, dtype=np.complex128), invsqrtm(target))

    @property
    def dim(self) -> int:
        return self.target.shape[0]


@dataclass(frozen=True)
class SrsrConfig:
    """Sparse-coding knobs: l1 weight, step size, layer count, safeguards."""

    lam: float = 0.5
    step: float = 1e-4
    layers: int = 4
    pd_floor: float = PD_FLOOR_REL
    init_iterations: int = 30
    safeguard: bool = True
    max_halvings: int = 20

    def __post_init__(self):
        if self.lam < 0 or self.step <= 0 or self.layers < 0:
            raise ValueError("need lam >= 0, step > 0, layers >= 0")


class IstaStep(NamedTuple):
    alpha: np.ndarray
    objective: float
    failed: bool


class IstaSolve(NamedTuple):
    alpha: np.ndarray
    objective: float
    iterations: int
    converged: bool


def reconstruction(alpha: np.ndarray, dictionary: Dictionary) -> np.ndarray:
    """Weighted atom combination M(a) = sum_i a_i D_i (exactly Hermitian)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (dictionary.size,):
        raise DimensionMismatchError(
            f"code length {alpha.shape} vs dictionary size {dictionary.size}"
        )
    return np.einsum("n,nij->ij", alpha, dictionary.atoms)


def whiten_atoms(problem: EncodingProblem, atoms: np.ndarray) -> np.ndarray:
    """Precompute H D_p H for every atom (reused across gradient calls)."""
    h = problem.whitener
    return np.einsum("ij,njk,kl->nil", h, atoms, h)


def _pd_spectrum(m: np.ndarray, pd_floor: float) -> np.ndarray:
    """Eigenvalues of the reconstruction, or raise if below the PD floor."""
    evals = np.linalg.eigvalsh(hermitize(m))
    d = m.shape[0]
    floor = pd_floor * max(float(np.trace(m).real), 0.0) / d
    if evals[0] <= floor:
        raise ReconstructionNotPDError(
            f"reconstruction min eigenvalue {evals[0]:.3e} <= floor {floor:.3e}"
        )
    return evals


def objective(
    problem: EncodingProblem,
    alpha: np.ndarray,
    dictionary: Dictionary,
    lam: float,
    pd_floor: float = PD_FLOOR_REL,
) -> float:
    """phi(a) = 1/2 ||log(H M(a) H)||_F^2 + lam * sum(a)."""
    m = reconstruction(alpha, dictionary)
    _pd_spectrum(m, pd_floor)
    h = problem.whitener
    w_evals = np.linalg.eigvalsh(hermitize(h @ m @ h))
    if w_evals[0] <= 0.0:
        raise ReconstructionNotPDError("whitened reconstruction lost definiteness")
    f1 = 0.5 * float(np.sum(np.log(w_evals) ** 2))
    return f1 + float(lam) * float(np.sum(alpha))


def residual_gradient(
    problem: EncodingProblem,
    alpha: np.ndarray,
    dictionary: Dictionary,
    pd_floor: float = PD_FLOOR_REL,
    _whitened: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Gradient of the smooth term: entry p is Re tr(log(W) W^{-1} H D_p H)."""
    m = reconstruction(alpha, dictionary)
    _pd_spectrum(m, pd_floor)
    h = problem.whitener
    s, u = np.linalg.eigh(hermitize(h @ m @ h))
    if s[0] <= 0.0:
        raise ReconstructionNotPDError("whitened reconstruction lost definiteness")
    core = u @ ((np.log(s) / s)[:, None] * u.conj().T)  # log(W) W^{-1}, Hermitian
    if _whitened is None:
        _whitened = whiten_atoms(problem, dictionary.atoms)
    return np.einsum("ij,nji->n", core, _whitened).real


def full_gradient(
    problem: EncodingProblem,
    alpha: np.ndarray,
    dictionary: Dictionary,
    lam: float,
) -> np.ndarray:
    """Residual gradient plus lam on the positive support (sgn(0) = 0)."""
    g = residual_gradient(problem, alpha, dictionary)
    return g + lam * (np.asarray(alpha) > 0.0)


def soft_threshold(x: np.ndarray, theta: float) -> np.ndarray:
    """One-sided shrinkage max(x - theta, 0): the prox of l1 + {x >= 0}."""
    if theta < 0:
        raise ValueError("threshold must be >= 0")
    return np.maximum(np.asarray(x, dtype=np.float64) - theta, 0.0)


def ista_step(
    problem: EncodingProblem,
    alpha: np.ndarray,
    dictionary: Dictionary,
    cfg: SrsrConfig,
    _whitened: Optional[np.ndarray] = None,
) -> IstaStep:
    """One safeguarded proximal-gradient update.

    Halves the step (up to cfg.max_halvings) whenever the trial leaves the
    PD cone or increases the objective; returns the input unchanged with
    failed=True when the safeguard is exhausted or the input itself is
    infeasible. With cfg.safeguard off the fixed step is applied as-is
    (still refusing to return an infeasible code).
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    try:
        g = residual_gradient(problem, alpha, dictionary, cfg.pd_floor, _whitened)
        current = objective(problem, alpha, dictionary, cfg.lam, cfg.pd_floor)
    except ReconstructionNotPDError:
        return IstaStep(alpha, np.inf, True)

    t = cfg.step
    halvings = cfg.max_halvings if cfg.safeguard else 0
    for _ in range(halvings + 1):
        trial = soft_threshold(alpha - t * g, cfg.lam * t)
        try:
            trial_obj = objective(problem, trial, dictionary, cfg.lam, cfg.pd_floor)
        except ReconstructionNotPDError:
            t *= 0.5
            continue
        if not cfg.safeguard or trial_obj <= current:
            return IstaStep(trial, trial_obj, False)
        t *= 0.5
    return IstaStep(alpha, current, True)


def spg_init(
    problem: EncodingProblem,
    dictionary: Dictionary,
    cfg: SrsrConfig,
) -> np.ndarray:
    """Projected-gradient initialization with Barzilai-Borwein step lengths.

    Starts from the uniform code (1/N, ..., 1/N); each sweep projects a
    BB-sized gradient step onto the feasible set and backtracks until it
    achieves sufficient decrease, so the result never scores worse than
    the uniform start and falls back to it outright on numerical failure.
    On the feasible set the l1 term is linear, so the composite objective
    is smooth and the projected gradient uses residual_gradient + lam.
    """
    n = dictionary.size
    whitened = whiten_atoms(problem, dictionary.atoms)
    alpha = np.full(n, 1.0 / n)
    try:
        obj = objective(problem, alpha, dictionary, cfg.lam, cfg.pd_floor)
        g = residual_gradient(problem, alpha, dictionary, cfg.pd_floor, whitened) + cfg.lam
    except ReconstructionNotPDError:
        return alpha

    t = 1.0 / max(float(np.max(np.abs(g))), 1e-12)
    for _ in range(cfg.init_iterations):
        accepted = None
        for _ in range(25):
            cand = np.maximum(alpha - t * g, 0.0)
            try:
                cand_obj = objective(problem, cand, dictionary, cfg.lam, cfg.pd_floor)
            except ReconstructionNotPDError:
                t *= 0.5
                continue
            decrease = float(g @ (cand - alpha))  # <= 0 for a projected step
            if cand_obj <= obj + 1e-4 * decrease:
                accepted = (cand, cand_obj)
                break
            t *= 0.5
        if accepted is None:
            break
        trial, obj = accepted
        g_trial = (
            residual_gradient(problem, trial, dictionary, cfg.pd_floor, whitened)
            + cfg.lam
        )
        s = trial - alpha
        y = g_trial - g
        sy = float(s @ y)
        if sy > 1e-300:
            t = float(np.clip((s @ s) / sy, 1e-10, 1e10))
        else:
            t = min(t * 2.0, 1e6)
        alpha, g = trial, g_trial
    return alpha


def solve_ista(
    problem: EncodingProblem,
    dictionary: Dictionary,
    cfg: SrsrConfig,
    alpha0: Optional[np.ndarray] = None,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> IstaSolve:
    """Reference ISTA solver: safeguarded steps until |delta obj| < tol.

    This is the convergence baseline the unfolded network is checked
    against; it shares ista_step with the network layers.
    """
    whitened = whiten_atoms(problem, dictionary.atoms)
    alpha = spg_init(problem, dictionary, cfg) if alpha0 is None else np.asarray(alpha0)
    obj = objective(problem, alpha, dictionary, cfg.lam, cfg.pd_floor)
    for it in range(1, max_iter + 1):
        step = ista_step(problem, alpha, dictionary, cfg, whitened)
        if step.failed:
            return IstaSolve(alpha, obj, it, True)
        delta = obj - step.objective
        alpha, obj = step.alpha, step.objective
        if abs(delta) < tol:
            return IstaSolve(alpha, obj, it, True)
    return IstaSolve(alpha, obj, max_iter, False)
