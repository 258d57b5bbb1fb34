"""Dictionary update by conjugate gradient on the HPD manifold.

With the sparse codes frozen, the atoms minimize

    psi(D) = 1/2 sum_j || log(G_j S_j(D) G_j) ||_F^2 + lam_B sum_i tr(D_i),

where G_j is the j-th training problem's whitener and S_j(D) the weighted
atom combination under code alpha_j. The trace penalty keeps atoms from
inflating. Ingredients, all under the affine-invariant metric:

    Euclidean grad (atom i): sum_j a_j^i  G_j log(W_j) W_j^{-1} G_j + lam_B I,
                             W_j = G_j S_j G_j
    Riemannian grad:         D_i (egrad)_herm D_i
    retraction:              R_p(v) = p^{1/2} exp(p^{-1/2} v p^{-1/2}) p^{1/2}
    vector transport:        v -> E v E^H,  E = (q p^{-1})^{1/2}

The transport is the closed-form affine-invariant parallel transport; it
is exactly isometric, unlike a differentiated retraction evaluated by
finite differences (kept in the tests as an oracle only).

All atoms move jointly (product manifold): per-atom gradients and
directions, one Polak-Ribiere beta and one Armijo backtracking line search
on the summed objective. Accepted steps strictly decrease psi.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .coding import PD_FLOOR_REL, Dictionary
from .errors import DimensionMismatchError, ReconstructionNotPDError
from .hpd import hermitize


@dataclass(frozen=True)
class DictLearnConfig:
    """Trace penalty, CG budget, Armijo constants, restart policy."""

    trace_penalty: float = 1e-2
    max_iterations: int = 5
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 30
    step0: float = 1.0
    restart_period: Optional[int] = None  # default N * d * d, set at run time
    grad_tol: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.armijo_c1 < 1.0:
            raise ValueError("armijo_c1 must lie in (0, 1)")
        if not 0.0 < self.backtrack < 1.0:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if self.trace_penalty < 0:
            raise ValueError("trace penalty must be >= 0")


@dataclass(frozen=True)
class DictBatch:
    """Frozen training pairs: per-problem whiteners G_j and codes alpha_j."""

    whiteners: np.ndarray  # (J, d, d) complex
    codes: np.ndarray      # (J, N) float, entrywise >= 0

    def __post_init__(self):
        w = np.asarray(self.whiteners, dtype=np.complex128)
        c = np.asarray(self.codes, dtype=np.float64)
        object.__setattr__(self, "whiteners", w)
        object.__setattr__(self, "codes", c)
        if w.ndim != 3 or w.shape[1] != w.shape[2]:
            raise DimensionMismatchError("whiteners must be a stack of square matrices")
        if c.ndim != 2 or c.shape[0] != w.shape[0]:
            raise DimensionMismatchError("one code row per whitener required")
        if (c < 0).any():
            raise ValueError("codes must be entrywise non-negative")

    @classmethod
    def from_pairs(cls, problems, codes) -> "DictBatch":
        return cls(
            np.stack([p.whitener for p in problems]),
            np.stack([np.asarray(a, dtype=np.float64) for a in codes]),
        )

    @property
    def size(self) -> int:
        return self.whiteners.shape[0]


@dataclass(frozen=True)
class CgState:
    """One CG iterate: atoms, Riemannian gradients, directions, beta, step."""

    atoms: np.ndarray
    grads: np.ndarray
    dirs: np.ndarray
    beta: float
    sigma: float
    k: int
    grad_norm_sq: float


def _atoms_of(dictionary) -> np.ndarray:
    if isinstance(dictionary, Dictionary):
        return dictionary.atoms
    return np.asarray(dictionary, dtype=np.complex128)


def _whitened_spectra(batch: DictBatch, atoms: np.ndarray):
    """Eigen-decompose W_j = G_j S_j G_j for every problem; PD-check S_j."""
    s = np.einsum("jn,nkl->jkl", batch.codes, atoms)
    d = atoms.shape[1]
    traces = np.einsum("jkk->j", s).real
    s_evals = np.linalg.eigvalsh(hermitize(s))
    floors = PD_FLOOR_REL * np.maximum(traces, 0.0) / d
    if (s_evals[:, 0] <= floors).any():
        raise ReconstructionNotPDError("a batch reconstruction left the PD cone")
    w = batch.whiteners @ s @ batch.whiteners
    evals, vecs = np.linalg.eigh(hermitize(w))
    if (evals[:, 0] <= 0.0).any():
        raise ReconstructionNotPDError("a whitened reconstruction lost definiteness")
    return evals, vecs


def dict_objective(batch: DictBatch, dictionary, trace_penalty: float) -> float:
    """psi(D): summed whitened log-residuals plus the trace penalty."""
    atoms = _atoms_of(dictionary)
    evals, _ = _whitened_spectra(batch, atoms)
    residual = 0.5 * float(np.sum(np.log(evals) ** 2))
    traces = float(np.einsum("nkk->", atoms).real)
    return residual + float(trace_penalty) * traces


def _euclidean_grads_all(batch: DictBatch, atoms: np.ndarray, trace_penalty: float):
    """Euclidean gradient for every atom at once, shape (N, d, d)."""
    evals, vecs = _whitened_spectra(batch, atoms)
    core = np.einsum(
        "jik,jk,jlk->jil", vecs, np.log(evals) / evals, vecs.conj()
    )  # log(W_j) W_j^{-1}
    t = batch.whiteners @ core @ batch.whiteners
    grads = np.einsum("jn,jkl->nkl", batch.codes, t)
    grads += trace_penalty * np.eye(atoms.shape[1])
    return hermitize(grads)


def dict_euclidean_grad(batch: DictBatch, dictionary, trace_penalty: float, i: int):
    """Euclidean gradient of psi with respect to atom i (Hermitian part)."""
    atoms = _atoms_of(dictionary)
    return _euclidean_grads_all(batch, atoms, trace_penalty)[i]


def dict_riemannian_grad(atom: np.ndarray, euclid_grad: np.ndarray) -> np.ndarray:
    """Metric-raised gradient D_i G D_i (exactly Hermitian)."""
    return hermitize(atom @ hermitize(euclid_grad) @ atom)


def _eig_apply(x, fn):
    w, v = np.linalg.eigh(hermitize(x))
    return np.einsum("...ik,...k,...jk->...ij", v, fn(w), v.conj())


def retraction(p: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Exponential map R_p(v) = p^{1/2} exp(p^{-1/2} v p^{-1/2}) p^{1/2}.

    Works on stacks; output is HPD for any Hermitian v.
    """
    w, q = np.linalg.eigh(hermitize(p))
    sq = np.einsum("...ik,...k,...jk->...ij", q, np.sqrt(w), q.conj())
    isq = np.einsum("...ik,...k,...jk->...ij", q, 1.0 / np.sqrt(w), q.conj())
    inner = _eig_apply(isq @ hermitize(v) @ isq, np.exp)
    return hermitize(sq @ inner @ sq)


def vector_transport(p: np.ndarray, q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Parallel transport of tangent v from p to q: E v E^H, E = (q p^{-1})^{1/2}."""
    w, u = np.linalg.eigh(hermitize(p))
    sq = np.einsum("...ik,...k,...jk->...ij", u, np.sqrt(w), u.conj())
    isq = np.einsum("...ik,...k,...jk->...ij", u, 1.0 / np.sqrt(w), u.conj())
    mid = _eig_apply(isq @ q @ isq, np.sqrt)
    e = sq @ mid @ isq
    return hermitize(e @ v @ e.conj().swapaxes(-1, -2))


def _inner_sum(atoms: np.ndarray, u: np.ndarray, v: np.ndarray) -> float:
    """Product-manifold metric: sum_i Re tr(D_i^{-1} u_i D_i^{-1} v_i)."""
    pinv = np.linalg.inv(atoms)
    return float(np.einsum("nij,njk,nkl,nli->", pinv, u, pinv, v).real)


def cg_direction(state: CgState, new_atoms, new_grads, cfg: DictLearnConfig) -> CgState:
    """Advance the CG state to new atoms/gradients and pick a direction.

    Polak-Ribiere beta with the previous gradient and direction parallel-
    transported to the new iterate; restarts to steepest descent on the
    restart period or whenever the candidate fails to point downhill.
    """
    k = state.k + 1
    gg_new = _inner_sum(new_atoms, new_grads, new_grads)
    restart_period = cfg.restart_period or new_atoms.shape[0] * new_atoms.shape[1] ** 2
    beta = 0.0
    dirs = -new_grads
    if state.grad_norm_sq > 0.0 and k % restart_period != 0:
        prev_grad = vector_transport(state.atoms, new_atoms, state.grads)
        prev_dir = vector_transport(state.atoms, new_atoms, state.dirs)
        beta = (
            _inner_sum(new_atoms, new_grads, new_grads - prev_grad)
            / state.grad_norm_sq
        )
        cand = -new_grads + beta * prev_dir
        if _inner_sum(new_atoms, cand, new_grads) < 0.0:
            dirs = cand
        else:
            beta = 0.0
    return CgState(new_atoms, new_grads, dirs, beta, state.sigma, k, gg_new)


def line_search(
    batch: DictBatch,
    atoms: np.ndarray,
    grads: np.ndarray,
    directions: np.ndarray,
    cfg: DictLearnConfig,
    psi0: Optional[float] = None,
):
    """Backtracking Armijo search along the retracted direction.

    Returns (sigma, accepted); sigma = 0 with accepted=False when the
    direction is not a descent direction (e.g. zero gradient) or the
    backtracking budget is exhausted.
    """
    slope = _inner_sum(atoms, grads, directions)
    if not np.isfinite(slope) or slope >= 0.0:
        return 0.0, False
    if psi0 is None:
        psi0 = dict_objective(batch, atoms, cfg.trace_penalty)
    sigma = cfg.step0
    for _ in range(cfg.max_backtracks + 1):
        try:
            psi = dict_objective(batch, retraction(atoms, sigma * directions), cfg.trace_penalty)
        except ReconstructionNotPDError:
            sigma *= cfg.backtrack
            continue
        if psi <= psi0 + cfg.armijo_c1 * sigma * slope:
            return sigma, True
        sigma *= cfg.backtrack
    return 0.0, False


def dict_update(
    batch: DictBatch,
    dictionary: Dictionary,
    cfg: DictLearnConfig = DictLearnConfig(),
    freeze: bool = False,
) -> Dictionary:
    """Run Riemannian CG on the atoms with the batch codes frozen.

    Monotone in psi by construction; atom class labels never change.
    With freeze=True the input dictionary is returned untouched (the
    fixed-dictionary ablation).
    """
    if freeze:
        return dictionary
    atoms = dictionary.atoms.copy()
    psi = dict_objective(batch, atoms, cfg.trace_penalty)
    grads = np.stack(
        [
            dict_riemannian_grad(atoms[i], g)
            for i, g in enumerate(_euclidean_grads_all(batch, atoms, cfg.trace_penalty))
        ]
    )
    state = CgState(
        atoms, grads, -grads, 0.0, 0.0, 0, _inner_sum(atoms, grads, grads)
    )
    for _ in range(cfg.max_iterations):
        if np.sqrt(max(state.grad_norm_sq, 0.0)) < cfg.grad_tol:
            break
        sigma, ok = line_search(batch, state.atoms, state.grads, state.dirs, cfg, psi)
        if not ok:
            break
        new_atoms = retraction(state.atoms, sigma * state.dirs)
        psi = dict_objective(batch, new_atoms, cfg.trace_penalty)
        egrads = _euclidean_grads_all(batch, new_atoms, cfg.trace_penalty)
        new_grads = np.stack(
            [dict_riemannian_grad(new_atoms[i], egrads[i]) for i in range(len(new_atoms))]
        )
        state = replace(
            cg_direction(state, new_atoms, new_grads, cfg), sigma=sigma
        )
    return Dictionary(state.atoms, dictionary.labels, dictionary.atoms_per_class)
