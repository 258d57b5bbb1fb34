"""Shared helpers: random matrix factories and independent oracles.

The oracles here deliberately avoid the library's own code paths: the
2x2 objective grid uses closed-form eigenvalues, the scene classifier is
a plain max-likelihood rule on the generating prototypes, and the naive
convolution is a quadruple loop.
"""

import numpy as np
import pytest

from riemsar.coding import Dictionary, EncodingProblem
from riemsar.hpd import random_hermitian, random_hpd


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def make_dictionary(rng, dim=3, per_class=4, classes=3, scale=1.0, jitter=1e-3):
    n = per_class * classes
    atoms = np.stack([random_hpd(dim, rng, scale=scale, jitter=jitter) for _ in range(n)])
    labels = np.repeat(np.arange(1, classes + 1), per_class)
    return Dictionary(atoms, labels, per_class)


def make_problem(rng, dim=3, scale=1.0):
    return EncodingProblem.from_target(random_hpd(dim, rng, scale=scale))


def eig2x2(a, c, b):
    """Closed-form eigenvalues of Hermitian [[a, b], [conj(b), c]] (vectorized)."""
    m = 0.5 * (a + c)
    det = a * c - np.abs(b) ** 2
    s = np.sqrt(np.maximum(m * m - det, 0.0))
    return m - s, m + s


def brute_force_objective_2x2(problem, dictionary, lam, grid):
    """Objective on a full (G, 3) grid of codes via closed-form 2x2 spectra.

    Independent of the library's eigensolver path. Infeasible grid points
    (non-PD reconstruction) evaluate to +inf.
    """
    h = problem.whitener
    wa = np.einsum("ij,njk,kl->nil", h, dictionary.atoms, h)  # whitened atoms
    a = np.einsum("gn,n->g", grid, wa[:, 0, 0].real)
    c = np.einsum("gn,n->g", grid, wa[:, 1, 1].real)
    b = grid @ wa[:, 0, 1]
    lo, hi = eig2x2(a, c, b)
    obj = np.full(grid.shape[0], np.inf)
    ok = lo > 0.0
    obj[ok] = 0.5 * (np.log(lo[ok]) ** 2 + np.log(hi[ok]) ** 2) + lam * grid[ok].sum(
        axis=1
    )
    return obj


def wishart_ml_classify(img, prototypes):
    """Max-likelihood classifier: argmin_c [ln det S_c + tr(S_c^{-1} Z)]."""
    inv = np.stack([np.linalg.inv(p) for p in prototypes])
    logdet = np.array([np.linalg.slogdet(p)[1] for p in prototypes])
    flat = img.reshape(-1, img.shape[-1], img.shape[-1])
    scores = logdet[None, :] + np.einsum("ckl,plk->pc", inv, flat).real
    return (np.argmin(scores, axis=1) + 1).reshape(img.shape[:2])


def naive_conv2d(x, w, b):
    """Quadruple-loop valid cross-correlation, the convolution oracle."""
    bs, cin, h, ww = x.shape
    cout, _, k, _ = w.shape
    ho, wo = h - k + 1, ww - k + 1
    out = np.zeros((bs, cout, ho, wo))
    for s in range(bs):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    out[s, o, i, j] = (
                        np.sum(x[s, :, i : i + k, j : j + k] * w[o]) + b[o]
                    )
    return out


__all__ = [
    "make_dictionary",
    "make_problem",
    "eig2x2",
    "brute_force_objective_2x2",
    "wishart_ml_classify",
    "naive_conv2d",
    "random_hpd",
    "random_hermitian",
]
