"""HPD kernel: validation, eigendecomposition, spectral functions, metric."""

import numpy as np
import pytest

from riemsar.errors import (
    DimensionMismatchError,
    NotHermitianError,
    NotPositiveDefiniteError,
)
from riemsar.hpd import (
    airm_distance,
    airm_inner,
    expm,
    herm_eig,
    invsqrtm,
    logm,
    random_hermitian,
    random_hpd,
    spectral_fn,
    sqrtm,
    validate_hpd,
)


class TestValidateHpd:
    def test_identity_accepted(self):
        out = validate_hpd(np.eye(3))
        assert np.allclose(out, np.eye(3))

    def test_zero_eigenvalue_rejected(self):
        with pytest.raises(NotPositiveDefiniteError):
            validate_hpd(np.diag([1.0, 0.0, 1.0]))

    def test_negative_eigenvalue_rejected(self):
        with pytest.raises(NotPositiveDefiniteError):
            validate_hpd(np.diag([1.0, -0.5, 1.0]))

    def test_gram_products_accepted(self, rng):
        # eigenvalue positivity re-checked with the general (non-Hermitian)
        # eigensolver as an independent oracle
        for _ in range(20):
            a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
            raw = a @ a.conj().T + 1e-3 * np.eye(3)
            out = validate_hpd(raw)
            assert np.max(np.abs(out - out.conj().T)) == 0.0
            assert np.all(np.linalg.eigvals(out).real > 0)
            assert np.max(np.abs(np.linalg.eigvals(out).imag)) < 1e-10

    def test_not_hermitian(self, rng):
        m = np.eye(3, dtype=complex)
        m[0, 1] = 1.0
        with pytest.raises(NotHermitianError):
            validate_hpd(m, tol=1e-12)

    def test_non_square(self):
        with pytest.raises(DimensionMismatchError):
            validate_hpd(np.ones((2, 3)))

    def test_tiny_eigenvalue_regularized(self):
        m = np.diag([1.0, 1e-14, 1.0])
        out = validate_hpd(m)
        assert np.linalg.eigvalsh(out)[0] > 1e-13

    def test_diagonal_real_positive(self, rng):
        out = validate_hpd(random_hpd(3, rng))
        assert np.all(np.diag(out).imag == 0.0)
        assert np.all(np.diag(out).real > 0.0)


class TestHermEig:
    def test_identity(self):
        w, v = herm_eig(np.eye(3))
        assert np.allclose(w, 1.0)

    def test_diagonal_permutation(self):
        w, _ = herm_eig(np.diag([3.0, 1.0, 2.0]))
        assert np.allclose(w, [1.0, 2.0, 3.0])

    def test_reconstruction(self, rng):
        for _ in range(20):
            x = random_hermitian(4, rng)
            w, v = herm_eig(x)
            rel = np.linalg.norm((v * w) @ v.conj().T - x) / np.linalg.norm(x)
            assert rel < 1e-10
            assert np.linalg.norm(v.conj().T @ v - np.eye(4)) < 1e-10
            assert np.all(np.diff(w) >= 0)

    def test_eigenvalue_sum_is_trace(self, rng):
        x = random_hermitian(5, rng)
        w, _ = herm_eig(x)
        assert abs(w.sum() - np.trace(x).real) < 1e-10 * max(abs(np.trace(x).real), 1)


class TestSpectralFn:
    def test_log_identity_is_zero(self):
        assert np.allclose(logm(np.eye(3)), 0.0)

    def test_invsqrt_diagonal(self):
        out = invsqrtm(np.diag([4.0, 9.0, 16.0]))
        assert np.allclose(out, np.diag([0.5, 1.0 / 3.0, 0.25]), atol=1e-14)

    def test_log_exp_round_trip(self, rng):
        for _ in range(20):
            x = random_hpd(3, rng)
            rel = np.linalg.norm(expm(logm(x)) - x) / np.linalg.norm(x)
            assert rel < 1e-10

    def test_sqrt_squares_back(self, rng):
        x = random_hpd(3, rng)
        s = sqrtm(x)
        assert np.linalg.norm(s @ s - x) / np.linalg.norm(x) < 1e-10

    def test_invsqrt_whitens(self, rng):
        x = random_hpd(3, rng)
        h = invsqrtm(x)
        assert np.linalg.norm(h @ x @ h - np.eye(3)) < 1e-10

    def test_pd_required_for_log(self):
        with pytest.raises(NotPositiveDefiniteError):
            spectral_fn(np.diag([1.0, -1.0]), "log")

    def test_unknown_function(self):
        with pytest.raises(ValueError):
            spectral_fn(np.eye(2), "cos")


class TestAirm:
    def test_coincident_points(self):
        assert airm_distance(np.eye(3), np.eye(3)) == 0.0

    def test_scaled_identity(self):
        d = airm_distance(np.eye(3), np.exp(2.0) * np.eye(3))
        assert abs(d - 2.0 * np.sqrt(3.0)) < 1e-12

    def test_symmetry_and_positivity(self, rng):
        for _ in range(50):
            x, y = random_hpd(3, rng), random_hpd(3, rng)
            dxy, dyx = airm_distance(x, y), airm_distance(y, x)
            assert abs(dxy - dyx) <= 1e-9 * max(dxy, 1.0)
            assert dxy > 0.0
            assert airm_distance(x, x) <= 1e-9

    def test_affine_invariance(self, rng):
        for _ in range(20):
            x, y = random_hpd(3, rng), random_hpd(3, rng)
            a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
            xa = a @ x @ a.conj().T
            ya = a @ y @ a.conj().T
            d0, d1 = airm_distance(x, y), airm_distance(xa, ya)
            assert abs(d0 - d1) <= 1e-9 * d0

    def test_inversion_invariance(self, rng):
        for _ in range(20):
            x, y = random_hpd(3, rng), random_hpd(3, rng)
            d0 = airm_distance(x, y)
            d1 = airm_distance(np.linalg.inv(x), np.linalg.inv(y))
            assert abs(d0 - d1) <= 1e-9 * d0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            airm_distance(np.eye(2), np.eye(3))


class TestAirmInner:
    def test_identity_base(self):
        assert abs(airm_inner(np.eye(3), np.eye(3), np.eye(3)) - 3.0) < 1e-14

    def test_identity_base_general(self, rng):
        u, v = random_hermitian(3, rng), random_hermitian(3, rng)
        expect = np.trace(u @ v).real
        assert abs(airm_inner(np.eye(3), u, v) - expect) < 1e-12

    def test_positive_definiteness(self, rng):
        # positivity by congruence: <u,u>_p equals ||p^{-1/2} u p^{-1/2}||^2
        for _ in range(20):
            p = random_hpd(3, rng)
            u = random_hermitian(3, rng)
            val = airm_inner(p, u, u)
            h = invsqrtm(p)
            oracle = np.linalg.eigvalsh(h @ u @ h)
            assert val > 0.0
            assert abs(val - np.sum(oracle**2)) < 1e-9 * val

    def test_symmetric_bilinear(self, rng):
        p = random_hpd(2, rng)
        u, v = random_hermitian(2, rng), random_hermitian(2, rng)
        assert abs(airm_inner(p, u, v) - airm_inner(p, v, u)) < 1e-12
