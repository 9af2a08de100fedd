import numpy as np
import pytest

from wavefm import linalg as L


def _random_complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_svd_diag_case():
    _, s, _ = L.svd(np.diag([3.0, 1.0]).astype(complex))
    np.testing.assert_allclose(s, [3.0, 1.0], atol=1e-12)


def test_inverse_identity():
    np.testing.assert_allclose(L.inverse(np.eye(2, dtype=complex)), np.eye(2))


def test_dft_matrix_row0_and_unitarity():
    f = L.dft_matrix(4)
    np.testing.assert_allclose(f[0], np.ones(4), atol=1e-12)
    np.testing.assert_allclose(f.conj().T @ f, 4 * np.eye(4), atol=1e-10)


@pytest.mark.parametrize("shape", [(2, 2), (4, 4), (8, 8), (8, 3), (3, 8)])
def test_svd_reconstruction_and_ordering(shape):
    rng = np.random.default_rng(42)
    for _ in range(5):
        a = _random_complex(rng, shape)
        u, s, vh = L.svd(a)
        rec = u @ np.diag(s) @ vh
        rel = np.abs(rec - a).max() / np.abs(a).max()
        assert rel < 1e-10
        assert (s >= 0).all()
        assert (np.diff(s) <= 1e-12).all()
        # numpy is the independent oracle for the spectrum itself
        np.testing.assert_allclose(
            s, np.linalg.svd(a, compute_uv=False), rtol=1e-10, atol=1e-12
        )


def test_svd_unitary_factors():
    rng = np.random.default_rng(7)
    a = _random_complex(rng, (5, 4))
    u, s, vh = L.svd(a)
    np.testing.assert_allclose(u.conj().T @ u, np.eye(4), atol=1e-10)
    np.testing.assert_allclose(vh @ vh.conj().T, np.eye(4), atol=1e-10)


def test_inverse_matches_numpy_oracle():
    rng = np.random.default_rng(3)
    a = _random_complex(rng, (6, 6))
    np.testing.assert_allclose(L.inverse(a), np.linalg.inv(a), atol=1e-10)


def test_singular_inverse_carries_cond_estimate():
    with pytest.raises(L.SingularMatrixError) as err:
        L.inverse(np.ones((3, 3), dtype=complex))
    assert err.value.cond_estimate > L.DEFAULT_COND_CEILING or np.isinf(
        err.value.cond_estimate
    )


def test_hermitian_involution():
    rng = np.random.default_rng(5)
    a = _random_complex(rng, (4, 6))
    np.testing.assert_array_equal(L.hermitian(L.hermitian(a)), a)


def test_cmatmul_dim_check():
    with pytest.raises(ValueError, match="cmatmul"):
        L.cmatmul(np.ones((2, 3)), np.ones((2, 3)))


def test_frobenius_norm():
    a = np.array([[3.0, 4.0]], dtype=complex)
    assert L.frobenius_norm(a) == pytest.approx(5.0)
