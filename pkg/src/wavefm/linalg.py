"""Complex matrix helpers kept outside the autodiff graph.

All functions are pure and operate on plain numpy complex arrays. The SVD
is a one-sided Jacobi, adequate and robust for the small effective channels
this pipeline produces (<= 8x8); the matching numpy routines serve as
independent oracles in the test suite, never in the library itself.
"""

from __future__ import annotations

import numpy as np

DEFAULT_COND_CEILING = 1e12


class SingularMatrixError(np.linalg.LinAlgError):
    """Inversion refused; carries the condition estimate that tripped it."""

    def __init__(self, message, cond_estimate):
        super().__init__(f"{message} (condition estimate {cond_estimate:.3e})")
        self.cond_estimate = cond_estimate


def cmatmul(a, b):
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ValueError(f"cmatmul: inner dims differ, {a.shape} @ {b.shape}")
    return a @ b


def hermitian(a):
    return np.asarray(a).conj().swapaxes(-1, -2)


def frobenius_norm(a):
    return float(np.sqrt((np.abs(a) ** 2).sum()))


def dft_matrix(n):
    """F[k, m] = exp(-2j*pi*k*m/n), unnormalized."""
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n)


def svd(a, max_sweeps=60, tol=1e-14):
    """One-sided Jacobi SVD of a complex matrix.

    Returns (U, s, Vh) with a = U @ diag(s) @ Vh, singular values sorted
    non-increasing. Thin factors: U is (m, k), Vh is (k, n), k = min(m, n).
    """
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim != 2:
        raise ValueError(f"svd expects a matrix, got shape {a.shape}")
    m, n = a.shape
    if m < n:
        u, s, vh = svd(a.conj().T, max_sweeps=max_sweeps, tol=tol)
        return vh.conj().T, s, u.conj().T

    g = a.astype(np.complex128, copy=True)
    v = np.eye(n, dtype=np.complex128)
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                app = float(np.real(np.vdot(g[:, p], g[:, p])))
                aqq = float(np.real(np.vdot(g[:, q], g[:, q])))
                apq = np.vdot(g[:, p], g[:, q])
                mag = abs(apq)
                if mag <= tol * np.sqrt(app * aqq) or mag == 0.0:
                    continue
                off = max(off, mag / max(np.sqrt(app * aqq), np.finfo(float).tiny))
                phase = apq / mag
                tau = (aqq - app) / (2.0 * mag)
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                if tau == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s_ = t * c
                gp = c * g[:, p] - s_ * np.conj(phase) * g[:, q]
                gq = s_ * phase * g[:, p] + c * g[:, q]
                g[:, p], g[:, q] = gp, gq
                vp = c * v[:, p] - s_ * np.conj(phase) * v[:, q]
                vq = s_ * phase * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = vp, vq
        if off == 0.0:
            break

    sigma = np.sqrt(np.maximum(np.real((g.conj() * g).sum(axis=0)), 0.0))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    g = g[:, order]
    v = v[:, order]
    u = np.zeros_like(g)
    for j in range(n):
        if sigma[j] > 0.0:
            u[:, j] = g[:, j] / sigma[j]
    return u, sigma, v.conj().T


def cond_estimate(a):
    """sigma_max / sigma_min from the Jacobi SVD; inf when rank deficient."""
    _, s, _ = svd(a)
    if s[-1] == 0.0:
        return np.inf
    return float(s[0] / s[-1])


def inverse(a, cond_ceiling=DEFAULT_COND_CEILING):
    """Gauss-Jordan inverse with partial pivoting and a conditioning gate."""
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"inverse expects a square matrix, got shape {a.shape}")
    cond = cond_estimate(a)
    if not np.isfinite(cond) or cond > cond_ceiling:
        raise SingularMatrixError("matrix is singular or ill-conditioned", cond)
    n = a.shape[0]
    aug = np.concatenate([a.copy(), np.eye(n, dtype=np.complex128)], axis=1)
    for col in range(n):
        pivot = col + np.argmax(np.abs(aug[col:, col]))
        if abs(aug[pivot, col]) == 0.0:
            raise SingularMatrixError("exact zero pivot", np.inf)
        if pivot != col:
            aug[[col, pivot]] = aug[[pivot, col]]
        aug[col] /= aug[col, col]
        for row in range(n):
            if row != col and aug[row, col] != 0.0:
                aug[row] -= aug[row, col] * aug[col]
    return np.ascontiguousarray(aug[:, n:])
