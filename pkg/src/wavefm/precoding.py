"""Hybrid MIMO precoding: codebook beam selection, regularized zero-forcing,
exhaustive single-user search, and rate metrics.

Multi-user convention: the stacked channel has one row per user holding
h_k^H, so row @ beam is the beamforming inner product h_k^H a_j and the
analog precoder stacks the selected codewords as columns.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .linalg import SingularMatrixError, inverse, svd
from .spectra import Codebook

LN2 = np.log(2.0)
DEFAULT_SU_BUDGET = 4_000_000  # candidate pairs per exhaustive search


@dataclass
class MuPrecodingProblem:
    h_rows: np.ndarray  # (K, N_t), row k = h_k^H
    codebook: Codebook
    power: float = 1.0
    sigma2: float = 0.1
    alpha: float = None  # None -> 0.1 * K * sigma2 / power


@dataclass
class HybridSolution:
    f_rf: np.ndarray
    f_bb: np.ndarray
    beam_indices: np.ndarray
    per_user_sinr: np.ndarray
    sum_rate: float
    duplicate_beams: bool = False
    nlos_users: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))


@dataclass
class SuSolution:
    tx_indices: tuple
    rx_indices: tuple
    objective: float  # analog-stage spectral efficiency, bits/s/Hz


def default_rzf_alpha(num_users, sigma2, power):
    return 0.1 * num_users * sigma2 / power


def select_beams_mu(h_rows, codebook: Codebook):
    """Per-user power-maximizing beam: argmax_j |h_k^H a_j|^2.

    Ties break to the lowest index. All-zero rows flag as deep-NLOS and
    get index 0. Returns (indices, nlos_user_indices).
    """
    h_rows = np.atleast_2d(h_rows)
    power = np.abs(h_rows @ codebook.beams.T) ** 2
    indices = power.argmax(axis=1)
    nlos = np.flatnonzero((np.abs(h_rows) ** 2).sum(axis=1) == 0.0)
    indices[nlos] = 0
    return indices, nlos


def rzf_baseband(h_eff, alpha, power, f_rf):
    """F_BB = beta * H_eff^H (H_eff H_eff^H + alpha I)^-1 with the single
    scalar beta enforcing ||F_RF F_BB||_F^2 = P."""
    if alpha < 0.0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    h_eff = np.asarray(h_eff, dtype=np.complex128)
    k = h_eff.shape[0]
    gram = h_eff @ h_eff.conj().T + alpha * np.eye(k)
    try:
        gram_inv = inverse(gram)
    except SingularMatrixError as err:
        raise SingularMatrixError(
            "effective channel Gram is singular; retry with alpha > 0",
            err.cond_estimate,
        ) from err
    f_raw = h_eff.conj().T @ gram_inv
    norm = np.linalg.norm(f_rf @ f_raw)
    if norm == 0.0:
        raise ValueError("zero baseband precoder; channel is degenerate")
    beta = np.sqrt(power) / norm
    return beta * f_raw


def sinr_sum_rate(h_rows, f_rf, f_bb, sigma2):
    """Per-user SINR and sum rate Sum_k log2(1 + SINR_k)."""
    g = h_rows @ f_rf @ f_bb  # (K, K): g[k, j] = h_k^H F_RF f_BB,j
    gains = np.abs(g) ** 2
    signal = np.diag(gains)
    interference = gains.sum(axis=1) - signal
    sinr = signal / (interference + sigma2)
    return sinr, float(np.log2(1.0 + sinr).sum())


def mu_upper_bound(h_rows, codebook: Codebook, alpha=None, power=1.0, sigma2=0.1):
    """Two-step local upper bound: per-user power-maximizing beams, then RZF.

    Greedy step 1 is per-user, not sum-rate optimal, so this bound is local;
    duplicate beams across users are allowed but flagged (they make the
    effective channel rank-deficient at alpha = 0).
    """
    h_rows = np.atleast_2d(h_rows)
    k = h_rows.shape[0]
    if alpha is None:
        alpha = default_rzf_alpha(k, sigma2, power)
    indices, nlos = select_beams_mu(h_rows, codebook)
    return mu_solution_for_beams(
        h_rows, codebook, indices, alpha=alpha, power=power, sigma2=sigma2, nlos=nlos
    )


def mu_solution_for_beams(
    h_rows, codebook: Codebook, indices, alpha=None, power=1.0, sigma2=0.1, nlos=None
):
    """Assemble F_RF from given beam indices and run the RZF digital stage."""
    h_rows = np.atleast_2d(h_rows)
    k = h_rows.shape[0]
    if alpha is None:
        alpha = default_rzf_alpha(k, sigma2, power)
    indices = np.asarray(indices, dtype=int)
    f_rf = codebook.beams[indices].T  # columns are the selected codewords
    h_eff = h_rows @ f_rf
    f_bb = rzf_baseband(h_eff, alpha, power, f_rf)
    sinr, rate = sinr_sum_rate(h_rows, f_rf, f_bb, sigma2)
    return HybridSolution(
        f_rf=f_rf,
        f_bb=f_bb,
        beam_indices=indices,
        per_user_sinr=sinr,
        sum_rate=rate,
        duplicate_beams=len(set(indices.tolist())) < k,
        nlos_users=nlos if nlos is not None else np.array([], dtype=int),
    )


def _log2_det(m):
    sign, logdet = np.linalg.slogdet(m)
    return float(np.real(logdet + np.log(sign))) / LN2


def su_snr_param(h, snr_db):
    """Linear SNR referred to a unit-mean-power channel element.

    The log-det objective uses the channel twice, so pathloss enters
    squared; dividing the nominal SNR by the mean element power makes
    "snr_db" mean the same thing across samples with very different
    free-space attenuation.
    """
    gain = float((np.abs(h) ** 2).mean())
    if gain == 0.0:
        raise ValueError("cannot reference SNR to an all-zero channel")
    return 10.0 ** (snr_db / 10.0) / gain


def su_analog_objective(h, f_rf, w_rf, snr, n_s):
    """log2 det(I + SNR/N_s * W^H H F (F^H F)^-1 F^H H^H W (W^H W)^-1)."""
    wf = w_rf.conj().T @ h @ f_rf
    inner = wf @ inverse(f_rf.conj().T @ f_rf) @ wf.conj().T
    m = np.eye(w_rf.shape[1]) + (snr / n_s) * inner @ inverse(w_rf.conj().T @ w_rf)
    return _log2_det(m)


def _is_orthogonal(codebook: Codebook):
    gram = codebook.beams.conj() @ codebook.beams.T
    n_t = codebook.num_antennas
    return np.allclose(gram, n_t * np.eye(codebook.size), atol=1e-6 * n_t)


def su_exhaustive(
    h, cb_tx: Codebook, cb_rx: Codebook, n_s, snr, budget=DEFAULT_SU_BUDGET
):
    """Search every unordered beam-index combination at both ends and return
    the analog-objective maximizer; ties break lexicographically on
    (tx indices, rx indices)."""
    if cb_tx.size < n_s or cb_rx.size < n_s:
        raise ValueError("codebooks must hold at least N_s beams")
    tx_combos = list(itertools.combinations(range(cb_tx.size), n_s))
    rx_combos = list(itertools.combinations(range(cb_rx.size), n_s))
    total = len(tx_combos) * len(rx_combos)
    if total > budget:
        raise ValueError(
            f"{total} candidate pairs exceed the search budget {budget}; "
            "use the desk codebook or raise the cap explicitly"
        )
    if _is_orthogonal(cb_tx) and _is_orthogonal(cb_rx):
        obj = _su_objective_orthogonal(h, cb_tx, cb_rx, tx_combos, rx_combos, n_s, snr)
    else:
        obj = np.empty((len(tx_combos), len(rx_combos)))
        for i, t in enumerate(tx_combos):
            f_rf = cb_tx.beams[list(t)].T
            for j, r in enumerate(rx_combos):
                w_rf = cb_rx.beams[list(r)].T
                obj[i, j] = su_analog_objective(h, f_rf, w_rf, snr, n_s)
    flat_best = int(obj.argmax())  # row-major: first max is the lex-smallest tie
    ti, ri = divmod(flat_best, len(rx_combos))
    return SuSolution(
        tx_indices=tx_combos[ti],
        rx_indices=rx_combos[ri],
        objective=float(obj[ti, ri]),
    )


def _su_objective_orthogonal(h, cb_tx, cb_rx, tx_combos, rx_combos, n_s, snr):
    """Vectorized objective over all combos using beamspace projections;
    valid because DFT codebooks satisfy F^H F = N_t I and W^H W = N_r I."""
    beamspace = cb_rx.beams.conj() @ h @ cb_tx.beams.T  # (N_rx, N_tx)
    tx_idx = np.asarray(tx_combos)  # (T, n_s)
    rx_idx = np.asarray(rx_combos)  # (R, n_s)
    scale = snr / (n_s * cb_tx.num_antennas * cb_rx.num_antennas)
    # sub[i, j] = beamspace[rx_idx[j]][:, tx_idx[i]] of shape (n_s, n_s)
    sub = beamspace[rx_idx[None, :, None, :], tx_idx[:, None, :, None]]
    sub = np.swapaxes(sub, 2, 3)  # rows index rx beams, cols tx beams
    gram = sub @ sub.conj().swapaxes(-1, -2)
    m = np.eye(n_s) + scale * gram
    det = np.linalg.det(m)
    return np.log2(np.real(det))


def su_digital(h_eff, n_s, f_rf, w_rf, snr, power=None):
    """Digital stage aligned with the dominant singular modes of H_eff.

    F_BB = (F_RF^H F_RF)^-1 V_s and W_BB = (W_RF^H W_RF)^-1 U_s, with F_BB
    scaled so ||F_RF F_BB||_F^2 = P (default P = N_s). Returns
    (F_BB, W_BB, spectral efficiency) where the efficiency is the log-det
    objective evaluated on the composed matrices.
    """
    h_eff = np.asarray(h_eff, dtype=np.complex128)
    u, _, vh = svd(h_eff)
    v_s = vh.conj().T[:, :n_s]
    u_s = u[:, :n_s]
    f_bb = inverse(f_rf.conj().T @ f_rf) @ v_s
    w_bb = inverse(w_rf.conj().T @ w_rf) @ u_s
    if power is None:
        power = float(n_s)
    norm = np.linalg.norm(f_rf @ f_bb)
    f_bb *= np.sqrt(power) / norm
    composed = w_bb.conj().T @ h_eff @ f_bb  # (N_s, N_s)
    noise_gram = w_bb.conj().T @ (w_rf.conj().T @ w_rf) @ w_bb
    m = np.eye(n_s) + (snr / n_s) * inverse(noise_gram) @ composed @ composed.conj().T
    return f_bb, w_bb, _log2_det(m)


def su_link_rate(h, cb_tx, cb_rx, tx_indices, rx_indices, n_s, snr, power=None):
    """End-to-end SU spectral efficiency for given beam index pairs."""
    f_rf = cb_tx.beams[list(tx_indices)].T
    w_rf = cb_rx.beams[list(rx_indices)].T
    h_eff = w_rf.conj().T @ h @ f_rf
    _, _, rate = su_digital(h_eff, n_s, f_rf, w_rf, snr, power=power)
    return rate


@dataclass
class EcdfTable:
    values: np.ndarray  # sorted ascending
    probs: np.ndarray  # empirical CDF at each value

    def quantile(self, q):
        return float(np.quantile(self.values, q))

    @property
    def median(self):
        return self.quantile(0.5)

    def rows(self):
        return list(zip(self.values.tolist(), self.probs.tolist()))


def sum_rate_ecdf(rates):
    """Empirical CDF of achieved rates, CSV-exportable via .rows()."""
    rates = np.asarray(rates, dtype=np.float64)
    if rates.size == 0:
        raise ValueError("cannot build an ECDF from an empty rate list")
    values = np.sort(rates)
    probs = np.arange(1, values.size + 1) / values.size
    return EcdfTable(values=values, probs=probs)
