"""DFT beam codebooks for uniform planar arrays and spatial spectra.

Beam j maps to the spatial-frequency pair (k_x, k_y) = (j // n_y, j mod n_y)
and antenna (n, m) flattens to n * n_y + m, so spectrum bin j and beam j
share one coordinate system: S_j = |a_j^H h|^2, computed here through the
2-D DFT of the antenna grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Codebook:
    beams: np.ndarray  # (N_c, N_t) complex, row j = beam a_j
    n_x: int
    n_y: int

    @property
    def size(self):
        return self.beams.shape[0]

    @property
    def num_antennas(self):
        return self.beams.shape[1]

    def index_to_pair(self, j):
        return j // self.n_y, j % self.n_y

    def pair_to_index(self, k_x, k_y):
        return k_x * self.n_y + k_y


def dft_codebook(n_x, n_y):
    """All n_x*n_y orthogonal DFT beams of an n_x x n_y planar array.

    a_j(n, m) = exp(-2j*pi*(k_x n / n_x + k_y m / n_y)), flattened with the
    same n * n_y + m ordering as the steering vectors.
    """
    if n_x < 1 or n_y < 1:
        raise ValueError(f"array dims must be >= 1, got ({n_x}, {n_y})")
    kx = np.arange(n_x)
    ky = np.arange(n_y)
    n = np.arange(n_x)
    m = np.arange(n_y)
    phase_x = np.exp(-2j * np.pi * np.outer(kx, n) / n_x)  # (n_x, n_x)
    phase_y = np.exp(-2j * np.pi * np.outer(ky, m) / n_y)  # (n_y, n_y)
    beams = np.einsum("kn,lm->klnm", phase_x, phase_y).reshape(
        n_x * n_y, n_x * n_y
    )
    return Codebook(beams=beams, n_x=n_x, n_y=n_y)


def spatial_spectrum(h, n_x, n_y):
    """Power over spatial-frequency bins: S_j = |a_j^H h|^2.

    Evaluated via the unnormalized 2-D inverse DFT of the antenna grid
    (exactly the inner products against the codebook rows), returned flat
    in codebook order. Satisfies Parseval: sum(S) = N_t * ||h||^2.
    """
    h = np.asarray(h).reshape(-1)
    if h.size != n_x * n_y:
        raise ValueError(f"channel length {h.size} != {n_x}*{n_y} antennas")
    grid = h.reshape(n_x, n_y)
    coeff = h.size * np.fft.ifft2(grid)
    return (np.abs(coeff) ** 2).reshape(-1)


def coarsen_spectrum(s, n_x, n_y, out_x, out_y):
    """Non-overlapping mean pooling of a spectrum grid down to (out_x, out_y)."""
    s = np.asarray(s, dtype=np.float64).reshape(n_x, n_y)
    if n_x % out_x != 0 or n_y % out_y != 0:
        raise ValueError(
            f"output dims ({out_x}, {out_y}) must divide spectrum dims ({n_x}, {n_y})"
        )
    bx, by = n_x // out_x, n_y // out_y
    return s.reshape(out_x, bx, out_y, by).mean(axis=(1, 3))
