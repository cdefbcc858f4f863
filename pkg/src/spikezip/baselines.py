"""Conventional transform-coding baselines: PCA, DCT and Symmlet-4 DWT.

Every codec works on single-channel spike vectors of length D; multichannel
input of shape (N, M, D) is treated as N*M independent vectors. Kept
coefficients are assumed to be sent at the raw sample bit depth, so the
compression ratios follow from coefficient counts alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.fft import dct, idct

# Symmlet-4 analysis lowpass filter (8 taps, least-asymmetric Daubechies).
SYM4_LOWPASS = np.array(
    [
        -0.07576571478927333,
        -0.02963552764599851,
        0.49761866763201545,
        0.8037387518059161,
        0.29785779560527736,
        -0.09921954357684722,
        -0.012603967262037833,
        0.0322231006040427,
    ]
)


def _as_vectors(spikes) -> tuple[np.ndarray, tuple[int, ...]]:
    x = np.asarray(spikes, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    return x.reshape(-1, x.shape[-1]), x.shape


def _check_m(m: int, limit: int) -> None:
    if not 1 <= m <= limit:
        raise ValueError(f"m must be in [1, {limit}], got {m}")


# ---------------------------------------------------------------------------
# PCA


@dataclass
class PcaBasis:
    mean: np.ndarray  # (D,)
    components: np.ndarray  # (m, D), orthonormal rows
    eigenvalues: np.ndarray  # (m,), descending

    @property
    def m(self) -> int:
        return self.components.shape[0]


def pca_fit(spikes, m: int) -> PcaBasis:
    """Leading ``m`` eigenvectors of the centered sample covariance.

    Each eigenvector is signed so its largest-magnitude entry is positive.
    """
    x, _ = _as_vectors(spikes)
    n, d = x.shape
    _check_m(m, d)
    if n < m:
        raise ValueError(f"need at least m={m} training vectors, got {n}")
    mean = x.mean(axis=0)
    cov = (x - mean).T @ (x - mean) / max(n - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:m]
    comps = vecs[:, order].T.copy()
    pivot = np.abs(comps).argmax(axis=1)
    comps *= np.sign(comps[np.arange(m), pivot])[:, None]
    return PcaBasis(mean, comps, np.clip(vals[order], 0.0, None))


def pca_codec(basis: PcaBasis, spikes) -> tuple[np.ndarray, np.ndarray, float]:
    """Project onto the basis and back; returns (components, reconstruction, CR)."""
    x, shape = _as_vectors(spikes)
    d = basis.mean.shape[0]
    if x.shape[1] != d:
        raise ValueError(f"spike length {x.shape[1]} != basis length {d}")
    coef = (x - basis.mean) @ basis.components.T
    recon = coef @ basis.components + basis.mean
    return coef.reshape(shape[:-1] + (basis.m,)), recon.reshape(shape), d / basis.m


# ---------------------------------------------------------------------------
# DCT


def dct_codec(spikes, m: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Keep the first ``m`` orthonormal DCT-II coefficients of each spike."""
    x, shape = _as_vectors(spikes)
    d = x.shape[1]
    _check_m(m, d)
    coef = dct(x, type=2, norm="ortho", axis=1)
    coef[:, m:] = 0.0
    recon = idct(coef, type=2, norm="ortho", axis=1)
    return coef[:, :m].reshape(shape[:-1] + (m,)), recon.reshape(shape), d / m


# ---------------------------------------------------------------------------
# DWT


def sym4_highpass() -> np.ndarray:
    h = SYM4_LOWPASS
    return ((-1.0) ** np.arange(1, len(h) + 1)) * h[::-1]


def _next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def analysis_step(n: int) -> np.ndarray:
    """One periodic analysis level as an orthogonal n x n matrix.

    The first n/2 rows give approximation coefficients, the rest details.
    Filters are applied as a circular convolution with the usual
    periodization alignment, ``a[i] = sum_k h[k] x[(2i + 4 - k) mod n]``.
    """
    if n < 2 or n % 2:
        raise ValueError("analysis length must be even")
    h, g = SYM4_LOWPASS, sym4_highpass()
    half = n // 2
    mat = np.zeros((n, n))
    for i in range(half):
        for k in range(len(h)):
            col = (2 * i + len(h) // 2 - k) % n
            mat[i, col] += h[k]
            mat[half + i, col] += g[k]
    return mat


@lru_cache(maxsize=16)
def dwt_matrix(n: int) -> np.ndarray:
    """Full-depth periodic Symmlet-4 transform for a power-of-two length ``n``.

    Output order is [coarsest approximation, coarsest detail, ..., finest
    detail]. The matrix is orthogonal, so synthesis is its transpose.
    """
    if n < 1 or n & (n - 1):
        raise ValueError("length must be a power of two")
    total = np.eye(n)
    length = n
    while length >= 2:
        step = np.eye(n)
        step[:length, :length] = analysis_step(length)
        total = step @ total
        length //= 2
    total.setflags(write=False)
    return total


def dwt(x) -> np.ndarray:
    """Forward transform of (..., n) signals, n a power of two."""
    x = np.asarray(x, dtype=np.float64)
    return x @ dwt_matrix(x.shape[-1]).T


def idwt(coef) -> np.ndarray:
    coef = np.asarray(coef, dtype=np.float64)
    return coef @ dwt_matrix(coef.shape[-1])


def dwt_compression_ratio(spike_len: int, bit_depth: int, m: int) -> float:
    """``D*W / (W*m + D)``: m kept coefficients plus a D-bit position mask."""
    return spike_len * bit_depth / (bit_depth * m + spike_len)


def dwt_codec(spikes, m: int, bit_depth: int = 16) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Keep the ``m`` largest-magnitude wavelet coefficients of each spike.

    Spikes are zero-padded to the next power of two and the padding is
    removed after synthesis. Returns (kept coefficients, keep mask,
    reconstruction, CR); ties in magnitude keep the lower position.
    """
    x, shape = _as_vectors(spikes)
    d = x.shape[1]
    n = _next_pow2(d)
    _check_m(m, n)
    padded = np.zeros((len(x), n))
    padded[:, :d] = x
    coef = dwt(padded)
    order = np.argsort(-np.abs(coef), axis=1, kind="stable")[:, :m]
    mask = np.zeros_like(coef, dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    recon = idwt(np.where(mask, coef, 0.0))[:, :d]
    kept = np.where(mask, coef, 0.0)
    return (
        kept.reshape(shape[:-1] + (n,)),
        mask.reshape(shape[:-1] + (n,)),
        recon.reshape(shape),
        dwt_compression_ratio(d, bit_depth, m),
    )
