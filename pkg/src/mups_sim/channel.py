"""MIMO channel generation, precoder feedback quantization and hardening statistics.

The channel model is a correlated Rayleigh draw per (user, cell, subband):
H = sqrt(g) * Rrx^(1/2) @ G @ Rtx^(1/2), with G i.i.d. standard complex
Gaussian, g the linear pathloss+shadowing gain and R exponential-correlation
matrices. Feedback is either a dual-codebook quantization (grid-of-beams x
co-phasing) or the dominant right singular vector for large arrays.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .phy import Precoder


class DimensionMismatchError(ValueError):
    """Codebooks do not compose or channel shape is inconsistent."""


class DegenerateChannelError(ValueError):
    """Operation undefined on an all-zero channel."""


class ShapeMismatchError(ValueError):
    """Ensemble members do not share a common shape."""


@dataclass
class LinkGeometry:
    """Large-scale link state between one user and one cell."""

    distance_m: float
    pathloss_db: float
    shadowing_db: float = 0.0

    def __post_init__(self):
        if self.distance_m <= 0:
            raise ValueError(f"distance_m must be > 0, got {self.distance_m}")
        if self.pathloss_db < 0:
            raise ValueError(f"pathloss_db must be >= 0, got {self.pathloss_db}")

    @property
    def gain_linear(self) -> float:
        """Linear power gain folding pathloss and shadowing."""
        return float(10.0 ** (-(self.pathloss_db + self.shadowing_db) / 10.0))


@dataclass
class AntennaConfig:
    n_tx: int = 8
    n_rx: int = 2
    element_spacing_wavelengths: float = 0.5
    tx_correlation: float = 0.5
    rx_correlation: float = 0.2

    def __post_init__(self):
        if self.n_tx < 1 or self.n_rx < 1:
            raise ValueError("antenna counts must be >= 1")
        for name in ("tx_correlation", "rx_correlation"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass
class ChannelMatrix:
    """Complex n_rx x n_tx gain matrix for one (user, cell, subband)."""

    entries: np.ndarray
    user_id: int = 0
    cell_id: int = 0
    subband_id: int = 0

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.complex128)
        if self.entries.ndim != 2:
            raise ValueError("channel entries must be a 2-D matrix")
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("channel entries must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


@dataclass
class Codebook:
    """List of 2**bits complex codewords with unit-norm columns."""

    codewords: list[np.ndarray]
    bits: int

    def __post_init__(self):
        self.codewords = [np.asarray(w, dtype=np.complex128) for w in self.codewords]
        if len(self.codewords) != 2**self.bits:
            raise ValueError(
                f"codebook must hold 2**{self.bits}={2**self.bits} codewords, "
                f"got {len(self.codewords)}"
            )
        for w in self.codewords:
            norms = np.linalg.norm(w, axis=0)
            if not np.allclose(norms, 1.0, atol=1e-9):
                raise ValueError("codeword columns must have unit norm")


@functools.lru_cache(maxsize=64)
def _correlation_sqrt(n: int, rho: float) -> np.ndarray:
    """Hermitian square root of the exponential correlation matrix rho**|i-j|."""
    if n == 1 or rho == 0.0:
        return np.eye(n, dtype=np.complex128)
    idx = np.arange(n)
    corr = rho ** np.abs(idx[:, None] - idx[None, :])
    w, u = np.linalg.eigh(corr.astype(np.complex128))
    w = np.clip(w, 0.0, None)
    return (u * np.sqrt(w)) @ u.conj().T


def generate_channel(
    geometry: LinkGeometry,
    antennas: AntennaConfig,
    rng: np.random.Generator,
    user_id: int = 0,
    cell_id: int = 0,
    subband_id: int = 0,
) -> ChannelMatrix:
    """Draw one correlated-Rayleigh channel realization.

    E[|entry|^2] equals the linear pathloss+shadowing gain of `geometry`.
    """
    m_r, n_t = antennas.n_rx, antennas.n_tx
    g = geometry.gain_linear
    iid = (rng.standard_normal((m_r, n_t)) + 1j * rng.standard_normal((m_r, n_t))) / np.sqrt(2.0)
    h = _correlation_sqrt(m_r, antennas.rx_correlation) @ iid @ _correlation_sqrt(
        n_t, antennas.tx_correlation
    )
    return ChannelMatrix(np.sqrt(g) * h, user_id=user_id, cell_id=cell_id, subband_id=subband_id)


def make_dual_codebooks(n_tx: int, b1: int = 4, b2: int = 4) -> tuple[Codebook, Codebook]:
    """Default dual codebooks: oversampled DFT beams over half the array
    (block-diagonal wideband part) and co-phasing of the two halves.
    """
    if n_tx < 2 or n_tx % 2:
        raise DimensionMismatchError(f"dual codebook needs an even n_tx >= 2, got {n_tx}")
    half = n_tx // 2
    n_beams, n_phases = 2**b1, 2**b2
    beams = []
    for k in range(n_beams):
        m = np.arange(half)
        b = np.exp(2j * np.pi * m * k / n_beams) / np.sqrt(half)
        w1 = np.zeros((n_tx, 2), dtype=np.complex128)
        w1[:half, 0] = b
        w1[half:, 1] = b
        beams.append(w1)
    phases = [
        np.array([[1.0], [np.exp(2j * np.pi * j / n_phases)]], dtype=np.complex128) / np.sqrt(2.0)
        for j in range(n_phases)
    ]
    return Codebook(beams, b1), Codebook(phases, b2)


def compose_codebooks(cb1: Codebook, cb2: Codebook) -> np.ndarray:
    """All 2**(B1+B2) composed rank-1 precoders, stacked as rows (index-major in cb1)."""
    r1 = cb1.codewords[0].shape[1]
    r2 = cb2.codewords[0].shape[0]
    if r1 != r2:
        raise DimensionMismatchError(
            f"codebooks do not compose: inner dims {r1} (cb1) vs {r2} (cb2)"
        )
    composed = np.empty((len(cb1.codewords), len(cb2.codewords), cb1.codewords[0].shape[0]),
                        dtype=np.complex128)
    for i, w1 in enumerate(cb1.codewords):
        for j, w2 in enumerate(cb2.codewords):
            composed[i, j] = (w1 @ w2)[:, 0]
    return composed.reshape(-1, cb1.codewords[0].shape[0])


def quantize_dual_codebook(h: ChannelMatrix, cb1: Codebook, cb2: Codebook) -> Precoder:
    """Select the codeword composition maximizing ||H V||^2 and return it unit-norm."""
    composed = compose_codebooks(cb1, cb2)
    mat = h.entries
    if mat.shape[1] != composed.shape[1]:
        raise DimensionMismatchError(
            f"channel has {mat.shape[1]} tx ports but codewords have {composed.shape[1]}"
        )
    scores = np.linalg.norm(mat @ composed.T, axis=0) ** 2
    best = int(np.argmax(scores))
    v = composed[best]
    return Precoder(v / np.linalg.norm(v), origin="codebook")


def svd_feedback(h: ChannelMatrix) -> Precoder:
    """Right singular vector of the largest singular value (unquantized feedback)."""
    mat = h.entries
    if not np.any(mat):
        raise DegenerateChannelError("cannot decompose an all-zero channel")
    _, _, vh = np.linalg.svd(mat)
    v = vh[0].conj()
    k = int(np.argmax(np.abs(v)))
    v = v * (v[k].conj() / abs(v[k]))
    return Precoder(v / np.linalg.norm(v), origin="svd")


def _frob_sq(samples: list[ChannelMatrix]) -> tuple[np.ndarray, int]:
    if len(samples) < 2:
        raise ValueError("need at least 2 samples")
    shape = samples[0].shape
    for s in samples[1:]:
        if s.shape != shape:
            raise ShapeMismatchError(f"sample shapes differ: {s.shape} vs {shape}")
    x = np.array([np.linalg.norm(s.entries) ** 2 for s in samples])
    return x, min(shape)


def hardening_statistic(samples: list[ChannelMatrix]) -> float:
    """Ensemble variance of ||H||^2 / E(||H||^2), scaled by 1/min(n_tx, n_rx).

    Shrinks toward zero as both antenna counts grow; invariant to global
    channel scaling because the norm is normalized by its ensemble mean.
    """
    x, min_dim = _frob_sq(samples)
    mean = x.mean()
    if mean == 0.0:
        return 0.0
    return float(np.var(x / mean, ddof=1) / min_dim)


def hardening_literal(samples: list[ChannelMatrix]) -> np.ndarray:
    """Per-realization normalized norm (1/min(N,M)) * ||H||^2 / E(||H||^2)."""
    x, min_dim = _frob_sq(samples)
    mean = x.mean()
    if mean == 0.0:
        return np.zeros_like(x)
    return (x / mean) / min_dim
