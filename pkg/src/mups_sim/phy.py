"""Precoding, receive combining, SINR and spatial-compatibility measures.

All operations are pure and stateless. Noise power is normalized to 1 in the
SINR denominator; the transmit powers carried by a TransmissionContext set
the operating point (pathloss is folded into the channel matrices).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class RankDeficiencyError(ValueError):
    """Stacked precoders are too collinear for zero-forcing."""


class SingularCovarianceError(ValueError):
    """Interference covariance could not be inverted (non-finite inputs)."""


def _mat(h) -> np.ndarray:
    """Accept a ChannelMatrix or a plain complex array."""
    return h.entries if hasattr(h, "entries") else np.asarray(h, dtype=np.complex128)


def _vec(v) -> np.ndarray:
    arr = v.vector if hasattr(v, "vector") else np.asarray(v, dtype=np.complex128)
    return arr.reshape(-1)


@dataclass
class Precoder:
    """Transmit vector; unit norm for codebook/svd origin, power-scaled for ZF."""

    vector: np.ndarray
    origin: str = "codebook"

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.complex128).reshape(-1)
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("precoder entries must be finite")
        if self.origin not in ("codebook", "svd", "zero_forcing"):
            raise ValueError(f"unknown precoder origin {self.origin!r}")
        if self.origin in ("codebook", "svd"):
            n = np.linalg.norm(self.vector)
            if abs(n - 1.0) > 1e-9:
                raise ValueError(f"{self.origin} precoder must be unit norm, got {n}")


@dataclass
class Combiner:
    """Receive combining vector."""

    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.complex128).reshape(-1)
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("combiner entries must be finite")


@dataclass
class TransmissionContext:
    """Everything that determines one user's post-combining SINR on a PRB.

    serving: (channel, precoder, linear tx power) of the desired link.
    intra_cell_interferers: (precoder, power) co-scheduled on the same PRB,
        seen through the serving channel.
    inter_cell_interferers: (channel-from-that-cell, precoder, power) for the
        entries scheduled on this PRB in other cells.
    """

    serving: tuple
    intra_cell_interferers: list = field(default_factory=list)
    inter_cell_interferers: list = field(default_factory=list)
    mu_rank: int = 1

    def __post_init__(self):
        if self.mu_rank != 1 + len(self.intra_cell_interferers):
            raise ValueError("mu_rank must equal 1 + number of intra-cell interferers")
        if self.serving[2] < 0 or any(p < 0 for _, p in self.intra_cell_interferers):
            raise ValueError("powers must be >= 0")


def lmmse_irc_combiner(ctx: TransmissionContext, noise_power: float = 1.0) -> Combiner:
    """LMMSE interference-rejection combiner for the context's serving link.

    Inverts desired-covariance + interference-plus-noise covariance (the
    desired outer product enters twice, which only rescales the direction).
    """
    h, v, p = ctx.serving
    d = np.sqrt(p) * (_mat(h) @ _vec(v))
    m_r = d.shape[0]
    cov = noise_power * np.eye(m_r, dtype=np.complex128)
    for vec, pw in ctx.intra_cell_interferers:
        f = np.sqrt(pw) * (_mat(h) @ _vec(vec))
        cov += np.outer(f, f.conj())
    for hj, vec, pw in ctx.inter_cell_interferers:
        f = np.sqrt(pw) * (_mat(hj) @ _vec(vec))
        cov += np.outer(f, f.conj())
    full = 2.0 * np.outer(d, d.conj()) + cov + 1e-12 * np.eye(m_r)
    try:
        u = np.linalg.solve(full, d)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(f"covariance not invertible: {exc}") from exc
    if not np.all(np.isfinite(u)):
        raise SingularCovarianceError("combiner came out non-finite; check inputs")
    return Combiner(u)


def compute_sinr(ctx: TransmissionContext, combiner: Combiner) -> float:
    """Post-combining SINR with noise normalized to 1.

    Invariant to any nonzero scaling of the combiner.
    """
    h, v, p = ctx.serving
    u = combiner.vector
    num = p * abs(np.vdot(u, _mat(h) @ _vec(v))) ** 2
    if num == 0.0:
        return 0.0
    den = float(np.vdot(u, u).real)
    for vec, pw in ctx.intra_cell_interferers:
        den += pw * abs(np.vdot(u, _mat(h) @ _vec(vec))) ** 2
    for hj, vec, pw in ctx.inter_cell_interferers:
        den += pw * abs(np.vdot(u, _mat(hj) @ _vec(vec))) ** 2
    return float(num / den)


def prb_rate(sinr: float, mu_rank: int = 1) -> float:
    """Per-user per-PRB spectral efficiency log2(1 + sinr/mu_rank)."""
    if sinr < 0:
        raise ValueError("sinr must be >= 0")
    if mu_rank < 1:
        raise ValueError("mu_rank must be >= 1")
    return float(np.log2(1.0 + sinr / mu_rank))


def zero_forcing(precoders: list[Precoder], power_budget: float) -> list[Precoder]:
    """Zero-forcing beamformers for a co-scheduled set with equal power split.

    V_zf = V (V^H V)^(-1) diag(sqrt(P)); the returned columns satisfy
    V^H V_zf = diag(sqrt(P)) so each user sees no co-scheduled leakage at its
    own fed-back direction. Column norms exceed sqrt(P) when the set is
    non-orthogonal (the power penalty of forcing the nulls).
    """
    v_mu = np.stack([_vec(p) for p in precoders], axis=1)
    n_t, g = v_mu.shape
    if not 1 <= g <= n_t:
        raise ValueError(f"need 1 <= G <= n_tx, got G={g}, n_tx={n_t}")
    smin = np.linalg.svd(v_mu, compute_uv=False)[-1]
    if smin <= 1e-6:
        raise RankDeficiencyError(
            f"stacked precoders are rank deficient (smallest singular value {smin:.2e})"
        )
    p_each = power_budget / g
    gram = v_mu.conj().T @ v_mu
    v_zf = v_mu @ np.linalg.inv(gram) * np.sqrt(p_each)
    return [Precoder(v_zf[:, i], origin="zero_forcing") for i in range(g)]


def chordal_distance(a: Precoder, b: Precoder) -> float:
    """Subspace distance (1/sqrt(2)) ||a a^H - b b^H||_F, in [0, 1] for unit vectors."""
    va, vb = _vec(a), _vec(b)
    diff = np.outer(va, va.conj()) - np.outer(vb, vb.conj())
    return float(np.linalg.norm(diff) / np.sqrt(2.0))


def angle_separation(a: Precoder, b: Precoder) -> float:
    """Principal angle arccos(|a^H b|) between two unit precoders, in degrees."""
    inner = abs(np.vdot(_vec(a), _vec(b)))
    return float(np.degrees(np.arccos(np.clip(inner, 0.0, 1.0))))
