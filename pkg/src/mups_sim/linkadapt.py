"""CQI reporting pipeline, MCS selection and transport-block decoding.

CQI reports are generated on a periodic grid, become visible to the scheduler
after a feedback delay, and are IIR-filtered on arrival. Decoding uses an
effective-SINR link-to-system model: chase combining accumulates the linear
SINR of the surviving (non-punctured) portion of every transmission, and the
block error probability follows a logistic curve around the MCS threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np


class DoubleReportError(ValueError):
    """A report was generated twice for the same tick."""


@dataclass
class CqiState:
    """Per-user link-quality feedback state (one value per subband, in dB)."""

    su_cqi_db: np.ndarray
    filtered_db: np.ndarray
    filter_coeff: float = 0.01
    mu_offset_db: float = 3.0
    last_report_tick: int = -1
    pending: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.filter_coeff <= 1.0:
            raise ValueError(f"filter_coeff must lie in (0, 1], got {self.filter_coeff}")
        self.su_cqi_db = np.asarray(self.su_cqi_db, dtype=float)
        self.filtered_db = np.asarray(self.filtered_db, dtype=float).copy()
        if not np.all(np.isfinite(self.filtered_db)):
            raise ValueError("filtered CQI must be finite")


def report_cqi(
    current_tick: int,
    measured_su_sinr_db: np.ndarray | None,
    state: CqiState,
    period_ticks: int,
    delay_ticks: int,
) -> CqiState:
    """Advance the CQI pipeline to `current_tick`.

    A new report is generated only when the tick falls on the reporting grid;
    it becomes readable `delay_ticks` later, at which point the IIR filter
    absorbs it: filtered = xi * report + (1 - xi) * filtered.
    """
    if state.pending and current_tick < state.pending[-1][0] - delay_ticks:
        raise ValueError("ticks must be monotone increasing")
    if current_tick % period_ticks == 0 and measured_su_sinr_db is not None:
        gen = np.asarray(measured_su_sinr_db, dtype=float)
        if state.pending and state.pending[-1][0] == current_tick + delay_ticks:
            raise DoubleReportError(f"report already generated at tick {current_tick}")
        state.pending.append((current_tick + delay_ticks, current_tick, gen))
    while state.pending and state.pending[0][0] <= current_tick:
        _, gen_tick, values = state.pending.pop(0)
        xi = state.filter_coeff
        state.su_cqi_db = values
        state.filtered_db = xi * values + (1.0 - xi) * state.filtered_db
        state.last_report_tick = gen_tick
    return state


def mu_adjusted_cqi(state: CqiState) -> np.ndarray:
    """Filtered CQI with the multi-user offset applied (per subband, dB)."""
    return state.filtered_db - state.mu_offset_db


class McsTable:
    """Ordered MCS entries (spectral efficiency, decoding threshold in dB)."""

    def __init__(self, indices, spectral_efficiency, threshold_db):
        self.index = np.asarray(indices, dtype=int)
        self.se = np.asarray(spectral_efficiency, dtype=float)
        self.threshold_db = np.asarray(threshold_db, dtype=float)
        if len(self.se) == 0:
            raise ValueError("MCS table must be nonempty")
        if np.any(np.diff(self.se) <= 0) or np.any(np.diff(self.threshold_db) <= 0):
            raise ValueError("MCS table must be strictly increasing in SE and threshold")

    def __len__(self) -> int:
        return len(self.se)

    def modulation_bits(self, mcs: int) -> int:
        se = self.se[mcs]
        if se <= 1.2:
            return 2
        if se <= 2.45:
            return 4
        return 6

    def code_rate(self, mcs: int) -> float:
        return float(self.se[mcs] / self.modulation_bits(mcs))

    @classmethod
    def from_file(cls, path) -> "McsTable":
        idx, se, thr = [], [], []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                a, b, c = (t.strip() for t in line.split(","))
                idx.append(int(a))
                se.append(float(b))
                thr.append(float(c))
        return cls(idx, se, thr)

    @classmethod
    def default(cls) -> "McsTable":
        with resources.as_file(resources.files("mups_sim") / "data" / "mcs_table.csv") as p:
            return cls.from_file(p)


def select_mcs(
    cqi_db: float,
    table: McsTable,
    bler_target: float,
    olla_offset_db: float = 0.0,
    backoff_1pct_db: float = 2.0,
) -> int:
    """Largest MCS whose threshold fits under the (backed-off) CQI.

    The 10% target uses no backoff; the 1% target backs off by
    `backoff_1pct_db`. Falls back to the lowest MCS when nothing qualifies.
    """
    backoff = 0.0 if bler_target >= 0.1 else backoff_1pct_db
    eff = cqi_db - backoff - olla_offset_db
    pos = int(np.searchsorted(table.threshold_db, eff, side="right")) - 1
    return max(pos, 0)


@dataclass
class HarqProcess:
    """Transmission history of one transport block under chase combining."""

    tb_id: int
    rtt_ticks: int = 4
    max_tx: int = 4
    transmissions: list = field(default_factory=list)

    def add_transmission(self, tick: int, effective_sinr_linear: float, punctured_fraction: float):
        if not 0.0 <= punctured_fraction <= 1.0:
            raise ValueError(f"punctured_fraction must lie in [0,1], got {punctured_fraction}")
        if self.transmissions and tick - self.transmissions[-1][0] < self.rtt_ticks:
            raise ValueError(
                f"retransmission at tick {tick} violates HARQ round trip of {self.rtt_ticks}"
            )
        if len(self.transmissions) >= self.max_tx:
            raise ValueError(f"exceeded max_tx={self.max_tx} transmissions")
        self.transmissions.append((tick, float(effective_sinr_linear), float(punctured_fraction)))

    @property
    def tx_count(self) -> int:
        return len(self.transmissions)


def chase_effective_sinr(harq: HarqProcess) -> float:
    """Accumulated linear SINR over the surviving portion of every transmission."""
    return float(sum((1.0 - rho) * sinr for _, sinr, rho in harq.transmissions))


def decode_tb(
    harq: HarqProcess,
    code_rate: float,
    threshold_db: float,
    rng: np.random.Generator | None,
    slope_db: float = 0.5,
    max_code_rate: float = 0.93,
    deterministic: bool = False,
) -> bool:
    """Evaluate one decoding attempt; True on success.

    Puncturing inflates the effective code rate of the latest transmission by
    1/(1-rho); beyond `max_code_rate` the block is undecodable outright.
    """
    if not harq.transmissions:
        raise ValueError("decode requires at least one recorded transmission")
    rho_latest = harq.transmissions[-1][2]
    if rho_latest >= 1.0:
        return False
    if code_rate / (1.0 - rho_latest) > max_code_rate:
        return False
    gamma = chase_effective_sinr(harq)
    if gamma <= 0.0:
        return False
    gamma_db = 10.0 * math.log10(gamma)
    if deterministic:
        return gamma_db >= threshold_db
    p_fail = 1.0 / (1.0 + math.exp(-(threshold_db - gamma_db) / slope_db))
    return bool(rng.random() >= p_fail)
