"""Simulation configuration: flat dotted-key text files, validation, echo.

An empty file yields the full default configuration. Unknown keys are
rejected; every value is validated against the preconditions of the module
that consumes it, at load time.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

POLICIES = ("pf", "wpf", "ps", "mups", "cmups")


class ConfigError(ValueError):
    pass


@dataclass
class SimConfig:
    # deployment
    cells: int = 3
    wraparound: bool = True
    isd_m: float = 500.0
    users_embb: int = 5
    users_urllc: int = 5
    min_distance_m: float = 35.0
    shadowing_std_db: float = 8.0
    # phy
    n_tx: int = 8
    n_rx: int = 2
    element_spacing_wavelengths: float = 0.5
    tx_correlation: float = 0.5
    rx_correlation: float = 0.2
    n_prb: int = 50
    subband_prbs: int = 5
    cell_edge_snr_db: float = 5.0
    feedback: str = "auto"
    codebook_b1: int = 4
    codebook_b2: int = 4
    # time structure
    symbols_per_slot: int = 14
    symbols_per_minislot: int = 2
    warmup_ms: float = 200.0
    measure_ms: float = 4000.0
    # cqi pipeline
    cqi_period_ms: float = 5.0
    cqi_delay_ms: float = 2.0
    cqi_filter_coeff: float = 0.01
    mu_offset_db: float = 3.0
    # harq / link adaptation
    harq_rtt_ttis: int = 4
    harq_max_tx_embb: int = 4
    bler_target_urllc: float = 0.01
    bler_target_embb: float = 0.10
    backoff_1pct_db: float = 2.0
    olla_offset_db: float = 0.0
    olla_enabled: bool = True
    olla_step_up_db: float = 0.5
    bler_slope_db: float = 0.5
    max_code_rate: float = 0.93
    mcs_table: str = ""
    # traffic
    urllc_lambda: float = 250.0
    urllc_payload_bytes: int = 50
    urllc_deadline_ms: float = 1.0
    drop_deadline_ms: float = 10.0
    processing_offset_ms: float = 0.0
    # scheduler
    mu_rank: int = 2
    alpha_urllc: float = 100.0
    alpha_embb: float = 1.0
    d_min: float = 0.1
    theta_deg: float = 60.0
    pf_horizon_ttis: int = 100
    # run control
    policies: list = field(default_factory=lambda: ["mups"])
    drops: int = 20
    seed: int = 1
    deterministic_bler: bool = False

    # -- derived quantities -------------------------------------------------

    @property
    def minislots_per_slot(self) -> int:
        return self.symbols_per_slot // self.symbols_per_minislot

    @property
    def tick_ms(self) -> float:
        """Mini-slot duration in ms (2 of 14 symbols of a 1 ms slot -> 1/7 ms)."""
        return self.symbols_per_minislot / self.symbols_per_slot

    @property
    def n_subbands(self) -> int:
        return self.n_prb // self.subband_prbs

    @property
    def cqi_period_ticks(self) -> int:
        return round(self.cqi_period_ms / self.tick_ms)

    @property
    def cqi_delay_ticks(self) -> int:
        return round(self.cqi_delay_ms / self.tick_ms)

    @property
    def warmup_ticks(self) -> int:
        return round(self.warmup_ms / self.tick_ms)

    @property
    def measure_ticks(self) -> int:
        return round(self.measure_ms / self.tick_ms)

    @property
    def drop_deadline_ticks(self) -> int:
        return round(self.drop_deadline_ms / self.tick_ms)

    @property
    def subcarriers_per_prb(self) -> int:
        return 12

    def validate(self):
        def check(cond, msg):
            if not cond:
                raise ConfigError(f"invalid configuration: {msg}")

        check(self.cells >= 1, f"cells.count must be >= 1, got {self.cells}")
        check(self.users_embb >= 0 and self.users_urllc >= 0, "user counts must be >= 0")
        check(self.isd_m > 0, "cells.isd_m must be > 0")
        check(self.min_distance_m > 0, "cells.min_distance_m must be > 0")
        check(self.n_tx >= 1 and self.n_rx >= 1, "antenna counts must be >= 1")
        check(0 <= self.tx_correlation <= 1, "phy.tx_correlation must lie in [0, 1]")
        check(0 <= self.rx_correlation <= 1, "phy.rx_correlation must lie in [0, 1]")
        check(self.n_prb >= 1, "phy.n_prb must be >= 1")
        check(self.n_prb % self.subband_prbs == 0,
              f"phy.n_prb={self.n_prb} must be a multiple of phy.subband_prbs={self.subband_prbs}")
        check(self.feedback in ("auto", "codebook", "svd"),
              f"phy.feedback must be auto|codebook|svd, got {self.feedback!r}")
        check(self.symbols_per_slot % self.symbols_per_minislot == 0,
              "time.symbols_per_slot must be a multiple of time.symbols_per_minislot")
        check(self.warmup_ms >= 0 and self.measure_ms > 0, "time windows must be positive")
        check(0.0 < self.cqi_filter_coeff <= 1.0,
              f"cqi.filter_coeff must lie in (0, 1], got {self.cqi_filter_coeff}")
        check(self.cqi_period_ms > 0 and self.cqi_delay_ms >= 0, "cqi timing must be positive")
        check(self.mu_offset_db >= 0, "cqi.mu_offset_db must be >= 0")
        check(self.harq_rtt_ttis >= 1, "harq.rtt_ttis must be >= 1")
        check(self.harq_max_tx_embb >= 1, "harq.max_tx_embb must be >= 1")
        check(0 < self.bler_target_urllc < 1, "la.bler_target_urllc must lie in (0, 1)")
        check(0 < self.bler_target_embb < 1, "la.bler_target_embb must lie in (0, 1)")
        check(0 < self.max_code_rate <= 1, "la.max_code_rate must lie in (0, 1]")
        check(self.bler_slope_db > 0, "la.bler_slope_db must be > 0")
        check(self.olla_step_up_db > 0, "la.olla_step_up_db must be > 0")
        check(self.urllc_lambda > 0, "traffic.urllc.lambda must be > 0")
        check(self.urllc_payload_bytes > 0, "traffic.urllc.payload_bytes must be > 0")
        check(self.drop_deadline_ms >= self.urllc_deadline_ms,
              "traffic.drop_deadline_ms must cover traffic.urllc.deadline_ms")
        check(1 <= self.mu_rank <= self.n_tx, "sched.mu_rank must lie in [1, n_tx]")
        check(self.alpha_urllc >= 10 * self.alpha_embb,
              "sched.alpha_urllc must dominate sched.alpha_embb (ratio >= 10)")
        check(0.0 <= self.d_min <= 1.0, "sched.d_min must lie in [0, 1]")
        check(0.0 <= self.theta_deg <= 90.0, "sched.theta_deg must lie in [0, 90]")
        check(self.pf_horizon_ttis >= 1, "sched.pf_horizon_ttis must be >= 1")
        check(self.drops >= 1, "run.drops must be >= 1")
        check(len(self.policies) >= 1, "run.policies must name at least one policy")
        for p in self.policies:
            check(p in POLICIES, f"unknown policy {p!r} (choose from {', '.join(POLICIES)})")
        return self


# dotted key <-> dataclass field
KEYMAP = {
    "cells.count": "cells",
    "cells.wraparound": "wraparound",
    "cells.isd_m": "isd_m",
    "cells.users_embb": "users_embb",
    "cells.users_urllc": "users_urllc",
    "cells.min_distance_m": "min_distance_m",
    "cells.shadowing_std_db": "shadowing_std_db",
    "phy.n_tx": "n_tx",
    "phy.n_rx": "n_rx",
    "phy.element_spacing_wavelengths": "element_spacing_wavelengths",
    "phy.tx_correlation": "tx_correlation",
    "phy.rx_correlation": "rx_correlation",
    "phy.n_prb": "n_prb",
    "phy.subband_prbs": "subband_prbs",
    "phy.cell_edge_snr_db": "cell_edge_snr_db",
    "phy.feedback": "feedback",
    "phy.codebook_b1": "codebook_b1",
    "phy.codebook_b2": "codebook_b2",
    "time.symbols_per_slot": "symbols_per_slot",
    "time.symbols_per_minislot": "symbols_per_minislot",
    "time.warmup_ms": "warmup_ms",
    "time.measure_ms": "measure_ms",
    "cqi.period_ms": "cqi_period_ms",
    "cqi.delay_ms": "cqi_delay_ms",
    "cqi.filter_coeff": "cqi_filter_coeff",
    "cqi.mu_offset_db": "mu_offset_db",
    "harq.rtt_ttis": "harq_rtt_ttis",
    "harq.max_tx_embb": "harq_max_tx_embb",
    "la.bler_target_urllc": "bler_target_urllc",
    "la.bler_target_embb": "bler_target_embb",
    "la.backoff_1pct_db": "backoff_1pct_db",
    "la.olla_offset_db": "olla_offset_db",
    "la.olla_enabled": "olla_enabled",
    "la.olla_step_up_db": "olla_step_up_db",
    "la.bler_slope_db": "bler_slope_db",
    "la.max_code_rate": "max_code_rate",
    "la.mcs_table": "mcs_table",
    "traffic.urllc.lambda": "urllc_lambda",
    "traffic.urllc.payload_bytes": "urllc_payload_bytes",
    "traffic.urllc.deadline_ms": "urllc_deadline_ms",
    "traffic.drop_deadline_ms": "drop_deadline_ms",
    "traffic.processing_offset_ms": "processing_offset_ms",
    "sched.mu_rank": "mu_rank",
    "sched.alpha_urllc": "alpha_urllc",
    "sched.alpha_embb": "alpha_embb",
    "sched.d_min": "d_min",
    "sched.theta_deg": "theta_deg",
    "sched.pf_horizon_ttis": "pf_horizon_ttis",
    "run.policies": "policies",
    "run.drops": "drops",
    "run.seed": "seed",
    "run.deterministic_bler": "deterministic_bler",
}
_FIELDMAP = {v: k for k, v in KEYMAP.items()}


def _parse_value(key: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError("expected a boolean")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is list:
            return [t.strip() for t in raw.split(",") if t.strip()]
        return raw
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: cannot parse {raw!r} ({exc})") from exc


def load_config(path) -> SimConfig:
    """Parse and validate a dotted-key config file; empty file -> defaults."""
    cfg = SimConfig()
    types = {f.name: (list if f.name == "policies" else type(getattr(cfg, f.name)))
             for f in fields(SimConfig)}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.rstrip()!r}")
            key, raw = (t.strip() for t in stripped.split("=", 1))
            if key not in KEYMAP:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            attr = KEYMAP[key]
            setattr(cfg, attr, _parse_value(key, raw, types[attr]))
    return cfg.validate()


def dump_config(cfg: SimConfig) -> str:
    """Canonical echo of a resolved config; reloads to an identical SimConfig."""
    lines = []
    for key in sorted(KEYMAP):
        value = getattr(cfg, KEYMAP[key])
        if isinstance(value, list):
            value = ",".join(value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: SimConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()[:16]
