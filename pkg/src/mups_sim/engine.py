"""Multi-cell mini-slot simulation engine.

One drop = one deterministic realization of user placement, channels and
traffic. Each tick runs: traffic arrivals, CQI pipeline, per-cell scheduling,
cross-cell SINR evaluation against the true concurrent grids, transport-block
decoding with HARQ chase combining and metrics accumulation. Schedulers only
ever see delayed, filtered CQI; the SINR evaluation sees everything.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import (AntennaConfig, ChannelMatrix, LinkGeometry, compose_codebooks,
                      generate_channel, make_dual_codebooks, svd_feedback)
from .config import SimConfig, config_hash
from .linkadapt import CqiState, McsTable, decode_tb, report_cqi
from .phy import prb_rate
from .scheduler import (KIND_MU, KIND_PREEMPTING, CellState, SchedulerWeights,
                        schedule_tick, update_avg_rate)
from .traffic import Packet, TrafficProfile, record_delivery


class InsufficientSamplesError(ValueError):
    """Too few samples to estimate the requested CCDF level."""


PATHLOSS_A_DB = 128.1
PATHLOSS_B_DB = 37.6


def pathloss_db(distance_m: float) -> float:
    """Log-distance macro pathloss, distance in meters."""
    return PATHLOSS_A_DB + PATHLOSS_B_DB * math.log10(max(distance_m, 1.0) / 1000.0)


@dataclass
class Deployment:
    """Cells on a ring with uniformly dropped users attached by strongest gain."""

    cells: int
    users_embb: int
    users_urllc: int
    wraparound: bool
    positions_m: np.ndarray  # (n_users,)
    cell_positions_m: np.ndarray  # (cells,)
    gain_db: np.ndarray  # (n_users, cells) pathloss+shadowing gains (negative)
    serving: np.ndarray  # (n_users,)
    is_urllc: np.ndarray  # (n_users,) bool

    @property
    def n_users(self) -> int:
        return len(self.positions_m)


def build_deployment(cfg: SimConfig, rng: np.random.Generator) -> Deployment:
    c, k = cfg.cells, cfg.users_embb + cfg.users_urllc
    length = c * cfg.isd_m
    cell_pos = np.arange(c) * cfg.isd_m
    pos, is_urllc = [], []
    for ci in range(c):
        offs = rng.uniform(-cfg.isd_m / 2, cfg.isd_m / 2, size=k)
        pos.extend((cell_pos[ci] + offs) % length)
        is_urllc.extend([False] * cfg.users_embb + [True] * cfg.users_urllc)
    pos = np.array(pos)
    delta = np.abs(pos[:, None] - cell_pos[None, :])
    if cfg.wraparound:
        delta = np.minimum(delta, length - delta)
    dist = np.maximum(delta, cfg.min_distance_m)
    pl = PATHLOSS_A_DB + PATHLOSS_B_DB * np.log10(dist / 1000.0)
    shadow = rng.normal(0.0, cfg.shadowing_std_db, size=pl.shape)
    gain_db = -(pl + shadow)
    serving = np.argmax(gain_db, axis=1)
    return Deployment(c, cfg.users_embb, cfg.users_urllc, cfg.wraparound,
                      pos, cell_pos, gain_db, serving, np.array(is_urllc))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass
class MetricsStore:
    """Streaming accumulators for one drop."""

    policy: str = ""
    seed: int = 0
    drop_index: int = 0
    cfg_hash: str = ""
    latency_ms: list = field(default_factory=list)
    latency_rows: list = field(default_factory=list)  # (pid, arrival_tick, ms, tx_count)
    cell_tput_rows: list = field(default_factory=list)  # (tick, cell, mbps)
    user_tput_mbps: dict = field(default_factory=dict)  # embb uid -> mbps
    pairing_rows: list = field(default_factory=list)  # (tick, cell, user, outcome, partner, d, ang, prbs)
    mu_attempts: int = 0
    mu_successes: int = 0
    mu_rate_sum: float = 0.0
    su_hypothetical_rate_sum: float = 0.0
    mu_prb_count: int = 0
    preemption_events: int = 0
    bler_tx: dict = field(default_factory=lambda: {"urllc": 0, "embb": 0})
    bler_fail: dict = field(default_factory=lambda: {"urllc": 0, "embb": 0})
    # urllc transmissions split by transmission kind (diagnostics)
    bler_kind_tx: dict = field(default_factory=lambda: {"mu": 0, "su": 0})
    bler_kind_fail: dict = field(default_factory=lambda: {"mu": 0, "su": 0})
    la_margin_db: dict = field(default_factory=lambda: {"mu": [], "su": []})
    packets_generated: int = 0
    packets_delivered: int = 0
    packets_dropped: int = 0
    packets_in_flight: int = 0
    arrivals_sha: str = ""

    @property
    def mean_cell_tput_mbps(self) -> float:
        if not self.cell_tput_rows:
            return 0.0
        return float(np.mean([r[2] for r in self.cell_tput_rows]))

    def conservation_ok(self) -> bool:
        return self.packets_generated == (
            self.packets_delivered + self.packets_dropped + self.packets_in_flight
        )


def latency_quantile(samples, ccdf_level: float) -> float:
    """Smallest latency x with empirical P(latency > x) <= ccdf_level."""
    xs = np.sort(np.asarray(samples, dtype=float))
    n = len(xs)
    if n == 0:
        raise InsufficientSamplesError("no latency samples")
    if ccdf_level < 10.0 / n:
        raise InsufficientSamplesError(
            f"level {ccdf_level} needs at least {math.ceil(10 / ccdf_level)} samples, have {n}"
        )
    above = n - np.searchsorted(xs, xs, side="right")
    idx = int(np.argmax(above / n <= ccdf_level))
    return float(xs[idx])


def aggregate_runs(stores: list) -> dict:
    """Pool drops of one (policy, loading) run into summary statistics."""
    if not stores:
        raise ValueError("need at least one MetricsStore")
    lat = (np.concatenate([np.asarray(s.latency_ms, dtype=float) for s in stores])
           if any(s.latency_ms for s in stores) else np.array([]))
    quantiles = {}
    for level in (1e-1, 1e-2, 1e-3, 1e-4, 1e-5):
        try:
            quantiles[f"{level:.0e}"] = latency_quantile(lat, level)
        except InsufficientSamplesError:
            quantiles[f"{level:.0e}"] = None
    att = sum(s.mu_attempts for s in stores)
    succ = sum(s.mu_successes for s in stores)
    mu_rate = sum(s.mu_rate_sum for s in stores)
    su_rate = sum(s.su_hypothetical_rate_sum for s in stores)
    tput = [r[2] for s in stores for r in s.cell_tput_rows]
    user_tput = [v for s in stores for v in s.user_tput_mbps.values()]
    bler = {}
    for cls in ("urllc", "embb"):
        tx = sum(s.bler_tx[cls] for s in stores)
        fail = sum(s.bler_fail[cls] for s in stores)
        bler[cls] = (fail / tx) if tx else None
    return {
        "drops": len(stores),
        "policy": stores[0].policy,
        "latency_samples": int(lat.size),
        "latency_quantiles_ms": quantiles,
        "mean_cell_tput_mbps": float(np.mean(tput)) if tput else 0.0,
        "mean_user_tput_mbps": float(np.mean(user_tput)) if user_tput else 0.0,
        "user_tput_mbps": sorted(float(v) for v in user_tput),
        "mu_attempts": att,
        "mu_successes": succ,
        "mu_success_ratio": (succ / att) if att else 0.0,
        "mu_prb_count": sum(s.mu_prb_count for s in stores),
        "mu_rate_per_pairing": (mu_rate / succ) if succ else 0.0,
        "mu_rate_per_prb": (mu_rate / sum(s.mu_prb_count for s in stores))
                           if any(s.mu_prb_count for s in stores) else 0.0,
        "su_hypothetical_rate_per_pairing": (su_rate / succ) if succ else 0.0,
        "mu_gain_vs_su": (mu_rate / su_rate) if su_rate else 0.0,
        "preemption_events": sum(s.preemption_events for s in stores),
        "bler": bler,
        "packets": {
            "generated": sum(s.packets_generated for s in stores),
            "delivered": sum(s.packets_delivered for s in stores),
            "dropped": sum(s.packets_dropped for s in stores),
            "in_flight": sum(s.packets_in_flight for s in stores),
        },
    }


# ---------------------------------------------------------------------------
# the drop runtime
# ---------------------------------------------------------------------------

class _DropRuntime:
    def __init__(self, cfg: SimConfig, seed: int, policy: str, drop_index: int = 0,
                 arrival_trace: list | None = None, collect_trace: bool = False):
        self.cfg = cfg
        self.policy = policy
        self.mps = cfg.minislots_per_slot
        self.n_prb, self.n_sb = cfg.n_prb, cfg.n_subbands
        self.mr, self.nt = cfg.n_rx, cfg.n_tx
        ss = np.random.SeedSequence([int(seed), int(drop_index)])
        r_place, r_chan, r_traffic, r_bler = [np.random.default_rng(s) for s in ss.spawn(4)]
        self.traffic_rng, self.bler_rng = r_traffic, r_bler
        self.dep = build_deployment(cfg, r_place)
        self.mcs = McsTable.from_file(cfg.mcs_table) if cfg.mcs_table else McsTable.default()

        edge_pl = pathloss_db(cfg.isd_m / 2.0)
        self.p_tx = 10.0 ** ((cfg.cell_edge_snr_db + edge_pl) / 10.0)

        u, c, s = self.dep.n_users, cfg.cells, self.n_sb
        ants = AntennaConfig(cfg.n_tx, cfg.n_rx, cfg.element_spacing_wavelengths,
                             cfg.tx_correlation, cfg.rx_correlation)
        self.h = np.empty((u, c, s, self.mr, self.nt), dtype=np.complex128)
        for ui in range(u):
            for ci in range(c):
                geo = LinkGeometry(distance_m=1.0, pathloss_db=0.0)
                gain_db = self.dep.gain_db[ui, ci]
                for si in range(s):
                    cm = generate_channel(geo, ants, r_chan, user_id=ui, cell_id=ci, subband_id=si)
                    self.h[ui, ci, si] = cm.entries * 10.0 ** (gain_db / 20.0)

        self.v_fb = self._build_feedback()
        self.sb_of_prb = np.arange(self.n_prb) // cfg.subband_prbs

        # live transmit state: 2 entry slots per PRB per cell
        self.tx_vec = [np.zeros((self.n_prb, 2, self.nt), dtype=np.complex128) for _ in range(c)]
        self.tx_pw = [np.zeros((self.n_prb, 2)) for _ in range(c)]
        self.tx_user = [np.full((self.n_prb, 2), -1, dtype=np.int64) for _ in range(c)]
        self.base_sinr = [np.zeros(self.n_prb) for _ in range(c)]
        self.touched = [np.zeros(self.n_prb, dtype=np.int64) for _ in range(c)]
        self.extra_sum = [np.zeros(self.n_prb) for _ in range(c)]
        self.punct = [np.zeros(self.n_prb, dtype=np.int64) for _ in range(c)]
        self.slot_tbs: list[list] = [[] for _ in range(c)]
        self.patches: list[tuple] = []  # (cell, prb, saved_vec, saved_pw, saved_user)

        self.cells = [self._make_cell(ci) for ci in range(c)]
        self._bootstrap_cqi()

        self.trace_mode = arrival_trace is not None
        self.trace_by_tick: dict[int, list[Packet]] = {}
        if self.trace_mode:
            for p in arrival_trace:
                self.trace_by_tick.setdefault(p.arrival_tick, []).append(p)
        else:
            # one Poisson draw per (urllc user, tick), pre-generated for speed
            total = cfg.warmup_ticks + cfg.measure_ticks
            mean = cfg.urllc_lambda * cfg.tick_ms * 1e-3
            urllc_ids = sorted(int(u) for u in np.flatnonzero(self.dep.is_urllc))
            self.arrival_counts = {
                u: self.traffic_rng.poisson(mean, size=total) for u in urllc_ids
            }
        self.collect_trace = collect_trace
        self.trace_out: list[Packet] = []
        self._sha = hashlib.sha256()

        self.store = MetricsStore(policy=policy, seed=seed, drop_index=drop_index,
                                  cfg_hash=config_hash(cfg))
        self.outstanding: dict[int, int] = {}  # pid -> undelivered bits
        self.packet_of: dict[int, Packet] = {}
        self.dropped_pids: set = set()
        self.next_pid = 0
        self.slot_bits_by_user: dict[int, int] = {}
        self.slot_bits_by_cell = np.zeros(c)
        self.user_bits_measured: dict[int, int] = {}
        self.uid_cell = {int(uid): cell for cell in self.cells
                         for uid in cell.embb_users + cell.urllc_users}

    # -- construction helpers -------------------------------------------------

    def _build_feedback(self) -> np.ndarray:
        """Wideband precoder feedback: one vector per user, selected against the
        subband channels stacked vertically (CQI stays frequency-selective)."""
        cfg = self.cfg
        mode = cfg.feedback
        if mode == "auto":
            mode = "svd" if (self.nt > 8 or self.mr > 8 or self.nt % 2) else "codebook"
        v = np.empty((self.dep.n_users, self.n_sb, self.nt), dtype=np.complex128)
        composed = None
        if mode == "codebook":
            cb1, cb2 = make_dual_codebooks(self.nt, cfg.codebook_b1, cfg.codebook_b2)
            composed = compose_codebooks(cb1, cb2)
        for ui in range(self.dep.n_users):
            h_wide = self.h[ui, self.dep.serving[ui]].reshape(-1, self.nt)  # (s*mr, nt)
            if composed is not None:
                scores = np.sum(np.abs(h_wide @ composed.T) ** 2, axis=0)
                v[ui, :] = composed[int(np.argmax(scores))]
            else:
                v[ui, :] = svd_feedback(ChannelMatrix(h_wide)).vector
        return v

    def _make_cell(self, ci: int) -> CellState:
        cfg = self.cfg
        uids = [int(u) for u in np.flatnonzero(self.dep.serving == ci)]
        embb = [u for u in uids if not self.dep.is_urllc[u]]
        urllc = [u for u in uids if self.dep.is_urllc[u]]
        warm = float(self.mcs.se[0])
        return CellState(
            cell_id=ci,
            n_prb=self.n_prb,
            subband_prbs=cfg.subband_prbs,
            minislots_per_slot=self.mps,
            re_prb_minislot=cfg.subcarriers_per_prb * cfg.symbols_per_minislot,
            re_prb_slot=cfg.subcarriers_per_prb * cfg.symbols_per_slot,
            power_budget=self.p_tx,
            mcs_table=self.mcs,
            weights=SchedulerWeights(cfg.alpha_urllc, cfg.alpha_embb),
            bler_target_urllc=cfg.bler_target_urllc,
            bler_target_embb=cfg.bler_target_embb,
            backoff_1pct_db=cfg.backoff_1pct_db,
            olla_offset_db=cfg.olla_offset_db,
            mu_rank=cfg.mu_rank,
            d_min=cfg.d_min,
            theta_deg=cfg.theta_deg,
            pf_horizon=cfg.pf_horizon_ttis,
            harq_rtt_ticks=cfg.harq_rtt_ttis,
            harq_rtt_slots_ticks=cfg.harq_rtt_ttis * self.mps,
            harq_max_tx_embb=cfg.harq_max_tx_embb,
            drop_deadline_ticks=cfg.drop_deadline_ticks,
            embb_users=embb,
            urllc_users=urllc,
            cqi={},
            avg_rate={int(u): warm for u in uids},
            fb_prec={int(u): self.v_fb[u] for u in uids},
            embb_prec=np.zeros((self.n_prb, self.nt), dtype=np.complex128),
        )

    def _bootstrap_cqi(self):
        """Start the slow IIR filters near a full-load interference estimate."""
        for cell in self.cells:
            ci = cell.cell_id
            for u in cell.embb_users + cell.urllc_users:
                sinr_sb = np.empty(self.n_sb)
                for si in range(self.n_sb):
                    hs = self.h[u, ci, si]
                    d = np.sqrt(self.p_tx) * hs @ self.v_fb[u, si]
                    r = np.eye(self.mr, dtype=np.complex128)
                    for cj in range(self.cfg.cells):
                        if cj != ci:
                            hj = self.h[u, cj, si]
                            r += self.p_tx * (hj @ hj.conj().T) / self.nt
                    w = np.linalg.solve(2.0 * np.outer(d, d.conj()) + r, d)
                    num = abs(np.vdot(w, d)) ** 2
                    den = float((w.conj() @ r @ w).real)
                    sinr_sb[si] = num / den
                db = 10.0 * np.log10(np.maximum(sinr_sb, 1e-12))
                cell.cqi[u] = CqiState(db.copy(), db.copy(),
                                       filter_coeff=self.cfg.cqi_filter_coeff,
                                       mu_offset_db=self.cfg.mu_offset_db)

    # -- the unified SINR evaluator --------------------------------------------

    def eval_entries(self, e_user, e_cell, e_prb, e_slot, e_vec, e_pw,
                     e_exclude_user=None, exclude_cell=-1):
        """Post-combining SINR for a batch of (real or hypothetical) entries.

        Interference comes from the live tx arrays of every cell on the same
        PRB; the entry's own slot is zeroed, as is any slot whose user matches
        e_exclude_user and every slot of `exclude_cell`.
        """
        n = len(e_user)
        if n == 0:
            return np.zeros(0)
        c = self.cfg.cells
        e_user = np.asarray(e_user, dtype=np.int64)
        e_cell = np.asarray(e_cell, dtype=np.int64)
        e_prb = np.asarray(e_prb, dtype=np.int64)
        e_slot = np.asarray(e_slot, dtype=np.int64)
        e_vec = np.asarray(e_vec, dtype=np.complex128).reshape(n, self.nt)
        e_pw = np.asarray(e_pw, dtype=float)
        sb = self.sb_of_prb[e_prb]

        d = np.einsum("nmt,nt->nm", self.h[e_user, e_cell, sb], e_vec) * np.sqrt(e_pw)[:, None]

        int_vec = np.empty((n, 2 * c, self.nt), dtype=np.complex128)
        int_pw = np.empty((n, 2 * c))
        excl = None if e_exclude_user is None else np.asarray(e_exclude_user, dtype=np.int64)
        excl_cell = np.asarray(exclude_cell, dtype=np.int64)
        for cj in range(c):
            int_vec[:, 2 * cj:2 * cj + 2] = self.tx_vec[cj][e_prb]
            pw = self.tx_pw[cj][e_prb].copy()
            usr = self.tx_user[cj][e_prb]
            # an entry never interferes with the same user's own signal
            pw[usr == e_user[:, None]] = 0.0
            if excl is not None:
                pw[usr == excl[:, None]] = 0.0
            if excl_cell.ndim == 0:
                if int(excl_cell) == cj:
                    pw[:] = 0.0
            else:
                pw[excl_cell == cj] = 0.0
            own = e_cell == cj
            for k in (0, 1):
                pw[own & (e_slot == k), k] = 0.0
            int_pw[:, 2 * cj:2 * cj + 2] = pw
        cell_of_slot = np.repeat(np.arange(c), 2)
        hf = self.h[e_user[:, None], cell_of_slot[None, :], sb[:, None]]
        f = np.einsum("nkmt,nkt->nkm", hf, int_vec) * np.sqrt(int_pw)[:, :, None]
        r = np.einsum("nkm,nkl->nml", f, f.conj())
        r += np.eye(self.mr, dtype=np.complex128)[None]
        m = 2.0 * np.einsum("nm,nl->nml", d, d.conj()) + r
        m += 1e-12 * np.eye(self.mr)[None]
        w = np.linalg.solve(m, d[..., None])[..., 0]
        num = np.abs(np.einsum("nm,nm->n", w.conj(), d)) ** 2
        den = np.einsum("nm,nml,nl->n", w.conj(), r, w).real
        out = np.zeros(n)
        ok = (e_pw > 0) & (den > 0)
        out[ok] = num[ok] / den[ok]
        return out

    # -- per-tick machinery -----------------------------------------------------

    def _arrivals(self, t: int, profile: TrafficProfile, tick_s: float):
        deadline = self.cfg.drop_deadline_ticks
        payload = self.cfg.urllc_payload_bytes
        for cell in self.cells:
            for u in cell.urllc_users:
                queue = cell.urllc_queue[u]
                while queue and (t - queue[0][0].arrival_tick) >= deadline:
                    packet, _ = queue.popleft()
                    self._drop_packet(packet)
                if self.trace_mode:
                    fresh = [Packet(p.id, p.user_id, p.size_bytes, p.arrival_tick)
                             for p in self.trace_by_tick.get(t, []) if p.user_id == u]
                else:
                    n = int(self.arrival_counts[u][t])
                    if not n:
                        continue
                    fresh = [Packet(self.next_pid + i, u, payload, t) for i in range(n)]
                    self.next_pid += n
                for p in fresh:
                    self.store.packets_generated += 1
                    self.packet_of[p.id] = p
                    self.outstanding[p.id] = p.size_bytes * 8
                    queue.append((p, p.size_bytes * 8))
                    self._sha.update(f"{p.id},{p.user_id},{p.arrival_tick},{p.size_bytes};".encode())
                    if self.collect_trace:
                        self.trace_out.append(p)

    def _drop_packet(self, packet: Packet):
        if packet.id in self.dropped_pids or packet.delivered_tick is not None:
            return
        self.dropped_pids.add(packet.id)
        self.outstanding.pop(packet.id, None)
        self.store.packets_dropped += 1

    def _write_baseline(self):
        for cell in self.cells:
            ci = cell.cell_id
            self.tx_vec[ci][:] = 0.0
            self.tx_pw[ci][:] = 0.0
            self.tx_user[ci][:] = -1
            owners = cell.embb_owner
            mask = owners >= 0
            self.tx_vec[ci][mask, 0] = cell.embb_prec[mask]
            self.tx_pw[ci][mask, 0] = self.p_tx
            self.tx_user[ci][mask, 0] = owners[mask]
            self.touched[ci][:] = 0
            self.extra_sum[ci][:] = 0.0
            self.punct[ci][:] = 0
            self.slot_tbs[ci] = [(tb, False) for tb in cell.embb_tb.values()]

    def _apply_slot_urllc(self, ci: int, alloc):
        """pf-policy slot-length URLLC block joins the baseline for this slot."""
        for p in alloc.prbs:
            self.tx_vec[ci][p, 0] = alloc.precoder[p]
            self.tx_pw[ci][p, 0] = alloc.power[p]
            self.tx_user[ci][p, 0] = alloc.tb.user
        self.slot_tbs[ci].append((alloc.tb, True))
        alloc.tb.prbs = list(alloc.prbs)

    def _base_eval(self):
        users, cells_, prbs, vec, pw = [], [], [], [], []
        for ci in range(self.cfg.cells):
            mask = self.tx_pw[ci][:, 0] > 0
            idx = np.flatnonzero(mask)
            users.append(self.tx_user[ci][idx, 0])
            cells_.append(np.full(len(idx), ci))
            prbs.append(idx)
            vec.append(self.tx_vec[ci][idx, 0])
            pw.append(self.tx_pw[ci][idx, 0])
        users = np.concatenate(users)
        cells_ = np.concatenate(cells_)
        prbs = np.concatenate(prbs)
        out = self.eval_entries(users, cells_, prbs, np.zeros(len(users), dtype=int),
                                np.concatenate(vec), np.concatenate(pw))
        for ci in range(self.cfg.cells):
            self.base_sinr[ci][:] = 0.0
            sel = cells_ == ci
            self.base_sinr[ci][prbs[sel]] = out[sel]

    def _patch(self, ci: int, p: int, slot: int, user: int, vec, pw: float):
        self.patches.append((ci, p, self.tx_vec[ci][p].copy(), self.tx_pw[ci][p].copy(),
                             self.tx_user[ci][p].copy()))
        self.tx_vec[ci][p, slot] = vec
        self.tx_pw[ci][p, slot] = pw
        self.tx_user[ci][p, slot] = user

    def _revert_patches(self):
        for ci, p, vec, pw, usr in reversed(self.patches):
            self.tx_vec[ci][p] = vec
            self.tx_pw[ci][p] = pw
            self.tx_user[ci][p] = usr
        self.patches.clear()

    def _evaluate_tick(self, t: int, allocs_by_cell, decisions_by_cell, warm: int):
        """Apply mini-slot overlays, evaluate the touched PRBs, finish mini TBs."""
        measuring = t >= warm
        touched_prbs = set()
        mini_allocs = []
        for ci, allocs in enumerate(allocs_by_cell):
            cell = self.cells[ci]
            for alloc in allocs:
                if alloc.tb.slot_tti:
                    continue
                mini_allocs.append((ci, alloc))
                for p in alloc.prbs:
                    touched_prbs.add(p)
                    kind = alloc.kind[p]
                    if kind == KIND_MU:
                        # partner's precoder is replaced by its ZF column
                        self._patch(ci, p, 0, alloc.partner[p], alloc.partner_precoder[p], 1.0)
                        self._patch(ci, p, 1, alloc.tb.user, alloc.precoder[p], alloc.power[p])
                    elif kind == KIND_PREEMPTING:
                        self._patch(ci, p, 0, alloc.tb.user, alloc.precoder[p], alloc.power[p])
                        self.punct[ci][p] += 1
                        self.touched[ci][p] += 1
                    else:
                        slot = 0 if self.tx_pw[ci][p, 0] == 0 else 1
                        self._patch(ci, p, slot, alloc.tb.user, alloc.precoder[p], alloc.power[p])

        for ci, decisions in enumerate(decisions_by_cell):
            for dec in decisions:
                if measuring:
                    self.store.pairing_rows.append(
                        (t, ci, dec.urllc_user, dec.outcome,
                         dec.embb_partner if dec.embb_partner is not None else "",
                         round(dec.chordal, 6), round(dec.angle_deg, 3), dec.n_prbs))
                    if self.policy in ("mups", "cmups") and dec.outcome in ("paired", "preempted"):
                        self.store.mu_attempts += 1
                        if dec.outcome == "paired":
                            self.store.mu_successes += 1
        if measuring:
            for ci, allocs in enumerate(allocs_by_cell):
                self.store.preemption_events += sum(1 for a in allocs if a.punctured)

        if not touched_prbs:
            return

        # evaluate every transmitting entry on every touched PRB, plus the
        # single-user hypotheticals that price each MU pairing
        e_user, e_cell, e_prb, e_slot, e_vec, e_pw, e_excl = [], [], [], [], [], [], []
        tags = []
        for ci in range(self.cfg.cells):
            for p in sorted(touched_prbs):
                for k in (0, 1):
                    if self.tx_pw[ci][p, k] > 0:
                        e_user.append(int(self.tx_user[ci][p, k]))
                        e_cell.append(ci)
                        e_prb.append(p)
                        e_slot.append(k)
                        e_vec.append(self.tx_vec[ci][p, k])
                        e_pw.append(self.tx_pw[ci][p, k])
                        e_excl.append(-1)
                        tags.append(("real", ci, p, k))
        for ci, alloc in mini_allocs:
            cell = self.cells[ci]
            for p in alloc.prbs:
                if alloc.kind[p] != KIND_MU:
                    continue
                partner = alloc.partner[p]
                sbp = int(self.sb_of_prb[p])
                e_user.append(alloc.tb.user)
                e_cell.append(ci)
                e_prb.append(p)
                e_slot.append(-1)
                e_vec.append(cell.fb_prec[alloc.tb.user][sbp])
                e_pw.append(self.p_tx)
                e_excl.append(partner)
                tags.append(("hypo_u", ci, p, alloc.tb.user))
                e_user.append(partner)
                e_cell.append(ci)
                e_prb.append(p)
                e_slot.append(-1)
                e_vec.append(cell.fb_prec[partner][sbp])
                e_pw.append(self.p_tx)
                e_excl.append(alloc.tb.user)
                tags.append(("hypo_e", ci, p, partner))

        sinrs = self.eval_entries(e_user, e_cell, e_prb, e_slot, e_vec, e_pw,
                                  e_exclude_user=e_excl)

        by_real = {}
        by_hypo = {}
        for tag, val in zip(tags, sinrs):
            if tag[0] == "real":
                by_real[(tag[1], tag[2], tag[3])] = val
            else:
                by_hypo[(tag[0], tag[1], tag[2])] = val

        # credit eMBB/slot-TB accumulators on touched PRBs
        for ci in range(self.cfg.cells):
            for p in sorted(touched_prbs):
                for k in (0, 1):
                    usr = int(self.tx_user[ci][p, k])
                    if usr < 0 or self.tx_pw[ci][p, k] <= 0:
                        continue
                    is_mini = False
                    for cj, a in mini_allocs:
                        if cj == ci and a.tb.user == usr and p in a.prbs:
                            a.sinr = getattr(a, "sinr", {})
                            a.sinr[p] = by_real[(ci, p, k)]
                            is_mini = True
                            break
                    if not is_mini:
                        self.extra_sum[ci][p] += by_real[(ci, p, k)]
                        self.touched[ci][p] += 1

        # settle mini TBs and MU pairing metrics
        for ci, alloc in mini_allocs:
            cell = self.cells[ci]
            vals = [alloc.sinr[p] for p in alloc.prbs] if hasattr(alloc, "sinr") else []
            eff = float(np.mean(vals)) if vals else 0.0
            alloc.tb.harq.add_transmission(t, eff, 0.0)
            mu_prbs = [p for p in alloc.prbs if alloc.kind[p] == KIND_MU]
            if mu_prbs and measuring:
                mu_rate = su_rate = 0.0
                for p in mu_prbs:
                    s_u = alloc.sinr[p]
                    s_e = by_real.get((ci, p, 0), 0.0)
                    mu_rate += prb_rate(s_u, 2) + prb_rate(s_e, 2)
                    su_rate += prb_rate(by_hypo[("hypo_u", ci, p)], 1)
                    su_rate += prb_rate(by_hypo[("hypo_e", ci, p)], 1)
                self.store.mu_rate_sum += mu_rate
                self.store.su_hypothetical_rate_sum += su_rate
                self.store.mu_prb_count += len(mu_prbs)
            self._decode_urllc(alloc.tb, t, warm, is_mu=bool(mu_prbs))

    def _decode_urllc(self, tb, t: int, warm: int, is_mu: bool = False):
        cell = self.uid_cell[tb.user]
        measuring = t >= warm
        ok = decode_tb(tb.harq, self.mcs.code_rate(tb.mcs), float(self.mcs.threshold_db[tb.mcs]),
                       self.bler_rng, self.cfg.bler_slope_db, self.cfg.max_code_rate,
                       self.cfg.deterministic_bler)
        if measuring:
            self.store.bler_tx["urllc"] += 1
            kind = "mu" if is_mu else "su"
            self.store.bler_kind_tx[kind] += 1
            gamma = sum((1.0 - rho) * s for _, s, rho in tb.harq.transmissions)
            if gamma > 0 and len(self.store.la_margin_db[kind]) < 20000:
                self.store.la_margin_db[kind].append(
                    round(10.0 * math.log10(gamma) - float(self.mcs.threshold_db[tb.mcs]), 3))
            if not ok:
                self.store.bler_fail["urllc"] += 1
                self.store.bler_kind_fail[kind] += 1
        if self.cfg.olla_enabled and tb.harq.tx_count == 1:
            # outer loop targets the first-transmission error rate, separately
            # for single-user and MU-paired transmissions; the class-blind pf
            # baseline provisions urllc data at the ordinary (embb) target
            target = (self.cfg.bler_target_embb if self.policy == "pf"
                      else self.cfg.bler_target_urllc)
            step_up = self.cfg.olla_step_up_db
            offs = cell.olla.setdefault(tb.user, [0.0, 0.0])
            k = 1 if is_mu else 0
            off = offs[k] + step_up if not ok else offs[k] - step_up * target / (1.0 - target)
            offs[k] = min(max(off, -8.0), 15.0)
        if ok:
            bits_total = 0
            for packet, bits in tb.chunks:
                if packet.id in self.dropped_pids:
                    continue
                left = self.outstanding.get(packet.id, 0) - bits
                self.outstanding[packet.id] = left
                bits_total += bits
                if left <= 0:
                    latency = record_delivery(packet, t, self.cfg.tick_ms,
                                              self.cfg.processing_offset_ms)
                    self.store.packets_delivered += 1
                    self.outstanding.pop(packet.id, None)
                    if packet.arrival_tick >= warm:
                        self.store.latency_ms.append(latency)
                        self.store.latency_rows.append(
                            (packet.id, packet.arrival_tick, round(latency, 6),
                             tb.harq.tx_count))
            uid = tb.user
            self.slot_bits_by_user[uid] = self.slot_bits_by_user.get(uid, 0) + bits_total
            self.slot_bits_by_cell[cell.cell_id] += bits_total
        else:
            # slot-length blocks count the RTT from their first symbol
            due = t + tb.harq.rtt_ticks - (self.mps - 1 if tb.slot_tti else 0)
            oldest = min(p.arrival_tick for p, _ in tb.chunks)
            if due - oldest < self.cfg.drop_deadline_ticks:
                tb.due_tick = due
                cell.urllc_retx[tb.user].append(tb)
            else:
                for packet, _ in tb.chunks:
                    self._drop_packet(packet)

    def _finish_slot(self, t: int, warm: int):
        """Decode all slot-length TBs, update PF averages, emit throughput."""
        measuring = t >= warm
        for cell in self.cells:
            ci = cell.cell_id
            for tb, is_urllc in self.slot_tbs[ci]:
                prbs = np.asarray(tb.prbs, dtype=int)
                clean = self.mps - self.touched[ci][prbs]
                sinr_sum = float(np.sum(self.base_sinr[ci][prbs] * clean
                                        + self.extra_sum[ci][prbs]))
                nonpunct = float(np.sum(self.mps - self.punct[ci][prbs]))
                eff = sinr_sum / nonpunct if nonpunct > 0 else 0.0
                rho = float(np.sum(self.punct[ci][prbs])) / (len(prbs) * self.mps)
                tb.harq.add_transmission(t, eff, rho)
                if is_urllc:
                    self._decode_urllc(tb, t, warm)
                else:
                    self._decode_embb(tb, t, warm, cell)
            # PF averages move once per slot for every user
            total_re = cell.re_prb_slot * self.n_prb
            for u in cell.embb_users + cell.urllc_users:
                delivered = self.slot_bits_by_user.get(u, 0) / total_re
                cell.avg_rate[u] = update_avg_rate(cell.avg_rate[u], delivered, cell.pf_horizon)
            if measuring:
                mbps = self.slot_bits_by_cell[ci] / (self.mps * self.cfg.tick_ms * 1e3)
                self.store.cell_tput_rows.append((t, ci, round(float(mbps), 6)))
        self.slot_bits_by_user = {}
        self.slot_bits_by_cell[:] = 0.0

    def _decode_embb(self, tb, t: int, warm: int, cell):
        measuring = t >= warm
        ok = decode_tb(tb.harq, self.mcs.code_rate(tb.mcs), float(self.mcs.threshold_db[tb.mcs]),
                       self.bler_rng, self.cfg.bler_slope_db, self.cfg.max_code_rate,
                       self.cfg.deterministic_bler)
        if measuring:
            self.store.bler_tx["embb"] += 1
            if not ok:
                self.store.bler_fail["embb"] += 1
        if ok:
            self.slot_bits_by_user[tb.user] = self.slot_bits_by_user.get(tb.user, 0) + tb.bits
            self.slot_bits_by_cell[cell.cell_id] += tb.bits
            if measuring:
                self.user_bits_measured[tb.user] = (
                    self.user_bits_measured.get(tb.user, 0) + tb.bits)
        elif tb.harq.tx_count < tb.harq.max_tx:
            tb.due_tick = t + 1 + cell.harq_rtt_slots_ticks - self.mps
            cell.embb_retx[tb.user].append(tb)

    def _measure_all(self):
        """Per-user per-subband single-user CQI against the live interference."""
        uids = [u for cell in self.cells for u in cell.embb_users + cell.urllc_users]
        if not uids:
            return {}
        k = len(uids)
        e_user = np.repeat(np.asarray(uids, dtype=int), self.n_prb)
        e_cell = self.dep.serving[e_user]
        e_prb = np.tile(np.arange(self.n_prb), k)
        sbs = self.sb_of_prb[e_prb]
        e_vec = self.v_fb[e_user, sbs]
        e_pw = np.full(k * self.n_prb, self.p_tx)
        sinr = self.eval_entries(e_user, e_cell, e_prb, np.full(k * self.n_prb, -1),
                                 e_vec, e_pw, exclude_cell=e_cell)
        per_sb = sinr.reshape(k, self.n_sb, self.cfg.subband_prbs).mean(axis=2)
        db = 10.0 * np.log10(np.maximum(per_sb, 1e-12))
        return {u: db[i] for i, u in enumerate(uids)}

    # -------------------------------------------------------------------------

    def run(self) -> MetricsStore:
        cfg = self.cfg
        total = cfg.warmup_ticks + cfg.measure_ticks
        warm = cfg.warmup_ticks
        period, delay = cfg.cqi_period_ticks, cfg.cqi_delay_ticks
        profile = TrafficProfile("urllc", cfg.urllc_lambda, cfg.urllc_payload_bytes)
        tick_s = cfg.tick_ms * 1e-3
        next_measurement = None

        for t in range(total):
            boundary = t % self.mps == 0
            if t % period == 0 or (t - delay) % period == 0:
                for cell in self.cells:
                    for u in cell.embb_users + cell.urllc_users:
                        meas = None
                        if t % period == 0:
                            meas = (next_measurement[u] if next_measurement is not None
                                    else cell.cqi[u].filtered_db)
                        report_cqi(t, meas, cell.cqi[u], period, delay)

            self._arrivals(t, profile, tick_s)

            allocs_by_cell, decisions_by_cell = [], []
            for cell in self.cells:
                allocs, decisions = schedule_tick(cell, t, self.policy)
                allocs_by_cell.append(allocs)
                decisions_by_cell.append(decisions)

            if boundary:
                self._write_baseline()
                for ci, allocs in enumerate(allocs_by_cell):
                    for alloc in allocs:
                        if alloc.tb.slot_tti:
                            self._apply_slot_urllc(ci, alloc)
                self._base_eval()

            self._evaluate_tick(t, allocs_by_cell, decisions_by_cell, warm)

            if t % self.mps == self.mps - 1:
                self._finish_slot(t, warm)

            if (t + 1) % period == 0:
                next_measurement = self._measure_all()

            self._revert_patches()

        for cell in self.cells:
            for u in cell.embb_users:
                bits = self.user_bits_measured.get(u, 0)
                self.store.user_tput_mbps[u] = bits / (cfg.measure_ms * 1e-3) / 1e6
        self.store.packets_in_flight = (
            self.store.packets_generated - self.store.packets_delivered
            - self.store.packets_dropped
        )
        self.store.arrivals_sha = self._sha.hexdigest()
        return self.store


def run_drop(config: SimConfig, seed: int, policy: str | None = None, drop_index: int = 0,
             arrival_trace: list | None = None, collect_trace: bool = False) -> MetricsStore:
    """Simulate one drop under one policy; deterministic for fixed inputs."""
    config.validate()
    policy = policy or config.policies[0]
    rt = _DropRuntime(config, seed, policy, drop_index, arrival_trace, collect_trace)
    store = rt.run()
    if collect_trace:
        store.trace = rt.trace_out
    return store
