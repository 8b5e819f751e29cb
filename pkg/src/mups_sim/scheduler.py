"""Per-cell, per-tick resource allocation: PF, WPF, PS, MUPS and C-MUPS.

Time runs in mini-slot ticks. eMBB transport blocks span one slot
(`minislots_per_slot` ticks) and are (re)allocated at slot boundaries by
proportional-fair competition. URLLC demand is served every mini-slot with
policy-dependent machinery:

  pf    - class-blind baseline: URLLC rides slot-length TTIs and competes via
          plain PF at slot boundaries only.
  wpf   - URLLC gets weighted priority but only on free PRBs at boundaries
          (mini-slot TTIs, no preemption, no pairing).
  ps    - free PRBs first, then immediate preemption of the best-CQI PRBs.
  mups  - free PRBs first, then multi-user pairing onto ongoing eMBB PRBs via
          zero-forcing, preemption as the last resort.
  cmups - mups with an additional angle-separation gate on pairing.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .linkadapt import CqiState, HarqProcess, McsTable, mu_adjusted_cqi, select_mcs
from .phy import Precoder, RankDeficiencyError, angle_separation, chordal_distance, zero_forcing
from .traffic import Packet

KIND_SU = "su"
KIND_MU = "mu"
KIND_PREEMPTING = "preempting"
KIND_VICTIM = "victim"


class GridInvariantError(RuntimeError):
    """A produced schedule grid violated its structural invariants."""


@dataclass
class SchedulerWeights:
    alpha_urllc: float = 100.0
    alpha_embb: float = 1.0

    def __post_init__(self):
        if self.alpha_urllc < 10 * self.alpha_embb:
            raise ValueError("alpha_urllc must dominate alpha_embb (ratio >= 10)")


@dataclass
class PairingDecision:
    urllc_user: int
    embb_partner: int | None
    chordal: float
    angle_deg: float
    outcome: str  # paired | preempted | scheduled_free
    tick: int = -1
    cell_id: int = -1
    n_prbs: int = 0

    def __post_init__(self):
        if self.outcome == "paired" and self.embb_partner is None:
            raise ValueError("paired decision must name a partner")


@dataclass
class GridEntry:
    user: int
    precoder: np.ndarray
    power: float
    mcs: int
    kind: str


@dataclass
class ScheduleGrid:
    """Per-tick snapshot of who transmits what on every PRB of one cell."""

    cell_id: int
    tick: int
    entries: dict  # prb -> list[GridEntry]
    power_budget: float

    def validate(self, mu_rank: int):
        mcs_by_user = {}
        for prb, entries in self.entries.items():
            active = [e for e in entries if e.kind != KIND_VICTIM]
            if len(active) > mu_rank:
                raise GridInvariantError(
                    f"PRB {prb}: {len(active)} co-scheduled entries exceed MU rank {mu_rank}"
                )
            if any(e.kind == KIND_PREEMPTING for e in entries) and not any(
                e.kind == KIND_VICTIM for e in entries
            ):
                raise GridInvariantError(f"PRB {prb}: preempting entry without retained victim")
            for e in active:
                if e.user in mcs_by_user and mcs_by_user[e.user] != e.mcs:
                    raise GridInvariantError(
                        f"user {e.user} holds two MCS values in one TTI"
                    )
                mcs_by_user[e.user] = e.mcs
        return self


@dataclass
class UrllcTb:
    """One URLLC transport block (mini-slot TTI, or slot TTI under pf)."""

    tb_id: int
    user: int
    bits: int
    chunks: list  # [(Packet, bits_of_this_packet)]
    mcs: int
    n_prb: int
    harq: HarqProcess
    slot_tti: bool = False
    due_tick: int = 0


@dataclass
class EmbbTb:
    """One eMBB transport block spanning a full slot."""

    tb_id: int
    user: int
    prbs: list
    mcs: int
    bits: int
    harq: HarqProcess
    slot_start: int
    due_tick: int = 0


@dataclass
class TickAllocation:
    """Result of serving one URLLC transport block at one tick."""

    tb: UrllcTb
    prbs: list
    kind: dict  # prb -> su|mu|preempting
    precoder: dict  # prb -> transmit vector for the urllc user
    power: dict  # prb -> linear power of the urllc entry
    partner: dict = field(default_factory=dict)  # mu prb -> embb user
    partner_precoder: dict = field(default_factory=dict)  # mu prb -> zf column
    punctured: list = field(default_factory=list)  # preempted prbs


@dataclass
class CellState:
    """Scheduler-visible state of one cell; owned by the engine thread."""

    cell_id: int
    n_prb: int
    subband_prbs: int
    minislots_per_slot: int
    re_prb_minislot: int
    re_prb_slot: int
    power_budget: float
    mcs_table: McsTable
    weights: SchedulerWeights
    bler_target_urllc: float
    bler_target_embb: float
    backoff_1pct_db: float
    olla_offset_db: float
    mu_rank: int
    d_min: float
    theta_deg: float
    pf_horizon: int
    harq_rtt_ticks: int
    harq_rtt_slots_ticks: int
    harq_max_tx_embb: int
    drop_deadline_ticks: int
    embb_users: list
    urllc_users: list
    cqi: dict  # uid -> CqiState
    avg_rate: dict  # uid -> float
    fb_prec: dict  # uid -> (n_subbands, n_tx) feedback precoders
    # slot plan, rebuilt at boundaries
    embb_owner: np.ndarray = None
    embb_prec: np.ndarray = None
    embb_tb: dict = field(default_factory=dict)  # uid -> EmbbTb
    # queues
    urllc_queue: dict = field(default_factory=dict)  # uid -> deque[(Packet, bits_left)]
    urllc_retx: dict = field(default_factory=dict)  # uid -> deque[UrllcTb]
    embb_retx: dict = field(default_factory=dict)  # uid -> deque[EmbbTb]
    # per-tick markers (reset every tick by schedule_tick)
    urllc_taken: np.ndarray = None
    paired_now: np.ndarray = None
    punctured_now: np.ndarray = None
    next_tb_id: int = 0
    # feedback precoders are static within a drop, so spatial-gate results and
    # per-subband ZF pairs are memoized
    gate_cache: dict = field(default_factory=dict)
    zf_cache: dict = field(default_factory=dict)
    # outer-loop link adaptation offsets, urllc users only, tracked separately
    # for single-user and MU-paired transmissions (their optimism differs)
    olla: dict = field(default_factory=dict)

    def urllc_olla(self, uid: int, mu: bool = False) -> float:
        return self.olla_offset_db + self.olla.get(uid, [0.0, 0.0])[1 if mu else 0]

    def __post_init__(self):
        if self.embb_owner is None:
            self.embb_owner = np.full(self.n_prb, -1, dtype=np.int64)
        if self.embb_prec is None:
            self.embb_prec = np.zeros((self.n_prb, 1), dtype=np.complex128)
        for uid in self.urllc_users:
            self.urllc_queue.setdefault(uid, deque())
            self.urllc_retx.setdefault(uid, deque())
        for uid in self.embb_users:
            self.embb_retx.setdefault(uid, deque())

    def subband_of(self, prb: int) -> int:
        return prb // self.subband_prbs

    def new_tb_id(self) -> int:
        self.next_tb_id += 1
        return self.next_tb_id - 1


# ---------------------------------------------------------------------------
# metric primitives
# ---------------------------------------------------------------------------

def pf_metric(inst_rate: float, avg_rate: float) -> float:
    """Proportional-fair score: instantaneous over average delivered rate."""
    if avg_rate <= 0:
        raise ValueError("avg_rate must be > 0 (warm-start the average)")
    return inst_rate / avg_rate


def wpf_metric(inst_rate: float, avg_rate: float, weights: SchedulerWeights, traffic_class: str) -> float:
    """Weighted PF score; the class weight implements strict URLLC priority."""
    alpha = weights.alpha_urllc if traffic_class == "urllc" else weights.alpha_embb
    return pf_metric(inst_rate, avg_rate) * alpha


def update_avg_rate(avg_rate: float, delivered_rate: float, horizon_ttis: int) -> float:
    """Exponential average over `horizon_ttis` TTIs."""
    if horizon_ttis < 1:
        raise ValueError("horizon must be >= 1")
    t = float(horizon_ttis)
    return (1.0 - 1.0 / t) * avg_rate + delivered_rate / t


def compute_prb_demand(
    packet: Packet,
    mcs_se: float,
    symbols_per_mini_slot: int,
    subcarriers_per_prb: int = 12,
) -> int:
    """PRBs needed to carry the packet at the given spectral efficiency."""
    if mcs_se <= 0:
        raise ValueError("mcs_se must be > 0")
    return _prbs_for_bits(packet.size_bytes * 8, mcs_se, symbols_per_mini_slot * subcarriers_per_prb)


def _prbs_for_bits(bits: int, se: float, re_per_prb: int) -> int:
    return max(1, math.ceil(bits / (se * re_per_prb)))


def _inst_se(cqi_db: np.ndarray) -> np.ndarray:
    return np.log2(1.0 + 10.0 ** (np.asarray(cqi_db) / 10.0))


# ---------------------------------------------------------------------------
# pairing and preemption primitives
# ---------------------------------------------------------------------------

def try_mu_pairing(
    urllc_user: int,
    candidate_prbs,
    active_embb_tx: list,
    mode: str,
    theta_deg: float,
    d_min: float,
    urllc_precoder: np.ndarray | Precoder | None = None,
) -> PairingDecision:
    """Pick the spatially most compatible eMBB partner for a URLLC user.

    active_embb_tx holds (user, precoder) pairs with ongoing transmissions.
    The partner maximizing the chordal distance is selected, then gated by
    d_min (mups) plus the angle threshold (cmups); a zero-forcing rank
    failure degrades the outcome to preemption.
    """
    if mode not in ("mups", "cmups"):
        raise ValueError(f"pairing applies to mups/cmups, got {mode!r}")
    if not active_embb_tx:
        return PairingDecision(urllc_user, None, 0.0, 0.0, "preempted",
                               n_prbs=len(candidate_prbs or []))
    vu = urllc_precoder.vector if isinstance(urllc_precoder, Precoder) else np.asarray(urllc_precoder)
    best_user, best_vec, best_d = None, None, -1.0
    for uid, prec in active_embb_tx:
        vp = prec.vector if isinstance(prec, Precoder) else np.asarray(prec)
        d = chordal_distance(Precoder(vu), Precoder(vp))
        if d > best_d:
            best_user, best_vec, best_d = uid, vp, d
    angle = angle_separation(Precoder(vu), Precoder(best_vec))
    accepted = best_d >= d_min
    if mode == "cmups":
        accepted = accepted and angle >= theta_deg
    if accepted:
        try:
            zero_forcing([Precoder(vu), Precoder(best_vec)], power_budget=1.0)
        except RankDeficiencyError:
            accepted = False
    outcome = "paired" if accepted else "preempted"
    return PairingDecision(urllc_user, best_user if accepted else None, best_d, angle,
                           outcome, n_prbs=len(candidate_prbs or []))


def select_preemption_targets(
    urllc_user: int,
    demand_prbs: int,
    cqi: CqiState,
    eligible_prbs,
    subband_prbs: int,
) -> list:
    """The `demand_prbs` eligible PRBs with highest filtered CQI (ties: lowest index)."""
    eligible = sorted(int(p) for p in eligible_prbs)
    scored = sorted(eligible, key=lambda p: (-cqi.filtered_db[p // subband_prbs], p))
    return scored[:demand_prbs]


# ---------------------------------------------------------------------------
# URLLC transport-block assembly
# ---------------------------------------------------------------------------

def _pop_bits(cell: CellState, uid: int, max_bits: int) -> tuple[int, list]:
    """Pull up to max_bits from the user's queue, splitting the head packet."""
    chunks, used = [], 0
    queue = cell.urllc_queue[uid]
    while queue and used < max_bits:
        packet, left = queue[0]
        take = min(left, max_bits - used)
        chunks.append((packet, take))
        used += take
        if take == left:
            queue.popleft()
        else:
            queue[0] = (packet, left - take)
    return used, chunks


def _queued_bits(cell: CellState, uid: int) -> int:
    return sum(left for _, left in cell.urllc_queue[uid])


def _gate_partner(cell: CellState, policy: str, uid: int, partner: int) -> tuple[bool, float, float]:
    """Spatial compatibility of two users' representative precoders (memoized)."""
    sb_u = int(np.argmax(cell.cqi[uid].filtered_db))
    sb_p = int(np.argmax(cell.cqi[partner].filtered_db))
    key = (uid, partner, sb_u, sb_p)
    hit = cell.gate_cache.get(key)
    if hit is None:
        vu = cell.fb_prec[uid][sb_u]
        vp = cell.fb_prec[partner][sb_p]
        d = chordal_distance(Precoder(vu), Precoder(vp))
        ang = angle_separation(Precoder(vu), Precoder(vp))
        try:
            zero_forcing([Precoder(vu), Precoder(vp)], cell.power_budget)
            zf_ok = True
        except RankDeficiencyError:
            zf_ok = False
        hit = (d, ang, zf_ok)
        cell.gate_cache[key] = hit
    d, ang, zf_ok = hit
    ok = d >= cell.d_min and zf_ok
    if policy == "cmups":
        ok = ok and ang >= cell.theta_deg
    return ok, d, ang


def _zf_pair(cell: CellState, uid: int, partner: int, sb: int):
    """Per-subband zero-forcing columns for a (urllc, embb) pair (memoized).

    The raw ZF solution overspends transmit power on correlated pairs; both
    columns are rescaled by a common factor so the pair spends exactly the
    per-PRB budget (the nulls are scale-invariant). Correlated pairs therefore
    see genuinely less received power, which is the physical MU penalty.
    """
    key = (uid, partner, sb)
    if key not in cell.zf_cache:
        try:
            zf = zero_forcing([Precoder(cell.fb_prec[uid][sb]),
                               Precoder(cell.fb_prec[partner][sb])], cell.power_budget)
            v0, v1 = zf[0].vector, zf[1].vector
            total = float(np.linalg.norm(v0) ** 2 + np.linalg.norm(v1) ** 2)
            scale = math.sqrt(cell.power_budget / total)
            cell.zf_cache[key] = (scale * v0, scale * v1)
        except RankDeficiencyError:
            cell.zf_cache[key] = None
    return cell.zf_cache[key]


def _serve_urllc(
    cell: CellState,
    tick: int,
    uid: int,
    policy: str,
    free_mask: np.ndarray,
    retx_tb: UrllcTb | None = None,
) -> tuple[TickAllocation | None, PairingDecision | None]:
    """Serve one URLLC transport block (new data or a due retransmission).

    Candidate PRBs are gathered source by source - free PRBs, then paired
    eMBB PRBs (mups/cmups), then preemption targets (ps/mups/cmups) - and the
    MCS/PRB count is settled by one refinement pass.
    """
    state = cell.cqi[uid]
    su_db = state.filtered_db
    mu_db = mu_adjusted_cqi(state)
    sb = lambda p: cell.subband_of(p)

    free = [int(p) for p in np.flatnonzero(free_mask & ~cell.urllc_taken)]
    free.sort(key=lambda p: (-su_db[sb(p)], p))

    def paired_candidates():
        """eMBB holders passing the spatial gates, best chordal first."""
        if policy not in ("mups", "cmups"):
            return []
        holders = {}
        for p in range(cell.n_prb):
            owner = int(cell.embb_owner[p])
            if owner < 0:
                continue
            if cell.urllc_taken[p] or cell.paired_now[p] or cell.punctured_now[p]:
                continue
            holders.setdefault(owner, []).append(p)
        ranked = []
        for owner, prbs in holders.items():
            ok, d, ang = _gate_partner(cell, policy, uid, owner)
            ranked.append((owner, prbs, ok, d, ang))
        ranked.sort(key=lambda r: (-r[3], r[0]))
        return ranked

    def preempt_candidates():
        if policy not in ("ps", "mups", "cmups"):
            return []
        mask = (cell.embb_owner >= 0) & ~cell.urllc_taken & ~cell.paired_now & ~cell.punctured_now
        return [int(p) for p in np.flatnonzero(mask)]

    # retransmissions favor reliability: chase combining re-sends single-user,
    # so a deeply faded MU first attempt is not repeated in MU mode
    allow_pairing = retx_tb is None

    def assemble(mcs: int, demand: int, with_pairing: bool = True):
        """Greedy pick: free, then paired partners, then preemption targets."""
        picks, kinds, partners = [], {}, {}
        for p in free[: demand]:
            picks.append(p)
            kinds[p] = KIND_SU
        attempted_pairing = False
        primary = None  # max-chordal candidate, accepted or not
        primary_accept = None  # first partner actually paired with
        if (len(picks) < demand and with_pairing and allow_pairing
                and policy in ("mups", "cmups")):
            attempted_pairing = True
            ranked = paired_candidates()
            if ranked:
                primary = ranked[0]
            for owner, prbs, ok, d, ang in ranked:
                if len(picks) >= demand:
                    break
                if not ok:
                    continue
                if primary_accept is None:
                    primary_accept = (owner, d, ang)
                prbs = sorted(prbs, key=lambda p: (-mu_db[sb(p)], p))
                for p in prbs:
                    if len(picks) >= demand:
                        break
                    picks.append(p)
                    kinds[p] = KIND_MU
                    partners[p] = owner
        if len(picks) < demand and policy in ("ps", "mups", "cmups"):
            eligible = [p for p in preempt_candidates() if p not in picks]
            for p in select_preemption_targets(uid, demand - len(picks), state, eligible,
                                               cell.subband_prbs):
                picks.append(p)
                kinds[p] = KIND_PREEMPTING
        return picks, kinds, partners, attempted_pairing, primary, primary_accept

    re_prb = cell.re_prb_slot if (retx_tb and retx_tb.slot_tti) else cell.re_prb_minislot

    if retx_tb is not None:
        mcs, demand = retx_tb.mcs, retx_tb.n_prb
        bits, chunks = retx_tb.bits, None
        picks, kinds, partners, attempted, primary, primary_accept = assemble(mcs, demand)
        if len(picks) < demand:
            return None, None  # wait for a tick with enough resources
    else:
        bits_queued = _queued_bits(cell, uid)
        if bits_queued == 0:
            return None, None
        # first pass on the best reachable subband, refined on the actual picks
        cand_best = max([su_db[sb(p)] for p in free] or [-np.inf])
        if policy in ("mups", "cmups", "ps"):
            cand_best = max(cand_best, float(np.max(su_db)))
        if not np.isfinite(cand_best):
            return None, None
        olla_su = cell.urllc_olla(uid, mu=False)
        olla_mu = cell.urllc_olla(uid, mu=True)

        def sized_assembly(with_pairing: bool):
            mcs0 = select_mcs(cand_best - olla_su, cell.mcs_table, cell.bler_target_urllc,
                              0.0, cell.backoff_1pct_db)
            demand0 = _prbs_for_bits(bits_queued, cell.mcs_table.se[mcs0], re_prb)
            out = assemble(mcs0, demand0, with_pairing)
            if out[0]:
                eff = [(mu_db[sb(p)] - olla_mu) if out[1][p] == KIND_MU
                       else (su_db[sb(p)] - olla_su) for p in out[0]]
                eff_db = 10.0 * np.log10(np.mean(10.0 ** (np.array(eff) / 10.0)))
                mcs0 = select_mcs(float(eff_db), cell.mcs_table, cell.bler_target_urllc,
                                  0.0, cell.backoff_1pct_db)
                demand0 = _prbs_for_bits(bits_queued, cell.mcs_table.se[mcs0], re_prb)
                out = assemble(mcs0, demand0, with_pairing)
            return mcs0, demand0, out

        mcs, demand, out = sized_assembly(True)
        if (len(out[0]) < demand and allow_pairing and policy in ("mups", "cmups")
                and any(out[1][p] == KIND_MU for p in out[0])):
            # pairing cannot carry the whole block this mini-slot; the spatial
            # DoFs are insufficient, so fall back to single-user preemption
            mcs_su, demand_su, out_su = sized_assembly(False)
            if len(out_su[0]) >= demand_su:
                mcs, demand, out = mcs_su, demand_su, out_su
        picks, kinds, partners, attempted, primary, primary_accept = out
        if not picks:
            return None, None
        capacity = int(cell.mcs_table.se[mcs] * re_prb * len(picks))
        bits, chunks = _pop_bits(cell, uid, capacity)
        if bits == 0:
            return None, None

    # materialize precoders; paired PRBs get per-subband zero-forcing columns
    prec, power, partner_prec = {}, {}, {}
    final_partners = {}
    for p in list(partners.keys()):
        owner = partners[p]
        zf = _zf_pair(cell, uid, owner, sb(p))
        if zf is None:
            kinds[p] = KIND_PREEMPTING  # this subband is too collinear after all
            continue
        prec[p] = zf[0]
        power[p] = 1.0
        partner_prec[p] = zf[1]
        final_partners[p] = owner
    for p in kinds:
        if kinds[p] != KIND_MU:
            prec[p] = cell.fb_prec[uid][sb(p)]
            power[p] = cell.power_budget

    if retx_tb is not None:
        tb = retx_tb
    else:
        rtt = cell.harq_rtt_slots_ticks if policy == "pf" else cell.harq_rtt_ticks
        tb = UrllcTb(cell.new_tb_id(), uid, bits, chunks, mcs, len(picks),
                     HarqProcess(0, rtt_ticks=rtt, max_tx=999), slot_tti=(policy == "pf"))
        tb.harq.tb_id = tb.tb_id

    punctured = [p for p in picks if kinds[p] == KIND_PREEMPTING]
    alloc = TickAllocation(tb, sorted(picks), kinds, prec, power,
                           final_partners, partner_prec, punctured)

    mu_prbs = [p for p in picks if kinds[p] == KIND_MU]
    if mu_prbs and primary_accept is not None:
        owner, d, ang = primary_accept
        decision = PairingDecision(uid, owner, d, ang, "paired", tick, cell.cell_id, len(picks))
    elif attempted:
        d, ang = (primary[3], primary[4]) if primary is not None else (0.0, 0.0)
        decision = PairingDecision(uid, None, d, ang, "preempted", tick, cell.cell_id, len(picks))
    elif punctured:
        decision = PairingDecision(uid, None, 0.0, 0.0, "preempted", tick, cell.cell_id, len(picks))
    else:
        decision = PairingDecision(uid, None, 0.0, 0.0, "scheduled_free", tick, cell.cell_id, len(picks))

    for p in picks:
        cell.urllc_taken[p] = True
        if kinds[p] == KIND_MU:
            cell.paired_now[p] = True
        elif kinds[p] == KIND_PREEMPTING:
            cell.punctured_now[p] = True
    return alloc, decision


# ---------------------------------------------------------------------------
# slot-boundary eMBB allocation
# ---------------------------------------------------------------------------

def _claim_retx_prbs(cell: CellState, tb: EmbbTb, free: np.ndarray) -> list | None:
    """Chase retransmissions reuse their original PRBs where possible."""
    picks = [p for p in tb.prbs if free[p]]
    if len(picks) < len(tb.prbs):
        pad = [int(p) for p in np.flatnonzero(free) if p not in picks]
        picks.extend(pad[: len(tb.prbs) - len(picks)])
    if len(picks) < len(tb.prbs):
        return None
    return sorted(picks[: len(tb.prbs)])


def _embb_fill(cell: CellState, tick: int, free: np.ndarray, blocked_users: set):
    """Proportional-fair fill of the remaining PRBs with fresh eMBB blocks."""
    users = [u for u in cell.embb_users if u not in blocked_users]
    if not users or not np.any(free):
        return
    inst = np.stack([_inst_se(cell.cqi[u].filtered_db) for u in users])
    avg = np.array([cell.avg_rate[u] for u in users])
    metric = inst / avg[:, None]
    winner_by_sb = np.argmax(metric, axis=0)  # full-buffer: same winner per subband
    free_idx = np.flatnonzero(free)
    winner_of_prb = winner_by_sb[free_idx // cell.subband_prbs]
    won = {u: [] for u in users}
    for i, p in zip(winner_of_prb, free_idx):
        won[users[int(i)]].append(int(p))
    for u in users:
        if not won[u]:
            continue
        sbs = [cell.subband_of(p) for p in won[u]]
        eff_db = 10.0 * np.log10(np.mean(10.0 ** (cell.cqi[u].filtered_db[sbs] / 10.0)))
        mcs = select_mcs(float(eff_db), cell.mcs_table, cell.bler_target_embb,
                         cell.olla_offset_db, cell.backoff_1pct_db)
        bits = int(cell.mcs_table.se[mcs] * cell.re_prb_slot * len(won[u]))
        tb = EmbbTb(cell.new_tb_id(), u, sorted(won[u]), mcs, bits,
                    HarqProcess(0, rtt_ticks=cell.harq_rtt_slots_ticks,
                                max_tx=cell.harq_max_tx_embb),
                    slot_start=tick)
        tb.harq.tb_id = tb.tb_id
        cell.embb_tb[u] = tb
        for p in tb.prbs:
            cell.embb_owner[p] = u
            cell.embb_prec[p] = cell.fb_prec[u][cell.subband_of(p)]


def _pf_joint_boundary(cell: CellState, tick: int, free: np.ndarray, blocked: set) -> list:
    """Class-blind PF competition at a slot boundary (pf policy only)."""
    allocs = []
    embb = [u for u in cell.embb_users if u not in blocked]
    urllc = [u for u in cell.urllc_users if u not in blocked and _queued_bits(cell, u) > 0]
    users = embb + urllc
    if not users:
        return allocs
    inst = np.stack([_inst_se(cell.cqi[u].filtered_db) for u in users])
    avg = np.array([cell.avg_rate[u] for u in users])
    metric = inst / avg[:, None]
    u_mcs, u_left, won = {}, {}, {u: [] for u in users}
    for u in urllc:
        # class-blind baseline: urllc data is provisioned like any other data,
        # at the ordinary (embb) error target
        best = float(np.max(cell.cqi[u].filtered_db))
        m = select_mcs(best - cell.urllc_olla(u, mu=False), cell.mcs_table,
                       cell.bler_target_embb, 0.0, cell.backoff_1pct_db)
        u_mcs[u] = m
        u_left[u] = _queued_bits(cell, u)
    alive = np.ones(len(users), dtype=bool)
    for p in np.flatnonzero(free):
        if not np.any(alive):
            break
        col = np.where(alive, metric[:, cell.subband_of(int(p))], -np.inf)
        i = int(np.argmax(col))
        u = users[i]
        won[u].append(int(p))
        if u in u_left:
            u_left[u] -= int(cell.mcs_table.se[u_mcs[u]] * cell.re_prb_slot)
            if u_left[u] <= 0:
                alive[i] = False
    for u in embb:
        if not won[u]:
            continue
        sbs = [cell.subband_of(p) for p in won[u]]
        eff_db = 10.0 * np.log10(np.mean(10.0 ** (cell.cqi[u].filtered_db[sbs] / 10.0)))
        mcs = select_mcs(float(eff_db), cell.mcs_table, cell.bler_target_embb,
                         cell.olla_offset_db, cell.backoff_1pct_db)
        bits = int(cell.mcs_table.se[mcs] * cell.re_prb_slot * len(won[u]))
        tb = EmbbTb(cell.new_tb_id(), u, sorted(won[u]), mcs, bits,
                    HarqProcess(0, rtt_ticks=cell.harq_rtt_slots_ticks,
                                max_tx=cell.harq_max_tx_embb), slot_start=tick)
        tb.harq.tb_id = tb.tb_id
        cell.embb_tb[u] = tb
        for p in tb.prbs:
            cell.embb_owner[p] = u
            cell.embb_prec[p] = cell.fb_prec[u][cell.subband_of(p)]
    for u in urllc:
        if not won[u]:
            continue
        mcs = u_mcs[u]
        capacity = int(cell.mcs_table.se[mcs] * cell.re_prb_slot * len(won[u]))
        bits, chunks = _pop_bits(cell, u, capacity)
        if bits == 0:
            continue
        tb = UrllcTb(cell.new_tb_id(), u, bits, chunks, mcs, len(won[u]),
                     HarqProcess(0, rtt_ticks=cell.harq_rtt_slots_ticks, max_tx=999),
                     slot_tti=True)
        tb.harq.tb_id = tb.tb_id
        prbs = sorted(won[u])
        prec = {p: cell.fb_prec[u][cell.subband_of(p)] for p in prbs}
        power = {p: cell.power_budget for p in prbs}
        kinds = {p: KIND_SU for p in prbs}
        for p in prbs:
            cell.urllc_taken[p] = True
        allocs.append(TickAllocation(tb, prbs, kinds, prec, power))
    return allocs


# ---------------------------------------------------------------------------
# the per-tick entry point
# ---------------------------------------------------------------------------

def schedule_tick(cell: CellState, tick: int, policy: str) -> tuple[list, list]:
    """Advance one cell by one mini-slot; returns (allocations, decisions)."""
    if policy not in ("pf", "wpf", "ps", "mups", "cmups"):
        raise ValueError(f"unknown policy {policy!r}")
    cell.urllc_taken = np.zeros(cell.n_prb, dtype=bool)
    cell.paired_now = np.zeros(cell.n_prb, dtype=bool)
    cell.punctured_now = np.zeros(cell.n_prb, dtype=bool)
    boundary = tick % cell.minislots_per_slot == 0
    allocs: list[TickAllocation] = []
    decisions: list[PairingDecision] = []
    blocked: set = set()

    if boundary:
        cell.embb_owner[:] = -1
        cell.embb_tb = {}
        free = np.ones(cell.n_prb, dtype=bool)

        def due_retx(queues):
            out = []
            for uid in sorted(queues):
                q = queues[uid]
                if q and q[0].due_tick <= tick:
                    out.append(q[0])
            out.sort(key=lambda tb: (tb.due_tick, tb.user))
            return out

        if policy == "pf":
            for tb in due_retx(cell.urllc_retx):
                alloc, _ = _serve_urllc(cell, tick, tb.user, "wpf", free, retx_tb=tb)
                if alloc is not None:
                    cell.urllc_retx[tb.user].popleft()
                    allocs.append(alloc)
                    blocked.add(tb.user)
                    free &= ~cell.urllc_taken
            for tb in due_retx(cell.embb_retx):
                picks = _claim_retx_prbs(cell, tb, free)
                if picks is None:
                    continue
                cell.embb_retx[tb.user].popleft()
                tb.prbs = picks
                cell.embb_tb[tb.user] = tb
                blocked.add(tb.user)
                for p in picks:
                    cell.embb_owner[p] = tb.user
                    cell.embb_prec[p] = cell.fb_prec[tb.user][cell.subband_of(p)]
                    free[p] = False
            allocs.extend(_pf_joint_boundary(cell, tick, free, blocked))
        else:
            for tb in due_retx(cell.urllc_retx):
                alloc, dec = _serve_urllc(cell, tick, tb.user, policy, free, retx_tb=tb)
                if alloc is not None:
                    cell.urllc_retx[tb.user].popleft()
                    allocs.append(alloc)
                    if dec:
                        decisions.append(dec)
                    blocked.add(tb.user)
                    free &= ~cell.urllc_taken
            order = sorted(
                (u for u in cell.urllc_users if u not in blocked and _queued_bits(cell, u) > 0),
                key=lambda u: (-wpf_metric(float(np.max(_inst_se(cell.cqi[u].filtered_db))),
                                           cell.avg_rate[u], cell.weights, "urllc"), u),
            )
            for u in order:
                alloc, dec = _serve_urllc(cell, tick, u, policy, free)
                if alloc is not None:
                    allocs.append(alloc)
                    if dec:
                        decisions.append(dec)
                    blocked.add(u)
                    free &= ~cell.urllc_taken
            for tb in due_retx(cell.embb_retx):
                picks = _claim_retx_prbs(cell, tb, free)
                if picks is None:
                    continue
                cell.embb_retx[tb.user].popleft()
                tb.prbs = picks
                cell.embb_tb[tb.user] = tb
                blocked.add(tb.user)
                for p in picks:
                    cell.embb_owner[p] = tb.user
                    cell.embb_prec[p] = cell.fb_prec[tb.user][cell.subband_of(p)]
                    free[p] = False
            _embb_fill(cell, tick, free, blocked)
    elif policy != "pf":
        free = cell.embb_owner < 0
        served: set = set()
        for uid in sorted(cell.urllc_retx):
            q = cell.urllc_retx[uid]
            if q and q[0].due_tick <= tick and not q[0].slot_tti:
                alloc, dec = _serve_urllc(cell, tick, uid, policy, free, retx_tb=q[0])
                if alloc is not None:
                    q.popleft()
                    allocs.append(alloc)
                    if dec:
                        decisions.append(dec)
                    served.add(uid)
                    free = free & ~cell.urllc_taken
        order = sorted(
            (u for u in cell.urllc_users if u not in served and _queued_bits(cell, u) > 0),
            key=lambda u: (-wpf_metric(float(np.max(_inst_se(cell.cqi[u].filtered_db))),
                                       cell.avg_rate[u], cell.weights, "urllc"), u),
        )
        for u in order:
            alloc, dec = _serve_urllc(cell, tick, u, policy, free)
            if alloc is not None:
                allocs.append(alloc)
                if dec:
                    decisions.append(dec)
                free = free & ~cell.urllc_taken

    if boundary:
        build_grid(cell, tick, allocs).validate(cell.mu_rank)
    elif allocs:
        touched = sorted({p for a in allocs for p in a.prbs})
        build_grid(cell, tick, allocs, only_prbs=touched).validate(cell.mu_rank)
    return allocs, decisions


def build_grid(cell: CellState, tick: int, allocs: list, only_prbs=None) -> ScheduleGrid:
    """Assemble the per-PRB snapshot for invariant checks and audits."""
    entries: dict[int, list] = {}
    urllc_on = {}
    for alloc in allocs:
        for p in alloc.prbs:
            kind = {KIND_SU: KIND_SU, KIND_MU: KIND_MU,
                    KIND_PREEMPTING: KIND_PREEMPTING}[alloc.kind[p]]
            entries.setdefault(p, []).append(
                GridEntry(alloc.tb.user, alloc.precoder[p], alloc.power[p], alloc.tb.mcs, kind)
            )
            urllc_on[p] = alloc
    prb_range = range(cell.n_prb) if only_prbs is None else only_prbs
    for p in prb_range:
        owner = int(cell.embb_owner[p])
        if owner < 0:
            continue
        tb = cell.embb_tb.get(owner)
        mcs = tb.mcs if tb else 0
        if p in urllc_on and urllc_on[p].kind[p] == KIND_PREEMPTING:
            entries.setdefault(p, []).append(
                GridEntry(owner, cell.embb_prec[p], 0.0, mcs, KIND_VICTIM)
            )
        elif p in urllc_on and urllc_on[p].kind[p] == KIND_MU:
            entries.setdefault(p, []).append(
                GridEntry(owner, urllc_on[p].partner_precoder[p], 1.0, mcs, KIND_MU)
            )
        else:
            entries.setdefault(p, []).append(
                GridEntry(owner, cell.embb_prec[p], cell.power_budget, mcs, KIND_SU)
            )
    return ScheduleGrid(cell.cell_id, tick, entries, cell.power_budget)
