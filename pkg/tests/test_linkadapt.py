import math

import numpy as np
import pytest

from mups_sim.linkadapt import (CqiState, HarqProcess, McsTable, chase_effective_sinr,
                                decode_tb, mu_adjusted_cqi, report_cqi, select_mcs)

PERIOD, DELAY = 35, 14  # 5 ms / 2 ms at 1/7 ms ticks


def state(filtered=10.0, xi=0.01, delta=3.0, n_sb=1):
    arr = np.full(n_sb, float(filtered))
    return CqiState(arr.copy(), arr.copy(), filter_coeff=xi, mu_offset_db=delta)


class TestReportPipeline:
    def test_generation_only_on_grid(self):
        st = state(0.0, xi=1.0)
        report_cqi(1, np.array([5.0]), st, PERIOD, DELAY)
        assert st.pending == [] and st.filtered_db[0] == 0.0

    def test_visibility_delay(self):
        st = state(0.0, xi=1.0)
        report_cqi(0, np.array([5.0]), st, PERIOD, DELAY)
        for t in range(1, DELAY):
            report_cqi(t, None, st, PERIOD, DELAY)
            assert st.filtered_db[0] == 0.0, "report readable before the feedback delay"
        report_cqi(DELAY, None, st, PERIOD, DELAY)
        assert st.filtered_db[0] == 5.0
        assert st.last_report_tick == 0

    def test_xi_one_copies_report(self):
        st = state(-7.0, xi=1.0)
        report_cqi(0, np.array([20.0]), st, PERIOD, 0)
        assert st.filtered_db[0] == 20.0

    def test_small_xi_arithmetic(self):
        st = state(10.0, xi=0.01)
        report_cqi(0, np.array([20.0]), st, PERIOD, 0)
        assert st.filtered_db[0] == pytest.approx(10.1, abs=1e-12)

    @pytest.mark.parametrize("xi", [0.01, 0.5, 1.0])
    def test_step_response_closed_form(self, xi):
        gamma, d0 = 17.0, 3.0
        st = state(d0, xi=xi)
        for k in range(40):
            t = k * PERIOD
            report_cqi(t, np.array([gamma]), st, PERIOD, DELAY)
            report_cqi(t + DELAY, None, st, PERIOD, DELAY)
            expected = gamma + (1 - xi) ** (k + 1) * (d0 - gamma)
            assert st.filtered_db[0] == pytest.approx(expected, abs=1e-12)

    def test_filter_stability_bounded(self):
        rng = np.random.default_rng(31)
        st = state(5.0, xi=0.3)
        bound = 5.0
        for k in range(200):
            val = rng.uniform(-25.0, 25.0)
            bound = max(bound, abs(val))
            report_cqi(k * PERIOD, np.array([val]), st, PERIOD, 0)
            assert abs(st.filtered_db[0]) <= bound + 1e-12


class TestMuOffset:
    def test_table_value(self):
        assert mu_adjusted_cqi(state(15.0, delta=3.0))[0] == pytest.approx(12.0)

    def test_zero_offset(self):
        assert mu_adjusted_cqi(state(8.5, delta=0.0))[0] == pytest.approx(8.5)

    def test_negative_cqi(self):
        assert mu_adjusted_cqi(state(-2.0, delta=3.0))[0] == pytest.approx(-5.0)


class TestMcsTable:
    def test_default_table_shape(self):
        t = McsTable.default()
        assert len(t) == 15
        assert t.se[0] == pytest.approx(0.1523)
        assert t.se[-1] == pytest.approx(5.5547)
        assert t.threshold_db[0] == pytest.approx(-6.0)
        assert t.threshold_db[-1] == pytest.approx(20.0)

    def test_monotone_invariant_enforced(self):
        with pytest.raises(ValueError):
            McsTable([0, 1], [0.5, 0.4], [-2.0, 0.0])

    def test_select_floor_clamp(self):
        t = McsTable.default()
        assert select_mcs(-30.0, t, 0.1) == 0

    def test_select_boundary_inclusive(self):
        t = McsTable.default()
        for k in (0, 4, 14):
            assert select_mcs(float(t.threshold_db[k]), t, 0.1) == k

    def test_backoff_for_tight_target(self):
        t = McsTable.default()
        cqi = float(t.threshold_db[5])
        assert select_mcs(cqi, t, 0.01, backoff_1pct_db=2.0) < select_mcs(cqi, t, 0.1)

    def test_monotone_scan(self):
        t = McsTable.default()
        picks = [select_mcs(c, t, 0.1) for c in np.linspace(-10, 30, 200)]
        assert all(b >= a for a, b in zip(picks, picks[1:]))

    def test_code_rate_bounds(self):
        t = McsTable.default()
        for k in range(len(t)):
            assert 0.0 < t.code_rate(k) < 1.0


def harq_with(transmissions, rtt=4, mcs_gap_db=0.0):
    h = HarqProcess(0, rtt_ticks=rtt, max_tx=10)
    for tick, sinr, rho in transmissions:
        h.add_transmission(tick, sinr, rho)
    return h


class TestDecode:
    def test_fully_punctured_always_fails(self):
        h = harq_with([(0, 100.0, 1.0)])
        rng = np.random.default_rng(0)
        assert decode_tb(h, 0.3, -10.0, rng) is False

    def test_chase_doubles_effective_sinr(self):
        h = harq_with([(0, 2.0, 0.0), (4, 2.0, 0.0)])
        gamma = chase_effective_sinr(h)
        assert gamma == pytest.approx(4.0, abs=1e-9)
        gain_db = 10 * math.log10(gamma) - 10 * math.log10(2.0)
        assert gain_db == pytest.approx(3.01, abs=0.01)

    def test_deterministic_threshold_mode(self):
        thr = 5.0
        above = harq_with([(0, 10 ** ((thr + 1) / 10), 0.0)])
        below = harq_with([(0, 10 ** ((thr - 1) / 10), 0.0)])
        assert decode_tb(above, 0.3, thr, None, deterministic=True) is True
        assert decode_tb(below, 0.3, thr, None, deterministic=True) is False

    def test_code_rate_inflation_kills_block(self):
        # rho = 0.5 doubles the effective rate: 0.6 -> 1.2 > 0.93
        h = harq_with([(0, 1e9, 0.5)])
        rng = np.random.default_rng(1)
        assert decode_tb(h, 0.6, -10.0, rng) is False
        ok = harq_with([(0, 1e9, 0.5)])
        assert decode_tb(ok, 0.3, -10.0, rng) is True

    def test_success_monotone_in_sinr_and_rho(self):
        thr = 5.0
        # deterministic sweep over gamma
        outcomes = []
        for g_db in np.linspace(-5, 15, 41):
            h = harq_with([(0, 10 ** (g_db / 10), 0.0)])
            outcomes.append(decode_tb(h, 0.3, thr, None, deterministic=True))
        assert outcomes == sorted(outcomes)  # False...True, no flip back
        # higher puncturing never helps
        oks = []
        for rho in (0.0, 0.3, 0.6, 0.9):
            h = harq_with([(0, 10 ** (0.7), rho)])
            oks.append(decode_tb(h, 0.3, thr, None, deterministic=True))
        assert all(int(b) <= int(a) for a, b in zip(oks, oks[1:]))

    def test_empirical_bler_matches_logistic_at_ten_percent(self):
        # gamma placed at the curve's 10% point: thr + slope*ln(9)
        thr, slope = 5.0, 0.5
        g_db = thr + slope * math.log(9.0)
        rng = np.random.default_rng(42)
        fails = 0
        trials = 100_000
        for _ in range(trials):
            h = harq_with([(0, 10 ** (g_db / 10), 0.0)])
            if not decode_tb(h, 0.3, thr, rng, slope_db=slope):
                fails += 1
        assert fails / trials == pytest.approx(0.10, rel=0.2)

    def test_rtt_spacing_enforced(self):
        h = HarqProcess(0, rtt_ticks=4, max_tx=4)
        h.add_transmission(0, 1.0, 0.0)
        with pytest.raises(ValueError):
            h.add_transmission(3, 1.0, 0.0)

    def test_max_tx_enforced(self):
        h = HarqProcess(0, rtt_ticks=1, max_tx=2)
        h.add_transmission(0, 1.0, 0.0)
        h.add_transmission(1, 1.0, 0.0)
        with pytest.raises(ValueError):
            h.add_transmission(2, 1.0, 0.0)
