import numpy as np
import pytest
from scipy import stats

from mups_sim.traffic import (DoubleDeliveryError, Packet, TrafficProfile, generate_arrivals,
                              read_arrival_trace, record_delivery, write_arrival_trace)

TICK_S = 1e-3 / 7
TICK_MS = 1.0 / 7


class TestArrivals:
    def test_mean_interarrival(self):
        rng = np.random.default_rng(50)
        prof = TrafficProfile("urllc", arrival_rate=250.0, payload_bytes=50)
        count = 0
        n_ticks = 1_000_000
        mean = prof.arrival_rate * TICK_S
        count = int(np.sum(rng.poisson(mean, size=n_ticks)))
        # oracle: mean inter-arrival = 1/lambda = 4 ms
        total_time_ms = n_ticks * TICK_MS
        inter_ms = total_time_ms / count
        assert inter_ms == pytest.approx(4.0, rel=0.01)

    def test_zero_rate_window_empty(self):
        rng = np.random.default_rng(51)
        prof = TrafficProfile("urllc", arrival_rate=1e-12, payload_bytes=50)
        out = [p for t in range(1000) for p in generate_arrivals(prof, TICK_S, t, rng)]
        assert out == []

    def test_offered_load_arithmetic(self):
        # per-user load = lambda * Z * 8 = 100 kbps; 5 users -> 500 kbps per cell
        prof = TrafficProfile("urllc", arrival_rate=250.0, payload_bytes=50)
        per_user = prof.arrival_rate * prof.payload_bytes * 8
        assert per_user == pytest.approx(100_000)
        assert 5 * per_user == pytest.approx(500_000)

    def test_packet_fields(self):
        rng = np.random.default_rng(52)
        prof = TrafficProfile("urllc", arrival_rate=5000.0, payload_bytes=50)
        got = []
        for t in range(300):
            got.extend(generate_arrivals(prof, TICK_S, t, rng, user_id=9, next_id=len(got)))
        assert got, "expected at least one arrival"
        assert all(p.user_id == 9 and p.size_bytes == 50 for p in got)
        assert [p.id for p in got] == list(range(len(got)))

    def test_chi_squared_poisson_fit(self):
        rng = np.random.default_rng(53)
        mean = 250.0 * TICK_S
        counts = rng.poisson(mean, size=100_000)
        observed = np.bincount(counts, minlength=3)[:3].astype(float)
        observed[2] = len(counts) - observed[0] - observed[1]  # bin 2 = ">= 2"
        p0 = np.exp(-mean)
        p1 = mean * np.exp(-mean)
        expected = len(counts) * np.array([p0, p1, 1 - p0 - p1])
        _, pvalue = stats.chisquare(observed, expected)
        assert pvalue > 0.01

    def test_embb_profile_rejected(self):
        prof = TrafficProfile("embb")
        with pytest.raises(ValueError):
            generate_arrivals(prof, TICK_S, 0, np.random.default_rng(0))


class TestDelivery:
    def test_same_tick_delivery_is_one_minislot(self):
        p = Packet(0, 0, 50, arrival_tick=100)
        assert record_delivery(p, 100, TICK_MS) == pytest.approx(TICK_MS)

    def test_harq_round_trip_adds_four_ticks(self):
        p = Packet(0, 0, 50, arrival_tick=100)
        lat = record_delivery(p, 104, TICK_MS)
        assert lat == pytest.approx(TICK_MS + 4 * TICK_MS)

    def test_queueing_is_additive(self):
        p = Packet(0, 0, 50, arrival_tick=100)
        assert record_delivery(p, 103, TICK_MS) == pytest.approx(4 * TICK_MS)

    def test_double_delivery_rejected(self):
        p = Packet(0, 0, 50, arrival_tick=10)
        record_delivery(p, 11, TICK_MS)
        with pytest.raises(DoubleDeliveryError):
            record_delivery(p, 12, TICK_MS)

    def test_processing_offset(self):
        p = Packet(0, 0, 50, arrival_tick=0)
        assert record_delivery(p, 0, TICK_MS, processing_offset_ms=0.25) == pytest.approx(
            TICK_MS + 0.25)

    def test_latency_always_at_least_one_tti(self):
        rng = np.random.default_rng(54)
        for _ in range(100):
            arr = int(rng.integers(0, 1000))
            p = Packet(0, 0, 50, arrival_tick=arr)
            lat = record_delivery(p, arr + int(rng.integers(0, 30)), TICK_MS)
            assert lat >= TICK_MS - 1e-12


class TestTraceRoundTrip:
    def test_export_import(self, tmp_path):
        packets = [Packet(3, 1, 50, 7), Packet(1, 0, 50, 2), Packet(2, 2, 32, 2)]
        path = tmp_path / "trace.csv"
        write_arrival_trace(path, packets)
        back = read_arrival_trace(path)
        assert [(p.id, p.user_id, p.arrival_tick, p.size_bytes) for p in back] == [
            (1, 0, 2, 50), (2, 2, 2, 32), (3, 1, 7, 50)]

    def test_missing_column_diagnosed(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("packet_id,user_id,arrival_tick\n1,2,3\n")
        with pytest.raises(ValueError, match="size_bytes"):
            read_arrival_trace(path)
