"""URLLC arrival generation, delivery accounting and arrival-trace replay.

URLLC packets arrive per user as a Poisson process and are tracked from gNB
arrival to the end of the mini-slot carrying their final successful HARQ
transmission. eMBB demand is full-buffer and needs no packet bookkeeping.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


class DoubleDeliveryError(RuntimeError):
    """A packet was marked delivered twice."""


@dataclass
class Packet:
    id: int
    user_id: int
    size_bytes: int
    arrival_tick: int
    deadline_ms: float = 1.0
    delivered_tick: int | None = None

    def __post_init__(self):
        if self.size_bytes <= 0:
            raise ValueError("packet size must be > 0 bytes")


@dataclass
class TrafficProfile:
    traffic_class: str = "urllc"
    arrival_rate: float = 250.0
    payload_bytes: int = 50

    def __post_init__(self):
        if self.traffic_class not in ("urllc", "embb"):
            raise ValueError(f"unknown traffic class {self.traffic_class!r}")
        if self.traffic_class == "urllc" and self.arrival_rate <= 0:
            raise ValueError("urllc arrival rate must be > 0")


def generate_arrivals(
    profile: TrafficProfile,
    tick_interval_s: float,
    current_tick: int,
    rng: np.random.Generator,
    user_id: int = 0,
    next_id: int = 0,
) -> list[Packet]:
    """Packets arriving within the current mini-slot (Poisson count).

    Arrivals are stamped with the tick in which they land; they become
    eligible for transmission at that tick's boundary.
    """
    if profile.traffic_class != "urllc":
        raise ValueError("arrival generation applies to urllc traffic only")
    mean = profile.arrival_rate * tick_interval_s
    n = int(rng.poisson(mean)) if mean > 0 else 0
    return [
        Packet(next_id + i, user_id, profile.payload_bytes, current_tick)
        for i in range(n)
    ]


def record_delivery(
    packet: Packet,
    tick: int,
    tick_interval_ms: float,
    processing_offset_ms: float = 0.0,
) -> float:
    """Mark the packet delivered at the end of `tick`; returns latency in ms.

    Latency spans whole mini-slots: a packet delivered in its arrival tick
    took exactly one mini-slot transmission time.
    """
    if packet.delivered_tick is not None:
        raise DoubleDeliveryError(f"packet {packet.id} already delivered")
    if tick < packet.arrival_tick:
        raise ValueError("delivery tick precedes arrival")
    packet.delivered_tick = tick
    return (tick - packet.arrival_tick + 1) * tick_interval_ms + processing_offset_ms


def write_arrival_trace(path, packets: list[Packet]):
    """CSV export for deterministic replay across schedulers."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["packet_id", "user_id", "arrival_tick", "size_bytes"])
        for p in sorted(packets, key=lambda q: (q.arrival_tick, q.id)):
            w.writerow([p.id, p.user_id, p.arrival_tick, p.size_bytes])


def read_arrival_trace(path) -> list[Packet]:
    packets = []
    with open(path) as fh:
        reader = csv.DictReader(fh)
        required = {"packet_id", "user_id", "arrival_tick", "size_bytes"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            missing = required - set(reader.fieldnames or [])
            raise ValueError(f"arrival trace missing columns: {sorted(missing)}")
        for row in reader:
            packets.append(
                Packet(
                    id=int(row["packet_id"]),
                    user_id=int(row["user_id"]),
                    size_bytes=int(row["size_bytes"]),
                    arrival_tick=int(row["arrival_tick"]),
                )
            )
    packets.sort(key=lambda p: (p.arrival_tick, p.id))
    return packets
