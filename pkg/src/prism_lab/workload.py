"""Seeded traffic generation: arrivals, lifetimes, closes, pool updates.

Connections arrive as a Poisson process.  Keys are injective by
construction (a global counter drives source ip/port), so at full 48-bit
signatures collisions can only come from hash truncation, never from key
reuse.  Each connection emits one SYN, one returning SYN-ACK after a fixed
1 ms RTT, optional periodic data packets, and a FIN pair (or a single RST)
at the end of its lifetime unless it is flagged as a dead client.

Generation is chunked through numpy so signature hashing is vectorized;
the engine consumes connections lazily in arrival order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .core import signature_batch

RTT = 0.001  # client-server round trip modeled as a fixed 1 ms
DATA_START_OFFSET = 0.002  # first data packet follows the handshake

VIP_ADDR_BASE = 0x0AC80000  # 10.200.0.0
CLIENT_IP_BASE = 0x0A000000  # 10.0.0.0
PORTS_PER_IP = 60_000
DST_PORT = 80
PROTO_TCP = 6

UPDATE_KINDS = (
    "replace",
    "take_down",
    "add_dip",
    "reweight",
    "expand",
    "retire_bins",
    "hard_fail",
)


@dataclass
class Scenario:
    """A complete run description; see the scenario-file docs in the README."""

    vips: int = 1
    dips_per_vip: int = 4
    arrival_rate: float = 1000.0  # global SYNs per second
    lifetime_dist: tuple = ("uniform", 1.0, 9.0)
    data_packet_rate: float = 0.0
    duration: float = 10.0
    seed: int = 1
    update_rate: float = 0.0
    update_kind: str = "replace"
    update_schedule: list = field(default_factory=list)  # (t, vip_index, kind, args)
    dead_client_fraction: float = 0.0
    syn_retransmit_fraction: float = 0.0
    syn_retransmit_gap: float = 7.0
    rst_fraction: float = 0.0
    policy: str = "expected_load"
    table_len: int | None = None
    # hot-bin mode: a single pre-seeded bin under a microscope
    mode: str = "full"
    hot_bin_occupancy: int = 0
    bin_syn_rate: float = 0.0
    background_rate: float = 0.0
    migration_start: float = 0.2
    warmup: float = 0.0  # metrics/oracle still run; summary marks the window

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        for name in ("arrival_rate", "data_packet_rate", "update_rate", "background_rate",
                     "bin_syn_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.mode not in ("full", "hot_bin"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.update_kind not in UPDATE_KINDS:
            raise ValueError(f"unknown update kind {self.update_kind!r}")
        self.lifetime_dist = tuple(self.lifetime_dist)
        kind = self.lifetime_dist[0]
        if kind not in ("uniform", "lognormal", "fixed"):
            raise ValueError(f"unknown lifetime distribution {kind!r}")

    def mean_lifetime(self) -> float:
        kind, *params = self.lifetime_dist
        if kind == "uniform":
            return (params[0] + params[1]) / 2.0
        if kind == "fixed":
            return params[0]
        mu, sigma = params
        return float(np.exp(mu + sigma * sigma / 2.0))


class Conn:
    """One generated connection, shared by both directions."""

    __slots__ = ("key", "sig", "vip_index", "t", "lifetime", "data_rate",
                 "dead", "rst", "retrans_gap")

    def __init__(self, key, sig, vip_index, t, lifetime, data_rate, dead, rst, retrans_gap):
        self.key = key
        self.sig = sig
        self.vip_index = vip_index
        self.t = t
        self.lifetime = lifetime
        self.data_rate = data_rate
        self.dead = dead
        self.rst = rst
        self.retrans_gap = retrans_gap  # 0.0 = no retransmission


def vip_address(vip_index: int) -> int:
    return VIP_ADDR_BASE + vip_index


def _draw_lifetimes(dist: tuple, n: int, rng: np.random.Generator) -> np.ndarray:
    kind, *params = dist
    if kind == "uniform":
        return rng.uniform(params[0], params[1], n)
    if kind == "fixed":
        return np.full(n, float(params[0]))
    mu, sigma = params
    return rng.lognormal(mu, sigma, n)


class ConnStream:
    """Lazy arrival-ordered connection stream for one scenario."""

    CHUNK = 1 << 15

    def __init__(self, scenario: Scenario, hash_bits: int, seed: int, key_offset: int = 0):
        self.scenario = scenario
        self.hash_bits = hash_bits
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self._next_t = 0.0
        self._key_index = key_offset

    def __iter__(self) -> Iterator[Conn]:
        sc = self.scenario
        if sc.arrival_rate <= 0:
            return
        while self._next_t <= sc.duration:
            yield from self._chunk()

    def _chunk(self) -> list[Conn]:
        sc = self.scenario
        n = self.CHUNK
        rng = self.rng
        gaps = rng.exponential(1.0 / sc.arrival_rate, n)
        times = self._next_t + np.cumsum(gaps)
        self._next_t = float(times[-1])
        vip_idx = rng.integers(0, sc.vips, n)
        lifetimes = _draw_lifetimes(sc.lifetime_dist, n, rng)
        dead = (
            rng.random(n) < sc.dead_client_fraction
            if sc.dead_client_fraction > 0
            else np.zeros(n, dtype=bool)
        )
        rst = (
            rng.random(n) < sc.rst_fraction
            if sc.rst_fraction > 0
            else np.zeros(n, dtype=bool)
        )
        if sc.syn_retransmit_fraction > 0:
            retrans = np.where(
                rng.random(n) < sc.syn_retransmit_fraction, sc.syn_retransmit_gap, 0.0
            )
        else:
            retrans = np.zeros(n)
        idx = np.arange(self._key_index, self._key_index + n, dtype=np.int64)
        self._key_index += n
        src_ip = CLIENT_IP_BASE + (idx // PORTS_PER_IP)
        src_port = 1024 + (idx % PORTS_PER_IP)
        dst_ip = VIP_ADDR_BASE + vip_idx
        sigs = signature_batch(
            src_ip.astype(np.uint64),
            dst_ip.astype(np.uint64),
            src_port.astype(np.uint64),
            np.full(n, DST_PORT, dtype=np.uint64),
            np.full(n, PROTO_TCP, dtype=np.uint64),
            vip_idx.astype(np.uint64),
            self.hash_bits,
        )
        # canonical connection token: bijective with the generated 5-tuple
        # (src fields are functions of idx, dst fields of the vip index)
        keys = (idx << 16) | vip_idx
        out = []
        duration = self.scenario.duration
        for key, sig, v, t, life, d, r, rt in zip(
            keys.tolist(),
            sigs.tolist(),
            vip_idx.tolist(),
            times.tolist(),
            lifetimes.tolist(),
            dead.tolist(),
            rst.tolist(),
            retrans.tolist(),
        ):
            if t > duration:
                break
            out.append(Conn(key, sig, v, t, life, self.scenario.data_packet_rate, d, r, rt))
        return out


def generate_update_schedule(scenario: Scenario, seed: int) -> list[tuple]:
    """Materialized update events: explicit entries plus rate-driven ones.

    Each event is (t, vip_index, kind, args, draw) where ``draw`` is a
    uint64 the executor uses for any in-the-moment random choice (which
    DIP to retire, new weights, ...), keeping replays exact.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    events = []
    for entry in scenario.update_schedule:
        t, vip_index, kind, args = entry
        events.append((float(t), int(vip_index), kind, tuple(args), int(rng.integers(0, 2**63))))
    if scenario.update_rate > 0:
        t = 0.0
        while True:
            t += float(rng.exponential(1.0 / scenario.update_rate))
            if t >= scenario.duration:
                break
            vip_index = int(rng.integers(0, scenario.vips))
            events.append(
                (t, vip_index, scenario.update_kind, (), int(rng.integers(0, 2**63)))
            )
    events.sort(key=lambda e: e[0])
    return events
