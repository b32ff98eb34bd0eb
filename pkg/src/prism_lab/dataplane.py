"""Per-packet pipeline: flag classification, FIB learning, MCT, ECMP.

Client-direction flow for a packet of a given VIP:

1. SYN/FIN/RST packets are learned into the matching FIB table first.
2. A SYN whose bin is in trap mode (final migration round) is handed to
   the software instead of being learned; it is forwarded after a small
   fixed software delay.
3. Everything else checks the MCT; a hit sets the keep-alive bit and
   forwards to the stored DIP, bypassing the ECMP table entirely.
4. On an MCT miss the signature hashes into the VIP's ECMP table and the
   packet goes to that bin's DIP.

Return-direction packets only feed the learning tables; no forwarding
decision is modeled for them.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .core import ConnectionKey, SimConfig, VipRegistry, compute_signature, ecmp_hash_packed
from .cuckoo import FibTable, InsertOutcome, MctTable
from .errors import UnknownVip


class Flag(Enum):
    SYN = "syn"
    SYN_ACK = "syn_ack"
    FIN_CLIENT = "fin_client"
    FIN_SERVER = "fin_server"
    RST_CLIENT = "rst_client"
    RST_SERVER = "rst_server"
    DATA = "data"


CLIENT_LEARN_TABLE = {Flag.SYN: "syn1", Flag.FIN_CLIENT: "fin1", Flag.RST_CLIENT: "rst1"}
RETURN_LEARN_TABLE = {Flag.SYN_ACK: "syn2", Flag.FIN_SERVER: "fin2", Flag.RST_SERVER: "rst2"}

FIB_NAMES = ("syn1", "syn2", "fin1", "fin2", "rst1", "rst2")


class Via(Enum):
    MCT_HIT = "mct_hit"
    ECMP_BIN = "ecmp_bin"
    TRAPPED = "trapped_to_software"


@dataclass(frozen=True)
class Packet:
    key: ConnectionKey
    flag: Flag
    arrival: float = 0.0


@dataclass(frozen=True)
class ForwardResult:
    dip: int
    via: Via
    bin: int | None = None
    learn_fallback: bool = False  # FIB was full; software absorbs the learn


class Dataplane:
    """The hardware tables of one switch plus the trap registry."""

    def __init__(self, registry: VipRegistry, cfg: SimConfig, fib_seed: int = 0):
        self.registry = registry
        self.cfg = cfg
        self.fibs: dict[str, FibTable] = {
            name: FibTable(cfg.fib_capacity, seed=fib_seed + i)
            for i, name in enumerate(FIB_NAMES)
        }
        self.mct = MctTable(cfg.mct_capacity, seed=fib_seed + 101)
        self._mct_get = self.mct.table._index.get  # per-packet fast path
        self.traps: dict[tuple[int, int], int] = {}  # (vip_id, bin) -> generation stamp
        self.counters = {
            "unknown_vip_drops": 0,
            "fib_full_traps": 0,
            "trapped_syns": 0,
        }

    # --- trap management (driven by the migration algorithm) ----------

    def trap_on(self, vip_id: int, bin_: int, generation: int) -> None:
        self.traps[(vip_id, bin_)] = generation

    def trap_off(self, vip_id: int, bin_: int) -> None:
        self.traps.pop((vip_id, bin_), None)

    def trapped(self, vip_id: int, bin_: int, generation: int) -> bool:
        stamp = self.traps.get((vip_id, bin_))
        return stamp is not None and stamp == generation

    # --- fast-path entry points (engine calls these) -------------------

    def forward_client(self, sig: int, vip_state, flag: Flag, now: float) -> ForwardResult:
        """Forwarding decision for a client-direction packet (keys pre-hashed)."""
        table = vip_state.ecmp_table
        fallback = False
        bin_: int | None = None
        fib_name = CLIENT_LEARN_TABLE.get(flag)
        if flag is Flag.SYN:
            bin_ = ecmp_hash_packed(sig, len(table.bins))
            stamp = self.traps.get((vip_state.vip_id, bin_))
            if stamp is not None and stamp == table.generation:
                self.counters["trapped_syns"] += 1
                return ForwardResult(dip=table.bins[bin_], via=Via.TRAPPED, bin=bin_)
        if fib_name is not None:
            outcome = self.fibs[fib_name].learn(sig, now)
            fallback = outcome is InsertOutcome.FULL
            if fallback:
                self.counters["fib_full_traps"] += 1
        entry = self.mct.get(sig)
        if entry is not None:
            entry.keep_alive = True
            return ForwardResult(dip=entry.dip, via=Via.MCT_HIT, learn_fallback=fallback)
        if bin_ is None:
            bin_ = ecmp_hash_packed(sig, len(table.bins))
        return ForwardResult(
            dip=table.bins[bin_], via=Via.ECMP_BIN, bin=bin_, learn_fallback=fallback
        )

    def learn_return(self, sig: int, flag: Flag, now: float) -> bool:
        """Return-path learning; True if the FIB absorbed it, False on Full."""
        fib_name = RETURN_LEARN_TABLE.get(flag)
        if fib_name is None:
            return True
        outcome = self.fibs[fib_name].learn(sig, now)
        if outcome is InsertOutcome.FULL:
            self.counters["fib_full_traps"] += 1
            return False
        return True

    # --- key-level API ---------------------------------------------------

    def process_packet(self, pkt: Packet) -> ForwardResult:
        """Full pipeline for a client-direction packet carrying a raw key."""
        try:
            vip_state = self.registry.resolve(pkt.key.dst_ip)
        except UnknownVip:
            self.counters["unknown_vip_drops"] += 1
            raise
        sig = compute_signature(pkt.key, self.registry, self.cfg).packed()
        return self.forward_client(sig, vip_state, pkt.flag, pkt.arrival)

    def process_return(self, pkt: Packet) -> None:
        """Learn-only handling of a server-direction packet."""
        sig = compute_signature(pkt.key, self.registry, self.cfg).packed()
        self.learn_return(sig, pkt.flag, pkt.arrival)

    def fib_depths(self) -> dict[str, int]:
        return {name: fib.occupancy for name, fib in self.fibs.items()}
