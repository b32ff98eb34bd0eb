"""Domain identities, the connection signature and the shared hash functions.

A connection is identified by its 5-tuple key.  The simulator never stores
keys in the emulated hardware tables; it stores a 64-bit signature made of
a 16-bit VIP id and a (configurable, up to 48-bit) hash of the key.
Signatures are plain ints: ``vip_id << 48 | key_hash``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyTable, UnknownVip
from .hashing import digest64, digest64_batch, mix64, mix64_batch

KEY_HASH_BITS = 48
_VIP_SHIFT = 48

# XOR'ed into the signature before the ECMP mix so bin choice is not the
# identity function of the signature hash.
_ECMP_SALT = 0x9E3779B97F4A7C15


@dataclass(frozen=True)
class ConnectionKey:
    """An IPv4 TCP 5-tuple."""

    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    protocol: int = 6

    def encode(self) -> bytes:
        """13-byte big-endian encoding: src_ip, dst_ip, src_port, dst_port, proto."""
        return (
            self.src_ip.to_bytes(4, "big")
            + self.dst_ip.to_bytes(4, "big")
            + self.src_port.to_bytes(2, "big")
            + self.dst_port.to_bytes(2, "big")
            + self.protocol.to_bytes(1, "big")
        )


@dataclass(frozen=True)
class Signature:
    """16-bit VIP id plus up-to-48-bit key hash."""

    vip_id: int
    key_hash: int

    def packed(self) -> int:
        return (self.vip_id << _VIP_SHIFT) | self.key_hash

    @classmethod
    def unpack(cls, value: int) -> "Signature":
        return cls(value >> _VIP_SHIFT, value & ((1 << _VIP_SHIFT) - 1))


@dataclass
class SimConfig:
    """Knobs of the simulated platform.

    Durations keep the units they are conventionally quoted in (the
    ``*_s``/``*_seconds`` helpers convert): ``poll_interval`` and
    ``syn2_timeout`` and ``t_limit`` are virtual milliseconds,
    ``fib_poll_overhead`` is microseconds, ``delta_window`` is seconds.
    """

    poll_interval: float = 10.0          # ms
    mct_write_rate: float = 25_000.0     # signature copies per second (rho)
    fib_read_rate: float = 10_000_000.0  # table entries per second
    fib_poll_overhead: float = 400.0     # us per poll
    delta_window: float = 5.0            # s
    syn2_timeout: float = 50.0           # ms
    t_limit: float | None = None         # ms, None = unbounded
    rng_seed: int = 1
    signature_hash_bits: int = 48

    # artifact knobs beyond the platform constants above
    probe_interval: float = 1.0          # s, dead-connection probing cadence
    suspect_multiplier: float = 3.0      # x mean lifetime before an entry is suspect
    lifetime_ewma_alpha: float = 0.05
    arrival_ewma_alpha: float = 0.3
    fib_capacity: int = 524_288
    mct_capacity: int = 65_536
    k_headroom: int = 10                 # target ECMP bins per DIP
    trap_soft_delay: float = 1.0         # ms, software handling of a trapped SYN
    sample_interval: float = 100.0       # ms, metrics sampling
    max_table_len: int = 1 << 20

    def __post_init__(self):
        if self.mct_write_rate <= 0 or self.fib_read_rate <= 0:
            raise ValueError("rates must be strictly positive")
        if not 1 <= self.signature_hash_bits <= KEY_HASH_BITS:
            raise ValueError("signature_hash_bits must be in 1..48")

    @property
    def poll_interval_s(self) -> float:
        return self.poll_interval / 1e3

    @property
    def fib_poll_overhead_s(self) -> float:
        return self.fib_poll_overhead / 1e6

    @property
    def syn2_timeout_s(self) -> float:
        return self.syn2_timeout / 1e3

    @property
    def t_limit_s(self) -> float | None:
        return None if self.t_limit is None else self.t_limit / 1e3

    @property
    def trap_soft_delay_s(self) -> float:
        return self.trap_soft_delay / 1e3

    @property
    def sample_interval_s(self) -> float:
        return self.sample_interval / 1e3


@dataclass
class VipState:
    """Registry record for one VIP: id, table handle and traffic statistics."""

    vip_id: int
    address: int
    ecmp_table: object | None = None   # ecmp.EcmpTable, attached by the engine
    pool: object | None = None         # ecmp.DipPool
    lifetime_stats: object | None = None  # sct.VipLifetimeStats
    accepting: bool = True             # False once the VIP is being removed


class VipRegistry:
    """Translation from VIP address to VIP id and per-VIP handles."""

    def __init__(self):
        self._by_addr: dict[int, VipState] = {}
        self._by_id: dict[int, VipState] = {}
        self._next_id = 0

    def register(self, address: int) -> VipState:
        if address in self._by_addr:
            raise ValueError(f"VIP {address:#x} already registered")
        if self._next_id >= 1 << 16:
            raise ValueError("VIP id space exhausted")
        state = VipState(vip_id=self._next_id, address=address)
        self._next_id += 1
        self._by_addr[address] = state
        self._by_id[state.vip_id] = state
        return state

    def remove(self, address: int) -> None:
        """Stop accepting new connections for a VIP; live state is kept."""
        state = self._by_addr.get(address)
        if state is None:
            raise UnknownVip(f"no VIP registered at {address:#x}")
        state.accepting = False

    def resolve(self, dst_ip: int) -> VipState:
        state = self._by_addr.get(dst_ip)
        if state is None or not state.accepting:
            raise UnknownVip(f"no VIP registered at {dst_ip:#x}")
        return state

    def by_id(self, vip_id: int) -> VipState:
        return self._by_id[vip_id]

    def __len__(self) -> int:
        return len(self._by_addr)

    def states(self) -> list[VipState]:
        return list(self._by_id.values())


def compute_signature(key: ConnectionKey, registry: VipRegistry, cfg: SimConfig) -> Signature:
    """Signature of ``key``: registered VIP id plus truncated key digest."""
    vip = registry.resolve(key.dst_ip)
    h = digest64(key.encode()) & ((1 << cfg.signature_hash_bits) - 1)
    return Signature(vip_id=vip.vip_id, key_hash=h)


def ecmp_hash(sig: Signature, table_len: int) -> int:
    """Bin index in ``[0, table_len)`` for a signature.

    Lengths are powers of two in this simulator, which makes the modulo a
    mask and keeps table doubling consistent: the new index is either the
    old one or old + previous length.
    """
    if table_len <= 0:
        raise EmptyTable("ECMP table has no bins")
    return mix64(sig.packed() ^ _ECMP_SALT) % table_len


def ecmp_hash_packed(packed_sig: int, table_len: int) -> int:
    """``ecmp_hash`` for a pre-packed signature int (engine fast path)."""
    if table_len <= 0:
        raise EmptyTable("ECMP table has no bins")
    return mix64(packed_sig ^ _ECMP_SALT) % table_len


def signature_batch(
    src_ip: np.ndarray,
    dst_ip: np.ndarray,
    src_port: np.ndarray,
    dst_port: np.ndarray,
    protocol: np.ndarray,
    vip_ids: np.ndarray,
    hash_bits: int,
) -> np.ndarray:
    """Packed signatures for arrays of key fields (uint64 result).

    Equivalent to ``compute_signature(...).packed()`` element-wise.
    """
    src_ip = src_ip.astype(np.uint64)
    dst_ip = dst_ip.astype(np.uint64)
    src_port = src_port.astype(np.uint64)
    dst_port = dst_port.astype(np.uint64)
    protocol = protocol.astype(np.uint64)
    ff = np.uint64(0xFF)
    columns = [
        (src_ip >> np.uint64(24)) & ff,
        (src_ip >> np.uint64(16)) & ff,
        (src_ip >> np.uint64(8)) & ff,
        src_ip & ff,
        (dst_ip >> np.uint64(24)) & ff,
        (dst_ip >> np.uint64(16)) & ff,
        (dst_ip >> np.uint64(8)) & ff,
        dst_ip & ff,
        (src_port >> np.uint64(8)) & ff,
        src_port & ff,
        (dst_port >> np.uint64(8)) & ff,
        dst_port & ff,
        protocol & ff,
    ]
    h = digest64_batch(columns)
    h &= np.uint64((1 << hash_bits) - 1)
    return (vip_ids.astype(np.uint64) << np.uint64(_VIP_SHIFT)) | h


def ecmp_hash_batch(packed_sigs: np.ndarray, table_len: int) -> np.ndarray:
    """Vectorized ``ecmp_hash`` over packed signatures."""
    if table_len <= 0:
        raise EmptyTable("ECMP table has no bins")
    mixed = mix64_batch(packed_sigs ^ np.uint64(_ECMP_SALT))
    return (mixed % np.uint64(table_len)).astype(np.int64)
