"""Emulated hardware hash tables: multi-section cuckoo storage.

The FIB learning tables (SYN1/SYN2/FIN1/FIN2/RST1/RST2) and the migrated
connection table are all cuckoo tables in hardware: N sections, each with
its own hash function, buckets of a few entries each, and a bounded random
relocation walk on collision.  ``CuckooTable`` reproduces those placement
semantics (including Full outcomes under load) while keeping a side index
for O(1) lookups, since the simulator probes these tables on every packet.
"""

from __future__ import annotations

import random
from enum import Enum
from typing import NamedTuple

from .hashing import mix64

_MM_M1 = 0xFF51AFD7ED558CCD
_MM_M2 = 0xC4CEB9FE1A85EC53
_MASK64 = (1 << 64) - 1


class InsertOutcome(Enum):
    INSERTED = "inserted"
    ALREADY_PRESENT = "already_present"
    FULL = "full"


class Miss:
    """Sentinel for a failed lookup (distinct from a stored None)."""

    __slots__ = ()

    def __repr__(self):  # pragma: no cover
        return "Miss"


MISS = Miss()

DEFAULT_SECTIONS = 2
DEFAULT_BUCKET_SLOTS = 4
DEFAULT_MAX_KICKS = 32


class CuckooTable:
    """Fixed-capacity associative table with cuckoo relocation.

    capacity = sections * buckets_per_section * bucket_slots.  Keys are
    ints (packed signatures); values are opaque.
    """

    def __init__(
        self,
        capacity: int,
        sections: int = DEFAULT_SECTIONS,
        bucket_slots: int = DEFAULT_BUCKET_SLOTS,
        max_kicks: int = DEFAULT_MAX_KICKS,
        seed: int = 0,
    ):
        per_section = capacity // (sections * bucket_slots)
        if per_section < 1 or capacity != sections * bucket_slots * per_section:
            raise ValueError("capacity must be divisible by sections*bucket_slots")
        self.capacity = capacity
        self.sections = sections
        self.bucket_slots = bucket_slots
        self.buckets_per_section = per_section
        self.max_kicks = max_kicks
        self.section_seeds = [mix64(seed * 0x9E3779B9 + 0xABCD + k) for k in range(sections)]
        # store[k][i] is a bucket: list of (key, value) pairs, len <= bucket_slots;
        # buckets materialize on first use (tables are sized for 512K entries)
        self._store: list[dict[int, list[tuple[int, object]]]] = [
            {} for _ in range(sections)
        ]
        self._index: dict[int, object] = {}
        self._rng = random.Random(seed ^ 0x5DEECE66D)

    @property
    def occupancy(self) -> int:
        return len(self._index)

    def __contains__(self, key: int) -> bool:
        return key in self._index

    def _bucket_index(self, key: int, section: int) -> int:
        # mix64 inlined: this sits on the per-packet path
        x = key ^ self.section_seeds[section]
        x ^= x >> 33
        x = (x * _MM_M1) & _MASK64
        x ^= x >> 33
        x = (x * _MM_M2) & _MASK64
        return (x ^ (x >> 33)) % self.buckets_per_section

    def lookup(self, key: int):
        """Stored value for ``key`` or the MISS sentinel."""
        return self._index.get(key, MISS)

    def insert(self, key: int, value: object) -> InsertOutcome:
        if key in self._index:
            return InsertOutcome.ALREADY_PRESENT
        item = (key, value)
        swaps: list[tuple[list, int, tuple[int, object]]] = []
        for _ in range(self.max_kicks + 1):
            candidates = []
            for k in range(self.sections):
                section = self._store[k]
                idx = self._bucket_index(item[0], k)
                bucket = section.get(idx)
                if bucket is None:
                    bucket = section[idx] = []
                if len(bucket) < self.bucket_slots:
                    bucket.append(item)
                    self._index[item[0]] = item[1]
                    return InsertOutcome.INSERTED
                candidates.append(bucket)
            # all candidate buckets full: evict a random victim and retry
            bucket = candidates[self._rng.randrange(self.sections)]
            slot = self._rng.randrange(self.bucket_slots)
            victim = bucket[slot]
            bucket[slot] = item
            self._index[item[0]] = item[1]
            del self._index[victim[0]]
            swaps.append((bucket, slot, victim))
            item = victim
        # chain exhausted: roll back so the table is unchanged and only the
        # new key is rejected (a dropped learn event, counted by the caller)
        for bucket, slot, victim in reversed(swaps):
            evicted = bucket[slot]
            bucket[slot] = victim
            del self._index[evicted[0]]
            self._index[victim[0]] = victim[1]
        return InsertOutcome.FULL

    def remove(self, key: int) -> bool:
        if key not in self._index:
            return False
        for k in range(self.sections):
            bucket = self._store[k].get(self._bucket_index(key, k))
            if not bucket:
                continue
            for i, (bk, _) in enumerate(bucket):
                if bk == key:
                    bucket.pop(i)
                    del self._index[key]
                    return True
        raise AssertionError("index/store divergence")  # pragma: no cover

    def replace(self, key: int, value: object) -> bool:
        """Update the value of an existing key in place."""
        if key not in self._index:
            return False
        for k in range(self.sections):
            bucket = self._store[k].get(self._bucket_index(key, k))
            if not bucket:
                continue
            for i, (bk, _) in enumerate(bucket):
                if bk == key:
                    bucket[i] = (key, value)
                    self._index[key] = value
                    return True
        raise AssertionError("index/store divergence")  # pragma: no cover

    def items(self) -> list[tuple[int, object]]:
        out = []
        for section in self._store:
            for bucket in section.values():
                out.extend(bucket)
        return out

    def check_invariants(self) -> None:
        """Debug scan: each key stored exactly once, at one of its slots."""
        seen = set()
        for k, section in enumerate(self._store):
            for i, bucket in section.items():
                assert len(bucket) <= self.bucket_slots
                for key, value in bucket:
                    assert key not in seen, f"duplicate key {key}"
                    seen.add(key)
                    assert self._bucket_index(key, k) == i
                    assert self._index[key] is value
        assert seen == set(self._index)


class FibEntry(NamedTuple):
    """One learned flag packet: signature plus hardware record time."""

    signature: int
    record_time: float


class FibTable:
    """A FIB learning table: cuckoo placement plus FIFO drain order.

    ``synthetic_rate`` lets the hot-bin harness account for background
    traffic that is not simulated packet by packet: synthetic entries have
    no identity, but they are counted by ``pending_read_size`` so drains
    are charged the same virtual read time a full simulation would pay.
    """

    def __init__(self, capacity: int, seed: int = 0, synthetic_rate: float = 0.0):
        self.table = CuckooTable(capacity, seed=seed)
        self._fifo: dict[int, float] = {}  # signature -> record time, insertion order
        self.synthetic_rate = synthetic_rate
        self._synthetic_pending = 0
        self._synthetic_last = 0.0
        self.full_drops = 0
        self.duplicate_learns = 0

    @property
    def occupancy(self) -> int:
        return self.table.occupancy

    def learn(self, signature: int, now: float) -> InsertOutcome:
        outcome = self.table.insert(signature, now)
        if outcome is InsertOutcome.INSERTED:
            self._fifo[signature] = now
        elif outcome is InsertOutcome.ALREADY_PRESENT:
            self.duplicate_learns += 1
        else:
            self.full_drops += 1
        return outcome

    def _accrue_synthetic(self, now: float, rng) -> None:
        if self.synthetic_rate > 0.0 and now > self._synthetic_last:
            lam = self.synthetic_rate * (now - self._synthetic_last)
            self._synthetic_pending += int(rng.poisson(lam)) if rng is not None else int(round(lam))
        self._synthetic_last = now

    def pending_read_size(self, now: float, rng=None) -> int:
        """Entries a drain at ``now`` would have to read (real + synthetic)."""
        self._accrue_synthetic(now, rng)
        return len(self._fifo) + self._synthetic_pending

    def drain(self, budget: int | None = None) -> list[FibEntry]:
        """Remove and return up to ``budget`` entries, oldest first."""
        if budget is None or budget >= len(self._fifo):
            out = list(map(FibEntry._make, self._fifo.items()))
            self._fifo.clear()
            # full drain: drop the cuckoo placement wholesale
            for section in self.table._store:
                section.clear()
            self.table._index.clear()
        else:
            out = []
            it = iter(self._fifo)
            for _ in range(max(0, budget)):
                sig = next(it)
                out.append(FibEntry(sig, self._fifo[sig]))
            for e in out:
                del self._fifo[e.signature]
                self.table.remove(e.signature)
        self._synthetic_pending = 0
        return out


class MctEntry:
    """Migrated-connection mapping with the hardware keep-alive bit."""

    __slots__ = ("signature", "dip", "keep_alive", "probe_only")

    def __init__(self, signature: int, dip: int, probe_only: bool = False):
        self.signature = signature
        self.dip = dip
        self.keep_alive = False
        self.probe_only = probe_only


class MctTable:
    """The migrated connection table: signature -> DIP, consulted pre-ECMP."""

    def __init__(self, capacity: int, seed: int = 0):
        self.table = CuckooTable(capacity, seed=seed)

    @property
    def occupancy(self) -> int:
        return self.table.occupancy

    def __contains__(self, signature: int) -> bool:
        return signature in self.table

    def get(self, signature: int) -> MctEntry | None:
        v = self.table.lookup(signature)
        return None if v is MISS else v

    def insert(self, signature: int, dip: int, probe_only: bool = False) -> InsertOutcome:
        existing = self.get(signature)
        if existing is not None:
            if existing.probe_only and not probe_only:
                # a migration overtakes a liveness probe for the same signature
                existing.probe_only = False
                existing.dip = dip
            return InsertOutcome.ALREADY_PRESENT
        return self.table.insert(signature, MctEntry(signature, dip, probe_only))

    def remove(self, signature: int) -> bool:
        return self.table.remove(signature)

    def probe_and_clear(self, signatures=None) -> list[tuple[int, bool]]:
        """Read-and-clear keep-alive bits.

        Returns (signature, was_alive) pairs; ``signatures=None`` probes the
        whole table.  The caller decides removal policy.
        """
        if signatures is None:
            entries = [v for _, v in self.table.items()]
            entries.sort(key=lambda e: e.signature)
        else:
            entries = [e for e in (self.get(s) for s in signatures) if e is not None]
        out = []
        for e in entries:
            out.append((e.signature, e.keep_alive))
            e.keep_alive = False
        return out
