"""The software connection table: per-signature lifecycle and accounting.

An entry corresponds to a *signature*, not a connection: distinct keys can
hash to the same signature, so each entry carries a reference count of the
connections currently mapped to it.  Two SYNs for one signature closer than
the delta window are treated as a retransmission (one connection); farther
apart they are counted as a new colliding connection.

Entries hold the forwarding decision (DIP and bin) made when the signature
was first learned, which is what per-connection consistency preserves.
"""

from __future__ import annotations

from collections import deque
from enum import Enum


class SctState(Enum):
    HALF_OPEN = "half_open"
    ACTIVE = "active"
    HALF_CLOSED = "half_closed"
    ONLY_FIN = "only_fin_received"
    TEST = "test"


class SynResult(Enum):
    NEW = "new"
    RETRANSMIT = "retransmit"
    NEW_COLLIDING = "new_colliding_connection"


class CloseKind(Enum):
    FIN1 = "fin1"
    FIN2 = "fin2"
    RST = "rst"


class CloseResult(Enum):
    DECREMENTED = "decremented"
    REMOVED = "removed"
    ORPHAN_FIN = "orphan_fin"
    PENDING = "pending"  # lone FIN recorded, waiting for its pair


class SctEntry:
    __slots__ = (
        "sig",
        "vip_id",
        "dip",
        "bin",
        "first_time",
        "syn_time",
        "state",
        "ref_count",
        "in_mct",
        "pending_fin1",
        "pending_fin2",
        "prune_deadline",
    )

    def __init__(self, sig: int, vip_id: int, dip: int, bin_: int, now: float):
        self.sig = sig
        self.vip_id = vip_id
        self.dip = dip
        self.bin = bin_
        self.first_time = now
        self.syn_time = now
        self.state = SctState.HALF_OPEN
        self.ref_count = 1
        self.in_mct = False
        self.pending_fin1 = 0
        self.pending_fin2 = 0
        self.prune_deadline = 0.0


class VipLifetimeStats:
    """Exponentially weighted statistics of one VIP's traffic.

    Tracks the mean observed connection duration (used for suspect
    detection and bin-selection weights) and an arrival-rate estimate
    sampled at FIB drains.
    """

    def __init__(self, lifetime_alpha: float = 0.05, rate_alpha: float = 0.3):
        self._lifetime_alpha = lifetime_alpha
        self._rate_alpha = rate_alpha
        self._mean: float | None = None
        self._rate: float | None = None
        self._syn_count = 0
        self._last_rate_t: float | None = None

    def record_duration(self, duration: float) -> None:
        if self._mean is None:
            self._mean = duration
        else:
            a = self._lifetime_alpha
            self._mean = (1 - a) * self._mean + a * duration

    def mean_lifetime(self) -> float | None:
        return self._mean

    def count_syn(self, n: int = 1) -> None:
        self._syn_count += n

    def sample_rate(self, now: float) -> None:
        if self._last_rate_t is None:
            self._last_rate_t = now
            self._syn_count = 0
            return
        dt = now - self._last_rate_t
        if dt <= 0:
            return
        rate = self._syn_count / dt
        self._rate = rate if self._rate is None else (
            (1 - self._rate_alpha) * self._rate + self._rate_alpha * rate
        )
        self._syn_count = 0
        self._last_rate_t = now

    def arrival_rate(self) -> float | None:
        return self._rate


class SctTable:
    """Signature-keyed connection state plus the per-bin membership index.

    Mutators return what the caller must mirror elsewhere (MCT removal is
    owned by the control plane, which sees the returned outcomes).
    """

    def __init__(self):
        self.by_sig: dict[int, SctEntry] = {}
        self._bin_members: dict[tuple[int, int], dict[int, None]] = {}
        self._syn2_watch: deque[tuple[float, int, float]] = deque()
        self._prune_watch: deque[tuple[float, int]] = deque()
        self.counters = {
            "new": 0,
            "retransmit": 0,
            "new_colliding": 0,
            "syn2_unknown": 0,
            "syn2_timeouts": 0,
            "orphan_fins": 0,
            "onlyfin_pruned": 0,
            "closes": 0,
        }

    def __len__(self) -> int:
        return len(self.by_sig)

    def get(self, sig: int) -> SctEntry | None:
        return self.by_sig.get(sig)

    def bin_signatures(self, vip_id: int, bin_: int) -> list[int]:
        members = self._bin_members.get((vip_id, bin_))
        return list(members) if members else []

    def bin_size(self, vip_id: int, bin_: int) -> int:
        members = self._bin_members.get((vip_id, bin_))
        return len(members) if members else 0

    def _link(self, e: SctEntry) -> None:
        self._bin_members.setdefault((e.vip_id, e.bin), {})[e.sig] = None

    def _unlink(self, e: SctEntry) -> None:
        members = self._bin_members.get((e.vip_id, e.bin))
        if members is not None:
            members.pop(e.sig, None)
            if not members:
                del self._bin_members[(e.vip_id, e.bin)]

    def insert_new(
        self, sig: int, vip_id: int, dip: int, bin_: int, now: float, syn2_deadline: float
    ) -> SctEntry:
        e = SctEntry(sig, vip_id, dip, bin_, now)
        self.by_sig[sig] = e
        self._link(e)
        self._syn2_watch.append((now + syn2_deadline, sig, now))
        self.counters["new"] += 1
        return e

    def remove(self, sig: int) -> SctEntry | None:
        e = self.by_sig.pop(sig, None)
        if e is not None:
            self._unlink(e)
        return e

    # --- packet-stream ingestion -------------------------------------

    def ingest_syn1(
        self,
        sig: int,
        vip_id: int,
        dip: int,
        bin_: int,
        now: float,
        delta_window: float,
        syn2_deadline: float,
    ) -> tuple[SynResult, SctEntry]:
        """Apply one learned client SYN.  ``now`` is the hardware record time."""
        e = self.by_sig.get(sig)
        if e is None:
            return SynResult.NEW, self.insert_new(sig, vip_id, dip, bin_, now, syn2_deadline)
        if e.state is SctState.ONLY_FIN:
            # the SYN half of a connection whose FINs raced ahead
            e.state = SctState.HALF_OPEN
            e.ref_count = 1
            e.vip_id = vip_id
            e.dip = dip
            e.bin = bin_
            e.first_time = now
            e.syn_time = now
            # re-insert at the back so dict order stays first_time order
            del self.by_sig[sig]
            self.by_sig[sig] = e
            self._link(e)
            self._syn2_watch.append((now + syn2_deadline, sig, now))
            self.counters["new"] += 1
            return SynResult.NEW, e
        if now - e.syn_time < delta_window:
            self.counters["retransmit"] += 1
            return SynResult.RETRANSMIT, e
        e.ref_count += 1
        e.syn_time = now
        self.counters["new_colliding"] += 1
        return SynResult.NEW_COLLIDING, e

    def ingest_syn2(self, sig: int, now: float) -> SctEntry | None:
        """Apply one learned server SYN-ACK; returns the entry closed-out below."""
        e = self.by_sig.get(sig)
        if e is None:
            self.counters["syn2_unknown"] += 1
            return None
        if e.state is SctState.HALF_OPEN:
            e.state = SctState.ACTIVE
        return e

    def ingest_close(
        self, sig: int, kind: CloseKind, now: float, prune_timeout: float = 0.01
    ) -> tuple[CloseResult, SctEntry | None]:
        """Apply one learned FIN/RST.  A FIN pair or a lone RST closes once."""
        e = self.by_sig.get(sig)
        if e is None:
            e = SctEntry(sig, vip_id=sig >> 48, dip=-1, bin_=-1, now=now)
            e.state = SctState.ONLY_FIN
            e.ref_count = 0
            e.prune_deadline = now + prune_timeout
            if kind is CloseKind.FIN1:
                e.pending_fin1 = 1
            elif kind is CloseKind.FIN2:
                e.pending_fin2 = 1
            self.by_sig[sig] = e
            self.watch_prune(sig, e.prune_deadline)
            self.counters["orphan_fins"] += 1
            return CloseResult.ORPHAN_FIN, e
        if e.state is SctState.ONLY_FIN:
            if kind is CloseKind.FIN1:
                e.pending_fin1 += 1
            elif kind is CloseKind.FIN2:
                e.pending_fin2 += 1
            return CloseResult.PENDING, e
        if kind is CloseKind.RST:
            return self._decrement(e, now), e
        if kind is CloseKind.FIN1:
            e.pending_fin1 += 1
        else:
            e.pending_fin2 += 1
        if e.pending_fin1 >= 1 and e.pending_fin2 >= 1:
            e.pending_fin1 -= 1
            e.pending_fin2 -= 1
            return self._decrement(e, now), e
        if e.state is SctState.ACTIVE:
            e.state = SctState.HALF_CLOSED
        return CloseResult.PENDING, e

    def _decrement(self, e: SctEntry, now: float) -> CloseResult:
        e.ref_count -= 1
        self.counters["closes"] += 1
        if e.ref_count <= 0:
            self.remove(e.sig)
            return CloseResult.REMOVED
        if e.state is SctState.HALF_CLOSED:
            e.state = SctState.ACTIVE
        return CloseResult.DECREMENTED

    def try_close_pending(self, e: SctEntry, now: float) -> CloseResult | None:
        """Consume a buffered FIN pair after a revival resolved the entry."""
        if e.state in (SctState.ACTIVE, SctState.HALF_CLOSED) and e.pending_fin1 and e.pending_fin2:
            e.pending_fin1 -= 1
            e.pending_fin2 -= 1
            return self._decrement(e, now)
        return None

    # --- maintenance sweeps -------------------------------------------

    def sweep_syn2_timeouts(self, now: float) -> list[SctEntry]:
        """Drop entries that never saw their SYN2 within the timeout."""
        removed = []
        w = self._syn2_watch
        while w and w[0][0] <= now:
            _, sig, syn_time = w.popleft()
            e = self.by_sig.get(sig)
            if e is not None and e.state is SctState.HALF_OPEN and e.syn_time == syn_time:
                self.remove(sig)
                removed.append(e)
                self.counters["syn2_timeouts"] += 1
        return removed

    def watch_prune(self, sig: int, deadline: float) -> None:
        self._prune_watch.append((deadline, sig))

    def sweep_onlyfin(self, now: float) -> list[SctEntry]:
        """Prune FIN-only ghosts whose SYNs never showed up."""
        removed = []
        w = self._prune_watch
        while w and w[0][0] <= now:
            _, sig = w.popleft()
            e = self.by_sig.get(sig)
            if e is not None and e.state is SctState.ONLY_FIN and e.prune_deadline <= now:
                del self.by_sig[sig]  # ghosts are never linked to a bin
                removed.append(e)
                self.counters["onlyfin_pruned"] += 1
        return removed

    def reindex_vip(self, vip_id: int, bin_of) -> None:
        """Recompute bin indexes after the VIP's table length changed."""
        sigs: list[int] = []
        for (v, b), members in list(self._bin_members.items()):
            if v != vip_id:
                continue
            sigs.extend(members)
            del self._bin_members[(v, b)]
        for sig in sigs:
            e = self.by_sig[sig]
            e.bin = bin_of(sig)
            self._link(e)

    def find_suspects(self, vip_stats, now: float, multiplier: float) -> list[int]:
        """Signatures active suspiciously long versus their VIP's mean lifetime.

        Entries are insertion-ordered by first_time, so the scan stops at the
        first entry too young under the smallest per-VIP threshold and never
        walks the healthy bulk of the table.
        """
        thresholds: dict[int, float] = {}
        for vip_id, stats in vip_stats.items():
            mean = stats.mean_lifetime()
            if mean is not None and mean > 0:
                thresholds[vip_id] = multiplier * mean
        if not thresholds:
            return []
        min_threshold = min(thresholds.values())
        out = []
        for sig, e in self.by_sig.items():
            if now - e.first_time <= min_threshold:
                break
            if e.state is not SctState.ACTIVE or e.in_mct:
                continue
            threshold = thresholds.get(e.vip_id)
            if threshold is not None and now - e.syn_time > threshold:
                out.append(sig)
        return out
