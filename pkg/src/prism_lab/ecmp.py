"""Per-VIP ECMP tables: weighted bin population and update planning.

A table is an array of DIP identities ("bins"); a connection signature
hashes to one bin.  Pool changes never touch the table directly: they are
expressed as an ``UpdatePlan`` (which bins change, to what, and why) so the
control plane can migrate affected signatures before rewriting anything.

Table lengths are powers of two.  Together with modulo reduction this makes
doubling safe: after ``expand_table`` a signature lands either on its old
index or old index + previous length, and both initially hold the same DIP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .errors import AlreadyPresent, CapacityExceeded, PoolWouldBeEmpty, TooSmall

DEFAULT_MAX_TABLE_LEN = 1 << 20


class UpdateReason(Enum):
    TAKE_DOWN = "take_down"
    ADD_DIP = "add_dip"
    REWEIGHT = "reweight"
    EXPAND = "expand"


@dataclass
class DipPool:
    """Live DIPs of one VIP and their normalized weights."""

    weights: dict[int, float]

    def __post_init__(self):
        self.normalize()

    def normalize(self) -> None:
        total = sum(self.weights.values())
        if total <= 0:
            raise ValueError("pool weights must sum to a positive value")
        self.weights = {d: w / total for d, w in sorted(self.weights.items())}

    @property
    def dips(self) -> list[int]:
        return sorted(self.weights)

    def __len__(self) -> int:
        return len(self.weights)

    @classmethod
    def equal(cls, dips) -> "DipPool":
        dips = list(dips)
        return cls({d: 1.0 for d in dips})


@dataclass
class EcmpTable:
    """Array of DIP identities for one VIP."""

    vip_id: int
    bins: list[int]
    generation: int = 0

    def __len__(self) -> int:
        return len(self.bins)

    def counts(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for d in self.bins:
            out[d] = out.get(d, 0) + 1
        return dict(sorted(out.items()))

    def bins_of(self, dip: int) -> list[int]:
        return [i for i, d in enumerate(self.bins) if d == dip]


@dataclass
class UpdatePlan:
    """A pool-change expressed as bin rewrites.

    ``take_down`` plans are concrete: the affected bins are forced (every
    bin of the departing DIP).  ``add_dip`` and ``reweight`` plans know how
    many bins each donor DIP must yield but leave *which* bins open for the
    bin-selection policy; ``resolve`` fills them in.
    """

    reason: UpdateReason
    new_assignment: dict[int, int] = field(default_factory=dict)
    donor_takes: dict[int, int] = field(default_factory=dict)
    receivers: list[tuple[int, int]] = field(default_factory=list)
    pool_after: DipPool | None = None

    @property
    def affected_bins(self) -> list[int]:
        return sorted(self.new_assignment)

    @property
    def resolved(self) -> bool:
        return not self.donor_takes

    def resolve(self, table: EcmpTable, chooser) -> None:
        """Materialize donor bins via ``chooser(candidate_bins, n)``."""
        if self.resolved:
            return
        slots: list[int] = []
        for dip, need in sorted(self.donor_takes.items()):
            if need <= 0:
                continue
            chosen = chooser(table.bins_of(dip), need)
            if len(chosen) != need:
                raise ValueError("chooser returned wrong bin count")
            slots.extend(sorted(chosen))
        rr: list[int] = []
        for dip, count in self.receivers:
            rr.extend([dip] * count)
        if len(rr) != len(slots):
            raise AssertionError("donor/receiver count mismatch")
        for b, dip in zip(slots, rr):
            self.new_assignment[b] = dip
        self.donor_takes = {}

    def apply(self, table: EcmpTable) -> None:
        if not self.resolved:
            raise ValueError("plan has unresolved donor bins")
        for b, dip in self.new_assignment.items():
            if table.bins[b] == dip:
                raise AssertionError(f"bin {b} listed but unchanged")
            table.bins[b] = dip
        table.generation += 1


def _largest_remainder(weights: dict[int, float], length: int) -> dict[int, int]:
    """Integer counts per DIP summing to ``length``, each within 1 of ideal."""
    ideals = {d: weights[d] * length for d in sorted(weights)}
    counts = {d: math.floor(v) for d, v in ideals.items()}
    short = length - sum(counts.values())
    order = sorted(ideals, key=lambda d: (counts[d] - ideals[d], d))
    for d in order[:short]:
        counts[d] += 1
    return counts


def _minimal_move_targets(
    current: dict[int, int], weights: dict[int, float], length: int
) -> dict[int, int]:
    """Counts within 1 of ideal that minimize bins moved from ``current``.

    Clamp each current count into its admissible band, then fix the sum by
    nudging the entries farthest from ideal (ties to the lowest DIP id).
    """
    ideals = {d: weights[d] * length for d in weights}
    lo = {d: max(0, math.ceil(v - 1.0)) for d, v in ideals.items()}
    hi = {d: math.floor(v + 1.0) for d, v in ideals.items()}
    targets = {d: min(max(current.get(d, 0), lo[d]), hi[d]) for d in sorted(weights)}
    drift = sum(targets.values()) - length
    while drift > 0:
        d = max(
            (d for d in targets if targets[d] > lo[d]),
            key=lambda d: (targets[d] - ideals[d], -d),
        )
        targets[d] -= 1
        drift -= 1
    while drift < 0:
        d = max(
            (d for d in targets if targets[d] < hi[d]),
            key=lambda d: (ideals[d] - targets[d], -d),
        )
        targets[d] += 1
        drift += 1
    return targets


def build_table(pool: DipPool, length: int, vip_id: int = 0) -> EcmpTable:
    """Populate a fresh table, round-robin interleaved, weights within 1 bin."""
    if length < len(pool):
        raise TooSmall(f"length {length} cannot hold {len(pool)} DIPs")
    if length & (length - 1):
        raise ValueError("table length must be a power of two")
    remaining = _largest_remainder(pool.weights, length)
    bins: list[int] = []
    order = pool.dips
    while len(bins) < length:
        for d in order:
            if remaining[d] > 0:
                remaining[d] -= 1
                bins.append(d)
    return EcmpTable(vip_id=vip_id, bins=bins)


def plan_take_down(table: EcmpTable, pool: DipPool, dip: int) -> UpdatePlan:
    """Reassign every bin of ``dip`` among the remaining DIPs."""
    if dip not in pool.weights:
        raise KeyError(f"DIP {dip} not in pool")
    if len(pool) < 2:
        raise PoolWouldBeEmpty("cannot take down the last DIP")
    remaining = {d: w for d, w in pool.weights.items() if d != dip}
    pool_after = DipPool(dict(remaining))
    current = table.counts()
    current.pop(dip, None)
    targets = _minimal_move_targets(current, pool_after.weights, len(table))
    deficits = [(d, targets[d] - current.get(d, 0)) for d in sorted(targets)]
    fill: list[int] = []
    for d, need in deficits:
        fill.extend([d] * max(0, need))
    affected = table.bins_of(dip)
    if len(fill) != len(affected):
        raise AssertionError("take-down bin accounting mismatch")
    plan = UpdatePlan(reason=UpdateReason.TAKE_DOWN, pool_after=pool_after)
    # interleave the receivers across the departing DIP's bins
    rr = _interleave([[d] * max(0, need) for d, need in deficits])
    for b, d in zip(affected, rr):
        plan.new_assignment[b] = d
    return plan


def plan_replace_dip(table: EcmpTable, pool: DipPool, old: int, new: int) -> UpdatePlan:
    """Graceful take-down where a fresh DIP inherits the old DIP's bins."""
    if old not in pool.weights:
        raise KeyError(f"DIP {old} not in pool")
    if new in pool.weights:
        raise AlreadyPresent(f"DIP {new} already in pool")
    weights = dict(pool.weights)
    weights[new] = weights.pop(old)
    plan = UpdatePlan(reason=UpdateReason.TAKE_DOWN, pool_after=DipPool(weights))
    for b in table.bins_of(old):
        plan.new_assignment[b] = new
    return plan


def plan_add_dip(table: EcmpTable, pool: DipPool, dip: int, weight: float) -> UpdatePlan:
    """Give a new DIP round(weight * length) bins, taken from donors pro rata.

    Which bins each donor yields is left to the bin-selection policy.
    """
    if dip in pool.weights:
        raise AlreadyPresent(f"DIP {dip} already in pool")
    if weight < 0:
        raise ValueError("weight must be non-negative")
    scaled = {d: w * (1.0 - weight) for d, w in pool.weights.items()}
    scaled[dip] = weight
    pool_after = DipPool(scaled)
    length = len(table)
    new_count = round(pool_after.weights[dip] * length)
    plan = UpdatePlan(reason=UpdateReason.ADD_DIP, pool_after=pool_after)
    if new_count == 0:
        return plan
    donors_weights = {d: w for d, w in pool_after.weights.items() if d != dip}
    total = sum(donors_weights.values())
    donors_weights = {d: w / total for d, w in donors_weights.items()}
    current = table.counts()
    donor_targets = _minimal_move_targets(current, donors_weights, length - new_count)
    plan.donor_takes = {
        d: current[d] - donor_targets[d] for d in sorted(current) if current[d] > donor_targets[d]
    }
    if sum(plan.donor_takes.values()) != new_count:
        raise AssertionError("add-dip donor accounting mismatch")
    plan.receivers = [(dip, new_count)]
    return plan


def plan_reweight(table: EcmpTable, pool: DipPool, new_weights: dict[int, float]) -> UpdatePlan:
    """Move the minimum number of bins to satisfy ``new_weights`` within 1."""
    if set(new_weights) != set(pool.weights):
        raise ValueError("new weights must cover exactly the current pool")
    pool_after = DipPool(dict(new_weights))
    current = table.counts()
    targets = _minimal_move_targets(current, pool_after.weights, len(table))
    plan = UpdatePlan(reason=UpdateReason.REWEIGHT, pool_after=pool_after)
    plan.donor_takes = {
        d: current.get(d, 0) - targets[d]
        for d in sorted(targets)
        if current.get(d, 0) > targets[d]
    }
    receivers = [
        (d, targets[d] - current.get(d, 0))
        for d in sorted(targets)
        if targets[d] > current.get(d, 0)
    ]
    plan.receivers = _interleave_pairs(receivers)
    if not plan.donor_takes:
        plan.receivers = []
    return plan


def plan_retire_bins(table: EcmpTable, pool: DipPool, count: int, fresh_dips: list[int]) -> UpdatePlan:
    """Replace ``count`` policy-chosen bins with fresh DIPs, one per bin.

    Models rolling maintenance where individual bins are drained and handed
    to replacement servers; DIPs left with no bins drop out of the pool.
    """
    if count > len(table):
        raise ValueError("cannot retire more bins than the table holds")
    if len(fresh_dips) != count:
        raise ValueError("need exactly one fresh DIP per retired bin")
    plan = UpdatePlan(reason=UpdateReason.TAKE_DOWN, pool_after=None)
    plan.donor_takes = {-1: count}  # candidates span the whole table
    plan.receivers = [(d, 1) for d in fresh_dips]
    return plan


def expand_table(
    table: EcmpTable, pool: DipPool, max_len: int = DEFAULT_MAX_TABLE_LEN
) -> tuple[EcmpTable, UpdatePlan]:
    """Double the table; new half mirrors the old so no mapping changes.

    The returned plan rebalances the doubled table back to the pool weights
    (duplication can leave a DIP 2 bins away from ideal).
    """
    new_len = 2 * len(table)
    if new_len > max_len:
        raise CapacityExceeded(f"doubling to {new_len} exceeds limit {max_len}")
    doubled = EcmpTable(
        vip_id=table.vip_id, bins=table.bins + list(table.bins), generation=table.generation + 1
    )
    plan = plan_reweight(doubled, pool, dict(pool.weights))
    plan.reason = UpdateReason.EXPAND
    return doubled, plan


def _interleave(groups: list[list[int]]) -> list[int]:
    out: list[int] = []
    idx = [0] * len(groups)
    while any(i < len(g) for i, g in zip(idx, groups)):
        for k, g in enumerate(groups):
            if idx[k] < len(g):
                out.append(g[idx[k]])
                idx[k] += 1
    return out


def _interleave_pairs(receivers: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Flatten receiver deficits to unit grants, round-robin across DIPs."""
    groups = [[d] * n for d, n in receivers]
    return [(d, 1) for d in _interleave(groups)]
