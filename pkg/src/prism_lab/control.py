"""Software side: FIB polling, iterative bin migration, probing, policies.

The migration of one bin runs in rounds: copy every SCT signature of the
bin into the MCT at the write rate, re-read the SYN learning table for
signatures that arrived meanwhile, and repeat.  A round is the last one
when the expected number of next-round arrivals falls below one signature
or the time budget would be exceeded; during the last round new SYNs for
the bin are trapped to the software so none are lost, and one catch-up
read closes the race between the previous snapshot and the trap.  Only
after that is the bin's content rewritten.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import Enum

from .core import SimConfig, ecmp_hash_packed
from .cuckoo import InsertOutcome
from .ecmp import DipPool, UpdatePlan, UpdateReason
from .errors import InsufficientBins, MctOverflow, PrismError
from .sct import CloseKind, CloseResult, SctState, SynResult


class PolicyKind(Enum):
    RANDOM = "random"
    LEAST_POPULATED = "least_populated"
    EXPECTED_LOAD = "expected_load"
    LIFE_EXPECTANCY = "life_expectancy"
    BLENDED = "blended"


@dataclass(frozen=True)
class BinSelectionPolicy:
    kind: PolicyKind
    alpha: float = 0.5

    @classmethod
    def parse(cls, text: str) -> "BinSelectionPolicy":
        text = text.strip().lower()
        if text.startswith("blended"):
            alpha = 0.5
            if ":" in text:
                alpha = float(text.split(":", 1)[1])
            if not 0.0 <= alpha <= 1.0:
                raise ValueError("blended alpha must be in [0, 1]")
            return cls(PolicyKind.BLENDED, alpha)
        return cls(PolicyKind(text))

    def __str__(self) -> str:
        if self.kind is PolicyKind.BLENDED:
            return f"blended:{self.alpha}"
        return self.kind.value


def bin_weight(
    policy: BinSelectionPolicy, sct, vip_id: int, bin_: int, now: float, mean_lifetime: float
) -> float:
    """The policy's W(bin); lower is a better migration candidate."""
    sigs = sct.bin_signatures(vip_id, bin_)
    if policy.kind is PolicyKind.LEAST_POPULATED:
        return float(len(sigs))
    if policy.kind is PolicyKind.EXPECTED_LOAD:
        total = 0.0
        for s in sigs:
            e = sct.get(s)
            total += mean_lifetime - (now - e.first_time)
        return total
    le = 0.0
    for s in sigs:
        e = sct.get(s)
        le += mean_lifetime - (now - e.syn_time)
    if policy.kind is PolicyKind.LIFE_EXPECTANCY:
        return le
    if policy.kind is PolicyKind.BLENDED:
        return policy.alpha * le + (1.0 - policy.alpha) * len(sigs)
    raise ValueError(f"no weight for policy {policy.kind}")


def select_bins(
    candidates: list[int],
    n: int,
    policy: BinSelectionPolicy,
    now: float,
    mean_lifetime: float,
    sct,
    vip_id: int,
    rng: random.Random,
) -> list[int]:
    """Pick ``n`` bins to migrate; ties break toward the lowest bin index."""
    if n > len(candidates):
        raise InsufficientBins(f"need {n} bins, only {len(candidates)} candidates")
    if n <= 0:
        return []
    if policy.kind is PolicyKind.RANDOM:
        return sorted(rng.sample(sorted(candidates), n))
    scored = sorted(
        (bin_weight(policy, sct, vip_id, b, now, mean_lifetime), b) for b in candidates
    )
    return [b for _, b in scored[:n]]


def poll_cost(total_entries: int, cfg: SimConfig) -> float:
    """Virtual seconds to read ``total_entries`` FIB entries in one poll."""
    return total_entries / cfg.fib_read_rate + cfg.fib_poll_overhead_s


@dataclass
class MigrationRound:
    index: int
    copied: int
    duration: float
    trapped_round: bool


@dataclass
class BinMigrationReport:
    vip_id: int
    bin: int
    new_dip: int
    rounds: list[MigrationRound] = field(default_factory=list)
    stragglers: int = 0
    trapped_syns: int = 0
    started_at: float = 0.0
    finished_at: float = 0.0

    @property
    def duration(self) -> float:
        return self.finished_at - self.started_at

    @property
    def migrated(self) -> int:
        return sum(r.copied for r in self.rounds) + self.stragglers + self.trapped_syns


@dataclass
class UpdateReport:
    vip_id: int
    reason: str
    started_at: float
    finished_at: float = 0.0
    bins: list[BinMigrationReport] = field(default_factory=list)
    instant_rewrites: int = 0

    @property
    def migrated(self) -> int:
        return sum(b.migrated for b in self.bins)

    @property
    def trapped(self) -> int:
        return sum(b.trapped_syns for b in self.bins)

    @property
    def max_rounds(self) -> int:
        return max((len(b.rounds) for b in self.bins), default=0)

    @property
    def duration(self) -> float:
        return self.finished_at - self.started_at


class ControlPlane:
    """Software logic bound to one simulation's tables and clock.

    The owning engine supplies scheduling (``sim.call_in``), the virtual
    clock (``sim.now``) and the shared table set; everything here runs at
    event boundaries on that single logical thread.
    """

    def __init__(self, sim):
        self.sim = sim
        self.cfg: SimConfig = sim.cfg
        self.migration_active = False
        self.updates_pending: list = []
        self.update_reports: list[UpdateReport] = []
        self.migrated_total = 0
        self.trapped_inserted = 0
        self.counters = {
            "polls": 0,
            "polls_skipped": 0,
            "probes": 0,
            "probes_skipped": 0,
            "probe_mct_full_skips": 0,
            "suspects_inserted": 0,
            "suspects_released": 0,
            "dead_removed": 0,
            "updates_applied": 0,
            "updates_skipped": 0,
            "hard_fails": 0,
            "expansions": 0,
        }

    # ------------------------------------------------------------------
    # FIB polling
    # ------------------------------------------------------------------

    def poll_fibs(self, now: float) -> float:
        """Drain all six learning tables and apply them to the SCT.

        Returns the virtual CPU time charged.  Entries are applied in
        record order, SYN1s first, then SYN2s, then closes.
        """
        sim = self.sim
        total = 0
        drained: dict[str, list] = {}
        for name, fib in sim.dataplane.fibs.items():
            total += fib.pending_read_size(now, sim.synthetic_rng)
            drained[name] = fib.drain()
        cost = poll_cost(total, self.cfg)
        self._ingest_syn1(drained["syn1"], now)
        self._ingest_syn2(drained["syn2"], now)
        self._ingest_closes(drained, now)
        self._sweeps(now)
        for vip in sim.vips:
            vip.lifetime_stats.sample_rate(now)
        self.counters["polls"] += 1
        return cost

    def _ingest_syn1(self, entries, now: float) -> None:
        sim = self.sim
        sct = sim.sct
        cfg = self.cfg
        for entry in entries:
            sig = entry.signature
            vip = sim.vip_by_id(sig >> 48)
            vip.lifetime_stats.count_syn()
            existing = sct.get(sig)
            if existing is None or existing.state is SctState.ONLY_FIN:
                table = vip.ecmp_table
                bin_ = ecmp_hash_packed(sig, len(table.bins))
                mct_entry = sim.dataplane.mct.get(sig)
                dip = mct_entry.dip if mct_entry is not None else table.bins[bin_]
            else:
                bin_ = existing.bin
                dip = existing.dip
            result, e = sct.ingest_syn1(
                sig, vip.vip_id, dip, bin_, entry.record_time,
                cfg.delta_window, cfg.syn2_timeout_s,
            )
            if result is SynResult.NEW_COLLIDING and e.in_mct:
                # colliding opener on a migrated signature: count only
                sim.counters["colliding_on_migrated"] += 1

    def _ingest_syn2(self, entries, now: float) -> None:
        sct = self.sim.sct
        for entry in entries:
            e = sct.ingest_syn2(entry.signature, entry.record_time)
            if e is not None:
                closed = sct.try_close_pending(e, entry.record_time)
                if closed is CloseResult.REMOVED:
                    self._entry_removed(e, entry.record_time)

    def _ingest_closes(self, drained: dict[str, list], now: float) -> None:
        sct = self.sim.sct
        prune = self.cfg.poll_interval_s
        merged = []
        for name, kind in (("fin1", CloseKind.FIN1), ("fin2", CloseKind.FIN2),
                           ("rst1", CloseKind.RST), ("rst2", CloseKind.RST)):
            for i, entry in enumerate(drained[name]):
                merged.append((entry.record_time, i, name, kind, entry.signature))
        merged.sort(key=lambda m: (m[0], m[2], m[1]))
        for t, _, _, kind, sig in merged:
            result, e = sct.ingest_close(sig, kind, t, prune_timeout=prune)
            if result in (CloseResult.REMOVED, CloseResult.DECREMENTED):
                vip = self.sim.vip_by_id(e.vip_id)
                vip.lifetime_stats.record_duration(max(t - e.syn_time, 0.0))
                if result is CloseResult.REMOVED:
                    self._entry_removed(e, t)

    def _entry_removed(self, e, now: float) -> None:
        if e.in_mct:
            self.sim.dataplane.mct.remove(e.sig)
            e.in_mct = False

    def _sweeps(self, now: float) -> None:
        sct = self.sim.sct
        for e in sct.sweep_syn2_timeouts(now):
            self._entry_removed(e, now)
        sct.sweep_onlyfin(now)

    # ------------------------------------------------------------------
    # Softpath inserts (trapped SYNs and FIB-full fallbacks)
    # ------------------------------------------------------------------

    def soft_insert_syn(self, sig: int, vip, captured_dip: int, bin_: int,
                        pkt_time: float, now: float, to_mct: bool) -> int:
        """Insert a software-handled SYN into the SCT (and MCT if migrating).

        Returns the DIP the delayed packet is forwarded to.
        """
        sim = self.sim
        mct_entry = sim.dataplane.mct.get(sig)
        dip = mct_entry.dip if mct_entry is not None else captured_dip
        result, e = sim.sct.ingest_syn1(
            sig, vip.vip_id, dip, bin_, pkt_time,
            self.cfg.delta_window, self.cfg.syn2_timeout_s,
        )
        vip.lifetime_stats.count_syn()
        if to_mct and not e.in_mct:
            outcome = sim.dataplane.mct.insert(sig, e.dip)
            if outcome is InsertOutcome.FULL:
                raise MctOverflow("MCT full while absorbing a trapped SYN")
            e.in_mct = True
            self.trapped_inserted += 1
            self.migrated_total += 1
        return e.dip

    def soft_apply(self, kind: str, sig: int, t_pkt: float) -> None:
        """Apply a learn the FIB could not absorb (table full)."""
        sct = self.sim.sct
        if kind == "syn2":
            e = sct.ingest_syn2(sig, t_pkt)
            if e is not None:
                closed = sct.try_close_pending(e, t_pkt)
                if closed is CloseResult.REMOVED:
                    self._entry_removed(e, t_pkt)
        else:
            ck = {"fin1": CloseKind.FIN1, "fin2": CloseKind.FIN2,
                  "rst1": CloseKind.RST, "rst2": CloseKind.RST}[kind]
            result, e = sct.ingest_close(sig, ck, t_pkt, prune_timeout=self.cfg.poll_interval_s)
            if result in (CloseResult.REMOVED, CloseResult.DECREMENTED):
                vip = self.sim.vip_by_id(e.vip_id)
                vip.lifetime_stats.record_duration(max(t_pkt - e.syn_time, 0.0))
                if result is CloseResult.REMOVED:
                    self._entry_removed(e, t_pkt)

    # ------------------------------------------------------------------
    # Dead-connection probing
    # ------------------------------------------------------------------

    def probe_dead_connections(self, now: float) -> None:
        sim = self.sim
        mct = sim.dataplane.mct
        sct = sim.sct
        self.counters["probes"] += 1
        # 1. read-and-clear keep-alive bits of eligible entries
        eligible = []
        for sig, entry in sorted(mct.table.items()):
            e = sct.get(sig)
            if e is None:
                continue
            if entry.probe_only:
                eligible.append(sig)
            else:
                threshold = self._suspect_threshold(e.vip_id)
                if threshold is not None and now - e.syn_time > threshold:
                    eligible.append(sig)
        for sig, was_alive in mct.probe_and_clear(eligible):
            e = sct.get(sig)
            entry = mct.get(sig)
            if e is None or entry is None:
                continue
            if entry.probe_only:
                mct.remove(sig)
                e.in_mct = False
                if was_alive:
                    e.state = SctState.ACTIVE
                    self.counters["suspects_released"] += 1
                else:
                    sct.remove(sig)
                    self.counters["dead_removed"] += 1
            elif not was_alive:
                mct.remove(sig)
                e.in_mct = False
                sct.remove(sig)
                self.counters["dead_removed"] += 1
        # 2. raise fresh suspects into the MCT for the next cycle
        stats = {v.vip_id: v.lifetime_stats for v in sim.vips}
        suspects = sct.find_suspects(stats, now, self.cfg.suspect_multiplier)
        inserted = 0
        for sig in suspects:
            e = sct.get(sig)
            outcome = mct.insert(sig, e.dip, probe_only=True)
            if outcome is InsertOutcome.FULL:
                self.counters["probe_mct_full_skips"] += 1
                break
            if outcome is InsertOutcome.INSERTED:
                e.in_mct = True
                e.state = SctState.TEST
                inserted += 1
        self.counters["suspects_inserted"] += inserted
        if inserted:
            sim.busy_for(inserted / self.cfg.mct_write_rate)

    def _suspect_threshold(self, vip_id: int) -> float | None:
        mean = self.sim.vip_by_id(vip_id).lifetime_stats.mean_lifetime()
        if mean is None or mean <= 0:
            return None
        return self.cfg.suspect_multiplier * mean

    # ------------------------------------------------------------------
    # Pool updates and bin migration
    # ------------------------------------------------------------------

    def enqueue_update(self, event: tuple) -> None:
        self.updates_pending.append(event)
        self.maybe_start_update()

    def maybe_start_update(self) -> None:
        if self.migration_active or not self.updates_pending:
            return
        event = self.updates_pending.pop(0)
        self._start_update(event)

    def _start_update(self, event: tuple) -> None:
        t, vip_index, kind, args, draw = event
        sim = self.sim
        now = sim.now
        vip = sim.vips[vip_index % len(sim.vips)]
        try:
            plan, extras = sim.build_plan(vip, kind, args, draw)
        except (PrismError, KeyError, ValueError):
            self.counters["updates_skipped"] += 1
            self.maybe_start_update()
            return
        if plan is None:
            self.counters["updates_skipped"] += 1
            self.maybe_start_update()
            return
        report = UpdateReport(vip_id=vip.vip_id, reason=kind, started_at=now)
        if extras.get("instant"):
            # hard failure: nothing a migration could preserve
            for b, dip in plan.new_assignment.items():
                vip.ecmp_table.bins[b] = dip
            vip.ecmp_table.generation += 1
            report.instant_rewrites = len(plan.new_assignment)
            if plan.pool_after is not None:
                vip.pool = plan.pool_after
            report.finished_at = now
            self.update_reports.append(report)
            self.counters["updates_applied"] += 1
            self.maybe_start_update()
            return
        if not plan.resolved:
            self._resolve_plan(vip, plan, now)
        if not plan.new_assignment:
            report.finished_at = now
            self.update_reports.append(report)
            self.counters["updates_applied"] += 1
            self.maybe_start_update()
            return
        self.migration_active = True
        runner = _UpdateRunner(self, vip, plan, report)
        runner.next_bin()

    def _resolve_plan(self, vip, plan: UpdatePlan, now: float) -> None:
        mean = vip.lifetime_stats.mean_lifetime() or self.sim.scenario.mean_lifetime()

        def chooser(candidates: list[int], n: int) -> list[int]:
            return select_bins(
                candidates, n, self.sim.policy, now, mean,
                self.sim.sct, vip.vip_id, self.sim.policy_rng,
            )

        if plan.donor_takes.get(-1) is not None:
            # bin-retirement plans choose among every bin of the table
            n = plan.donor_takes[-1]
            chosen = chooser(list(range(len(vip.ecmp_table.bins))), n)
            fresh = [d for d, _ in plan.receivers]
            plan.new_assignment = dict(zip(sorted(chosen), fresh))
            plan.donor_takes = {}
        else:
            plan.resolve(vip.ecmp_table, chooser)

    def apply_pool_update(self, vip, plan: UpdatePlan, reason: str = "direct") -> UpdateReport:
        """Synchronous entry point used by tests and the hot-bin harness."""
        now = self.sim.now
        if not plan.resolved:
            self._resolve_plan(vip, plan, now)
        report = UpdateReport(vip_id=vip.vip_id, reason=reason, started_at=now)
        if not plan.new_assignment:
            report.finished_at = now
            self.update_reports.append(report)
            return report
        self.migration_active = True
        runner = _UpdateRunner(self, vip, plan, report)
        runner.next_bin()
        return report

    def migrate_bin(self, vip, bin_: int, new_dip: int, t_limit: float | None = None,
                    delta_hint: float | None = None, on_done=None) -> None:
        """Migrate a single bin (Algorithm-1 style) and rewrite it."""
        self.migration_active = True
        report = UpdateReport(vip_id=vip.vip_id, reason="migrate_bin", started_at=self.sim.now)

        def done(rep: UpdateReport):
            self.update_reports.append(rep)
            self.migration_active = False
            if on_done is not None:
                on_done(rep)
            self.maybe_start_update()

        proc = BinMigration(self, vip, bin_, new_dip, t_limit, delta_hint,
                            lambda bin_report: self._single_done(report, bin_report, done))
        proc.start()

    def _single_done(self, report: UpdateReport, bin_report: BinMigrationReport, done) -> None:
        report.bins.append(bin_report)
        report.finished_at = self.sim.now
        done(report)

    def estimate_bin_rate(self, vip) -> float | None:
        rate = vip.lifetime_stats.arrival_rate()
        if rate is None:
            return None
        return rate / len(vip.ecmp_table.bins)


class _UpdateRunner:
    """Sequentially migrates every affected bin of one resolved plan."""

    def __init__(self, control: ControlPlane, vip, plan: UpdatePlan, report: UpdateReport):
        self.control = control
        self.vip = vip
        self.plan = plan
        self.report = report
        self.queue = sorted(plan.new_assignment.items())

    def next_bin(self) -> None:
        if not self.queue:
            self.finish()
            return
        bin_, new_dip = self.queue.pop(0)
        proc = BinMigration(
            self.control, self.vip, bin_, new_dip,
            self.control.cfg.t_limit_s, None, self._bin_done,
        )
        proc.start()

    def _bin_done(self, bin_report: BinMigrationReport) -> None:
        self.report.bins.append(bin_report)
        self.next_bin()

    def finish(self) -> None:
        control = self.control
        self.vip.ecmp_table.generation += 1
        if self.plan.pool_after is not None:
            self.vip.pool = self.plan.pool_after
        elif self.plan.reason is UpdateReason.TAKE_DOWN and self.plan.new_assignment:
            # bin retirement: pool follows the rewritten table
            self.vip.pool = DipPool({d: float(c) for d, c in self.vip.ecmp_table.counts().items()})
        self.report.finished_at = control.sim.now
        control.update_reports.append(self.report)
        control.counters["updates_applied"] += 1
        control.migration_active = False
        control.sim.on_update_complete(self.report)
        control.maybe_start_update()


class BinMigration:
    """The iterative per-bin migration process, driven by engine events."""

    def __init__(self, control: ControlPlane, vip, bin_: int, new_dip: int,
                 t_limit: float | None, delta_hint: float | None, on_done):
        self.control = control
        self.sim = control.sim
        self.vip = vip
        self.bin = bin_
        self.new_dip = new_dip
        self.t_limit = t_limit
        self.delta_hint = delta_hint
        self.on_done = on_done
        self.report = BinMigrationReport(vip_id=vip.vip_id, bin=bin_, new_dip=new_dip)
        self.round_index = 0
        self.last = False
        self.trap_trapped_before = 0
        self._pending: list[int] = []

    # -- helpers --------------------------------------------------------

    def _read_syn1(self) -> float:
        """Snapshot-drain FIB(SYN1), ingest now, return the read cost."""
        sim = self.sim
        fib = sim.dataplane.fibs["syn1"]
        total = fib.pending_read_size(sim.now, sim.synthetic_rng)
        entries = fib.drain()
        self.control._ingest_syn1(entries, sim.now)
        self.vip.lifetime_stats.sample_rate(sim.now)
        return poll_cost(total, self.control.cfg)

    def _bin_set(self) -> list[int]:
        sct = self.sim.sct
        out = []
        for sig in sct.bin_signatures(self.vip.vip_id, self.bin):
            e = sct.get(sig)
            if e is not None and not e.in_mct:
                out.append(sig)
        out.sort()
        return out

    def _delta_hat(self) -> float:
        if self.delta_hint is not None:
            return self.delta_hint
        est = self.control.estimate_bin_rate(self.vip)
        return est if est is not None else 0.0

    def _copy_to_mct(self, sigs: list[int]) -> int:
        sim = self.sim
        copied = 0
        for sig in sigs:
            e = sim.sct.get(sig)
            if e is None or e.in_mct:
                continue
            outcome = sim.dataplane.mct.insert(sig, e.dip)
            if outcome is InsertOutcome.FULL:
                sim.abort(MctOverflow(f"MCT full migrating bin {self.bin}"))
                return copied
            entry = sim.dataplane.mct.get(sig)
            entry.keep_alive = True  # insertion counts as activity
            e.in_mct = True
            copied += 1
        self.control.migrated_total += copied
        return copied

    # -- state machine ----------------------------------------------------

    def start(self) -> None:
        self.report.started_at = self.sim.now
        self.trap_trapped_before = self.sim.dataplane.counters["trapped_syns"]
        cost = self._read_syn1()
        self.sim.call_in(cost, self._round_decide)

    def _round_decide(self, now: float) -> None:
        sigs = self._bin_set()
        if not sigs and self.last:
            self._finish()
            return
        rho = self.control.cfg.mct_write_rate
        if not self.last:
            expected_next = (self._delta_hat() / rho) * len(sigs)
            out_of_time = False
            if self.t_limit is not None:
                elapsed = now - self.report.started_at
                t_i = len(sigs) / rho
                projected_next = (self._delta_hat() / rho) * t_i
                out_of_time = elapsed + t_i + projected_next > self.t_limit
            if expected_next < 1.0 or out_of_time or not sigs:
                self.last = True
                self.sim.dataplane.trap_on(
                    self.vip.vip_id, self.bin, self.vip.ecmp_table.generation
                )
        if sigs:
            self.round_index += 1
            duration = len(sigs) / rho
            self._pending = sigs
            self.sim.call_in(duration, self._copy_done)
        else:
            self._pending = []
            self._copy_done(now)

    def _copy_done(self, now: float) -> None:
        sigs = self._pending
        if sigs:
            copied = self._copy_to_mct(sigs)
            self.report.rounds.append(
                MigrationRound(self.round_index, copied, len(sigs) / self.control.cfg.mct_write_rate,
                               self.last)
            )
        cost = self._read_syn1()
        if self.last:
            self.sim.call_in(cost, self._catch_up)
        else:
            self.sim.call_in(cost, self._round_decide)

    def _catch_up(self, now: float) -> None:
        stragglers = self._bin_set()
        if stragglers:
            self.sim.call_in(
                len(stragglers) / self.control.cfg.mct_write_rate,
                lambda t: self._catch_up_done(stragglers),
            )
        else:
            self._finish()

    def _catch_up_done(self, sigs: list[int]) -> None:
        self.report.stragglers += self._copy_to_mct(sigs)
        self._finish()

    def _finish(self) -> None:
        sim = self.sim
        table = self.vip.ecmp_table
        if table.bins[self.bin] != self.new_dip:
            table.bins[self.bin] = self.new_dip
        sim.dataplane.trap_off(self.vip.vip_id, self.bin)
        self.report.trapped_syns = (
            sim.dataplane.counters["trapped_syns"] - self.trap_trapped_before
        )
        self.report.finished_at = sim.now
        sim.on_bin_migrated(self.vip, self.bin, self.report)
        self.on_done(self.report)
