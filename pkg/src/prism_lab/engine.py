"""Deterministic event-driven simulation core.

One ``Simulation`` owns the virtual clock, the emulated hardware tables,
the software control plane and the workload stream.  Everything advances
through a single binary heap of timestamped events, so identical seeds
replay byte-for-byte.

The per-connection-consistency oracle lives here too: it remembers the
first DIP every connection was forwarded to and flags any later packet of
that connection that reaches a different, still-healthy DIP.
"""

from __future__ import annotations

import heapq
import math
import random

import numpy as np

from .control import BinSelectionPolicy, ControlPlane
from .core import SimConfig, VipRegistry, ecmp_hash_packed
from .dataplane import Dataplane, Flag, Via
from .ecmp import (
    DipPool,
    build_table,
    expand_table,
    plan_add_dip,
    plan_replace_dip,
    plan_retire_bins,
    plan_reweight,
    plan_take_down,
)
from .errors import MctOverflow
from .sct import SctState, SctTable, VipLifetimeStats
from .workload import RTT, DATA_START_OFFSET, Conn, ConnStream, Scenario, generate_update_schedule, vip_address

# event codes, ordered roughly by frequency
EV_ARRIVAL = 0
EV_SYNACK = 1
EV_DATA = 2
EV_FIN1 = 3
EV_FIN2 = 4
EV_RST = 5
EV_RETRANS = 6
EV_SOFT_TRAP = 7
EV_SOFT_LEARN = 8
EV_POLL = 9
EV_PROBE = 10
EV_UPDATE = 11
EV_SAMPLE = 12
EV_CALL = 13
EV_END = 14


class PccOracle:
    """Ground-truth first-DIP map and violation log."""

    __slots__ = ("first", "dead_dips", "violations", "broken_keys", "log", "log_cap")

    def __init__(self, log_cap: int = 100):
        self.first: dict[int, int] = {}
        self.dead_dips: set[int] = set()
        self.violations = 0
        self.broken_keys: set[int] = set()
        self.log: list[tuple[float, int, int, int]] = []
        self.log_cap = log_cap

    def observe(self, key: int, dip: int, t: float) -> None:
        prev = self.first.get(key)
        if prev is None:
            self.first[key] = dip
        elif dip != prev and prev not in self.dead_dips:
            self.violations += 1
            self.broken_keys.add(key)
            if len(self.log) < self.log_cap:
                self.log.append((t, key, prev, dip))

    def close(self, key: int) -> None:
        self.first.pop(key, None)

    @property
    def active(self) -> int:
        return len(self.first)

    @property
    def broken(self) -> int:
        return len(self.broken_keys)


METRIC_COLUMNS = (
    "time_s",
    "active_connections",
    "mct_occupancy",
    "mct_fraction",
    "sct_size",
    "fib_depth_syn1",
    "fib_depth_syn2",
    "fib_depth_fin1",
    "fib_depth_fin2",
    "fib_depth_rst1",
    "fib_depth_rst2",
    "trapped_syns_cum",
    "migrated_cum",
    "pcc_violations_cum",
    "broken_by_collision_cum",
)


class VipSim:
    """Engine-side view of one VIP (registry state plus traffic handles)."""

    __slots__ = ("vip_id", "address", "ecmp_table", "pool", "lifetime_stats", "registry_state")

    def __init__(self, registry_state, table, pool, stats):
        self.registry_state = registry_state
        self.vip_id = registry_state.vip_id
        self.address = registry_state.address
        self.ecmp_table = table
        self.pool = pool
        self.lifetime_stats = stats
        registry_state.ecmp_table = table
        registry_state.pool = pool
        registry_state.lifetime_stats = stats


class Simulation:
    def __init__(self, scenario: Scenario, cfg: SimConfig | None = None):
        self.scenario = scenario
        cfg = cfg or SimConfig()
        cfg.rng_seed = scenario.seed
        self.cfg = cfg
        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        self.aborted: Exception | None = None
        self.software_busy_until = 0.0

        seeds = np.random.SeedSequence(scenario.seed).spawn(6)
        self.synthetic_rng = np.random.Generator(np.random.PCG64(seeds[0]))
        self.policy_rng = random.Random(int(seeds[1].generate_state(1)[0]))
        self._update_seed = int(seeds[2].generate_state(1)[0])
        self._stream_seed = int(seeds[3].generate_state(1)[0])
        self._table_seed = int(seeds[4].generate_state(1)[0])
        self._preseed_rng = np.random.Generator(np.random.PCG64(seeds[5]))

        self.policy = BinSelectionPolicy.parse(scenario.policy)
        self.registry = VipRegistry()
        self.dataplane = Dataplane(self.registry, cfg, fib_seed=self._table_seed)
        self.sct = SctTable()
        self.oracle = PccOracle()
        self.control = ControlPlane(self)
        self.counters = {
            "colliding_on_migrated": 0,
            "trap_delay_total": 0.0,
            "completeness_failures": 0,
            "fidelity_failures": 0,
        }
        self.metrics_rows: list[tuple] = []
        self.check_invariants = True

        self._next_dip = 1
        self.vips: list[VipSim] = []
        self._build_vips()

        self.hot_bin: int | None = None
        self._hot_migration_report = None
        if scenario.mode == "hot_bin":
            self._setup_hot_bin()

        self._conn_iter = iter(self._make_stream())
        self._schedule_initial()

    # ------------------------------------------------------------------
    # construction helpers
    # ------------------------------------------------------------------

    def alloc_dip(self) -> int:
        d = self._next_dip
        self._next_dip += 1
        return d

    def _table_len(self) -> int:
        sc = self.scenario
        if sc.table_len is not None:
            return sc.table_len
        want = max(sc.dips_per_vip, self.cfg.k_headroom * sc.dips_per_vip)
        return 1 << max(1, math.ceil(math.log2(want)))

    def _build_vips(self) -> None:
        sc = self.scenario
        length = self._table_len()
        for i in range(sc.vips):
            state = self.registry.register(vip_address(i))
            pool = DipPool.equal([self.alloc_dip() for _ in range(sc.dips_per_vip)])
            table = build_table(pool, length, vip_id=state.vip_id)
            stats = VipLifetimeStats(self.cfg.lifetime_ewma_alpha, self.cfg.arrival_ewma_alpha)
            self.vips.append(VipSim(state, table, pool, stats))

    def vip_by_id(self, vip_id: int) -> VipSim:
        return self.vips[vip_id]

    def _make_stream(self):
        sc = self.scenario
        if sc.mode == "hot_bin":
            return self._hot_stream()
        return ConnStream(sc, self.cfg.signature_hash_bits, self._stream_seed)

    # ------------------------------------------------------------------
    # hot-bin mode: one bin under a microscope, background aggregated
    # ------------------------------------------------------------------

    def _setup_hot_bin(self) -> None:
        sc = self.scenario
        vip = self.vips[0]
        length = len(vip.ecmp_table.bins)
        # arriving SYNs need real hash preimages for the considered bin; the
        # pre-seeded occupancy never traverses the dataplane, so synthetic
        # unique signatures (tagged with the bin) are sufficient for it
        self._hot_sigs, self.hot_bin = self._hot_signature_pool(
            vip.vip_id, length, 64 + int(4 * sc.bin_syn_rate * sc.duration)
        )
        dip = vip.ecmp_table.bins[self.hot_bin]
        ages = self._preseed_rng.uniform(0.0, 2.0, sc.hot_bin_occupancy)
        taken = set(self._hot_sigs)
        base = vip.vip_id << 48
        serial = 1
        for i in range(sc.hot_bin_occupancy):
            while base | serial in taken:
                serial += 1
            sig = base | serial
            serial += 1
            e = self.sct.insert_new(
                sig, vip.vip_id, dip, self.hot_bin, now=-float(ages[i]), syn2_deadline=1e9
            )
            e.state = SctState.ACTIVE
        self.dataplane.fibs["syn1"].synthetic_rate = sc.background_rate

    def _hot_signature_pool(self, vip_id: int, table_len: int, need: int):
        """Pre-draw unique signatures that hash into one chosen bin."""
        rng = np.random.Generator(np.random.PCG64(self._stream_seed ^ 0xA5A5A5A5))
        from .core import ecmp_hash_batch, signature_batch

        chunk = max(1 << 16, need * table_len // 8)
        found: list[int] = []
        hot = None
        idx0 = 0
        while len(found) < need:
            idx = np.arange(idx0, idx0 + chunk, dtype=np.int64)
            idx0 += chunk
            src_ip = 0x0B000000 + (idx // 60000)
            src_port = 1024 + (idx % 60000)
            sigs = signature_batch(
                src_ip.astype(np.uint64),
                np.full(len(idx), vip_address(0), dtype=np.uint64),
                src_port.astype(np.uint64),
                np.full(len(idx), 80, dtype=np.uint64),
                np.full(len(idx), 6, dtype=np.uint64),
                np.full(len(idx), vip_id, dtype=np.uint64),
                self.cfg.signature_hash_bits,
            )
            bins = ecmp_hash_batch(sigs, table_len)
            if hot is None:
                hot = int(bins[0])
            found.extend(sigs[bins == hot].tolist())
        # deterministic shuffle so pre-seeded and arriving signatures mix
        order = rng.permutation(len(found))
        found = [found[i] for i in order]
        return found, hot

    def _hot_stream(self):
        sc = self.scenario
        rng = np.random.Generator(np.random.PCG64(self._stream_seed))
        t = 0.0
        key = 1 << 40
        sigs = list(self._hot_sigs)
        while sigs:
            t += float(rng.exponential(1.0 / sc.bin_syn_rate))
            if t > sc.duration:
                return
            yield Conn(key, sigs.pop(), 0, t, 1e6, 0.0, False, False, 0.0)
            key += 1

    # ------------------------------------------------------------------
    # scheduling primitives
    # ------------------------------------------------------------------

    def schedule(self, when: float, code: int, a=None, b=None) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (when, self._seq, code, a, b))

    def call_in(self, delay: float, fn) -> None:
        self.schedule(self.now + delay, EV_CALL, fn)

    def busy_for(self, duration: float) -> None:
        self.software_busy_until = max(self.software_busy_until, self.now + duration)

    def abort(self, exc: Exception) -> None:
        self.aborted = exc

    def _schedule_initial(self) -> None:
        sc = self.scenario
        self.schedule(sc.duration, EV_END)
        self.schedule(self.cfg.poll_interval_s, EV_POLL)
        self.schedule(self.cfg.probe_interval, EV_PROBE)
        self.schedule(self.cfg.sample_interval_s, EV_SAMPLE)
        for event in generate_update_schedule(sc, self._update_seed):
            self.schedule(event[0], EV_UPDATE, event)
        first = next(self._conn_iter, None)
        if first is not None:
            self.schedule(first.t, EV_ARRIVAL, first)
        if sc.mode == "hot_bin":
            self.schedule(sc.migration_start, EV_CALL, self._start_hot_migration)
        self._sample(0.0)

    def _start_hot_migration(self, now: float) -> None:
        vip = self.vips[0]
        self.control.migrate_bin(
            vip,
            self.hot_bin,
            self.alloc_dip(),
            t_limit=self.cfg.t_limit_s,
            delta_hint=self.scenario.bin_syn_rate,
            on_done=self._hot_done,
        )

    def _hot_done(self, report) -> None:
        self._hot_migration_report = report

    # ------------------------------------------------------------------
    # main loop
    # ------------------------------------------------------------------

    def run(self):
        heap = self._heap
        while heap:
            t, _, code, a, b = heapq.heappop(heap)
            self.now = t
            if code == EV_END:
                break
            if self.aborted is not None:
                break
            if code == EV_ARRIVAL:
                self._on_arrival(a, t)
            elif code == EV_SYNACK:
                if not self.dataplane.learn_return(a.sig, Flag.SYN_ACK, t):
                    self.schedule(t + self.cfg.trap_soft_delay_s, EV_SOFT_LEARN, ("syn2", a.sig, t))
            elif code == EV_DATA:
                self._on_data(a, b, t)
            elif code == EV_FIN1:
                res = self.dataplane.forward_client(a.sig, self.vips[a.vip_index], Flag.FIN_CLIENT, t)
                self.oracle.observe(a.key, res.dip, t)
                if res.learn_fallback:
                    self.schedule(t + self.cfg.trap_soft_delay_s, EV_SOFT_LEARN, ("fin1", a.sig, t))
            elif code == EV_FIN2:
                if not self.dataplane.learn_return(a.sig, Flag.FIN_SERVER, t):
                    self.schedule(t + self.cfg.trap_soft_delay_s, EV_SOFT_LEARN, ("fin2", a.sig, t))
                self.oracle.close(a.key)
            elif code == EV_RST:
                res = self.dataplane.forward_client(a.sig, self.vips[a.vip_index], Flag.RST_CLIENT, t)
                self.oracle.observe(a.key, res.dip, t)
                if res.learn_fallback:
                    self.schedule(t + self.cfg.trap_soft_delay_s, EV_SOFT_LEARN, ("rst1", a.sig, t))
                self.oracle.close(a.key)
            elif code == EV_RETRANS:
                self._handle_syn(a, t)
            elif code == EV_SOFT_TRAP:
                self._on_soft_trap(a, t)
            elif code == EV_SOFT_LEARN:
                kind, sig, t_pkt = a
                self.control.soft_apply(kind, sig, t_pkt)
            elif code == EV_POLL:
                self._on_poll(t)
            elif code == EV_PROBE:
                self._on_probe(t)
            elif code == EV_UPDATE:
                self.control.enqueue_update(a)
            elif code == EV_SAMPLE:
                self._sample(t)
                nxt = t + self.cfg.sample_interval_s
                if nxt < self.scenario.duration:
                    self.schedule(nxt, EV_SAMPLE)
            elif code == EV_CALL:
                a(t)
        self.now = self.scenario.duration
        self._sample(self.now)
        if self.aborted is not None:
            raise self.aborted
        return self

    # ------------------------------------------------------------------
    # packet handlers
    # ------------------------------------------------------------------

    def _on_arrival(self, conn: Conn, t: float) -> None:
        self._handle_syn(conn, t)
        end = t + conn.lifetime
        if conn.data_rate > 0:
            first = t + DATA_START_OFFSET
            if first < end:
                self.schedule(first, EV_DATA, conn, end)
        if not conn.dead:
            if conn.rst:
                self.schedule(end, EV_RST, conn)
            else:
                self.schedule(end, EV_FIN1, conn)
                self.schedule(end + RTT, EV_FIN2, conn)
        if conn.retrans_gap > 0.0 and conn.retrans_gap < conn.lifetime:
            self.schedule(t + conn.retrans_gap, EV_RETRANS, conn)
        nxt = next(self._conn_iter, None)
        if nxt is not None:
            self.schedule(nxt.t, EV_ARRIVAL, nxt)

    def _handle_syn(self, conn: Conn, t: float) -> None:
        vip = self.vips[conn.vip_index]
        res = self.dataplane.forward_client(conn.sig, vip, Flag.SYN, t)
        if res.via is Via.TRAPPED:
            self.schedule(t + self.cfg.trap_soft_delay_s, EV_SOFT_TRAP, (conn, res.dip, res.bin, t))
            return
        self.oracle.observe(conn.key, res.dip, t)
        if res.learn_fallback:
            bin_ = res.bin if res.bin is not None else ecmp_hash_packed(
                conn.sig, len(vip.ecmp_table.bins)
            )
            self.schedule(
                t + self.cfg.trap_soft_delay_s, EV_SOFT_TRAP, (conn, res.dip, bin_, t, False)
            )
        self.schedule(t + RTT, EV_SYNACK, conn)

    def _on_soft_trap(self, payload, now: float) -> None:
        conn, captured_dip, bin_, t_pkt = payload[:4]
        to_mct = payload[4] if len(payload) > 4 else True
        vip = self.vips[conn.vip_index]
        dip = self.control.soft_insert_syn(
            conn.sig, vip, captured_dip, bin_, t_pkt, now, to_mct=to_mct
        )
        if to_mct:
            # the trapped packet itself is forwarded after the software delay
            self.oracle.observe(conn.key, dip, now)
            self.counters["trap_delay_total"] += now - t_pkt
            self.schedule(now + RTT, EV_SYNACK, conn)

    def _on_data(self, conn: Conn, end: float, t: float) -> None:
        vip = self.vips[conn.vip_index]
        res = self.dataplane.forward_client(conn.sig, vip, Flag.DATA, t)
        self.oracle.observe(conn.key, res.dip, t)
        nxt = t + 1.0 / conn.data_rate
        if nxt < end:
            self.schedule(nxt, EV_DATA, conn, end)

    # ------------------------------------------------------------------
    # control ticks
    # ------------------------------------------------------------------

    def _on_poll(self, t: float) -> None:
        if self.control.migration_active:
            self.control.counters["polls_skipped"] += 1
        else:
            cost = self.control.poll_fibs(t)
            self.busy_for(cost)
        self.schedule(t + self.cfg.poll_interval_s, EV_POLL)

    def _on_probe(self, t: float) -> None:
        if self.control.migration_active:
            self.control.counters["probes_skipped"] += 1
        else:
            self.control.probe_dead_connections(t)
        self.schedule(t + self.cfg.probe_interval, EV_PROBE)

    # ------------------------------------------------------------------
    # pool-update planning (kind dispatch)
    # ------------------------------------------------------------------

    def build_plan(self, vip: VipSim, kind: str, args: tuple, draw: int):
        rng = random.Random(draw)
        extras: dict = {}
        if kind in ("replace", "take_down", "hard_fail"):
            dips = vip.pool.dips
            if len(dips) < 2:
                return None, extras
            dip = args[0] if args else dips[rng.randrange(len(dips))]
            if kind == "replace":
                return plan_replace_dip(vip.ecmp_table, vip.pool, dip, self.alloc_dip()), extras
            plan = plan_take_down(vip.ecmp_table, vip.pool, dip)
            if kind == "hard_fail":
                extras["instant"] = True
                self.oracle.dead_dips.add(dip)
                self.control.counters["hard_fails"] += 1
            return plan, extras
        if kind == "add_dip":
            weight = args[0] if args else 1.0 / (len(vip.pool) + 1)
            if len(vip.pool) + 1 > len(vip.ecmp_table.bins):
                self._expand_now(vip)
            return plan_add_dip(vip.ecmp_table, vip.pool, self.alloc_dip(), weight), extras
        if kind == "reweight":
            wrng = np.random.Generator(np.random.PCG64(draw))
            weights = {d: float(w) for d, w in zip(vip.pool.dips, wrng.uniform(0.5, 2.0, len(vip.pool)))}
            return plan_reweight(vip.ecmp_table, vip.pool, weights), extras
        if kind == "expand":
            return self._expand_now(vip), extras
        if kind == "retire_bins":
            n = int(args[0]) if args else 1
            fresh = [self.alloc_dip() for _ in range(n)]
            return plan_retire_bins(vip.ecmp_table, vip.pool, n, fresh), extras
        raise ValueError(f"unknown update kind {kind!r}")

    def _expand_now(self, vip: VipSim):
        """Swap in the doubled table (mapping-preserving) and reindex the SCT."""
        doubled, rebalance = expand_table(vip.ecmp_table, vip.pool, self.cfg.max_table_len)
        vip.ecmp_table = doubled
        vip.registry_state.ecmp_table = doubled
        new_len = len(doubled.bins)
        self.sct.reindex_vip(vip.vip_id, lambda sig: ecmp_hash_packed(sig, new_len))
        self.control.counters["expansions"] += 1
        return rebalance

    # ------------------------------------------------------------------
    # invariant hooks
    # ------------------------------------------------------------------

    def on_bin_migrated(self, vip: VipSim, bin_: int, report) -> None:
        if not self.check_invariants:
            return
        for sig in self.sct.bin_signatures(vip.vip_id, bin_):
            e = self.sct.get(sig)
            if e is not None and not e.in_mct:
                self.counters["completeness_failures"] += 1

    def on_update_complete(self, report) -> None:
        if not self.check_invariants:
            return
        vip = self.vip_by_id(report.vip_id)
        counts = vip.ecmp_table.counts()
        length = len(vip.ecmp_table.bins)
        for d, w in vip.pool.weights.items():
            if abs(counts.get(d, 0) - w * length) > 1.0 + 1e-9:
                self.counters["fidelity_failures"] += 1

    # ------------------------------------------------------------------
    # metrics
    # ------------------------------------------------------------------

    def _sample(self, t: float) -> None:
        active = self.oracle.active
        mct = self.dataplane.mct.occupancy
        depths = self.dataplane.fib_depths()
        self.metrics_rows.append(
            (
                t,
                active,
                mct,
                (mct / active) if active else 0.0,
                len(self.sct),
                depths["syn1"],
                depths["syn2"],
                depths["fin1"],
                depths["fin2"],
                depths["rst1"],
                depths["rst2"],
                self.dataplane.counters["trapped_syns"],
                self.control.migrated_total,
                self.oracle.violations,
                self.oracle.broken,
            )
        )

    # ------------------------------------------------------------------
    # results
    # ------------------------------------------------------------------

    def hot_migration_report(self):
        return self._hot_migration_report
