"""Quick self-contained invariant suite behind ``prism-lab selftest``.

Covers the properties that make the simulator trustworthy in a few
seconds: hash determinism and batch equivalence, cuckoo-vs-dict oracle
agreement, ECMP doubling invariance and weight fidelity, analysis
monotonicity, and a short end-to-end run that must stay violation-free.
"""

from __future__ import annotations

import random

import numpy as np

from . import analysis
from .core import (
    ConnectionKey,
    SimConfig,
    Signature,
    VipRegistry,
    compute_signature,
    ecmp_hash,
    ecmp_hash_batch,
    signature_batch,
)
from .cuckoo import MISS, CuckooTable, InsertOutcome
from .ecmp import DipPool, build_table, plan_reweight, expand_table
from .harness import run_scenario
from .workload import Scenario


def _check(name: str, ok: bool, detail: str = "", verbose: bool = True) -> int:
    if verbose:
        print(f"  [{'pass' if ok else 'FAIL'}] {name}" + (f" ({detail})" if detail and not ok else ""))
    return 0 if ok else 1


def run_selftest(verbose: bool = True, seed: int = 2024) -> int:
    failures = 0
    rng = random.Random(seed)
    nrng = np.random.Generator(np.random.PCG64(seed))

    # hashing: determinism, vip id placement, batch equivalence
    registry = VipRegistry()
    cfg = SimConfig()
    vip = registry.register(0x0A0A0A0A)
    key = ConnectionKey(0xC0A80101, 0x0A0A0A0A, 12345, 443)
    s1 = compute_signature(key, registry, cfg)
    s2 = compute_signature(key, registry, cfg)
    failures += _check("signature determinism", s1 == s2, verbose=verbose)
    failures += _check("signature vip id", s1.vip_id == vip.vip_id, verbose=verbose)

    n = 4096
    src_ip = nrng.integers(0, 2**32, n, dtype=np.uint64)
    src_port = nrng.integers(1, 2**16, n, dtype=np.uint64)
    sigs = signature_batch(
        src_ip, np.full(n, 0x0A0A0A0A, np.uint64), src_port,
        np.full(n, 443, np.uint64), np.full(n, 6, np.uint64),
        np.zeros(n, np.uint64), 48,
    )
    ok = True
    for i in rng.sample(range(n), 64):
        k = ConnectionKey(int(src_ip[i]), 0x0A0A0A0A, int(src_port[i]), 443)
        if compute_signature(k, registry, cfg).packed() != int(sigs[i]):
            ok = False
            break
    failures += _check("batch hash equals scalar hash", ok, verbose=verbose)
    bins = ecmp_hash_batch(sigs, 128)
    ok = all(
        ecmp_hash(Signature.unpack(int(sigs[i])), 128) == int(bins[i])
        for i in rng.sample(range(n), 64)
    )
    failures += _check("batch bin choice equals scalar", ok, verbose=verbose)

    # cuckoo vs reference dict over random operations
    table = CuckooTable(capacity=256, seed=seed)
    model: dict[int, int] = {}
    ok = True
    for _ in range(20_000):
        op = rng.random()
        k = rng.randrange(500)
        if op < 0.5:
            outcome = table.insert(k, k * 3)
            if outcome is InsertOutcome.INSERTED:
                model[k] = k * 3
            elif outcome is InsertOutcome.ALREADY_PRESENT and k not in model:
                ok = False
        elif op < 0.8:
            got = table.lookup(k)
            want = model.get(k, MISS)
            if got is not want and got != want:
                ok = False
        else:
            removed = table.remove(k)
            if removed != (k in model):
                ok = False
            model.pop(k, None)
    table.check_invariants()
    ok = ok and sorted(model.items()) == sorted((k, v) for k, v in table.items())
    failures += _check("cuckoo table matches dict oracle", ok, verbose=verbose)

    # ECMP doubling invariance and weight fidelity
    pool = DipPool.equal([1, 2, 3, 4, 5])
    table_e = build_table(pool, 64)
    doubled, plan = expand_table(table_e, pool)
    ok = True
    for _ in range(2000):
        sig = Signature(0, rng.getrandbits(48))
        b_old = ecmp_hash(sig, 64)
        b_new = ecmp_hash(sig, 128)
        if doubled.bins[b_new] != table_e.bins[b_old]:
            ok = False
            break
    failures += _check("doubling preserves every mapping", ok, verbose=verbose)

    weights = {d: rng.uniform(0.5, 2.0) for d in pool.dips}
    plan2 = plan_reweight(table_e, pool, weights)

    def chooser(cands, m):
        return cands[:m]

    plan2.resolve(table_e, chooser)
    plan2.apply(table_e)
    total = sum(weights.values())
    counts = table_e.counts()
    ok = all(abs(counts.get(d, 0) - w / total * 64) <= 1.0 + 1e-9 for d, w in weights.items())
    failures += _check("reweight lands within one bin of ideal", ok, verbose=verbose)

    # analysis monotonicity
    ps = [analysis.birthday_collision_prob(x, 1 << 20) for x in (10, 100, 1000, 5000)]
    ok = all(a <= b for a, b in zip(ps, ps[1:]))
    ps_d = [analysis.birthday_collision_prob(1000, d) for d in (1 << 16, 1 << 20, 1 << 24)]
    ok = ok and all(a >= b for a, b in zip(ps_d, ps_d[1:]))
    failures += _check("birthday probability monotone", ok, verbose=verbose)

    # short end-to-end run: no violations, trap-sound, deterministic
    scenario = Scenario(
        vips=3, dips_per_vip=8, arrival_rate=800.0, duration=6.0, seed=seed,
        lifetime_dist=("uniform", 0.5, 3.5), data_packet_rate=2.0, update_rate=2.0,
        update_kind="replace",
    )
    res1 = run_scenario(scenario, SimConfig())
    res2 = run_scenario(scenario, SimConfig())
    failures += _check("end-to-end run clean", res1.ok and res1.sim.oracle.violations == 0,
                       detail=f"violations={res1.sim.oracle.violations}", verbose=verbose)
    failures += _check(
        "replay identical", res1.sim.metrics_rows == res2.sim.metrics_rows, verbose=verbose
    )
    if verbose:
        print("selftest:", "ok" if failures == 0 else f"{failures} failure(s)")
    return failures
