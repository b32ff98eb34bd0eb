"""Scenario runner: drives a simulation and writes its structured outputs.

A run produces two canonical files, both written atomically and
byte-reproducible for a given seed and config:

* ``metrics.csv`` -- the time series sampled every 100 virtual ms.
* ``summary.txt`` -- ``section:``-headed key/value report: config echo,
  totals, and one line per applied pool update.

Figures (optional) render next to them under ``figures/``.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .core import SimConfig
from .engine import METRIC_COLUMNS, Simulation
from .errors import MctOverflow
from .scenario_io import scenario_to_text
from .workload import Scenario


@dataclass
class RunResult:
    scenario: Scenario
    cfg: SimConfig
    sim: Simulation
    csv_path: Path | None = None
    summary_path: Path | None = None
    failure: str | None = None

    @property
    def ok(self) -> bool:
        return self.failure is None

    def steady_mct_fraction(self, start_frac: float = 0.25) -> float:
        rows = [r for r in self.sim.metrics_rows if r[0] >= start_frac * self.scenario.duration]
        if not rows:
            return 0.0
        return sum(r[3] for r in rows) / len(rows)

    def mct_occupancy_integral(self) -> float:
        rows = self.sim.metrics_rows
        total = 0.0
        for prev, cur in zip(rows, rows[1:]):
            total += prev[2] * (cur[0] - prev[0])
        return total

    def migrated_per_update(self, t_min: float = 0.0) -> list[int]:
        return [
            r.migrated
            for r in self.sim.control.update_reports
            if r.started_at >= t_min and r.reason != "migrate_bin"
        ]


def _atomic_write(path: Path, data: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def metrics_csv_text(sim: Simulation) -> str:
    lines = [",".join(METRIC_COLUMNS)]
    for row in sim.metrics_rows:
        formatted = [f"{row[0]:.3f}"]
        formatted.extend(str(v) for v in row[1:3])
        formatted.append(f"{row[3]:.8f}")
        formatted.extend(str(v) for v in row[4:])
        lines.append(",".join(formatted))
    return "\n".join(lines) + "\n"


def summary_text(result: RunResult) -> str:
    sim = result.sim
    sc = result.scenario
    out: list[str] = []

    out.append("section: config")
    for line in scenario_to_text(sc, result.cfg).strip().splitlines():
        out.append(line)
    out.append("")

    out.append("section: totals")
    totals = {
        "status": result.failure or "ok",
        "duration_s": f"{sc.duration:.6f}",
        "active_connections_end": sim.oracle.active,
        "sct_size_end": len(sim.sct),
        "mct_occupancy_end": sim.dataplane.mct.occupancy,
        "pcc_violations": sim.oracle.violations,
        "broken_by_collision": sim.oracle.broken,
        "trapped_syns": sim.dataplane.counters["trapped_syns"],
        "trap_delay_total_s": f"{sim.counters['trap_delay_total']:.6f}",
        "migrated_total": sim.control.migrated_total,
        "completeness_failures": sim.counters["completeness_failures"],
        "fidelity_failures": sim.counters["fidelity_failures"],
        "unknown_vip_drops": sim.dataplane.counters["unknown_vip_drops"],
        "fib_full_traps": sim.dataplane.counters["fib_full_traps"],
        "colliding_on_migrated": sim.counters["colliding_on_migrated"],
    }
    for name in ("new", "retransmit", "new_colliding", "syn2_unknown", "syn2_timeouts",
                 "orphan_fins", "onlyfin_pruned", "closes"):
        totals[f"sct_{name}"] = sim.sct.counters[name]
    for name, value in sorted(sim.control.counters.items()):
        totals[name] = value
    for key, value in totals.items():
        out.append(f"{key} = {value}")
    out.append("")

    out.append("section: notes")
    out.append("mct_fraction_definition = mct_occupancy / active_connections")
    out.append("steady_window_start_frac = 0.25")
    out.append(f"steady_mct_fraction_mean = {result.steady_mct_fraction():.8f}")
    out.append("")

    out.append("section: updates")
    for i, rep in enumerate(sim.control.update_reports, start=1):
        out.append(
            f"update {i}: vip={rep.vip_id} kind={rep.reason}"
            f" t_start_ms={rep.started_at * 1e3:.3f}"
            f" duration_ms={rep.duration * 1e3:.3f}"
            f" bins={len(rep.bins)} migrated={rep.migrated}"
            f" trapped={rep.trapped} max_rounds={rep.max_rounds}"
            f" instant={rep.instant_rewrites}"
        )
    out.append("")

    hot = sim.hot_migration_report()
    if hot is not None and hot.bins:
        out.append("section: hot_bin_migration")
        rep = hot.bins[0]
        out.append(f"bin = {rep.bin}")
        out.append(f"duration_ms = {rep.duration * 1e3:.4f}")
        out.append(f"rounds = {len(rep.rounds)}")
        for r in rep.rounds:
            out.append(
                f"round {r.index}: copied={r.copied}"
                f" duration_ms={r.duration * 1e3:.4f} trapped_round={r.trapped_round}"
            )
        out.append(f"stragglers = {rep.stragglers}")
        out.append(f"trapped_syns = {rep.trapped_syns}")
        out.append("")
    return "\n".join(out)


def parse_summary(text: str) -> dict[str, dict | list]:
    """Summary parser used by tests and the sweep aggregator."""
    sections: dict[str, dict | list] = {}
    current: str | None = None
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("section: "):
            current = line[len("section: "):]
            sections[current] = [] if current in ("updates",) else {}
            continue
        if current is None:
            continue
        bucket = sections[current]
        if isinstance(bucket, list):
            bucket.append(line)
        elif " = " in line:
            key, value = line.split(" = ", 1)
            bucket[key] = value
        else:
            bucket[line] = ""
    return sections


def run_scenario(
    scenario: Scenario,
    cfg: SimConfig | None = None,
    out_dir: str | Path | None = None,
    figures: bool = False,
) -> RunResult:
    sim = Simulation(scenario, cfg)
    failure = None
    try:
        sim.run()
    except MctOverflow as exc:
        failure = f"mct_overflow: {exc}"
    if failure is None and (
        sim.counters["completeness_failures"] or sim.counters["fidelity_failures"]
    ):
        failure = "invariant_failure"
    result = RunResult(scenario=scenario, cfg=sim.cfg, sim=sim, failure=failure)
    if out_dir is not None:
        out_dir = Path(out_dir)
        result.csv_path = out_dir / "metrics.csv"
        result.summary_path = out_dir / "summary.txt"
        _atomic_write(result.csv_path, metrics_csv_text(sim))
        _atomic_write(result.summary_path, summary_text(result))
        if figures:
            from .figures import render_run_figures

            render_run_figures(sim.metrics_rows, out_dir / "figures")
    return result


SWEEP_PARAMS = ("mct_write_rate", "update_rate", "lifetime_mean", "signature_hash_bits", "policy")


def _apply_param(scenario: Scenario, cfg: SimConfig, param: str, value) -> None:
    if param == "mct_write_rate":
        cfg.mct_write_rate = float(value)
    elif param == "update_rate":
        scenario.update_rate = float(value)
    elif param == "signature_hash_bits":
        cfg.signature_hash_bits = int(value)
    elif param == "policy":
        scenario.policy = str(value)
    elif param == "lifetime_mean":
        kind, *params = scenario.lifetime_dist
        target = float(value)
        if kind == "fixed":
            scenario.lifetime_dist = ("fixed", target)
        elif kind == "uniform":
            a, b = params
            mean = (a + b) / 2.0
            scale = target / mean
            scenario.lifetime_dist = ("uniform", a * scale, b * scale)
        else:
            mu, sigma = params
            import math

            scenario.lifetime_dist = (
                "lognormal", math.log(target) - sigma * sigma / 2.0, sigma
            )
    else:
        raise ValueError(f"unknown sweep parameter {param!r}")


@dataclass
class SweepRow:
    param: str
    value: str
    seeds: int
    max_rounds: int
    mean_c2: float
    mean_migrated: float
    steady_mct_fraction: float
    mct_integral: float
    violations: int
    broken: int
    failures: int
    c2_values: list[int] = field(default_factory=list)


def sweep(
    base_scenario: Scenario,
    base_cfg: SimConfig,
    param: str,
    values: list,
    seeds: int = 1,
    out_dir: str | Path | None = None,
) -> list[SweepRow]:
    if param not in SWEEP_PARAMS:
        raise ValueError(f"sweep parameter must be one of {SWEEP_PARAMS}")
    rows: list[SweepRow] = []
    for value in values:
        max_rounds = 0
        c2s: list[int] = []
        migrated: list[int] = []
        fractions: list[float] = []
        integrals: list[float] = []
        violations = broken = failures = 0
        for k in range(seeds):
            import copy

            scenario = copy.deepcopy(base_scenario)
            cfg = copy.deepcopy(base_cfg)
            scenario.seed = base_scenario.seed + k
            _apply_param(scenario, cfg, param, value)
            result = run_scenario(scenario, cfg)
            sim = result.sim
            if not result.ok:
                failures += 1
            reports = sim.control.update_reports
            for rep in reports:
                for b in rep.bins:
                    max_rounds = max(max_rounds, len(b.rounds))
                    if len(b.rounds) >= 2:
                        c2s.append(b.rounds[1].copied)
                    else:
                        c2s.append(0)
            migrated.extend(r.migrated for r in reports)
            fractions.append(result.steady_mct_fraction())
            integrals.append(result.mct_occupancy_integral())
            violations += sim.oracle.violations
            broken += sim.oracle.broken
        rows.append(
            SweepRow(
                param=param,
                value=str(value),
                seeds=seeds,
                max_rounds=max_rounds,
                mean_c2=(sum(c2s) / len(c2s)) if c2s else 0.0,
                mean_migrated=(sum(migrated) / len(migrated)) if migrated else 0.0,
                steady_mct_fraction=(sum(fractions) / len(fractions)) if fractions else 0.0,
                mct_integral=(sum(integrals) / len(integrals)) if integrals else 0.0,
                violations=violations,
                broken=broken,
                failures=failures,
                c2_values=c2s,
            )
        )
    if out_dir is not None:
        out_dir = Path(out_dir)
        header = (
            "param,value,seeds,max_rounds,mean_c2,mean_migrated,"
            "steady_mct_fraction,mct_integral,violations,broken,failures"
        )
        lines = [header]
        for r in rows:
            lines.append(
                f"{r.param},{r.value},{r.seeds},{r.max_rounds},{r.mean_c2:.6f},"
                f"{r.mean_migrated:.6f},{r.steady_mct_fraction:.8f},{r.mct_integral:.6f},"
                f"{r.violations},{r.broken},{r.failures}"
            )
        _atomic_write(out_dir / "sweep.csv", "\n".join(lines) + "\n")
    return rows
