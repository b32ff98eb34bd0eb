"""Command-line interface.

Subcommands:

* ``simulate <scenario> [--out DIR] [--seed N] [--policy NAME]`` -- run one
  scenario, write metrics.csv + summary.txt (+ figures).
* ``sweep <scenario> --param NAME --values v1,v2,...`` -- repeated runs over
  one parameter, aggregated CSV + figure.
* ``analyze birthday|rounds|migration`` -- closed-form calculators.
* ``selftest`` -- quick invariant suite over randomized inputs.

The PRISM_LAB_SEED environment variable overrides every other seed source.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import analysis
from .errors import ConfigError, PrismError
from .harness import SWEEP_PARAMS, run_scenario, sweep
from .scenario_io import parse_scenario_file


def _seed_override(args_seed: int | None) -> int | None:
    env = os.environ.get("PRISM_LAB_SEED")
    if env is not None:
        return int(env)
    return args_seed


def cmd_simulate(args) -> int:
    scenario, cfg = parse_scenario_file(args.scenario)
    seed = _seed_override(args.seed)
    if seed is not None:
        scenario.seed = seed
        cfg.rng_seed = seed
    if args.policy:
        scenario.policy = args.policy
    result = run_scenario(scenario, cfg, out_dir=args.out, figures=not args.no_figures)
    sim = result.sim
    print(f"virtual duration: {scenario.duration:.3f} s  seed: {scenario.seed}")
    print(f"active at end: {sim.oracle.active}  sct: {len(sim.sct)}  "
          f"mct: {sim.dataplane.mct.occupancy}")
    print(f"pcc violations: {sim.oracle.violations}  broken: {sim.oracle.broken}  "
          f"trapped syns: {sim.dataplane.counters['trapped_syns']}")
    print(f"updates applied: {sim.control.counters['updates_applied']}  "
          f"migrated: {sim.control.migrated_total}")
    if result.csv_path:
        print(f"wrote {result.csv_path} and {result.summary_path}")
    if result.failure:
        print(f"FAILURE: {result.failure}", file=sys.stderr)
        return 2 if result.failure.startswith("mct_overflow") else 3
    return 0


def cmd_sweep(args) -> int:
    scenario, cfg = parse_scenario_file(args.scenario)
    seed = _seed_override(args.seed)
    if seed is not None:
        scenario.seed = seed
    values: list = []
    for chunk in args.values.split(","):
        chunk = chunk.strip()
        if args.param == "policy":
            values.append(chunk)
        else:
            values.append(float(chunk) if "." in chunk or "e" in chunk else int(chunk))
    rows = sweep(scenario, cfg, args.param, values, seeds=args.seeds, out_dir=args.out)
    print(f"{'value':>14} {'max_rounds':>10} {'mean_c2':>10} {'mean_migr':>10} "
          f"{'steady_mct%':>12} {'violations':>10}")
    for r in rows:
        print(f"{r.value:>14} {r.max_rounds:>10} {r.mean_c2:>10.2f} {r.mean_migrated:>10.2f} "
              f"{100 * r.steady_mct_fraction:>12.4f} {r.violations:>10}")
    if args.out and not args.no_figures:
        from .figures import render_sweep_figure

        render_sweep_figure(rows, args.out)
    return 1 if any(r.failures for r in rows) else 0


def cmd_analyze(args) -> int:
    if args.formula == "birthday":
        d = float(2 ** args.bits) if args.space is None else args.space
        p = analysis.birthday_collision_prob(args.n, d, exact=args.exact)
        print(f"p(n={args.n:g}, d={d:g}) = {p:.6g}")
        print(f"windows between collisions = {analysis.time_between_collisions(args.n, d):.4g}")
    elif args.formula == "rounds":
        rounds, times, counts = analysis.expected_rounds_and_times(args.c1, args.rho, args.delta_rate)
        print(f"expected copy rounds: {rounds}")
        for i, t in enumerate(times, start=1):
            print(f"  round {i}: copies ~{counts[i - 1]:.4g}, duration {t * 1e3:.4g} ms")
        print(f"  expected leftovers after last round: {counts[-1]:.4g}")
    elif args.formula == "migration":
        p = analysis.migration_prob(args.m, args.dips)
        print(f"p_migrated(m={args.m:g}, s={args.dips}) = {p:.6g}")
        if args.n is not None:
            hours = analysis.expected_broken_connection_hours(
                args.n, float(2 ** args.bits), args.m, args.dips
            )
            print(f"expected hours to a broken connection = {hours:.4g}")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    failures = run_selftest(verbose=True)
    return 0 if failures == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prism-lab", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario file")
    p.add_argument("scenario")
    p.add_argument("--out", default=None, help="output directory (metrics.csv, summary.txt)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--policy", default=None)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run a scenario across parameter values")
    p.add_argument("scenario")
    p.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", type=int, default=1, help="seeds per value")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="closed-form calculators")
    fsub = p.add_subparsers(dest="formula", required=True)
    b = fsub.add_parser("birthday")
    b.add_argument("--n", type=float, required=True, help="arrivals per window")
    b.add_argument("--bits", type=int, default=48, help="signature hash bits")
    b.add_argument("--space", type=float, default=None, help="explicit value space size")
    b.add_argument("--exact", action="store_true")
    r = fsub.add_parser("rounds")
    r.add_argument("--c1", type=float, required=True, help="initial bin occupancy")
    r.add_argument("--rho", type=float, default=25_000.0, help="copy rate per second")
    r.add_argument("--delta-rate", type=float, required=True, help="bin SYN arrival rate per second")
    m = fsub.add_parser("migration")
    m.add_argument("--m", type=float, required=True, help="updates during a lifetime")
    m.add_argument("--dips", type=int, required=True)
    m.add_argument("--n", type=float, default=None, help="also report hours, given arrivals per window")
    m.add_argument("--bits", type=int, default=48)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("selftest", help="run the quick invariant suite")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    except PrismError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
