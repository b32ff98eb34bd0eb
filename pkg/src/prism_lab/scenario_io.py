"""Scenario file parsing: flat ``key = value`` lines with ``#`` comments.

Keys are the Scenario and SimConfig field names in snake case.  Repeated
``update = <t_ms> <vip> <kind> [args...]`` lines append to the explicit
update schedule.  Values keep each field's conventional unit (see
``SimConfig``); ``lifetime_dist`` takes the form ``uniform A B``,
``lognormal MU SIGMA`` or ``fixed V``.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .core import SimConfig
from .errors import ConfigError
from .workload import UPDATE_KINDS, Scenario

_SCENARIO_FIELDS = {f.name: f for f in dataclasses.fields(Scenario)}
_CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(SimConfig)}

_INT_FIELDS = {
    "vips", "dips_per_vip", "seed", "table_len", "hot_bin_occupancy",
    "rng_seed", "signature_hash_bits", "fib_capacity", "mct_capacity",
    "k_headroom", "max_table_len",
}
_STR_FIELDS = {"update_kind", "policy", "mode"}


def _parse_number(raw: str, as_int: bool, key: str, line_no: int):
    try:
        return int(raw) if as_int else float(raw)
    except ValueError:
        kind = "integer" if as_int else "number"
        raise ConfigError(f"{key!r} expects a {kind}, got {raw!r}", line_no) from None


def parse_scenario_text(text: str) -> tuple[Scenario, SimConfig]:
    scenario_kw: dict = {}
    config_kw: dict = {}
    updates: list[tuple] = []
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line_no)
        key, raw = (part.strip() for part in line.split("=", 1))
        if not raw:
            raise ConfigError(f"{key!r} has no value", line_no)
        if key == "update":
            updates.append(_parse_update(raw, line_no))
        elif key == "lifetime_dist":
            scenario_kw[key] = _parse_lifetime(raw, line_no)
        elif key in _SCENARIO_FIELDS:
            scenario_kw[key] = _parse_scalar(key, raw, line_no)
        elif key in _CONFIG_FIELDS:
            config_kw[key] = _parse_scalar(key, raw, line_no)
        else:
            raise ConfigError(f"unknown key {key!r}", line_no)
    if updates:
        scenario_kw["update_schedule"] = updates
    try:
        scenario = Scenario(**scenario_kw)
        cfg = SimConfig(**config_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg.rng_seed = scenario.seed
    return scenario, cfg


def _parse_scalar(key: str, raw: str, line_no: int):
    if key in _STR_FIELDS:
        return raw
    if key == "t_limit":
        if raw.lower() in ("none", "inf"):
            return None
        return _parse_number(raw, False, key, line_no)
    if key in _INT_FIELDS:
        return _parse_number(raw, True, key, line_no)
    return _parse_number(raw, False, key, line_no)


def _parse_lifetime(raw: str, line_no: int) -> tuple:
    parts = raw.split()
    kind = parts[0].lower()
    want = {"uniform": 2, "lognormal": 2, "fixed": 1}.get(kind)
    if want is None:
        raise ConfigError(f"unknown lifetime distribution {kind!r}", line_no)
    if len(parts) - 1 != want:
        raise ConfigError(f"lifetime_dist {kind} takes {want} parameter(s)", line_no)
    params = [_parse_number(p, False, "lifetime_dist", line_no) for p in parts[1:]]
    return (kind, *params)


def _parse_update(raw: str, line_no: int) -> tuple:
    parts = raw.split()
    if len(parts) < 3:
        raise ConfigError("update line needs '<t_ms> <vip> <kind> [args...]'", line_no)
    t_ms = _parse_number(parts[0], False, "update", line_no)
    vip = _parse_number(parts[1], True, "update", line_no)
    kind = parts[2].lower()
    if kind not in UPDATE_KINDS:
        raise ConfigError(f"unknown update kind {kind!r}", line_no)
    args = tuple(_parse_number(p, False, "update", line_no) for p in parts[3:])
    return (t_ms / 1e3, vip, kind, args)


def parse_scenario_file(path: str | Path) -> tuple[Scenario, SimConfig]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from None
    return parse_scenario_text(text)


def scenario_to_text(scenario: Scenario, cfg: SimConfig) -> str:
    """Round-trippable dump, used by the summary's config echo."""
    lines = []
    for f in dataclasses.fields(Scenario):
        value = getattr(scenario, f.name)
        if f.name == "update_schedule":
            for t, vip, kind, args in value:
                extra = "".join(f" {a:g}" for a in args)
                lines.append(f"update = {t * 1e3:g} {vip} {kind}{extra}")
            continue
        if f.name == "lifetime_dist":
            value = " ".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    for f in dataclasses.fields(SimConfig):
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    return "\n".join(lines) + "\n"
