"""INI configuration files.

Sections mirror :class:`SimConfig`: ``highway``, ``channel``, ``sps``,
``ch_rri``, ``aoi_rri``, ``scheduler`` (``name = static100 | ch_rri |
aoi_rri``), ``sim`` and an optional ``sweep`` (``densities``,
``schedulers``).  Every problem is collected before reporting.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path

from .aoi_rri import AoiRriConfig
from .ch_rri import ChRriConfig
from .channel import ChannelConfig
from .engine import DEFAULT_DENSITIES, DEFAULT_SCHEDULERS, ConfigError, SchedulerSpec, SimConfig
from .mobility import HighwayConfig
from .sps import SpsConfig

SECTIONS = {
    "highway": HighwayConfig,
    "channel": ChannelConfig,
    "sps": SpsConfig,
    "ch_rri": ChRriConfig,
    "aoi_rri": AoiRriConfig,
}
# fields whose default is None, with the type used when a value is given
_OPTIONAL = {("sps", "subchannels_per_bsm"): int, ("aoi_rri", "cold_start_aoi"): float}
_SIM_SKIP = {"highway", "channel", "sps", "ch_rri", "aoi_rri", "scheduler", "vehicles", "record_log", "check_recursion"}


@dataclass
class RunConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    densities: tuple[float, ...] = tuple(float(d) for d in DEFAULT_DENSITIES)
    schedulers: tuple[SchedulerSpec, ...] = DEFAULT_SCHEDULERS


def _parse_value(section: str, key: str, raw: str, default, errs: list[str]):
    raw = raw.strip()
    where = f"{section}.{key}"
    opt = _OPTIONAL.get((section, key))
    if opt is not None:
        if raw.lower() in ("", "none", "auto"):
            return None
        kind = opt
    elif isinstance(default, bool):
        kind = bool
    elif isinstance(default, Enum):
        try:
            return type(default)(raw.lower())
        except ValueError:
            errs.append(f"{where}: {raw!r} is not one of {[m.value for m in type(default)]}")
            return default
    else:
        kind = type(default)
    try:
        if kind is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return kind(raw)
    except (TypeError, ValueError):
        errs.append(f"{where}: cannot read {raw!r} as {kind.__name__}")
        return default


def _fill(section: str, obj, items: dict[str, str], errs: list[str]):
    names = {f.name: f for f in dataclasses.fields(obj) if f.name not in (_SIM_SKIP if section == "sim" else ())}
    updates = {}
    for key, raw in items.items():
        if key not in names:
            errs.append(f"{section}.{key}: unknown key")
            continue
        updates[key] = _parse_value(section, key, raw, getattr(obj, key), errs)
    return replace(obj, **updates)


def _csv_list(raw: str) -> list[str]:
    return [p.strip() for p in raw.split(",") if p.strip()]


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    """Parse and validate INI text; raises :class:`ConfigError` listing every problem."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError([f"{source}: {exc}"]) from exc
    errs: list[str] = []
    sim = SimConfig()
    subs = {}
    for name, cls in SECTIONS.items():
        items = dict(cp.items(name)) if cp.has_section(name) else {}
        subs[name] = _fill(name, getattr(sim, name), items, errs)
    sim = replace(sim, **subs)
    if cp.has_section("sim"):
        sim = _fill("sim", sim, dict(cp.items("sim")), errs)
    if cp.has_section("scheduler"):
        items = dict(cp.items("scheduler"))
        for key in items:
            if key != "name":
                errs.append(f"scheduler.{key}: unknown key")
        if "name" in items:
            try:
                sim = replace(sim, scheduler=SchedulerSpec.parse(items["name"]))
            except ValueError as exc:
                errs.append(f"scheduler.name: {exc}")
    run = RunConfig(sim=sim)
    if cp.has_section("sweep"):
        items = dict(cp.items("sweep"))
        for key in items:
            if key not in ("densities", "schedulers"):
                errs.append(f"sweep.{key}: unknown key")
        if "densities" in items:
            try:
                run.densities = tuple(float(d) for d in _csv_list(items["densities"]))
            except ValueError:
                errs.append(f"sweep.densities: cannot read {items['densities']!r}")
            if not run.densities:
                errs.append("sweep.densities must not be empty")
        if "schedulers" in items:
            try:
                run.schedulers = tuple(SchedulerSpec.parse(t) for t in _csv_list(items["schedulers"]))
            except ValueError as exc:
                errs.append(f"sweep.schedulers: {exc}")
            if not run.schedulers:
                errs.append("sweep.schedulers must not be empty")
    for known in cp.sections():
        if known not in (*SECTIONS, "sim", "scheduler", "sweep"):
            errs.append(f"[{known}]: unknown section")
    errs.extend(sim.validate())
    if errs:
        raise ConfigError(errs)
    return run


def load_config(path: str | Path) -> RunConfig:
    """Read a configuration file; a missing file raises FileNotFoundError."""
    p = Path(path)
    return parse_config(p.read_text(), str(p))


def _fmt_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, Enum):
        return v.value
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def dump_config(run: RunConfig) -> str:
    """INI text that :func:`parse_config` reads back to an equal RunConfig."""
    sim = run.sim
    lines = []
    for name in SECTIONS:
        lines.append(f"[{name}]")
        obj = getattr(sim, name)
        for f in dataclasses.fields(obj):
            lines.append(f"{f.name} = {_fmt_value(getattr(obj, f.name))}")
        lines.append("")
    lines += ["[scheduler]", f"name = {sim.scheduler.label}", "", "[sim]"]
    for f in dataclasses.fields(sim):
        if f.name not in _SIM_SKIP:
            lines.append(f"{f.name} = {_fmt_value(getattr(sim, f.name))}")
    lines += ["", "[sweep]",
              "densities = " + ", ".join(f"{d:g}" for d in run.densities),
              "schedulers = " + ", ".join(s.label for s in run.schedulers), ""]
    return "\n".join(lines)


def default_config_text() -> str:
    return resources.files("nrsps").joinpath("default.cfg").read_text()


def default_config() -> RunConfig:
    return parse_config(default_config_text(), "default.cfg")

