# -*- coding: utf-8 -*-
"""
Scenario Configuration Files.

Reads and writes `ScenarioConfig` as INI text:

    [run]        name, experiment, arm, stream, n_marked, n_ues, seed, sim_end, llt_dscp
    [topology]   links = sgi, s5s8, s1
                 <link>_rate_bps, <link>_prop_delay_us for each listed link
                 core_rate_bps  (shortcut: rate of every link except the first)
    [ran]        cell_rate_bps, baseline_latency_us, tti_us, ewma_alpha, initial_avg_bps
    [bearers]    qci9_capacity_bytes, qci7_capacity_bytes, expedited_rate_bps,
                 expedited_bucket_bytes
    [tcp]        mss_bytes, header_bytes, ack_bytes, initial_cwnd_segments,
                 initial_ssthresh_bytes, initial_rto_us, min_rto_us, max_rto_us
    [flow.<id>]  kind, ue_id, dscp, start_at, duration, packet_size_bytes, pps, stream
    [tft.<n>]    ue_id, match_dscp, target_qci

Rates are bit/s and times are microseconds. Omitted keys take the built-in
defaults, so an empty file is the default configuration.
"""
import configparser
import logging
from dataclasses import fields, replace
from pathlib import Path
from typing import NamedTuple

from scenarios import (BearerConfig, FlowSpec, LinkConfig, RanConfig, ScenarioConfig, TcpConfig, TftSpec,
                       default_links, validate)

logger = logging.getLogger(__name__)

SECTIONS = ("run", "topology", "ran", "bearers", "tcp")
RUN_KEYS = ("name", "experiment", "arm", "stream", "n_marked", "n_ues", "seed", "sim_end", "llt_dscp")
FLOW_KEYS = tuple(f.name for f in fields(FlowSpec) if f.name != "flow_id")
TFT_KEYS = tuple(f.name for f in fields(TftSpec))
_STRING_KEYS = {"name", "experiment", "arm", "stream", "kind"}
_FLOAT_KEYS = {"ewma_alpha", "initial_avg_bps"}


class ConfigFileError(Exception):
    """Base class for scenario file errors."""


class ParseError(ConfigFileError):
    """Raised for malformed text, unknown sections or keys, and bad values."""


class ScenarioFile(NamedTuple):
    """A parsed scenario file and the sections it spelled out."""
    cfg: ScenarioConfig
    sections: frozenset[str]

    @property
    def sets_topology(self) -> bool:
        return "topology" in self.sections


# ==============================================================================
# Loading
# ==============================================================================
def _value(source: str, section: str, key: str, raw: str):
    if key in _STRING_KEYS:
        return raw or None
    try:
        return float(raw) if key in _FLOAT_KEYS else int(raw)
    except ValueError:
        raise ParseError(f"{source}: [{section}] {key} = {raw!r} is not a number") from None


def _section_values(parser: configparser.ConfigParser, source: str, section: str,
                    allowed: tuple[str, ...]) -> dict:
    values = {}
    for key, raw in parser.items(section):
        if key not in allowed:
            raise ParseError(f"{source}: unknown key '{key}' in section [{section}]")
        values[key] = _value(source, section, key, raw.strip())
    return values


def _load_links(parser: configparser.ConfigParser, source: str) -> tuple[LinkConfig, ...]:
    links = default_links()
    if not parser.has_section("topology"):
        return links
    items = dict(parser.items("topology"))
    if "links" in items:
        names = [n.strip() for n in items.pop("links").split(",") if n.strip()]
        if not names:
            raise ParseError(f"{source}: [topology] links is empty")
        defaults = {link.name: link for link in links}
        links = tuple(defaults.get(n, LinkConfig(n, 0, 0)) for n in names)
    core_rate = items.pop("core_rate_bps", None)
    if core_rate is not None:
        rate = _value(source, "topology", "core_rate_bps", core_rate.strip())
        links = links[:1] + tuple(replace(link, rate_bps=rate) for link in links[1:])
    by_name = {link.name: link for link in links}
    for key, raw in items.items():
        name, _, attr = key.partition("_")
        if name not in by_name or attr not in ("rate_bps", "prop_delay_us"):
            raise ParseError(f"{source}: unknown key '{key}' in section [topology]")
        by_name[name] = replace(by_name[name], **{attr: _value(source, "topology", key, raw.strip())})
    return tuple(by_name[link.name] for link in links)


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    """
    Parses INI text into a validated ScenarioConfig.

    Raises:
        ParseError: for malformed text and unknown sections, keys or values.
        ValidationError: if the resulting configuration violates an invariant.
    """
    return parse_scenario_file(text, source).cfg


def parse_scenario_file(text: str, source: str = "<string>") -> ScenarioFile:
    """
    Parses INI text, keeping track of which sections were present.

    Raises:
        ParseError: for malformed text and unknown sections, keys or values.
        ValidationError: if the resulting configuration violates an invariant.
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ParseError(f"{source}: {e}") from e

    flows, tfts = [], []
    for section in parser.sections():
        if section in SECTIONS:
            continue
        kind, _, ident = section.partition(".")
        if kind == "flow" and ident:
            values = _section_values(parser, source, section, FLOW_KEYS)
            try:
                flows.append(FlowSpec(flow_id=ident, **values))
            except TypeError as e:
                raise ParseError(f"{source}: [{section}] {e}") from e
        elif kind == "tft" and ident:
            values = _section_values(parser, source, section, TFT_KEYS)
            if "ue_id" not in values or "match_dscp" not in values:
                raise ParseError(f"{source}: [{section}] needs ue_id and match_dscp")
            tfts.append(TftSpec(**values))
        else:
            raise ParseError(f"{source}: unknown section [{section}]")

    def section(name: str, cls):
        allowed = tuple(f.name for f in fields(cls))
        return cls(**_section_values(parser, source, name, allowed)) if parser.has_section(name) else cls()

    run = _section_values(parser, source, "run", RUN_KEYS) if parser.has_section("run") else {}
    cfg = ScenarioConfig(**run, links=_load_links(parser, source), ran=section("ran", RanConfig),
                         bearers=section("bearers", BearerConfig), tcp=section("tcp", TcpConfig),
                         flows=tuple(flows), tfts=tuple(tfts))
    validate(cfg)
    return ScenarioFile(cfg, frozenset(parser.sections()))


def load_config(path: str | Path) -> ScenarioConfig:
    """
    Loads and validates a scenario file.

    Raises:
        ParseError: if the file cannot be read or parsed.
        ValidationError: naming the violated invariant.
    """
    return read_scenario_file(path).cfg


def read_scenario_file(path: str | Path) -> ScenarioFile:
    """Like `load_config`, but also reports which sections the file set."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ParseError(f"Cannot read scenario file '{path}': {e}") from e
    scenario = parse_scenario_file(text, source=str(path))
    cfg = scenario.cfg
    logger.info(f"Loaded scenario file '{path}' ({len(cfg.flows)} flow(s), {len(cfg.tfts)} TFT(s))")
    return scenario


# ==============================================================================
# Dumping
# ==============================================================================
def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def dump_config(cfg: ScenarioConfig) -> str:
    """Serializes a configuration so that `parse_config(dump_config(cfg)) == cfg`."""
    lines = ["[run]"]
    for key in RUN_KEYS:
        value = getattr(cfg, key)
        if value is not None:
            lines.append(f"{key} = {value}")

    lines += ["", "[topology]", "links = " + ", ".join(link.name for link in cfg.links)]
    for link in cfg.links:
        lines.append(f"{link.name}_rate_bps = {link.rate_bps}")
        lines.append(f"{link.name}_prop_delay_us = {link.prop_delay_us}")

    for name, block in (("ran", cfg.ran), ("bearers", cfg.bearers), ("tcp", cfg.tcp)):
        lines += ["", f"[{name}]"]
        lines += [f"{f.name} = {_fmt(getattr(block, f.name))}" for f in fields(block)]

    for flow in cfg.flows:
        lines += ["", f"[flow.{flow.flow_id}]"]
        for key in FLOW_KEYS:
            value = getattr(flow, key)
            if value is not None:
                lines.append(f"{key} = {value}")

    for n, tft in enumerate(cfg.tfts):
        lines += ["", f"[tft.{n}]"]
        lines += [f"{key} = {getattr(tft, key)}" for key in TFT_KEYS]
    return "\n".join(lines) + "\n"
