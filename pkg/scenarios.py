# -*- coding: utf-8 -*-
"""
Scenarios Module.

Declarative scenario configurations and the builders for the three
experiments, each with a control and an experiment arm:

- exp1, the honest marker: one UE, a greedy download plus a real-time
  stream that is marked (and given a TFT) only in the experiment arm.
- exp2, the cheater: an honest UE and a cheating UE. The cheater's real-time
  stream is marked in both arms; in the experiment arm the cheater also
  marks its greedy download.
- exp3, many UEs: 20 audio or 10 video UEs, each with a download and a
  stream, of which `n_marked` streams use the low-latency bearer.

`run_scenario` executes a configuration and returns its `ReportSet`.
"""
import logging
import time
from dataclasses import dataclass, field, replace

import config
from metrics import FlowReport, cbr_flow_report, tcp_flow_report
from net_model import ConformanceMeter, Link, Network, RanScheduler, Tft, TftSet
from sim_engine import Rng, SimEngine, SimTime
from traffic import CbrFlow, CbrSource, FlowTable, TcpFlow

logger = logging.getLogger(__name__)

ARMS = ("control", "experiment")
STREAMS = tuple(config.CBR_PROFILES)
FLOW_KINDS = ("tcp", "cbr")


class ScenarioError(ValueError):
    """Base class for scenario construction errors."""


class ValidationError(ScenarioError):
    """Raised when a configuration violates an invariant; the message names it."""


class BadCount(ScenarioError):
    """Raised when exp3's number of marked UEs is out of range."""


# ==============================================================================
# Configuration types
# ==============================================================================
@dataclass(frozen=True)
class LinkConfig:
    name: str
    rate_bps: int
    prop_delay_us: SimTime


def default_links(core_rate_bps: int = config.CORE_RATE_BPS) -> tuple[LinkConfig, ...]:
    return (
        LinkConfig("sgi", config.SGI_RATE_BPS, config.SGI_PROP_DELAY_US),
        LinkConfig("s5s8", core_rate_bps, config.CORE_PROP_DELAY_US),
        LinkConfig("s1", core_rate_bps, config.CORE_PROP_DELAY_US),
    )


@dataclass(frozen=True)
class RanConfig:
    cell_rate_bps: int = config.CELL_RATE_BPS
    baseline_latency_us: SimTime = config.BASELINE_LATENCY_US
    tti_us: SimTime = config.TTI_US
    ewma_alpha: float = config.PF_EWMA_ALPHA
    initial_avg_bps: float = config.PF_INITIAL_AVG_BPS


@dataclass(frozen=True)
class BearerConfig:
    """Bearer depths and the token-bucket profile that earns expedited forwarding."""
    qci9_capacity_bytes: int = config.QCI9_CAPACITY_BYTES
    qci7_capacity_bytes: int = config.QCI7_CAPACITY_BYTES
    expedited_rate_bps: int = config.EXPEDITED_RATE_BPS
    expedited_bucket_bytes: int = config.EXPEDITED_BUCKET_BYTES

    def capacities(self) -> dict[int, int]:
        return {config.QCI_LOW_LATENCY: self.qci7_capacity_bytes,
                config.QCI_DEFAULT: self.qci9_capacity_bytes}


@dataclass(frozen=True)
class TcpConfig:
    mss_bytes: int = config.TCP_MSS_BYTES
    header_bytes: int = config.TCP_HEADER_BYTES
    ack_bytes: int = config.TCP_ACK_BYTES
    initial_cwnd_segments: int = config.TCP_INITIAL_CWND_SEGMENTS
    initial_ssthresh_bytes: int = config.TCP_INITIAL_SSTHRESH_BYTES
    initial_rto_us: SimTime = config.TCP_INITIAL_RTO_US
    min_rto_us: SimTime = config.TCP_MIN_RTO_US
    max_rto_us: SimTime = config.TCP_MAX_RTO_US


@dataclass(frozen=True)
class FlowSpec:
    """One flow. CBR flows need packet size, pps and duration; TCP flows run until sim_end."""
    flow_id: str
    kind: str
    ue_id: int
    dscp: int = config.DEFAULT_DSCP
    start_at: SimTime = 0
    duration: SimTime | None = None
    packet_size_bytes: int | None = None
    pps: int | None = None
    stream: str | None = None


@dataclass(frozen=True)
class TftSpec:
    ue_id: int
    match_dscp: int
    target_qci: int = config.QCI_LOW_LATENCY


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "custom"
    experiment: str = "custom"
    arm: str = "control"
    stream: str | None = None
    n_marked: int | None = None
    n_ues: int = 1
    seed: int = config.DEFAULT_SEED
    sim_end: SimTime = config.SIM_END_US
    llt_dscp: int = config.LLT_DSCP
    links: tuple[LinkConfig, ...] = field(default_factory=default_links)
    ran: RanConfig = field(default_factory=RanConfig)
    bearers: BearerConfig = field(default_factory=BearerConfig)
    tcp: TcpConfig = field(default_factory=TcpConfig)
    flows: tuple[FlowSpec, ...] = ()
    tfts: tuple[TftSpec, ...] = ()


@dataclass
class ReportSet:
    scenario: str
    experiment: str
    arm: str
    seed: int
    stream: str | None
    n_marked: int | None
    flow_reports: list[FlowReport]
    queue_stats: list[dict]
    max_tti_bytes: int
    tti_budget_bytes: int
    executed_events: int
    conservation_ok: bool

    def flow(self, flow_id: str) -> FlowReport:
        for report in self.flow_reports:
            if report.flow_id == flow_id:
                return report
        raise KeyError(flow_id)


# ==============================================================================
# Validation
# ==============================================================================
def validate(cfg: ScenarioConfig):
    """
    Checks every invariant of a configuration.

    Raises:
        ValidationError: naming the first violated invariant.
    """
    def fail(message: str):
        raise ValidationError(f"{cfg.name}: {message}")

    if cfg.arm not in ARMS:
        fail(f"arm must be one of {ARMS}, got '{cfg.arm}'")
    if not cfg.links:
        fail("topology needs at least one link")
    for link in cfg.links:
        if link.rate_bps <= 0:
            fail(f"link '{link.name}' rate must be positive, got {link.rate_bps}")
        if link.prop_delay_us < 0:
            fail(f"link '{link.name}' propagation delay must be >= 0, got {link.prop_delay_us}")
    if cfg.ran.cell_rate_bps <= 0 or cfg.ran.tti_us <= 0:
        fail("cell rate and TTI must be positive")
    if cfg.ran.baseline_latency_us < 0:
        fail("baseline latency must be >= 0")
    if not 0 < cfg.ran.ewma_alpha <= 1 or cfg.ran.initial_avg_bps <= 0:
        fail("PF EWMA coefficient must be in (0, 1] and the initial average positive")
    if cfg.ran.cell_rate_bps * cfg.ran.tti_us // (8 * config.US_PER_S) <= 0:
        fail("TTI budget rounds to zero bytes")
    if min(cfg.bearers.qci7_capacity_bytes, cfg.bearers.qci9_capacity_bytes) <= 0:
        fail("bearer capacities must be positive")
    if cfg.bearers.qci7_capacity_bytes >= cfg.bearers.qci9_capacity_bytes:
        fail("QCI 7 capacity must be smaller than QCI 9 capacity (shallow vs deep)")
    if cfg.bearers.expedited_rate_bps <= 0 or cfg.bearers.expedited_bucket_bytes <= 0:
        fail("expedited profile rate and bucket depth must be positive")
    if cfg.tcp.mss_bytes <= 0 or cfg.tcp.header_bytes < 0 or cfg.tcp.ack_bytes <= 0:
        fail("TCP sizes must be positive")
    if cfg.tcp.initial_cwnd_segments < 1:
        fail("initial cwnd must be at least one segment")
    if not 0 < cfg.tcp.min_rto_us <= cfg.tcp.initial_rto_us <= cfg.tcp.max_rto_us:
        fail("RTO bounds must satisfy 0 < min <= initial <= max")
    if cfg.n_ues < 1:
        fail("at least one UE is required")
    if cfg.seed < 0:
        fail("seed must be non-negative")
    if cfg.sim_end <= 0:
        fail("sim_end must be positive")
    if not 0 <= cfg.llt_dscp < 64:
        fail(f"LLT codepoint {cfg.llt_dscp} is not a 6-bit value")

    seen = set()
    for flow in cfg.flows:
        if flow.flow_id in seen:
            fail(f"duplicate flow id '{flow.flow_id}'")
        seen.add(flow.flow_id)
        if flow.kind not in FLOW_KINDS:
            fail(f"flow '{flow.flow_id}' has unknown kind '{flow.kind}'")
        if not 0 <= flow.ue_id < cfg.n_ues:
            fail(f"flow '{flow.flow_id}' refers to unknown UE {flow.ue_id}")
        if not 0 <= flow.dscp < 64:
            fail(f"flow '{flow.flow_id}' DSCP {flow.dscp} is not a 6-bit value")
        if flow.start_at < 0:
            fail(f"flow '{flow.flow_id}' starts before t=0")
        if flow.kind == "cbr":
            if not flow.packet_size_bytes or flow.packet_size_bytes <= 0 or not flow.pps or flow.pps <= 0:
                fail(f"CBR flow '{flow.flow_id}' needs a positive packet size and pps")
            if flow.duration is None or flow.duration < 0:
                fail(f"CBR flow '{flow.flow_id}' needs a non-negative duration")
            if flow.start_at + flow.duration > cfg.sim_end:
                fail(f"sim_end {cfg.sim_end} is earlier than the end of flow '{flow.flow_id}'")
        elif flow.start_at > cfg.sim_end:
            fail(f"TCP flow '{flow.flow_id}' starts after sim_end")

    tft_keys = set()
    for tft in cfg.tfts:
        if not 0 <= tft.ue_id < cfg.n_ues:
            fail(f"TFT refers to unknown UE {tft.ue_id}")
        if tft.target_qci not in (config.QCI_LOW_LATENCY, config.QCI_DEFAULT):
            fail(f"TFT target QCI {tft.target_qci} has no bearer")
        key = (tft.ue_id, tft.match_dscp)
        if key in tft_keys:
            fail(f"more than one TFT for UE {tft.ue_id} / DSCP {tft.match_dscp}")
        tft_keys.add(key)


# ==============================================================================
# Experiment builders
# ==============================================================================
def _check_stream(stream: str):
    if stream not in config.CBR_PROFILES:
        raise ScenarioError(f"Unknown stream '{stream}', expected one of {STREAMS}")


def _cbr_flow(flow_id: str, ue_id: int, stream: str, start_at: SimTime, dscp: int) -> FlowSpec:
    profile = config.CBR_PROFILES[stream]
    return FlowSpec(flow_id=flow_id, kind="cbr", ue_id=ue_id, dscp=dscp, start_at=start_at,
                    duration=config.CBR_DURATION_US, packet_size_bytes=profile["ip_bytes"],
                    pps=profile["pps"], stream=stream)


def build_exp1(marking: bool, stream: str = "audio", base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Honest marker: one UE, a greedy download and a real-time stream on the same UE."""
    _check_stream(stream)
    base = base or ScenarioConfig()
    llt = base.llt_dscp
    flows = (
        FlowSpec(flow_id="tcp-0", kind="tcp", ue_id=0, start_at=0),
        _cbr_flow("cbr-0", 0, stream, config.CBR_START_US, llt if marking else config.DEFAULT_DSCP),
    )
    tfts = (TftSpec(ue_id=0, match_dscp=llt),) if marking else ()
    return replace(base, name=f"exp1_{stream}", experiment="exp1",
                   arm="experiment" if marking else "control", stream=stream, n_marked=None,
                   n_ues=1, flows=flows, tfts=tfts)


def build_exp2(cheating: bool, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Cheater: UE 0 is honest, UE 1 owns the marked audio stream and, when cheating, marks its download too."""
    base = base or ScenarioConfig()
    llt = base.llt_dscp
    flows = (
        FlowSpec(flow_id="tcp-honest", kind="tcp", ue_id=0, start_at=0),
        FlowSpec(flow_id="tcp-cheater", kind="tcp", ue_id=1, start_at=0,
                 dscp=llt if cheating else config.DEFAULT_DSCP),
        _cbr_flow("cbr-cheater", 1, "audio", config.CBR_START_US, llt),
    )
    return replace(base, name="exp2", experiment="exp2", arm="experiment" if cheating else "control",
                   stream="audio", n_marked=None, n_ues=2, flows=flows,
                   tfts=(TftSpec(ue_id=1, match_dscp=llt),))


def build_exp3(stream: str, n_marked: int, seed: int | None = None,
               base: ScenarioConfig | None = None) -> ScenarioConfig:
    """
    Many UEs: every UE has a greedy download and a stream starting uniformly in [1 s, 3 s].

    UEs 0 .. n_marked-1 mark their stream and get a TFT. Core links run at 50 Mbit/s.

    Raises:
        BadCount: if n_marked is outside [0, number of UEs for the stream].
    """
    _check_stream(stream)
    n_ues = config.CBR_PROFILES[stream]["n_ues"]
    if not 0 <= n_marked <= n_ues:
        raise BadCount(f"n_marked={n_marked} out of range for {stream} (0..{n_ues})")
    base = base or ScenarioConfig(links=default_links(config.EXP3_CORE_RATE_BPS))
    seed = base.seed if seed is None else seed
    llt = base.llt_dscp
    rng = Rng(seed)
    lo, hi = config.EXP3_START_WINDOW_US
    flows, tfts = [], []
    for ue in range(n_ues):
        marked = ue < n_marked
        flows.append(FlowSpec(flow_id=f"tcp-{ue}", kind="tcp", ue_id=ue, start_at=0))
        flows.append(_cbr_flow(f"cbr-{ue}", ue, stream, rng.uniform(lo, hi),
                               llt if marked else config.DEFAULT_DSCP))
        if marked:
            tfts.append(TftSpec(ue_id=ue, match_dscp=llt))
    return replace(base, name=f"exp3_{stream}_m{n_marked}", experiment="exp3",
                   arm="experiment" if n_marked else "control", stream=stream, n_marked=n_marked,
                   n_ues=n_ues, seed=seed, flows=tuple(flows), tfts=tuple(tfts))


def build(experiment: str, arm: str, stream: str = "audio", n_marked: int | None = None,
          seed: int | None = None, base: ScenarioConfig | None = None,
          keep_links: bool = False) -> ScenarioConfig:
    """
    Dispatches to the experiment builder; `seed` overrides the base configuration's seed.

    exp3 widens the core links of `base` to 50 Mbit/s unless `keep_links` is set,
    which is how a scenario file with its own [topology] keeps its links.
    """
    if base is not None and seed is not None:
        base = replace(base, seed=seed)
    elif seed is not None:
        base = ScenarioConfig(seed=seed)
    if experiment == "exp1":
        return build_exp1(arm == "experiment", stream, base)
    if experiment == "exp2":
        return build_exp2(arm == "experiment", base)
    if experiment == "exp3":
        if n_marked is None:
            raise BadCount("exp3 needs n_marked")
        if base is not None and not keep_links:
            base = replace(base, links=default_links(config.EXP3_CORE_RATE_BPS))
        return build_exp3(stream, n_marked, base=base)
    raise ScenarioError(f"Unknown experiment '{experiment}'")


# ==============================================================================
# Execution
# ==============================================================================
class ScenarioRun:
    """One isolated simulation of a configuration: engine, network and flows."""

    def __init__(self, cfg: ScenarioConfig):
        validate(cfg)
        self.cfg = cfg
        self.engine = SimEngine()
        self.links = [Link(l.name, l.rate_bps, l.prop_delay_us) for l in cfg.links]
        self.scheduler = RanScheduler(tti_us=cfg.ran.tti_us, cell_rate_bps=cfg.ran.cell_rate_bps,
                                      baseline_latency_us=cfg.ran.baseline_latency_us,
                                      capacities=cfg.bearers.capacities(), ewma_alpha=cfg.ran.ewma_alpha,
                                      initial_avg_bps=cfg.ran.initial_avg_bps)
        for ue in range(cfg.n_ues):
            self.scheduler.add_ue(ue)
        self.tfts = TftSet(Tft(t.ue_id, t.match_dscp, t.target_qci) for t in cfg.tfts)
        self.meter = ConformanceMeter(cfg.llt_dscp, cfg.bearers.expedited_rate_bps,
                                      cfg.bearers.expedited_bucket_bytes)
        self.network = Network(self.engine, self.links, self.scheduler, self.tfts, meter=self.meter)
        self.flows = FlowTable()
        for spec in cfg.flows:
            self.flows.add(self._make_flow(spec))
            self.flows.set_flow_marking(spec.flow_id, spec.dscp)
        self.executed_events = 0

    def _make_flow(self, spec: FlowSpec) -> TcpFlow | CbrFlow:
        if spec.kind == "tcp":
            tcp = self.cfg.tcp
            return TcpFlow(spec.flow_id, spec.ue_id, self.engine, self.network, start_at=spec.start_at,
                           header_bytes=tcp.header_bytes, ack_bytes=tcp.ack_bytes, mss_bytes=tcp.mss_bytes,
                           initial_cwnd_segments=tcp.initial_cwnd_segments,
                           initial_ssthresh_bytes=tcp.initial_ssthresh_bytes,
                           initial_rto_us=tcp.initial_rto_us, min_rto_us=tcp.min_rto_us,
                           max_rto_us=tcp.max_rto_us)
        source = CbrSource(spec.flow_id, spec.ue_id, spec.packet_size_bytes, spec.pps,
                           spec.start_at, spec.duration)
        return CbrFlow(source, self.engine, self.network)

    def run(self) -> "ScenarioRun":
        self.network.start()
        self.flows.start_all()
        self.executed_events = self.engine.run_until(self.cfg.sim_end)
        return self

    def report(self) -> ReportSet:
        enodeb = self.network.enodeb
        reports = []
        for flow in self.flows:
            drops = enodeb.drops_by_flow.get(flow.flow_id, 0)
            qci = enodeb.qci_by_flow.get(flow.flow_id)
            if isinstance(flow, TcpFlow):
                reports.append(tcp_flow_report(flow.flow_id, flow.ue_id, flow.receiver.delivered_bytes,
                                               flow.first_sent_at, flow.receiver.last_delivery_at,
                                               flow.sender.retransmit_count, drops,
                                               len(flow.sender.send_log), qci,
                                               fast_retransmits=flow.sender.fast_retransmits,
                                               timeouts=flow.sender.timeouts,
                                               duplicate_segments=flow.receiver.duplicate_segments))
            else:
                reports.append(cbr_flow_report(flow.flow_id, flow.ue_id, flow.sink.delays_ms(),
                                               flow.emitted, drops, qci,
                                               self.meter.expedited_by_flow.get(flow.flow_id, 0)))
        queues = self.scheduler.all_queues()
        conserved = all(q.is_conserved() for q in queues)
        budget = self.scheduler.tti_budget_bytes
        if not conserved or self.scheduler.max_tti_bytes > budget:
            logger.warning(f"{self.cfg.name}/{self.cfg.arm}: conservation audit failed "
                           f"(max TTI bytes {self.scheduler.max_tti_bytes}, budget {budget})")
        queue_stats = []
        for q in queues:
            stats = q.stats()
            stats["dscps_seen"] = sorted(q.dscps_seen)
            queue_stats.append(stats)
        return ReportSet(scenario=self.cfg.name, experiment=self.cfg.experiment, arm=self.cfg.arm,
                         seed=self.cfg.seed, stream=self.cfg.stream, n_marked=self.cfg.n_marked,
                         flow_reports=reports, queue_stats=queue_stats,
                         max_tti_bytes=self.scheduler.max_tti_bytes, tti_budget_bytes=budget,
                         executed_events=self.executed_events,
                         conservation_ok=conserved and self.scheduler.max_tti_bytes <= budget)


def run_scenario(cfg: ScenarioConfig) -> ReportSet:
    """
    Runs a configuration to sim_end and reports every flow.

    Deterministic given (cfg, cfg.seed).

    Raises:
        ValidationError: if the configuration is invalid.
    """
    started = time.perf_counter()
    logger.info(f"Running {cfg.name} ({cfg.arm}, seed {cfg.seed}): {cfg.n_ues} UE(s), {len(cfg.flows)} flow(s)")
    report_set = ScenarioRun(cfg).run().report()
    logger.info(f"Finished {cfg.name} ({cfg.arm}, seed {cfg.seed}): {report_set.executed_events} events "
                f"in {time.perf_counter() - started:.2f} s")
    return report_set
