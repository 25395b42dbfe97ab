# -*- coding: utf-8 -*-
"""
Metrics Module.

Evaluation statistics over completed runs: per-packet delay statistics, the
mean absolute first-difference jitter, goodput, and control-vs-experiment
percent changes. Delays are fractional milliseconds; rounding happens only
when reports are rendered.
"""
from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np

import config
from sim_engine import SimTime


class MetricsError(ValueError):
    """Base class for metric evaluation errors."""


class TooFewSamples(MetricsError):
    pass


class ZeroWindow(MetricsError):
    pass


class ZeroBaseline(MetricsError):
    pass


DelaySeries = Sequence[float]  # one-way delays in ms, arrival order


class DelayStats(NamedTuple):
    mean: float
    min: float
    max: float
    stddev: float


def jitter(series: DelaySeries) -> float:
    """
    Mean absolute difference between consecutive delays:
    (1 / (N - 1)) * sum(|d[i+1] - d[i]|).

    Raises:
        TooFewSamples: if fewer than two delays are given.
    """
    if len(series) < 2:
        raise TooFewSamples(f"Jitter needs at least 2 samples, got {len(series)}")
    delays = np.asarray(series, dtype=float)
    return float(np.abs(np.diff(delays)).sum() / (len(delays) - 1))


def delay_stats(series: DelaySeries) -> DelayStats:
    """Mean, min, max and population standard deviation of a delay series."""
    if len(series) == 0:
        raise TooFewSamples("Delay statistics need at least 1 sample")
    delays = np.asarray(series, dtype=float)
    return DelayStats(mean=float(delays.mean()), min=float(delays.min()),
                      max=float(delays.max()), stddev=float(delays.std(ddof=0)))


def goodput(bytes_delivered_in_order: int, t_first: SimTime, t_last: SimTime) -> float:
    """
    In-order application bytes per second over [t_first, t_last], in Mbit/s.

    Raises:
        ZeroWindow: if the window is empty or reversed.
    """
    if t_last <= t_first:
        raise ZeroWindow(f"Goodput window is empty: t_first={t_first}, t_last={t_last}")
    return bytes_delivered_in_order * 8 / ((t_last - t_first) / config.US_PER_S) / 1e6


def percent_change(control: float, experiment: float) -> float:
    """100 * (experiment - control) / control."""
    if control == 0:
        raise ZeroBaseline("Percent change is undefined for a zero control value")
    return 100.0 * (experiment - control) / control


@dataclass
class FlowReport:
    """Per-flow statistics for one run. Fields not applicable to the flow type are None."""
    flow_id: str
    ue_id: int
    kind: str
    qci: int | None = None
    delay_mean: float | None = None
    delay_min: float | None = None
    delay_max: float | None = None
    delay_stddev: float | None = None
    delay_min_ms_rounded: int | None = None
    delay_max_ms_rounded: int | None = None
    jitter: float | None = None
    goodput_mbps: float | None = None
    retransmissions: int | None = None
    drops: int = 0
    packets_sent: int = 0
    packets_received: int = 0
    expedited_packets: int = 0
    fast_retransmits: int | None = None
    timeouts: int | None = None
    duplicate_segments: int | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def cbr_flow_report(flow_id: str, ue_id: int, delays_ms: DelaySeries, sent: int, drops: int,
                    qci: int | None = None, expedited: int = 0) -> FlowReport:
    """Builds the report of a real-time flow from its sink's delay series."""
    report = FlowReport(flow_id=flow_id, ue_id=ue_id, kind="cbr", qci=qci, drops=drops,
                        packets_sent=sent, packets_received=len(delays_ms), expedited_packets=expedited)
    if len(delays_ms) >= 1:
        stats = delay_stats(delays_ms)
        report.delay_mean, report.delay_min, report.delay_max, report.delay_stddev = stats
        # Per-packet ms-rounded sampling, for comparison with integer table columns.
        rounded = np.rint(np.asarray(delays_ms, dtype=float))
        report.delay_min_ms_rounded = int(rounded.min())
        report.delay_max_ms_rounded = int(rounded.max())
    if len(delays_ms) >= 2:
        report.jitter = jitter(delays_ms)
    return report


def tcp_flow_report(flow_id: str, ue_id: int, delivered_bytes: int, t_first: SimTime | None,
                    t_last: SimTime | None, retransmissions: int, drops: int, sent: int,
                    qci: int | None = None, fast_retransmits: int = 0, timeouts: int = 0,
                    duplicate_segments: int = 0) -> FlowReport:
    """
    Builds the report of a greedy TCP flow; goodput is 0 when nothing was delivered.

    `retransmissions` counts every resent segment; `fast_retransmits` and
    `timeouts` count the loss-recovery episodes that triggered them.
    """
    mbps = 0.0
    if delivered_bytes > 0 and t_first is not None and t_last is not None and t_last > t_first:
        mbps = goodput(delivered_bytes, t_first, t_last)
    return FlowReport(flow_id=flow_id, ue_id=ue_id, kind="tcp", qci=qci, goodput_mbps=mbps,
                      retransmissions=retransmissions, drops=drops, packets_sent=sent,
                      fast_retransmits=fast_retransmits, timeouts=timeouts,
                      duplicate_segments=duplicate_segments)
