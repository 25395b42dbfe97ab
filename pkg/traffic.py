# -*- coding: utf-8 -*-
"""
Traffic Endpoints Module.

Two kinds of flows cross the simulated path:

- Greedy TCP downloads: a Reno-style sender at the server (`TcpSender`)
  and a cumulative-ACK receiver at the UE (`TcpReceiver`), wired together by
  `TcpFlow`. The stream is unbounded, so the sender always fills its window.
- Real-time CBR streams: `CbrSource` emits timestamped packets at a fixed
  rate and `CbrSink` logs their one-way delay.

`FlowTable.set_flow_marking` sets the DSCP of a flow before it starts; that is
how the honest marker and the cheater are configured.
"""
import itertools
import logging
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import config
from net_model import Network, Packet, PacketKind
from sim_engine import EventHandle, SimEngine, SimTime

logger = logging.getLogger(__name__)


class ProfileError(ValueError):
    """Base class for traffic declaration errors."""


class BadProfile(ProfileError):
    """Raised for a CBR profile with zero rate or zero size."""


class FlowStarted(RuntimeError):
    """Raised when a flow's marking is changed after it began emitting."""


# ==============================================================================
# CBR
# ==============================================================================
@dataclass
class CbrSource:
    """Constant-bit-rate stream declaration. `packet_size_bytes` is the IP-layer size."""
    flow_id: str
    ue_id: int
    packet_size_bytes: int
    pps: int
    start_at: SimTime
    duration: SimTime
    dscp: int = config.DEFAULT_DSCP

    @property
    def ip_bandwidth_bps(self) -> int:
        return self.packet_size_bytes * 8 * self.pps


def cbr_emit_schedule(src: CbrSource) -> list[tuple[SimTime, Packet]]:
    """
    Lists every (emission time, packet) of a CBR stream.

    Emission k happens at start_at + floor(k * 1e6 / pps), so rates that do
    not divide a second evenly accumulate no rounding drift.

    Raises:
        BadProfile: if pps or packet size is zero.
    """
    if src.pps <= 0 or src.packet_size_bytes <= 0:
        raise BadProfile(f"CBR flow '{src.flow_id}': pps={src.pps}, size={src.packet_size_bytes} B")
    count = src.pps * src.duration // config.US_PER_S
    schedule = []
    for k in range(count):
        t = src.start_at + k * config.US_PER_S // src.pps
        schedule.append((t, Packet(packet_id=k, flow_id=src.flow_id, ue_id=src.ue_id,
                                   size_bytes=src.packet_size_bytes, dscp=src.dscp,
                                   created_at=t, kind=PacketKind.UDP_CBR, seq=k)))
    return schedule


class CbrSink:
    """Receiver-side log of (created_at, delivered_at) in arrival order."""

    def __init__(self):
        self.log: list[tuple[SimTime, SimTime]] = []
        self.sequence: list[int] = []
        self.received_bytes = 0

    def receive(self, packet: Packet):
        self.log.append((packet.created_at, packet.delivered_at))
        self.sequence.append(packet.seq)
        self.received_bytes += packet.size_bytes

    @property
    def received(self) -> int:
        return len(self.log)

    def delays_ms(self) -> list[float]:
        return [(delivered - created) / config.US_PER_MS for created, delivered in self.log]


# ==============================================================================
# TCP
# ==============================================================================
class TcpState(Enum):
    SLOW_START = "slow_start"
    CONGESTION_AVOIDANCE = "congestion_avoidance"
    FAST_RECOVERY = "fast_recovery"


class Segment(NamedTuple):
    seq: int
    length: int
    retransmission: bool


class TcpSender:
    """
    Reno congestion control for an unbounded, never application-limited stream.

    Slow start grows cwnd by one MSS per new ACK, congestion avoidance by
    MSS*MSS/cwnd. Three duplicate ACKs trigger fast retransmit and a simplified
    fast recovery that ends on the first new ACK. A timeout resets cwnd to one
    MSS and goes back to the first unacknowledged byte. RTO follows Jacobson's
    estimator with Karn's rule and exponential backoff.
    """

    def __init__(self, mss_bytes: int = config.TCP_MSS_BYTES,
                 initial_cwnd_segments: int = config.TCP_INITIAL_CWND_SEGMENTS,
                 initial_ssthresh_bytes: int = config.TCP_INITIAL_SSTHRESH_BYTES,
                 initial_rto_us: SimTime = config.TCP_INITIAL_RTO_US,
                 min_rto_us: SimTime = config.TCP_MIN_RTO_US,
                 max_rto_us: SimTime = config.TCP_MAX_RTO_US,
                 dscp: int = config.DEFAULT_DSCP):
        self.mss = mss_bytes
        self.cwnd = initial_cwnd_segments * mss_bytes
        self.ssthresh = initial_ssthresh_bytes
        self.state = TcpState.SLOW_START
        self.rto = initial_rto_us
        self.min_rto = min_rto_us
        self.max_rto = max_rto_us
        self.srtt: float | None = None
        self.rttvar: float | None = None
        self.dup_ack_count = 0
        self.retransmit_count = 0
        self.fast_retransmits = 0
        self.timeouts = 0
        self.highest_acked = 0
        self.next_seq = 0
        self.snd_max = 0
        self.dscp = dscp
        self.send_log: list[tuple[SimTime, int]] = []
        self._sent_at: dict[int, SimTime] = {}  # original transmissions not yet acked

    @property
    def bytes_in_flight(self) -> int:
        return self.next_seq - self.highest_acked

    @property
    def has_unacked_data(self) -> bool:
        return self.snd_max > self.highest_acked

    def start(self, now: SimTime) -> list[Segment]:
        return self._fill_window(now)

    def on_ack(self, ack_seq: int, now: SimTime) -> list[Segment]:
        """
        Processes a cumulative ACK.

        Returns:
            list[Segment]: Segments to put on the wire now.
        """
        if ack_seq < self.highest_acked:
            return []

        if ack_seq == self.highest_acked:
            if not self.has_unacked_data:
                return []
            self.dup_ack_count += 1
            if self.state is TcpState.FAST_RECOVERY:
                self.cwnd += self.mss
            elif self.dup_ack_count == config.TCP_DUP_ACK_THRESHOLD:
                self.ssthresh = max(self.cwnd // 2, 2 * self.mss)
                self.cwnd = self.ssthresh + config.TCP_DUP_ACK_THRESHOLD * self.mss
                self.state = TcpState.FAST_RECOVERY
                self.fast_retransmits += 1
                logger.debug(f"t={now} fast retransmit seq={self.highest_acked} ssthresh={self.ssthresh}")
                return [self._transmit(self.highest_acked, now)] + self._fill_window(now)
            return self._fill_window(now)

        previous = self.highest_acked
        sent_at = None
        for seq in range(previous, ack_seq, self.mss):
            sent_at = self._sent_at.pop(seq, None)
        # Sample only ACKs that cover exactly one segment sent once.
        if ack_seq - previous == self.mss and sent_at is not None:
            self._update_rtt(now - sent_at)
        self.highest_acked = ack_seq
        self.next_seq = max(self.next_seq, ack_seq)
        self.dup_ack_count = 0

        if self.state is TcpState.FAST_RECOVERY:
            self.cwnd = self.ssthresh
            self.state = TcpState.CONGESTION_AVOIDANCE
        elif self.state is TcpState.SLOW_START:
            self.cwnd += self.mss
            if self.cwnd >= self.ssthresh:
                self.state = TcpState.CONGESTION_AVOIDANCE
        else:
            self.cwnd += max(1, self.mss * self.mss // self.cwnd)
        return self._fill_window(now)

    def on_timeout(self, now: SimTime) -> list[Segment]:
        """Retransmission timeout: collapse the window and go back to the first unacked byte."""
        if not self.has_unacked_data:
            return []
        self.timeouts += 1
        self.ssthresh = max(self.cwnd // 2, 2 * self.mss)
        self.cwnd = self.mss
        self.state = TcpState.SLOW_START
        self.dup_ack_count = 0
        self.rto = min(self.rto * 2, self.max_rto)
        self.next_seq = self.highest_acked
        logger.debug(f"t={now} RTO fired, ssthresh={self.ssthresh} next rto={self.rto}")
        return self._fill_window(now)

    def _fill_window(self, now: SimTime) -> list[Segment]:
        segments = []
        while self.bytes_in_flight + self.mss <= self.cwnd:
            segments.append(self._transmit(self.next_seq, now))
            self.next_seq += self.mss
        return segments

    def _transmit(self, seq: int, now: SimTime) -> Segment:
        retransmission = seq < self.snd_max
        if retransmission:
            self.retransmit_count += 1
            self._sent_at.pop(seq, None)  # Karn: a retransmitted segment is never timed
        else:
            self._sent_at[seq] = now
        self.snd_max = max(self.snd_max, seq + self.mss)
        self.send_log.append((now, seq))
        return Segment(seq, self.mss, retransmission)

    def _update_rtt(self, sample: SimTime):
        if self.srtt is None:
            self.srtt = float(sample)
            self.rttvar = sample / 2
        else:
            self.rttvar = 0.75 * self.rttvar + 0.25 * abs(self.srtt - sample)
            self.srtt = 0.875 * self.srtt + 0.125 * sample
        self.rto = int(min(max(self.srtt + 4 * self.rttvar, self.min_rto), self.max_rto))


class TcpReceiver:
    """Cumulative-ACK receiver with out-of-order buffering and an unbounded window."""

    def __init__(self):
        self.rcv_nxt = 0
        self.duplicate_segments = 0
        self.first_delivery_at: SimTime | None = None
        self.last_delivery_at: SimTime | None = None
        self._out_of_order: dict[int, int] = {}

    @property
    def delivered_bytes(self) -> int:
        return self.rcv_nxt

    def on_segment(self, seq: int, length: int, now: SimTime) -> int:
        """Accepts a data segment and returns the cumulative ACK number."""
        if seq + length <= self.rcv_nxt or seq in self._out_of_order:
            self.duplicate_segments += 1
        elif seq > self.rcv_nxt:
            self._out_of_order[seq] = length
        else:
            self.rcv_nxt = seq + length
            while self.rcv_nxt in self._out_of_order:
                self.rcv_nxt += self._out_of_order.pop(self.rcv_nxt)
            if self.first_delivery_at is None:
                self.first_delivery_at = now
            self.last_delivery_at = now
        return self.rcv_nxt


# ==============================================================================
# Flow endpoints on the network
# ==============================================================================
class TcpFlow:
    """
    Greedy download from the server to `ue_id`; ACKs return over the ideal uplink.

    One retransmission timer per flow, armed while data is outstanding.
    """

    kind = "tcp"

    def __init__(self, flow_id: str, ue_id: int, engine: SimEngine, network: Network,
                 start_at: SimTime = 0, dscp: int = config.DEFAULT_DSCP,
                 header_bytes: int = config.TCP_HEADER_BYTES, ack_bytes: int = config.TCP_ACK_BYTES,
                 **sender_options):
        self.flow_id = flow_id
        self.ue_id = ue_id
        self.engine = engine
        self.network = network
        self.start_at = start_at
        self.header_bytes = header_bytes
        self.ack_bytes = ack_bytes
        self.sender = TcpSender(dscp=dscp, **sender_options)
        self.receiver = TcpReceiver()
        self.started = False
        self.first_sent_at: SimTime | None = None
        self._packet_ids = itertools.count()
        self._rto_timer: EventHandle | None = None
        network.register_endpoint(flow_id, self._on_data)

    @property
    def dscp(self) -> int:
        return self.sender.dscp

    @dscp.setter
    def dscp(self, value: int):
        self.sender.dscp = value

    def start(self):
        self.engine.schedule(self.start_at, self._begin)

    def _begin(self):
        self.started = True
        self.first_sent_at = self.engine.now
        self._send(self.sender.start(self.engine.now))

    def _send(self, segments: list[Segment]):
        now = self.engine.now
        for segment in segments:
            packet = Packet(packet_id=next(self._packet_ids), flow_id=self.flow_id, ue_id=self.ue_id,
                            size_bytes=segment.length + self.header_bytes, dscp=self.sender.dscp,
                            created_at=now, kind=PacketKind.TCP_DATA, seq=segment.seq, length=segment.length)
            self.network.send_downlink(packet)
        if segments and self._rto_timer is None:
            self._arm_timer()

    def _arm_timer(self):
        if self._rto_timer is not None:
            self._rto_timer.cancel()
        self._rto_timer = self.engine.schedule(self.engine.now + self.sender.rto, self._on_timeout)

    def _stop_timer(self):
        if self._rto_timer is not None:
            self._rto_timer.cancel()
            self._rto_timer = None

    def _on_data(self, packet: Packet):
        ack_seq = self.receiver.on_segment(packet.seq, packet.length, self.engine.now)
        ack = Packet(packet_id=next(self._packet_ids), flow_id=self.flow_id, ue_id=self.ue_id,
                     size_bytes=self.ack_bytes, dscp=config.DEFAULT_DSCP, created_at=self.engine.now,
                     kind=PacketKind.TCP_ACK, seq=ack_seq)
        self.network.send_uplink(ack, self._on_ack)

    def _on_ack(self, ack: Packet):
        acked_before = self.sender.highest_acked
        segments = self.sender.on_ack(ack.seq, self.engine.now)
        # The timer restarts on new data acked and on a fast retransmit.
        if self.sender.highest_acked > acked_before or any(s.retransmission for s in segments):
            if self.sender.has_unacked_data:
                self._arm_timer()
            else:
                self._stop_timer()
        self._send(segments)

    def _on_timeout(self):
        self._rto_timer = None
        segments = self.sender.on_timeout(self.engine.now)
        self._send(segments)
        if self.sender.has_unacked_data:
            self._arm_timer()


class CbrFlow:
    """Real-time stream from the server to `ue_id`, timestamped at emission."""

    kind = "cbr"

    def __init__(self, source: CbrSource, engine: SimEngine, network: Network):
        self.source = source
        self.flow_id = source.flow_id
        self.ue_id = source.ue_id
        self.engine = engine
        self.network = network
        self.sink = CbrSink()
        self.started = False
        self.emitted = 0
        self.first_sent_at: SimTime | None = None
        network.register_endpoint(self.flow_id, self.sink.receive)

    @property
    def dscp(self) -> int:
        return self.source.dscp

    @dscp.setter
    def dscp(self, value: int):
        self.source.dscp = value

    def start(self):
        self.engine.start_process(self._emitter())

    def _emitter(self):
        env = self.engine.env
        if self.source.start_at > self.engine.now:
            yield env.timeout(self.source.start_at - self.engine.now)
        self.started = True
        for emit_at, packet in cbr_emit_schedule(self.source):
            if emit_at > self.engine.now:
                yield env.timeout(emit_at - self.engine.now)
            if self.first_sent_at is None:
                self.first_sent_at = self.engine.now
            self.emitted += 1
            self.network.send_downlink(packet)


class FlowTable:
    """Registry of a scenario's flows, keyed by flow id."""

    def __init__(self):
        self._flows: dict[str, TcpFlow | CbrFlow] = {}

    def __iter__(self):
        return iter(self._flows.values())

    def __getitem__(self, flow_id: str) -> TcpFlow | CbrFlow:
        return self._flows[flow_id]

    def add(self, flow: TcpFlow | CbrFlow):
        if flow.flow_id in self._flows:
            raise ValueError(f"Duplicate flow id '{flow.flow_id}'")
        self._flows[flow.flow_id] = flow

    def set_flow_marking(self, flow_id: str, dscp: int):
        """
        Sets the DSCP carried by every packet of a flow.

        Raises:
            KeyError: if the flow does not exist.
            FlowStarted: if the flow has already begun emitting.
        """
        flow = self._flows[flow_id]
        if flow.started:
            raise FlowStarted(f"Flow '{flow_id}' is already emitting; marking is fixed")
        if not 0 <= dscp < 64:
            raise ValueError(f"DSCP {dscp} is not a 6-bit codepoint")
        flow.dscp = dscp
        logger.debug(f"Flow '{flow_id}' marked with DSCP {dscp:#08b}")

    def start_all(self):
        for flow in self._flows.values():
            flow.start()
