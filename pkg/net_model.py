# -*- coding: utf-8 -*-
"""
Network Model Module.

Data plane of the simulated LTE downlink:

    server --SGi--> PGW --S5/S8--> SGW --S1--> eNodeB ==radio==> UE

- `Link`: store-and-forward point-to-point segment with an unbounded FIFO.
  Expedited packets preempt normal ones (preemptive resume).
- `ConformanceMeter`: per-flow token bucket at network ingress. Only
  LLT-marked packets that fit their flow's bucket are flagged expedited.
- `BearerQueue`: per-UE, per-QCI drop-tail buffer at the eNodeB, with an
  expedited lane sharing the byte capacity.
- `Tft` / `classify`: maps a packet's DSCP to a bearer.
- `RanScheduler`: 1 ms TTI proportional-fair allocation of the cell rate,
  strict QCI 7 over QCI 9 priority inside a UE grant.
- `Enodeb` and `Network`: wire the pieces onto the simulation engine.

The uplink (TCP ACKs) is an ideal queue-free path.
"""
import itertools
import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Iterator, Sequence

import config
from sim_engine import EventHandle, SimEngine, SimTime

logger = logging.getLogger(__name__)


class PacketKind(Enum):
    TCP_DATA = "tcp_data"
    TCP_ACK = "tcp_ack"
    UDP_CBR = "udp_cbr"


@dataclass(slots=True)
class Packet:
    """A marked, timestamped datagram. `size_bytes` is the IP-layer size."""
    packet_id: int
    flow_id: str
    ue_id: int
    size_bytes: int
    dscp: int
    created_at: SimTime
    kind: PacketKind
    seq: int = 0          # TCP byte sequence number, or CBR packet index
    length: int = 0       # TCP payload bytes carried (0 for ACK / CBR)
    expedited: bool = False
    delivered_at: SimTime | None = None

    def __post_init__(self):
        if self.size_bytes <= 0:
            raise ValueError(f"Packet {self.packet_id}: size must be positive, got {self.size_bytes}")
        if not 0 <= self.dscp < 64:
            raise ValueError(f"Packet {self.packet_id}: DSCP {self.dscp} is not a 6-bit codepoint")

    @property
    def delay_us(self) -> SimTime | None:
        if self.delivered_at is None:
            return None
        return self.delivered_at - self.created_at


# ==============================================================================
# Links
# ==============================================================================
@dataclass(slots=True)
class Transmission:
    """One packet on a link. `finish` is when its last bit leaves the sender."""
    packet: Packet
    finish: SimTime
    arrival_at: SimTime
    handle: EventHandle | None = None


@dataclass
class Link:
    """
    Point-to-point segment: one packet in serialization at a time, then propagation.

    Normal packets are served FIFO. An expedited packet starts as soon as the
    expedited packets ahead of it are done; the normal packet it interrupts,
    and every normal packet queued behind, finish later by its serialization time.
    """
    name: str
    rate_bps: int
    prop_delay_us: SimTime
    busy_until: SimTime = 0
    expedited_until: SimTime = 0
    _pending: deque = field(default_factory=deque, repr=False)

    def __post_init__(self):
        if self.rate_bps <= 0:
            raise ValueError(f"Link '{self.name}': rate must be positive, got {self.rate_bps}")
        if self.prop_delay_us < 0:
            raise ValueError(f"Link '{self.name}': propagation delay must be >= 0, got {self.prop_delay_us}")

    def serialization_us(self, size_bytes: int) -> SimTime:
        # Rounded up to whole microseconds so that every packet occupies the link.
        return -(-size_bytes * 8 * config.US_PER_S // self.rate_bps)

    def transmit(self, packet: Packet, now: SimTime) -> SimTime:
        """
        Serializes `packet` behind whatever is already on the link.

        Returns:
            SimTime: Time at which the last bit reaches the far end.
        """
        transmission, _ = self.start_transmission(packet, now)
        return transmission.arrival_at

    def start_transmission(self, packet: Packet, now: SimTime) -> tuple[Transmission, list[Transmission]]:
        """
        Puts `packet` on the link.

        Returns:
            tuple: The packet's transmission, and the normal transmissions it
            pushed back (always empty for a normal packet).
        """
        while self._pending and self._pending[0].finish <= now:
            self._pending.popleft()
        serialization = self.serialization_us(packet.size_bytes)
        if not packet.expedited:
            start = max(now, self.busy_until)
            self.busy_until = start + serialization
            transmission = Transmission(packet, self.busy_until, self.busy_until + self.prop_delay_us)
            self._pending.append(transmission)
            return transmission, []

        start = max(now, self.expedited_until)
        self.expedited_until = start + serialization
        self.busy_until = max(self.busy_until, start) + serialization
        delayed = [tx for tx in self._pending if tx.finish > start]
        for tx in delayed:
            tx.finish += serialization
            tx.arrival_at += serialization
        return Transmission(packet, self.expedited_until, self.expedited_until + self.prop_delay_us), delayed


# ==============================================================================
# Expedited conformance
# ==============================================================================
class TokenBucket:
    """Byte token bucket, full at creation. Non-conforming packets take no tokens."""

    def __init__(self, rate_bps: int, depth_bytes: int, now: SimTime = 0):
        if rate_bps <= 0 or depth_bytes <= 0:
            raise ValueError(f"Token bucket needs a positive rate and depth, got {rate_bps} / {depth_bytes}")
        self.rate_bps = rate_bps
        self.depth_bytes = depth_bytes
        self.tokens = float(depth_bytes)
        self.updated_at = now

    def conforms(self, size_bytes: int, now: SimTime) -> bool:
        refill = (now - self.updated_at) * self.rate_bps / (8 * config.US_PER_S)
        self.tokens = min(float(self.depth_bytes), self.tokens + refill)
        self.updated_at = now
        if size_bytes > self.tokens:
            return False
        self.tokens -= size_bytes
        return True


class ConformanceMeter:
    """
    Flags LLT-marked downlink packets as expedited while their flow stays in profile.

    Each flow has its own bucket. A packet larger than the bucket depth can
    never conform, so bulk TCP segments carrying the codepoint are forwarded
    like any other traffic.
    """

    def __init__(self, llt_dscp: int = config.LLT_DSCP, rate_bps: int = config.EXPEDITED_RATE_BPS,
                 depth_bytes: int = config.EXPEDITED_BUCKET_BYTES):
        self.llt_dscp = llt_dscp
        self.rate_bps = rate_bps
        self.depth_bytes = depth_bytes
        self.expedited_by_flow: dict[str, int] = {}
        self._buckets: dict[str, TokenBucket] = {}

    def mark(self, packet: Packet, now: SimTime) -> bool:
        if packet.dscp != self.llt_dscp:
            return False
        bucket = self._buckets.get(packet.flow_id)
        if bucket is None:
            bucket = self._buckets[packet.flow_id] = TokenBucket(self.rate_bps, self.depth_bytes, now)
        packet.expedited = bucket.conforms(packet.size_bytes, now)
        if packet.expedited:
            self.expedited_by_flow[packet.flow_id] = self.expedited_by_flow.get(packet.flow_id, 0) + 1
        return packet.expedited


# ==============================================================================
# Bearer queues
# ==============================================================================
class EnqueueResult(Enum):
    ACCEPTED = "accepted"
    DROPPED = "dropped"


class BearerQueue:
    """
    Drop-tail buffer holding one UE's packets for one QCI.

    Expedited packets wait in their own FIFO lane, served before the normal
    lane; both lanes count against the same byte capacity.
    """

    def __init__(self, qci: int, capacity_bytes: int, ue_id: int = 0):
        if capacity_bytes <= 0:
            raise ValueError(f"QCI {qci} queue capacity must be positive, got {capacity_bytes}")
        self.qci = qci
        self.ue_id = ue_id
        self.capacity_bytes = capacity_bytes
        self.occupancy_bytes = 0
        self.enqueued = 0
        self.dequeued = 0
        self.dropped = 0
        self.max_occupancy_bytes = 0
        self.dscps_seen: set[int] = set()
        self._lanes: dict[bool, deque[Packet]] = {True: deque(), False: deque()}
        self._head_sent: dict[bool, int] = {True: 0, False: 0}  # bytes of a lane's head already on air

    def __len__(self) -> int:
        return len(self._lanes[True]) + len(self._lanes[False])

    def __iter__(self) -> Iterator[Packet]:
        """Queued packets in service order."""
        return itertools.chain(self._lanes[True], self._lanes[False])

    @property
    def residual(self) -> int:
        return len(self)

    @property
    def has_expedited(self) -> bool:
        return bool(self._lanes[True])

    def head(self, expedited: bool = False) -> Packet | None:
        lane = self._lanes[expedited]
        return lane[0] if lane else None

    def enqueue(self, packet: Packet) -> EnqueueResult:
        """Appends `packet` to its lane if it fits in the remaining byte capacity, else drops it."""
        if self.occupancy_bytes + packet.size_bytes > self.capacity_bytes:
            self.dropped += 1
            return EnqueueResult.DROPPED
        self._lanes[packet.expedited].append(packet)
        self.occupancy_bytes += packet.size_bytes
        self.enqueued += 1
        self.dscps_seen.add(packet.dscp)
        self.max_occupancy_bytes = max(self.max_occupancy_bytes, self.occupancy_bytes)
        return EnqueueResult.ACCEPTED

    def dequeue(self, expedited: bool = False) -> Packet:
        packet = self._lanes[expedited].popleft()
        self.occupancy_bytes -= packet.size_bytes
        self._head_sent[expedited] = 0
        self.dequeued += 1
        return packet

    def serve(self, byte_budget: int, expedited: bool = False) -> tuple[list[Packet], int]:
        """
        Sends up to `byte_budget` bytes from one lane.

        Whole packets leave in FIFO order. When the head packet does not fit in
        what is left, the remaining bytes are credited to it (radio
        segmentation); it is dequeued once its last byte is sent.

        Returns:
            tuple: Completed packets, and the unspent budget.
        """
        lane = self._lanes[expedited]
        served = []
        remaining = byte_budget
        while lane and remaining > 0:
            needed = lane[0].size_bytes - self._head_sent[expedited]
            if needed > remaining:
                self._head_sent[expedited] += remaining
                return served, 0
            remaining -= needed
            served.append(self.dequeue(expedited))
        return served, remaining

    @property
    def offered(self) -> int:
        return self.enqueued + self.dropped

    def is_conserved(self) -> bool:
        """Offered packets = dequeued + dropped + still queued."""
        return self.offered == self.dequeued + self.dropped + self.residual

    def stats(self) -> dict:
        return {
            "ue_id": self.ue_id,
            "qci": self.qci,
            "offered": self.offered,
            "enqueued": self.enqueued,
            "dequeued": self.dequeued,
            "dropped": self.dropped,
            "residual": self.residual,
            "max_occupancy_bytes": self.max_occupancy_bytes,
        }


# ==============================================================================
# Traffic Flow Templates
# ==============================================================================
class DuplicateTft(ValueError):
    """Raised when a second TFT is installed for the same (ue_id, dscp)."""


@dataclass(frozen=True)
class Tft:
    ue_id: int
    match_dscp: int
    target_qci: int


def classify(packet: Packet, tfts: Iterable[Tft], default_qci: int = config.QCI_DEFAULT) -> int:
    """
    Returns the QCI of the bearer that should carry `packet`.

    Unmatched traffic always falls to the default bearer.
    """
    for tft in tfts:
        if tft.ue_id == packet.ue_id and tft.match_dscp == packet.dscp:
            return tft.target_qci
    return default_qci


class TftSet:
    """Installed TFTs, at most one per (ue_id, dscp)."""

    def __init__(self, tfts: Iterable[Tft] = ()):
        self._by_key: dict[tuple[int, int], Tft] = {}
        for tft in tfts:
            self.install(tft)

    def __iter__(self) -> Iterator[Tft]:
        return iter(self._by_key.values())

    def __len__(self) -> int:
        return len(self._by_key)

    def install(self, tft: Tft):
        key = (tft.ue_id, tft.match_dscp)
        if key in self._by_key:
            raise DuplicateTft(f"A TFT for UE {tft.ue_id} / DSCP {tft.match_dscp} is already installed")
        self._by_key[key] = tft
        logger.debug(f"Installed TFT UE {tft.ue_id} DSCP {tft.match_dscp:#08b} -> QCI {tft.target_qci}")

    def remove(self, ue_id: int, dscp: int) -> bool:
        return self._by_key.pop((ue_id, dscp), None) is not None


# ==============================================================================
# Radio scheduler
# ==============================================================================
class UeContext:
    """Scheduler state for one UE: its two bearer queues and PF average throughput."""

    def __init__(self, ue_id: int, capacities: dict[int, int], initial_avg_bps: float):
        self.ue_id = ue_id
        self.queues = {qci: BearerQueue(qci, cap, ue_id) for qci, cap in capacities.items()}
        self.avg_throughput_bps = initial_avg_bps

    @property
    def backlogged(self) -> bool:
        return any(len(q) for q in self.queues.values())

    @property
    def has_expedited(self) -> bool:
        return any(q.has_expedited for q in self.queues.values())


class RanScheduler:
    """
    Proportional-fair TTI scheduler for the eNodeB downlink.

    Every TTI the whole budget (cell_rate * tti / 8 bytes) goes to the UE
    with the highest instantaneous_rate / T_i. There is no channel model, so
    every UE's instantaneous rate is the cell peak and the winner is the UE
    with the lowest T_i (lowest ue_id on ties). While any UE holds an
    expedited packet, only those UEs compete.
    """

    def __init__(self, tti_us: SimTime = config.TTI_US,
                 cell_rate_bps: int = config.CELL_RATE_BPS,
                 baseline_latency_us: SimTime = config.BASELINE_LATENCY_US,
                 capacities: dict[int, int] | None = None,
                 ewma_alpha: float = config.PF_EWMA_ALPHA,
                 initial_avg_bps: float = config.PF_INITIAL_AVG_BPS):
        if tti_us <= 0 or cell_rate_bps <= 0:
            raise ValueError("TTI and cell rate must be positive")
        self.tti = tti_us
        self.cell_rate_bps = cell_rate_bps
        self.baseline_latency = baseline_latency_us
        self.capacities = capacities or {
            config.QCI_LOW_LATENCY: config.QCI7_CAPACITY_BYTES,
            config.QCI_DEFAULT: config.QCI9_CAPACITY_BYTES,
        }
        # Strict priority: lower QCI index first, expedited lane before normal lane.
        self.service_order = [(qci, expedited) for qci in sorted(self.capacities) for expedited in (True, False)]
        self.ewma_alpha = ewma_alpha
        self.initial_avg_bps = initial_avg_bps
        self.ues: dict[int, UeContext] = {}
        self.tti_count = 0
        self.max_tti_bytes = 0
        self.bytes_served = 0

    @property
    def tti_budget_bytes(self) -> int:
        return self.cell_rate_bps * self.tti // (8 * config.US_PER_S)

    def add_ue(self, ue_id: int) -> UeContext:
        if ue_id not in self.ues:
            self.ues[ue_id] = UeContext(ue_id, self.capacities, self.initial_avg_bps)
        return self.ues[ue_id]

    def queue(self, ue_id: int, qci: int) -> BearerQueue:
        return self.ues[ue_id].queues[qci]

    def all_queues(self) -> list[BearerQueue]:
        return [q for ue_id in sorted(self.ues) for _, q in sorted(self.ues[ue_id].queues.items())]

    def backlogged_ues(self) -> set[int]:
        return {ue_id for ue_id, ctx in self.ues.items() if ctx.backlogged}

    def expedited_ues(self) -> set[int]:
        return {ue_id for ue_id, ctx in self.ues.items() if ctx.has_expedited}

    def pf_allocate(self, backlogged: set[int], expedited: set[int] | None = None) -> dict[int, int]:
        """
        Grants this TTI's byte budget to the proportional-fair winner.

        The winner is picked among `expedited` when it is non-empty, else among
        `backlogged`. T_i is updated for every UE: the winner averages in the
        granted rate, all others decay towards zero.

        Returns:
            dict: {ue_id: byte_budget}, empty when nobody is backlogged.
        """
        allocation: dict[int, int] = {}
        candidates = expedited or backlogged
        if candidates:
            winner = min(candidates, key=lambda ue: (self.ues[ue].avg_throughput_bps, ue))
            allocation[winner] = self.tti_budget_bytes
        for ue_id, ctx in self.ues.items():
            granted_bps = allocation.get(ue_id, 0) * 8 * config.US_PER_S / self.tti
            ctx.avg_throughput_bps = (1 - self.ewma_alpha) * ctx.avg_throughput_bps + self.ewma_alpha * granted_bps
        return allocation

    def serve_ue(self, ue_id: int, byte_budget: int, now: SimTime) -> list[Packet]:
        """
        Spends `byte_budget` on the UE's queues, QCI 7 before QCI 9.

        Inside each queue the expedited lane goes first. A head packet larger
        than what is left of the budget is credited with the remaining bytes
        and serving stops; it completes in a later grant.

        Returns:
            list[Packet]: Packets completed in this grant, in transmission order.
        """
        if byte_budget <= 0:
            raise ValueError(f"serve_ue needs a positive budget, got {byte_budget}")
        served: list[Packet] = []
        remaining = byte_budget
        ctx = self.ues[ue_id]
        for qci, expedited in self.service_order:
            completed, remaining = ctx.queues[qci].serve(remaining, expedited)
            served.extend(completed)
            if remaining == 0:
                break
        sent = byte_budget - remaining
        self.bytes_served += sent
        self.max_tti_bytes = max(self.max_tti_bytes, sent)
        return served

    def tick(self, now: SimTime) -> list[tuple[SimTime, Packet]]:
        """
        Runs one TTI: allocation followed by serving.

        Returns:
            list: (delivery_time, packet) pairs, delivery = now + baseline latency.
        """
        self.tti_count += 1
        allocation = self.pf_allocate(self.backlogged_ues(), self.expedited_ues())
        deliveries = []
        for ue_id, budget in allocation.items():
            for packet in self.serve_ue(ue_id, budget, now):
                deliveries.append((now + self.baseline_latency, packet))
        return deliveries


# ==============================================================================
# eNodeB and path wiring
# ==============================================================================
class Enodeb:
    """Classifies arriving downlink packets onto bearers and runs the TTI clock."""

    def __init__(self, engine: SimEngine, scheduler: RanScheduler, tfts: TftSet,
                 deliver: Callable[[Packet], None], default_qci: int = config.QCI_DEFAULT):
        self.engine = engine
        self.scheduler = scheduler
        self.tfts = tfts
        self.default_qci = default_qci
        self._deliver = deliver
        self.drops_by_flow: dict[str, int] = {}
        self.qci_by_flow: dict[str, int] = {}

    def start(self):
        self.engine.start_process(self._tti_clock())

    def _tti_clock(self):
        while True:
            for delivery_at, packet in self.scheduler.tick(self.engine.now):
                self.engine.schedule(delivery_at, lambda p=packet: self._deliver(p))
            yield self.engine.env.timeout(self.scheduler.tti)

    def receive(self, packet: Packet) -> EnqueueResult:
        if packet.ue_id not in self.scheduler.ues:
            raise KeyError(f"UE {packet.ue_id} is not attached to this eNodeB")
        qci = classify(packet, self.tfts, self.default_qci)
        self.qci_by_flow.setdefault(packet.flow_id, qci)
        result = self.scheduler.queue(packet.ue_id, qci).enqueue(packet)
        if result is EnqueueResult.DROPPED:
            self.drops_by_flow[packet.flow_id] = self.drops_by_flow.get(packet.flow_id, 0) + 1
            logger.debug(f"t={self.engine.now} drop {packet.flow_id} #{packet.seq} at UE {packet.ue_id} QCI {qci}")
        return result


class Network:
    """
    Downlink path (links in series, then the eNodeB) and the ideal uplink.

    Endpoints register a handler per flow id; delivered packets are stamped
    with `delivered_at` and handed to that handler. When a `meter` is given,
    downlink packets pass it before the first link.
    """

    def __init__(self, engine: SimEngine, links: Sequence[Link], scheduler: RanScheduler, tfts: TftSet,
                 default_qci: int = config.QCI_DEFAULT, meter: ConformanceMeter | None = None):
        self.engine = engine
        self.links = list(links)
        self.meter = meter
        self.enodeb = Enodeb(engine, scheduler, tfts, self._deliver_to_ue, default_qci)
        self.uplink_latency_us = sum(link.prop_delay_us for link in self.links) + scheduler.baseline_latency
        self._endpoints: dict[str, Callable[[Packet], None]] = {}

    def register_endpoint(self, flow_id: str, handler: Callable[[Packet], None]):
        self._endpoints[flow_id] = handler

    def start(self):
        self.enodeb.start()

    def send_downlink(self, packet: Packet):
        if self.meter is not None:
            self.meter.mark(packet, self.engine.now)
        self._forward(packet, 0)

    def _forward(self, packet: Packet, hop: int):
        if hop == len(self.links):
            self.enodeb.receive(packet)
            return
        transmission, delayed = self.links[hop].start_transmission(packet, self.engine.now)
        for other in delayed:
            other.handle.cancel()
            self._schedule_arrival(other, hop)
        self._schedule_arrival(transmission, hop)

    def _schedule_arrival(self, transmission: Transmission, hop: int):
        packet = transmission.packet
        transmission.handle = self.engine.schedule(transmission.arrival_at, lambda: self._forward(packet, hop + 1))

    def send_uplink(self, packet: Packet, handler: Callable[[Packet], None]):
        def arrive():
            packet.delivered_at = self.engine.now
            handler(packet)
        self.engine.schedule(self.engine.now + self.uplink_latency_us, arrive)

    def _deliver_to_ue(self, packet: Packet):
        packet.delivered_at = self.engine.now
        handler = self._endpoints.get(packet.flow_id)
        if handler is None:
            logger.warning(f"No endpoint for flow '{packet.flow_id}'; packet {packet.packet_id} discarded")
            return
        handler(packet)
