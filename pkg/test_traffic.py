import unittest

import config
from net_model import Link, Network, Packet, PacketKind, RanScheduler, TftSet
from sim_engine import SimEngine
from traffic import (BadProfile, CbrFlow, CbrSource, FlowStarted, FlowTable, TcpFlow, TcpReceiver, TcpSender,
                     TcpState, cbr_emit_schedule)

MSS = config.TCP_MSS_BYTES


def make_network(engine, n_ues=1, capacities=None):
    scheduler = RanScheduler(capacities=capacities)
    for ue in range(n_ues):
        scheduler.add_ue(ue)
    links = [Link("sgi", config.SGI_RATE_BPS, config.SGI_PROP_DELAY_US),
             Link("s5s8", config.CORE_RATE_BPS, 0), Link("s1", config.CORE_RATE_BPS, 0)]
    return Network(engine, links, scheduler, TftSet())


class TestCbrSchedule(unittest.TestCase):

    def test_audio_schedule(self):
        src = CbrSource("a", 0, 200, 50, start_at=1_000_000, duration=10_000_000)
        schedule = cbr_emit_schedule(src)
        self.assertEqual(len(schedule), 500)
        self.assertEqual(schedule[0][0], 1_000_000)
        self.assertEqual(schedule[1][0], 1_020_000)
        self.assertEqual(schedule[-1][0], 1_000_000 + 499 * 20_000)
        self.assertEqual(src.ip_bandwidth_bps, 80_000)

    def test_video_schedule(self):
        src = CbrSource("v", 0, 110, 400, start_at=0, duration=10_000_000)
        schedule = cbr_emit_schedule(src)
        self.assertEqual(len(schedule), 4000)
        self.assertEqual(schedule[1][0] - schedule[0][0], 2_500)
        self.assertEqual(src.ip_bandwidth_bps, 352_000)

    def test_non_dividing_rate_has_no_drift(self):
        schedule = cbr_emit_schedule(CbrSource("x", 0, 100, 3, start_at=0, duration=1_000_000))
        self.assertEqual([t for t, _ in schedule], [0, 333_333, 666_666])

    def test_packets_carry_sequence_and_timestamp(self):
        schedule = cbr_emit_schedule(CbrSource("a", 2, 200, 50, start_at=0, duration=100_000, dscp=1))
        for k, (t, packet) in enumerate(schedule):
            self.assertEqual((packet.seq, packet.created_at, packet.ue_id, packet.dscp), (k, t, 2, 1))

    def test_zero_rate_rejected(self):
        with self.assertRaises(BadProfile):
            cbr_emit_schedule(CbrSource("a", 0, 200, 0, start_at=0, duration=1_000_000))
        with self.assertRaises(BadProfile):
            cbr_emit_schedule(CbrSource("a", 0, 0, 50, start_at=0, duration=1_000_000))


class TestTcpSender(unittest.TestCase):

    def test_slow_start_opens_window_per_ack(self):
        sender = TcpSender()
        first = sender.start(0)
        self.assertEqual([s.seq for s in first], [0])
        more = sender.on_ack(MSS, 100_000)
        self.assertEqual(sender.cwnd, 2 * MSS)
        self.assertEqual([s.seq for s in more], [MSS, 2 * MSS])
        self.assertIs(sender.state, TcpState.SLOW_START)

    def test_rtt_sample_sets_clamped_rto(self):
        sender = TcpSender()
        sender.start(0)
        sender.on_ack(MSS, 100_000)
        self.assertEqual(sender.srtt, 100_000)
        self.assertEqual(sender.rto, 300_000)

    def test_rto_never_below_minimum(self):
        sender = TcpSender()
        sender.start(0)
        sender.on_ack(MSS, 10_000)
        self.assertEqual(sender.rto, config.TCP_MIN_RTO_US)

    def test_three_duplicate_acks_trigger_fast_retransmit(self):
        sender = TcpSender(initial_cwnd_segments=10)
        sender.start(0)
        sender.on_ack(MSS, 1_000)
        self.assertEqual(sender.cwnd, 11 * MSS)
        self.assertEqual(sender.on_ack(MSS, 2_000), [])
        self.assertEqual(sender.on_ack(MSS, 2_100), [])
        segments = sender.on_ack(MSS, 2_200)
        self.assertEqual(len(segments), 1)
        self.assertEqual(segments[0].seq, MSS)
        self.assertTrue(segments[0].retransmission)
        self.assertEqual(sender.ssthresh, 11 * MSS // 2)
        self.assertEqual(sender.cwnd, 11 * MSS // 2 + 3 * MSS)
        self.assertIs(sender.state, TcpState.FAST_RECOVERY)
        self.assertEqual(sender.retransmit_count, 1)
        self.assertEqual(sender.fast_retransmits, 1)

    def test_new_ack_ends_fast_recovery(self):
        sender = TcpSender(initial_cwnd_segments=10)
        sender.start(0)
        sender.on_ack(MSS, 1_000)
        for t in (2_000, 2_100, 2_200, 2_300):
            sender.on_ack(MSS, t)
        self.assertEqual(sender.cwnd, 11 * MSS // 2 + 4 * MSS)  # inflated by the fourth dup ack
        sender.on_ack(4 * MSS, 3_000)
        self.assertEqual(sender.cwnd, sender.ssthresh)
        self.assertIs(sender.state, TcpState.CONGESTION_AVOIDANCE)
        self.assertEqual(sender.dup_ack_count, 0)

    def test_timeout_collapses_window_and_goes_back(self):
        sender = TcpSender()
        sender.start(0)
        segments = sender.on_timeout(1_000_000)
        self.assertEqual([s.seq for s in segments], [0])
        self.assertTrue(segments[0].retransmission)
        self.assertEqual(sender.cwnd, MSS)
        self.assertEqual(sender.ssthresh, 2 * MSS)
        self.assertEqual(sender.rto, 2 * config.TCP_INITIAL_RTO_US)
        self.assertEqual(sender.timeouts, 1)
        self.assertEqual(sender.retransmit_count, 1)

    def test_backoff_is_capped(self):
        sender = TcpSender(initial_rto_us=40_000_000)
        sender.start(0)
        sender.on_timeout(40_000_000)
        self.assertEqual(sender.rto, config.TCP_MAX_RTO_US)

    def test_retransmitted_segment_is_not_timed(self):
        sender = TcpSender()
        sender.start(0)
        sender.on_timeout(1_000_000)
        sender.on_ack(MSS, 1_050_000)
        self.assertIsNone(sender.srtt)

    def test_timeout_with_nothing_outstanding_is_ignored(self):
        sender = TcpSender()
        self.assertEqual(sender.on_timeout(0), [])
        self.assertEqual(sender.timeouts, 0)

    def test_stale_ack_is_ignored(self):
        sender = TcpSender()
        sender.start(0)
        sender.on_ack(MSS, 10_000)
        self.assertEqual(sender.on_ack(0, 11_000), [])
        self.assertEqual((sender.highest_acked, sender.dup_ack_count), (MSS, 0))

    def test_congestion_avoidance_grows_less_than_one_mss_per_ack(self):
        sender = TcpSender(initial_cwnd_segments=4, initial_ssthresh_bytes=4 * MSS)
        sender.start(0)
        sender.on_ack(MSS, 1_000)
        self.assertIs(sender.state, TcpState.CONGESTION_AVOIDANCE)
        before = sender.cwnd
        sender.on_ack(2 * MSS, 2_000)
        self.assertEqual(sender.cwnd, before + MSS * MSS // before)


class TestTcpReceiver(unittest.TestCase):

    def test_in_order_delivery(self):
        receiver = TcpReceiver()
        self.assertEqual(receiver.on_segment(0, MSS, 10), MSS)
        self.assertEqual(receiver.on_segment(MSS, MSS, 20), 2 * MSS)
        self.assertEqual((receiver.first_delivery_at, receiver.last_delivery_at), (10, 20))

    def test_out_of_order_segment_is_buffered_until_gap_fills(self):
        receiver = TcpReceiver()
        self.assertEqual(receiver.on_segment(MSS, MSS, 10), 0)
        self.assertEqual(receiver.on_segment(2 * MSS, MSS, 20), 0)
        self.assertEqual(receiver.on_segment(0, MSS, 30), 3 * MSS)
        self.assertEqual(receiver.delivered_bytes, 3 * MSS)

    def test_duplicate_segment_counted(self):
        receiver = TcpReceiver()
        receiver.on_segment(0, MSS, 10)
        self.assertEqual(receiver.on_segment(0, MSS, 20), MSS)
        self.assertEqual(receiver.duplicate_segments, 1)


class TestFlows(unittest.TestCase):

    def setUp(self):
        self.engine = SimEngine()
        self.network = make_network(self.engine)
        self.flows = FlowTable()

    def test_set_flow_marking(self):
        cbr = CbrFlow(CbrSource("cbr", 0, 200, 50, 1_000_000, 1_000_000), self.engine, self.network)
        self.flows.add(cbr)
        self.flows.set_flow_marking("cbr", config.LLT_DSCP)
        self.assertEqual(cbr.source.dscp, config.LLT_DSCP)
        with self.assertRaises(KeyError):
            self.flows.set_flow_marking("missing", 1)
        with self.assertRaises(ValueError):
            self.flows.set_flow_marking("cbr", 64)

    def test_marking_is_fixed_once_the_flow_started(self):
        tcp = TcpFlow("tcp", 0, self.engine, self.network)
        self.flows.add(tcp)
        self.flows.start_all()
        self.engine.run_until(0)
        self.assertTrue(tcp.started)
        with self.assertRaises(FlowStarted):
            self.flows.set_flow_marking("tcp", config.LLT_DSCP)

    def test_duplicate_flow_id_rejected(self):
        self.flows.add(TcpFlow("tcp", 0, self.engine, self.network))
        with self.assertRaises(ValueError):
            self.flows.add(TcpFlow("tcp", 0, self.engine, self.network))

    def test_cbr_flow_delivers_every_packet_uncontended(self):
        cbr = CbrFlow(CbrSource("cbr", 0, 200, 50, 1_000_000, 1_000_000), self.engine, self.network)
        self.flows.add(cbr)
        self.network.start()
        self.flows.start_all()
        self.engine.run_until(3_000_000)
        self.assertEqual(cbr.emitted, 50)
        self.assertEqual(cbr.sink.received, 50)
        self.assertEqual(cbr.sink.sequence, list(range(50)))
        self.assertEqual(set(cbr.sink.delays_ms()), {5.0})

    def test_greedy_download_stays_below_cell_peak(self):
        tcp = TcpFlow("tcp", 0, self.engine, self.network)
        self.flows.add(tcp)
        self.network.start()
        self.flows.start_all()
        self.engine.run_until(3_000_000)
        delivered = tcp.receiver.delivered_bytes
        self.assertGreater(delivered, 0)
        self.assertEqual(delivered % MSS, 0)
        mbps = delivered * 8 / (tcp.receiver.last_delivery_at - tcp.first_sent_at)
        self.assertLessEqual(mbps, config.CELL_RATE_BPS / 1e6)


def make_ack(seq, now):
    return Packet(packet_id=0, flow_id="tcp", ue_id=0, size_bytes=config.TCP_ACK_BYTES, dscp=0, created_at=now,
                  kind=PacketKind.TCP_ACK, seq=seq)


class TestTcpFlowTimer(unittest.TestCase):

    def setUp(self):
        self.engine = SimEngine()
        # TTI clock not started: data stays queued at the eNodeB and ACKs are injected by hand.
        self.flow = TcpFlow("tcp", 0, self.engine, make_network(self.engine), initial_cwnd_segments=10)
        self.flow.start()
        self.engine.run_until(0)

    def inject_ack(self, seq, at):
        self.engine.schedule(at, lambda: self.flow._on_ack(make_ack(seq, at)))
        self.engine.run_until(at)

    def test_timer_armed_on_first_send(self):
        self.assertEqual(self.flow._rto_timer.fire_at, config.TCP_INITIAL_RTO_US)

    def test_new_ack_restarts_timer(self):
        self.inject_ack(MSS, 100_000)
        self.assertEqual(self.flow.sender.rto, 300_000)
        self.assertEqual(self.flow._rto_timer.fire_at, 400_000)

    def test_fast_retransmit_restarts_timer(self):
        self.inject_ack(MSS, 100_000)
        for at in (200_000, 250_000, 300_000):
            self.inject_ack(MSS, at)
        self.assertEqual(self.flow.sender.fast_retransmits, 1)
        self.assertEqual(self.flow._rto_timer.fire_at, 600_000)
        self.engine.run_until(500_000)
        self.assertEqual(self.flow.sender.timeouts, 0)

    def test_duplicate_ack_alone_keeps_the_deadline(self):
        self.inject_ack(MSS, 100_000)
        self.inject_ack(MSS, 200_000)
        self.assertEqual(self.flow._rto_timer.fire_at, 400_000)
        self.engine.run_until(400_000)
        self.assertEqual(self.flow.sender.timeouts, 1)


class AuditedSender(TcpSender):
    """Records (bytes_in_flight, cwnd, segments sent) after every window fill."""

    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        self.fills: list[tuple[int, int, int]] = []

    def _fill_window(self, now):
        segments = super()._fill_window(now)
        self.fills.append((self.bytes_in_flight, self.cwnd, len(segments)))
        return segments


class LoggedReceiver(TcpReceiver):
    """Records rcv_nxt after every segment."""

    def __init__(self):
        super().__init__()
        self.acks: list[int] = []

    def on_segment(self, seq, length, now):
        ack = super().on_segment(seq, length, now)
        self.acks.append(ack)
        return ack


class TestTcpOverBearerBuffers(unittest.TestCase):

    def run_download(self, capacities, duration=10_000_000):
        engine = SimEngine()
        network = make_network(engine, capacities=capacities)
        flow = TcpFlow("tcp", 0, engine, network)
        flow.sender = AuditedSender()
        flow.receiver = LoggedReceiver()
        network.start()
        flow.start()
        engine.run_until(duration)
        return flow, network

    def test_shallow_buffer_forces_retransmissions(self):
        flow, network = self.run_download({config.QCI_LOW_LATENCY: 1_650, config.QCI_DEFAULT: 20_000})
        self.assertGreater(network.enodeb.drops_by_flow["tcp"], 0)
        self.assertGreater(flow.sender.retransmit_count, 0)

    def test_retransmit_count_matches_send_log_replay(self):
        flow, _ = self.run_download({config.QCI_LOW_LATENCY: 1_650, config.QCI_DEFAULT: 20_000})
        highest_sent = 0
        replayed = 0
        for _, seq in flow.sender.send_log:
            if seq < highest_sent:
                replayed += 1
            highest_sent = max(highest_sent, seq + MSS)
        self.assertEqual(replayed, flow.sender.retransmit_count)
        self.assertEqual(flow.sender.retransmit_count, len(flow.sender.send_log) - highest_sent // MSS)

    def test_sender_always_fills_its_window(self):
        flow, _ = self.run_download({config.QCI_LOW_LATENCY: 1_650, config.QCI_DEFAULT: 20_000})
        self.assertGreater(len(flow.sender.fills), 100)
        for in_flight, cwnd, sent in flow.sender.fills:
            self.assertGreater(in_flight + MSS, cwnd)
            if sent:
                self.assertLessEqual(in_flight, cwnd)
                self.assertEqual(in_flight, cwnd // MSS * MSS)

    def test_delivery_is_gap_free_and_in_order_despite_losses(self):
        flow, _ = self.run_download({config.QCI_LOW_LATENCY: 1_650, config.QCI_DEFAULT: 20_000})
        acks = flow.receiver.acks
        self.assertTrue(acks)
        self.assertEqual(acks, sorted(acks))
        self.assertTrue(all(ack % MSS == 0 for ack in acks))
        self.assertEqual(flow.receiver.delivered_bytes, acks[-1])
        self.assertGreater(flow.receiver.duplicate_segments + flow.sender.retransmit_count, 0)

    def test_unbounded_buffers_never_lose(self):
        flow, network = self.run_download({config.QCI_LOW_LATENCY: 10 ** 9, config.QCI_DEFAULT: 10 ** 9})
        self.assertEqual(network.enodeb.drops_by_flow, {})
        self.assertEqual(flow.sender.retransmit_count, 0)
        self.assertEqual(flow.sender.timeouts, 0)
        self.assertEqual(flow.receiver.duplicate_segments, 0)


if __name__ == '__main__':
    unittest.main()
