import math
import unittest

import numpy as np

from metrics import (TooFewSamples, ZeroBaseline, ZeroWindow, cbr_flow_report, delay_stats, goodput, jitter,
                     percent_change, tcp_flow_report)


def direct_jitter(series):
    total = 0.0
    for i in range(len(series) - 1):
        total += abs(series[i + 1] - series[i])
    return total / (len(series) - 1)


class TestJitter(unittest.TestCase):

    def test_examples(self):
        self.assertEqual(jitter([5, 5, 5, 5]), 0.0)
        self.assertEqual(jitter([4, 6, 4]), 2.0)
        self.assertEqual(jitter([1, 2, 3, 4]), 1.0)

    def test_too_few_samples(self):
        with self.assertRaises(TooFewSamples):
            jitter([3.0])
        with self.assertRaises(TooFewSamples):
            jitter([])

    def test_matches_direct_summation_on_random_series(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            series = list(rng.uniform(0, 50, size=int(rng.integers(2, 200))))
            self.assertTrue(math.isclose(jitter(series), direct_jitter(series), rel_tol=1e-12, abs_tol=1e-12))

    def test_shift_invariance(self):
        rng = np.random.default_rng(3)
        series = list(rng.uniform(0, 20, size=100))
        shifted = [d + 7.5 for d in series]
        self.assertAlmostEqual(jitter(series), jitter(shifted), places=9)

    def test_arithmetic_progression(self):
        for step in (0.5, 2.0, -1.25):
            series = [10 + step * i for i in range(40)]
            self.assertAlmostEqual(jitter(series), abs(step), places=12)


class TestDelayStats(unittest.TestCase):

    def test_example(self):
        stats = delay_stats([4, 5, 9])
        self.assertEqual((stats.mean, stats.min, stats.max), (6.0, 4.0, 9.0))
        self.assertAlmostEqual(stats.stddev, math.sqrt(((4 - 6) ** 2 + (5 - 6) ** 2 + (9 - 6) ** 2) / 3))

    def test_single_sample(self):
        self.assertEqual(tuple(delay_stats([7])), (7.0, 7.0, 7.0, 0.0))

    def test_empty_series(self):
        with self.assertRaises(TooFewSamples):
            delay_stats([])

    def test_agrees_with_streaming_computation(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            series = list(rng.uniform(1, 300, size=500))
            # Welford's single-pass mean and population variance
            n, mean, m2 = 0, 0.0, 0.0
            for d in series:
                n += 1
                delta = d - mean
                mean += delta / n
                m2 += delta * (d - mean)
            stats = delay_stats(series)
            self.assertTrue(math.isclose(stats.mean, mean, rel_tol=1e-9))
            self.assertTrue(math.isclose(stats.stddev, math.sqrt(m2 / n), rel_tol=1e-9))
            self.assertLessEqual(stats.min, stats.mean)
            self.assertLessEqual(stats.mean, stats.max)


class TestGoodputAndChange(unittest.TestCase):

    def test_goodput(self):
        self.assertAlmostEqual(goodput(1_250_000, 0, 1_000_000), 10.0)
        self.assertEqual(goodput(0, 0, 1_000_000), 0.0)

    def test_zero_window(self):
        with self.assertRaises(ZeroWindow):
            goodput(100, 5, 5)
        with self.assertRaises(ZeroWindow):
            goodput(100, 6, 5)

    def test_goodput_ignores_segmentation(self):
        self.assertEqual(goodput(10 * 1340, 0, 500_000), goodput(5 * 2680, 0, 500_000))

    def test_percent_change(self):
        self.assertEqual(percent_change(100, 100), 0.0)
        self.assertAlmostEqual(percent_change(25, 140), 460.0)
        self.assertAlmostEqual(percent_change(2.0, 1.5), -25.0)

    def test_percent_change_zero_baseline(self):
        with self.assertRaises(ZeroBaseline):
            percent_change(0, 10)


class TestFlowReports(unittest.TestCase):

    def test_cbr_report(self):
        report = cbr_flow_report("cbr-0", 0, [4.4, 5.6, 9.2], sent=4, drops=1, qci=7)
        self.assertEqual(report.kind, "cbr")
        self.assertAlmostEqual(report.delay_mean, 6.4)
        self.assertEqual((report.delay_min_ms_rounded, report.delay_max_ms_rounded), (4, 9))
        self.assertAlmostEqual(report.jitter, (1.2 + 3.6) / 2)
        self.assertEqual((report.packets_sent, report.packets_received, report.drops), (4, 3, 1))
        self.assertIsNone(report.goodput_mbps)

    def test_cbr_report_without_deliveries(self):
        report = cbr_flow_report("cbr-0", 0, [], sent=10, drops=10)
        self.assertIsNone(report.delay_mean)
        self.assertIsNone(report.jitter)

    def test_tcp_report(self):
        report = tcp_flow_report("tcp-0", 0, 1_250_000, 0, 1_000_000, retransmissions=3, drops=2, sent=940, qci=9)
        self.assertAlmostEqual(report.goodput_mbps, 10.0)
        self.assertEqual(report.retransmissions, 3)
        self.assertIsNone(report.delay_mean)

    def test_tcp_report_with_nothing_delivered(self):
        report = tcp_flow_report("tcp-0", 0, 0, 0, None, retransmissions=0, drops=0, sent=1)
        self.assertEqual(report.goodput_mbps, 0.0)

    def test_tcp_report_carries_recovery_counters(self):
        report = tcp_flow_report("tcp-0", 0, 1_340, 0, 1_000, retransmissions=5, drops=4, sent=12, qci=7,
                                 fast_retransmits=1, timeouts=3, duplicate_segments=2)
        self.assertEqual((report.fast_retransmits, report.timeouts, report.duplicate_segments), (1, 3, 2))
        self.assertEqual(report.expedited_packets, 0)

    def test_cbr_report_counts_expedited_packets(self):
        report = cbr_flow_report("cbr-0", 0, [5.0, 5.0], sent=2, drops=0, qci=7, expedited=2)
        self.assertEqual(report.expedited_packets, 2)
        self.assertIsNone(report.timeouts)


if __name__ == '__main__':
    unittest.main()
