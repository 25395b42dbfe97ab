import os
import tempfile
import unittest

from metrics import FlowReport
from report_writer import (CSV_COLUMNS, IoError, ReportError, csv_name, emit_reports, group_name, summarize)
from scenarios import ReportSet


def make_report_set(arm="control", seed=1, cheater_retx=0, delay=15.0, scenario="exp2", experiment="exp2",
                    stream="audio", n_marked=None, flows=None):
    flows = flows or [
        FlowReport("tcp-honest", 0, "tcp", qci=9, goodput_mbps=2.1, retransmissions=0),
        FlowReport("tcp-cheater", 1, "tcp", qci=7 if arm == "experiment" else 9, goodput_mbps=2.0,
                   retransmissions=cheater_retx, drops=cheater_retx),
        FlowReport("cbr-cheater", 1, "cbr", qci=7, delay_mean=delay, delay_min=4.0, delay_max=9.0,
                   delay_stddev=1.156, delay_min_ms_rounded=4, delay_max_ms_rounded=9, jitter=0.5,
                   packets_sent=500, packets_received=500),
    ]
    return ReportSet(scenario=scenario, experiment=experiment, arm=arm, seed=seed, stream=stream, n_marked=n_marked,
                     flow_reports=flows, queue_stats=[], max_tti_bytes=550, tti_budget_bytes=550,
                     executed_events=1000, conservation_ok=True)


def exp3_report_set(n_marked, seed=1):
    flows = []
    for ue in range(4):
        marked = ue < n_marked
        flows.append(FlowReport(f"tcp-{ue}", ue, "tcp", qci=9, goodput_mbps=1.0, retransmissions=0))
        flows.append(FlowReport(f"cbr-{ue}", ue, "cbr", qci=7 if marked else 9,
                                delay_mean=10.0 if marked else 200.0, jitter=1.0 if marked else 4.0))
    return make_report_set(arm="experiment" if n_marked else "control", seed=seed, scenario=f"exp3_audio_m{n_marked}",
                           experiment="exp3", n_marked=n_marked, flows=flows)


class TestNaming(unittest.TestCase):

    def test_csv_name(self):
        self.assertEqual(csv_name(make_report_set(arm="experiment", seed=3)), "exp2_experiment_3.csv")

    def test_exp3_runs_share_a_group(self):
        self.assertEqual(group_name(exp3_report_set(0)), "exp3_audio")
        self.assertEqual(group_name(exp3_report_set(2)), "exp3_audio")
        self.assertEqual(group_name(make_report_set()), "exp2")


class TestSummaries(unittest.TestCase):

    def test_arm_comparison_has_percent_change(self):
        text = summarize([make_report_set("control", delay=10.0), make_report_set("experiment", delay=5.0)])["exp2"]
        self.assertIn("% change", text)
        self.assertIn("-50.00%", text)
        self.assertIn("tcp-cheater", text)
        self.assertIn("tcp-honest", text)

    def test_zero_baseline_is_not_available(self):
        with self.assertLogs("report_writer", level="WARNING"):
            text = summarize([make_report_set("control", cheater_retx=0),
                              make_report_set("experiment", cheater_retx=140)])["exp2"]
        self.assertIn("n/a", text)
        self.assertIn("140.000", text)

    def test_retransmission_increase(self):
        text = summarize([make_report_set("control", cheater_retx=25),
                          make_report_set("experiment", cheater_retx=140)])["exp2"]
        self.assertIn("+460.00%", text)

    def test_seeds_are_averaged(self):
        text = summarize([make_report_set("control", seed=1, delay=10.0), make_report_set("control", seed=2, delay=20.0),
                          make_report_set("experiment", seed=1, delay=15.0),
                          make_report_set("experiment", seed=2, delay=15.0)])["exp2"]
        self.assertIn("seeds 1, 2", text)
        self.assertIn("+0.00%", text)

    def test_sweep_summary(self):
        text = summarize([exp3_report_set(0), exp3_report_set(2)])["exp3_audio"]
        self.assertIn("marked delay", text)
        self.assertIn("0.050", text)  # 10 ms marked / 200 ms unmarked at n_marked = 2
        self.assertIn("n/a", text)    # no marked UEs at n_marked = 0


class TestEmitReports(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = self.tmp.name

    def tearDown(self):
        self.tmp.cleanup()

    def test_writes_one_csv_per_run_and_a_summary(self):
        sets = [make_report_set("control"), make_report_set("experiment")]
        paths = emit_reports(sets, self.out)
        names = [os.path.basename(p) for p in paths]
        self.assertEqual(names, ["exp2_control_1.csv", "exp2_experiment_1.csv", "exp2_summary.txt"])
        with open(os.path.join(self.out, "exp2_control_1.csv"), encoding="utf-8") as f:
            lines = f.read().splitlines()
        self.assertEqual(lines[0], ",".join(CSV_COLUMNS))
        self.assertEqual(len(lines), 4)  # header plus one row per flow
        self.assertEqual(sum(line.startswith("scenario") for line in lines), 1)

    def test_csv_row_format(self):
        emit_reports([make_report_set("control")], self.out)
        with open(os.path.join(self.out, "exp2_control_1.csv"), encoding="utf-8") as f:
            rows = [line.split(",") for line in f.read().splitlines()[1:]]
        cbr = dict(zip(CSV_COLUMNS, rows[2]))
        self.assertEqual(cbr["flow_id"], "cbr-cheater")
        self.assertEqual(cbr["delay_mean"], "15.000000")
        self.assertEqual(cbr["qci"], "7")
        self.assertEqual(cbr["retransmissions"], "")
        tcp = dict(zip(CSV_COLUMNS, rows[0]))
        self.assertEqual(tcp["retransmissions"], "0")
        self.assertEqual(tcp["delay_mean"], "")

    def test_output_is_byte_identical_across_emissions(self):
        sets = [make_report_set("control"), make_report_set("experiment", cheater_retx=9)]
        first = os.path.join(self.out, "a")
        second = os.path.join(self.out, "b")
        for a, b in zip(emit_reports(sets, first), emit_reports(sets, second)):
            with open(a, "rb") as fa, open(b, "rb") as fb:
                self.assertEqual(fa.read(), fb.read())

    def test_exp3_scatter_file(self):
        paths = emit_reports([exp3_report_set(0), exp3_report_set(2)], self.out)
        self.assertIn("exp3_audio_scatter.csv", [os.path.basename(p) for p in paths])
        with open(os.path.join(self.out, "exp3_audio_scatter.csv"), encoding="utf-8") as f:
            lines = f.read().splitlines()
        self.assertEqual(lines[0], "n_marked,seed,ue_id,marked,delay_mean,jitter")
        self.assertEqual(len(lines), 1 + 8)
        self.assertEqual(sum(",True," in line for line in lines), 2)

    def test_empty_report_sets(self):
        target = os.path.join(self.out, "never")
        with self.assertRaises(ReportError):
            emit_reports([], target)
        self.assertFalse(os.path.exists(target))

    def test_unwritable_output(self):
        blocker = os.path.join(self.out, "file")
        with open(blocker, "w") as f:
            f.write("not a directory")
        with self.assertLogs("report_writer", level="ERROR"):
            with self.assertRaises(IoError):
                emit_reports([make_report_set()], blocker)


if __name__ == '__main__':
    unittest.main()
