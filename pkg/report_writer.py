# -*- coding: utf-8 -*-
"""
Report Writer Module.

Turns ReportSets into files:

- one CSV per scenario run, `<scenario>_<arm>_<seed>.csv`, with the fixed
  CSV_COLUMNS order;
- one summary table per experiment group, `<group>_summary.txt`, comparing
  the control and experiment arms (averaged over seeds) with a percent
  change column;
- for exp3, the per-UE scatter data `<group>_scatter.csv`.
"""
import logging
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

import config
from metrics import ZeroBaseline, percent_change
from scenarios import ReportSet

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["scenario", "arm", "seed", "flow_id", "ue_id", "qci", "delay_mean", "delay_min", "delay_max",
               "delay_stddev", "jitter", "goodput_mbps", "retransmissions", "drops"]
INT_COLUMNS = ["seed", "ue_id", "qci", "retransmissions", "drops"]
SCATTER_COLUMNS = ["n_marked", "seed", "ue_id", "marked", "delay_mean", "jitter"]
SUMMARY_METRICS = ["delay_mean", "delay_min", "delay_max", "delay_stddev", "jitter", "goodput_mbps",
                   "retransmissions", "drops"]
FLOAT_FORMAT = "%.6f"
NOT_AVAILABLE = "n/a"


class ReportError(Exception):
    """Base class for report emission errors."""


class IoError(ReportError):
    """Raised when an output path cannot be written."""


def csv_name(report_set: ReportSet) -> str:
    return f"{report_set.scenario}_{report_set.arm}_{report_set.seed}.csv"


def group_name(report_set: ReportSet) -> str:
    """exp3 runs of one stream share a group across n_marked values; other scenarios are their own group."""
    if report_set.experiment == "exp3":
        return f"exp3_{report_set.stream}"
    return report_set.scenario


def report_frame(report_set: ReportSet) -> pd.DataFrame:
    """One row per flow, in declaration order."""
    rows = []
    for report in report_set.flow_reports:
        row = report.as_dict()
        row.update(scenario=report_set.scenario, arm=report_set.arm, seed=report_set.seed)
        rows.append(row)
    frame = pd.DataFrame(rows, columns=CSV_COLUMNS)
    return frame.astype({column: "Int64" for column in INT_COLUMNS})


# ==============================================================================
# Summaries
# ==============================================================================
def _format(value) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return NOT_AVAILABLE
    return f"{value:.3f}"


def _format_change(control, experiment, label: str) -> str:
    if control is None or experiment is None:
        return NOT_AVAILABLE
    try:
        return f"{percent_change(control, experiment):+.2f}%"
    except ZeroBaseline:
        logger.warning(f"{label}: control value is 0, percent change reported as {NOT_AVAILABLE}")
        return NOT_AVAILABLE


def _seed_means(report_sets: Iterable[ReportSet]) -> dict[tuple[str, str, str], float]:
    """Averages every (arm, flow_id, metric) over seeds; metrics missing in any run are skipped."""
    samples: dict[tuple[str, str, str], list] = defaultdict(list)
    for rs in report_sets:
        for report in rs.flow_reports:
            for metric in SUMMARY_METRICS:
                samples[(rs.arm, report.flow_id, metric)].append(getattr(report, metric))
    return {key: float(np.mean(values)) for key, values in samples.items()
            if values and all(v is not None for v in values)}


def summarize_arms(group: str, report_sets: Sequence[ReportSet]) -> str:
    """Control vs experiment table for exp1, exp2 and custom scenarios."""
    means = _seed_means(report_sets)
    seeds = sorted({rs.seed for rs in report_sets})
    flow_ids = list(dict.fromkeys(r.flow_id for rs in report_sets for r in rs.flow_reports))
    rows = []
    for flow_id in flow_ids:
        for metric in SUMMARY_METRICS:
            control = means.get(("control", flow_id, metric))
            experiment = means.get(("experiment", flow_id, metric))
            if control is None and experiment is None:
                continue
            rows.append({"flow": flow_id, "metric": metric, "control": _format(control),
                         "experiment": _format(experiment),
                         "% change": _format_change(control, experiment, f"{group} {flow_id} {metric}")})
    header = f"{group}: control vs experiment (mean over seeds {', '.join(map(str, seeds))})"
    if not rows:
        return header + "\n(no flows)\n"
    return header + "\n" + pd.DataFrame(rows).to_string(index=False) + "\n"


def _marked_split(report_sets: Sequence[ReportSet]) -> pd.DataFrame:
    rows = []
    for rs in report_sets:
        for report in rs.flow_reports:
            if report.kind != "cbr":
                continue
            rows.append({"n_marked": rs.n_marked, "seed": rs.seed, "ue_id": report.ue_id,
                         "marked": report.qci == config.QCI_LOW_LATENCY,
                         "delay_mean": report.delay_mean, "jitter": report.jitter})
    return pd.DataFrame(rows, columns=SCATTER_COLUMNS)


def summarize_sweep(group: str, report_sets: Sequence[ReportSet]) -> str:
    """Marked vs unmarked real-time flows for each n_marked of an exp3 sweep."""
    scatter = _marked_split(report_sets)
    rows = []
    for n_marked in sorted({rs.n_marked for rs in report_sets}):
        runs = [rs for rs in report_sets if rs.n_marked == n_marked]
        at_n = scatter[scatter["n_marked"] == n_marked]
        marked, unmarked = at_n[at_n["marked"]], at_n[~at_n["marked"]]
        goodputs = [r.goodput_mbps for rs in runs for r in rs.flow_reports if r.kind == "tcp"]
        marked_delay = marked["delay_mean"].mean() if len(marked) else None
        unmarked_delay = unmarked["delay_mean"].mean() if len(unmarked) else None
        ratio = None
        if marked_delay is not None and unmarked_delay:
            ratio = marked_delay / unmarked_delay
        rows.append({"n_marked": n_marked,
                     "marked delay": _format(marked_delay),
                     "unmarked delay": _format(unmarked_delay),
                     "marked jitter": _format(marked["jitter"].mean() if len(marked) else None),
                     "unmarked jitter": _format(unmarked["jitter"].mean() if len(unmarked) else None),
                     "marked/unmarked": _format(ratio),
                     "tcp goodput (sum)": _format(sum(goodputs) / len(runs) if runs else None)})
    seeds = sorted({rs.seed for rs in report_sets})
    header = f"{group}: real-time delay (ms) by number of marking UEs (mean over seeds {', '.join(map(str, seeds))})"
    return header + "\n" + pd.DataFrame(rows).to_string(index=False) + "\n"


def summarize(report_sets: Sequence[ReportSet]) -> dict[str, str]:
    """Summary text per experiment group, in first-appearance order."""
    groups: dict[str, list[ReportSet]] = defaultdict(list)
    for rs in report_sets:
        groups[group_name(rs)].append(rs)
    summaries = {}
    for group, members in groups.items():
        if members[0].experiment == "exp3":
            summaries[group] = summarize_sweep(group, members)
        else:
            summaries[group] = summarize_arms(group, members)
    return summaries


# ==============================================================================
# Emission
# ==============================================================================
def emit_reports(report_sets: Sequence[ReportSet], out_dir: str | Path) -> list[Path]:
    """
    Writes the run CSVs, the summaries and the exp3 scatter files.

    Returns:
        list[Path]: Written files, in emission order.

    Raises:
        ReportError: if `report_sets` is empty (nothing is written).
        IoError: if the output directory or a file cannot be written.
    """
    if not report_sets:
        raise ReportError("No report sets to emit")
    out = Path(out_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for rs in report_sets:
            path = out / csv_name(rs)
            report_frame(rs).to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
            written.append(path)

        for group, text in summarize(report_sets).items():
            path = out / f"{group}_summary.txt"
            path.write_text(text, encoding="utf-8")
            written.append(path)

        exp3_groups = dict.fromkeys(group_name(rs) for rs in report_sets if rs.experiment == "exp3")
        for group in exp3_groups:
            members = [rs for rs in report_sets if group_name(rs) == group]
            path = out / f"{group}_scatter.csv"
            _marked_split(members).to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
            written.append(path)
    except OSError as e:
        logger.error(f"Cannot write reports to '{out}': {e}", exc_info=True)
        raise IoError(f"Cannot write reports to '{out}': {e}") from e

    logger.info(f"Wrote {len(written)} file(s) to '{out}'")
    return written
