# -*- coding: utf-8 -*-
"""
Command-Line Runner.

    run <exp1|exp2|exp3|custom> [--stream audio|video] [--marked N[,N...] | --sweep]
        [--seed N[,N...]] [--arm control|experiment|both] [--config PATH]
        [--out DIR] [--jobs N] [--db PATH]
    show-config <exp1|exp2|exp3|custom> [same flags]

`run` executes every requested (arm, n_marked, seed) combination, writes the
CSV files and summaries, and optionally archives the runs in SQLite.
`show-config` prints the scenario files those runs would use.

Exit codes: 0 success, 1 unexpected failure, 2 usage error, 3 validation or
parse error, 4 I/O error.
"""
import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import config
from report_writer import IoError, emit_reports, summarize
from results_db import ResultsDatabase
from scenario_config import ConfigFileError, dump_config, read_scenario_file
from scenarios import ReportSet, ScenarioConfig, ScenarioError, build, run_scenario

logger = logging.getLogger(__name__)

EXPERIMENTS = ("exp1", "exp2", "exp3", "custom")
ARM_CHOICES = ("control", "experiment", "both")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_IO = 4


class UsageError(Exception):
    """Invalid command line; carries the help text to show."""

    def __init__(self, message: str, help_text: str = ""):
        super().__init__(message)
        self.help_text = help_text


@dataclass(frozen=True)
class RunRequest:
    command: str
    experiment: str
    arm: str = "both"
    stream: str | None = None
    n_marked: tuple[int, ...] = ()
    seeds: tuple[int, ...] = (config.DEFAULT_SEED,)
    out_dir: str = config.RESULTS_DIR
    config_path: str | None = None
    jobs: int = 1
    db_path: str | None = None

    @property
    def arms(self) -> tuple[str, ...]:
        return ("control", "experiment") if self.arm == "both" else (self.arm,)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, self.format_help())


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or N,N,... got '{text}'") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rdsim", description="Two-bearer LTE rate/delay trade-off simulator.")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in (("run", "run scenarios and write reports"),
                            ("show-config", "print the scenario files a run would use")):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("experiment", choices=EXPERIMENTS)
        sub.add_argument("--stream", choices=tuple(config.CBR_PROFILES))
        marked = sub.add_mutually_exclusive_group()
        marked.add_argument("--marked", type=_int_list, help="number(s) of marking UEs (exp3)")
        marked.add_argument("--sweep", action="store_true", help="use the default n_marked sweep (exp3)")
        sub.add_argument("--seed", type=_int_list, default=(config.DEFAULT_SEED,), help="seed(s), e.g. 1,2,3")
        sub.add_argument("--arm", choices=ARM_CHOICES, default="both")
        sub.add_argument("--config", dest="config_path", help="scenario file overriding the defaults")
        sub.add_argument("--out", dest="out_dir", default=config.RESULTS_DIR)
        sub.add_argument("--jobs", type=int, default=1, help="parallel scenario processes")
        sub.add_argument("--db", dest="db_path", default=config.RESULTS_DB, help="SQLite results archive")
    return parser


def parse_args(argv: Sequence[str]) -> RunRequest:
    """
    Parses and validates a command line.

    Raises:
        UsageError: for any invalid flag or flag combination.
    """
    parser = build_parser()
    args = parser.parse_args(list(argv))
    help_text = parser.format_help()

    def reject(message: str):
        raise UsageError(message, help_text)

    stream = args.stream
    n_marked: tuple[int, ...] = ()
    if args.experiment == "exp3":
        if stream is None:
            reject("exp3 requires --stream")
        if args.sweep:
            n_marked = tuple(config.EXP3_SWEEPS[stream])
        elif args.marked:
            n_marked = args.marked
        else:
            reject("exp3 requires --marked N or --sweep")
        limit = config.CBR_PROFILES[stream]["n_ues"]
        for n in n_marked:
            if not 0 <= n <= limit:
                reject(f"--marked {n} is out of range for {stream} (0..{limit})")
    elif args.marked or args.sweep:
        reject("--marked and --sweep apply to exp3 only")
    if args.experiment == "exp1" and stream is None:
        stream = "audio"
    if args.experiment == "exp2" and stream not in (None, "audio"):
        reject("exp2 uses the audio stream only")
    if args.experiment == "custom" and not args.config_path:
        reject("custom requires --config")
    if any(seed < 0 for seed in args.seed):
        reject("seeds must be non-negative")
    if args.jobs < 1:
        reject("--jobs must be at least 1")
    out = Path(args.out_dir)
    if out.exists() and (not out.is_dir() or not os.access(out, os.W_OK)):
        reject(f"output directory '{out}' is not writable")

    return RunRequest(command=args.command, experiment=args.experiment, arm=args.arm, stream=stream,
                      n_marked=n_marked, seeds=tuple(args.seed), out_dir=args.out_dir,
                      config_path=args.config_path, jobs=args.jobs, db_path=args.db_path)


def expand(request: RunRequest) -> list[ScenarioConfig]:
    """Every scenario configuration a request runs, in emission order."""
    scenario_file = read_scenario_file(request.config_path) if request.config_path else None
    base = scenario_file.cfg if scenario_file else None
    keep_links = scenario_file is not None and scenario_file.sets_topology
    configs = []
    if request.experiment == "custom":
        return [replace(base, seed=seed) for seed in request.seeds]
    if request.experiment == "exp3":
        if request.arm != "both":
            logger.warning("--arm is ignored for exp3: the arm follows from n_marked")
        for n in request.n_marked:
            for seed in request.seeds:
                configs.append(build("exp3", "experiment", request.stream, n_marked=n, seed=seed, base=base,
                                     keep_links=keep_links))
        return configs
    for seed in request.seeds:
        for arm in request.arms:
            configs.append(build(request.experiment, arm, request.stream or "audio", seed=seed, base=base))
    return configs


def run_configs(configs: Sequence[ScenarioConfig], jobs: int = 1) -> list[ReportSet]:
    """Runs isolated scenario instances; results keep the order of `configs`."""
    if jobs <= 1 or len(configs) <= 1:
        return [run_scenario(cfg) for cfg in configs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_scenario, configs))


def archive(report_sets: Sequence[ReportSet], db_path: str) -> int:
    Path(db_path).parent.mkdir(parents=True, exist_ok=True)
    db = ResultsDatabase(db_path)
    saved = sum(db.save_report_set(rs) for rs in report_sets)
    if saved < len(report_sets):
        logger.warning(f"Archived {saved} of {len(report_sets)} run(s) in '{db_path}'")
    else:
        logger.info(f"Archived {saved} run(s) in '{db_path}'")
    return saved


def execute(request: RunRequest) -> list[Path]:
    configs = expand(request)
    if request.command == "show-config":
        for cfg in configs:
            print(f"# {cfg.name} ({cfg.arm}, seed {cfg.seed})")
            print(dump_config(cfg))
        return []
    report_sets = run_configs(configs, request.jobs)
    written = emit_reports(report_sets, request.out_dir)
    for text in summarize(report_sets).values():
        print(text)
    if request.db_path:
        archive(report_sets, request.db_path)
    return written


def main(argv: Sequence[str] | None = None) -> int:
    """Runs the command line and returns the process exit code."""
    argv = sys.argv[1:] if argv is None else argv
    try:
        execute(parse_args(argv))
    except UsageError as e:
        print(f"error: {e}\n\n{e.help_text}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioError, ConfigFileError) as e:
        logger.error(str(e))
        return EXIT_VALIDATION
    except IoError as e:
        logger.error(str(e))
        return EXIT_IO
    except Exception as e:
        logger.critical(f"Fatal error: {e}", exc_info=True)
        return EXIT_FAILURE
    return EXIT_OK
