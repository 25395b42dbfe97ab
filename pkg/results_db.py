# -*- coding: utf-8 -*-
"""
Results Archive Module.

Optional SQLite archive of scenario runs, so that sweeps spread over many
invocations can be compared later. Each ReportSet becomes one row in `runs`
and one row per flow in `flow_reports`.

Archive failures never stop a simulation: errors are logged and reported as
a False / empty return.
"""

# results_db.py
import logging
import os
import sqlite3

import config
from scenarios import ReportSet

logger = logging.getLogger(__name__)

FLOW_COLUMNS = ("flow_id", "ue_id", "kind", "qci", "delay_mean", "delay_min", "delay_max", "delay_stddev",
                "jitter", "goodput_mbps", "retransmissions", "drops", "packets_sent", "packets_received")


class ResultsDatabase:
    def __init__(self, db_name: str | None = None):
        """Initializes the archive and ensures its tables exist."""
        self.db_name = db_name or config.RESULTS_DB or os.path.join(config.RESULTS_DIR, "runs.db")
        self.create_tables()

    def _get_connection(self) -> sqlite3.Connection | None:
        """Opens a connection, or returns None (logged) if that fails."""
        try:
            conn = sqlite3.connect(self.db_name)
            conn.execute("PRAGMA foreign_keys = ON")
            return conn
        except sqlite3.Error as e:
            logger.error(f"Database connection error to '{self.db_name}': {e}", exc_info=True)
            return None

    def create_tables(self):
        query_runs = """
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                scenario TEXT NOT NULL,
                experiment TEXT NOT NULL,
                arm TEXT NOT NULL,       -- 'control' or 'experiment'
                seed INTEGER NOT NULL,
                stream TEXT,
                n_marked INTEGER,        -- exp3 only
                executed_events INTEGER,
                max_tti_bytes INTEGER,
                conservation_ok INTEGER, -- 0/1
                run_date TIMESTAMP DEFAULT CURRENT_TIMESTAMP
            )
        """
        query_flows = """
            CREATE TABLE IF NOT EXISTS flow_reports (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id INTEGER NOT NULL,
                flow_id TEXT NOT NULL,
                ue_id INTEGER,
                kind TEXT,
                qci INTEGER,
                delay_mean REAL,
                delay_min REAL,
                delay_max REAL,
                delay_stddev REAL,
                jitter REAL,
                goodput_mbps REAL,
                retransmissions INTEGER,
                drops INTEGER,
                packets_sent INTEGER,
                packets_received INTEGER,
                FOREIGN KEY (run_id) REFERENCES runs(id) ON DELETE CASCADE
            )
        """
        query_index = """
            CREATE INDEX IF NOT EXISTS idx_runs_scenario_arm
            ON runs (scenario, arm, seed);
        """

        conn = self._get_connection()
        if not conn:
            logger.error("Cannot create tables: Database connection failed.")
            return

        try:
            with conn:
                cursor = conn.cursor()
                cursor.execute(query_runs)
                cursor.execute(query_flows)
                cursor.execute(query_index)
        except sqlite3.Error as e:
            logger.error(f"Database error creating tables: {e}", exc_info=True)
        finally:
            conn.close()

    def save_report_set(self, report_set: ReportSet) -> bool:
        """
        Archives one run and its flow reports in a single transaction.
        Returns True on success, False on failure.
        """
        query_run = """
            INSERT INTO runs (scenario, experiment, arm, seed, stream, n_marked,
                              executed_events, max_tti_bytes, conservation_ok)
            VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
        """
        query_flow = (f"INSERT INTO flow_reports (run_id, {', '.join(FLOW_COLUMNS)}) "
                      f"VALUES (?, {', '.join('?' for _ in FLOW_COLUMNS)})")
        conn = self._get_connection()
        if not conn:
            return False

        success = False
        try:
            with conn:
                cursor = conn.execute(query_run, (report_set.scenario, report_set.experiment, report_set.arm,
                                                  report_set.seed, report_set.stream, report_set.n_marked,
                                                  report_set.executed_events, report_set.max_tti_bytes,
                                                  int(report_set.conservation_ok)))
                run_id = cursor.lastrowid
                conn.executemany(query_flow, [
                    (run_id, *(getattr(report, column) for column in FLOW_COLUMNS))
                    for report in report_set.flow_reports
                ])
            success = True
        except sqlite3.Error as e:
            logger.error(f"Database error archiving {report_set.scenario}/{report_set.arm} "
                         f"seed {report_set.seed}: {e}", exc_info=True)
        finally:
            conn.close()
        return success

    def get_flow_reports(self, scenario: str, arm: str) -> list[tuple]:
        """
        Retrieves every archived flow row of a scenario arm in archive order:
        oldest run first (not sorted by seed), then flows in report order.
        Each row is (seed, *FLOW_COLUMNS). Returns an empty list on error/no data.
        """
        query = f"""
            SELECT r.seed, {', '.join('f.' + column for column in FLOW_COLUMNS)}
            FROM flow_reports f JOIN runs r ON f.run_id = r.id
            WHERE r.scenario = ? AND r.arm = ?
            ORDER BY r.id, f.id
        """
        conn = self._get_connection()
        if not conn:
            return []

        rows = []
        try:
            with conn:
                rows = conn.execute(query, (scenario, arm)).fetchall()
        except sqlite3.Error as e:
            logger.error(f"Database error retrieving flow reports for '{scenario}' ({arm}): {e}", exc_info=True)
        finally:
            conn.close()
        return rows

    def list_runs(self) -> list[tuple]:
        """(id, scenario, arm, seed, n_marked, run_date) of every archived run, newest first."""
        query = "SELECT id, scenario, arm, seed, n_marked, run_date FROM runs ORDER BY id DESC"
        conn = self._get_connection()
        if not conn:
            return []

        rows = []
        try:
            with conn:
                rows = conn.execute(query).fetchall()
        except sqlite3.Error as e:
            logger.error(f"Database error listing runs: {e}", exc_info=True)
        finally:
            conn.close()
        return rows
