# config.py
"""
Simulator Configuration.

This module centralizes all configuration constants for the Rate-Delay bearer
simulator: the LTE path defaults (SGi, S5/S8, S1, radio cell), bearer buffer
sizes, TCP and CBR traffic parameters, and experiment timing. Runtime
overrides (log level, output locations, default seed) are read from the
environment, optionally populated from a '.env' file:

    RDSIM_LOG_LEVEL=DEBUG
    RDSIM_RESULTS_DIR=./results
    RDSIM_DEFAULT_SEED=1
    RDSIM_RESULTS_DB=./results/runs.db

All times are integer microseconds and all rates are bits per second.
"""
import logging
import os

from dotenv import load_dotenv

# Load variables from .env file (no-op when the file is absent).
load_dotenv()

logger = logging.getLogger(__name__)

# --- Time units ---
US_PER_MS = 1_000
US_PER_S = 1_000_000

# --- Path configuration (LTE core and SGi) ---
SGI_RATE_BPS = 10_000_000_000
SGI_PROP_DELAY_US = 1 * US_PER_MS
CORE_RATE_BPS = 5_000_000           # S1 and S5/S8
CORE_PROP_DELAY_US = 0
EXP3_CORE_RATE_BPS = 50_000_000     # core links are widened for the multi-UE run

# --- Radio access (LTE-Uu) ---
CELL_RATE_BPS = 4_400_000           # downlink peak, FDD SISO 6 RB
BASELINE_LATENCY_US = 3 * US_PER_MS
TTI_US = 1 * US_PER_MS
PF_EWMA_ALPHA = 0.01
PF_INITIAL_AVG_BPS = 1.0

# --- Bearers ---
QCI_DEFAULT = 9                     # default bearer, deep buffer
QCI_LOW_LATENCY = 7                 # dedicated low-latency bearer, shallow buffer
QCI9_CAPACITY_BYTES = 70_000        # ~130 ms at the cell peak rate, above the initial ssthresh
QCI7_CAPACITY_BYTES = 1_650         # one TCP segment plus one real-time packet (3 TTI budgets)
LLT_DSCP = 0b000001
DEFAULT_DSCP = 0

# --- Expedited forwarding of conforming low-latency packets ---
# Per-flow token bucket checked at network ingress. A bucket shallower than one
# TCP segment means only small real-time packets can ever conform.
EXPEDITED_RATE_BPS = 500_000
EXPEDITED_BUCKET_BYTES = 1_000

# --- TCP ---
TCP_MSS_BYTES = 1_340
TCP_HEADER_BYTES = 60               # IP + TCP overhead, 1 400 B segments on the wire
TCP_ACK_BYTES = 40
TCP_INITIAL_CWND_SEGMENTS = 1
TCP_INITIAL_SSTHRESH_BYTES = 65_535
TCP_INITIAL_RTO_US = 1 * US_PER_S
TCP_MIN_RTO_US = 200 * US_PER_MS
TCP_MAX_RTO_US = 60 * US_PER_S
TCP_DUP_ACK_THRESHOLD = 3

# --- CBR stream profiles ---
# IP-layer packet sizes reproduce the stream table's IP-layer bandwidth (80 and 352 kbit/s).
CBR_PROFILES = {
    "audio": {"ip_bytes": 200, "pps": 50, "n_ues": 20},
    "video": {"ip_bytes": 110, "pps": 400, "n_ues": 10},
}

# --- Experiment timing ---
CBR_START_US = 1 * US_PER_S
CBR_DURATION_US = 10 * US_PER_S
SIM_END_US = 14 * US_PER_S
EXP3_START_WINDOW_US = (1 * US_PER_S, 3 * US_PER_S)
EXP3_SWEEPS = {
    "audio": [0, 5, 10, 15, 20],
    "video": [0, 2, 5, 8, 10],
}


def _env_int(name: str, default: int) -> int:
    """Reads an integer environment variable, falling back to `default` on bad input."""
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        logger.warning(f"Ignoring {name}={raw!r}: not an integer. Using {default}.")
        return default


# --- Runtime overrides ---
LOG_LEVEL = os.getenv("RDSIM_LOG_LEVEL", "INFO").upper()
RESULTS_DIR = os.getenv("RDSIM_RESULTS_DIR", "./results")
DEFAULT_SEED = _env_int("RDSIM_DEFAULT_SEED", 1)
RESULTS_DB = os.getenv("RDSIM_RESULTS_DB") or None  # archive disabled when unset
