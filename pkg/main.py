# main.py
"""
Main Application Entry Point.

Configures logging from the environment (RDSIM_LOG_LEVEL, optionally set in
a .env file) and hands the command line to the scenario runner.

    python main.py run exp1 --stream audio
    python main.py run exp3 --stream video --sweep --seed 1,2,3 --jobs 4
"""
import logging
import os
import sys

# Ensure the script's directory is in the Python path
script_dir = os.path.dirname(os.path.abspath(__file__))
if script_dir not in sys.path:
    sys.path.insert(0, script_dir)

import config

try:
    from cli_runner import main as run_cli
except ImportError as e:
    logging.critical(f"Fatal Error: Could not import the scenario runner: {e}", exc_info=True)
    sys.exit(1)

logging.basicConfig(
    level=getattr(logging, config.LOG_LEVEL, logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[logging.StreamHandler()]  # Outputs to console (stderr)
)


# ==============================================================================
# Main Execution
# ==============================================================================
if __name__ == "__main__":
    logging.info("Starting rate/delay bearer simulator...")
    sys.exit(run_cli(sys.argv[1:]))
