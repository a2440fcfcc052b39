# Import Python's built-in logging Library
import logging
# Import OS utilities for filesystem operations (making the log folder, reading env vars)
import os
# Import datetime to timestamp log files with today's date
from datetime import datetime

# Folder where logs will be stored; SAGEGAN_LOGS_DIR redirects it (tests, cluster runs)
LOGS_DIR = os.getenv("SAGEGAN_LOGS_DIR", "logs")
# Create the logs folder if it doesn't exist
os.makedirs(LOGS_DIR, exist_ok=True)

# Build a log file path like: logs/log_2025-08-05.log (changes daily)
LOG_FILE = os.path.join(
    LOGS_DIR,
    f"log_{datetime.now().strftime('%Y-%m-%d')}.log"
)

# One format for file and console:
# -%(asctime)s: Timestamp
# -%(levelname)s: Log level (INFO, ERROR, etc)
# -%(name)s: module that emitted the record
# -%(message)s: The log message text
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"

# Configure the ROOT logger once for the whole program
logging.basicConfig(
    # Write all logs to this log file
    filename=LOG_FILE,
    format=LOG_FORMAT,
    # minimum level to record (INFO and above)
    level=logging.INFO,
)


def get_logger(name):
    """Returns a named logger that inherits the root configuration above.
    Use different names per module (e.g., __name__) to identify sources."""
    # Get (or create) a logger with the given name
    logger = logging.getLogger(name)
    # Ensure this logger emits INFO and above (can be customized per logger)
    logger.setLevel(logging.INFO)
    # Return the configured named logger
    return logger


def enable_console(level=logging.INFO):
    """Mirror log records to stderr. Called by the CLI; library code never calls it."""
    root = logging.getLogger()
    # Don't stack a second console handler when commands run back to back
    for handler in root.handlers:
        if getattr(handler, "_sagegan_console", False):
            return handler
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler.setLevel(level)
    handler._sagegan_console = True
    root.addHandler(handler)
    return handler
