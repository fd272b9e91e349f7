import os
from dotenv import load_dotenv

load_dotenv()

# ---------------------------------------------------------------------------
# Runtime settings read from the environment (or a local .env file)
#   - TTSS_THREADS    → worker cap for per-class fits and sweep grid points
#   - TTSS_LOG_LEVEL  → level of the "ttss" logger (INFO by default)
#   - TTSS_LOG_FILE   → optional log file, console only when unset
# ---------------------------------------------------------------------------


def _threads_from_env() -> int:
    raw = os.getenv("TTSS_THREADS")
    if not raw:
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        return 1
    return max(value, 1)


THREADS = _threads_from_env()
LOG_LEVEL = os.getenv("TTSS_LOG_LEVEL", "INFO").upper()
LOG_FILE = os.getenv("TTSS_LOG_FILE") or None

# Numerical tolerances shared across services
ORTHONORMAL_TOL = 1e-10
ZERO_SINGULAR_RTOL = 1e-12
SYMMETRY_TOL = 1e-10


def worker_count(tasks: int) -> int:
    """Number of threads to use for `tasks` independent jobs."""
    return max(1, min(THREADS, tasks))
