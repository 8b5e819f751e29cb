"""System-level simulator of URLLC/eMBB multiplexing in a multi-cell 5G downlink."""

from .config import SimConfig, load_config
from .engine import MetricsStore, aggregate_runs, latency_quantile, run_drop

__version__ = "0.1.0"

__all__ = [
    "SimConfig",
    "load_config",
    "MetricsStore",
    "run_drop",
    "latency_quantile",
    "aggregate_runs",
    "__version__",
]
