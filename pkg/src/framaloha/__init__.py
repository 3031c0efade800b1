"""Stationary throughput and peak-age analysis of frameless ALOHA with
dynamically varying user activation, cross-validated by slot-accurate
simulation and brute-force enumeration."""

__version__ = "0.1.0"

from .core import ConfigError, SystemConfig, normalize, validate_config
from .sic import ConditionalTables, DecoderState, build_conditional_tables, cached_tables
from .markov import StationaryResult, solve_stationary
from .aoi import AoiResult, ZChain, avg_peak_aoi
from .sim import CpRecord, SimMetrics, oracle_enumerate, simulate, simulate_cp

__all__ = [
    "AoiResult",
    "ConditionalTables",
    "ConfigError",
    "CpRecord",
    "DecoderState",
    "SimMetrics",
    "StationaryResult",
    "SystemConfig",
    "ZChain",
    "avg_peak_aoi",
    "build_conditional_tables",
    "cached_tables",
    "normalize",
    "oracle_enumerate",
    "simulate",
    "simulate_cp",
    "solve_stationary",
    "validate_config",
]
