"""Cycle-driven model of a secure multicore memory hierarchy with strong timing independence."""

from .config import BASE, FPMA, SECURE, ConfigError, Flag, SimConfig, Variant, load_config, validate_config
from .engine import DetRng, SimulationAbort
from .machine import Machine
from .trace import TraceOp, compute, load, load_trace, parse_trace, store

__all__ = [
    "BASE", "FPMA", "SECURE", "ConfigError", "DetRng", "Flag", "Machine", "SimConfig", "SimulationAbort",
    "TraceOp", "Variant", "compute", "load", "load_config", "load_trace", "parse_trace", "store", "validate_config",
]
