"""Permissioned-ledger SDN security simulator for IoT networks."""

from .core import Decision
from .ledger import Ledger, verify_chain, replay
from .netsim import ModelKind, run
from .scenario import ConfigError, load_scenario

__version__ = "0.1.0"

__all__ = ["ConfigError", "Decision", "Ledger", "ModelKind", "load_scenario", "replay", "run", "verify_chain"]
