"""Discrete-event simulation of the three network models."""

from .engine import RANK, Engine, SimEvent, derive_rng
from .models import ALL_MODELS, Calibration, ModelKind, bandwidth_model, confirmation_latency, reduction_pct
from .topology import Link, Topology, fig2_topology
from .sim import MetricsReport, Sample, Simulation, run

__all__ = [
    "ALL_MODELS", "Calibration", "Engine", "Link", "MetricsReport", "ModelKind", "RANK", "Sample",
    "SimEvent", "Simulation", "Topology", "bandwidth_model", "confirmation_latency", "derive_rng",
    "fig2_topology", "reduction_pct", "run",
]
