"""Calibrated analytic components for the three network models.

Every constant lives in :class:`Calibration` and can be overridden from the
scenario file. The OpenFlow share curve ``C * s / (s + rate)`` is pinned so that
``s`` table-miss packets per second halve the legitimate goodput.
"""

from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass


class ModelKind(str, enum.Enum):
    permissioned_bc_sdn = "permissioned_bc_sdn"
    public_bc_sdn = "public_bc_sdn"
    openflow_sdn = "openflow_sdn"

    @classmethod
    def parse(cls, name: str) -> "ModelKind":
        try:
            return cls(name)
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown model {name!r}; valid models: {valid}") from None


ALL_MODELS = tuple(ModelKind)


@dataclass(frozen=True)
class Calibration:
    capacity_bps: float = 2.1e9
    controller_service: float = 1000.0  # table-miss packets/s the controller absorbs
    fail_rate: float = 3000.0  # sustained table-miss rate that takes the controller down
    fail_window: float = 5.0
    fail_floor: float = 0.05  # residual goodput fraction after collapse
    fail_tau: float = 1.0
    overhead_max: float = 0.05  # ledger-backed admission cost ceiling
    overhead_knee: float = 3000.0
    t_pow: float = 10.0
    n_conf: int = 6
    mu_pub: float = 0.1  # public blocks/s
    b_pub: int = 10000  # public transactions per block
    mu_perm: float = 50.0  # permissioned blocks/s
    b_perm: int = 64

    def __post_init__(self):
        for name in ("capacity_bps", "controller_service", "fail_rate", "fail_tau", "t_pow", "mu_pub", "mu_perm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"calibration.{name} must be positive")
        if not 0 <= self.fail_floor < 1 or not 0 <= self.overhead_max < 1:
            raise ValueError("calibration fractions must be in [0, 1)")
        if self.n_conf < 1 or self.b_pub < 1 or self.b_perm < 1:
            raise ValueError("calibration counts must be >= 1")


def md1_wait(rate: float, mu_blocks: float, batch: int) -> float:
    """Mean M/D/1 queueing delay with block service ``mu_blocks`` and ``batch`` items per block."""
    if rate <= 0:
        return 0.0
    rho = rate / (batch * mu_blocks)
    if rho >= 1:
        return math.inf
    return rho / (2 * mu_blocks * (1 - rho))


def mm1_wait_sample(rate: float, mu_blocks: float, batch: int, rng: random.Random) -> float:
    """One draw of the M/M/1 waiting time: zero w.p. 1-rho, else Exp(mu (1 - rho))."""
    if rate <= 0:
        return 0.0
    rho = rate / (batch * mu_blocks)
    if rho >= 1:
        return math.inf
    if rng.random() >= rho:
        return 0.0
    return rng.expovariate(mu_blocks * (1 - rho))


def mm1_wait(rate: float, mu_blocks: float, batch: int) -> float:
    if rate <= 0:
        return 0.0
    rho = rate / (batch * mu_blocks)
    if rho >= 1:
        return math.inf
    return rho / (mu_blocks * (1 - rho))


def confirmation_latency(
    model: ModelKind,
    packet_in_rate: float,
    rng: random.Random,
    cal: Calibration,
    rtt: float,
    quorum_round: float,
) -> float:
    """Seconds from a packet-in to a confirmed flow update."""
    if packet_in_rate < 0:
        raise ValueError("packet_in_rate must be >= 0")
    model = ModelKind(model)
    if model is ModelKind.permissioned_bc_sdn:
        return 2 * rtt + quorum_round + md1_wait(packet_in_rate, cal.mu_perm, cal.b_perm)
    if model is ModelKind.public_bc_sdn:
        pow_time = sum(rng.expovariate(1 / cal.t_pow) for _ in range(cal.n_conf))
        return 2 * rtt + pow_time + mm1_wait_sample(packet_in_rate, cal.mu_pub, cal.b_pub, rng)
    # plain controller round trip plus the controller's packet-in queue
    return 2 * rtt + mm1_wait_sample(packet_in_rate, cal.controller_service, 1, rng)


def expected_confirmation_latency(model: ModelKind, packet_in_rate: float, cal: Calibration,
                                  rtt: float, quorum_round: float) -> float:
    model = ModelKind(model)
    if model is ModelKind.permissioned_bc_sdn:
        return 2 * rtt + quorum_round + md1_wait(packet_in_rate, cal.mu_perm, cal.b_perm)
    if model is ModelKind.public_bc_sdn:
        return 2 * rtt + cal.n_conf * cal.t_pow + mm1_wait(packet_in_rate, cal.mu_pub, cal.b_pub)
    return 2 * rtt + mm1_wait(packet_in_rate, cal.controller_service, 1)


def reduction_pct(t_public: float, t_permissioned: float) -> float:
    if math.isinf(t_public):
        return 100.0
    return 100.0 * (t_public - t_permissioned) / t_public


def validation_overhead(attack_rate: float, cal: Calibration) -> float:
    if attack_rate <= 0:
        return 0.0
    return cal.overhead_max * attack_rate / (attack_rate + cal.overhead_knee)


def expected_unconfirmed(t: float, cal: Calibration) -> float:
    """P(a blocking rule submitted at attack onset is still unconfirmed after t seconds)."""
    if t <= 0:
        return 1.0
    x = t / cal.t_pow
    term, total = 1.0, 1.0
    for k in range(1, cal.n_conf):
        term *= x / k
        total += term
    return min(1.0, math.exp(-x) * total)


def openflow_goodput(attack_rate: float, t: float, cal: Calibration) -> float:
    c, s = cal.capacity_bps, cal.controller_service
    share = c * s / (s + attack_rate)
    if attack_rate >= cal.fail_rate and t >= cal.fail_window:
        floor = cal.fail_floor * c
        return floor + (share - floor) * math.exp(-(t - cal.fail_window) / cal.fail_tau)
    return share


def bandwidth_model(
    model: ModelKind,
    attack_rate: float,
    t: float,
    cal: Calibration,
    unconfirmed: float | None = None,
) -> float:
    """Legitimate goodput (bits/s) with ``attack_rate`` pkt/s sustained for ``t`` seconds."""
    model = ModelKind(model)
    c = cal.capacity_bps
    if attack_rate <= 0:
        return c
    if model is ModelKind.openflow_sdn:
        return openflow_goodput(attack_rate, t, cal)
    admitted = c * (1 - validation_overhead(attack_rate, cal))
    if model is ModelKind.permissioned_bc_sdn:
        return admitted
    u = expected_unconfirmed(t, cal) if unconfirmed is None else unconfirmed
    s = cal.controller_service
    return admitted * s / (s + u * attack_rate)
