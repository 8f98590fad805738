"""Scenario files: YAML documents validated into dataclass configs.

The grammar is documented in ``docs/scenario.md``. Validation errors carry the
dotted path of the offending field.
"""

from __future__ import annotations

import copy
import ipaddress
import math
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import yaml

from .access import AccessPolicy, AttrConstraint, UserAttributes
from .flowtable import FlowRuleTable, parse_entry, parse_table
from .loadbal import TaskKind
from .netsim.models import ALL_MODELS, Calibration, ModelKind
from .netsim.topology import Link, Topology, fig2_topology
from .state import GenesisPayload

BUNDLED = ("fig2_small", "fig4_updates", "fig5_dos", "greedy_server", "access_matrix")
SWEEP_PARAMS = {
    "attack_rate": ("attack", "flood_rate"),
    "packet_in_rate": ("workload", "packet_in_rate"),
    "request_rate": ("workload", "request_rate"),
    "legit_rate_bps": ("workload", "legit_rate_bps"),
    "loss": ("protocol", "loss"),
}
METRICS = ("goodput_steady_bps", "goodput_mean_bps", "update_latency_mean_s", "accepted", "rejected")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class HostSpec:
    id: str
    switch: str
    ip: int
    latency: float = 0.001


@dataclass
class TopologySpec:
    preset: Optional[str] = "fig2"
    controllers: int = 6
    switches: int = 15
    controller_latency: float = 0.002
    uplink_latency: float = 0.005
    ring_latency: float = 0.003
    nodes: dict[str, str] = field(default_factory=dict)
    links: list[Link] = field(default_factory=list)
    hosts: list[HostSpec] = field(default_factory=list)
    attackers: list[HostSpec] = field(default_factory=list)

    def build(self) -> Topology:
        if self.preset == "fig2":
            base = fig2_topology(self.controllers, self.switches, self.controller_latency,
                                 self.uplink_latency, self.ring_latency)
            nodes, links = dict(base.nodes), list(base.links)
        else:
            nodes, links = dict(self.nodes), list(self.links)
        for h in self.hosts:
            nodes[h.id] = "host"
            links.append(Link(h.id, h.switch, h.latency))
        for a in self.attackers:
            nodes[a.id] = "attacker"
            links.append(Link(a.id, a.switch, a.latency))
        return Topology(nodes, links)


@dataclass
class DeviceSpec:
    id: str
    capacity: int
    server: str


@dataclass
class RequestMix:
    user: str
    device: str
    task: str
    weight: float = 1.0


@dataclass
class FlowUpdateSpec:
    time: float
    switch: str
    issuer: str
    add: list[str] = field(default_factory=list)
    delete: list[int] = field(default_factory=list)


@dataclass
class TransferSpec:
    time: float
    policy: str
    from_user: str
    to_user: str


@dataclass
class WorkloadSpec:
    legit_rate_bps: float = 0.0
    packet_in_rate: float = 0.0
    request_rate: float = 0.0
    max_requests: Optional[int] = None
    requests: list[RequestMix] = field(default_factory=list)
    flow_updates: list[FlowUpdateSpec] = field(default_factory=list)
    transfers: list[TransferSpec] = field(default_factory=list)


@dataclass
class AttackSpec:
    flood_rate: float = 0.0
    packet_size: int = 64
    start: float = 0.0
    stop: float = math.inf
    sources: list[str] = field(default_factory=list)
    target: int = 0  # destination IPv4 of flood packets


@dataclass
class LedgerSpec:
    block_interval: float = 1.0
    block_max: int = 64


@dataclass
class ProtocolSpec:
    challenge_k: int = 3
    loss: float = 0.0
    max_attempts: int = 8
    t_req_factor: float = 4.0
    corrupt_controllers: list[str] = field(default_factory=list)


@dataclass
class RunSpec:
    end_time: float = 10.0
    sample_interval: float = 0.5
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    models: list[ModelKind] = field(default_factory=lambda: list(ALL_MODELS))
    greedy_server: Optional[str] = None


@dataclass
class SweepSpec:
    param: str
    values: list[float]
    models: list[ModelKind]
    metric: str = "goodput_steady_bps"


@dataclass
class ScenarioConfig:
    name: str
    topology: TopologySpec
    ledger: LedgerSpec = field(default_factory=LedgerSpec)
    tasks: list[TaskKind] = field(default_factory=list)
    devices: list[DeviceSpec] = field(default_factory=list)
    users: list[UserAttributes] = field(default_factory=list)
    policies: list[AccessPolicy] = field(default_factory=list)
    tables: dict[str, str] = field(default_factory=dict)  # switch -> flow table text
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    attack: AttackSpec = field(default_factory=AttackSpec)
    protocol: ProtocolSpec = field(default_factory=ProtocolSpec)
    calibration: Calibration = field(default_factory=Calibration)
    run: RunSpec = field(default_factory=RunSpec)
    sweep: Optional[SweepSpec] = None

    def genesis(self, topo: Topology) -> GenesisPayload:
        return GenesisPayload(
            controllers=tuple(topo.of_role("controller")),
            switches=tuple(topo.of_role("switch")),
            hosts=tuple((h.id, h.ip) for h in self.topology.hosts),
            devices=tuple((d.id, d.capacity) for d in self.devices),
            users=tuple(self.users),
            tasks=tuple(self.tasks),
            policies=tuple(self.policies),
            tables=tuple(parse_table(sw, text) for sw, text in sorted(self.tables.items())),
        )

    def with_param(self, param: str, value: float) -> "ScenarioConfig":
        if param not in SWEEP_PARAMS:
            raise ConfigError("sweep.param", f"unknown parameter {param!r}; choose from {sorted(SWEEP_PARAMS)}")
        section, attr = SWEEP_PARAMS[param]
        cfg = copy.deepcopy(self)
        setattr(getattr(cfg, section), attr, value)
        return cfg


# --- parsing -----------------------------------------------------------------

class _Reader:
    """Typed access to a mapping with dotted error paths."""

    def __init__(self, data: Any, path: str):
        if not isinstance(data, dict):
            raise ConfigError(path or "<root>", "expected a mapping")
        self.data = data
        self.path = path
        self.used: set[str] = set()

    def sub(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def get(self, key: str, typ, default: Any = ..., *, check=None):
        self.used.add(key)
        if key not in self.data or self.data[key] is None:
            if default is ...:
                raise ConfigError(self.sub(key), "missing required field")
            return default
        v = self.data[key]
        if typ is float and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        if typ is float and isinstance(v, str):
            # YAML 1.1 reads exponents without a sign (2.1e9) as strings
            try:
                v = float(v)
            except ValueError:
                raise ConfigError(self.sub(key), f"expected a number, got {v!r}") from None
        if not isinstance(v, typ) or (typ in (int, float) and isinstance(v, bool)):
            raise ConfigError(self.sub(key), f"expected {getattr(typ, '__name__', typ)}, got {type(v).__name__}")
        if check is not None:
            problem = check(v)
            if problem:
                raise ConfigError(self.sub(key), problem)
        return v

    def section(self, key: str, required: bool = False) -> "_Reader":
        self.used.add(key)
        if key not in self.data or self.data[key] is None:
            if required:
                raise ConfigError(self.sub(key), "missing required section")
            return _Reader({}, self.sub(key))
        return _Reader(self.data[key], self.sub(key))

    def items(self, key: str) -> list["_Reader"]:
        seq = self.get(key, list, [])
        return [_Reader(item, f"{self.sub(key)}[{i}]") for i, item in enumerate(seq)]

    def finish(self) -> None:
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ConfigError(self.sub(extra[0]), "unknown field")


def _positive(v):
    return None if v > 0 else "must be positive"


def _non_negative(v):
    return None if v >= 0 else "must be non-negative"


def _ip(r: _Reader, key: str) -> int:
    raw = r.get(key, str)
    try:
        return int(ipaddress.IPv4Address(raw))
    except ValueError as exc:
        raise ConfigError(r.sub(key), str(exc)) from None


def _host(r: _Reader) -> HostSpec:
    h = HostSpec(r.get("id", str), r.get("switch", str), _ip(r, "ip"), r.get("latency", float, 0.001, check=_non_negative))
    r.finish()
    return h


def _topology(r: _Reader) -> TopologySpec:
    spec = TopologySpec(preset=r.get("preset", str, None))
    if spec.preset not in (None, "fig2"):
        raise ConfigError(r.sub("preset"), f"unknown preset {spec.preset!r}")
    spec.controllers = r.get("controllers", int, 6, check=_positive)
    spec.switches = r.get("switches", int, 15, check=_positive)
    spec.controller_latency = r.get("controller_latency", float, 0.002, check=_non_negative)
    spec.uplink_latency = r.get("uplink_latency", float, 0.005, check=_non_negative)
    spec.ring_latency = r.get("ring_latency", float, 0.003, check=_non_negative)
    if spec.preset is None:
        for n in r.items("nodes"):
            spec.nodes[n.get("id", str)] = n.get("role", str)
            n.finish()
        for lk in r.items("links"):
            spec.links.append(Link(lk.get("a", str), lk.get("b", str), lk.get("latency", float, check=_non_negative),
                                   lk.get("capacity_bps", float, 10e9, check=_positive)))
            lk.finish()
        if not spec.nodes:
            raise ConfigError(r.sub("nodes"), "explicit topology needs nodes")
    spec.hosts = [_host(h) for h in r.items("hosts")]
    spec.attackers = [_host(h) for h in r.items("attackers")]
    r.finish()
    return spec


def _constraints(r: _Reader, key: str) -> tuple[AttrConstraint, ...]:
    raw = r.get(key, dict, {})
    out = []
    for attr in sorted(raw):
        val = raw[attr]
        path = f"{r.sub(key)}.{attr}"
        try:
            if attr == "clearance":
                if isinstance(val, str) and val.startswith(">="):
                    out.append(AttrConstraint("clearance", ">=", int(val[2:])))
                else:
                    out.append(AttrConstraint("clearance", "==", int(val)))
            else:
                out.append(AttrConstraint(attr, "==", str(val)))
        except ValueError as exc:
            raise ConfigError(path, str(exc)) from None
    return tuple(out)


def _models(r: _Reader, key: str, default) -> list[ModelKind]:
    names = r.get(key, list, None)
    if names is None:
        return list(default)
    out = []
    for i, name in enumerate(names):
        try:
            out.append(ModelKind.parse(str(name)))
        except ValueError as exc:
            raise ConfigError(f"{r.sub(key)}[{i}]", str(exc)) from None
    if not out:
        raise ConfigError(r.sub(key), "at least one model required")
    return out


def parse_scenario(data: Any, default_name: str = "scenario") -> ScenarioConfig:
    root = _Reader(data, "")
    name = root.get("name", str, default_name)
    cfg = ScenarioConfig(name=name, topology=_topology(root.section("topology", required=True)))

    lr = root.section("ledger")
    cfg.ledger = LedgerSpec(lr.get("block_interval", float, 1.0, check=_positive),
                            lr.get("block_max", int, 64, check=_positive))
    lr.finish()

    for t in root.items("tasks"):
        try:
            cfg.tasks.append(TaskKind(t.get("kind", str), t.get("cost", int), t.get("duration", float)))
        except ValueError as exc:
            raise ConfigError(t.path, str(exc)) from None
        t.finish()
    for d in root.items("devices"):
        cfg.devices.append(DeviceSpec(d.get("id", str), d.get("capacity", int, check=_positive), d.get("server", str)))
        d.finish()
    for u in root.items("users"):
        cfg.users.append(UserAttributes(u.get("id", str), u.get("role", str), u.get("org", str),
                                        u.get("clearance", int, 0, check=_non_negative)))
        u.finish()
    for p in root.items("policies"):
        try:
            cfg.policies.append(AccessPolicy(
                p.get("id", str), p.get("owner", str), p.get("device", str), _constraints(p, "require"),
                tuple(p.get("tasks", list)), p.get("active", bool, True)))
        except ValueError as exc:
            raise ConfigError(p.path, str(exc)) from None
        p.finish()
    tables = root.get("tables", dict, {})
    for sw, text in tables.items():
        try:
            parse_table(str(sw), str(text))
        except ValueError as exc:
            raise ConfigError(f"tables.{sw}", str(exc)) from None
        cfg.tables[str(sw)] = str(text)

    w = root.section("workload")
    wl = WorkloadSpec(
        legit_rate_bps=w.get("legit_rate_bps", float, 0.0, check=_non_negative),
        packet_in_rate=w.get("packet_in_rate", float, 0.0, check=_non_negative),
        request_rate=w.get("request_rate", float, 0.0, check=_non_negative),
        max_requests=w.get("max_requests", int, None, check=_non_negative),
    )
    for m in w.items("requests"):
        wl.requests.append(RequestMix(m.get("user", str), m.get("device", str), m.get("task", str),
                                      m.get("weight", float, 1.0, check=_positive)))
        m.finish()
    for fu in w.items("flow_updates"):
        spec = FlowUpdateSpec(fu.get("time", float, check=_non_negative), fu.get("switch", str), fu.get("issuer", str),
                              [str(x) for x in fu.get("add", list, [])], [int(x) for x in fu.get("delete", list, [])])
        for i, line in enumerate(spec.add):
            try:
                parse_entry(line)
            except ValueError as exc:
                raise ConfigError(f"{fu.sub('add')}[{i}]", str(exc)) from None
        if not spec.add and not spec.delete:
            raise ConfigError(fu.path, "flow update needs add or delete entries")
        wl.flow_updates.append(spec)
        fu.finish()
    for tr in w.items("transfers"):
        wl.transfers.append(TransferSpec(tr.get("time", float, check=_non_negative), tr.get("policy", str),
                                         tr.get("from", str), tr.get("to", str)))
        tr.finish()
    w.finish()
    cfg.workload = wl

    a = root.section("attack")
    cfg.attack = AttackSpec(
        flood_rate=a.get("flood_rate", float, 0.0, check=_non_negative),
        packet_size=a.get("packet_size", int, 64, check=lambda v: None if v >= 64 else "must be >= 64 bytes"),
        start=a.get("start", float, 0.0, check=_non_negative),
        stop=a.get("stop", float, math.inf, check=_non_negative),
        sources=[str(s) for s in a.get("sources", list, [])],
        target=_ip(a, "target") if "target" in a.data else 0,
    )
    a.used.add("target")
    a.finish()

    pr = root.section("protocol")
    cfg.protocol = ProtocolSpec(
        challenge_k=pr.get("challenge_k", int, 3, check=_positive),
        loss=pr.get("loss", float, 0.0, check=lambda v: None if 0 <= v < 1 else "must be in [0, 1)"),
        max_attempts=pr.get("max_attempts", int, 8, check=_positive),
        t_req_factor=pr.get("t_req_factor", float, 4.0, check=_positive),
        corrupt_controllers=[str(c) for c in pr.get("corrupt_controllers", list, [])],
    )
    pr.finish()

    cr = root.section("calibration")
    defaults = Calibration()
    values = {}
    for f in fields(Calibration):
        default = getattr(defaults, f.name)
        values[f.name] = cr.get(f.name, type(default), default)
    cr.finish()
    try:
        cfg.calibration = Calibration(**values)
    except ValueError as exc:
        raise ConfigError("calibration", str(exc)) from None

    rr = root.section("run")
    cfg.run = RunSpec(
        end_time=rr.get("end_time", float, 10.0, check=_positive),
        sample_interval=rr.get("sample_interval", float, 0.5, check=_positive),
        seeds=[int(s) for s in rr.get("seeds", list, [1, 2, 3, 4, 5])],
        models=_models(rr, "models", ALL_MODELS),
        greedy_server=rr.get("greedy_server", str, None),
    )
    if not cfg.run.seeds:
        raise ConfigError("run.seeds", "at least one seed required")
    rr.finish()

    if "sweep" in root.data and root.data["sweep"] is not None:
        sr = root.section("sweep")
        values = sr.get("values", list)
        if not values:
            raise ConfigError("sweep.values", "value list must be non-empty")
        cfg.sweep = SweepSpec(
            param=sr.get("param", str, check=lambda v: None if v in SWEEP_PARAMS else f"choose from {sorted(SWEEP_PARAMS)}"),
            values=[float(v) for v in values],
            models=_models(sr, "models", cfg.run.models),
            metric=sr.get("metric", str, "goodput_steady_bps", check=lambda v: None if v in METRICS else f"choose from {METRICS}"),
        )
        sr.finish()
    root.used.add("sweep")
    root.finish()
    validate(cfg)
    return cfg


def validate(cfg: ScenarioConfig) -> Topology:
    """Cross-reference checks; returns the built topology."""
    try:
        topo = cfg.topology.build()
    except ValueError as exc:
        raise ConfigError("topology", str(exc)) from None
    controllers = set(topo.of_role("controller"))
    switches = set(topo.of_role("switch"))
    users = {u.user_id for u in cfg.users}
    tasks = {t.kind: t for t in cfg.tasks}
    devices = {d.id: d for d in cfg.devices}
    for i, d in enumerate(cfg.devices):
        if d.server not in controllers:
            raise ConfigError(f"devices[{i}].server", f"{d.server!r} is not a controller")
    if devices:
        min_cap = min(d.capacity for d in cfg.devices)
        for i, t in enumerate(cfg.tasks):
            if t.cost > min_cap:
                raise ConfigError(f"tasks[{i}].cost", f"cost {t.cost} exceeds smallest device capacity {min_cap}")
    for i, p in enumerate(cfg.policies):
        if p.owner not in users:
            raise ConfigError(f"policies[{i}].owner", f"unknown user {p.owner!r}")
        if p.device_id not in devices:
            raise ConfigError(f"policies[{i}].device", f"unknown device {p.device_id!r}")
        for t in p.allowed_tasks:
            if t not in tasks:
                raise ConfigError(f"policies[{i}].tasks", f"unknown task {t!r}")
    for sw in cfg.tables:
        if sw not in switches:
            raise ConfigError(f"tables.{sw}", "unknown switch")
    for i, m in enumerate(cfg.workload.requests):
        if m.device not in devices or m.task not in tasks:
            raise ConfigError(f"workload.requests[{i}]", "unknown device or task")
    for i, fu in enumerate(cfg.workload.flow_updates):
        if fu.switch not in switches:
            raise ConfigError(f"workload.flow_updates[{i}].switch", f"unknown switch {fu.switch!r}")
        if fu.issuer not in controllers:
            raise ConfigError(f"workload.flow_updates[{i}].issuer", f"{fu.issuer!r} is not a controller")
    attackers = set(topo.of_role("attacker"))
    for i, s in enumerate(cfg.attack.sources):
        if s not in attackers:
            raise ConfigError(f"attack.sources[{i}]", f"{s!r} is not a declared attacker")
    if cfg.attack.flood_rate > 0 and not cfg.attack.sources:
        raise ConfigError("attack.sources", "a flood needs at least one source")
    host_ips = {h.ip for h in cfg.topology.hosts}
    for a in cfg.topology.attackers:
        if a.ip in host_ips:
            raise ConfigError("topology.attackers", f"attacker {a.id} reuses a registered host address")
    if cfg.run.greedy_server is not None and cfg.run.greedy_server not in controllers:
        raise ConfigError("run.greedy_server", f"{cfg.run.greedy_server!r} is not a controller")
    for i, c in enumerate(cfg.protocol.corrupt_controllers):
        if c not in controllers:
            raise ConfigError(f"protocol.corrupt_controllers[{i}]", f"{c!r} is not a controller")
    if cfg.protocol.challenge_k > len(controllers):
        raise ConfigError("protocol.challenge_k", "more challenge recipients than controllers")
    try:
        cfg.genesis(topo)
    except ValueError as exc:
        raise ConfigError("genesis", str(exc)) from None
    return topo


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("bsdn") / "scenarios" / f"{name}.yaml"))


def load_scenario(source: str | Path) -> ScenarioConfig:
    """Load from a file path, or by bundled scenario name."""
    path = Path(source)
    if not path.exists() and str(source) in BUNDLED:
        path = bundled_path(str(source))
    if not path.exists():
        raise ConfigError("<file>", f"no such scenario file: {source}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"YAML syntax error: {exc}") from None
    return parse_scenario(data, default_name=path.stem)
