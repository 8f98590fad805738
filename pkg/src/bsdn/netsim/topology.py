"""Network topology and path latencies."""

from __future__ import annotations

from dataclasses import dataclass, field

import networkx as nx

ROLES = ("controller", "switch", "host", "attacker")


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    latency: float
    capacity_bps: float = 10e9


@dataclass
class Topology:
    nodes: dict[str, str]  # id -> role
    links: list[Link]
    _lat: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        for n, role in self.nodes.items():
            if role not in ROLES:
                raise ValueError(f"node {n}: unknown role {role!r}")
        g = nx.Graph()
        g.add_nodes_from(self.nodes)
        for link in self.links:
            for end in (link.a, link.b):
                if end not in self.nodes:
                    raise ValueError(f"link references unknown node {end!r}")
            if link.latency < 0:
                raise ValueError(f"link {link.a}-{link.b}: negative latency")
            g.add_edge(link.a, link.b, weight=link.latency)
        if not self.of_role("controller"):
            raise ValueError("topology needs at least one controller")
        if len(self.nodes) > 1 and not nx.is_connected(g):
            raise ValueError("topology is not connected")
        self._lat = {a: dict(d) for a, d in nx.all_pairs_dijkstra_path_length(g, weight="weight")}

    def of_role(self, *roles: str) -> list[str]:
        return sorted(n for n, r in self.nodes.items() if r in roles)

    def latency(self, a: str, b: str) -> float:
        return self._lat[a][b]

    def max_latency(self, roles=("controller", "switch")) -> float:
        members = self.of_role(*roles)
        return max((self._lat[a][b] for a in members for b in members), default=0.0)

    def neighbors(self, node: str) -> list[str]:
        out = []
        for link in self.links:
            if link.a == node:
                out.append(link.b)
            elif link.b == node:
                out.append(link.a)
        return sorted(out)


def fig2_topology(
    n_controllers: int = 6,
    n_switches: int = 15,
    controller_latency: float = 0.002,
    uplink_latency: float = 0.005,
    ring_latency: float = 0.003,
    capacity_bps: float = 10e9,
) -> Topology:
    """Controllers in a full mesh; switches in a ring, each homed on one controller."""
    ctrl = [f"c{i}" for i in range(1, n_controllers + 1)]
    sw = [f"s{i}" for i in range(1, n_switches + 1)]
    nodes = {c: "controller" for c in ctrl} | {s: "switch" for s in sw}
    links = [Link(a, b, controller_latency, capacity_bps) for i, a in enumerate(ctrl) for b in ctrl[i + 1:]]
    for i, s in enumerate(sw):
        links.append(Link(s, ctrl[i % n_controllers], uplink_latency, capacity_bps))
        if n_switches > 1:
            nxt = sw[(i + 1) % n_switches]
            if n_switches > 2 or i == 0:
                links.append(Link(s, nxt, ring_latency, capacity_bps))
    return Topology(nodes, links)
