"""Independent reference implementations used to check the package.

These deliberately avoid the package's own helpers: they work on plain
tuples/dicts and apply each rule literally.
"""

from __future__ import annotations

import math


def ip_in(addr: int, net: tuple[int, int]) -> bool:
    base, prefix = net
    shift = 32 - prefix
    return (addr >> shift) == (base >> shift) if prefix else True


def entry_matches(entry, pkt) -> bool:
    m = entry.match
    for name in ("in_port", "eth_src", "eth_dst", "ip_proto", "l4_src", "l4_dst"):
        want = getattr(m, name)
        if want is not None and want != getattr(pkt, name):
            return False
    for name in ("ip_src", "ip_dst"):
        want = getattr(m, name)
        if want is not None and not ip_in(getattr(pkt, name), want):
            return False
    return True


def brute_force_match(entries, pkt):
    """Scan every entry; pick max (priority, -entry_id). Returns entry id or None."""
    best = None
    for e in entries:
        if entry_matches(e, pkt):
            key = (e.priority, -e.entry_id)
            if best is None or key > best[0]:
                best = (key, e.entry_id)
    return None if best is None else best[1]


def apply_ops_by_hand(entries: dict, ops) -> dict:
    out = dict(entries)
    for op in ops:
        if op.op == "delete":
            out.pop(op.entry_id)
        else:
            out[op.entry_id] = op.entry
    return out


# --- access control ----------------------------------------------------------

def constraint_holds(user, c) -> bool:
    actual = getattr(user, c.attr)
    return actual >= c.value if c.op == ">=" else actual == c.value


def oracle_decision(users: dict, devices: set, tasks: set, policies: dict, holders: dict, user, device, task):
    """Literal allow rule over all policies; returns ("allow", pid) or ("deny", None)."""
    if user not in users or device not in devices or task not in tasks:
        return ("deny", None)
    allowed = []
    for pid, p in policies.items():
        if (p.active and p.device_id == device and holders[pid] == user
                and all(constraint_holds(users[user], c) for c in p.required_attrs)
                and task in p.allowed_tasks):
            allowed.append(pid)
    return ("allow", min(allowed)) if allowed else ("deny", None)


def rtt_walk(chain) -> dict:
    """Holder per policy by scanning creation and transfer transactions in ledger order."""
    holders = {}
    for block in chain:
        for tx in block.transactions:
            kind = tx.kind.value
            if kind == "Genesis":
                for p in tx.payload.policies:
                    holders[p.policy_id] = p.owner
            elif kind == "PolicyCreation":
                holders[tx.payload.policy.policy_id] = tx.payload.policy.owner
            elif kind == "RightTransfer":
                holders[tx.payload.policy_id] = tx.payload.to_user
    return holders


# --- load accounting ---------------------------------------------------------

def load_by_scan(chain, costs: dict) -> list[dict]:
    """Per-height device load: sum of costs of admits not yet released."""
    active: dict[int, tuple[str, int]] = {}
    per_height = []
    for block in chain:
        for tx in block.transactions:
            kind = tx.kind.value
            if kind == "LoadAdmit":
                active[tx.payload.request_id] = (tx.payload.device, costs[tx.payload.task])
            elif kind == "LoadRelease":
                active.pop(tx.payload.request_id)
        totals: dict[str, int] = {}
        for dev, cost in active.values():
            totals[dev] = totals.get(dev, 0) + cost
        per_height.append(totals)
    return per_height


# --- analytic models ---------------------------------------------------------

def erlang_survival(t: float, k: int, mean: float) -> float:
    """P(sum of k Exp(mean) > t) via the Poisson tail."""
    lam = t / mean
    return sum(math.exp(-lam) * lam ** i / math.factorial(i) for i in range(k))


def md1_mean_wait(lam: float, service_time: float) -> float:
    """Pollaczek-Khinchine for deterministic service."""
    rho = lam * service_time
    return rho * service_time / (2 * (1 - rho))


def all_pairs_latency(nodes, links) -> dict:
    """Floyd-Warshall over the link list."""
    inf = float("inf")
    d = {a: {b: (0.0 if a == b else inf) for b in nodes} for a in nodes}
    for lk in links:
        d[lk.a][lk.b] = min(d[lk.a][lk.b], lk.latency)
        d[lk.b][lk.a] = min(d[lk.b][lk.a], lk.latency)
    for k in nodes:
        for i in nodes:
            dik = d[i][k]
            for j in nodes:
                if dik + d[k][j] < d[i][j]:
                    d[i][j] = dik + d[k][j]
    return d
