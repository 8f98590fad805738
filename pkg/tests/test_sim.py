import copy
import math

import pytest

from bsdn import load_scenario, run
from bsdn.ledger import TxKind, verify_chain
from bsdn.netsim import Simulation
from bsdn.netsim.sim import REPORT_COLUMNS, fmt_value

MODELS = ("permissioned_bc_sdn", "public_bc_sdn", "openflow_sdn")


@pytest.fixture(scope="module")
def small():
    return load_scenario("fig2_small")


def quiet(cfg):
    cfg = copy.deepcopy(cfg)
    w = cfg.workload
    w.request_rate = 0.0
    w.packet_in_rate = 0.0
    w.flow_updates = []
    w.transfers = []
    cfg.attack.flood_rate = 0.0
    return cfg


@pytest.mark.parametrize("model", MODELS)
def test_same_seed_same_csv(small, model):
    a, b = run(small, 3, model), run(small, 3, model)
    assert a.to_csv() == b.to_csv()
    assert a.summary == b.summary


def test_different_seeds_differ(small):
    assert run(small, 1, "public_bc_sdn").to_csv() != run(small, 2, "public_bc_sdn").to_csv()


def test_csv_layout(small):
    rep = run(small, 1, "permissioned_bc_sdn")
    lines = rep.to_csv().splitlines()
    assert lines[0] == ",".join(REPORT_COLUMNS)
    n = int(small.run.end_time / small.run.sample_interval) + 1
    assert len(lines) == n + 1
    assert rep.filename == "fig2_small_permissioned_bc_sdn_1.csv"


def test_fmt_value():
    assert fmt_value(None) == ""
    assert fmt_value(0.1 + 0.2) == "0.3"
    assert fmt_value(3) == "3"


@pytest.mark.parametrize("model", MODELS)
def test_zero_workload_is_idle(small, model):
    rep = run(quiet(small), 1, model)
    assert rep.summary["chain_height"] == 0
    assert rep.summary["accepted"] == rep.summary["rejected"] == 0
    assert rep.summary["packet_ins"] == 0 and rep.summary["attack_packets"] == 0
    assert all(q == 0 for q in rep.column("ctrl_queue"))
    assert all(x is None for x in rep.column("update_latency_s"))


@pytest.mark.parametrize("model", MODELS)
def test_goodput_equals_offered_without_attack(small, model):
    rep = run(quiet(small), 1, model)
    offered = small.workload.legit_rate_bps
    for g in rep.column("goodput_bps"):
        assert abs(g - offered) <= 0.01 * offered


def test_goodput_capped_by_capacity(small):
    cfg = quiet(small)
    cfg.workload.legit_rate_bps = 10 * cfg.calibration.capacity_bps
    rep = run(cfg, 1, "openflow_sdn")
    assert max(rep.column("goodput_bps")) == cfg.calibration.capacity_bps


def test_attack_count_is_poisson():
    cfg = load_scenario("fig5_dos")
    rep = run(cfg, 4, "openflow_sdn")
    mean = cfg.attack.flood_rate * (cfg.run.end_time - cfg.attack.start)
    assert abs(rep.summary["attack_packets"] - mean) <= 3 * math.sqrt(mean)


def test_permissioned_drops_unregistered_sources():
    cfg = load_scenario("fig5_dos")
    perm = run(cfg, 1, "permissioned_bc_sdn").summary
    of = run(cfg, 1, "openflow_sdn").summary
    assert perm["attack_dropped"] == perm["attack_packets"] and perm["attack_to_controller"] == 0
    assert of["attack_dropped"] == 0 and of["attack_to_controller"] > 0


def test_requests_are_conserved():
    cfg = load_scenario("greedy_server")
    rep = run(cfg, 1)
    s = rep.summary
    assert len(rep.audit) == cfg.workload.max_requests
    assert s["accepted"] + s["rejected"] == cfg.workload.max_requests
    assert s["capacity_violations"] == 0


def test_committed_admits_have_grants(small):
    rep = run(small, 2, "permissioned_bc_sdn")
    assert verify_chain(rep.chain)
    granted = set()
    admits = 0
    for block in rep.chain:
        for tx in block.transactions:
            if tx.kind is TxKind.AccessGrant:
                granted.add(tx.payload.request_id)
            elif tx.kind is TxKind.LoadAdmit:
                admits += 1
                assert tx.payload.request_id in granted
    assert admits == rep.summary["accepted"] > 0


def test_honest_audit_allows_match_policies(small):
    # an honest server only approves what the ledger would also accept
    rep = run(small, 5, "permissioned_bc_sdn")
    allowed = [r for r in rep.audit if r.decision == "allow"]
    assert allowed and all(r.reason_or_policy.startswith("p") for r in allowed)


def test_no_loss_delivers_every_message_once(small):
    sim = Simulation(small, "permissioned_bc_sdn", 1, trace=True)
    rep = sim.execute()
    in_flight = sum(1 for item in sim.engine._heap if item[3].kind == "deliver" and not item[3].cancelled)
    assert rep.summary["messages_lost"] == 0
    assert len(rep.trace) + in_flight == rep.summary["messages_sent"]


def test_loss_drops_some_messages(small):
    cfg = copy.deepcopy(small)
    cfg.protocol.loss = 0.2
    s = run(cfg, 1, "permissioned_bc_sdn").summary
    assert 0 < s["messages_lost"] < s["messages_sent"]


@pytest.mark.parametrize("model", MODELS)
def test_switches_converge(small, model):
    sim = Simulation(small, model, 1)
    sim.execute()
    conv = sim.convergence()
    assert conv["converged"], conv
    assert sim.ledger.state.flow_tables["s1"].version == 2


def test_replicas_match_ledger_after_convergence(small):
    sim = Simulation(small, "permissioned_bc_sdn", 1)
    sim.execute()
    for sw in sim.switches:
        assert sim.agents[sw].table == sim.ledger.state.flow_tables[sw]


def test_latency_ordering_between_chains():
    cfg = load_scenario("fig4_updates")
    cfg = copy.deepcopy(cfg)
    cfg.run.end_time = 20.0
    perm = run(cfg, 1, "permissioned_bc_sdn").summary["update_latency_mean_s"]
    pub = run(cfg, 1, "public_bc_sdn").summary["update_latency_mean_s"]
    assert 0 < perm < pub


def test_trace_columns(small):
    rep = run(small, 1, "permissioned_bc_sdn", trace=True)
    lines = rep.trace_csv().splitlines()
    assert lines[0] == "sim_time,src,dst,msg_type,version,hash_prefix8"
    assert any(",update_request," in line for line in lines)
