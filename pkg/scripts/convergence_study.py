#!/usr/bin/env python3
"""Flow-table convergence under message loss on the 21-node topology.

For each loss rate, runs many seeds with only the scenario's flow updates
and reports how many switches ended on the ledger's latest table version,
the retry attempts needed, and the time from the last commit to the last
adoption.
"""

import argparse
import copy
import statistics
import sys

from bsdn import load_scenario
from bsdn.netsim import Simulation


def study(cfg, model: str, loss: float, seeds: int) -> dict:
    cfg = copy.deepcopy(cfg)
    cfg.protocol.loss = loss
    converged, attempts, lag = 0, [], []
    for seed in range(seeds):
        sim = Simulation(cfg, model, seed)
        sim.execute()
        conv = sim.convergence()
        converged += conv["converged"]
        attempts.append(conv["max_attempts"])
        if sim.last_update_commit is not None and conv["last_adoption"]:
            lag.append(conv["last_adoption"] - sim.last_update_commit)
    return {
        "loss": loss,
        "converged": converged / seeds,
        "max_attempts": max(attempts),
        "median_lag_ms": 1000 * statistics.median(lag) if lag else float("nan"),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--scenario", default="fig2_small")
    ap.add_argument("--model", default="permissioned_bc_sdn")
    ap.add_argument("--loss", default="0,0.1,0.3,0.5", help="comma-separated loss rates")
    ap.add_argument("--seeds", type=int, default=200)
    ap.add_argument("--end", type=float, default=40.0, help="simulated seconds per run")
    args = ap.parse_args(argv)

    cfg = copy.deepcopy(load_scenario(args.scenario))
    w = cfg.workload
    w.request_rate = w.packet_in_rate = 0.0
    w.transfers = []
    cfg.attack.flood_rate = 0.0
    cfg.run.end_time = args.end
    cfg.run.sample_interval = args.end

    print("loss,converged_fraction,max_attempts,median_lag_ms")
    for loss in (float(x) for x in args.loss.split(",")):
        r = study(cfg, args.model, loss, args.seeds)
        print(f"{r['loss']},{r['converged']:.4f},{r['max_attempts']},{r['median_lag_ms']:.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
