#!/usr/bin/env python3
"""Run the bundled DoS and update-latency sweeps and write their comparison CSVs."""

import argparse
import os
import sys
import time

from bsdn import load_scenario
from bsdn.experiments import sweep


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results", help="output directory")
    ap.add_argument("--seeds", type=int, default=5, help="seeds per cell (1..N)")
    ap.add_argument("scenarios", nargs="*", default=["fig5_dos", "fig4_updates"])
    args = ap.parse_args(argv)

    os.makedirs(args.out, exist_ok=True)
    failed = False
    for name in args.scenarios:
        cfg = load_scenario(name)
        if cfg.sweep is None:
            print(f"{name}: no sweep section, skipped", file=sys.stderr)
            continue
        s = cfg.sweep
        t0 = time.perf_counter()
        res = sweep(cfg, s.param, s.values, s.models, list(range(1, args.seeds + 1)), s.metric)
        path = os.path.join(args.out, f"{name}_sweep_{s.param}.csv")
        res.write_csv(path)
        print(f"# {name} ({s.metric}, {time.perf_counter() - t0:.1f}s) -> {path}")
        print(res.to_csv())
        failed |= bool(res.errors)
    return 3 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
