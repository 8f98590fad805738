"""Command-line experiment runner.

Exit codes: 0 success, 2 configuration or file-format error, 3 runtime failure,
4 chain integrity failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Optional, Sequence

from .access import write_audit_csv
from .experiments import sweep
from .ledger import SnapshotFormatError, read_snapshot, split_snapshot, verify_records, replay, write_snapshot
from .netsim.models import ModelKind
from .netsim.sim import atomic_write, run
from .scenario import SWEEP_PARAMS, ConfigError, load_scenario
from .state import state_digest

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_INTEGRITY = 0, 2, 3, 4

log = logging.getLogger("bsdn")


def _models(names: Optional[Sequence[str]], default) -> list[ModelKind]:
    if not names:
        return list(default)
    return [ModelKind.parse(n) for n in names]


def _err(msg: str) -> None:
    print(f"bsdn: error: {msg}", file=sys.stderr)


def cmd_run(args) -> int:
    cfg = load_scenario(args.scenario)
    models = _models(args.model, cfg.run.models)
    seeds = args.seed or cfg.run.seeds
    os.makedirs(args.out, exist_ok=True)
    for m in models:
        for seed in seeds:
            try:
                report = run(cfg, seed, m, trace=args.trace)
            except Exception as exc:
                _err(f"scenario={cfg.name} model={m.value} seed={seed}: runtime failure: {exc}")
                log.debug("traceback", exc_info=True)
                return EXIT_RUNTIME
            path = report.write_csv(args.out)
            stem = path[: -len(".csv")]
            write_snapshot(f"{stem}.bsdn", report.chain)
            write_audit_csv(f"{stem}_audit.csv", report.audit)
            if args.trace:
                atomic_write(f"{stem}_trace.csv", report.trace_csv())
            print(f"== {cfg.name} {m.value} seed={seed} -> {path}")
            print(report.summary_text())
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_scenario(args.scenario)
    spec = cfg.sweep
    param = args.param or (spec.param if spec else None)
    if param is None:
        raise ConfigError("sweep.param", "scenario has no sweep section; pass --param and --values")
    if param not in SWEEP_PARAMS:
        raise ConfigError("sweep.param", f"unknown parameter {param!r}; choose from {sorted(SWEEP_PARAMS)}")
    if args.values:
        try:
            values = [float(v) for v in args.values.split(",") if v.strip()]
        except ValueError:
            raise ConfigError("--values", f"not a number list: {args.values!r}") from None
    else:
        values = spec.values if spec and spec.param == param else []
    if not values:
        raise ConfigError("sweep.values", "value list must be non-empty")
    models = _models(args.model, spec.models if spec else cfg.run.models)
    metric = args.metric or (spec.metric if spec else "goodput_steady_bps")
    seeds = args.seed or cfg.run.seeds
    result = sweep(cfg, param, values, models, seeds, metric)
    out = args.out
    if os.path.isdir(out) or out.endswith(os.sep):
        os.makedirs(out, exist_ok=True)
        out = os.path.join(out, f"{cfg.name}_sweep_{param}.csv")
    result.write_csv(out)
    print(result.to_csv(), end="")
    print(f"wrote {out}", file=sys.stderr)
    if result.errors:
        for e in result.errors:
            _err(e)
        return EXIT_RUNTIME
    return EXIT_OK


def _load_records(path: str):
    with open(path, "rb") as f:
        return split_snapshot(f.read())


def cmd_verify(args) -> int:
    records = _load_records(args.snapshot)
    d, state = verify_records(records)
    if not d:
        _err(f"{args.snapshot}: integrity failure: {d.reason} ({d.detail})")
        return EXIT_INTEGRITY
    print(f"ok: {len(records)} blocks (height {len(records) - 1})")
    print(f"state_digest: {state_digest(state).hex()}")
    return EXIT_OK


def cmd_replay(args) -> int:
    records = _load_records(args.snapshot)
    d, _ = verify_records(records)
    if not d:
        _err(f"{args.snapshot}: integrity failure: {d.reason} ({d.detail})")
        return EXIT_INTEGRITY
    chain = read_snapshot(args.snapshot)
    height = len(chain) - 1 if args.height is None else args.height
    if not 0 <= height < len(chain):
        raise ConfigError("--height", f"must be in 0..{len(chain) - 1}")
    state = replay(chain[: height + 1])
    print(f"height: {height}")
    print(f"state_digest: {state_digest(state).hex()}")
    for sw in sorted(state.flow_tables):
        t = state.flow_tables[sw]
        if t.version > 1 or t.entries:
            print(f"table {sw}: version={t.version} entries={len(t.entries)} hash={state.table_hashes[sw][-1].hex()[:16]}")
    for pid in sorted(state.policies):
        p = state.policies[pid]
        print(f"policy {pid}: holder={state.right_holders[pid]} device={p.device_id} active={p.active}")
    for dev in sorted(state.loads):
        load = state.loads[dev]
        print(f"load {dev}: {load.current}/{load.capacity}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bsdn", description="Permissioned-ledger SDN simulator")
    sub = p.add_subparsers(dest="cmd", required=True)
    models = ", ".join(m.value for m in ModelKind)

    r = sub.add_parser("run", help="run a scenario and write metrics CSVs")
    r.add_argument("scenario", help="scenario YAML path or bundled name")
    r.add_argument("--seed", type=int, action="append", help="seed (repeatable; default: scenario seeds)")
    r.add_argument("--model", action="append", help=f"model (repeatable): {models}")
    r.add_argument("--out", default=".", help="output directory")
    r.add_argument("--trace", action="store_true", help="also write the protocol message trace")
    r.set_defaults(fn=cmd_run)

    s = sub.add_parser("sweep", help="sweep one parameter and compare models")
    s.add_argument("scenario")
    s.add_argument("--param", help=f"one of {', '.join(sorted(SWEEP_PARAMS))}")
    s.add_argument("--values", help="comma-separated values")
    s.add_argument("--model", action="append", help=f"model (repeatable): {models}")
    s.add_argument("--metric", help="summary metric to aggregate")
    s.add_argument("--seed", type=int, action="append")
    s.add_argument("--out", default=".", help="output CSV path or directory")
    s.set_defaults(fn=cmd_sweep)

    v = sub.add_parser("verify", help="verify a chain snapshot")
    v.add_argument("snapshot")
    v.set_defaults(fn=cmd_verify)

    rp = sub.add_parser("replay", help="replay a snapshot and print the world state")
    rp.add_argument("snapshot")
    rp.add_argument("--height", type=int)
    rp.set_defaults(fn=cmd_replay)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("BSDN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        _err(f"config: {exc}")
        return EXIT_CONFIG
    except ValueError as exc:  # unknown model names and similar argument errors
        if isinstance(exc, SnapshotFormatError):
            _err(f"format: {exc}")
        else:
            _err(str(exc))
        return EXIT_CONFIG
    except OSError as exc:
        _err(str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
