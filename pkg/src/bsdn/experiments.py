"""Parameter sweeps: median over seeds, one row per swept value, one column per model."""

from __future__ import annotations

import csv
import io
import logging
import statistics
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .netsim.models import ModelKind, reduction_pct
from .netsim.sim import MetricsReport, fmt_value, atomic_write, run
from .scenario import ScenarioConfig

log = logging.getLogger(__name__)

MISSING = "MISSING"


@dataclass
class SweepResult:
    scenario: str
    param: str
    metric: str
    values: list[float]
    models: list[ModelKind]
    cells: dict[tuple[float, ModelKind], Optional[float]]
    errors: list[str] = field(default_factory=list)

    @property
    def has_reduction(self) -> bool:
        # the reduction compares latencies; it has no meaning for goodput columns
        both = ModelKind.permissioned_bc_sdn in self.models and ModelKind.public_bc_sdn in self.models
        return both and self.metric.startswith("update_latency")

    def reduction(self, value: float) -> Optional[float]:
        pub = self.cells.get((value, ModelKind.public_bc_sdn))
        perm = self.cells.get((value, ModelKind.permissioned_bc_sdn))
        if pub is None or perm is None:
            return None
        return reduction_pct(pub, perm)

    def header(self) -> list[str]:
        cols = [self.param] + [m.value for m in self.models]
        if self.has_reduction:
            cols.append("reduction_pct")
        return cols

    def rows(self) -> list[list[str]]:
        out = []
        for v in self.values:
            row = [fmt_value(v)]
            for m in self.models:
                cell = self.cells.get((v, m))
                row.append(MISSING if cell is None else fmt_value(cell))
            if self.has_reduction:
                r = self.reduction(v)
                row.append(MISSING if r is None else fmt_value(r))
            out.append(row)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        w.writerows(self.rows())
        return buf.getvalue()

    def write_csv(self, path) -> None:
        atomic_write(path, self.to_csv())


def sweep(
    cfg: ScenarioConfig,
    param: str,
    values: Sequence[float],
    models: Sequence[ModelKind],
    seeds: Sequence[int],
    metric: str = "goodput_steady_bps",
    on_report: Optional[Callable[[MetricsReport], None]] = None,
) -> SweepResult:
    """Run every (value, model, seed) cell; failed cells are recorded, not raised."""
    if not values:
        raise ValueError("sweep needs at least one value")
    cells: dict[tuple[float, ModelKind], Optional[float]] = {}
    errors: list[str] = []
    for v in values:
        variant = cfg.with_param(param, v)
        for m in models:
            got = []
            for seed in seeds:
                try:
                    report = run(variant, seed, m)
                except Exception as exc:  # keep the rest of the sweep
                    msg = f"scenario={cfg.name} model={m.value} seed={seed} {param}={v}: {exc}"
                    log.error(msg)
                    errors.append(msg)
                    got = None
                    break
                if on_report is not None:
                    on_report(report)
                x = report.summary.get(metric)
                if x is None:
                    got = None
                    break
                got.append(float(x))
            cells[(v, m)] = statistics.median(got) if got else None
    return SweepResult(cfg.name, param, metric, list(values), list(models), cells, errors)
