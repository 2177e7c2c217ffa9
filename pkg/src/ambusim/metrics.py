"""Allocation costs, response-time targets, and scenario summaries.

An allocation cost combines urgency-weighted response time with a fixed
mismatch charge for sending the wrong ambulance kind. Extra response time is
the part of the response beyond the per-priority target (600 s for high
priority, 1200 s for low).
"""

from __future__ import annotations

import csv
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

HIGH_TARGET_S = 600.0
LOW_TARGET_S = 1200.0
HIGH_URGENCY = 4.0
LOW_URGENCY = 1.0
DEFAULT_QUEUE_WINDOW_S = 1800.0


@dataclass(frozen=True)
class EmergencyType:
    id: int
    name: str
    priority: str  # "high" or "low"
    mismatch: tuple  # per ambulance type; math.inf marks an incompatible pair

    def __post_init__(self):
        if self.priority not in ("high", "low"):
            raise ValueError(f"bad priority {self.priority!r}")


@dataclass
class CostModel:
    """Urgency weights and mismatch charges for every (ambulance, call) pair."""

    amb_type_names: tuple
    etypes: list

    @property
    def n_amb_types(self) -> int:
        return len(self.amb_type_names)

    @property
    def n_etypes(self) -> int:
        return len(self.etypes)

    def urgency_weight(self, c: int) -> float:
        return HIGH_URGENCY if self.etypes[c].priority == "high" else LOW_URGENCY

    def target_s(self, c: int) -> float:
        return HIGH_TARGET_S if self.etypes[c].priority == "high" else LOW_TARGET_S

    def compatible(self, amb_type: int, c: int) -> bool:
        return math.isfinite(self.etypes[c].mismatch[amb_type])

    def allocation_cost(self, amb_type: int, c: int, response_s: float) -> float:
        """Urgency-weighted response time plus the pair mismatch charge."""
        return self.urgency_weight(c) * response_s + self.etypes[c].mismatch[amb_type]

    def extra_response_time(self, c: int, response_s: float) -> float:
        """Seconds of response beyond the priority target, floored at zero."""
        return max(0.0, response_s - self.target_s(c))

    def preference_order(self, c: int) -> list:
        """Compatible ambulance types, cheapest mismatch first, ties by index."""
        pairs = [
            (self.etypes[c].mismatch[t], t)
            for t in range(self.n_amb_types)
            if self.compatible(t, c)
        ]
        return [t for _, t in sorted(pairs)]

    def preferred_type(self, c: int) -> int:
        order = self.preference_order(c)
        if not order:
            raise ValueError(f"class {c} has no compatible ambulance type")
        return order[0]

    def queue_penalty(self, c: int, window_s: float = DEFAULT_QUEUE_WINDOW_S) -> float:
        """Cost charged per decision epoch for leaving a class-c call waiting."""
        return self.urgency_weight(c) * window_s

    @classmethod
    def default_rj(cls) -> "CostModel":
        """Two ambulance kinds, four call classes, any kind may serve any call.

        Classes 0 and 1 prefer the advanced unit (basic unit costs 6000),
        classes 2 and 3 prefer the basic unit (advanced unit costs 1500);
        classes 0 and 2 are high priority.
        """
        return cls(
            amb_type_names=("ALS", "BLS"),
            etypes=[
                EmergencyType(0, "high_als", "high", (0.0, 6000.0)),
                EmergencyType(1, "low_als", "low", (0.0, 6000.0)),
                EmergencyType(2, "high_basic", "high", (1500.0, 0.0)),
                EmergencyType(3, "low_basic", "low", (1500.0, 0.0)),
            ],
        )

    @classmethod
    def default_us(cls) -> "CostModel":
        """Variant where high-priority calls require the advanced unit."""
        return cls(
            amb_type_names=("ALS", "BLS"),
            etypes=[
                EmergencyType(0, "high_als", "high", (0.0, math.inf)),
                EmergencyType(1, "low_basic", "low", (1500.0, 0.0)),
                EmergencyType(2, "high_als2", "high", (0.0, math.inf)),
                EmergencyType(3, "low_basic2", "low", (1500.0, 0.0)),
            ],
        )


def nearest_rank_quantile(values, q: float) -> float:
    """Nearest-rank quantile: smallest value with rank >= ceil(q * n)."""
    if not 0.0 < q <= 1.0:
        raise ValueError("q must be in (0, 1]")
    arr = np.sort(np.asarray(values, dtype=float))
    if len(arr) == 0:
        return float("nan")
    rank = max(1, math.ceil(q * len(arr)))
    return float(arr[rank - 1])


@dataclass
class SummaryStats:
    n_scenarios: int
    n_records: int
    mean_response_s: float
    q90_response_s: float
    mean_allocation_cost: float
    mean_extra_high_s: float
    mean_extra_low_s: float


def summarize(scenario_records: list, cost_model: CostModel) -> SummaryStats:
    """Pooled statistics over replications.

    scenario_records is a list (one entry per replication) of record lists;
    each record carries response_time, allocation_cost and etype. Pooling is
    order-independent: permuting replications leaves every statistic fixed.
    """
    rts, costs, extra_hi, extra_lo = [], [], [], []
    for records in scenario_records:
        for rec in records:
            rts.append(rec.response_time)
            costs.append(rec.allocation_cost)
            extra = cost_model.extra_response_time(rec.etype, rec.response_time)
            if cost_model.etypes[rec.etype].priority == "high":
                extra_hi.append(extra)
            else:
                extra_lo.append(extra)
    return SummaryStats(
        n_scenarios=len(scenario_records),
        n_records=len(rts),
        mean_response_s=float(np.mean(rts)) if rts else float("nan"),
        q90_response_s=nearest_rank_quantile(rts, 0.9) if rts else float("nan"),
        mean_allocation_cost=float(np.mean(costs)) if costs else float("nan"),
        mean_extra_high_s=float(np.mean(extra_hi)) if extra_hi else 0.0,
        mean_extra_low_s=float(np.mean(extra_lo)) if extra_lo else 0.0,
    )


SUMMARY_COLUMNS = [
    "policy",
    "n_ambulances",
    "n_scenarios",
    "mean_rt",
    "q90_rt",
    "mean_cost",
    "mean_extra_high",
    "mean_extra_low",
]


def write_summary_csv(path: str, rows: list) -> None:
    """Rows are (policy, n_ambulances, SummaryStats); written atomically."""
    tmp_fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
    try:
        with os.fdopen(tmp_fd, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(SUMMARY_COLUMNS)
            for policy, n_amb, stats in rows:
                writer.writerow(
                    [
                        policy,
                        n_amb,
                        stats.n_scenarios,
                        f"{stats.mean_response_s:.6f}",
                        f"{stats.q90_response_s:.6f}",
                        f"{stats.mean_allocation_cost:.6f}",
                        f"{stats.mean_extra_high_s:.6f}",
                        f"{stats.mean_extra_low_s:.6f}",
                    ]
                )
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
