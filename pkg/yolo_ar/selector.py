from dataclasses import dataclass
from enum import Enum

from pydantic import BaseModel

from yolo_ar.errors import ConfigurationError, DataError, InfeasibleBudgetError
from yolo_ar.profiler import SweepRow, SweepTable


class Metric(Enum):
    MAP50 = "mAP50"
    MAP50_95 = "mAP50_95"

    def of(self, row: SweepRow) -> float:
        value = row.map50 if self is Metric.MAP50 else row.map50_95
        if value is None:
            raise DataError(
                f"row {row.variant_name}@{row.input_size} has no {self.value} value"
            )
        return value


@dataclass(frozen=True)
class Budget:
    limit: float  # ms
    metric: Metric = Metric.MAP50_95

    def __post_init__(self):
        if not self.limit > 0:
            raise ConfigurationError(f"budget must be > 0 ms, got {self.limit}")


class Selection(BaseModel):
    chosen: SweepRow
    budget_ms: float
    metric: str
    feasible_count: int
    frontier: list[SweepRow]


def feasible_rows(table: SweepTable, budget: Budget) -> list[SweepRow]:
    return [r for r in table.rows if r.mean_total_ms <= budget.limit]


def pareto_frontier(rows: list[SweepRow] | SweepTable, metric: Metric) -> list[SweepRow]:
    """Rows not dominated in (latency, metric), by ascending latency.

    Rows equal on both axes keep only the first.
    """
    if isinstance(rows, SweepTable):
        rows = rows.rows
    ordered = sorted(rows, key=lambda r: (r.mean_total_ms, -metric.of(r)))
    frontier, best = [], None
    for r in ordered:
        if best is None or metric.of(r) > best:
            frontier.append(r)
            best = metric.of(r)
    return frontier


def _break_ties(rows: list[SweepRow], metric: Metric) -> SweepRow:
    best = max(metric.of(r) for r in rows)
    tied = [r for r in rows if metric.of(r) == best]
    fastest = min(r.mean_total_ms for r in tied)
    tied = [r for r in tied if r.mean_total_ms == fastest]
    if all(r.parameter_count is not None for r in tied):
        smallest = min(r.parameter_count for r in tied)
        tied = [r for r in tied if r.parameter_count == smallest]
    return min(tied, key=lambda r: (r.variant_name, r.input_size))


def select_config(table: SweepTable, budget: Budget) -> SweepRow:
    """Highest metric within the budget; ties go to lower latency, then fewer
    parameters, then variant name when the tied rows lack parameter counts."""
    if not table.rows:
        raise DataError("empty sweep table")
    for r in table.rows:
        budget.metric.of(r)
    feasible = feasible_rows(table, budget)
    if not feasible:
        raise InfeasibleBudgetError(
            budget.limit, min(table.rows, key=lambda r: r.mean_total_ms)
        )
    return _break_ties(feasible, budget.metric)


def justify(table: SweepTable, budget: Budget) -> Selection:
    chosen = select_config(table, budget)
    feasible = feasible_rows(table, budget)
    return Selection(
        chosen=chosen,
        budget_ms=budget.limit,
        metric=budget.metric.value,
        feasible_count=len(feasible),
        frontier=pareto_frontier(feasible, budget.metric),
    )
