"""The six evaluation metrics and their cross-run aggregation.

All functions are pure reads over completed run records. Gain-direction
metrics (total gain, efficiency) refuse removal-direction records and vice
versa; the aggregate requires a homogeneous direction across records.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import Direction
from .engine import RunRecord
from .errors import UndefinedMetricError, WrongDirectionError


@dataclass(frozen=True)
class MeanStd:
    mean: float
    std: float


@dataclass(frozen=True)
class MetricsSummary:
    direction: Direction
    n_runs: int
    survival_rate: float
    survival_time: MeanStd
    total_gain_or_loss: MeanStd
    efficiency: MeanStd
    equality: MeanStd
    over_usage: MeanStd


def _direction(record: RunRecord) -> Direction:
    return record.scenario.dynamics.direction


def survival_time(record: RunRecord) -> int:
    """Months the pool stayed viable. Harvest direction: the index of the
    month during which collapse occurred (the agents lived through that
    month's harvest, so the minimum is 1), or the horizon if it never did.
    Removal direction: the number of months whose end-of-month state stayed
    below capacity, so an immediate failure scores 0."""
    scenario = record.scenario
    if _direction(record) is Direction.HARVEST_GOOD:
        for rec in record.months:
            if rec.collapsed_during:
                return max(1, rec.month)
        return scenario.dynamics.horizon
    return sum(
        1 for rec in record.months
        if rec.amount_after_regrowth < scenario.dynamics.capacity
    )


def total_gain(record: RunRecord) -> float:
    """Mean per-agent extraction over the whole run (harvest direction)."""
    if _direction(record) is not Direction.HARVEST_GOOD:
        raise WrongDirectionError("total_gain applies to harvest-direction records")
    return float(np.mean(record.per_agent_totals))


def total_loss(record: RunRecord) -> float:
    """Shortfall against the calibrated maximum-loss constant: how much
    removal effort the group left on the table (removal direction)."""
    if _direction(record) is not Direction.REMOVE_BAD:
        raise WrongDirectionError("total_loss applies to removal-direction records")
    mean_removal = float(np.mean(record.per_agent_totals))
    return max(0.0, record.scenario.loss_constant - mean_removal)


def efficiency(record: RunRecord) -> float:
    """Percentage of the maximum sustainable outcome actually achieved.

    Harvest direction: gain relative to the per-capita sustainable quota at
    full capacity held for the whole horizon (120 at defaults). Removal
    direction: mean removal relative to the loss constant, capped at 100."""
    scenario = record.scenario
    params = scenario.dynamics
    if _direction(record) is Direction.HARVEST_GOOD:
        quota = params.capacity * (1.0 - 1.0 / params.growth_factor) / scenario.n_agents
        denominator = quota * params.horizon
        if denominator == 0:
            raise UndefinedMetricError("degenerate config: zero sustainable quota")
        return 100.0 * total_gain(record) / denominator
    if scenario.loss_constant == 0:
        raise UndefinedMetricError("degenerate config: zero loss constant")
    mean_removal = float(np.mean(record.per_agent_totals))
    return min(100.0, 100.0 * mean_removal / scenario.loss_constant)


def gini(values) -> float:
    """Gini coefficient by the pairwise double-sum definition."""
    v = np.asarray(values, dtype=float)
    total = v.sum()
    if total == 0:
        return 0.0
    diffs = np.abs(v[:, None] - v[None, :]).sum()
    return float(diffs / (2 * len(v) * total))


def equality(record: RunRecord) -> float:
    """100 x (1 - Gini) over per-agent totals; an all-zero vector counts as
    perfectly equal."""
    if len(record.per_agent_totals) < 1:
        raise UndefinedMetricError("equality needs at least one agent")
    return 100.0 * (1.0 - gini(record.per_agent_totals))


def over_usage(record: RunRecord) -> float:
    """Percentage of agent-month actions that exceeded the fair share at
    decision time (or, for a removal duty, fell short of it). Actions are
    counted through the collapse month inclusive."""
    direction = _direction(record)
    numerator = 0
    denominator = 0
    for rec in record.months:
        for requested in rec.requests:
            denominator += 1
            if direction is Direction.HARVEST_GOOD:
                if requested > rec.fair_share:
                    numerator += 1
            else:
                if requested < rec.fair_share:
                    numerator += 1
        if rec.collapsed_during:
            break
    if denominator == 0:
        raise UndefinedMetricError("no actions to evaluate")
    return 100.0 * numerator / denominator


def _mean_std(values) -> MeanStd:
    arr = np.asarray(values, dtype=float)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return MeanStd(mean=float(arr.mean()), std=std)


def aggregate(records: list[RunRecord]) -> MetricsSummary:
    """Mean and sample standard deviation of each metric across runs, plus
    the survival rate (fraction of runs reaching the horizon)."""
    if not records:
        raise UndefinedMetricError("aggregate needs at least one record")
    directions = {_direction(r) for r in records}
    if len(directions) > 1:
        raise WrongDirectionError("cannot aggregate records with mixed directions")
    direction = directions.pop()

    times = [survival_time(r) for r in records]
    horizon = records[0].scenario.dynamics.horizon
    rate = sum(1 for t in times if t == horizon) / len(records)
    if direction is Direction.HARVEST_GOOD:
        gains = [total_gain(r) for r in records]
    else:
        gains = [total_loss(r) for r in records]
    return MetricsSummary(
        direction=direction,
        n_runs=len(records),
        survival_rate=rate,
        survival_time=_mean_std(times),
        total_gain_or_loss=_mean_std(gains),
        efficiency=_mean_std([efficiency(r) for r in records]),
        equality=_mean_std([equality(r) for r in records]),
        over_usage=_mean_std([over_usage(r) for r in records]),
    )
