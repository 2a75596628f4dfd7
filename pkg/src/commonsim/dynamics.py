"""Resource state machine: harvest, contention allocation, regrowth, collapse.

All transition functions are pure: they take and return immutable values and
draw randomness only from an explicitly passed generator, so they are safe to
call from any thread.

Two directions are supported. With a desirable resource (fish) agents extract
it and collapse means depletion; with an undesirable one (trash) agents remove
it and collapse means the stock hitting capacity.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from enum import Enum

from .errors import ConfigurationError


class Direction(Enum):
    HARVEST_GOOD = "harvest_good"
    REMOVE_BAD = "remove_bad"


@dataclass(frozen=True)
class DynamicsParams:
    """Parameters of the shared-resource pool."""

    capacity: float = 100.0
    growth_factor: float = 2.0
    collapse_threshold: float = 5.0
    horizon: int = 12
    direction: Direction = Direction.HARVEST_GOOD

    def __post_init__(self):
        if self.capacity <= 0:
            raise ConfigurationError("capacity must be positive")
        if self.growth_factor < 1:
            raise ConfigurationError("growth_factor must be >= 1")
        if not 0 <= self.collapse_threshold < self.capacity:
            raise ConfigurationError("collapse_threshold must be in [0, capacity)")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be a positive integer")


@dataclass(frozen=True)
class ResourceState:
    """The single mutable truth of a simulation, as an immutable snapshot."""

    amount: float
    month: int = 0
    collapsed: bool = False

    def __post_init__(self):
        if self.amount < 0:
            raise ValueError("amount must be nonnegative")


@dataclass(frozen=True)
class AllocationResult:
    """Per-agent quantities actually granted for one month."""

    per_agent: tuple[float, ...]
    total_extracted: float
    visit_order: tuple[int, ...]


def regrow(state: ResourceState, params: DynamicsParams) -> ResourceState:
    """Apply end-of-month growth: amount doubles (generally, scales by the
    growth factor) capped at capacity. The month index is untouched; regrowth
    is an intra-month event."""
    if state.collapsed:
        raise ValueError("regrow called on a collapsed state")
    new_amount = min(params.growth_factor * state.amount, params.capacity)
    return replace(state, amount=new_amount)


def check_collapse(state: ResourceState, params: DynamicsParams) -> bool:
    """Collapse test. Desirable resource: strictly below the threshold.
    Undesirable resource: at or above capacity (the pool is saturated)."""
    if params.direction is Direction.HARVEST_GOOD:
        return state.amount < params.collapse_threshold
    return state.amount >= params.capacity


def advance_month(state: ResourceState, collapsed: bool) -> ResourceState:
    """Close out the month: bump the index and latch the collapse flag
    (collapse is monotone within a run)."""
    return replace(state, month=state.month + 1, collapsed=state.collapsed or collapsed)


def sustainability_threshold(state: ResourceState, params: DynamicsParams) -> float:
    """Largest total extraction this month that leaves the pool non-decreasing
    after regrowth (for removal duty: the minimum removal that keeps the pool
    non-increasing). Both read amount * (1 - 1/g); amount/2 under doubling."""
    if state.collapsed:
        raise ValueError("sustainability_threshold called on a collapsed state")
    return state.amount * (1.0 - 1.0 / params.growth_factor)


def fair_share(state: ResourceState, params: DynamicsParams, n_agents: int) -> float:
    """Per-capita slice of the sustainability threshold."""
    if n_agents < 1:
        raise ConfigurationError("n_agents must be >= 1")
    return sustainability_threshold(state, params) / n_agents


def allocate(
    requests: list[float],
    state: ResourceState,
    rng: random.Random,
) -> tuple[AllocationResult, ResourceState]:
    """Grant requests against the available amount.

    If the pool covers the total, everyone gets exactly what they asked for.
    Under contention, agents are visited in a uniformly random permutation and
    each receives min(request, remaining). Conservation always holds:
    amount_before == amount_after + total_extracted.
    """
    if state.collapsed:
        raise ValueError("allocate called on a collapsed state")
    if any(r < 0 for r in requests):
        raise ConfigurationError("requests must be nonnegative")

    n = len(requests)
    order = list(range(n))
    if sum(requests) > state.amount:
        rng.shuffle(order)
    granted = [0.0] * n
    remaining = state.amount
    for i in order:
        take = min(requests[i], remaining)
        granted[i] = take
        remaining -= take
    total = state.amount - remaining
    result = AllocationResult(
        per_agent=tuple(granted),
        total_extracted=total,
        visit_order=tuple(order),
    )
    return result, replace(state, amount=remaining)
