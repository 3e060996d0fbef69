"""Seeded RMIT execution plans.

Every (instance, call, iteration) slot runs v1 and v2 back to back; only the
order inside the pair is random. Iterations of one call stay sequential.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

from .rng import TAG_SCHEDULER, SplitMix64, derive_seed


class Order(str, Enum):
    V1_FIRST = "V1First"
    V2_FIRST = "V2First"

    @property
    def versions(self) -> tuple[int, int]:
        return (1, 2) if self is Order.V1_FIRST else (2, 1)


@dataclass(frozen=True)
class PlannedInvocation:
    instance_id: int
    call_index: int
    iteration_index: int
    order: Order


@dataclass(frozen=True)
class ExecutionPlan:
    instances: int
    calls: int
    iterations: int
    seed: int
    invocations: tuple[PlannedInvocation, ...]

    def __len__(self):
        return len(self.invocations)

    def for_call(self, instance_id: int, call_index: int) -> tuple[PlannedInvocation, ...]:
        start = (instance_id * self.calls + call_index) * self.iterations
        return self.invocations[start:start + self.iterations]

    def to_json(self) -> str:
        return json.dumps([
            {
                "instance_id": p.instance_id,
                "call_index": p.call_index,
                "iteration_index": p.iteration_index,
                "order": p.order.value,
            }
            for p in self.invocations
        ])


def generate_plan(instances: int, calls: int, iterations: int, seed: int) -> ExecutionPlan:
    """Materialize the full K*C*i schedule.

    Pair ``n`` (generation order: instance, call, iteration) takes its order
    from bit 63 of output ``n`` of the scheduler stream: 0 means v1 first.
    """
    for name, value in (("instances", instances), ("calls", calls), ("iterations", iterations)):
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise ValueError(f"{name} must be a positive integer, got {value!r}")
    stream = SplitMix64(derive_seed(seed, TAG_SCHEDULER))
    invocations = []
    for k in range(instances):
        for c in range(calls):
            for it in range(iterations):
                bit = stream.next() >> 63
                invocations.append(PlannedInvocation(k, c, it, Order.V2_FIRST if bit else Order.V1_FIRST))
    return ExecutionPlan(instances, calls, iterations, seed, tuple(invocations))


def order_counts(plan: ExecutionPlan) -> tuple[int, int]:
    v1_first = sum(1 for p in plan.invocations if p.order is Order.V1_FIRST)
    return v1_first, len(plan.invocations) - v1_first
