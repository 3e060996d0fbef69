"""Parametric FaaS platform model with a linear-cost Monte-Carlo-Pi workload.

Durations are

    base_ms(version) * speed_factor * drift_state * exp(N(0, sigma_invocation))

plus ``cold_start_ms`` on the first invocation of an instance. ``speed_factor``
is lognormal per instance and fixed; ``drift_state`` is a per-instance
geometric random walk stepped after every invocation. Default constants are
calibration choices, not measured provider values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .rng import TAG_INSTANCE_NOISE, TAG_INSTANCE_SPEED, SplitMix64, derive_seed

NS_PER_MS = 1_000_000


@dataclass(frozen=True)
class WorkloadModel:
    ms_per_mega_value: float = 20.0
    values_v1: int = 5_000_000
    values_v2: int = 5_250_000

    def __post_init__(self):
        if not self.ms_per_mega_value > 0:
            raise ValueError("ms_per_mega_value must be > 0")
        for name in ("values_v1", "values_v2"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer")

    def base_ms(self, version: int) -> float:
        values = self.values_v1 if version == 1 else self.values_v2
        return self.ms_per_mega_value * values / 1e6


@dataclass(frozen=True)
class PlatformModel:
    sigma_instance: float = 0.05
    sigma_invocation: float = 0.01
    drift_step_sigma: float = 0.005
    cold_start_ms: float = 200.0
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_instance", "sigma_invocation", "drift_step_sigma", "cold_start_ms"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not value >= 0 or math.isinf(value):
                raise ValueError(f"{name} must be a finite value >= 0, got {value!r}")


@dataclass
class SimInstance:
    id: int
    speed_factor: float
    drift_state: float = 1.0
    invocation_count: int = 0
    noise: SplitMix64 = field(default=None, repr=False)


class Platform:
    """A simulated provider; not thread-safe (instances carry mutable drift)."""

    def __init__(self, model: PlatformModel, workload: WorkloadModel):
        self.model = model
        self.workload = workload
        self.instances: list[SimInstance] = []
        self._speed = SplitMix64(derive_seed(model.seed, TAG_INSTANCE_SPEED))
        self._noise_root = derive_seed(model.seed, TAG_INSTANCE_NOISE)

    def deploy_instances(self, count: int) -> list[int]:
        if isinstance(count, bool) or not isinstance(count, int) or count < 1:
            raise ValueError(f"instance count must be >= 1, got {count!r}")
        ids = []
        for _ in range(count):
            iid = len(self.instances)
            self._speed.position = 2 * iid
            speed = math.exp(self.model.sigma_instance * self._speed.normal())
            self.instances.append(SimInstance(iid, speed, noise=SplitMix64(derive_seed(self._noise_root, iid))))
            ids.append(iid)
        return ids

    def invoke(self, instance_id: int, version: int) -> int:
        """Run one execution and return its duration in nanoseconds (always > 0)."""
        if not 0 <= instance_id < len(self.instances):
            raise KeyError(f"unknown instance {instance_id}")
        if version not in (1, 2):
            raise ValueError(f"version must be 1 or 2, got {version!r}")
        inst = self.instances[instance_id]
        m = self.model
        noise = math.exp(m.sigma_invocation * inst.noise.normal())
        ms = self.workload.base_ms(version) * inst.speed_factor * inst.drift_state * noise
        if inst.invocation_count == 0:
            ms += m.cold_start_ms
        inst.drift_state *= math.exp(m.drift_step_sigma * inst.noise.normal())
        inst.invocation_count += 1
        return max(1, round(ms * NS_PER_MS))


def create_platform(model: PlatformModel | None = None, workload: WorkloadModel | None = None) -> Platform:
    return Platform(model or PlatformModel(), workload or WorkloadModel())
