"""Monte-Carlo Pi estimation, the example target for local-process runs.

Run as ``python -m rmitbench.workload --values N`` to get a process whose
CPU time grows linearly with N.
"""

from __future__ import annotations

import argparse
from typing import Iterable

import numpy as np

from .rng import GAMMA, MASK64, TAG_PI, derive_seed, stream_values

_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_SCALE = 2.0**-53


def estimate_pi_from_points(points: Iterable[tuple[float, float]]) -> float:
    inside = total = 0
    for x, y in points:
        total += 1
        if x * x + y * y <= 1.0:
            inside += 1
    if total == 0:
        raise ValueError("need at least one point")
    return 4.0 * inside / total


def run_pi_estimator(values: int, seed: int = 0, backend: str = "python") -> float:
    """Estimate Pi from ``values`` points in the unit square.

    Point n uses outputs 2n and 2n+1 of the Pi stream of ``seed``. Both
    backends draw the same points; "python" is the deliberately CPU-bound
    one used as a benchmark target.
    """
    if isinstance(values, bool) or not isinstance(values, int) or values < 1:
        raise ValueError(f"values must be >= 1, got {values!r}")
    state = derive_seed(seed, TAG_PI)
    if backend == "numpy":
        inside = _count_inside_numpy(state, values)
    elif backend == "python":
        inside = _count_inside_python(state, values)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return 4.0 * inside / values


def _count_inside_python(state: int, values: int) -> int:
    inside = 0
    mask = MASK64
    for _ in range(values):
        state = (state + GAMMA) & mask
        z = state
        z = ((z ^ (z >> 30)) * _M1) & mask
        z = ((z ^ (z >> 27)) * _M2) & mask
        x = ((z ^ (z >> 31)) >> 11) * _SCALE
        state = (state + GAMMA) & mask
        z = state
        z = ((z ^ (z >> 30)) * _M1) & mask
        z = ((z ^ (z >> 27)) * _M2) & mask
        y = ((z ^ (z >> 31)) >> 11) * _SCALE
        if x * x + y * y <= 1.0:
            inside += 1
    return inside


def _count_inside_numpy(state: int, values: int, chunk: int = 1 << 20) -> int:
    inside = 0
    for start in range(0, values, chunk):
        n = min(chunk, values - start)
        raw = stream_values(state, np.arange(2 * start, 2 * (start + n), dtype=np.uint64))
        u = (raw >> np.uint64(11)).astype(np.float64) * _SCALE
        x, y = u[0::2], u[1::2]
        inside += int(np.count_nonzero(x * x + y * y <= 1.0))
    return inside


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Monte-Carlo Pi estimation workload")
    parser.add_argument("--values", type=int, default=5_000_000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--backend", choices=("python", "numpy"), default="python")
    args = parser.parse_args(argv)
    print(run_pi_estimator(args.values, args.seed, args.backend))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
