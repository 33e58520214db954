"""Seeded uniform random search over hyperparameter spaces.

A space maps names to either a list of choices or a ``Range(low, high,
step)``; ranges are sampled uniformly over their grid points.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Range:
    low: float
    high: float
    step: float

    def grid(self):
        if self.step <= 0 or self.high < self.low:
            raise ValueError(f"bad range {self}")
        n = int(np.floor((self.high - self.low) / self.step + 1e-9)) + 1
        values = self.low + self.step * np.arange(n)
        if all(float(v).is_integer() for v in (self.low, self.step)):
            return [int(v) for v in values]
        return [round(float(v), 10) for v in values]


def check_space(space):
    if not space:
        raise ValueError("search space is empty")
    out = {}
    for name, spec in space.items():
        choices = spec.grid() if isinstance(spec, Range) else list(spec)
        if not choices:
            raise ValueError(f"no choices for {name!r}")
        out[name] = choices
    return out


def sample(space, rng):
    grids = check_space(space)
    return {name: choices[int(rng.integers(len(choices)))] for name, choices in grids.items()}


def random_search(space, objective, trials, seed=0):
    """Evaluate ``trials`` uniform draws; the best (earliest on ties) wins.

    Returns ``(best_params, best_value, log)`` where ``log`` lists every
    trial's parameters and objective value.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    check_space(space)
    rng = np.random.default_rng(seed)
    log, best, best_value = [], None, -np.inf
    for t in range(trials):
        params = sample(space, rng)
        value = float(objective(params))
        log.append({"trial": t, "params": params, "objective": value})
        if best is None or value > best_value:
            best, best_value = params, value
    return best, best_value, log


# the hyperparameter ranges explored when building the detectors
STAGE1_SPACE = {
    "n_layers": [2, 3],
    "hidden": [32, 64, 128, 256],
    "activation": ["relu", "leaky_relu"],
    "dropout": Range(0.0, 0.75, 0.05),
}

STAGE2_SPACE = {
    "replay_steps": Range(2, 20, 1),
    "max_features": Range(25, 200, 50),
    "strategy": ["topk", "random"],
}
