from __future__ import annotations

import numpy as np

from ..params import ParameterSpace
from .history import Optimizer, TuningHistory


def random_search_suggest(space: ParameterSpace, rng: np.random.Generator) -> np.ndarray:
    """Draw one configuration: per tunable parameter pick the lower or upper half
    with equal probability, then a uniform value inside it.

    A parameter whose default sits on a bound only has one half to draw from.
    """
    idx = space.tunable_indices
    d, lo, hi = space.defaults[idx], space.lower[idx], space.upper[idx]
    upper = rng.random(len(idx)) < 0.5
    upper = np.where(d <= lo, True, np.where(d >= hi, False, upper))
    u = rng.random(len(idx))
    values = np.where(upper, d + u * (hi - d), lo + u * (d - lo))
    x = space.default_config()
    x[idx] = values
    return space.snap(x)


class RandomSearch(Optimizer):
    name = "random"

    def __init__(self, space: ParameterSpace, seed: int = 0):
        self.space = space
        self.rng = np.random.default_rng(seed)

    def suggest(self, history: TuningHistory) -> np.ndarray:
        return random_search_suggest(self.space, self.rng)

    def state_dict(self) -> dict:
        return {"rng": self.rng.bit_generator.state}

    def load_state_dict(self, state: dict) -> None:
        self.rng.bit_generator.state = state["rng"]
