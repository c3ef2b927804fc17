"""Bayesian optimization: GP surrogate + expected improvement over a candidate pool."""

from __future__ import annotations

import logging

import numpy as np

from ..params import ParameterSpace
from ..sampling import symmetric_lhs
from .gp import GpError, GpModel, expected_improvement, fit_hyperparameters, gp_fit, gp_predict
from .history import Optimizer, TuningHistory
from .random_search import random_search_suggest

log = logging.getLogger(__name__)


class BayesianOptimizer(Optimizer):
    """GP-EI optimizer working in the symmetric unit cube of the tunable parameters.

    Invalid evaluations enter the surrogate with throughput 0.
    """

    name = "bo"

    def __init__(self, space: ParameterSpace, seed: int = 0, n_init: int = 10, n_candidates: int = 1000,
                 n_local: int = 10, jitter: float = 0.05, noise: float = 1e-2, refit_every: int = 10):
        self.space = space
        self.seed = seed
        self.n_init = n_init
        self.n_candidates = n_candidates
        self.n_local = n_local
        self.jitter = jitter
        self.noise = noise
        self.refit_every = refit_every
        self.rng = np.random.default_rng(seed)
        self.idx = space.tunable_indices
        init_seed = int(np.random.SeedSequence(seed).generate_state(1)[0])
        self.initial = symmetric_lhs(space, n_init, init_seed).configs
        self.hyper = None          # (lengthscale, signal)
        self.hyper_at = -1

    def _unit(self, configs: np.ndarray) -> np.ndarray:
        return self.space.to_unit(configs)[..., self.idx]

    def _native(self, u: np.ndarray) -> np.ndarray:
        full = np.full(len(self.space), 0.5)
        full[self.idx] = u
        return self.space.from_unit(full)

    def fit(self, history: TuningHistory) -> GpModel:
        X, y = history.xy()
        U = self._unit(X)
        m = len(y)
        if self.hyper is None or m - self.hyper_at >= self.refit_every:
            model = fit_hyperparameters(U, y, noise=self.noise)
            self.hyper = (float(model.lengthscale[0]), float(model.signal))
            self.hyper_at = m
            return model
        return gp_fit(U, y, self.hyper[0], self.hyper[1], self.noise)

    def suggest(self, history: TuningHistory) -> np.ndarray:
        n = len(history)
        if n < self.n_init:
            return self.initial[n].copy()
        try:
            model = self.fit(history)
        except GpError as exc:
            log.warning("GP fit failed (%s); falling back to a random suggestion", exc)
            return random_search_suggest(self.space, self.rng)
        cand_seed = int(self.rng.integers(2 ** 63))
        pool = self._unit(symmetric_lhs(self.space, self.n_candidates, cand_seed).configs)
        X, y = history.xy()
        top = np.argsort(-y, kind="stable")[: self.n_local]
        local = self._unit(X[top]) + self.rng.normal(0.0, self.jitter, size=(len(top), len(self.idx)))
        pool = np.vstack([pool, np.clip(local, 0.0, 1.0)])
        mean, var = gp_predict(model, pool)
        ei = expected_improvement(mean, var, float(np.max(y)))
        pick = int(np.argmax(ei)) if np.max(ei) > 0 else int(np.argmax(mean))
        return self._native(pool[pick])

    def state_dict(self) -> dict:
        return {"rng": self.rng.bit_generator.state, "hyper": self.hyper, "hyper_at": self.hyper_at}

    def load_state_dict(self, state: dict) -> None:
        self.rng.bit_generator.state = state["rng"]
        self.hyper = tuple(state["hyper"]) if state["hyper"] is not None else None
        self.hyper_at = state["hyper_at"]


def bo_suggest(history: TuningHistory, space: ParameterSpace, rng_seed: int = 0) -> np.ndarray:
    """One-shot suggestion from a fresh optimizer (replays nothing; for scripting and tests)."""
    return BayesianOptimizer(space, seed=rng_seed).suggest(history)
