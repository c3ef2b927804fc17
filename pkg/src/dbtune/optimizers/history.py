"""Tuning history, the reward rule and the sequential run loop."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ..environment import EvaluationOutcome
from ..params import ParameterSpace

log = logging.getLogger(__name__)


class TuningError(RuntimeError):
    pass


def reward(throughput: float, default_throughput: float) -> float:
    """Relative improvement over the default configuration's throughput."""
    if not default_throughput > 0:
        raise ValueError("default throughput must be positive")
    return (throughput - default_throughput) / default_throughput


@dataclass
class Step:
    config: np.ndarray
    outcome: EvaluationOutcome
    reward: float


@dataclass
class TuningHistory:
    space: ParameterSpace
    default_outcome: EvaluationOutcome
    steps: list = field(default_factory=list)
    best_throughput: float = 0.0
    best_config: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.default_outcome.valid or not self.default_outcome.throughput > 0:
            raise TuningError("default configuration is invalid in this environment; "
                              "nothing to measure improvements against")

    @property
    def default_throughput(self) -> float:
        return self.default_outcome.throughput

    def __len__(self) -> int:
        return len(self.steps)

    def add(self, config: np.ndarray, outcome: EvaluationOutcome) -> Step:
        step = Step(np.asarray(config, dtype=float), outcome,
                    reward(outcome.throughput, self.default_throughput))
        self.steps.append(step)
        if outcome.valid and outcome.throughput > self.best_throughput:
            self.best_throughput = outcome.throughput
            self.best_config = step.config.copy()
        return step

    def trace(self) -> np.ndarray:
        """Best throughput so far after each step."""
        tp = np.array([s.outcome.throughput if s.outcome.valid else 0.0 for s in self.steps])
        return np.maximum.accumulate(tp) if len(tp) else tp

    def xy(self) -> tuple[np.ndarray, np.ndarray]:
        X = np.array([s.config for s in self.steps]).reshape(len(self.steps), len(self.space))
        y = np.array([s.outcome.throughput for s in self.steps])
        return X, y


class Optimizer:
    """Suggest/observe interface shared by the three methods."""

    name = "base"

    def suggest(self, history: TuningHistory) -> np.ndarray:
        raise NotImplementedError

    def observe(self, history: TuningHistory, step: Step) -> None:
        pass

    def state_dict(self) -> dict:
        return {}

    def load_state_dict(self, state: dict) -> None:
        pass


def step_record(index: int, method: str, space: ParameterSpace, step: Step, best: float,
                wall_ms: float) -> dict:
    return {"step": index, "method": method, "config": space.to_dict(step.config),
            "valid": bool(step.outcome.valid), "throughput": float(step.outcome.throughput),
            "reward": float(step.reward), "best_so_far": float(best), "wall_ms": float(wall_ms),
            "metrics": [float(m) for m in step.outcome.metrics]}


def run_tuning(optimizer: Optimizer, env, space: ParameterSpace, steps: int,
               log_path: Optional[Path] = None, checkpoint_path: Optional[Path] = None,
               checkpoint_every: int = 10, resume: bool = False,
               on_step: Optional[Callable[[int, Step], None]] = None,
               log_meta: Optional[dict] = None) -> TuningHistory:
    """Run ``steps`` suggest/evaluate/observe rounds after one default measurement.

    ``env`` evaluates name->value mappings over its own (full) space; ``space``
    is the tuned space, whose untuned parameters the environment keeps at
    their defaults.  With ``resume`` and an existing checkpoint the run
    continues from the checkpointed step.  The log starts with a ``_meta``
    line (``log_meta`` plus the default measurement) followed by one record
    per step.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    start_at = 0
    history = None
    if resume and checkpoint_path is not None and Path(checkpoint_path).exists():
        history, start_at = _restore(optimizer, env, space, Path(checkpoint_path))
        if log_path is not None:
            _truncate_log(Path(log_path), start_at)
    if history is None:
        default = env.evaluate(space.to_dict(space.default_config()))
        history = TuningHistory(space, default)
        if log_path is not None:
            meta = dict(log_meta or {}, method=optimizer.name, steps=steps,
                        default=default.to_json())
            Path(log_path).write_text(json.dumps({"_meta": meta}) + "\n")
    fh = open(log_path, "a") if log_path is not None else None
    try:
        for i in range(start_at, steps):
            t0 = time.perf_counter()
            x = space.snap(optimizer.suggest(history))
            outcome = env.evaluate(space.to_dict(x))
            step = history.add(x, outcome)
            optimizer.observe(history, step)
            wall_ms = (time.perf_counter() - t0) * 1000.0
            if fh is not None:
                fh.write(json.dumps(step_record(i, optimizer.name, space, step, history.best_throughput,
                                                wall_ms)) + "\n")
                fh.flush()
            if on_step is not None:
                on_step(i, step)
            if checkpoint_path is not None and ((i + 1) % checkpoint_every == 0 or i + 1 == steps):
                _save_checkpoint(optimizer, env, history, Path(checkpoint_path))
    finally:
        if fh is not None:
            fh.close()
    return history


def _save_checkpoint(optimizer: Optimizer, env, history: TuningHistory, path: Path) -> None:
    doc = {
        "steps_done": len(history),
        "method": optimizer.name,
        "default_outcome": history.default_outcome.to_json(),
        "steps": [{"config": s.config.tolist(), "outcome": s.outcome.to_json()} for s in history.steps],
        "optimizer": optimizer.state_dict(),
        "environment": env.get_state(),
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)


def _restore(optimizer: Optimizer, env, space: ParameterSpace, path: Path):
    doc = json.loads(path.read_text())
    if doc.get("method") != optimizer.name:
        raise TuningError(f"checkpoint is for method {doc.get('method')!r}, not {optimizer.name!r}")
    history = TuningHistory(space, EvaluationOutcome.from_json(doc["default_outcome"]))
    for s in doc["steps"]:
        history.add(np.asarray(s["config"]), EvaluationOutcome.from_json(s["outcome"]))
    optimizer.load_state_dict(doc["optimizer"])
    env.set_state(doc["environment"])
    log.info("resumed %s from step %d", optimizer.name, len(history))
    return history, len(history)


def _truncate_log(path: Path, n: int) -> None:
    if not path.exists():
        return
    header, records = [], []
    for ln in path.read_text().splitlines():
        if not ln.strip():
            continue
        (header if ln.startswith('{"_meta"') else records).append(ln)
    path.write_text("".join(ln + "\n" for ln in header + records[:n]))
