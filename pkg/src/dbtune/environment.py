"""Evaluation targets: a synthetic database simulator and a subprocess adapter.

Both expose ``evaluate(config) -> EvaluationOutcome`` where ``config`` is a
mapping from parameter name to value (missing names take their default) or a
full vector ordered like the environment's :class:`ParameterSpace`.

The simulator's hidden structure is expressed relative to each parameter's
default (operable ranges in log10 of value/default, response peaks in a fixed
reference coordinate) so it does not depend on the range factor used to build
a space: the same simulator can be probed with PRF=2, 10 or 100 ranges.
"""

from __future__ import annotations

import json
import logging
import math
import os
import shlex
import shutil
import subprocess
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .params import CONTINUOUS, ParameterSpace
from .sampling import make_design

log = logging.getLogger(__name__)

ConfigLike = Union[Mapping[str, float], Sequence[float], np.ndarray]


class ConfigurationError(RuntimeError):
    """The environment cannot be used at all (e.g. missing adapter binary)."""


@dataclass
class EvaluationOutcome:
    valid: bool
    throughput: float            # KTPS
    metrics: np.ndarray
    duration: float = 0.0        # seconds

    def __post_init__(self):
        self.metrics = np.asarray(self.metrics, dtype=float)
        if not self.valid:
            self.throughput = 0.0
            self.metrics = np.zeros_like(self.metrics)

    @classmethod
    def invalid(cls, metrics_dim: int = 0, duration: float = 0.0) -> "EvaluationOutcome":
        return cls(False, 0.0, np.zeros(metrics_dim), duration)

    def to_json(self) -> dict:
        return {"valid": bool(self.valid), "throughput": float(self.throughput),
                "metrics": [float(m) for m in self.metrics], "duration": float(self.duration)}

    @classmethod
    def from_json(cls, obj: Mapping) -> "EvaluationOutcome":
        return cls(bool(obj["valid"]), float(obj["throughput"]), np.asarray(obj.get("metrics", []), dtype=float),
                   float(obj.get("duration", 0.0)))


# --- simulator ------------------------------------------------------------------

# Operable half-width (log10 of value/default) of parameters without a planted
# range.  Wider than the PRF-10 range so that outward-rounded integer bounds
# stay operable, narrow enough that PRF 100 breaks almost every configuration.
UNIMPORTANT_SAFE_LOG10 = 1.5

# Planted parameters: (optimum in the reference coordinate, share of the total
# log gain, lowest and highest operable log10 of value/default).
#
# Six "cliff" parameters carry little gain but break the target over a good
# part of their PRF-10 range, on the side opposite their optimum, while
# staying operable within a factor of 2 of the default; four
# smooth parameters carry most of the gain with broad optima away from the
# default.  Cliffs make the forest ranking sharp; broad optima keep plain
# random search competitive.
_CLIFF_HIGH = (-1.5, 0.6728)
_CLIFF_LOW = (-0.31, 1.5)
_OPEN = (-1.5, 1.5)
PLANTED = (
    (-0.5, 0.018, *_CLIFF_HIGH),
    (0.5, 0.018, *_CLIFF_LOW),
    (-0.5, 0.018, *_CLIFF_HIGH),
    (0.5, 0.018, *_CLIFF_LOW),
    (-0.5, 0.018, *_CLIFF_HIGH),
    (0.5, 0.018, *_CLIFF_LOW),
    (0.564, 0.3364, *_OPEN),
    (-0.564, 0.2455, *_OPEN),
    (0.564, 0.1792, *_OPEN),
    (-0.564, 0.1308, *_OPEN),
)


@dataclass
class SimulatorSpec:
    """Hidden structure of a simulated database.

    Parameter ``i`` is operable while ``safe_lo[i] <= log10(value/default) <=
    safe_hi[i]``; the joint constraints additionally forbid two parameters
    from both exceeding a threshold.
    """

    dims: int
    important_idx: list
    base_throughput: float = 66.0 / 1.38
    optimum_gain: float = 1.45
    safe_lo: list = field(default_factory=list)             # per parameter, log10 of value/default
    safe_hi: list = field(default_factory=list)
    joint_constraints: list = field(default_factory=list)   # [i, j, log10-ratio threshold]
    noise_cv: float = 0.03
    metrics_dim: int = 16
    reference_prf: float = 10.0
    optimum_position: list = field(default_factory=list)    # per important parameter, reference coordinate
    peak_log_gain: list = field(default_factory=list)       # per important parameter
    interactions: list = field(default_factory=list)        # [k, l, weight], k/l index important_idx
    minor_penalty: list = field(default_factory=list)       # per parameter, in [0, 0.001]
    metric_weights: list = field(default_factory=list)      # (metrics_dim - 3) x n_important
    metric_bias: list = field(default_factory=list)

    def __post_init__(self):
        n_imp = len(self.important_idx)
        if not n_imp:
            raise ValueError("important_idx must be non-empty")
        if any(not 0 <= i < self.dims for i in self.important_idx):
            raise ValueError("important_idx out of range")
        if self.noise_cv < 0:
            raise ValueError("noise_cv must be >= 0")
        if self.metrics_dim < 3:
            raise ValueError("metrics_dim must be >= 3")
        span = UNIMPORTANT_SAFE_LOG10
        self.safe_lo = [float(v) for v in self.safe_lo] or [-span] * self.dims
        self.safe_hi = [float(v) for v in self.safe_hi] or [span] * self.dims
        if len(self.safe_lo) != self.dims or len(self.safe_hi) != self.dims:
            raise ValueError("safe_lo and safe_hi need one entry per parameter")
        if any(not lo < 0 < hi for lo, hi in zip(self.safe_lo, self.safe_hi)):
            raise ValueError("every operable interval must contain the default strictly inside")
        self.minor_penalty = list(self.minor_penalty) or [0.0] * self.dims
        if any(not 0 <= c <= 0.001 for c in self.minor_penalty):
            raise ValueError("minor_penalty entries must lie in [0, 0.001]")
        self.optimum_position = list(self.optimum_position) or [0.5] * n_imp
        self.peak_log_gain = list(self.peak_log_gain) or [math.log(self.optimum_gain) / n_imp] * n_imp
        if any(o == 0 for o in self.optimum_position):
            raise ValueError("optimum_position entries must be non-zero")
        n_mix = self.metrics_dim - 3
        if not self.metric_weights:
            self.metric_weights = np.zeros((n_mix, n_imp)).tolist()
            self.metric_bias = [0.0] * n_mix

    def safe_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Operable interval per parameter, in log10 of value/default."""
        return np.asarray(self.safe_lo), np.asarray(self.safe_hi)

    @classmethod
    def calibrated(cls, space: ParameterSpace, seed: int = 0, planted=PLANTED, optimum_gain: float = 1.45,
                   base_throughput: float = 66.0 / 1.38, noise_cv: float = 0.03,
                   metrics_dim: int = 16) -> "SimulatorSpec":
        """Simulator with ``planted`` influential parameters placed at random indices.

        Planted parameters are drawn among tunable continuous parameters with
        positive defaults.  Their rows in ``planted`` fix the response peak,
        its share of ``optimum_gain`` and the operable range.  All other
        parameters are operable within a factor of ``10**UNIMPORTANT_SAFE_LOG10``
        of their default and move throughput by at most 0.1 %.
        """
        rng = np.random.default_rng(seed)
        dims = len(space)
        n_imp = len(planted)
        eligible = [i for i, p in enumerate(space.params)
                    if p.tunable and p.kind == CONTINUOUS and p.default > 0]
        if len(eligible) < n_imp:
            raise ValueError("not enough eligible parameters to plant")
        important = [int(i) for i in rng.choice(eligible, size=n_imp, replace=False)]
        shares = np.array([row[1] for row in planted], dtype=float)
        shares /= shares.sum()
        opt = [float(row[0]) for row in planted]
        gain = (shares * math.log(optimum_gain)).tolist()

        opt_log10 = np.log10(from_reference_coordinate(np.asarray(opt), np.ones(n_imp), 10.0))
        safe_lo = np.full(dims, -UNIMPORTANT_SAFE_LOG10)
        safe_hi = np.full(dims, UNIMPORTANT_SAFE_LOG10)
        for k, o, (_, _, lo, hi) in zip(important, opt_log10, planted):
            if not lo < o < hi:
                raise ValueError("planted optimum outside its operable range")
            safe_lo[k], safe_hi[k] = lo, hi

        pairs = [(a, b) for a in range(n_imp) for b in range(a + 1, n_imp)]
        joint = []
        for pi in rng.choice(len(pairs), size=2, replace=False):
            a, b = pairs[int(pi)]
            thr = max(0.75, max(opt_log10[a], opt_log10[b]) + 0.1)
            joint.append([important[a], important[b], float(thr)])
        interactions = []
        for pi in rng.choice(len(pairs), size=3, replace=False):
            a, b = pairs[int(pi)]
            interactions.append([a, b, float(rng.uniform(0.002, 0.006))])

        minor = rng.uniform(0.0, 0.001, size=dims)
        minor[important] = 0.0
        n_mix = metrics_dim - 3
        weights = rng.normal(0.0, 1.0, size=(n_mix, n_imp)) / math.sqrt(n_imp)
        bias = rng.normal(0.0, 0.3, size=n_mix)
        return cls(dims=dims, important_idx=important, base_throughput=base_throughput,
                   optimum_gain=optimum_gain, safe_lo=safe_lo.tolist(), safe_hi=safe_hi.tolist(),
                   joint_constraints=joint, noise_cv=noise_cv, metrics_dim=metrics_dim, reference_prf=10.0,
                   optimum_position=opt, peak_log_gain=gain, interactions=interactions,
                   minor_penalty=minor.tolist(), metric_weights=weights.tolist(), metric_bias=bias.tolist())

    def optimum_config(self, defaults: np.ndarray) -> np.ndarray:
        """Configuration at the noiseless global maximum."""
        x = np.array(defaults, dtype=float)
        imp = np.asarray(self.important_idx)
        x[imp] = from_reference_coordinate(np.asarray(self.optimum_position), x[imp], self.reference_prf)
        return x

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: Mapping) -> "SimulatorSpec":
        return cls(**obj)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SimulatorSpec":
        return cls.from_json(json.loads(Path(path).read_text()))


def _log_ratios(x: np.ndarray, defaults: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Natural log of value/default, and a mask of sign-consistent entries."""
    nz = defaults != 0
    ratio = np.ones_like(x)
    ratio[..., nz] = x[..., nz] / defaults[nz]
    ok = ratio > 0
    z = np.log(np.where(ok, ratio, 1.0))
    return z, ok


def reference_coordinate(x: np.ndarray, defaults: np.ndarray, prf: float) -> np.ndarray:
    """Position relative to the default on the reference range: -1 at default/prf,
    0 at the default, +1 at default*prf, linear in between on each side."""
    r = np.exp(_log_ratios(np.asarray(x, dtype=float), defaults)[0]) - 1.0
    return np.where(r >= 0, r / (prf - 1.0), r / (1.0 - 1.0 / prf))


def from_reference_coordinate(s: np.ndarray, defaults: np.ndarray, prf: float) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    return defaults * (1.0 + np.where(s >= 0, s * (prf - 1.0), s * (1.0 - 1.0 / prf)))


def simulate_throughput(spec: SimulatorSpec, config: np.ndarray, defaults: np.ndarray) -> np.ndarray:
    """Noiseless throughput (KTPS) for one configuration or a stack of them."""
    s = reference_coordinate(config, defaults, spec.reference_prf)
    imp = np.asarray(spec.important_idx)
    opt = np.asarray(spec.optimum_position)
    gain = np.asarray(spec.peak_log_gain)
    si = s[..., imp]
    log_tp = np.sum(gain * (1.0 - (si / opt - 1.0) ** 2), axis=-1)

    phi = np.clip(si / opt, -2.0, 2.0)
    inter = np.zeros(log_tp.shape)
    for k, l, w in spec.interactions:
        inter = inter + w * (phi[..., int(k)] - phi[..., int(l)]) ** 2
    inter_factor = np.maximum(0.5, 1.0 - inter)

    t = np.minimum(1.0, np.abs(s))
    minor = np.prod(1.0 - np.asarray(spec.minor_penalty) * t, axis=-1)
    return spec.base_throughput * np.exp(log_tp) * inter_factor * minor


def simulate_validity(spec: SimulatorSpec, config: np.ndarray, defaults: np.ndarray) -> np.ndarray:
    x = np.asarray(config, dtype=float)
    z, ok = _log_ratios(x, defaults)
    z10 = z / math.log(10.0)
    lo, hi = spec.safe_bounds()
    valid = np.all(ok & (z10 >= lo - 1e-12) & (z10 <= hi + 1e-12), axis=-1)
    for i, j, thr in spec.joint_constraints:
        valid = valid & ~((z10[..., int(i)] > thr) & (z10[..., int(j)] > thr))
    return valid


def simulate_metrics(spec: SimulatorSpec, config: np.ndarray, defaults: np.ndarray,
                     throughput: np.ndarray) -> np.ndarray:
    x = np.asarray(config, dtype=float)
    s = reference_coordinate(x, defaults, spec.reference_prf)
    rel = np.asarray(throughput, dtype=float)[..., None] / spec.base_throughput
    si = np.clip(s[..., np.asarray(spec.important_idx)], -2.0, 2.0)
    mix = np.tanh(si @ np.asarray(spec.metric_weights).T + np.asarray(spec.metric_bias))
    return np.concatenate([rel, np.sqrt(rel), 1.0 - np.exp(-rel), mix], axis=-1)


class Simulator:
    """Environment handle around a :class:`SimulatorSpec`.

    Holds its own noise generator, so independent tuning runs should use
    independent instances.
    """

    def __init__(self, space: ParameterSpace, spec: SimulatorSpec, seed: int = 0):
        if spec.dims != len(space):
            raise ValueError(f"simulator has {spec.dims} dims but space has {len(space)} parameters")
        self.space = space
        self.spec = spec
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self._defaults = space.defaults
        cv = spec.noise_cv
        self._sigma = math.sqrt(math.log1p(cv * cv)) if cv > 0 else 0.0

    @property
    def metrics_dim(self) -> int:
        return self.spec.metrics_dim

    def check(self) -> None:
        """Nothing to probe for the simulator."""

    def _vector(self, config: ConfigLike) -> np.ndarray:
        if isinstance(config, Mapping):
            return self.space.from_dict(config)
        x = np.asarray(config, dtype=float)
        if x.shape != (len(self.space),):
            raise ValueError(f"configuration has shape {x.shape}, expected ({len(self.space)},)")
        return x

    def noiseless(self, config: ConfigLike) -> float:
        x = self._vector(config)
        if not simulate_validity(self.spec, x, self._defaults):
            return 0.0
        return float(simulate_throughput(self.spec, x, self._defaults))

    def evaluate(self, config: ConfigLike) -> EvaluationOutcome:
        start = time.perf_counter()
        x = self._vector(config)
        if not simulate_validity(self.spec, x, self._defaults):
            return EvaluationOutcome.invalid(self.metrics_dim, time.perf_counter() - start)
        tp = float(simulate_throughput(self.spec, x, self._defaults))
        factor = 1.0
        if self._sigma > 0:
            factor = float(np.exp(self.rng.normal(-0.5 * self._sigma ** 2, self._sigma)))
        metrics = simulate_metrics(self.spec, x, self._defaults, np.array(tp)) * factor
        return EvaluationOutcome(True, tp * factor, metrics, time.perf_counter() - start)

    def get_state(self) -> dict:
        return {"rng": self.rng.bit_generator.state}

    def set_state(self, state: Mapping) -> None:
        self.rng.bit_generator.state = state["rng"]


# --- external adapter --------------------------------------------------------------

class ExternalAdapter:
    """Runs a user command per evaluation using a file-based JSON protocol.

    The configuration is written to ``<workdir>/config.json`` and the command
    is invoked with that path as its last argument.  The command must write
    ``{"valid": bool, "throughput": number, "metrics": [numbers]}`` to
    ``<workdir>/result.json``.  Nonzero exit, timeout or a malformed result
    count as an invalid configuration.
    """

    def __init__(self, space: ParameterSpace, command: Union[str, Sequence[str]], timeout: float = 600.0,
                 workdir: str | Path = ".", metrics_dim: Optional[int] = None):
        self.space = space
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.command:
            raise ConfigurationError("empty adapter command")
        self.timeout = float(timeout)
        self.workdir = Path(workdir)
        self._metrics_dim = metrics_dim

    @property
    def metrics_dim(self) -> int:
        return self._metrics_dim or 0

    def check(self) -> None:
        exe = self.command[0]
        if shutil.which(exe) is None and not (os.path.isfile(exe) and os.access(exe, os.X_OK)):
            raise ConfigurationError(f"adapter command not found: {exe}")
        self.workdir.mkdir(parents=True, exist_ok=True)

    def _vector_dict(self, config: ConfigLike) -> dict:
        if isinstance(config, Mapping):
            return self.space.to_dict(self.space.from_dict(config))
        return self.space.to_dict(config)

    def evaluate(self, config: ConfigLike) -> EvaluationOutcome:
        self.workdir.mkdir(parents=True, exist_ok=True)
        cfg_path = self.workdir / "config.json"
        res_path = self.workdir / "result.json"
        cfg_path.write_text(json.dumps(self._vector_dict(config)) + "\n")
        if res_path.exists():
            res_path.unlink()
        start = time.perf_counter()
        try:
            proc = subprocess.run(self.command + [str(cfg_path)], cwd=self.workdir, timeout=self.timeout,
                                  stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
        except subprocess.TimeoutExpired:
            log.warning("adapter timed out after %.1fs", self.timeout)
            return EvaluationOutcome.invalid(self.metrics_dim, time.perf_counter() - start)
        except OSError as exc:
            log.warning("adapter failed to start: %s", exc)
            return EvaluationOutcome.invalid(self.metrics_dim, time.perf_counter() - start)
        elapsed = time.perf_counter() - start
        if proc.returncode != 0:
            log.warning("adapter exited with status %d: %s", proc.returncode, proc.stderr.strip()[-500:])
            return EvaluationOutcome.invalid(self.metrics_dim, elapsed)
        try:
            outcome = self._parse(json.loads(res_path.read_text()), elapsed)
        except (OSError, ValueError, TypeError, KeyError) as exc:
            log.warning("malformed adapter result: %s", exc)
            return EvaluationOutcome.invalid(self.metrics_dim, elapsed)
        return outcome

    def _parse(self, obj, elapsed: float) -> EvaluationOutcome:
        if not isinstance(obj, Mapping):
            raise ValueError("result is not a JSON object")
        for key in ("valid", "throughput", "metrics"):
            if key not in obj:
                raise KeyError(f"result missing {key!r}")
        if not isinstance(obj["valid"], bool):
            raise ValueError("'valid' must be a boolean")
        if not obj["valid"]:
            return EvaluationOutcome.invalid(self.metrics_dim, elapsed)
        tp = float(obj["throughput"])
        metrics = np.asarray(obj["metrics"], dtype=float).ravel()
        if not (math.isfinite(tp) and tp > 0) or not np.all(np.isfinite(metrics)):
            raise ValueError("throughput must be finite and positive, metrics finite")
        if self._metrics_dim is None:
            self._metrics_dim = len(metrics)
        elif len(metrics) != self._metrics_dim:
            raise ValueError(f"expected {self._metrics_dim} metrics, got {len(metrics)}")
        return EvaluationOutcome(True, tp, metrics, elapsed)

    def get_state(self) -> dict:
        return {}

    def set_state(self, state: Mapping) -> None:
        pass


# --- validity studies --------------------------------------------------------------

def validity_rate(space: ParameterSpace, env, n: int, seed: int = 0, strategy: str = "lhs",
                  rss: Optional[int] = None) -> float:
    """Fraction of a freshly sampled design that the environment accepts."""
    if n < 1:
        raise ValueError("n must be >= 1")
    design = make_design(space, n, seed, strategy=strategy, rss=rss)
    valid = 0
    for row in design.configs:
        valid += env.evaluate(space.to_dict(row)).valid
    return valid / n
