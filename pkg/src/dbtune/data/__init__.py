"""Bundled sample manifest: 350 synthetic knobs in the style of a distributed KV store."""

from __future__ import annotations

import math
from importlib import resources
from pathlib import Path

import numpy as np

MANIFEST_NAME = "sample_manifest_350.json"

_GROUPS = ["network", "storage", "txn", "log", "proxy", "resolver", "disk", "shard",
           "recovery", "cache", "ratekeeper", "backup"]
_NOUNS = ["timeout", "delay", "interval", "bytes", "limit", "batch", "window", "ratio",
          "threshold", "budget", "jitter", "rate", "count", "queue", "backoff"]
_INTEGER_NOUNS = {"bytes", "limit", "batch", "count", "queue"}


def manifest_path() -> Path:
    return Path(str(resources.files(__name__).joinpath(MANIFEST_NAME)))


def generate_manifest(n: int = 350, seed: int = 2020, prf: float = 10.0) -> dict:
    """Deterministically generate a manifest document with ``n`` knobs.

    Defaults are log-uniform over several orders of magnitude; a handful have a
    zero default (non-tunable) and two are negative offsets.
    """
    rng = np.random.default_rng(seed)
    params, names = [], set()
    for i in range(n):
        group = _GROUPS[rng.integers(len(_GROUPS))]
        noun = _NOUNS[rng.integers(len(_NOUNS))]
        name = f"{group}_{noun}_{i:03d}"
        names.add(name)
        if noun in _INTEGER_NOUNS:
            default = int(round(10 ** rng.uniform(0.5, 6)))
            entry = {"name": name, "default": default, "kind": "integer"}
        else:
            default = float(f"{10 ** rng.uniform(-3, 4):.4g}")
            entry = {"name": name, "default": default, "kind": "continuous"}
        params.append(entry)
    for i in rng.choice(n, size=8, replace=False):
        params[int(i)]["default"] = 0 if params[int(i)]["kind"] == "integer" else 0.0
    for i in rng.choice([k for k, p in enumerate(params) if p["default"] != 0], size=2, replace=False):
        p = params[int(i)]
        p["kind"] = "continuous"
        p["default"] = -float(f"{10 ** rng.uniform(0, 2):.4g}")
    assert len(names) == n and all(math.isfinite(p["default"]) for p in params)
    return {"prf": prf, "parameters": params}

