"""Space-filling random designs over a :class:`ParameterSpace`.

``lhs`` is plain Latin hypercube sampling over ``[lo, hi]``.  ``symmetric_lhs``
stratifies ``[lo, default)`` and ``[default, hi]`` separately with the same
number of strata, so values below the default are as well covered as values
above it.  ``apply_random_subset`` keeps only ``rss`` sampled values per
configuration and resets the rest to their defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .params import ParameterSpace

LHS = "lhs"
SYMMETRIC_LHS = "symmetric_lhs"
STRATEGIES = (LHS, SYMMETRIC_LHS)


@dataclass(frozen=True)
class Design:
    configs: np.ndarray          # (n, n_params), native units
    seed: int
    strategy: str
    rss: Optional[int] = None

    def __len__(self) -> int:
        return len(self.configs)


def _check(space: ParameterSpace, n: int) -> np.ndarray:
    if int(n) != n or n < 1:
        raise ValueError(f"design size must be a positive integer, got {n!r}")
    idx = space.tunable_indices
    if len(idx) == 0:
        raise ValueError("space has no tunable parameters")
    return idx


def _strata(rng: np.random.Generator, n: int) -> np.ndarray:
    """One uniform draw per stratum of [0, 1), in stratum order."""
    return (np.arange(n) + rng.random(n)) / n


def _snap_integer(values: np.ndarray, edges_lo: np.ndarray, edges_hi: np.ndarray,
                  lo: float, hi: float) -> np.ndarray:
    # Nearest integer inside the value's own stratum when one exists, otherwise nearest overall.
    r = np.round(values)
    first = np.ceil(edges_lo)
    last = np.floor(edges_hi)
    last = np.where((last == edges_hi) & (edges_hi < hi), last - 1, last)
    has = first <= last
    r = np.where(has, np.clip(r, first, np.maximum(first, last)), r)
    return np.clip(r, lo, hi)


def lhs(space: ParameterSpace, n: int, seed: int) -> Design:
    idx = _check(space, n)
    rng = np.random.default_rng(seed)
    configs = np.tile(space.defaults, (n, 1))
    ints = space.integer_mask
    for j in idx:
        p = space.params[j]
        width = p.hi - p.lo
        u = _strata(rng, n)
        values = p.lo + u * width
        if ints[j]:
            k = np.arange(n)
            values = _snap_integer(values, p.lo + k * width / n, p.lo + (k + 1) * width / n, p.lo, p.hi)
        configs[:, j] = values[rng.permutation(n)]
    return Design(configs, int(seed), LHS)


def _half_counts(n: int, p) -> tuple[int, int]:
    if p.default <= p.lo:
        return 0, n
    if p.default >= p.hi:
        return n, 0
    return (n + 1) // 2, n // 2


def symmetric_lhs(space: ParameterSpace, n: int, seed: int) -> Design:
    idx = _check(space, n)
    rng = np.random.default_rng(seed)
    configs = np.tile(space.defaults, (n, 1))
    ints = space.integer_mask
    for j in idx:
        p = space.params[j]
        n_low, n_high = _half_counts(n, p)
        parts, los, his = [], [], []
        if n_low:
            w = p.default - p.lo
            k = np.arange(n_low)
            parts.append(p.lo + _strata(rng, n_low) * w)
            los.append(p.lo + k * w / n_low)
            his.append(p.lo + (k + 1) * w / n_low)
        if n_high:
            w = p.hi - p.default
            k = np.arange(n_high)
            parts.append(p.default + _strata(rng, n_high) * w)
            los.append(p.default + k * w / n_high)
            his.append(p.default + (k + 1) * w / n_high)
        values = np.concatenate(parts)
        if ints[j]:
            values = _snap_integer(values, np.concatenate(los), np.concatenate(his), p.lo, p.hi)
            # rounding must not move a sample onto or across the default
            if n_low:
                low = values[:n_low]
                values[:n_low] = np.where(low >= p.default, np.maximum(p.default - 1, p.lo), low)
            if n_high and p.hi > p.default:
                high = values[n_low:]
                values[n_low:] = np.where(high <= p.default, np.minimum(p.default + 1, p.hi), high)
        configs[:, j] = values[rng.permutation(n)]
    return Design(configs, int(seed), SYMMETRIC_LHS)


def apply_random_subset(design: Design, rss: int, space: ParameterSpace, seed: int) -> Design:
    """Keep ``rss`` randomly chosen tunable values per configuration; reset the rest to default."""
    idx = space.tunable_indices
    if int(rss) != rss or rss < 1:
        raise ValueError(f"rss must be a positive integer, got {rss!r}")
    if rss > len(idx):
        raise ValueError(f"rss={rss} exceeds the {len(idx)} tunable parameters")
    rng = np.random.default_rng(seed)
    out = np.tile(space.defaults, (len(design), 1))
    for i in range(len(design)):
        keep = rng.choice(idx, size=rss, replace=False)
        out[i, keep] = design.configs[i, keep]
    return replace(design, configs=out, rss=int(rss))


def make_design(space: ParameterSpace, n: int, seed: int, strategy: str = SYMMETRIC_LHS,
                rss: Optional[int] = None) -> Design:
    """Design of the given strategy, optionally overlaid with random sub-sampling."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    base_seed, subset_seed = np.random.SeedSequence(seed).generate_state(2)
    sampler = lhs if strategy == LHS else symmetric_lhs
    design = sampler(space, n, int(base_seed))
    design = replace(design, seed=int(seed))
    if rss is not None and rss < len(space.tunable_indices):
        design = apply_random_subset(design, rss, space, int(subset_seed))
    elif rss is not None:
        design = replace(design, rss=int(rss))
    return design


# --- JSON lines ---------------------------------------------------------------

def write_design(design: Design, space: ParameterSpace, path: str | Path, meta: Optional[dict] = None) -> None:
    with open(path, "w") as fh:
        header = {"seed": design.seed, "strategy": design.strategy, "rss": design.rss, "n": len(design)}
        header.update(meta or {})
        fh.write(json.dumps({"_meta": header}, sort_keys=True) + "\n")
        for row in design.configs:
            fh.write(json.dumps(space.to_dict(row)) + "\n")


def read_jsonl(path: str | Path) -> tuple[dict, list[dict]]:
    """Return (meta header, records) from a JSON-lines artifact."""
    meta, rows = {}, []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "_meta" in obj and len(obj) == 1:
                meta = obj["_meta"]
            else:
                rows.append(obj)
    return meta, rows


def read_design(path: str | Path, space: ParameterSpace) -> Design:
    meta, rows = read_jsonl(path)
    configs = np.array([space.from_dict(r) for r in rows]) if rows else np.empty((0, len(space)))
    return Design(configs, int(meta.get("seed", 0)), meta.get("strategy", SYMMETRIC_LHS), meta.get("rss"))


def count_non_default(configs: np.ndarray, space: ParameterSpace) -> np.ndarray:
    return np.sum(np.asarray(configs) != space.defaults, axis=1)

