"""Tunable parameter definitions, range derivation and manifest I/O.

A parameter's tuning range is derived from its default value ``d`` and the
space-wide range factor ``prf`` as ``[d / prf, d * prf]``.  Configurations are
plain float vectors ordered like :attr:`ParameterSpace.params`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

CONTINUOUS = "continuous"
INTEGER = "integer"
KINDS = (CONTINUOUS, INTEGER)

_ENTRY_FIELDS = {"name", "default", "kind", "lo", "hi", "tunable"}
_TOP_FIELDS = {"prf", "parameters"}
RESERVED_NAMES = {"_meta"}


class ManifestError(ValueError):
    """Raised for malformed parameter manifests."""


def derive_range(default: float, prf: float, kind: str = CONTINUOUS) -> tuple[float, float]:
    """Return the ``[lo, hi]`` interval for ``default`` under range factor ``prf``.

    Zero defaults give the degenerate interval ``(0, 0)``; negative defaults
    swap the bounds so that ``lo < hi``.  Integer ranges are rounded outward
    and, for defaults of at least one, clamped to ``lo >= 1``.
    """
    if not math.isfinite(default):
        raise ValueError(f"default must be finite, got {default!r}")
    if not (math.isfinite(prf) and prf > 1):
        raise ValueError(f"prf must be > 1, got {prf!r}")
    if kind not in KINDS:
        raise ValueError(f"unknown parameter kind {kind!r}")
    if default == 0:
        return 0.0, 0.0
    if default > 0:
        lo, hi = default / prf, default * prf
    else:
        lo, hi = default * prf, default / prf
    if kind == INTEGER:
        lo, hi = float(math.floor(lo)), float(math.ceil(hi))
        if default >= 1:
            lo = max(lo, 1.0)
    return float(lo), float(hi)


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    default: float
    kind: str = CONTINUOUS
    lo: float = 0.0
    hi: float = 0.0
    tunable: bool = True
    explicit_range: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"{self.name}: unknown kind {self.kind!r}")
        if not math.isfinite(self.default):
            raise ValueError(f"{self.name}: default must be finite")
        if self.kind == INTEGER and self.default != round(self.default):
            raise ValueError(f"{self.name}: integer parameter with non-integer default {self.default}")
        if self.tunable:
            if not self.lo < self.hi:
                raise ValueError(f"{self.name}: tunable parameter needs lo < hi, got [{self.lo}, {self.hi}]")
            if not self.lo <= self.default <= self.hi:
                raise ValueError(f"{self.name}: default {self.default} outside [{self.lo}, {self.hi}]")
            if self.kind == INTEGER and (self.lo != round(self.lo) or self.hi != round(self.hi)):
                raise ValueError(f"{self.name}: integer parameter with non-integer bounds")
        elif not self.lo == self.hi == self.default:
            raise ValueError(f"{self.name}: non-tunable parameter must have lo == hi == default")

    @classmethod
    def from_default(cls, name: str, default: float, prf: float, kind: str = CONTINUOUS,
                     tunable: bool = True) -> "ParameterSpec":
        lo, hi = derive_range(default, prf, kind)
        if not tunable or lo == hi:
            return cls(name, float(default), kind, float(default), float(default), False)
        return cls(name, float(default), kind, lo, hi, True)


@dataclass(frozen=True)
class ParameterSpace:
    params: tuple[ParameterSpec, ...]
    prf: float = 10.0
    _index: dict = field(default_factory=dict, init=False, repr=False, compare=False)
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        if not self.params:
            raise ValueError("no parameters")
        if not (math.isfinite(self.prf) and self.prf > 1):
            raise ValueError(f"prf must be > 1, got {self.prf!r}")
        index = {}
        for i, p in enumerate(self.params):
            if p.name in index:
                raise ValueError(f"duplicate parameter name {p.name!r}")
            index[p.name] = i
        self._index.update(index)

    def __len__(self) -> int:
        return len(self.params)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    def _array(self, key: str, build) -> np.ndarray:
        # Arrays are cached read-only; callers copy before mutating.
        cached = self._cache.get(key)
        if cached is None:
            cached = np.array(build())
            cached.setflags(write=False)
            self._cache[key] = cached
        return cached

    @property
    def defaults(self) -> np.ndarray:
        return self._array("defaults", lambda: [p.default for p in self.params])

    @property
    def lower(self) -> np.ndarray:
        return self._array("lower", lambda: [p.lo for p in self.params])

    @property
    def upper(self) -> np.ndarray:
        return self._array("upper", lambda: [p.hi for p in self.params])

    @property
    def tunable_mask(self) -> np.ndarray:
        return self._array("tunable", lambda: [bool(p.tunable) for p in self.params])

    @property
    def integer_mask(self) -> np.ndarray:
        return self._array("integer", lambda: [p.kind == INTEGER for p in self.params])

    @property
    def tunable_indices(self) -> np.ndarray:
        return np.flatnonzero(self.tunable_mask)

    def index(self, name: str) -> int:
        return self._index[name]

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def subspace(self, names: Iterable[str]) -> "ParameterSpace":
        """Space restricted to ``names``, in the order given."""
        return ParameterSpace(tuple(self.params[self.index(n)] for n in names), self.prf)

    # --- configurations -------------------------------------------------

    def default_config(self) -> np.ndarray:
        return self.defaults.copy()

    def validate(self, values: Sequence[float]) -> np.ndarray:
        """Return ``values`` as an array, raising ``ValueError`` if it is not a valid configuration."""
        x = np.asarray(values, dtype=float)
        if x.shape != (len(self),):
            raise ValueError(f"configuration has length {x.shape}, expected {len(self)}")
        if not np.all(np.isfinite(x)):
            raise ValueError("configuration contains non-finite values")
        bad = (x < self.lower) | (x > self.upper)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            p = self.params[i]
            raise ValueError(f"{p.name}={x[i]} outside [{p.lo}, {p.hi}]")
        ints = self.integer_mask
        if np.any(x[ints] != np.round(x[ints])):
            i = int(np.flatnonzero(ints & (x != np.round(x)))[0])
            raise ValueError(f"{self.params[i].name}={x[i]} is not integer-valued")
        return x

    def to_dict(self, values: Sequence[float]) -> dict[str, float]:
        out = {}
        for p, v in zip(self.params, values):
            out[p.name] = int(v) if p.kind == INTEGER else float(v)
        return out

    def from_dict(self, mapping: Mapping[str, float], strict: bool = False) -> np.ndarray:
        """Vector from a name->value mapping; missing names take their default."""
        unknown = {n for n in mapping if n not in self}
        if strict and unknown:
            raise ValueError(f"unknown parameters: {sorted(unknown)}")
        x = self.defaults.copy()
        for name, v in mapping.items():
            if name in self:
                x[self._index[name]] = float(v)
        return x

    # --- symmetric unit transform ------------------------------------------
    # [lo, default] maps linearly onto [0, 0.5] and [default, hi] onto [0.5, 1].

    def to_unit(self, values: np.ndarray) -> np.ndarray:
        x = np.asarray(values, dtype=float)
        d, lo, hi = self.defaults, self.lower, self.upper
        low_w = d - lo
        high_w = hi - d
        with np.errstate(divide="ignore", invalid="ignore"):
            below = 0.5 * (x - lo) / np.where(low_w > 0, low_w, 1.0)
            above = 0.5 + 0.5 * (x - d) / np.where(high_w > 0, high_w, 1.0)
        u = np.where(x < d, below, above)
        u = np.where(~self.tunable_mask, 0.5, u)
        return np.clip(u, 0.0, 1.0)

    def from_unit(self, u: np.ndarray) -> np.ndarray:
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        d, lo, hi = self.defaults, self.lower, self.upper
        x = np.where(u < 0.5, lo + 2.0 * u * (d - lo), d + (2.0 * u - 1.0) * (hi - d))
        return self.snap(x)

    def snap(self, x: np.ndarray) -> np.ndarray:
        """Round integer parameters and clip everything into range."""
        x = np.where(self.integer_mask, np.round(x), x)
        return np.clip(x, self.lower, self.upper)


# --- manifests ----------------------------------------------------------------

def parse_manifest(doc: Mapping) -> ParameterSpace:
    if not isinstance(doc, Mapping):
        raise ManifestError("manifest must be a JSON object")
    extra = set(doc) - _TOP_FIELDS
    if extra:
        raise ManifestError(f"unknown top-level fields: {sorted(extra)}")
    if "prf" not in doc:
        raise ManifestError("manifest is missing 'prf'")
    prf = doc["prf"]
    if isinstance(prf, bool) or not isinstance(prf, (int, float)) or not prf > 1:
        raise ManifestError(f"prf must be a number > 1, got {prf!r}")
    entries = doc.get("parameters") or []
    if not entries:
        raise ManifestError("no parameters")
    params, seen = [], set()
    for i, entry in enumerate(entries):
        label = entry.get("name", f"#{i}") if isinstance(entry, Mapping) else f"#{i}"
        try:
            params.append(_parse_entry(entry, float(prf)))
        except (ValueError, TypeError) as exc:
            raise ManifestError(f"parameter {label!r}: {exc}") from None
        if label in seen:
            raise ManifestError(f"parameter {label!r}: duplicate name")
        seen.add(label)
    return ParameterSpace(tuple(params), float(prf))


def _parse_entry(entry: Mapping, prf: float) -> ParameterSpec:
    if not isinstance(entry, Mapping):
        raise ValueError("entry must be an object")
    extra = set(entry) - _ENTRY_FIELDS
    if extra:
        raise ValueError(f"unknown fields {sorted(extra)}")
    name = entry.get("name")
    if not isinstance(name, str) or not name or name in RESERVED_NAMES:
        raise ValueError("missing or invalid name")
    if "default" not in entry or isinstance(entry["default"], bool):
        raise ValueError("missing default")
    default = float(entry["default"])
    kind = entry.get("kind", CONTINUOUS)
    tunable = bool(entry.get("tunable", True))
    has_lo, has_hi = "lo" in entry, "hi" in entry
    if has_lo != has_hi:
        raise ValueError("range override needs both lo and hi")
    if has_lo:
        lo, hi = float(entry["lo"]), float(entry["hi"])
        if not tunable:
            raise ValueError("range override on a non-tunable parameter")
        if lo >= hi:
            raise ValueError(f"override lo={lo} must be < hi={hi}")
        return ParameterSpec(name, default, kind, lo, hi, True, explicit_range=True)
    return ParameterSpec.from_default(name, default, prf, kind, tunable)


def load_manifest(path: str | Path) -> ParameterSpace:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: not valid JSON ({exc})") from None
    return parse_manifest(doc)


def manifest_dict(space: ParameterSpace) -> dict:
    entries = []
    for p in space.params:
        entry = {"name": p.name, "default": int(p.default) if p.kind == INTEGER else p.default,
                 "kind": p.kind}
        if p.explicit_range:
            entry["lo"], entry["hi"] = p.lo, p.hi
        if not p.tunable:
            entry["tunable"] = False
        entries.append(entry)
    return {"prf": space.prf, "parameters": entries}


def save_manifest(space: ParameterSpace, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(manifest_dict(space), fh, indent=1)
        fh.write("\n")


def with_prf(space: ParameterSpace, prf: float) -> ParameterSpace:
    """Re-derive every non-overridden range under a different range factor."""
    params = []
    for p in space.params:
        if p.explicit_range:
            params.append(p)
        else:
            params.append(ParameterSpec.from_default(p.name, p.default, prf, p.kind, p.tunable))
    return ParameterSpace(tuple(params), prf)
