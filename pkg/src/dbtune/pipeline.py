"""Five-stage tuning pipeline with on-disk artifacts.

Stages: manifest loading and range derivation, sampling, feature selection,
tuning, and best-configuration re-evaluation followed by comparison.  Every
stage reads and writes plain JSON, JSON-lines or CSV files; each artifact
carries a ``_meta`` block with the seed, the package version and content
hashes of the files it was derived from.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .data import manifest_path
from .environment import ConfigurationError, EvaluationOutcome, ExternalAdapter, Simulator, SimulatorSpec
from .forest import fit_forest, importance, ranking_report, select_by_coverage
from .optimizers import METHODS, TuningError, make_optimizer, run_tuning
from .params import ParameterSpace, load_manifest, manifest_dict, with_prf
from .sampling import SYMMETRIC_LHS, STRATEGIES, make_design, read_design, read_jsonl, write_design
from .stats import improvement_pct, paired_t_test, summarize

log = logging.getLogger(__name__)

SIM, EXTERNAL = "sim", "external"


class PipelineError(RuntimeError):
    """A stage could not run on the given inputs."""


@dataclass
class RunConfig:
    manifest: Optional[str] = None          # None: bundled 350-parameter sample
    env: str = SIM
    sim_spec: Optional[str] = None          # None: calibrated simulator for the manifest
    sim_seed: int = 0
    noise_cv: Optional[float] = None        # overrides the simulator's noise level
    adapter_command: Optional[str] = None
    adapter_timeout: float = 600.0
    adapter_metrics_dim: Optional[int] = None
    prf: float = 10.0
    rss: Optional[int] = 50
    samples: int = 200
    strategy: str = SYMMETRIC_LHS
    coverage: float = 0.9
    optimizer: str = "bo"
    steps: int = 200
    repetitions: int = 3
    repeats: int = 5
    seed: int = 0
    out: str = "runs"
    jobs: int = 1

    def validate(self) -> "RunConfig":
        if self.env not in (SIM, EXTERNAL):
            raise ValueError(f"env must be {SIM!r} or {EXTERNAL!r}")
        if self.env == EXTERNAL and not self.adapter_command:
            raise ValueError("the external environment needs an adapter command")
        for name in ("samples", "steps", "repetitions", "repeats", "jobs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.rss is not None and self.rss < 1:
            raise ValueError("rss must be >= 1")
        if not self.prf > 1:
            raise ValueError("prf must be > 1")
        if not 0 < self.coverage <= 1:
            raise ValueError("coverage must be in (0, 1]")
        if self.optimizer not in METHODS:
            raise ValueError(f"optimizer must be one of {METHODS}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.noise_cv is not None and self.noise_cv < 0:
            raise ValueError("noise_cv must be >= 0")
        for name in ("manifest", "sim_spec"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise ValueError(f"{name} file not found: {path}")
        return self

    @property
    def manifest_file(self) -> Path:
        return Path(self.manifest) if self.manifest else manifest_path()

    @classmethod
    def from_mapping(cls, obj: Mapping) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown run config fields: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_mapping(json.loads(Path(path).read_text()))


# --- provenance ---------------------------------------------------------------

def file_hash(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def provenance(seed: int, inputs: Sequence[str | Path] = (), **extra) -> dict:
    meta = {"seed": int(seed), "version": __version__,
            "inputs": {str(p): file_hash(p) for p in inputs}}
    meta.update(extra)
    return meta


def _write_json(path: Path, doc: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def _write_jsonl(path: Path, meta: dict, rows: Sequence[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return path


def _seed_for(seed: int, *keys: str | int) -> int:
    """Independent child seed keyed by stage names and indices."""
    words = [int(seed)] + [int.from_bytes(hashlib.sha256(str(k).encode()).digest()[:4], "little") for k in keys]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


# --- environments -----------------------------------------------------------------

def load_space(cfg: RunConfig) -> ParameterSpace:
    space = load_manifest(cfg.manifest_file)
    return space if space.prf == cfg.prf else with_prf(space, cfg.prf)


def simulator_spec(cfg: RunConfig, space: ParameterSpace) -> SimulatorSpec:
    spec = SimulatorSpec.load(cfg.sim_spec) if cfg.sim_spec else SimulatorSpec.calibrated(space, seed=cfg.sim_seed)
    if cfg.noise_cv is not None:
        spec.noise_cv = float(cfg.noise_cv)
    if spec.dims != len(space):
        raise ConfigurationError(f"simulator spec has {spec.dims} dims, manifest has {len(space)} parameters")
    return spec


def make_environment(cfg: RunConfig, space: ParameterSpace, seed: int, workdir: Optional[Path] = None):
    """Fresh environment over the full manifest space; checked before use."""
    if cfg.env == SIM:
        env = Simulator(space, simulator_spec(cfg, space), seed)
    else:
        env = ExternalAdapter(space, cfg.adapter_command, cfg.adapter_timeout,
                              workdir or Path(cfg.out) / "adapter", cfg.adapter_metrics_dim)
    env.check()
    return env


def _env_inputs(cfg: RunConfig) -> list:
    inputs = [cfg.manifest_file]
    if cfg.sim_spec:
        inputs.append(cfg.sim_spec)
    return inputs


# --- stage 3: sampling ----------------------------------------------------------

@dataclass
class SampleResult:
    design_path: Path
    outcomes_path: Path
    validity_rate: float


def cmd_sample(cfg: RunConfig, out: Optional[Path] = None) -> SampleResult:
    """Sample, evaluate and store a design together with its outcomes."""
    out = Path(out or cfg.out)
    space = load_space(cfg)
    env = make_environment(cfg, space, _seed_for(cfg.seed, "sample-env"))
    design = make_design(space, cfg.samples, cfg.seed, cfg.strategy, cfg.rss)
    outcomes = [env.evaluate(space.to_dict(row)) for row in design.configs]
    meta = provenance(cfg.seed, _env_inputs(cfg), stage="sample", prf=cfg.prf, env=cfg.env)
    out.mkdir(parents=True, exist_ok=True)
    design_path = out / "design.jsonl"
    write_design(design, space, design_path, meta)
    rows = [dict(o.to_json(), index=i) for i, o in enumerate(outcomes)]
    outcomes_path = _write_jsonl(out / "outcomes.jsonl", provenance(cfg.seed, [design_path], stage="sample"), rows)
    rate = sum(o.valid for o in outcomes) / len(outcomes)
    log.info("sampled %d configurations, validity rate %.3f", len(outcomes), rate)
    return SampleResult(design_path, outcomes_path, rate)


# --- stage 4: feature selection -------------------------------------------------

@dataclass
class SelectResult:
    ranking_path: Path
    manifest_path: Path
    selected: list


def cmd_select(cfg: RunConfig, design_path: str | Path, outcomes_path: str | Path,
               out: Optional[Path] = None) -> SelectResult:
    """Rank parameters with a forest and write the reduced manifest.

    Invalid rows take throughput 0, so parameters that break the target rank
    high alongside those that move its throughput.
    """
    out = Path(out or cfg.out)
    space = load_space(cfg)
    design = read_design(design_path, space)
    _, records = read_jsonl(outcomes_path)
    if len(records) != len(design):
        raise PipelineError(f"{len(design)} design rows but {len(records)} outcomes")
    if len(records) < 2:
        raise PipelineError("feature selection needs at least 2 evaluated rows")
    y = np.array([r["throughput"] if r["valid"] else 0.0 for r in records], dtype=float)
    forest = fit_forest(space.to_unit(design.configs), y, seed=cfg.seed)
    ranking = importance(forest)
    selected = select_by_coverage(ranking, cfg.coverage)
    tunable = set(space.tunable_indices.tolist())
    keep = [i for i in selected if i in tunable]
    if cfg.coverage >= 1.0:
        keep = [int(i) for i in ranking.order]
    reduced = ParameterSpace(tuple(space.params[i] for i in keep), space.prf)

    meta = provenance(cfg.seed, [design_path, outcomes_path], stage="select", coverage=cfg.coverage)
    ranking_path = _write_json(out / "ranking.json",
                               {"_meta": meta, "ranking": ranking_report(ranking, space.names)})
    reduced_path = _write_json(out / "reduced_manifest.json", dict(manifest_dict(reduced), _meta=meta))
    log.info("selected %d of %d parameters at coverage %.2f", len(keep), len(space), cfg.coverage)
    return SelectResult(ranking_path, reduced_path, [space.names[i] for i in keep])


def load_reduced(path: str | Path, full: ParameterSpace) -> ParameterSpace:
    """Tuned subspace from a (reduced) manifest, ranges re-derived like the full space."""
    doc = json.loads(Path(path).read_text())
    doc.pop("_meta", None)
    names = [p["name"] for p in doc.get("parameters", [])]
    missing = [n for n in names if n not in full]
    if missing:
        raise PipelineError(f"reduced manifest names unknown parameters: {missing[:5]}")
    return full.subspace(names)


# --- stage 5: tuning ---------------------------------------------------------------

def run_dir(out: Path, method: str) -> Path:
    return Path(out) / "tune" / method


def _tune_one(cfg: RunConfig, reduced_path: str, method: str, rep: int, out: str, resume: bool) -> dict:
    full = load_space(cfg)
    space = load_reduced(reduced_path, full)
    if not len(space.tunable_indices):
        raise PipelineError("the reduced manifest has no tunable parameters")
    env = make_environment(cfg, full, _seed_for(cfg.seed, "tune-env", method, rep),
                           Path(out) / "adapter" / f"{method}-{rep}")
    state_dim = env.metrics_dim
    if method == "rl" and state_dim < 1:
        raise PipelineError("the rl optimizer needs the metric count; set adapter_metrics_dim")
    opt = make_optimizer(method, space, _seed_for(cfg.seed, "optimizer", method, rep), cfg.steps, state_dim)
    d = run_dir(Path(out), method)
    d.mkdir(parents=True, exist_ok=True)
    log_path, ckpt = d / f"run{rep}.jsonl", d / f"run{rep}.ckpt.json"
    meta = provenance(cfg.seed, _env_inputs(cfg) + [reduced_path], stage="tune", run=rep)
    try:
        history = run_tuning(opt, env, space, cfg.steps, log_path=log_path, checkpoint_path=ckpt,
                             resume=resume, log_meta=meta)
    except TuningError as exc:
        raise PipelineError(str(exc)) from None
    best = history.best_config if history.best_config is not None else space.default_config()
    doc = {"_meta": dict(meta, log=str(log_path)), "method": method, "run": rep,
           "best_throughput": float(history.best_throughput),
           "default_throughput": float(history.default_throughput),
           "config": space.to_dict(best), "evaluations": len(history) + 1}
    best_path = _write_json(d / f"best{rep}.json", doc)
    return {"run": rep, "best": str(best_path), "log": str(log_path),
            "best_throughput": doc["best_throughput"], "evaluations": doc["evaluations"]}


def cmd_tune(cfg: RunConfig, reduced_manifest: str | Path, method: Optional[str] = None,
             out: Optional[Path] = None, resume: bool = False) -> list[dict]:
    """Run ``cfg.repetitions`` independent tuning runs of one optimizer.

    Each run evaluates the default once and then ``cfg.steps`` suggestions,
    so the total evaluation count is ``repetitions * (steps + 1)``.
    """
    method = method or cfg.optimizer
    if method not in METHODS:
        raise ValueError(f"unknown optimizer {method!r}")
    out = str(out or cfg.out)
    args = [(cfg, str(reduced_manifest), method, r, out, resume) for r in range(cfg.repetitions)]
    if cfg.jobs > 1 and cfg.repetitions > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.jobs, cfg.repetitions)) as pool:
            results = list(pool.map(_tune_one, *zip(*args)))
    else:
        results = [_tune_one(*a) for a in args]
    for r in results:
        log.info("%s run %d: best %.3f after %d evaluations", method, r["run"], r["best_throughput"],
                 r["evaluations"])
    return results


# --- re-evaluation and comparison ------------------------------------------------

@dataclass
class Measurement:
    method: str
    run: int
    repeat: int
    kind: str            # "best" or "default"
    valid: bool
    throughput: float
    flagged: bool = False

    def to_json(self) -> dict:
        return asdict(self)


def cmd_evaluate_best(cfg: RunConfig, best_files: Sequence[str | Path], repeats: Optional[int] = None,
                      out: Optional[Path] = None) -> Path:
    """Re-measure every best configuration ``repeats`` times, plus the default.

    Noise for run ``r`` comes from an environment seeded by ``r`` alone, so the
    same (run, repeat) pair sees the same noise draw whatever the method; the
    paired comparison pairs on exactly that key.  A best configuration that
    fails on re-evaluation is recorded with throughput 0 and flagged.
    """
    repeats = int(repeats or cfg.repeats)
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if not best_files:
        raise PipelineError("no best-configuration files given")
    out = Path(out or cfg.out)
    full = load_space(cfg)
    docs = [json.loads(Path(p).read_text()) for p in best_files]
    methods = {d["method"] for d in docs}
    if len(methods) != 1:
        raise PipelineError(f"best files mix methods {sorted(methods)}; evaluate one method at a time")
    method = methods.pop()
    rows, logs = [], []
    for doc in sorted(docs, key=lambda d: d["run"]):
        run = int(doc["run"])
        logs.append(doc.get("_meta", {}).get("log"))
        for kind, config in (("default", {}), ("best", doc["config"])):
            env = make_environment(cfg, full, _seed_for(cfg.seed, "evaluate", kind, run),
                                   out / "adapter" / f"evaluate-{method}-{run}")
            for k in range(repeats):
                o: EvaluationOutcome = env.evaluate(config)
                flagged = kind == "best" and not o.valid
                if flagged:
                    log.warning("%s run %d: best configuration invalid on repeat %d", method, run, k)
                rows.append(Measurement(method, run, k, kind, bool(o.valid), float(o.throughput), flagged))
    meta = provenance(cfg.seed, _env_inputs(cfg) + list(best_files), stage="evaluate-best", method=method,
                      repeats=repeats, logs=[p for p in logs if p])
    return _write_jsonl(out / f"measurements_{method}.jsonl", meta, [m.to_json() for m in rows])


def _read_table(path: str | Path) -> tuple[dict, list[dict]]:
    meta, rows = read_jsonl(path)
    if not rows:
        raise PipelineError(f"{path}: no measurements")
    return meta, rows


def max_trace(log_paths: Sequence[str | Path]) -> np.ndarray:
    """Best throughput so far per step, averaged over runs (ragged runs are cut to the shortest)."""
    traces = []
    for p in log_paths:
        _, rows = read_jsonl(p)
        traces.append(np.array([r["best_so_far"] for r in sorted(rows, key=lambda r: r["step"])]))
    if not traces:
        return np.empty(0)
    n = min(len(t) for t in traces)
    return np.mean([t[:n] for t in traces], axis=0)


def cmd_compare(cfg: RunConfig, tables: Sequence[str | Path], out: Optional[Path] = None) -> Path:
    """Summary statistics, pairwise paired t-tests and the max-trace CSV."""
    out = Path(out or cfg.out)
    if len(tables) < 2:
        raise PipelineError("compare needs measurement tables of at least two methods")
    per_method, defaults, logs = {}, [], {}
    for path in tables:
        meta, rows = _read_table(path)
        method = rows[0]["method"]
        if method in per_method:
            raise PipelineError(f"two tables for method {method!r}")
        best = sorted((r for r in rows if r["kind"] == "best"), key=lambda r: (r["run"], r["repeat"]))
        per_method[method] = best
        defaults += [r["throughput"] for r in rows if r["kind"] == "default"]
        logs[method] = [p for p in meta.get("logs", []) if p and Path(p).exists()]
    counts = {m: len(v) for m, v in per_method.items()}
    if len(set(counts.values())) != 1:
        raise PipelineError("unequal measurement counts: " + ", ".join(f"{m}={n}" for m, n in counts.items()))
    if not defaults:
        raise PipelineError("tables carry no default measurements")
    default_mean, default_sd = summarize(defaults)

    report = {"default": {"mean": default_mean, "sd": default_sd, "n": len(defaults)}, "methods": {},
              "tests": []}
    for m, rows in per_method.items():
        mean, sd = summarize([r["throughput"] for r in rows])
        report["methods"][m] = {"mean": mean, "sd": sd, "n": len(rows),
                                "improvement_pct": improvement_pct(mean, default_mean),
                                "flagged": sum(bool(r["flagged"]) for r in rows)}
    names = list(per_method)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            keys_a = [(r["run"], r["repeat"]) for r in per_method[a]]
            keys_b = [(r["run"], r["repeat"]) for r in per_method[b]]
            if keys_a != keys_b:
                raise PipelineError(f"measurements of {a!r} and {b!r} do not pair by (run, repeat)")
            res = paired_t_test([r["throughput"] for r in per_method[a]],
                                [r["throughput"] for r in per_method[b]])
            report["tests"].append({"a": a, "b": b, "t_statistic": res.statistic, "p_value": res.pvalue,
                                    "df": res.df, "mean_diff": res.mean_difference})
    report["_meta"] = provenance(cfg.seed, list(tables), stage="compare")
    path = _write_json(out / "comparison.json", report)

    traces = {m: max_trace(p) for m, p in logs.items() if p}
    if traces:
        n = max(len(t) for t in traces.values())
        with open(out / "max_trace.csv", "w", newline="") as fh:
            fh.write(f"# seed={cfg.seed} version={__version__}\n")
            w = csv.writer(fh)
            w.writerow(["step"] + list(traces))
            for k in range(n):
                w.writerow([k + 1] + [f"{t[k]:.6f}" if k < len(t) else "" for t in traces.values()])
    return path


# --- validity studies ------------------------------------------------------------

def cmd_validity(cfg: RunConfig, prfs: Sequence[float] = (2.0, 5.0, 10.0, 20.0, 50.0, 100.0),
                 rss_values: Sequence[int] = (10, 50, 100, 200, 300), n: int = 100, seeds: int = 5,
                 strategy: str = "lhs", out: Optional[Path] = None) -> Path:
    """Validity rate against the range factor (full designs) and against RSS at ``cfg.prf``."""
    out = Path(out or cfg.out)
    base = load_space(cfg)
    env = make_environment(cfg, base, _seed_for(cfg.seed, "validity-env"))
    n_tunable = len(base.tunable_indices)

    def rate(space, rss):
        return float(np.mean([_validity(space, env, n, _seed_for(cfg.seed, "validity", s), strategy, rss)
                              for s in range(seeds)]))

    by_prf = [{"prf": float(f), "rate": rate(with_prf(base, f), None)} for f in prfs]
    by_rss = [{"rss": int(r), "rate": rate(base, r)} for r in rss_values if 1 <= r <= n_tunable]
    doc = {"_meta": provenance(cfg.seed, _env_inputs(cfg), stage="validity", n=n, seeds=seeds,
                               strategy=strategy),
           "by_prf": by_prf, "by_rss": {"prf": cfg.prf, "rates": by_rss}}
    return _write_json(out / "validity.json", doc)


def _validity(space, env, n, seed, strategy, rss) -> float:
    design = make_design(space, n, seed, strategy=strategy, rss=rss)
    return sum(env.evaluate(space.to_dict(row)).valid for row in design.configs) / n


# --- whole pipeline ----------------------------------------------------------------

@dataclass
class PipelineResult:
    sample: SampleResult
    select: SelectResult
    runs: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    comparison: Optional[Path] = None


def run_pipeline(cfg: RunConfig, methods: Sequence[str] = METHODS) -> PipelineResult:
    cfg.validate()
    out = Path(cfg.out)
    sample = cmd_sample(cfg, out / "sample")
    select = cmd_select(cfg, sample.design_path, sample.outcomes_path, out / "select")
    result = PipelineResult(sample, select)
    for m in methods:
        runs = cmd_tune(cfg, select.manifest_path, m, out)
        result.runs[m] = runs
        result.tables[m] = cmd_evaluate_best(cfg, [r["best"] for r in runs], out=out / "evaluate")
    if len(methods) >= 2:
        result.comparison = cmd_compare(cfg, list(result.tables.values()), out)
    return result
