"""Command-line entry point: ``dbtune <stage> [options]``.

Exit status is 0 on success, 2 on a usage error (bad flags, invalid run
config, missing input files) and 1 when a stage fails at runtime.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .environment import ConfigurationError
from .optimizers import METHODS
from .params import ManifestError
from .pipeline import (EXTERNAL, SIM, PipelineError, RunConfig, cmd_compare, cmd_evaluate_best, cmd_sample,
                       cmd_select, cmd_tune, cmd_validity, run_pipeline)
from .sampling import STRATEGIES

log = logging.getLogger("dbtune")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dbtune", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", type=Path, help="run config JSON; flags given here override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--env", choices=(SIM, EXTERNAL))
    p.add_argument("--manifest", help="parameter manifest (default: bundled 350-parameter sample)")
    p.add_argument("--prf", type=float, help="parameter range factor")
    p.add_argument("--sim-spec", dest="sim_spec", help="simulator spec JSON (default: calibrated)")
    p.add_argument("--sim-seed", dest="sim_seed", type=int)
    p.add_argument("--noise-cv", dest="noise_cv", type=float)
    p.add_argument("--adapter-command", dest="adapter_command", help="external evaluation command")
    p.add_argument("--adapter-timeout", dest="adapter_timeout", type=float, help="seconds per evaluation")
    p.add_argument("--adapter-metrics-dim", dest="adapter_metrics_dim", type=_positive_int)
    p.add_argument("--jobs", type=_positive_int, help="concurrent tuning runs")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="sample and evaluate a design")
    s.add_argument("--samples", type=int)
    s.add_argument("--rss", type=int)
    s.add_argument("--strategy", choices=STRATEGIES)

    s = sub.add_parser("select", help="rank parameters and write the reduced manifest")
    s.add_argument("--design", required=True, type=Path)
    s.add_argument("--outcomes", required=True, type=Path)
    s.add_argument("--coverage", type=float)

    s = sub.add_parser("tune", help="run repeated tuning runs of one optimizer")
    s.add_argument("--space", required=True, type=Path, help="(reduced) manifest to tune")
    s.add_argument("--optimizer", choices=METHODS)
    s.add_argument("--steps", type=int)
    s.add_argument("--repetitions", type=int)
    s.add_argument("--resume", action="store_true", help="continue from checkpoints if present")

    s = sub.add_parser("evaluate-best", help="re-measure best configurations")
    s.add_argument("best", nargs="+", type=Path, help="best-configuration files of one method")
    s.add_argument("--repeats", type=int)

    s = sub.add_parser("compare", help="compare measurement tables of several methods")
    s.add_argument("tables", nargs="+", type=Path)

    s = sub.add_parser("validity", help="validity rate against range factor and subset size")
    s.add_argument("--n", type=_positive_int, default=100)
    s.add_argument("--prfs", type=float, nargs="+", default=[2.0, 5.0, 10.0, 20.0, 50.0, 100.0])
    s.add_argument("--rss-values", dest="rss_values", type=int, nargs="+", default=[10, 50, 100, 200, 300])
    s.add_argument("--seeds", type=_positive_int, default=5)
    s.add_argument("--strategy", choices=STRATEGIES, default="lhs")

    s = sub.add_parser("run", help="all stages end to end")
    s.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    s.add_argument("--steps", type=int)
    s.add_argument("--repetitions", type=int)
    s.add_argument("--samples", type=int)
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
    except FileNotFoundError:
        raise UsageError(f"config file not found: {args.config}") from None
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad run config: {exc}") from None
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)
                 if getattr(args, f.name, None) is not None}
    cfg = replace(cfg, **overrides)
    try:
        return cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _require(*paths: Path) -> None:
    for p in paths:
        if not Path(p).is_file():
            raise UsageError(f"input file not found: {p}")


def dispatch(args: argparse.Namespace, cfg: RunConfig) -> dict:
    out = Path(cfg.out)
    c = args.command
    if c == "sample":
        res = cmd_sample(cfg)
        print(f"validity rate: {res.validity_rate:.3f}")
        return {"design": str(res.design_path), "outcomes": str(res.outcomes_path),
                "validity_rate": res.validity_rate}
    if c == "select":
        _require(args.design, args.outcomes)
        res = cmd_select(cfg, args.design, args.outcomes)
        return {"ranking": str(res.ranking_path), "manifest": str(res.manifest_path), "selected": res.selected}
    if c == "tune":
        _require(args.space)
        return {"runs": cmd_tune(cfg, args.space, resume=args.resume)}
    if c == "evaluate-best":
        _require(*args.best)
        return {"table": str(cmd_evaluate_best(cfg, args.best))}
    if c == "compare":
        _require(*args.tables)
        path = cmd_compare(cfg, args.tables)
        report = json.loads(path.read_text())
        for m, r in report["methods"].items():
            print(f"{m:>8}: mean {r['mean']:.3f} sd {r['sd']:.3f} improvement {r['improvement_pct']:+.1f}%")
        for t in report["tests"]:
            print(f"{t['a']} vs {t['b']}: t={t['t_statistic']:.3f} p={t['p_value']:.4f}")
        return {"comparison": str(path)}
    if c == "validity":
        path = cmd_validity(cfg, args.prfs, args.rss_values, args.n, args.seeds, args.strategy)
        doc = json.loads(path.read_text())
        for row in doc["by_prf"]:
            print(f"prf {row['prf']:>6g}: {row['rate']:.3f}")
        for row in doc["by_rss"]["rates"]:
            print(f"rss {row['rss']:>6d}: {row['rate']:.3f}")
        return {"validity": str(path)}
    if c == "run":
        res = run_pipeline(cfg, args.methods)
        return {"comparison": str(res.comparison) if res.comparison else None, "out": str(out)}
    raise UsageError(f"unknown command {c!r}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        result = dispatch(args, cfg)
    except UsageError as exc:
        print(f"dbtune: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PipelineError, ConfigurationError, ManifestError, OSError, ValueError, RuntimeError) as exc:
        print(f"dbtune: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(result, indent=1, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
