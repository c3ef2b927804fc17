import json
import shutil
import subprocess
import sys
import pytest

from dbtune import __version__
from dbtune.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from dbtune.environment import SimulatorSpec
from dbtune.params import manifest_dict
from dbtune.pipeline import PipelineError, RunConfig, cmd_compare, file_hash, load_reduced, provenance
from dbtune.sampling import read_jsonl

from conftest import make_space

SMALL_PLANTED = ((0.5, 0.5, -1.5, 1.5), (-0.5, 0.3, -1.5, 0.7), (0.4, 0.2, -0.4, 1.5))


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    """A 12-parameter manifest with a matching simulator spec."""
    d = tmp_path_factory.mktemp("small")
    space = make_space([1.0, 2.0, 8.0, 0.5, 3.0, 40.0, 1.0, 6.0, 0.0, 2.5, 100.0, 7.0],
                       kinds=["continuous"] * 5 + ["integer"] + ["continuous"] * 6)
    (d / "manifest.json").write_text(json.dumps(manifest_dict(space)))
    SimulatorSpec.calibrated(space, seed=1, planted=SMALL_PLANTED).save(d / "spec.json")
    return d


def base_args(small, out):
    return ["--manifest", str(small / "manifest.json"), "--sim-spec", str(small / "spec.json"),
            "--out", str(out), "--seed", "3"]


def run_cli(args, capsys):
    code = main(args)
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def test_version(capsys):
    assert main(["--version"]) == EXIT_OK
    assert __version__ in capsys.readouterr().out


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["sample", "--samples", "x"], ["--jobs", "0", "sample"]])
def test_argparse_errors_exit_2(argv, capsys):
    assert main(argv) == EXIT_USAGE


def test_invalid_values_exit_2(small, tmp_path, capsys):
    code, _, err = run_cli(base_args(small, tmp_path) + ["sample", "--samples", "0"], capsys)
    assert code == EXIT_USAGE and "samples" in err
    code, _, err = run_cli(["--manifest", str(tmp_path / "nope.json"), "sample"], capsys)
    assert code == EXIT_USAGE and "not found" in err
    code, _, err = run_cli(base_args(small, tmp_path) + ["select", "--design", "a.jsonl", "--outcomes", "b"],
                           capsys)
    assert code == EXIT_USAGE


def test_config_file(small, tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"samples": 20, "rss": 4, "bogus": 1}))
    code, _, err = run_cli(["--config", str(cfg), "sample"], capsys)
    assert code == EXIT_USAGE and "bogus" in err
    cfg.write_text(json.dumps({"samples": 20, "rss": 4, "manifest": str(small / "manifest.json"),
                               "sim_spec": str(small / "spec.json"), "out": str(tmp_path / "o")}))
    code, out, _ = run_cli(["--config", str(cfg), "sample", "--samples", "12"], capsys)
    assert code == EXIT_OK
    _, rows = read_jsonl(tmp_path / "o" / "design.jsonl")
    assert len(rows) == 12  # flag overrides the file


def test_runtime_failure_exits_1(small, tmp_path, capsys):
    args = ["--manifest", str(small / "manifest.json"), "--env", "external",
            "--adapter-command", "no-such-benchmark-xyz", "--out", str(tmp_path), "sample", "--rss", "4",
            "--samples", "4"]
    code, _, err = run_cli(args, capsys)
    assert code == EXIT_RUNTIME and "not found" in err


@pytest.fixture(scope="module")
def staged(small, tmp_path_factory):
    """sample -> select -> tune x3 -> evaluate-best -> compare through the CLI."""
    out = tmp_path_factory.mktemp("staged")
    args = base_args(small, out)
    assert main(args + ["sample", "--samples", "60", "--rss", "4"]) == 0
    assert main(args + ["select", "--design", str(out / "design.jsonl"),
                        "--outcomes", str(out / "outcomes.jsonl"), "--coverage", "0.8"]) == 0
    tables = []
    for m in ("random", "bo", "rl"):
        assert main(args + ["tune", "--space", str(out / "reduced_manifest.json"), "--optimizer", m,
                            "--steps", "15", "--repetitions", "2"]) == 0
        best = sorted((out / "tune" / m).glob("best*.json"))
        assert main(args + ["evaluate-best", *map(str, best), "--repeats", "3"]) == 0
        tables.append(out / f"measurements_{m}.jsonl")
    assert main(args + ["compare", *map(str, tables)]) == 0
    return out


def test_staged_outputs(staged, small):
    ranking = json.loads((staged / "ranking.json").read_text())
    assert ranking["_meta"]["seed"] == 3 and ranking["_meta"]["version"] == __version__
    assert str(staged / "design.jsonl") in ranking["_meta"]["inputs"]
    report = json.loads((staged / "comparison.json").read_text())
    assert set(report["methods"]) == {"random", "bo", "rl"}
    assert all(r["n"] == 6 for r in report["methods"].values())
    assert len(report["tests"]) == 3
    lines = (staged / "max_trace.csv").read_text().splitlines()
    assert lines[0].startswith("# seed=3 version=")
    assert lines[1] == "step,random,bo,rl"
    assert len(lines) == 2 + 15


def test_evaluation_count(staged):
    for m in ("random", "bo", "rl"):
        total = 0
        for log_path in (staged / "tune" / m).glob("run*.jsonl"):
            meta, rows = read_jsonl(log_path)
            total += 1 + len(rows)  # default measurement plus one per step
            assert "default" in meta
        assert total == 2 * (15 + 1)
        best = json.loads((staged / "tune" / m / "best0.json").read_text())
        assert best["evaluations"] == 16


def test_reduced_manifest_loads(staged, small):
    from dbtune.params import load_manifest
    full = load_manifest(small / "manifest.json")
    sub = load_reduced(staged / "reduced_manifest.json", full)
    assert 1 <= len(sub) <= len(full)
    ranking = json.loads((staged / "ranking.json").read_text())["ranking"]
    assert sub.names == [r["name"] for r in ranking[:len(sub)]]


def test_resume_after_interruption(staged, small, tmp_path):
    out = tmp_path / "again"
    out.mkdir()
    shutil.copy(staged / "reduced_manifest.json", out)
    tune = ["tune", "--space", str(out / "reduced_manifest.json"), "--optimizer", "bo", "--repetitions", "2"]
    # a run stopped after 10 of 15 steps leaves its step-10 checkpoint behind
    assert main(base_args(small, out) + tune + ["--steps", "10"]) == 0
    assert main(base_args(small, out) + tune + ["--steps", "15", "--resume"]) == 0
    strip = lambda p: [{k: v for k, v in json.loads(x).items() if k != "wall_ms"}
                       for x in p.read_text().splitlines()[1:]]
    for r in (0, 1):
        assert strip(out / "tune" / "bo" / f"run{r}.jsonl") == strip(staged / "tune" / "bo" / f"run{r}.jsonl")


def test_compare_identical_tables_gives_p_one(staged, tmp_path):
    src = staged / "measurements_bo.jsonl"
    twin = tmp_path / "measurements_twin.jsonl"
    twin.write_text(src.read_text().replace('"method": "bo"', '"method": "twin"'))
    path = cmd_compare(RunConfig(out=str(tmp_path)), [src, twin])
    test = json.loads(path.read_text())["tests"][0]
    assert test["p_value"] == 1.0 and test["t_statistic"] == 0.0


def test_compare_unequal_counts_abort(staged, tmp_path, capsys):
    src = staged / "measurements_bo.jsonl"
    lines = src.read_text().splitlines()
    short = tmp_path / "measurements_short.jsonl"
    kept = [ln.replace('"method": "bo"', '"method": "short"') for ln in lines[:-1]]
    short.write_text("\n".join(kept) + "\n")
    with pytest.raises(PipelineError, match="bo=6, short=5"):
        cmd_compare(RunConfig(out=str(tmp_path)), [src, short])
    code, _, err = run_cli(["--out", str(tmp_path), "compare", str(src), str(short)], capsys)
    assert code == EXIT_RUNTIME and "short" in err


def test_validity_command(small, tmp_path, capsys):
    code, out, _ = run_cli(base_args(small, tmp_path) + ["validity", "--n", "20", "--prfs", "2", "100",
                                                          "--rss-values", "2", "8", "--seeds", "2"], capsys)
    assert code == EXIT_OK
    doc = json.loads((tmp_path / "validity.json").read_text())
    assert [r["prf"] for r in doc["by_prf"]] == [2.0, 100.0]
    assert doc["by_prf"][0]["rate"] >= doc["by_prf"][1]["rate"]
    assert [r["rss"] for r in doc["by_rss"]["rates"]] == [2, 8]


def test_run_is_deterministic_and_parallel_safe(small, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"rss": 4}))
    reports = []
    for k, jobs in enumerate((1, 1, 2)):
        out = tmp_path / f"r{k}"
        assert main(["--config", str(cfg)] + base_args(small, out) +
                    ["--jobs", str(jobs), "run", "--samples", "40", "--steps", "12", "--repetitions", "2"]) == 0
        rep = json.loads((out / "comparison.json").read_text())
        rep.pop("_meta")
        reports.append(rep)
    assert reports[0] == reports[1] == reports[2]


def test_provenance_hashes(tmp_path):
    f = tmp_path / "x.txt"
    f.write_text("abc")
    meta = provenance(7, [f], stage="t")
    assert meta["seed"] == 7 and meta["stage"] == "t"
    assert meta["inputs"][str(f)] == file_hash(f)
    assert file_hash(f) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dbtune.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and __version__ in proc.stdout
