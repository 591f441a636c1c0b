import json
from pathlib import Path

import pytest

from reroute import cli
from reroute.records import file_digest, read_model, read_reference_set, read_samples

SMALL_BENCH = """\
bench:
  ref_per_type: 30
  test_per_type: 8
  router_steps: 40
"""


def write_config(tmp_path, body="", name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(SMALL_BENCH + body)
    return path


def digests(out: Path) -> dict:
    manifest = json.loads((out / "manifest.json").read_text())
    return manifest["files"]


class TestGenerate:
    def test_writes_round_trippable_files(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "bench"
        assert cli.main(["generate", "--config", str(cfg), "--out", str(out)]) == 0
        assert set(digests(out)) == {"model.jsonl", "reference_set.jsonl", "test_split.jsonl"}
        bank, router = read_model(out / "model.jsonl")
        assert router is not None
        assert len(read_reference_set(out / "reference_set.jsonl", bank)) > 0
        assert len(read_samples(out / "test_split.jsonl")) == 64

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "bogus_key: 1\n")
        assert cli.main(["generate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
        err = capsys.readouterr().err
        assert "bogus_key" in err and "cfg.yaml:5" in err
        assert not (tmp_path / "o").exists()

    def test_same_config_same_digests(self, tmp_path):
        cfg = write_config(tmp_path)
        cli.main(["generate", "--config", str(cfg), "--out", str(tmp_path / "a")])
        cli.main(["generate", "--config", str(cfg), "--out", str(tmp_path / "b")])
        assert digests(tmp_path / "a") == digests(tmp_path / "b")

    def test_seed_flag_overrides_file(self, tmp_path):
        cfg = write_config(tmp_path, "seed: 1\n")
        cli.main(["generate", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "2"])
        manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert manifest["seed"] == 2

    def test_missing_config_file(self, tmp_path):
        assert cli.main(["generate", "--config", str(tmp_path / "nope.yaml")]) == 2

    def test_bad_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["generate", "--frobnicate"])
        assert exc.value.code == 1


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    cfg = write_config(tmp, "per_step_transitions: true\n"
                            "sweeps:\n  - {axis: steps, values: [5, 10], strategy: ngd}\n")
    out = tmp / "out"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    return out


class TestRun:
    def test_default_strategies(self, run_dir):
        names = sorted(p.name.split(".")[0] for p in (run_dir / "results").glob("*.summary.json"))
        assert names == ["base", "kernel_regression", "mode_finding", "ngd", "oracle"]
        rows = json.loads((run_dir / "comparison.json").read_text())["rows"]
        accs = [r["accuracy"] for r in rows]
        assert accs == sorted(accs, reverse=True)

    def test_per_step_transitions_exported(self, run_dir):
        doc = json.loads((run_dir / "results" / "ngd.summary.json").read_text())
        assert len(doc["transitions_per_step"]) == 11

    def test_sweep_exported(self, run_dir):
        doc = json.loads((run_dir / "sweeps" / "ngd.steps.json").read_text())
        assert {r["value"] for r in doc["rows"]} == {5, 10}

    def test_manifest_covers_outputs(self, run_dir):
        files = digests(run_dir)
        for rel, d in files.items():
            assert file_digest(run_dir / rel) == d
        assert "benchmark/model.jsonl" in files and "comparison.json" in files

    def test_replay_is_bit_identical(self, run_dir, tmp_path):
        out = tmp_path / "replay"
        assert cli.main(["run", "--replay", str(run_dir / "manifest.json"), "--out", str(out)]) == 0
        assert digests(out) == digests(run_dir)

    def test_threads_do_not_change_outputs(self, run_dir, tmp_path, monkeypatch):
        monkeypatch.setenv("RERT_THREADS", "3")
        out = tmp_path / "threaded"
        assert cli.main(["run", "--replay", str(run_dir / "manifest.json"), "--out", str(out)]) == 0
        assert digests(out) == digests(run_dir)

    def test_bad_thread_env(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("RERT_THREADS", "zero")
        assert cli.main(["run", "--config", str(write_config(tmp_path)), "--out", str(tmp_path / "o")]) == 1
        assert "RERT_THREADS" in capsys.readouterr().err

    def test_per_step_refused_without_trajectories(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "per_step_transitions: true\n")
        code = cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--no-retain-trajectories"])
        assert code == 1
        assert "retain_trajectories" in capsys.readouterr().err
        assert not (tmp_path / "o").exists()

    def test_without_trajectories(self, tmp_path):
        cfg = write_config(tmp_path, "strategies:\n  - {kind: ngd}\n")
        out = tmp_path / "o"
        assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--no-retain-trajectories"]) == 0
        assert not list((out / "results").glob("*.trajectories.jsonl"))

    def test_uses_generated_benchmark(self, tmp_path):
        cfg = write_config(tmp_path)
        cli.main(["generate", "--config", str(cfg), "--out", str(tmp_path / "bench")])
        cfg2 = write_config(tmp_path, f"benchmark_dir: {tmp_path / 'bench'}\nstrategies:\n  - {{kind: ngd}}\n",
                            name="run.yaml")
        assert cli.main(["run", "--config", str(cfg2), "--out", str(tmp_path / "o")]) == 0
        assert "benchmark/model.jsonl" not in digests(tmp_path / "o")

    def test_missing_benchmark_dir(self, tmp_path):
        cfg = write_config(tmp_path, f"benchmark_dir: {tmp_path / 'absent'}\n")
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2

    def test_strategy_failure_isolated(self, tmp_path, monkeypatch):
        real = cli.evaluate

        def flaky(bank, router, refset, test_split, spec, **kw):
            if spec.kind == "kernel_regression":
                raise ArithmeticError("synthetic failure")
            return real(bank, router, refset, test_split, spec, **kw)

        monkeypatch.setattr(cli, "evaluate", flaky)
        out = tmp_path / "o"
        assert cli.main(["run", "--config", str(write_config(tmp_path)), "--out", str(out)]) == 2
        rows = json.loads((out / "comparison.json").read_text())["rows"]
        failed = [r for r in rows if r["error"]]
        assert [r["strategy"] for r in failed] == ["kernel_regression"]
        assert len(rows) == 5 and (out / "results" / "ngd.summary.json").exists()


class TestReport:
    def test_merges_sorted(self, run_dir, capsys, tmp_path):
        assert cli.main(["report", str(run_dir), "--out", str(tmp_path / "r.json")]) == 0
        rows = json.loads((tmp_path / "r.json").read_text())["rows"]
        assert len(rows) == 5
        assert [r["accuracy"] for r in rows] == sorted((r["accuracy"] for r in rows), reverse=True)
        assert "ngd" in capsys.readouterr().out

    def test_single_result(self, tmp_path):
        cfg = write_config(tmp_path, "strategies:\n  - {kind: ngd}\n")
        cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert cli.main(["report", str(tmp_path / "o"), "--out", str(tmp_path / "r.json")]) == 0
        assert len(json.loads((tmp_path / "r.json").read_text())["rows"]) == 1

    def test_tampered_file(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "strategies:\n  - {kind: ngd}\n")
        out = tmp_path / "o"
        cli.main(["run", "--config", str(cfg), "--out", str(out)])
        target = out / "results" / "ngd.summary.json"
        target.write_text(target.read_text().replace('"final"', '"final" ', 1))
        assert cli.main(["report", str(out)]) == 3
        assert "ngd.summary.json" in capsys.readouterr().err

    def test_missing_manifest(self, tmp_path):
        assert cli.main(["report", str(tmp_path)]) == 2
