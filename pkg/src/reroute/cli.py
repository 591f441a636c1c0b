"""Command-line entry point: ``reroute generate | run | report``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error,
3 integrity failure (digest mismatch).
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .analytics import evaluate, summary, sweep, transitions
from .config import ConfigError, ExperimentConfig, config_from_dict, load_config, parse_config
from .core import InvalidInputError
from .records import (
    RecordFormatError,
    atomic_write_text,
    file_digest,
    read_model,
    read_reference_set,
    read_samples,
    write_jsonl,
    write_model,
    write_reference_set,
    write_samples,
)
from .synthbench import prepare

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_INTEGRITY = 0, 1, 2, 3
MANIFEST = "manifest.json"
MODEL_FILE, REFSET_FILE, TEST_FILE = "model.jsonl", "reference_set.jsonl", "test_split.jsonl"


class IntegrityError(RuntimeError):
    """A file's content digest disagrees with its manifest."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _dump_json(path: Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, allow_nan=False) + "\n")


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=-]+", "_", name)


# -- manifests -----------------------------------------------------------

def write_manifest(out: Path, command: str, cfg: ExperimentConfig, files, started: str) -> dict:
    manifest = {
        "artifact_version": __version__,
        "command": command,
        "config_digest": cfg.digest(),
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "started_at": started,
        "finished_at": _now(),
        "files": {rel: file_digest(out / rel) for rel in sorted(files)},
    }
    _dump_json(out / MANIFEST, manifest)
    return manifest


def verify_manifest(directory) -> dict:
    """Load ``manifest.json`` from ``directory`` and recheck every digest."""
    directory = Path(directory)
    path = directory / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"no {MANIFEST} in {directory}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
        files = manifest["files"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise IntegrityError(f"{path}: unreadable manifest ({exc})") from exc
    for rel, digest in files.items():
        target = directory / rel
        if not target.is_file():
            raise IntegrityError(f"{target}: listed in manifest but missing")
        if file_digest(target) != digest:
            raise IntegrityError(f"{target}: content digest does not match manifest")
    return manifest


# -- commands ------------------------------------------------------------

def _write_benchmark(out: Path, cfg: ExperimentConfig, prep, prefix: str = "") -> list:
    spec = prep.bench.spec
    dims = (spec.feature_dim, spec.task_type_count, spec.expert_count, spec.class_count, spec.task_type_count)
    write_model(out / prefix / MODEL_FILE, prep.bank, prep.router)
    write_reference_set(out / prefix / REFSET_FILE, prep.refset, spec.class_count, spec.task_type_count)
    write_samples(out / prefix / TEST_FILE, prep.test_split, *dims)
    return [f"{prefix}{MODEL_FILE}", f"{prefix}{REFSET_FILE}", f"{prefix}{TEST_FILE}"]


def cmd_generate(cfg: ExperimentConfig) -> int:
    started = _now()
    out = Path(cfg.output_dir)
    prep = prepare(cfg.bench)
    files = _write_benchmark(out, cfg, prep)
    write_manifest(out, "generate", cfg, files, started)
    print(f"wrote benchmark to {out}")
    return EXIT_OK


def _load_benchmark(directory):
    directory = Path(directory)
    verify_manifest(directory)
    bank, router = read_model(directory / MODEL_FILE)
    if router is None:
        raise RecordFormatError(f"{directory / MODEL_FILE}: no router record")
    refset = read_reference_set(directory / REFSET_FILE, bank)
    test_split = read_samples(directory / TEST_FILE)
    return bank, router, refset, test_split


def _run_strategy(spec, bench, cfg, out: Path, threads: int) -> tuple:
    bank, router, refset, test_split = bench
    result = evaluate(bank, router, refset, test_split, spec,
                      retain_trajectories=cfg.retain_trajectories, threads=threads)
    name = _safe_name(spec.name)
    doc = summary(result)
    files = []
    if cfg.per_step_transitions:
        doc["transitions_per_step"] = transitions(result, per_step=True).per_step
    _dump_json(out / "results" / f"{name}.summary.json", doc)
    files.append(f"results/{name}.summary.json")
    write_jsonl(out / "results" / f"{name}.samples.jsonl", {"kind": "outcomes", "strategy": spec.name},
                (o.to_record(spec.name) for o in result.outcomes))
    files.append(f"results/{name}.samples.jsonl")
    if cfg.retain_trajectories:
        recs = (r for o in result.outcomes for r in o.trajectory.to_records(o.sample_id))
        write_jsonl(out / "results" / f"{name}.trajectories.jsonl",
                    {"kind": "trajectories", "strategy": spec.name}, recs)
        files.append(f"results/{name}.trajectories.jsonl")
    row = {"strategy": spec.name, "kind": spec.kind, "accuracy": result.accuracy,
           "base_accuracy": result.base_accuracy, "cost": doc["cost"], "error": None}
    return row, files


def _comparison(rows) -> list:
    ok = [r for r in rows if r.get("error") is None]
    failed = [r for r in rows if r.get("error") is not None]
    ok.sort(key=lambda r: (-r["accuracy"], r["strategy"]))
    return ok + failed


def cmd_run(cfg: ExperimentConfig, threads: int) -> int:
    started = _now()
    out = Path(cfg.output_dir)
    files = []
    if cfg.benchmark_dir is not None:
        bench = _load_benchmark(cfg.benchmark_dir)
    else:
        prep = prepare(cfg.bench)
        files += _write_benchmark(out, cfg, prep, prefix="benchmark/")
        bench = (prep.bank, prep.router, prep.refset, prep.test_split)

    rows = []
    failures = 0
    for spec in cfg.strategies:
        try:
            row, produced = _run_strategy(spec, bench, cfg, out, threads)
            files += produced
        except (InvalidInputError, ArithmeticError, LookupError, ValueError) as exc:
            failures += 1
            row = {"strategy": spec.name, "kind": spec.kind, "accuracy": None,
                   "base_accuracy": None, "cost": None, "error": f"{type(exc).__name__}: {exc}"}
            print(f"strategy {spec.name!r} failed: {row['error']}", file=sys.stderr)
        rows.append(row)

    by_name = {s.name: s for s in cfg.strategies}
    for sw in cfg.sweeps:
        rel = f"sweeps/{_safe_name(sw.strategy)}.{sw.axis}.json"
        try:
            table = sweep(sw.axis, sw.values, by_name[sw.strategy], *bench, threads=threads)
            doc = table.to_dict()
        except (InvalidInputError, ArithmeticError, LookupError, ValueError) as exc:
            failures += 1
            doc = {"axis": sw.axis, "error": f"{type(exc).__name__}: {exc}"}
            print(f"sweep {sw.strategy}.{sw.axis} failed: {doc['error']}", file=sys.stderr)
        _dump_json(out / rel, doc)
        files.append(rel)

    _dump_json(out / "comparison.json", {"rows": _comparison(rows)})
    files.append("comparison.json")
    write_manifest(out, "run", cfg, files, started)
    _print_table(_comparison(rows))
    return EXIT_RUNTIME if failures else EXIT_OK


def _print_table(rows) -> None:
    print(f"{'strategy':<24} {'accuracy':>9} {'base':>9}")
    for r in rows:
        if r.get("error") is not None:
            print(f"{r['strategy']:<24} {'failed':>9}  {r['error']}")
        else:
            print(f"{r['strategy']:<24} {100 * r['accuracy']:>8.2f}% {100 * r['base_accuracy']:>8.2f}%")


def cmd_report(results_dirs, out=None) -> int:
    rows = []
    for d in results_dirs:
        verify_manifest(d)
        for path in sorted(Path(d).glob("results/*.summary.json")):
            doc = json.loads(path.read_text(encoding="utf-8"))
            rows.append({
                "source": str(d),
                "strategy": doc["strategy"]["name"],
                "kind": doc["strategy"]["kind"],
                "accuracy": doc["accuracy"]["final"],
                "base_accuracy": doc["accuracy"]["base"],
                "cost": doc["cost"],
                "error": None,
            })
    if not rows:
        raise FileNotFoundError("no strategy summaries found in " + ", ".join(map(str, results_dirs)))
    table = _comparison(rows)
    _print_table(table)
    if out is not None:
        _dump_json(Path(out), {"rows": table})
    return EXIT_OK


# -- argument handling ---------------------------------------------------

def _threads_default():
    raw = os.environ.get("RERT_THREADS")
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"RERT_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"RERT_THREADS must be a positive integer, got {raw!r}")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="reroute", description="Test-time re-routing experiments on a synthetic mixture of experts.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--threads", type=int, help="worker threads (default: $RERT_THREADS or 1)")
        p.add_argument("--retain-trajectories", action=argparse.BooleanOptionalAction, default=None,
                       help="keep per-step trajectories in the outputs")

    common(sub.add_parser("generate", help="write model, reference set and test split"))
    run = sub.add_parser("run", help="apply every configured strategy and sweep")
    common(run)
    run.add_argument("--replay", metavar="MANIFEST", help="rerun exactly the config stored in a manifest")
    rep = sub.add_parser("report", help="merge and rank result summaries")
    rep.add_argument("results_dir", nargs="+")
    rep.add_argument("--out", help="also write the merged table as JSON")
    return parser


def _resolve_config(args) -> ExperimentConfig:
    overrides = {"seed": args.seed, "output_dir": args.out,
                 "retain_trajectories": args.retain_trajectories}
    if getattr(args, "replay", None):
        if args.config:
            raise ConfigError("--replay and --config are mutually exclusive")
        manifest = json.loads(Path(args.replay).read_text(encoding="utf-8"))
        if manifest.get("artifact_version") != __version__:
            print(f"warning: manifest written by version {manifest.get('artifact_version')}, "
                  f"running {__version__}", file=sys.stderr)
        cfg = config_from_dict(manifest["config"], overrides)
        if cfg.digest() != manifest["config_digest"] and args.seed is None and args.retain_trajectories is None:
            raise IntegrityError(f"{args.replay}: config does not match its recorded digest")
        return cfg
    if args.config:
        return load_config(args.config, overrides)
    return parse_config("", "<defaults>", overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.results_dir, args.out)
        cfg = _resolve_config(args)
        threads = args.threads if args.threads is not None else _threads_default()
        if threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.command == "generate":
            return cmd_generate(cfg)
        return cmd_run(cfg, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (OSError, InvalidInputError, RecordFormatError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
