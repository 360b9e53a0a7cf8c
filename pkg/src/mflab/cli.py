"""Command-line entry points: run, replay, check, report.

    mflab run <config.yaml> [--output-dir DIR] [--threads N]
    mflab replay <manifest.json> [--threads N]
    mflab check <config.yaml>
    mflab report <run_dir>

``run`` executes the declared experiments in order and writes per-experiment
CSV/JSON plus a manifest recording the config hash, master seed, package
version, wall clock and a SHA-256 for every output file.  ``replay`` re-runs
from a manifest and asserts that every output hash matches (outputs are
byte-deterministic for any ``--threads`` value).  ``check`` validates a
configuration without running.  ``report`` renders figures from a finished
run directory next to the delimited output.

Exit codes: 0 success; 64 configuration error; 65 hard-assertion failure;
70 simulation blow-up.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from mflab._threads import pin_blas_threads, set_worker_count

EXIT_OK = 0
EXIT_CONFIG = 64
EXIT_ASSERTION = 65
EXIT_BLOWUP = 70


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mflab",
        description="controlled porous-media particle systems and their mean-field limits",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the experiments declared in a config")
    p_run.add_argument("config", help="path to the YAML run configuration")
    p_run.add_argument("--output-dir", default=None, help="override the configured output dir")
    p_run.add_argument("--threads", type=int, default=1, help="worker cap for chunked kernels")

    p_replay = sub.add_parser("replay", help="re-run from a manifest and compare hashes")
    p_replay.add_argument("manifest", help="path to a manifest.json from a previous run")
    p_replay.add_argument("--threads", type=int, default=1)

    p_check = sub.add_parser("check", help="validate a config without running")
    p_check.add_argument("config")

    p_report = sub.add_parser("report", help="render figures from a finished run directory")
    p_report.add_argument("run_dir")
    return parser


def _resolve_output_dir(rc, override: str | None) -> Path:
    if override:
        return Path(override)
    env = os.environ.get("MFLAB_OUTPUT_DIR")
    if env:
        return Path(env)
    return Path(rc.output_dir)


def _execute(rc, outdir: Path, threads: int) -> tuple[int, dict]:
    """Run all experiments; returns (exit code, manifest dict)."""
    from mflab import __version__
    from mflab.experiments import run_experiment
    from mflab.particles import BlowUpError
    from mflab.search import GrowthBoundError
    from mflab.serialize import file_sha256, write_json

    set_worker_count(threads)
    outdir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    outcomes = []
    status = EXIT_OK
    for entry in rc.experiments:
        name = entry.get("name", entry["kind"])
        try:
            outcome = run_experiment(rc, entry, outdir)
        except BlowUpError as exc:
            print(f"[mflab] blow-up in experiment {name!r}: {exc}", file=sys.stderr)
            status = EXIT_BLOWUP
            break
        except GrowthBoundError as exc:
            print(f"[mflab] assertion failed in experiment {name!r}: {exc}", file=sys.stderr)
            status = EXIT_ASSERTION
            break
        outcomes.append(outcome)
        flag = "pass" if outcome.passed else "FAIL"
        print(f"[mflab] experiment {name}: {flag}")
        if not outcome.passed:
            status = EXIT_ASSERTION

    manifest = {
        "tool_version": __version__,
        "config_path": str(Path(rc.path).resolve()),
        "config_hash": rc.config_hash(),
        "master_seed": rc.master_seed,
        "threads": threads,
        "wall_clock_s": time.time() - started,
        "experiments": [o.to_dict() for o in outcomes],
        "outputs": {},
    }
    for outcome in outcomes:
        for rel in outcome.files:
            manifest["outputs"][rel] = file_sha256(outdir / rel)
    write_json(outdir / "manifest.json", manifest)
    return status, manifest


def cmd_run(args) -> int:
    from mflab.config import ConfigError, load_config
    from mflab.spaces import ConfigurationError

    try:
        rc = load_config(args.config)
    except (ConfigError, ConfigurationError) as exc:
        print(f"[mflab] config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    outdir = _resolve_output_dir(rc, args.output_dir)
    status, _ = _execute(rc, outdir, args.threads)
    return status


def cmd_replay(args) -> int:
    from mflab.config import ConfigError, load_config
    from mflab.spaces import ConfigurationError

    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        print(f"[mflab] manifest not found: {manifest_path}", file=sys.stderr)
        return EXIT_CONFIG
    recorded = json.loads(manifest_path.read_text(encoding="utf-8"))
    try:
        rc = load_config(recorded["config_path"])
    except (ConfigError, ConfigurationError) as exc:
        print(f"[mflab] config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if rc.config_hash() != recorded["config_hash"]:
        print(
            "[mflab] replay rejected: config hash mismatch "
            f"(recorded {recorded['config_hash'][:12]}, "
            f"current {rc.config_hash()[:12]}); the config was edited",
            file=sys.stderr,
        )
        return EXIT_CONFIG

    replay_dir = manifest_path.parent / "replay"
    status, manifest = _execute(rc, replay_dir, args.threads)
    mismatches = []
    for rel, digest in recorded["outputs"].items():
        fresh = manifest["outputs"].get(rel)
        if fresh != digest:
            mismatches.append((rel, digest, fresh))
    if mismatches:
        print("[mflab] replay hash mismatches:", file=sys.stderr)
        for rel, want, got in mismatches:
            print(f"  {rel}: recorded {want[:12]} got {str(got)[:12]}", file=sys.stderr)
        return EXIT_ASSERTION
    print(f"[mflab] replay verified: {len(recorded['outputs'])} outputs byte-identical")
    return status


def cmd_check(args) -> int:
    from mflab.config import ConfigError, load_config
    from mflab.spaces import ConfigurationError

    try:
        rc = load_config(args.config)
    except (ConfigError, ConfigurationError) as exc:
        print(f"[mflab] config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"[mflab] config ok: hash {rc.config_hash()[:16]}, "
          f"{len(rc.experiments)} experiments declared")
    return EXIT_OK


def cmd_report(args) -> int:
    from mflab.reporting import render_report

    run_dir = Path(args.run_dir)
    if not (run_dir / "manifest.json").exists():
        print(f"[mflab] no manifest.json in {run_dir}", file=sys.stderr)
        return EXIT_CONFIG
    figures = render_report(run_dir)
    for fig in figures:
        print(f"[mflab] wrote {fig}")
    return EXIT_OK


def main(argv: list | None = None) -> int:
    pin_blas_threads()
    args = _build_parser().parse_args(argv)
    handler = {
        "run": cmd_run,
        "replay": cmd_replay,
        "check": cmd_check,
        "report": cmd_report,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
