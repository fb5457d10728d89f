"""Command line: ``aflsim run | sweep | compare | verify``.

Exit codes: 0 success, 2 configuration or usage error, 3 divergence,
4 failed verification.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import metrics, theory
from .config import ConfigFileError, RunManifest, load_config, parse_assignments
from .local import DivergenceError
from .orchestrator import ConfigError, ExperimentConfig, run

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_VERIFY = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _parse_list(text: str, kind, flag: str) -> list:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise UsageError(f"{flag} needs at least one value")
    try:
        return [kind(t) for t in items]
    except ValueError:
        raise UsageError(f"{flag}: cannot parse {text!r}") from None


def _overrides(args) -> dict:
    values = parse_assignments(args.set or [], "--set", numbered=False)
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        values["mode"] = args.mode
    return values


def _write_run(config: ExperimentConfig, out: Path, render: bool = False) -> list[Path]:
    trace = run(config)
    log = metrics.MetricsLog.from_trace(trace)
    files = [metrics.export_metrics(log, out, "csv"), metrics.export_metrics(log, out, "json")]
    files += metrics.write_plot_data(log, out / "plots")
    if render:
        files += metrics.render_svg(log, out / "plots")
    return files


def _write_manifest(manifest: RunManifest, out: Path, files: list[Path]) -> None:
    manifest.finish(files, out)
    (out / "manifest.json").write_text(json.dumps(asdict(manifest), indent=1) + "\n")


def _run_job(job):
    config, out = job
    return _write_run(config, out)


def _run_many(jobs: list[tuple[ExperimentConfig, Path]]) -> list[Path]:
    workers = _workers()
    if workers > 1 and len(jobs) > 1:
        # the client-level pool would oversubscribe inside worker processes
        env = os.environ.get("AFL_SIM_THREADS")
        os.environ["AFL_SIM_THREADS"] = "1"
        try:
            with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
                results = list(pool.map(_run_job, jobs))
        finally:
            if env is None:
                os.environ.pop("AFL_SIM_THREADS", None)
            else:
                os.environ["AFL_SIM_THREADS"] = env
    else:
        results = [_run_job(job) for job in jobs]
    return [f for files in results for f in files]


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("AFL_SIM_THREADS", "1")))
    except ValueError:
        return 1


def cmd_run(config_path: Optional[str], overrides: dict, out: str, render: bool = False) -> int:
    config = load_config(config_path, overrides)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest.begin(config, out_dir, [config.seed], "run")
    files = _write_run(config, out_dir, render)
    _write_manifest(manifest, out_dir, files)
    print(f"wrote {len(files)} files to {out_dir}")
    return EXIT_OK


def _fraction_tag(f: float) -> str:
    return f"fraction_{f:g}"


def cmd_sweep(config_path: Optional[str], overrides: dict, fractions: Sequence[float],
              seeds: Sequence[int], out: str) -> int:
    if not fractions or not seeds:
        raise UsageError("sweep needs non-empty --fractions and --seeds")
    base = load_config(config_path, overrides)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for f in fractions:
        for s in seeds:
            try:
                cfg = base.replace(fraction=f, seed=s)
            except ConfigError as err:
                raise ConfigFileError(err.field, str(err).split(": ", 1)[-1], "--fractions") from None
            jobs.append((cfg, out_dir / _fraction_tag(f) / f"seed_{s}"))
    manifest = RunManifest.begin(base, out_dir, list(seeds), "sweep")
    files = _run_many(jobs)
    aggregate = out_dir / "aggregate.csv"
    with aggregate.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("fraction", "round", "mean_server_loss"))
        for f in fractions:
            curves = [
                metrics.load_metrics(out_dir / _fraction_tag(f) / f"seed_{s}" / "metrics.csv").server_losses
                for s in seeds
            ]
            mean = np.mean(curves, axis=0)
            for k, v in enumerate(mean):
                writer.writerow((f"{f:g}", k, format(float(v), ".17g")))
    _write_manifest(manifest, out_dir, files + [aggregate])
    print(f"{len(jobs)} runs; aggregate in {aggregate}")
    return EXIT_OK


def cmd_compare(config_path: Optional[str], overrides: dict, seeds: Sequence[int], out: str) -> int:
    if not seeds:
        raise UsageError("compare needs non-empty --seeds")
    base = load_config(config_path, overrides)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for mode in ("afl", "sync"):
        for s in seeds:
            jobs.append((base.replace(mode=mode, seed=s), out_dir / mode / f"seed_{s}"))
    manifest = RunManifest.begin(base, out_dir, list(seeds), "compare")
    files = _run_many(jobs)
    means = {}
    for mode in ("afl", "sync"):
        curves = [metrics.load_metrics(out_dir / mode / f"seed_{s}" / "metrics.csv").server_losses for s in seeds]
        means[mode] = np.mean(curves, axis=0)
    table = out_dir / "compare.csv"
    with table.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("round", "afl_mean", "sync_mean", "difference"))
        for k, (a, b) in enumerate(zip(means["afl"], means["sync"])):
            writer.writerow((k, format(float(a), ".17g"), format(float(b), ".17g"), format(float(a - b), ".17g")))
    _write_manifest(manifest, out_dir, files + [table])
    print(f"{2 * len(seeds)} runs; curves in {table}")
    return EXIT_OK


def cmd_verify(selector: str, out: str, seed: int = 0) -> int:
    if selector not in theory.SUITES + ("all",):
        raise UsageError(f"unknown suite {selector!r}; choose from {', '.join(theory.SUITES + ('all',))}")
    reports = theory.run_suite(selector, seed)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = [r.to_dict() for r in reports]
    (out_dir / f"verify_{selector}.json").write_text(
        json.dumps(payload, indent=1, default=theory._jsonable) + "\n"
    )
    failed = [r for r in reports if not r.passed]
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: empirical={r.empirical:.6g} analytic={r.analytic:.6g} ({r.notes})")
    if failed:
        print(f"{len(failed)} of {len(reports)} checks failed: " + ", ".join(sorted({r.name for r in failed})),
              file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aflsim", description="Asynchronous federated learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seeds: bool):
        p.add_argument("--config", help="key=value experiment file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
        p.add_argument("--out", required=True, help="output directory")
        if seeds:
            p.add_argument("--seeds", required=True, help="comma-separated seed list")

    p = sub.add_parser("run", help="one experiment")
    common(p, seeds=False)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=("afl", "sync"))
    p.add_argument("--render", action="store_true", help="also draw SVG plots (needs matplotlib)")

    p = sub.add_parser("sweep", help="client-fraction x seed grid")
    common(p, seeds=True)
    p.add_argument("--fractions", required=True, help="comma-separated client fractions")
    p.add_argument("--mode", choices=("afl", "sync"))

    p = sub.add_parser("compare", help="paired AFL and synchronous runs")
    common(p, seeds=True)

    p = sub.add_parser("verify", help="numerical checks of the theory")
    p.add_argument("suite", help=", ".join(theory.SUITES + ("all",)))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        if args.command == "verify":
            return cmd_verify(args.suite, args.out, args.seed)
        overrides = _overrides(args)
        if args.command == "run":
            return cmd_run(args.config, overrides, args.out, args.render)
        seeds = _parse_list(args.seeds, int, "--seeds")
        if args.command == "sweep":
            return cmd_sweep(args.config, overrides, _parse_list(args.fractions, float, "--fractions"), seeds,
                             args.out)
        return cmd_compare(args.config, overrides, seeds, args.out)
    except UsageError as err:
        print(f"aflsim: {err}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as err:
        print(f"aflsim: config error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as err:
        print(f"aflsim: diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
