"""Benchmark command line: run replicate sweeps, measure parallel speed-up,
aggregate results.

Exit codes: 0 success, 2 configuration error, 3 runtime failure (partial
outputs are preserved).  Worker count falls back to the BLACKDROPS_WORKERS
environment variable when --workers is not given.
"""

from __future__ import annotations

import os

# Keep linear algebra single-threaded: the worker pool is the only
# parallelism, which keeps speed-up measurements and determinism honest.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import csv
import json
import sys
import time
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import click
import numpy as np

from . import config as config_mod
from .errors import ConfigError
from .learner import ExperimentRecord, run_experiment
from .parallel import resolve_workers

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _replicate_seed(master: int, replicate: int) -> int:
    ss = np.random.SeedSequence(master, spawn_key=(1000 + replicate,))
    return int(ss.generate_state(1, np.uint32)[0])


def nearest_rank_percentile(values, pct: float) -> float:
    """Nearest-rank percentile: smallest value with rank >= ceil(p/100 * n)."""
    ordered = sorted(values)
    if not ordered:
        raise ValueError("no values")
    rank = max(1, int(np.ceil(pct / 100.0 * len(ordered))))
    return float(ordered[rank - 1])


def format_rate(successes: int, total: int) -> str:
    """Percentage with one decimal, round half up: 2/3 -> '66.7%'."""
    pct = Decimal(successes * 100) / Decimal(total)
    return f"{pct.quantize(Decimal('0.1'), rounding=ROUND_HALF_UP)}%"


def aggregate_records(records: list[ExperimentRecord], n_episodes: int) -> dict:
    """Median and quartiles of the best-true-reward curve, plus success stats."""
    curves = [r.best_reward_curve(n_episodes) for r in records]
    per_episode = []
    for ep in range(n_episodes):
        vals = [c[ep] for c in curves]
        per_episode.append(
            {
                "episode": ep + 1,
                "median": nearest_rank_percentile(vals, 50),
                "q25": nearest_rank_percentile(vals, 25),
                "q75": nearest_rank_percentile(vals, 75),
            }
        )
    solved = [r.solved_at for r in records if r.solved_at is not None]
    return {
        "episodes": per_episode,
        "replicates": len(records),
        "successes": len(solved),
        "success_rate": format_rate(len(solved), len(records)),
        "episodes_to_success": solved,
        "median_episodes_to_success": (
            nearest_rank_percentile(solved, 50) if solved else None
        ),
        "total_opt_time": sum(r.total_opt_time() for r in records),
        "total_fit_time": sum(r.total_fit_time() for r in records),
    }


def write_manifest(out_dir: Path, manifest: dict):
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)


def run_replicates(sections, replicates: int, workers: int, seed: int, out_dir: Path,
                   label: str) -> dict:
    """Sequential replicate sweep (each replicate internally parallel)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    task = config_mod.build_task(sections)
    records = []
    paths = []
    seeds = []
    manifest = {
        "label": label,
        "task": task.name,
        "config": sections,
        "master_seed": seed,
        "workers": workers,
        "replicates": replicates,
        "replicate_seeds": seeds,
        "replicate_paths": paths,
        "aggregate": None,
    }
    try:
        for rep in range(replicates):
            rep_seed = _replicate_seed(seed, rep)
            seeds.append(rep_seed)
            cfg = config_mod.build_learner_config(sections, seed=rep_seed)
            rep_dir = out_dir / f"replicate_{rep:02d}"
            record = run_experiment(cfg, task, workers=workers, out_dir=rep_dir)
            records.append(record)
            paths.append(str(rep_dir.relative_to(out_dir)))
            status = f"solved at episode {record.solved_at}" if record.solved_at else "unsolved"
            click.echo(f"replicate {rep}: {status} ({len(record.episodes)} episodes)")
            if record.aborted:
                raise RuntimeError(f"replicate {rep} aborted: {record.aborted}")
        manifest["aggregate"] = aggregate_records(records, cfg.max_episodes)
    finally:
        write_manifest(out_dir, manifest)  # partial manifest preserved on failure
    return manifest


@click.group()
def main():
    """Data-efficient model-based policy search benchmark harness."""


@main.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(), help="JSON config file")
@click.option("--replicates", default=1, show_default=True, type=int)
@click.option("--workers", default=None, type=int, help="parallel rollout workers (default: BLACKDROPS_WORKERS or 1)")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path(), help="output directory")
def run_cmd(config_path, replicates, workers, seed, out_dir):
    """Run a replicate sweep of one experiment configuration."""
    try:
        sections = config_mod.load_config_file(config_path)
        if replicates < 1:
            raise ConfigError("--replicates must be >= 1")
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        manifest = run_replicates(
            sections,
            replicates,
            resolve_workers(workers),
            seed,
            Path(out_dir),
            label=Path(config_path).stem,
        )
    except Exception as exc:
        click.echo(f"runtime error: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    agg = manifest["aggregate"]
    click.echo(
        f"done: {agg['successes']}/{agg['replicates']} solved "
        f"(success rate {agg['success_rate']})"
    )


@main.command("bench-speedup")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--workers", "workers_list", default="1,2,4,8", show_default=True,
              help="comma-separated worker counts; must include 1 and at least one other")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
def bench_speedup_cmd(config_path, workers_list, seed, out_dir):
    """Re-run one seeded experiment at several worker counts and compare
    policy-optimization wall time; results must be identical across counts."""
    try:
        sections = config_mod.load_config_file(config_path)
        try:
            counts = [int(w) for w in workers_list.split(",") if w.strip()]
        except ValueError as exc:
            raise ConfigError(f"--workers must be a comma-separated integer list: {exc}")
        if len(counts) < 2 or 1 not in counts or any(c < 1 for c in counts):
            raise ConfigError("--workers needs at least two counts including 1")
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)

    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    task = config_mod.build_task(sections)
    cfg = config_mod.build_learner_config(sections, seed=seed)
    rows = []
    reference_thetas = None
    try:
        for count in counts:
            t0 = time.perf_counter()
            record = run_experiment(cfg, task, workers=count)
            wall = time.perf_counter() - t0
            if record.aborted:
                raise RuntimeError(record.aborted)
            thetas = [e.theta for e in record.episodes]
            if reference_thetas is None:
                reference_thetas = thetas
            elif thetas != reference_thetas:
                raise RuntimeError(
                    f"optimization results diverged between 1 and {count} workers; "
                    "timings are not comparable"
                )
            rows.append(
                {
                    "workers": count,
                    "opt_time_s": record.total_opt_time(),
                    "fit_time_s": record.total_fit_time(),
                    "wall_time_s": wall,
                }
            )
            click.echo(f"workers={count}: optimization {rows[-1]['opt_time_s']:.2f}s")
        base = next(r["opt_time_s"] for r in rows if r["workers"] == 1)
        for r in rows:
            r["speedup"] = base / r["opt_time_s"] if r["opt_time_s"] > 0 else float("nan")
        with open(out_path / "speedup.csv", "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["workers", "opt_time_s", "fit_time_s", "wall_time_s", "speedup"]
            )
            writer.writeheader()
            writer.writerows(rows)
        with open(out_path / "speedup.json", "w") as fh:
            json.dump({"seed": seed, "rows": rows, "identical_results": True}, fh, indent=2)
    except Exception as exc:
        click.echo(f"runtime error: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    for r in rows:
        click.echo(f"workers={r['workers']}: speed-up {r['speedup']:.2f}x")


@main.command("report")
@click.argument("manifests", nargs=-1, required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
def report_cmd(manifests, out_dir):
    """Aggregate one or more run manifests into CSV summary tables."""
    out_path = Path(out_dir)
    try:
        loaded = []
        for m in manifests:
            path = Path(m)
            if path.is_dir():
                path = path / "manifest.json"
            if not path.exists():
                raise ConfigError(f"manifest not found: {path}")
            with open(path) as fh:
                data = json.load(fh)
            if not isinstance(data.get("aggregate"), dict):
                raise ConfigError(f"manifest {path} has no aggregate section")
            loaded.append(data)
    except (ConfigError, json.JSONDecodeError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        out_path.mkdir(parents=True, exist_ok=True)
        with open(out_path / "aggregate.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["treatment", "episode", "median", "q25", "q75"])
            for data in loaded:
                for row in data["aggregate"]["episodes"]:
                    writer.writerow(
                        [
                            data["label"],
                            row["episode"],
                            repr(row["median"]),
                            repr(row["q25"]),
                            repr(row["q75"]),
                        ]
                    )
        with open(out_path / "success_rates.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["treatment", "replicates", "successes", "success_rate"])
            for data in loaded:
                agg = data["aggregate"]
                writer.writerow(
                    [data["label"], agg["replicates"], agg["successes"], agg["success_rate"]]
                )
    except Exception as exc:
        click.echo(f"runtime error: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    click.echo(f"wrote {out_path / 'aggregate.csv'} and {out_path / 'success_rates.csv'}")


if __name__ == "__main__":
    main()
