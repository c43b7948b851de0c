"""Command-line front end: fedsel run | sweep | study | report.

Exit codes: 0 success, 2 configuration error, 3 numeric divergence. Log
verbosity comes from the FEDSEL_LOG environment variable (DEBUG/INFO/...).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__, reporting
from .config import (
    canonical_json,
    config_digest,
    load_json,
    parse_run_config,
    parse_study_config,
    parse_sweep_config,
    run_config_to_dict,
    study_config_to_dict,
)
from .errors import ConfigError, FedselError, NumericDivergenceError
from .federation import ExperimentConfig, run_experiment
from .study import run_study

log = logging.getLogger("fedsel.cli")


def _shift_seeds(seeds, offset: int):
    return tuple(s + offset for s in seeds)


def _execute_run(cfg: ExperimentConfig, outdir: Path) -> dict:
    """Run one experiment and write metrics/rounds/manifest into outdir."""
    outdir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    result = run_experiment(cfg)
    duration = time.perf_counter() - started

    metrics_path = outdir / "metrics.csv"
    rounds_path = outdir / "rounds.jsonl"
    reporting.write_metrics_csv(result, metrics_path)
    reporting.write_rounds_jsonl(result, rounds_path)
    snapshot = run_config_to_dict(cfg)
    reporting.write_manifest(
        outdir / "manifest.json",
        config_hash=config_digest(snapshot),
        config=snapshot,
        artifacts={"metrics_csv": metrics_path.name, "rounds_jsonl": rounds_path.name},
        tool_version=__version__,
        duration_sec=duration,
    )
    final = result.aggregate[-1]
    return {
        "rows": _aggregate_rows_for_sweep(cfg, result),
        "final_test_accuracy": final.test_accuracy_mean,
        "duration_sec": duration,
    }


def _aggregate_rows_for_sweep(cfg: ExperimentConfig, result) -> list[dict]:
    queue_len = cfg.policy.queue_len if cfg.policy.name == "pncs" else None
    rows = []
    for agg in result.aggregate:
        rows.append(
            {
                "policy": cfg.policy.name,
                "shards_per_client": cfg.shards_per_client if cfg.partition_mode == "shard" else None,
                "alpha": cfg.alpha if cfg.partition_mode == "dirichlet" else None,
                "queue_len": queue_len,
                "round": agg.round_index,
                "seeds": len(cfg.seeds),
                "test_accuracy_mean": agg.test_accuracy_mean,
                "test_accuracy_std": agg.test_accuracy_std,
                "val_accuracy_mean": agg.val_accuracy_mean,
                "val_accuracy_std": agg.val_accuracy_std,
                "test_loss_mean": agg.test_loss_mean,
                "test_loss_std": agg.test_loss_std,
                "regret_mean": agg.regret_mean,
                "regret_std": agg.regret_std,
            }
        )
    return rows


def cmd_run(args) -> int:
    cfg = parse_run_config(load_json(args.config))
    if args.seed_offset:
        cfg = replace(cfg, seeds=_shift_seeds(cfg.seeds, args.seed_offset))
    summary = _execute_run(cfg, Path(args.out))
    print(
        f"run complete: {len(cfg.seeds)} seed(s), {cfg.rounds} rounds, "
        f"final test accuracy {summary['final_test_accuracy']:.4f} "
        f"({summary['duration_sec']:.1f}s) -> {args.out}"
    )
    return 0


def _sweep_combos(base: ExperimentConfig, axes: dict) -> list[tuple[str, ExperimentConfig]]:
    combos = []
    for policy in axes["policy"]:
        for shards in axes["shards_per_client"]:
            for alpha in axes["alpha"]:
                for queue in axes["queue_len"]:
                    run_policy = policy
                    if queue is not None and policy.name == "pncs":
                        run_policy = replace(policy, queue_len=queue)
                    if shards is not None:
                        mode, run_shards, run_alpha = "shard", shards, None
                    elif alpha is not None:
                        mode, run_shards, run_alpha = "dirichlet", None, alpha
                    else:
                        mode = base.partition_mode
                        run_shards, run_alpha = base.shards_per_client, base.alpha
                    for seed in axes["seeds"]:
                        cfg = replace(
                            base,
                            policy=run_policy,
                            partition_mode=mode,
                            shards_per_client=run_shards,
                            alpha=run_alpha,
                            seeds=(seed,),
                        )
                        slug_bits = [run_policy.name]
                        if run_shards is not None:
                            slug_bits.append(f"S{run_shards}")
                        if run_alpha is not None:
                            slug_bits.append(f"a{run_alpha}")
                        if queue is not None and run_policy.name == "pncs":
                            slug_bits.append(f"L{queue}")
                        slug_bits.append(f"seed{seed}")
                        combos.append(("_".join(slug_bits), cfg))
    return combos


def _sweep_worker(task: tuple[str, ExperimentConfig, str]) -> tuple[str, list[dict]]:
    slug, cfg, outdir = task
    summary = _execute_run(cfg, Path(outdir))
    return slug, summary["rows"]


def cmd_sweep(args) -> int:
    document = load_json(args.config)
    base, axes = parse_sweep_config(document)
    if args.seed_offset:
        axes["seeds"] = [s + args.seed_offset for s in axes["seeds"]]
    outdir = Path(args.out)
    runs_dir = outdir / "runs"
    combos = _sweep_combos(base, axes)
    log.info("sweep: %d runs with %d job(s)", len(combos), args.jobs)

    started = time.perf_counter()
    tasks = [(slug, cfg, str(runs_dir / slug)) for slug, cfg in combos]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_sweep_worker, tasks))
    else:
        outcomes = [_sweep_worker(task) for task in tasks]
    duration = time.perf_counter() - started

    # mean/std across the seed runs of each (policy, heterogeneity, queue, round)
    grouped: dict[tuple, list[dict]] = {}
    for _, rows in outcomes:
        for row in rows:
            key = (
                row["policy"],
                row["shards_per_client"],
                row["alpha"],
                row["queue_len"],
                row["round"],
            )
            grouped.setdefault(key, []).append(row)
    aggregate_rows = []
    for key in sorted(grouped, key=lambda k: tuple(str(x) for x in k)):
        rows = grouped[key]
        policy, shards, alpha, queue, round_index = key
        merged = {
            "policy": policy,
            "shards_per_client": shards,
            "alpha": alpha,
            "queue_len": queue,
            "round": round_index,
            "seeds": sum(r["seeds"] for r in rows),
        }
        for metric in ("test_accuracy", "val_accuracy", "test_loss"):
            values = [r[f"{metric}_mean"] for r in rows]
            merged[f"{metric}_mean"] = _mean(values)
            merged[f"{metric}_std"] = _std(values)
        regrets = [r["regret_mean"] for r in rows if r["regret_mean"] is not None]
        merged["regret_mean"] = _mean(regrets) if len(regrets) == len(rows) else None
        merged["regret_std"] = _std(regrets) if len(regrets) == len(rows) else None
        aggregate_rows.append(merged)

    outdir.mkdir(parents=True, exist_ok=True)
    reporting.write_aggregate_csv(aggregate_rows, outdir / "aggregate.csv")
    reporting.write_manifest(
        outdir / "manifest.json",
        config_hash=config_digest(document),
        config=document,
        artifacts={
            "aggregate_csv": "aggregate.csv",
            "runs": sorted(slug for slug, _ in outcomes),
        },
        tool_version=__version__,
        duration_sec=duration,
    )
    print(f"sweep complete: {len(combos)} runs -> {outdir} ({duration:.1f}s)")
    return 0


def _mean(values) -> float:
    return float(sum(values) / len(values))


def _std(values) -> float:
    if len(values) < 2:
        return 0.0
    mu = _mean(values)
    return float((sum((v - mu) ** 2 for v in values) / (len(values) - 1)) ** 0.5)


def cmd_study(args) -> int:
    cfg = parse_study_config(load_json(args.config))
    if args.seed_offset:
        cfg = replace(cfg, seeds=_shift_seeds(cfg.seeds, args.seed_offset))
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    report = run_study(cfg)
    duration = time.perf_counter() - started

    report_path = outdir / "study_report.json"
    report_path.write_text(canonical_json(report.to_json_dict()) + "\n")
    table = [
        {
            "heterogeneity": row.heterogeneity,
            "round_bucket": row.bucket,
            "feature": row.feature,
            "mean_relative_loss": row.mean_relative_loss,
            "conditions": row.conditions,
        }
        for row in report.buckets
    ]
    reporting.write_table_csv(table, outdir / "relative_loss.csv")
    snapshot = study_config_to_dict(cfg)
    reporting.write_manifest(
        outdir / "manifest.json",
        config_hash=config_digest(snapshot),
        config=snapshot,
        artifacts={"study_report": "study_report.json", "relative_loss_csv": "relative_loss.csv"},
        tool_version=__version__,
        duration_sec=duration,
    )
    top = ", ".join(report.fit.ranking[:3])
    print(
        f"study complete: {report.samples} pair samples, converged={report.fit.converged}, "
        f"top features: {top} -> {outdir}"
    )
    return 0


def cmd_report(args) -> int:
    paths = []
    for entry in args.inputs:
        path = Path(entry)
        paths.append(path / "aggregate.csv" if path.is_dir() else path)
    rows = reporting.merge_aggregates(paths)
    if not rows:
        raise ConfigError("no aggregate rows found in the given inputs")
    max_round = max(r["round"] for r in rows)
    if args.at_rounds:
        at_rounds = [int(tok) for tok in args.at_rounds.split(",") if tok.strip()]
    else:
        at_rounds = sorted({max(1, max_round // 4), max(1, max_round // 2), max_round})

    accuracy_table = reporting.accuracy_at_rounds(rows, at_rounds)
    target_table = reporting.rounds_to_target(rows, args.target_accuracy)

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    reporting.write_table_csv(rows, outdir / "merged_aggregate.csv")
    reporting.write_table_csv(accuracy_table, outdir / "accuracy_at_rounds.csv")
    reporting.write_table_csv(target_table, outdir / "rounds_to_target.csv")
    figures = reporting.render_figures(rows, outdir)

    print("accuracy at rounds:")
    print(reporting.format_table(accuracy_table))
    print()
    print(f"rounds to reach test accuracy {args.target_accuracy}:")
    print(reporting.format_table(target_table))
    print()
    print(f"wrote {len(figures)} figure(s) and 3 tables -> {outdir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsel",
        description="Deterministic federated-learning simulator with diversity-driven client selection.",
    )
    parser.add_argument("--version", action="version", version=f"fedsel {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one experiment config")
    run.add_argument("--config", required=True, help="path to a run config JSON")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed-offset", type=int, default=0, help="shift all seeds by this amount")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run a Cartesian product of configs")
    sweep.add_argument("--config", required=True, help="path to a sweep config JSON")
    sweep.add_argument("--out", required=True, help="output directory")
    sweep.add_argument("--jobs", type=int, default=1, help="parallel runs (default 1)")
    sweep.add_argument("--seed-offset", type=int, default=0)
    sweep.set_defaults(func=cmd_sweep)

    study = sub.add_parser("study", help="run the pairwise feature study")
    study.add_argument("--config", required=True, help="path to a study config JSON")
    study.add_argument("--out", required=True, help="output directory")
    study.add_argument("--seed-offset", type=int, default=0)
    study.set_defaults(func=cmd_study)

    report = sub.add_parser("report", help="merge sweep aggregates into comparison tables")
    report.add_argument("inputs", nargs="+", help="sweep output dirs or aggregate.csv files")
    report.add_argument("--out", required=True, help="output directory")
    report.add_argument("--target-accuracy", type=float, default=0.5)
    report.add_argument("--at-rounds", default="", help="comma-separated round indices")
    report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("FEDSEL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericDivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return 3
    except FedselError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
