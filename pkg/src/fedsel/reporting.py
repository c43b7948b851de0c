"""Artifact writers and report aggregation.

CSV is the machine contract (`# fedsel-csv v1` header line, full-precision
float repr, stable column order) so identical configs reproduce byte-identical
metric files. The report path also renders matplotlib PNGs next to the merged
tables for quick inspection.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .errors import ConfigError
from .federation import ExperimentResult

CSV_VERSION_LINE = "# fedsel-csv v1"

METRICS_COLUMNS = (
    "seed",
    "round",
    "train_loss",
    "val_loss",
    "val_accuracy",
    "test_loss",
    "test_accuracy",
    "selected",
    "subset_score",
    "regret",
    "bytes_summary",
    "bytes_full",
    "bytes_cumulative",
)

AGGREGATE_COLUMNS = (
    "policy",
    "shards_per_client",
    "alpha",
    "queue_len",
    "round",
    "seeds",
    "test_accuracy_mean",
    "test_accuracy_std",
    "val_accuracy_mean",
    "val_accuracy_std",
    "test_loss_mean",
    "test_loss_std",
    "regret_mean",
    "regret_std",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _open_versioned_csv(path: Path):
    fh = path.open("w", newline="")
    fh.write(CSV_VERSION_LINE + "\n")
    return fh, csv.writer(fh, lineterminator="\n")


def write_metrics_csv(result: ExperimentResult, path: Path) -> None:
    """One row per round per seed."""
    fh, writer = _open_versioned_csv(path)
    with fh:
        writer.writerow(METRICS_COLUMNS)
        for seed in sorted(result.per_seed):
            for m in result.per_seed[seed]:
                writer.writerow(
                    [
                        seed,
                        m.round_index,
                        _fmt(m.train_loss),
                        _fmt(m.val_loss),
                        _fmt(m.val_accuracy),
                        _fmt(m.test_loss),
                        _fmt(m.test_accuracy),
                        "|".join(str(c) for c in m.selected),
                        _fmt(m.subset_score),
                        _fmt(m.regret),
                        m.bytes_summary,
                        m.bytes_full,
                        m.bytes_cumulative,
                    ]
                )


def write_rounds_jsonl(result: ExperimentResult, path: Path) -> None:
    """One JSON record per round per seed, including selection diagnostics."""
    with path.open("w") as fh:
        for seed in sorted(result.per_seed):
            for m in result.per_seed[seed]:
                record = {
                    "seed": seed,
                    "round": m.round_index,
                    "train_loss": m.train_loss,
                    "val_loss": m.val_loss,
                    "val_accuracy": m.val_accuracy,
                    "test_loss": m.test_loss,
                    "test_accuracy": m.test_accuracy,
                    "selected": list(m.selected),
                    "subset_score": m.subset_score,
                    "regret": m.regret,
                    "bytes_summary": m.bytes_summary,
                    "bytes_full": m.bytes_full,
                    "bytes_cumulative": m.bytes_cumulative,
                    "diagnostics": m.diagnostics,
                }
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def write_manifest(path: Path, *, config_hash: str, config: dict, artifacts: dict,
                   tool_version: str, duration_sec: float) -> None:
    manifest = {
        "config_hash": config_hash,
        "config": config,
        "artifacts": artifacts,
        "tool_version": tool_version,
        "duration_sec": duration_sec,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def write_aggregate_csv(rows: list[dict], path: Path) -> None:
    fh, writer = _open_versioned_csv(path)
    with fh:
        writer.writerow(AGGREGATE_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row.get(col)) for col in AGGREGATE_COLUMNS])


def read_aggregate_csv(path: Path) -> list[dict]:
    """Parse an aggregate CSV back into typed row dicts."""
    if not path.exists():
        raise ConfigError(f"aggregate file not found: {path}")
    with path.open(newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != CSV_VERSION_LINE:
            raise ConfigError(f"{path}: unsupported CSV version line {first!r}")
        reader = csv.DictReader(fh)
        rows = []
        for raw in reader:
            row: dict = {}
            for key, value in raw.items():
                if value == "" or value is None:
                    row[key] = None
                elif key in ("policy",):
                    row[key] = value
                elif key in ("round", "seeds", "queue_len", "shards_per_client"):
                    row[key] = int(value)
                else:
                    row[key] = float(value)
            rows.append(row)
    return rows


def _series_label(row: dict) -> str:
    label = str(row["policy"])
    if row.get("queue_len") is not None:
        label += f" L={row['queue_len']}"
    return label


def _het_label(row: dict) -> str:
    if row.get("shards_per_client") is not None:
        return f"S={row['shards_per_client']}"
    if row.get("alpha") is not None:
        return f"alpha={row['alpha']}"
    return "all"


def merge_aggregates(paths: list[Path]) -> list[dict]:
    rows: list[dict] = []
    for path in paths:
        rows.extend(read_aggregate_csv(path))
    rows.sort(
        key=lambda r: (
            str(r["policy"]),
            str(r.get("shards_per_client")),
            str(r.get("alpha")),
            str(r.get("queue_len")),
            r["round"],
        )
    )
    return rows


def accuracy_at_rounds(rows: list[dict], at_rounds: list[int]) -> list[dict]:
    """One row per (policy, heterogeneity, queue) with accuracy at the asked
    rounds (missing rounds stay blank)."""
    by_series: dict[tuple, dict[int, float]] = {}
    for row in rows:
        key = (row["policy"], row.get("shards_per_client"), row.get("alpha"), row.get("queue_len"))
        by_series.setdefault(key, {})[row["round"]] = row["test_accuracy_mean"]
    table = []
    for (policy, shards, alpha, queue), series in sorted(
        by_series.items(), key=lambda kv: tuple(str(x) for x in kv[0])
    ):
        entry = {
            "policy": policy,
            "shards_per_client": shards,
            "alpha": alpha,
            "queue_len": queue,
        }
        for r in at_rounds:
            entry[f"accuracy_at_round_{r}"] = series.get(r)
        table.append(entry)
    return table


def rounds_to_target(rows: list[dict], target: float) -> list[dict]:
    """First round whose mean test accuracy reaches the target, per series."""
    by_series: dict[tuple, list[tuple[int, float]]] = {}
    for row in rows:
        key = (row["policy"], row.get("shards_per_client"), row.get("alpha"), row.get("queue_len"))
        by_series.setdefault(key, []).append((row["round"], row["test_accuracy_mean"]))
    table = []
    for (policy, shards, alpha, queue), series in sorted(
        by_series.items(), key=lambda kv: tuple(str(x) for x in kv[0])
    ):
        reached = None
        for round_index, acc in sorted(series):
            if acc >= target:
                reached = round_index
                break
        table.append(
            {
                "policy": policy,
                "shards_per_client": shards,
                "alpha": alpha,
                "queue_len": queue,
                "target_accuracy": target,
                "rounds_to_target": reached,
            }
        )
    return table


def write_table_csv(table: list[dict], path: Path) -> None:
    if not table:
        raise ConfigError("nothing to write: empty table")
    fh, writer = _open_versioned_csv(path)
    with fh:
        columns = list(table[0].keys())
        writer.writerow(columns)
        for row in table:
            writer.writerow([_fmt(row.get(col)) for col in columns])


def format_table(table: list[dict]) -> str:
    if not table:
        return "(empty)"
    columns = list(table[0].keys())
    cells = [[_fmt(row.get(col)) or "-" for col in columns] for row in table]
    widths = [max(len(col), *(len(row[i]) for row in cells)) for i, col in enumerate(columns)]
    lines = ["  ".join(col.ljust(w) for col, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in cells:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    return "\n".join(lines)


def render_figures(rows: list[dict], outdir: Path) -> list[Path]:
    """Accuracy-vs-round (and regret when present) PNGs, one per
    heterogeneity level."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    by_het: dict[str, list[dict]] = {}
    for row in rows:
        by_het.setdefault(_het_label(row), []).append(row)

    written: list[Path] = []
    for het, group in sorted(by_het.items()):
        series: dict[str, list[dict]] = {}
        for row in group:
            series.setdefault(_series_label(row), []).append(row)

        for metric, ylabel, stem in (
            ("test_accuracy_mean", "test accuracy", "accuracy"),
            ("regret_mean", "oracle regret", "regret"),
        ):
            if all(all(r.get(metric) is None for r in pts) for pts in series.values()):
                continue
            fig, ax = plt.subplots(figsize=(6, 4))
            for label, pts in sorted(series.items()):
                pts = sorted(pts, key=lambda r: r["round"])
                xs = [r["round"] for r in pts if r.get(metric) is not None]
                ys = [r[metric] for r in pts if r.get(metric) is not None]
                if not xs:
                    continue
                ax.plot(xs, ys, marker="o", markersize=3, label=label)
                std_key = metric.replace("_mean", "_std")
                stds = [r.get(std_key) for r in pts if r.get(metric) is not None]
                if all(s is not None for s in stds):
                    lo = [y - s for y, s in zip(ys, stds)]
                    hi = [y + s for y, s in zip(ys, stds)]
                    ax.fill_between(xs, lo, hi, alpha=0.15)
            ax.set_xlabel("round")
            ax.set_ylabel(ylabel)
            ax.set_title(f"{ylabel} vs round ({het})")
            ax.legend(fontsize=8)
            ax.grid(alpha=0.3)
            fig.tight_layout()
            path = outdir / f"{stem}_{het.replace('=', '')}.png"
            fig.savefig(path, dpi=120)
            plt.close(fig)
            written.append(path)
    return written
