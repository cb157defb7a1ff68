"""Command-line front end: grid runs, enrichment reports, surrogate
evaluation, correlation analysis, and multi-seed aggregation.

Outputs are append-never: every command writes into a fresh timestamped
directory under the output root (``--out-dir`` or ``$BIOBO_OUT``), and every
output file starts with ``#``-prefixed header lines carrying the input hash
so results stay traceable to the spec that produced them.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Iterable, Sequence

import click
import numpy as np

from . import specfile
from .enrich import EnrichmentRow, run_enrichment, top_fraction
from .genepool import GenePool, PathwayDB, PoolState, fuse, load_labels, parse_gmt, train_test_split
from .loop import (
    RunConfig,
    RunResult,
    config_hash,
    config_to_dict,
    derive_seed,
    result_jsonl_lines,
    run as run_loop,
)
from .surrogate import eval_metrics, fit_ensemble, fit_gp, predict

ENRICHMENT_COLUMNS = (
    "pathway",
    "overlap",
    "pathway_size",
    "p_value",
    "p_adjusted",
    "odds_ratio",
    "combined_score",
)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def _make_out_dir(root: str, command: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = Path(root) / f"{command}-{stamp}"
    path, k = base, 1
    while path.exists():
        path = Path(f"{base}-{k}")
        k += 1
    path.mkdir(parents=True)
    return path


def _write_file(path: Path, header: dict[str, str], lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in header.items():
            fh.write(f"# {key}={value}\n")
        for line in lines:
            fh.write(line + "\n")


def _csv_line(fields: Sequence) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="").writerow([_fmt(f) for f in fields])
    return buf.getvalue()


def _read_table(path: str) -> list[dict[str, str]]:
    """Read a CSV/TSV written by this tool, skipping # header lines."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    delim = "\t" if path.endswith(".tsv") else ","
    return list(csv.DictReader(lines, delimiter=delim))


@click.group()
@click.option(
    "--out-dir",
    envvar="BIOBO_OUT",
    default="biobo_out",
    show_default=True,
    help="Output root directory (env BIOBO_OUT).",
)
@click.option("--seed", type=int, default=None, help="Override the spec seed list with one seed.")
@click.option("--jobs", type=int, default=1, show_default=True, help="Parallel grid workers.")
@click.pass_context
def main(ctx: click.Context, out_dir: str, seed: int | None, jobs: int) -> None:
    """Biology-informed Bayesian optimization over finite gene pools."""
    ctx.obj = {"out_dir": out_dir, "seed": seed, "jobs": max(1, jobs)}


def _surrogate_label(config: RunConfig) -> str:
    # the (surrogate, modality) part of a run's identity, shared with the
    # eval-surrogate output so recall and metric files can be joined
    modality = "fusion" if config.modalities is None else "+".join(config.modalities)
    return f"{config.surrogate}-{modality}"


def _execute_cell(args: tuple) -> tuple[str, RunResult]:
    pool, db, label, config = args
    return label, run_loop(pool, db, config)


def _execute_grid(
    pool: GenePool,
    dbs: dict[str, PathwayDB],
    cells: list[tuple[str, RunConfig]],
    jobs: int,
) -> list[tuple[str, RunResult]]:
    tasks = [(pool, dbs.get(config.prior), label, config) for label, config in cells]
    if jobs <= 1 or len(tasks) == 1:
        return [_execute_cell(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool_exec:
        return list(pool_exec.map(_execute_cell, tasks))


def _aggregate_rows(results: list[tuple[str, RunResult]]) -> list[tuple[str, int, float, float, int]]:
    by_cell: dict[tuple[str, int], list[float]] = {}
    for label, result in results:
        for record in result.records:
            by_cell.setdefault((label, record.cycle), []).append(record.cumulative_recall)
    rows = []
    for (label, cycle), recalls in sorted(by_cell.items()):
        arr = np.asarray(recalls)
        sem = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
        rows.append((label, cycle, float(arr.mean()), sem, len(arr)))
    return rows


@main.command("run")
@click.argument("spec_path", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def cmd_run(obj: dict, spec_path: str) -> None:
    """Execute the full grid x seeds of a TOML experiment spec."""
    spec = specfile.load_spec(spec_path)
    pool, dbs = specfile.materialize(spec)
    cells = specfile.grid_configs(spec, pool, obj["seed"])
    click.echo(f"pool: {pool.size} genes; grid: {len(cells)} runs")
    results = _execute_grid(pool, dbs, cells, obj["jobs"])
    results.sort(key=lambda lr: (lr[0], lr[1].config.seed))

    out = _make_out_dir(obj["out_dir"], "run")
    runs_dir = out / "runs"
    runs_dir.mkdir()
    summary_lines = [
        "config_hash,seed,final_recall,cycles,labels_used,config,surrogate_config"
    ]
    for label, result in results:
        chash = config_hash(result.config)
        name = f"{label}__{chash}__s{result.config.seed}.jsonl"
        _write_file(
            runs_dir / name,
            {
                "spec_hash": spec.spec_hash,
                "label": label,
                "config": json.dumps(config_to_dict(result.config), sort_keys=True),
            },
            result_jsonl_lines(result),
        )
        summary_lines.append(
            _csv_line(
                [
                    chash,
                    result.config.seed,
                    result.final_recall,
                    len(result.records) - 1,
                    result.labels_used,
                    label,
                    _surrogate_label(result.config),
                ]
            )
        )
    _write_file(out / "summary.csv", {"spec_hash": spec.spec_hash}, summary_lines)

    agg_lines = ["config,cycle,mean_recall,sem_recall,n_seeds"]
    for label, cycle, mean, sem, n in _aggregate_rows(results):
        agg_lines.append(_csv_line([label, cycle, mean, sem, n]))
    _write_file(out / "aggregate.csv", {"spec_hash": spec.spec_hash}, agg_lines)
    click.echo(f"wrote {len(results)} run files, summary.csv, aggregate.csv -> {out}")


def _enrichment_csv_lines(rows: list[EnrichmentRow]) -> list[str]:
    lines = [",".join(ENRICHMENT_COLUMNS)]
    for r in rows:
        lines.append(
            _csv_line(
                [r.pathway, r.overlap, r.pathway_size, r.p_value, r.p_adjusted,
                 r.odds_ratio, r.combined_score]
            )
        )
    return lines


def _acquired_ids(run_path: str) -> list[str]:
    ids: list[str] = []
    with open(run_path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            ids.extend(json.loads(line)["batch"])
    return ids


@main.command("enrich")
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--gmt", "gmt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--fraction", default=0.1, show_default=True, help="Top fraction of values to test.")
@click.option(
    "--run",
    "run_path",
    default=None,
    type=click.Path(exists=True, dir_okay=False),
    help="Restrict to genes acquired in this run JSONL before taking the top fraction.",
)
@click.pass_obj
def cmd_enrich(obj: dict, labels_path: str, gmt_path: str, fraction: float, run_path: str | None) -> None:
    """Enrichment table for the top-valued genes of a label table (or run)."""
    labels = load_labels(labels_path)
    db = parse_gmt(gmt_path).restrict(labels)
    pool = GenePool(ids=tuple(sorted(labels)), modalities={}, labels=labels)
    if run_path is not None:
        acquired = [g for g in _acquired_ids(run_path) if g in labels]
        if not acquired:
            raise click.ClickException("run file contains no gene present in the label table")
        observed = {g: labels[g] for g in acquired}
    else:
        observed = dict(labels)
    state = PoolState(
        labeled=observed,
        unlabeled=[g for g in pool.ids if g not in observed],
        cycle=0,
    )
    interest = top_fraction(state, fraction)
    rows = run_enrichment(interest, pool, db)

    digest = hashlib.sha256()
    for path in filter(None, (labels_path, gmt_path, run_path)):
        digest.update(Path(path).read_bytes())
    digest.update(repr(fraction).encode())
    out = _make_out_dir(obj["out_dir"], "enrich")
    _write_file(out / "enrichment.csv", {"spec_hash": digest.hexdigest()[:16]},
                _enrichment_csv_lines(rows))
    click.echo(f"tested {len(rows)} overlapping pathways on |S|={len(interest)}")
    for r in rows[:5]:
        click.echo(
            f"  {r.pathway}: overlap {r.overlap}/{r.pathway_size}, "
            f"p_adj {r.p_adjusted:.3g}, combined {r.combined_score:.3g}"
        )
    click.echo(f"wrote enrichment.csv -> {out}")


@main.command("eval-surrogate")
@click.argument("spec_path", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def cmd_eval_surrogate(obj: dict, spec_path: str) -> None:
    """Train/test metrics (LL, RMSE, global and near-optimum) per config x seed."""
    spec = specfile.load_spec(spec_path)
    pool, _ = specfile.materialize(spec)
    seeds = (obj["seed"],) if obj["seed"] is not None else spec.seeds
    fractions = spec.metric_fractions
    metric_keys: list[str] | None = None
    rows: list[list] = []
    for surrogate in spec.surrogates:
        for modality in spec.modalities:
            names = (
                list(pool.modalities) if modality == specfile.FUSION else list(modality)
            )
            label = f"{surrogate}-{specfile.modality_label(modality)}"
            features = fuse(pool, names)
            row_of = pool.index()
            for seed in seeds:
                train_ids, test_ids = train_test_split(pool, spec.test_fraction, int(seed))
                X_train = features[[row_of[g] for g in train_ids]]
                y_train = pool.label_vector(train_ids)
                X_test = features[[row_of[g] for g in test_ids]]
                y_test = pool.label_vector(test_ids)
                if surrogate == "gp":
                    model = fit_gp(X_train, y_train, spec.gp)
                else:
                    model = fit_ensemble(X_train, y_train, spec.ensemble,
                                         seed=derive_seed(int(seed), 0, 99))
                record = eval_metrics(predict(model, X_test, test_ids), y_test, fractions)
                flat = record.as_dict()
                if metric_keys is None:
                    metric_keys = list(flat)
                rows.append([label, label, int(seed)] + [flat[k] for k in metric_keys])
    out = _make_out_dir(obj["out_dir"], "eval-surrogate")
    lines = [",".join(["config", "surrogate_config", "seed"] + (metric_keys or []))]
    lines += [_csv_line(row) for row in rows]
    _write_file(out / "metrics.csv", {"spec_hash": spec.spec_hash}, lines)
    click.echo(f"wrote {len(rows)} metric rows -> {out / 'metrics.csv'}")


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    a = x - x.mean()
    b = y - y.mean()
    denom = math.sqrt(float(a @ a) * float(b @ b))
    if denom == 0.0:
        return float("nan")
    return float(a @ b) / denom


def _correlation(x: np.ndarray, y: np.ndarray, method: str) -> float:
    """Pearson, or Pearson on average ranks (ties averaged) for Spearman."""
    if len(x) < 2:
        return float("nan")
    if method == "spearman":
        return _pearson(_average_ranks(x), _average_ranks(y))
    return _pearson(x, y)


@main.command("correlate")
@click.option("--recall", "recall_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--metrics", "metrics_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--method", type=click.Choice(["spearman", "pearson"]), default="spearman",
              show_default=True)
@click.option("--on", "join_on", default="config,seed", show_default=True,
              help="Comma-separated join columns present in both files.")
@click.option("--recall-col", default="final_recall", show_default=True)
@click.pass_obj
def cmd_correlate(
    obj: dict, recall_path: str, metrics_path: str, method: str, join_on: str, recall_col: str
) -> None:
    """Correlate a recall column against every metric column, joined on keys."""
    recall_rows = _read_table(recall_path)
    metric_rows = _read_table(metrics_path)
    keys = [k.strip() for k in join_on.split(",") if k.strip()]
    for name, rows, path in (("recall", recall_rows, recall_path), ("metrics", metric_rows, metrics_path)):
        if not rows:
            raise click.ClickException(f"{name} file {path} has no data rows")
        missing = [k for k in keys if k not in rows[0]]
        if missing:
            raise click.ClickException(
                f"{name} file {path} lacks join columns {missing}; has {list(rows[0])}"
            )
    if recall_col not in recall_rows[0]:
        raise click.ClickException(f"recall file lacks column {recall_col!r}")
    recall_by_key: dict[tuple, list[float]] = {}
    for r in recall_rows:
        recall_by_key.setdefault(tuple(r[k] for k in keys), []).append(float(r[recall_col]))
    metric_cols = [c for c in metric_rows[0] if c not in keys]
    paired: dict[str, list[tuple[float, float]]] = {c: [] for c in metric_cols}
    n_joined = 0
    for row in metric_rows:
        key = tuple(row[k] for k in keys)
        for recall_value in recall_by_key.get(key, ()):
            n_joined += 1
            for col in metric_cols:
                try:
                    value = float(row[col])
                except ValueError:
                    continue
                paired[col].append((recall_value, value))
    if n_joined == 0:
        raise click.ClickException("no (config, seed) pairs joined across the two files")
    report_lines = ["metric,method,correlation,n_pairs"]
    click.echo(f"joined {n_joined} rows on ({', '.join(keys)})")
    for col in metric_cols:
        pairs = paired[col]
        if not pairs:
            continue
        x = np.array([p[0] for p in pairs])
        y = np.array([p[1] for p in pairs])
        rho = _correlation(x, y, method)
        report_lines.append(_csv_line([col, method, rho, len(pairs)]))
        click.echo(f"  {recall_col} vs {col}: {method} correlation = {rho:.4f} (n={len(pairs)})")
    digest = hashlib.sha256()
    digest.update(Path(recall_path).read_bytes())
    digest.update(Path(metrics_path).read_bytes())
    out = _make_out_dir(obj["out_dir"], "correlate")
    _write_file(out / "correlations.csv", {"spec_hash": digest.hexdigest()[:16]}, report_lines)
    click.echo(f"wrote correlations.csv -> {out}")


def _collect_run_files(paths: Sequence[str]) -> list[Path]:
    files: list[Path] = []
    for p in paths:
        path = Path(p)
        if path.is_dir():
            files.extend(sorted(path.rglob("*.jsonl")))
        else:
            files.append(path)
    return files


@main.command("report")
@click.argument("paths", nargs=-1, required=True, type=click.Path(exists=True))
@click.pass_obj
def cmd_report(obj: dict, paths: tuple[str, ...]) -> None:
    """Plot-ready long-format TSV (cycle, config, mean_recall, sem) from run files."""
    files = _collect_run_files(paths)
    if not files:
        raise click.ClickException("no run JSONL files found")
    by_cell: dict[tuple[str, int], list[float]] = {}
    spec_hashes: set[str] = set()
    for path in files:
        label = path.stem
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.startswith("# label="):
                    label = line.strip().split("=", 1)[1]
                elif line.startswith("# spec_hash="):
                    spec_hashes.add(line.strip().split("=", 1)[1])
                elif line.startswith("#") or not line.strip():
                    continue
                else:
                    rec = json.loads(line)
                    by_cell.setdefault((label, rec["cycle"]), []).append(rec["cumulative_recall"])
    lines = ["cycle\tconfig\tmean_recall\tsem"]
    for (label, cycle), recalls in sorted(by_cell.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        arr = np.asarray(recalls)
        sem = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
        lines.append(f"{cycle}\t{label}\t{_fmt(float(arr.mean()))}\t{_fmt(sem)}")
    out = _make_out_dir(obj["out_dir"], "report")
    _write_file(out / "recall_curves.tsv", {"spec_hash": ",".join(sorted(spec_hashes)) or "none"},
                lines)
    click.echo(f"wrote {len(lines) - 1} rows -> {out / 'recall_curves.tsv'}")


if __name__ == "__main__":
    main()
