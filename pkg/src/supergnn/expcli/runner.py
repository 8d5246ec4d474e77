"""Worker pool, deterministic collector, aggregation and result files."""

from __future__ import annotations

import csv
import json
import math
import multiprocessing as mp
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from supergnn.expcli.config import ExperimentConfig
from supergnn.expcli.studies import (
    GEOMETRY_COLUMNS,
    NOISE_COLUMNS,
    POINT_AXES,
    RunOutcome,
    enumerate_runs,
    run_one,
)

GROUP_COLUMNS = ("study", "arch", "d", "pooling", "p", "scope", "variant", "level", "kind", "family")
AGG_METRICS = ("k_a", "effrank", "si", "wno_i", "ai", "r_tau", "dead_columns", "test_acc")
AGGREGATE_COLUMNS = (GROUP_COLUMNS + ("n_runs", "n_failed")
                     + tuple(f"{m}_{s}" for m in AGG_METRICS for s in ("mean", "std"))
                     + ("frac_one", "frac_all", "frac_collapsed", "frac_perfect"))
NOISE_AGG_COLUMNS = ("study", "quantity", "angle_deg", "n_runs", "mean", "std")
COSINE_COLUMNS = ("arch", "pooling", "level", "family", "concept_i", "concept_j", "n_runs",
                  "mean_cos", "mean_abs_cos")


@dataclass
class StudyResult:
    config: ExperimentConfig
    rows: list[dict] = field(default_factory=list)
    records: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    aggregates: list[dict] = field(default_factory=list)
    cosine: list[dict] = field(default_factory=list)

    @property
    def columns(self) -> tuple[str, ...]:
        return NOISE_COLUMNS if self.config.study == "noise_probe" else GEOMETRY_COLUMNS

    @property
    def aggregate_columns(self) -> tuple[str, ...]:
        return NOISE_AGG_COLUMNS if self.config.study == "noise_probe" else AGGREGATE_COLUMNS

    def select(self, **filters) -> list[dict]:
        return [r for r in self.rows if all(r.get(k) == v for k, v in filters.items())]


def _outcomes(cfg: ExperimentConfig, jobs: int) -> Iterable[RunOutcome]:
    specs = enumerate_runs(cfg)
    work = partial(run_one, cfg)
    if jobs <= 1 or len(specs) <= 1:
        for spec in specs:
            yield work(spec)
        return
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
    with ctx.Pool(min(jobs, len(specs))) as pool:
        # imap yields in submission order, whatever order workers finish in
        yield from pool.imap(work, specs, chunksize=1)


def run_study(cfg: ExperimentConfig, jobs: int = 1,
              progress: Callable[[RunOutcome], None] | None = None) -> StudyResult:
    result = StudyResult(cfg)
    for outcome in _outcomes(cfg, jobs):
        if progress is not None:
            progress(outcome)
        spec = outcome.spec
        if outcome.failure is not None:
            result.failures.append({"run": spec.run_id, "arch": spec.arch, "seed": spec.seed,
                                    **spec.values, "reason": outcome.failure})
            continue
        result.rows.extend(outcome.rows)
        if outcome.record is not None:
            result.records.append(outcome.record)
    if cfg.study == "noise_probe":
        result.aggregates = aggregate_noise(result.rows)
    else:
        result.aggregates = aggregate(result.rows, result.failures)
        if cfg.study == "conjunction_study":
            result.cosine = mean_cosines(result.records)
    return result


# --------------------------------------------------------------- aggregation

def _num(v) -> float:
    if v is None or isinstance(v, str):
        return math.nan
    return float(v)


def _mean_std(values: list[float]) -> tuple[float, float]:
    vals = np.array([v for v in values if not math.isnan(v)])
    if vals.size == 0:
        return math.nan, math.nan
    std = float(vals.std(ddof=1)) if vals.size > 1 else math.nan
    return float(vals.mean()), std


def _frac(rows: list[dict], key: str) -> float:
    vals = [r[key] for r in rows if r.get(key) is not None]
    return float(np.mean([bool(v) for v in vals])) if vals else math.nan


def aggregate(rows: list[dict], failures: list[dict]) -> list[dict]:
    """Mean/std per configuration group plus shares of runs with high |cos| pairs.

    ``frac_one``: share of runs with at least one off-diagonal |cos| > 0.9.
    ``frac_all``: share of runs whose every off-diagonal pair exceeds 0.9.
    Runs with fewer than two active features count as neither.
    """
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r.get(c) for c in GROUP_COLUMNS), []).append(r)
    out = []
    for key, members in groups.items():
        g = dict(zip(GROUP_COLUMNS, key))
        n_failed = sum(1 for f in failures
                       if f["arch"] == g["arch"] and all(f.get(a) == g[a] for a in POINT_AXES))
        row = {**g, "n_runs": len(members), "n_failed": n_failed}
        for m in AGG_METRICS:
            row[f"{m}_mean"], row[f"{m}_std"] = _mean_std([_num(r.get(m)) for r in members])
        row["frac_one"] = _frac(members, "cos_any")
        row["frac_all"] = _frac(members, "cos_all")
        row["frac_collapsed"] = _frac(members, "collapsed")
        row["frac_perfect"] = _frac(members, "perfect")
        out.append(row)
    return out


def aggregate_noise(rows: list[dict]) -> list[dict]:
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        groups.setdefault((r["study"], r["quantity"], r["angle_deg"]), []).append(_num(r["value"]))
    out = []
    for (study, quantity, angle), vals in groups.items():
        mean, std = _mean_std(vals)
        out.append({"study": study, "quantity": quantity, "angle_deg": angle,
                    "n_runs": len(vals), "mean": mean, "std": std})
    return out


def mean_cosines(records: list[dict]) -> list[dict]:
    """Entrywise mean cosine matrices per (arch, pooling, level, family).

    A pair enters the mean only for runs where both concepts were active.
    """
    acc: dict[tuple, list] = {}
    for rec in records:
        for name, info in rec.get("cosine", {}).items():
            level, family = name.split(":", 1)
            ids, cos = info["ids"], info["cos"]
            if not cos:
                continue
            for a, i in enumerate(ids):
                for b, j in enumerate(ids):
                    key = (rec["arch"], rec.get("pooling"), level, family, i, j)
                    acc.setdefault(key, []).append(cos[a][b])
    out = []
    for key in sorted(acc, key=lambda k: tuple(str(x) for x in k[:4]) + k[4:]):
        vals = np.array(acc[key], dtype=float)
        out.append(dict(zip(COSINE_COLUMNS, key + (vals.size, float(vals.mean()),
                                                    float(np.abs(vals).mean())))))
    return out


# ------------------------------------------------------------------- writers

def format_cell(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "NA" if not math.isfinite(v) else repr(float(v))
    return str(v)


def write_csv(path: Path, columns: tuple[str, ...], rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([format_cell(r.get(c)) for c in columns])


def _write_jsonl(path: Path, items: list[dict]) -> None:
    with path.open("w") as fh:
        for item in items:
            fh.write(json.dumps(item, sort_keys=True, allow_nan=False) + "\n")


def write_study(result: StudyResult, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "geometry.csv", result.columns, result.rows)
    write_csv(out / "aggregate.csv", result.aggregate_columns, result.aggregates)
    _write_jsonl(out / "runs.jsonl", result.records)
    _write_jsonl(out / "failures.jsonl", result.failures)
    if result.config.study == "conjunction_study":
        write_csv(out / "cosine.csv", COSINE_COLUMNS, result.cosine)
    (out / "config.json").write_text(json.dumps(result.config.to_dict(), indent=2,
                                                sort_keys=True) + "\n")
    return out


def read_csv(path: str | Path) -> list[dict]:
    """Read a results CSV back; ``NA`` becomes ``None``, other cells stay strings."""
    with open(path, newline="") as fh:
        return [{k: (None if v == "NA" else v) for k, v in row.items()}
                for row in csv.DictReader(fh)]
