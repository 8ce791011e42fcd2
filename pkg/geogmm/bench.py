"""Benchmark sweeps: methods × grid cells × runs, with Table-style summaries."""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import pandas as pd

import geogmm
from geogmm.datagen import generate
from geogmm.errors import GeogmmError
from geogmm.fitting import fit_method, initialize, params_digest
from geogmm.schemas import BenchCell, BenchRow, BenchSpec, GenSpec, Termination

logger = logging.getLogger(__name__)

RESULT_COLUMNS = [
    "method", "d", "K", "c", "e", "seed", "time_s", "iters", "final_all", "termination",
    "init_time_s", "init_hash", "config_hash", "code_version",
]
TIMING_COLUMNS = ("time_s", "init_time_s")


def config_hash(spec: BenchSpec) -> str:
    return hashlib.sha256(spec.model_dump_json(by_alias=True).encode()).hexdigest()[:16]


def _failure_row(base: dict, method: str, error: Exception) -> BenchRow:
    logger.warning("%s failed for %s: %s", method, base, error)
    return BenchRow(
        method=method, time_s=0.0, iters=0, final_all=None,
        termination=Termination.FAILURE, init_time_s=0.0, init_hash="", **base,
    )


def run_cell(spec: BenchSpec, cell: BenchCell, run: int, cfg_hash: str) -> list[BenchRow]:
    """Generate one dataset and fit it with every method of the sweep."""
    seed = spec.seed + run
    base = dict(
        d=cell.d, K=cell.k, c=cell.c, e=cell.e, seed=seed,
        config_hash=cfg_hash, code_version=geogmm.__version__,
    )
    try:
        _, data = generate(
            GenSpec(d=cell.d, k=cell.k, c=cell.c, e=cell.e, n=cell.n, seed=seed)
        )
        shared = initialize(data, cell.k, seed, spec.em) if spec.shared_init else None
    except GeogmmError as exc:
        return [_failure_row(base, m, exc) for m in spec.methods]

    rows = []
    for i, method in enumerate(spec.methods):
        try:
            method_seed = seed + 7919 * (i + 1)
            init, init_time = shared or initialize(data, cell.k, method_seed, spec.em)
            outcome = fit_method(data, method, init, spec.optim, spec.em)
        except GeogmmError as exc:
            rows.append(_failure_row(base, method, exc))
            continue
        rows.append(
            BenchRow(
                method=method,
                time_s=outcome.fit_time_s,
                iters=outcome.iterations,
                final_all=outcome.final_all,
                termination=outcome.termination,
                init_time_s=init_time,
                init_hash=params_digest(init),
                **base,
            )
        )
    logger.info(
        "Bench cell d=%d K=%d c=%g e=%g run %d done", cell.d, cell.k, cell.c, cell.e, run
    )
    return rows


def run_bench(spec: BenchSpec, workers: int = 1) -> list[BenchRow]:
    """Run the whole sweep; rows come back in grid order, then run, then method."""
    cfg_hash = config_hash(spec)
    jobs = [(cell, run) for cell in spec.grid for run in range(spec.runs)]
    if workers <= 1:
        results = [run_cell(spec, cell, run, cfg_hash) for cell, run in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda job: run_cell(spec, *job, cfg_hash), jobs))
    return [row for rows in results for row in rows]


def rows_frame(rows: list[BenchRow]) -> pd.DataFrame:
    return pd.DataFrame([r.model_dump(mode="json") for r in rows], columns=RESULT_COLUMNS)


def write_results_csv(rows: list[BenchRow], path: str | Path) -> None:
    rows_frame(rows).to_csv(path, index=False, lineterminator="\n")


def results_digest(rows: list[BenchRow]) -> str:
    """SHA-256 of the results CSV with timing columns dropped."""
    frame = rows_frame(rows).drop(columns=list(TIMING_COLUMNS))
    text = frame.to_csv(index=False, lineterminator="\n")
    return hashlib.sha256(text.encode()).hexdigest()


def summarize(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean ± std time, mean iterations and mean ALL per (cell, method).

    Failed runs count towards `runs` and `failures` but not the averages.
    """
    keys = ["d", "K", "c", "e", "method"]
    ok = frame[frame["termination"] != Termination.FAILURE.value]
    stats = ok.groupby(keys, sort=False).agg(
        time_mean=("time_s", "mean"),
        time_std=("time_s", "std"),
        iters_mean=("iters", "mean"),
        all_mean=("final_all", "mean"),
    )
    counts = frame.groupby(keys, sort=False).agg(
        runs=("seed", "size"),
        failures=("termination", lambda t: int((t == Termination.FAILURE.value).sum())),
    )
    out = counts.join(stats, how="left").reset_index()
    out["time_std"] = out["time_std"].fillna(0.0)
    return out


def format_summary(summary: pd.DataFrame) -> str:
    lines = []
    for (d, k, c, e), group in summary.groupby(["d", "K", "c", "e"], sort=False):
        lines.append(f"d={d} K={k} c={c:g} e={e:g}")
        for row in group.itertuples():
            lines.append(
                f"  {row.method:<11} {row.time_mean:9.3f} ± {row.time_std:7.3f} s"
                f"  iters {row.iters_mean:8.1f}  ALL {row.all_mean:12.6f}"
                f"  ({row.runs - row.failures}/{row.runs} ok)"
            )
    return "\n".join(lines)
