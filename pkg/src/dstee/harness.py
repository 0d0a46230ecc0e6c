"""Experiment runners: single runs, parameter sweeps and policy comparisons.

Each run writes into ``<out_dir>/<label>/``:

``config.txt``      effective configuration
``metrics.csv``     one row per logged iteration
``summary.json``    final numbers plus config hash and wall time
``checkpoint.bin``  final sparse state
``INCOMPLETE``      present only while the run is in progress or after a crash

A directory with ``summary.json`` and no ``INCOMPLETE`` marker is a finished
run and is reused unless ``overwrite`` is set; anything else is rerun from
scratch.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import Checkpoint, save_checkpoint
from .config import SWEEP_PARAMS, ExperimentConfig, write_config
from .data import Dataset, load_mnist, synth_dataset
from .errors import ConfigError
from .metrics import MetricsRecord, csv_header
from .trainer import TrainState, train

log = logging.getLogger(__name__)

MARKER = "INCOMPLETE"


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset == "mnist":
        return load_mnist(cfg.data_dir)
    kind = cfg.dataset.removeprefix("synthetic_")
    return synth_dataset(kind, cfg.n_samples, cfg.noise, cfg.seed,
                         n_classes=cfg.n_classes, dim=cfg.input_dim)


def checkpoint_from_state(state: TrainState) -> Checkpoint:
    return Checkpoint(state.net, state.layers, state.params.biases, state.config.seed,
                      state.round_index, state.t)


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_metrics_csv(path, records: Sequence[MetricsRecord], n_layers: int) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(csv_header(n_layers))
        for record in records:
            writer.writerow([_fmt(v) for v in record.row()])


def read_metrics_csv(path) -> list[dict[str, float]]:
    with open(path, newline="") as f:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(f)]


def run_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out_dir) / cfg.label


def run_train(cfg: ExperimentConfig, overwrite: bool = False, data: Dataset | None = None) -> dict:
    """Train one configuration and persist its artifacts; returns the summary."""
    out = run_dir(cfg)
    summary_path = out / "summary.json"
    if summary_path.exists() and not (out / MARKER).exists() and not overwrite:
        log.info("reusing finished run %s", out)
        return json.loads(summary_path.read_text())
    out.mkdir(parents=True, exist_ok=True)
    (out / MARKER).write_text("run started\n")
    for stale in ("summary.json", "metrics.csv", "checkpoint.bin"):
        (out / stale).unlink(missing_ok=True)
    write_config(out / "config.txt", cfg)

    data = load_dataset(cfg) if data is None else data
    tcfg = cfg.train_config(data.n_features, data.n_classes)
    started = time.perf_counter()
    try:
        state, records = train(tcfg, data)
    except Exception as exc:
        (out / MARKER).write_text(json.dumps({"error": type(exc).__name__, "message": str(exc),
                                              "iteration": getattr(exc, "iteration", None)}) + "\n")
        partial = getattr(exc, "records", None)
        if partial:
            write_metrics_csv(out / "metrics.csv", partial, len(tcfg.net.layers))
        raise
    wall = time.perf_counter() - started

    write_metrics_csv(out / "metrics.csv", records, len(tcfg.net.layers))
    save_checkpoint(out / "checkpoint.bin", checkpoint_from_state(state))
    final = records[-1]
    summary = {
        "label": cfg.label,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "policy": cfg.policy,
        "iterations": tcfg.total_iterations,
        "rounds": state.round_index,
        "final_test_accuracy": final.test_accuracy,
        "final_exploration_rate": final.exploration_rate,
        "final_train_loss": final.train_loss,
        "final_global_sparsity": final.global_sparsity,
        "wall_time_s": wall,
    }
    summary_path.write_text(json.dumps(summary, indent=2) + "\n")
    (out / MARKER).unlink()
    return summary


@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: tuple[float, ...]
    base: ExperimentConfig

    def __post_init__(self):
        if self.param not in SWEEP_PARAMS:
            raise ConfigError(f"cannot sweep {self.param!r}; choose from {SWEEP_PARAMS}")
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        for v in self.values:
            self.base.replace(**{self.param: float(v)}).train_config(1, 2)


def _run_many(configs: list[ExperimentConfig], overwrite: bool, jobs: int) -> list[dict]:
    if jobs <= 1:
        return [run_train(c, overwrite) for c in configs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_train, configs, [overwrite] * len(configs)))


def _seeds(base: ExperimentConfig, seeds: Sequence[int] | None) -> list[int]:
    return list(seeds) if seeds else list(base.repeat_seeds) or [base.seed]


def _mean_std(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def _write_rows(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows([[_fmt(v) for v in row] for row in rows])


RESULT_KEYS = ("final_exploration_rate", "final_test_accuracy", "final_train_loss")


def run_sweep(spec: SweepSpec, seeds: Sequence[int] | None = None, overwrite: bool = False,
              jobs: int = 1) -> Path:
    """One run per (value, seed); writes ``aggregate.csv`` and ``aggregate_summary.csv``.

    Standard deviations are population (ddof=0) over seeds.
    """
    base = spec.base
    root = run_dir(base)
    seeds = _seeds(base, seeds)
    grid = [(float(v), s) for v in spec.values for s in seeds]
    configs = [base.replace(**{spec.param: v}, seed=s, label=f"{base.label}/{spec.param}={v!r}/seed={s}")
               for v, s in grid]
    summaries = _run_many(configs, overwrite, jobs)
    root.mkdir(parents=True, exist_ok=True)
    _write_rows(root / "aggregate.csv", ["param", "value", "seed", *RESULT_KEYS],
                [[spec.param, v, s, *(summ[k] for k in RESULT_KEYS)]
                 for (v, s), summ in zip(grid, summaries)])
    rows = []
    for v in dict.fromkeys(v for v, _ in grid):
        group = [summ for (gv, _), summ in zip(grid, summaries) if gv == v]
        stats = [x for k in RESULT_KEYS for x in _mean_std([g[k] for g in group])]
        rows.append([spec.param, v, len(group), *stats])
    _write_rows(root / "aggregate_summary.csv",
                ["param", "value", "n_seeds", *[f"{p}_{k}" for k in RESULT_KEYS for p in ("mean", "std")]],
                rows)
    return root


def run_compare(base: ExperimentConfig, policies: Sequence[str], seeds: Sequence[int] | None = None,
                overwrite: bool = False, jobs: int = 1) -> Path:
    """Run each policy on identical seeds and data order; writes ``compare.csv`` and ``compare_summary.csv``."""
    root = run_dir(base)
    seeds = _seeds(base, seeds)
    grid = [(p, s) for p in policies for s in seeds]
    configs = [base.replace(policy=p, seed=s, label=f"{base.label}/{p}/seed={s}") for p, s in grid]
    summaries = _run_many(configs, overwrite, jobs)
    root.mkdir(parents=True, exist_ok=True)
    _write_rows(root / "compare.csv", ["policy", "seed", *RESULT_KEYS],
                [[p, s, *(summ[k] for k in RESULT_KEYS)] for (p, s), summ in zip(grid, summaries)])
    rows = []
    for p in policies:
        group = [summ for (gp, _), summ in zip(grid, summaries) if gp == p]
        rows.append([p, len(group), *[x for k in RESULT_KEYS for x in _mean_std([g[k] for g in group])]])
    _write_rows(root / "compare_summary.csv",
                ["policy", "n_seeds", *[f"{p}_{k}" for k in RESULT_KEYS for p in ("mean", "std")]], rows)
    return root
