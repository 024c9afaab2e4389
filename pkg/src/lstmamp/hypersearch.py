"""Time-budgeted random search over batch size, window length, width and depth."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
from scipy.stats import spearmanr

from .dataset import Dataset
from .model import ModelConfig
from .tensor import Rng
from .training import TrainConfig, TrainingDiverged, evaluate, train

CSV_FIELDS = ("trial_id", "batch_size", "num_step", "num_hidden", "num_layer",
              "rmse_percent", "epochs", "wall_seconds", "seed")
PLOT_FIELDS = ("batch_size", "num_step", "num_hidden", "num_layer", "rmse_percent")

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchSpace:
    batch_size: tuple[int, int] = (64, 2048)   # log-uniform
    num_step: tuple[int, int] = (25, 400)      # log-uniform
    num_hidden: tuple[int, int] = (8, 256)     # log-uniform
    num_layer: tuple[int, int] = (1, 2)        # uniform over integers

    def __post_init__(self):
        for f in fields(self):
            lo, hi = getattr(self, f.name)
            if lo > hi or lo < 1:
                raise ValueError(f"bad range for {f.name}: {lo}..{hi}")


def _log_uniform_int(rng: Rng, lo: int, hi: int) -> int:
    if lo == hi:
        return int(lo)
    value = math.exp(rng.uniform(math.log(lo), math.log(hi)))
    return int(min(max(round(value), lo), hi))


def sample_config(space: SearchSpace, rng: Rng) -> dict:
    lo, hi = space.num_layer
    return {
        "batch_size": _log_uniform_int(rng, *space.batch_size),
        "num_step": _log_uniform_int(rng, *space.num_step),
        "num_hidden": _log_uniform_int(rng, *space.num_hidden),
        "num_layer": int(rng.integers(lo, hi + 1)),
    }


@dataclass
class TrialResult:
    trial_id: int
    batch_size: int
    num_step: int
    num_hidden: int
    num_layer: int
    rmse_percent: float
    epochs: int
    wall_seconds: float
    seed: int

    def key(self) -> tuple:
        """Everything except timing; equal keys mean a reproduced trial."""
        d = asdict(self)
        d.pop("wall_seconds")
        return tuple(d.values())


def run_trial(hp: dict, dataset: Dataset, time_budget_s: float, seed: int, trial_id: int = 0,
              train_defaults: TrainConfig | None = None) -> TrialResult:
    """Train one sampled configuration until its budget or early stopping ends it.

    Divergence is recorded as an infinite RMSE rather than raised.
    """
    if time_budget_s <= 0:
        raise ValueError("time budget must be positive")
    base = train_defaults or TrainConfig()
    tc = replace(base, batch_size=hp["batch_size"], seed=seed, time_budget_s=time_budget_s)
    num_feature = 2 if len(dataset.passes) > 1 else 1
    config = ModelConfig(num_step=hp["num_step"], num_hidden=hp["num_hidden"],
                         num_layer=hp["num_layer"], num_feature=num_feature,
                         sample_rate=dataset.sample_rate)
    log.info("trial %d: batch_size=%d num_step=%d num_hidden=%d num_layer=%d", trial_id,
             hp["batch_size"], hp["num_step"], hp["num_hidden"], hp["num_layer"])
    t0 = time.perf_counter()
    try:
        params, history = train(config, tc, dataset)
        rmse, _ = evaluate(config, params, dataset, "validation")
        epochs = len(history)
    except TrainingDiverged as exc:
        rmse, epochs = math.inf, len(exc.history)
    if not math.isfinite(rmse):
        rmse = math.inf
    return TrialResult(trial_id, hp["batch_size"], hp["num_step"], hp["num_hidden"],
                       hp["num_layer"], float(rmse), epochs, time.perf_counter() - t0, seed)


def _trial_job(args) -> TrialResult:
    trial_id, space, dataset, budget, base_seed, train_defaults = args
    seed = base_seed + trial_id
    hp = sample_config(space, Rng(seed))
    return run_trial(hp, dataset, budget, seed, trial_id, train_defaults)


def search(space: SearchSpace, dataset: Dataset, n_trials: int, per_trial_budget: float,
           parallel_workers: int = 1, base_seed: int = 0,
           train_defaults: TrainConfig | None = None) -> list[TrialResult]:
    """Run independent trials (trial ``k`` is seeded with ``base_seed + k``).

    Results come back in trial-id order regardless of worker count.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    jobs = [(k, space, dataset, per_trial_budget, base_seed, train_defaults) for k in range(n_trials)]
    if parallel_workers <= 1:
        return [_trial_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=parallel_workers) as pool:
        return list(pool.map(_trial_job, jobs))


def sorted_by_rmse(results: list[TrialResult]) -> list[TrialResult]:
    return sorted(results, key=lambda r: (r.rmse_percent, r.trial_id))


def _fmt(value) -> str:
    if isinstance(value, float):
        return "inf" if value == math.inf else repr(value)
    return str(value)


def results_to_csv(results: list[TrialResult]) -> str:
    """CSV sorted by RMSE, floats written with full round-trip precision."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for r in sorted_by_rmse(results):
        writer.writerow([_fmt(getattr(r, name)) for name in CSV_FIELDS])
    return buf.getvalue()


def results_from_csv(text: str) -> list[TrialResult]:
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        out.append(TrialResult(
            trial_id=int(row["trial_id"]), batch_size=int(row["batch_size"]),
            num_step=int(row["num_step"]), num_hidden=int(row["num_hidden"]),
            num_layer=int(row["num_layer"]), rmse_percent=float(row["rmse_percent"]),
            epochs=int(row["epochs"]), wall_seconds=float(row["wall_seconds"]),
            seed=int(row["seed"])))
    return out


def plot_data(results: list[TrialResult]) -> str:
    """(batch_size, num_step, num_hidden, num_layer, RMSE) tuples for 3-D scatter plots."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PLOT_FIELDS)
    for r in sorted(results, key=lambda r: r.trial_id):
        writer.writerow([_fmt(getattr(r, name)) for name in PLOT_FIELDS])
    return buf.getvalue()


def plot_data_from_csv(text: str) -> list[tuple]:
    rows = csv.DictReader(io.StringIO(text))
    return [(int(r["batch_size"]), int(r["num_step"]), int(r["num_hidden"]),
             int(r["num_layer"]), float(r["rmse_percent"])) for r in rows]


def summary_line(results: list[TrialResult]) -> str:
    best = sorted_by_rmse(results)[0]
    return (f"best_trial={best.trial_id} best_rmse_percent={_fmt(best.rmse_percent)} "
            f"batch_size={best.batch_size} num_step={best.num_step} "
            f"num_hidden={best.num_hidden} num_layer={best.num_layer}")


def hidden_rmse_spearman(results: list[TrialResult]) -> float:
    """Rank correlation between width and RMSE; diverged trials rank last."""
    hidden = np.array([r.num_hidden for r in results], dtype=float)
    rmse = np.array([r.rmse_percent for r in results], dtype=float)
    rmse[~np.isfinite(rmse)] = np.finfo(float).max
    return float(spearmanr(hidden, rmse).statistic)
