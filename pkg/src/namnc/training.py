"""Training loop, metrics, cross-validated runs, repetition runs, baselines.

All targets are fit jointly under one mean squared error; a run is fully
determined by its config and seed. Folds and repetitions are independent
models, so they can fan out to worker processes without changing results.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import (
    FoldSpec,
    NormStats,
    TimeSeriesDataset,
    Windows,
    make_windows,
    standardize,
    ts_kfold,
)
from .explain import ImportanceGrid, importance
from .model import EXU_UNITS, NamNcModel, init_model
from .numeric import AdamOptimizer, dropout_mask, rng_stream, spawn_seeds

EVAL_CHUNK = 2048


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the epoch where it happened."""

    def __init__(self, epoch: int, kind: str):
        super().__init__(f"non-finite {kind} loss at epoch {epoch}")
        self.epoch = epoch


@dataclass
class ModelConfig:
    """Architecture knobs: window length and net-sharing mode."""

    tau: int = 8
    sharing: str = "none"


@dataclass
class TrainConfig:
    batch_size: int = 128
    lr: float = 0.001
    dropout: float = 0.1
    early_stop_rounds: int = 10
    max_epochs: int = 200
    seed: int = 0
    loss_reduction: str = "mean"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.early_stop_rounds < 1:
            raise ValueError("early_stop_rounds must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.lr <= 0.0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.loss_reduction != "mean":
            raise ValueError("only loss_reduction='mean' is supported")


@dataclass
class MetricsReport:
    """Per-series and aggregate regression metrics for one sample set.

    r2 uses NaN as the undefined marker (zero target variance). Aggregates:
    r2_mean averages the defined per-series values; rmse_pooled / mae_pooled
    pool the errors over all series and samples; the mean-of-series variants
    are reported alongside since either aggregation is defensible.
    """

    units: str
    n_samples: int
    names: list[str]
    r2: np.ndarray
    rmse: np.ndarray
    mae: np.ndarray
    r2_mean: float
    rmse_pooled: float
    mae_pooled: float
    rmse_mean: float
    mae_mean: float
    normalized: "MetricsReport | None" = None

    def to_dict(self) -> dict:
        d = {
            "units": self.units,
            "n_samples": self.n_samples,
            "names": list(self.names),
            "r2": [float(v) for v in self.r2],
            "rmse": [float(v) for v in self.rmse],
            "mae": [float(v) for v in self.mae],
            "r2_mean": float(self.r2_mean),
            "rmse_pooled": float(self.rmse_pooled),
            "mae_pooled": float(self.mae_pooled),
            "rmse_mean": float(self.rmse_mean),
            "mae_mean": float(self.mae_mean),
        }
        if self.normalized is not None:
            d["normalized"] = self.normalized.to_dict()
        return d


def compute_metrics(
    preds: np.ndarray, targets: np.ndarray, names: list[str] | None = None, units: str = "normalized"
) -> MetricsReport:
    """R^2, RMSE, MAE per series plus aggregates; preds/targets are (N, K)."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape or preds.ndim != 2:
        raise ValueError(f"prediction shape {preds.shape} vs target shape {targets.shape}")
    n, k = targets.shape
    if names is None:
        names = [f"s{i}" for i in range(k)]

    err = preds - targets
    rmse = np.sqrt(np.mean(err * err, axis=0))
    mae = np.mean(np.abs(err), axis=0)
    ss_res = np.sum(err * err, axis=0)
    ss_tot = np.sum((targets - targets.mean(axis=0)) ** 2, axis=0)
    r2 = np.full(k, np.nan)
    defined = ss_tot > 0.0
    r2[defined] = 1.0 - ss_res[defined] / ss_tot[defined]

    return MetricsReport(
        units=units,
        n_samples=n,
        names=list(names),
        r2=r2,
        rmse=rmse,
        mae=mae,
        r2_mean=float(np.nanmean(r2)) if defined.any() else float("nan"),
        rmse_pooled=float(np.sqrt(np.mean(err * err))),
        mae_pooled=float(np.mean(np.abs(err))),
        rmse_mean=float(rmse.mean()),
        mae_mean=float(mae.mean()),
    )


def predict_batch(model: NamNcModel, windows: Windows) -> np.ndarray:
    """Evaluation-mode predictions for every window, chunked to bound memory."""
    chunks = [
        model.forward_batch(windows.x[i : i + EVAL_CHUNK])
        for i in range(0, len(windows), EVAL_CHUNK)
    ]
    return np.concatenate(chunks, axis=0)


def evaluate(
    model: NamNcModel,
    windows: Windows,
    stats: NormStats | None = None,
    names: list[str] | None = None,
) -> MetricsReport:
    """Metrics on a sample set; needs >= 2 samples so R^2 has variance to use.

    Without stats the report is in the data's own (normalized) units. With
    stats the primary report is in original units, with the normalized
    variant attached.
    """
    if len(windows) < 2:
        raise ValueError(f"evaluate needs at least 2 samples, got {len(windows)}")
    preds = predict_batch(model, windows)
    return _paired_reports(preds, windows.y, stats, names)


def _paired_reports(
    preds: np.ndarray,
    targets: np.ndarray,
    stats: NormStats | None,
    names: list[str] | None,
) -> MetricsReport:
    normalized = compute_metrics(preds, targets, names, units="normalized")
    if stats is None:
        return normalized
    original = compute_metrics(
        stats.invert(preds), stats.invert(targets), names, units="original"
    )
    original.normalized = normalized
    return original


def persistence_baseline(
    windows: Windows, stats: NormStats | None = None, names: list[str] | None = None
) -> MetricsReport:
    """Sanity floor: predict each next step as the window's last observed row."""
    if len(windows) < 2:
        raise ValueError(f"persistence_baseline needs at least 2 samples, got {len(windows)}")
    preds = windows.x[:, -1, :]
    return _paired_reports(preds, windows.y, stats, names)


@dataclass
class RunRecord:
    """Everything needed to audit one training run."""

    config: dict
    seed: int
    fold_id: int | None
    train_history: list[float]
    val_history: list[float]
    best_epoch: int
    n_epochs: int
    stopped_early: bool
    metrics: MetricsReport
    duration_s: float

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "fold_id": self.fold_id,
            "train_history": [float(v) for v in self.train_history],
            "val_history": [float(v) for v in self.val_history],
            "best_epoch": self.best_epoch,
            "n_epochs": self.n_epochs,
            "stopped_early": self.stopped_early,
            "metrics": self.metrics.to_dict(),
            "duration_s": self.duration_s,
        }


def _val_loss(model: NamNcModel, windows: Windows) -> float:
    preds = predict_batch(model, windows)
    return float(np.mean((preds - windows.y) ** 2))


def train(
    model: NamNcModel,
    train_windows: Windows,
    val_windows: Windows,
    cfg: TrainConfig,
    rng: np.random.Generator | None = None,
    stats: NormStats | None = None,
    names: list[str] | None = None,
    fold_id: int | None = None,
) -> RunRecord:
    """Mini-batch Adam with early stopping on validation loss.

    Batches are drawn by shuffling window indices with the seeded stream each
    epoch. Training stops after early_stop_rounds epochs without a strict
    validation improvement (or at max_epochs) and the best-validation
    parameters are restored before evaluation.
    """
    if len(train_windows) < 1 or len(val_windows) < 1:
        raise ValueError("need at least one training and one validation sample")
    if rng is None:
        rng = rng_stream(cfg.seed)
    opt = AdamOptimizer(lr=cfg.lr)
    n = len(train_windows)
    k = model.k_series
    grid = model.tau * model.k_series

    t0 = time.perf_counter()
    best_val = np.inf
    best_params = model.copy_params()
    best_epoch = 0
    patience = 0
    train_history: list[float] = []
    val_history: list[float] = []
    stopped_early = False

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        sse = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            xb = train_windows.x[idx]
            yb = train_windows.y[idx]
            mask = None
            if cfg.dropout > 0.0:
                mask = dropout_mask((len(idx), grid, EXU_UNITS), cfg.dropout, rng)
            loss, grads = model.loss_and_grads(xb, yb, mask)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, "training")
            opt.step(model.params, grads)
            sse += loss * len(idx) * k
        train_loss = sse / (n * k)
        val_loss = _val_loss(model, val_windows)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(epoch, "validation")
        train_history.append(train_loss)
        val_history.append(val_loss)

        if val_loss < best_val:
            best_val = val_loss
            best_params = model.copy_params()
            best_epoch = epoch
            patience = 0
        else:
            patience += 1
            if patience >= cfg.early_stop_rounds:
                stopped_early = True
                break

    model.set_params(best_params)
    metrics = evaluate(model, val_windows, stats=stats, names=names)
    return RunRecord(
        config={
            **asdict(cfg),
            "tau": model.tau,
            "k_series": model.k_series,
            "sharing": model.sharing,
        },
        seed=cfg.seed,
        fold_id=fold_id,
        train_history=train_history,
        val_history=val_history,
        best_epoch=best_epoch,
        n_epochs=len(train_history),
        stopped_early=stopped_early,
        metrics=metrics,
        duration_s=time.perf_counter() - t0,
    )


def holdout_ranges(
    n_steps: int, train_frac: float = 0.8, val_frac: float = 0.1
) -> tuple[tuple[int, int], tuple[int, int]]:
    """Simple front/back split: train on the first part, validate right after."""
    train_end = int(train_frac * n_steps)
    val_end = min(int((train_frac + val_frac) * n_steps), n_steps)
    if train_end < 1 or val_end <= train_end:
        raise ValueError(f"cannot split {n_steps} steps into {train_frac}/{val_frac}")
    return (0, train_end), (train_end, val_end)


@dataclass
class FitResult:
    """A trained model plus the split, stats, and record that produced it."""

    model: NamNcModel
    record: RunRecord
    stats: NormStats
    std_dataset: TimeSeriesDataset
    train_range: tuple[int, int]
    val_range: tuple[int, int]
    val_windows: Windows


def fit_dataset(
    ds: TimeSeriesDataset,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    train_frac: float = 0.8,
    val_frac: float = 0.1,
) -> FitResult:
    """Standardize on the training range, window, and train one model."""
    train_range, val_range = holdout_ranges(ds.n_steps, train_frac, val_frac)
    std = standardize(ds, train_range)
    tau = model_cfg.tau
    train_w = make_windows(std, train_range, tau)
    val_w = make_windows(std, (max(0, val_range[0] - tau), val_range[1]), tau)
    rng = rng_stream(cfg.seed)
    model = init_model(tau, ds.n_series, model_cfg.sharing, rng)
    record = train(
        model, train_w, val_w, cfg, rng=rng, stats=std.norm_stats, names=ds.names
    )
    return FitResult(
        model=model,
        record=record,
        stats=std.norm_stats,
        std_dataset=std,
        train_range=train_range,
        val_range=val_range,
        val_windows=val_w,
    )


def _aggregate_reports(reports: list[MetricsReport]) -> MetricsReport:
    """Mean over folds, series-wise and aggregate-wise; sample counts add up."""
    first = reports[0]
    agg = MetricsReport(
        units=first.units,
        n_samples=sum(r.n_samples for r in reports),
        names=list(first.names),
        r2=np.nanmean(np.stack([r.r2 for r in reports]), axis=0),
        rmse=np.mean(np.stack([r.rmse for r in reports]), axis=0),
        mae=np.mean(np.stack([r.mae for r in reports]), axis=0),
        r2_mean=float(np.nanmean([r.r2_mean for r in reports])),
        rmse_pooled=float(np.mean([r.rmse_pooled for r in reports])),
        mae_pooled=float(np.mean([r.mae_pooled for r in reports])),
        rmse_mean=float(np.mean([r.rmse_mean for r in reports])),
        mae_mean=float(np.mean([r.mae_mean for r in reports])),
    )
    if all(r.normalized is not None for r in reports):
        agg.normalized = _aggregate_reports([r.normalized for r in reports])
    return agg


@dataclass
class CvResult:
    records: list[RunRecord]
    aggregate: MetricsReport
    folds: list[FoldSpec]


def _run_fold(
    ds: TimeSeriesDataset,
    spec: FoldSpec,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    seed: int,
) -> RunRecord:
    std = standardize(ds, spec.train_range)
    tau = model_cfg.tau
    train_w = make_windows(std, spec.train_range, tau)
    # validation inputs may reach back into training steps; targets never do
    val_w = make_windows(std, (max(0, spec.val_range[0] - tau), spec.val_range[1]), tau)
    fold_cfg = TrainConfig(**{**asdict(cfg), "seed": seed})
    rng = rng_stream(seed)
    model = init_model(tau, ds.n_series, model_cfg.sharing, rng)
    return train(
        model, train_w, val_w, fold_cfg, rng=rng,
        stats=std.norm_stats, names=ds.names, fold_id=spec.fold_index,
    )


def run_cv(
    ds: TimeSeriesDataset,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    folds: int = 10,
    val_fraction: float = 0.1,
    jobs: int = 1,
) -> CvResult:
    """One independent model per expanding-window fold, plus fold-mean metrics.

    Normalization stats come from each fold's own training range. Fold seeds
    derive from the root seed, and results are merged by fold index, so the
    outcome does not depend on the worker count.
    """
    specs = ts_kfold(ds.n_steps, folds=folds, val_fraction=val_fraction)
    seeds = spawn_seeds(cfg.seed, len(specs))
    args = [(ds, spec, model_cfg, cfg, seed) for spec, seed in zip(specs, seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_fold_star, args))
    else:
        records = [_run_fold(*a) for a in args]
    return CvResult(
        records=records,
        aggregate=_aggregate_reports([r.metrics for r in records]),
        folds=specs,
    )


def _run_fold_star(args):
    return _run_fold(*args)


@dataclass
class RepetitionRecord:
    """One repetition of the consistency study: its run plus importance grids."""

    seed: int
    record: RunRecord
    importances: dict[str, ImportanceGrid] = field(default_factory=dict)


def _run_repetition(
    ds: TimeSeriesDataset,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    seed: int,
    train_frac: float,
    val_frac: float,
    importance_targets: list[str] | None,
) -> RepetitionRecord:
    rep_cfg = TrainConfig(**{**asdict(cfg), "seed": seed})
    fit = fit_dataset(ds, model_cfg, rep_cfg, train_frac, val_frac)
    grids: dict[str, ImportanceGrid] = {}
    targets = ds.names if importance_targets is None else importance_targets
    for name in targets:
        j = ds.series_index(name)
        grids[name] = importance(fit.model, fit.val_windows, j, names=ds.names)
    return RepetitionRecord(seed=seed, record=fit.record, importances=grids)


def _run_repetition_star(args):
    return _run_repetition(*args)


def run_repetitions(
    ds: TimeSeriesDataset,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    n: int,
    jobs: int = 1,
    train_frac: float = 0.8,
    val_frac: float = 0.1,
    importance_targets: list[str] | None = None,
) -> list[RepetitionRecord]:
    """Train the same structure n times under independent seeds.

    Each repetition uses the same holdout split but its own derived seed for
    initialization, shuffling, and dropout; importance grids are computed on
    the validation windows so runs can be overlaid and compared.
    """
    if n < 1:
        raise ValueError(f"need n >= 1 repetitions, got {n}")
    seeds = spawn_seeds(cfg.seed, n)
    args = [
        (ds, model_cfg, cfg, seed, train_frac, val_frac, importance_targets)
        for seed in seeds
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_repetition_star, args))
    return [_run_repetition(*a) for a in args]
