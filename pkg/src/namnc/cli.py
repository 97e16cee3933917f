"""Command line entry point: synth | train | cv | explain | params.

Settings resolve with precedence CLI flag > config file (flat key=value
lines) > built-in default, and every command writes the fully resolved
snapshot next to its outputs so a run can be reproduced from the snapshot
alone. All randomness derives from one root seed, printed at startup.

Exit codes: 0 success, 2 configuration errors, 3 runtime errors, 4 I/O errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .data import DataError, generate_synthetic, load_csv, make_windows, save_csv
from .explain import export_explanations, file_sha256, importance, sweep
from .model import count_params, load_checkpoint, save_checkpoint
from .numeric import rng_stream, spawn_seeds
from .training import (
    ModelConfig,
    TrainConfig,
    fit_dataset,
    run_cv,
    run_repetitions,
)

OUT_ROOT_ENV = "NAMNC_OUT"

DEFAULTS = {
    "tau": 8,
    "sharing": "none",
    "folds": 10,
    "val_fraction": 0.1,
    "seed": 0,
    "jobs": 1,
    "format": "csv",
    "repetitions": 1,
    "batch_size": 128,
    "lr": 0.001,
    "dropout": 0.1,
    "early_stop_rounds": 10,
    "max_epochs": 200,
    "train_frac": 0.8,
    "val_frac": 0.1,
    "length": 4000,
    "na_policy": "drop",
    "max_points": 2000,
    "data": None,
    "checkpoint": None,
    "series": None,
    "target": None,
    "k_series": None,
    "out": None,
}

_INT_KEYS = {
    "tau", "folds", "seed", "jobs", "repetitions", "batch_size",
    "early_stop_rounds", "max_epochs", "length", "max_points", "k_series",
}
_FLOAT_KEYS = {"val_fraction", "lr", "dropout", "train_frac", "val_frac"}
# keys that may stay unset; note "none" is a real value for sharing, not a null
_OPTIONAL_KEYS = {key for key, value in DEFAULTS.items() if value is None}


class ConfigError(ValueError):
    """Bad flag, config key, or inconsistent settings."""


def parse_config_file(path: str) -> dict:
    """Flat key=value lines; blank lines and '#' comments are ignored."""
    cfg = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    for i, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{i}: expected key=value, got {text!r}")
        key, value = text.split("=", 1)
        key = key.strip().replace("-", "_")
        if key == "command":
            continue
        if key not in DEFAULTS:
            raise ConfigError(f"{path}:{i}: unknown setting {key!r}")
        cfg[key] = value.strip()
    return cfg


def _coerce(key: str, value):
    if value is None or not isinstance(value, str):
        return value
    if key in _OPTIONAL_KEYS and value in ("", "none", "None"):
        return None
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
    except ValueError:
        raise ConfigError(f"setting {key!r} expects a number, got {value!r}") from None
    return value


def resolve_settings(args: argparse.Namespace) -> dict:
    """Merge CLI > config file > defaults into one plain dict."""
    file_cfg = parse_config_file(args.config) if getattr(args, "config", None) else {}
    resolved = {}
    for key, default in DEFAULTS.items():
        cli_val = getattr(args, key, None)
        if cli_val is not None:
            resolved[key] = cli_val
        elif key in file_cfg:
            resolved[key] = _coerce(key, file_cfg[key])
        else:
            resolved[key] = default
    if resolved["sharing"] not in ("none", "time", "feature"):
        raise ConfigError(f"sharing must be none|time|feature, got {resolved['sharing']!r}")
    if resolved["format"] not in ("csv", "json"):
        raise ConfigError(f"format must be csv|json, got {resolved['format']!r}")
    return resolved


def _out_dir(cfg: dict, command: str) -> str:
    out = cfg["out"]
    if out is None:
        out = os.path.join(os.environ.get(OUT_ROOT_ENV, "namnc-out"), command)
    os.makedirs(out, exist_ok=True)
    return out


def write_snapshot(cfg: dict, command: str, out_dir: str) -> str:
    path = os.path.join(out_dir, "config.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"command={command}\n")
        for key in sorted(DEFAULTS):
            value = cfg[key]
            fh.write(f"{key}={'' if value is None else value}\n")
    return path


def _load_dataset(cfg: dict):
    """Dataset from --data: a CSV path, or the literal 'synthetic'."""
    source = cfg["data"]
    if source is None:
        raise ConfigError("no dataset: pass --data PATH or --data synthetic")
    if source == "synthetic":
        synth_seed = spawn_seeds(cfg["seed"], 1)[0]
        return generate_synthetic(cfg["length"], rng_stream(synth_seed))
    return load_csv(source, na_policy=cfg["na_policy"])


def _train_cfg(cfg: dict) -> TrainConfig:
    return TrainConfig(
        batch_size=cfg["batch_size"],
        lr=cfg["lr"],
        dropout=cfg["dropout"],
        early_stop_rounds=cfg["early_stop_rounds"],
        max_epochs=cfg["max_epochs"],
        seed=cfg["seed"],
    )


def _write_metrics_csv(path: str, rows: list[dict]) -> None:
    cols = ["fold", "units", "series", "r2", "rmse", "mae"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(str(row[c]) for c in cols) + "\n")


def _metrics_rows(report, fold) -> list[dict]:
    rows = []
    for rep in (report, report.normalized):
        if rep is None:
            continue
        for i, name in enumerate(rep.names):
            rows.append({
                "fold": fold, "units": rep.units, "series": name,
                "r2": repr(float(rep.r2[i])), "rmse": repr(float(rep.rmse[i])),
                "mae": repr(float(rep.mae[i])),
            })
        rows.append({
            "fold": fold, "units": rep.units, "series": "__aggregate__",
            "r2": repr(rep.r2_mean), "rmse": repr(rep.rmse_pooled),
            "mae": repr(rep.mae_pooled),
        })
    return rows


def cmd_synth(cfg: dict) -> int:
    out_dir = _out_dir(cfg, "synth")
    write_snapshot(cfg, "synth", out_dir)
    ds = generate_synthetic(cfg["length"], rng_stream(cfg["seed"]))
    path = os.path.join(out_dir, "synthetic.csv")
    save_csv(ds, path)
    print(f"wrote {ds.n_steps} steps x {ds.n_series} series to {path}")
    return 0


def cmd_train(cfg: dict) -> int:
    out_dir = _out_dir(cfg, "train")
    write_snapshot(cfg, "train", out_dir)
    ds = _load_dataset(cfg)
    model_cfg = ModelConfig(tau=cfg["tau"], sharing=cfg["sharing"])
    n_params = count_params(cfg["tau"], ds.n_series, cfg["sharing"])
    print(f"model: tau={cfg['tau']} K={ds.n_series} sharing={cfg['sharing']} "
          f"params={n_params:,}")

    if cfg["repetitions"] > 1:
        reps = run_repetitions(
            ds, model_cfg, _train_cfg(cfg), cfg["repetitions"], jobs=cfg["jobs"],
            train_frac=cfg["train_frac"], val_frac=cfg["val_frac"],
        )
        results = []
        for i, rep in enumerate(reps):
            with open(os.path.join(out_dir, f"run_record_rep{i:03d}.json"), "w",
                      encoding="utf-8") as fh:
                json.dump(rep.record.to_dict(), fh, indent=2)
            results.extend(rep.importances.values())
        export_explanations(results, os.path.join(out_dir, "importance"),
                            fmt=cfg["format"], config={"repetitions": cfg["repetitions"]})
        r2s = [rep.record.metrics.r2_mean for rep in reps]
        print(f"{len(reps)} repetitions done; aggregate R2 mean over reps: "
              f"{sum(r2s) / len(r2s):.4f}")
        return 0

    fit = fit_dataset(ds, model_cfg, _train_cfg(cfg),
                      train_frac=cfg["train_frac"], val_frac=cfg["val_frac"])
    ckpt = os.path.join(out_dir, "checkpoint.json")
    save_checkpoint(fit.model, ckpt, series_names=ds.names,
                    norm_means=fit.stats.means, norm_stds=fit.stats.stds)
    with open(os.path.join(out_dir, "run_record.json"), "w", encoding="utf-8") as fh:
        json.dump(fit.record.to_dict(), fh, indent=2)
    _write_metrics_csv(os.path.join(out_dir, "metrics.csv"),
                       _metrics_rows(fit.record.metrics, fold=0))
    m = fit.record.metrics
    print(f"trained {fit.record.n_epochs} epochs (best {fit.record.best_epoch}); "
          f"val R2 mean {m.r2_mean:.4f}, RMSE {m.rmse_pooled:.4f}, MAE {m.mae_pooled:.4f}")
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_cv(cfg: dict) -> int:
    out_dir = _out_dir(cfg, "cv")
    write_snapshot(cfg, "cv", out_dir)
    ds = _load_dataset(cfg)
    model_cfg = ModelConfig(tau=cfg["tau"], sharing=cfg["sharing"])
    result = run_cv(ds, model_cfg, _train_cfg(cfg), folds=cfg["folds"],
                    val_fraction=cfg["val_fraction"], jobs=cfg["jobs"])
    rows = []
    for record in result.records:
        with open(os.path.join(out_dir, f"run_record_fold{record.fold_id}.json"),
                  "w", encoding="utf-8") as fh:
            json.dump(record.to_dict(), fh, indent=2)
        rows.extend(_metrics_rows(record.metrics, fold=record.fold_id))
    rows.extend(_metrics_rows(result.aggregate, fold="mean"))
    _write_metrics_csv(os.path.join(out_dir, "folds.csv"), rows)
    with open(os.path.join(out_dir, "aggregate.json"), "w", encoding="utf-8") as fh:
        json.dump(result.aggregate.to_dict(), fh, indent=2)
    agg = result.aggregate
    print(f"{len(result.records)} folds done; aggregate R2 {agg.r2_mean:.4f}, "
          f"RMSE {agg.rmse_pooled:.4f}, MAE {agg.mae_pooled:.4f} ({agg.units} units)")
    return 0


def cmd_explain(cfg: dict) -> int:
    if cfg["checkpoint"] is None:
        raise ConfigError("explain needs --checkpoint PATH")
    out_dir = _out_dir(cfg, "explain")
    write_snapshot(cfg, "explain", out_dir)
    model, meta = load_checkpoint(cfg["checkpoint"])
    ds = _load_dataset(cfg)
    if ds.n_series != model.k_series:
        raise DataError(
            f"dataset has {ds.n_series} series but checkpoint expects {model.k_series}"
        )
    if meta["norm_means"] is not None:
        from .data import NormStats, TimeSeriesDataset

        stats = NormStats(means=meta["norm_means"], stds=meta["norm_stds"])
        ds = TimeSeriesDataset(names=list(ds.names), values=stats.apply(ds.values),
                               norm_stats=stats)
    windows = make_windows(ds, (0, ds.n_steps), model.tau)

    targets = [cfg["target"]] if cfg["target"] else list(ds.names)
    series = [cfg["series"]] if cfg["series"] else list(ds.names)
    max_points = cfg["max_points"] if cfg["max_points"] > 0 else None
    results = []
    for target_name in targets:
        j = ds.series_index(target_name)
        results.append(importance(model, windows, j, names=ds.names))
        for series_name in series:
            results.extend(sweep(model, ds, series_name, target_name,
                                 max_points=max_points))
    manifest = export_explanations(
        results, out_dir, fmt=cfg["format"],
        checkpoint_hash=file_sha256(cfg["checkpoint"]),
        config={k: cfg[k] for k in ("checkpoint", "data", "format", "max_points")},
    )
    print(f"wrote {manifest['count']} explanation files to {out_dir}")
    return 0


def cmd_params(cfg: dict) -> int:
    k = cfg["k_series"]
    if k is None:
        if cfg["data"] is None:
            raise ConfigError("params needs --k-series N or --data to infer it from")
        k = _load_dataset(cfg).n_series
    n = count_params(cfg["tau"], k, cfg["sharing"])
    print(f"tau={cfg['tau']} K={k} sharing={cfg['sharing']}: {n:,} trainable parameters")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "cv": cmd_cv,
    "explain": cmd_explain,
    "params": cmd_params,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="namnc",
        description="Additive nowcasting: train, cross-validate, and explain "
                    "next-step predictions for multivariate time series.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="flat key=value settings file")
        p.add_argument("--seed", type=int, help="root seed for all randomness")
        p.add_argument("--out", help=f"output directory (default ${OUT_ROOT_ENV}/<command>)")

    p = sub.add_parser("synth", help="generate the synthetic benchmark CSV")
    add_common(p)
    p.add_argument("--length", type=int, help="number of time steps")

    for name, text in (("train", "train one model on a holdout split"),
                       ("cv", "expanding-window cross-validation")):
        p = sub.add_parser(name, help=text)
        add_common(p)
        p.add_argument("--data", help="CSV path, or 'synthetic'")
        p.add_argument("--length", type=int, help="steps when --data synthetic")
        p.add_argument("--tau", type=int, help="window length")
        p.add_argument("--sharing", choices=["none", "time", "feature"])
        p.add_argument("--jobs", type=int, help="worker processes")
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--dropout", type=float)
        p.add_argument("--early-stop-rounds", dest="early_stop_rounds", type=int)
        p.add_argument("--max-epochs", dest="max_epochs", type=int)
        p.add_argument("--na-policy", dest="na_policy", choices=["drop", "ffill"])
        p.add_argument("--format", choices=["csv", "json"])
        if name == "train":
            p.add_argument("--repetitions", type=int,
                           help="train this many independently seeded runs")
            p.add_argument("--train-frac", dest="train_frac", type=float)
            p.add_argument("--val-frac", dest="val_frac", type=float)
        else:
            p.add_argument("--folds", type=int)
            p.add_argument("--val-fraction", dest="val_fraction", type=float)

    p = sub.add_parser("explain", help="export sweeps and importance grids")
    add_common(p)
    p.add_argument("--checkpoint", help="model checkpoint path")
    p.add_argument("--data", help="CSV path, or 'synthetic'")
    p.add_argument("--length", type=int, help="steps when --data synthetic")
    p.add_argument("--series", help="restrict sweeps to one input series")
    p.add_argument("--target", help="restrict to one prediction target")
    p.add_argument("--format", choices=["csv", "json"])
    p.add_argument("--max-points", dest="max_points", type=int,
                   help="sweep resolution cap; 0 for full resolution")
    p.add_argument("--na-policy", dest="na_policy", choices=["drop", "ffill"])

    p = sub.add_parser("params", help="print the trainable parameter count")
    add_common(p)
    p.add_argument("--tau", type=int)
    p.add_argument("--k-series", dest="k_series", type=int, help="series count")
    p.add_argument("--sharing", choices=["none", "time", "feature"])
    p.add_argument("--data", help="CSV to infer the series count from")

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_settings(args)
        print(f"root seed: {cfg['seed']}")
        return COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"error (config): {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error (io): {e}", file=sys.stderr)
        return 4
    except Exception as e:
        print(f"error (runtime): {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
