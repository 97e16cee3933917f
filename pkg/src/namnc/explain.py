"""Explanation exports: per-net response sweeps and dataset-level importance.

A sweep traces one feature net over the sorted unique values of its input
series, in both raw form f(x) and mixed form w * f(x), so either reading of a
response curve can be reproduced. An importance grid averages absolute
contributions over a sample set, giving one tau-by-K heat map per target.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .data import DataError, TimeSeriesDataset, Windows
from .model import NamNcModel

SWEEP_MAX_POINTS = 2000
IMPORTANCE_CHUNK = 2048


@dataclass
class SweepResult:
    """Response of feature net (t, k) over unique inputs, for one target.

    inputs is strictly increasing; outputs_c is the mixing weight for
    (target, t, k) times outputs_f, element-wise.
    """

    series: str
    k: int
    t: int
    target: str
    j: int
    inputs: np.ndarray
    outputs_f: np.ndarray
    outputs_c: np.ndarray
    seed: int | None = None


@dataclass
class ImportanceGrid:
    """Mean absolute contribution of each (t, k) input point to one target."""

    target: str
    j: int
    names: list[str]
    grid: np.ndarray  # (tau, K), entries >= 0


def _resolve(ds: TimeSeriesDataset, which) -> tuple[int, str]:
    if isinstance(which, str):
        idx = ds.series_index(which)
        return idx, which
    idx = int(which)
    if not 0 <= idx < ds.n_series:
        raise DataError(f"series index {idx} out of range for K={ds.n_series}")
    return idx, ds.names[idx]


def _quantile_thin(values: np.ndarray, max_points: int | None) -> np.ndarray:
    """Keep at most max_points values, spaced evenly through the sorted set."""
    if max_points is None or values.size <= max_points:
        return values
    idx = np.unique(np.round(np.linspace(0, values.size - 1, max_points)).astype(int))
    return values[idx]


def sweep(
    model: NamNcModel,
    ds: TimeSeriesDataset,
    series,
    target,
    max_points: int | None = SWEEP_MAX_POINTS,
    seed: int | None = None,
) -> list[SweepResult]:
    """One SweepResult per time offset for the given (series, target) pair.

    Inputs are the sorted unique values of the series in `ds`; sets larger
    than max_points are thinned by quantile position (pass None for full
    resolution). `ds` must be in the units the model was trained on.
    """
    k, series_name = _resolve(ds, series)
    j, target_name = _resolve(ds, target)
    col = ds.values[:, k]
    if col.size == 0:
        raise DataError(f"series {series_name!r} is empty")
    inputs = _quantile_thin(np.unique(col), max_points)
    results = []
    for t in range(model.tau):
        f_vals = model.nets[t][k].eval_many(inputs)
        weight = model.params["mix_w"][j, t * model.k_series + k]
        results.append(
            SweepResult(
                series=series_name,
                k=k,
                t=t,
                target=target_name,
                j=j,
                inputs=inputs.copy(),
                outputs_f=f_vals,
                outputs_c=weight * f_vals,
                seed=seed,
            )
        )
    return results


def importance(
    model: NamNcModel,
    windows: Windows,
    target: int,
    target_name: str | None = None,
    names: list[str] | None = None,
) -> ImportanceGrid:
    """Mean |contribution| per input point over a sample set, for one target."""
    if len(windows) < 1:
        raise DataError("importance needs at least one sample")
    j = int(target)
    total = np.zeros((model.tau, model.k_series))
    for lo in range(0, len(windows), IMPORTANCE_CHUNK):
        c = model.contribution_batch(windows.x[lo : lo + IMPORTANCE_CHUNK], j)
        total += np.abs(c).sum(axis=0)
    if names is None:
        names = [f"s{i}" for i in range(model.k_series)]
    return ImportanceGrid(
        target=target_name if target_name is not None else names[j],
        j=j,
        names=list(names),
        grid=total / len(windows),
    )


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def _unique_name(base: str, used: set[str]) -> str:
    name = base
    i = 1
    while name in used:
        name = f"{base.rsplit('.', 1)[0]}_{i}.{base.rsplit('.', 1)[1]}"
        i += 1
    used.add(name)
    return name


def _sweep_csv(res: SweepResult, path) -> None:
    centered = res.outputs_c - res.outputs_c.mean()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("target,t,k,x,f_x,c_x,c_x_centered,seed\n")
        seed = "" if res.seed is None else str(res.seed)
        for x, f, c, cc in zip(res.inputs, res.outputs_f, res.outputs_c, centered):
            fh.write(
                f"{res.target},{res.t},{res.k},{float(x)!r},{float(f)!r},"
                f"{float(c)!r},{float(cc)!r},{seed}\n"
            )


def _sweep_json(res: SweepResult, path) -> None:
    centered = res.outputs_c - res.outputs_c.mean()
    doc = {
        res.target: {
            res.series: {
                str(res.t): {
                    "k": res.k,
                    "j": res.j,
                    "seed": res.seed,
                    "inputs": [float(v) for v in res.inputs],
                    "f": [float(v) for v in res.outputs_f],
                    "c": [float(v) for v in res.outputs_c],
                    "c_centered": [float(v) for v in centered],
                }
            }
        }
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def _grid_csv(grid: ImportanceGrid, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("t," + ",".join(grid.names) + "\n")
        for t, row in enumerate(grid.grid):
            fh.write(f"{t}," + ",".join(repr(float(v)) for v in row) + "\n")


def _grid_json(grid: ImportanceGrid, path) -> None:
    doc = {
        "target": grid.target,
        "j": grid.j,
        "names": list(grid.names),
        "grid": [[float(v) for v in row] for row in grid.grid],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def export_explanations(
    results,
    out_dir,
    fmt: str = "csv",
    checkpoint_hash: str | None = None,
    config: dict | None = None,
) -> dict:
    """Write one file per sweep or importance grid, plus a manifest.

    Returns the manifest, which is also written to manifest.json: file list,
    checkpoint hash, and the config that produced the explanations. Numeric
    fields keep full 64-bit precision.
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be 'csv' or 'json', got {fmt!r}")
    os.makedirs(out_dir, exist_ok=True)
    used: set[str] = set()
    files: list[str] = []
    for res in results:
        if isinstance(res, SweepResult):
            tag = "" if res.seed is None else f"_seed{res.seed}"
            base = f"sweep_{res.target}_from_{res.series}_t{res.t}{tag}.{fmt}"
            name = _unique_name(base, used)
            writer = _sweep_csv if fmt == "csv" else _sweep_json
        elif isinstance(res, ImportanceGrid):
            base = f"importance_{res.target}.{fmt}"
            name = _unique_name(base, used)
            writer = _grid_csv if fmt == "csv" else _grid_json
        else:
            raise TypeError(f"cannot export {type(res).__name__}")
        writer(res, os.path.join(out_dir, name))
        files.append(name)
    manifest = {
        "format": fmt,
        "count": len(files),
        "files": files,
        "checkpoint_sha256": checkpoint_hash,
        "config": config,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest
