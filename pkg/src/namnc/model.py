"""Additive nowcasting model: per-point feature nets mixed into per-target sums.

Each scalar input x[t, k] of a tau-by-K window feeds its own small feature net
(an exp-centered unit layer followed by two linear maps). Target j's prediction
is

    yhat[j] = beta[j] + sum over (t, k) of mix_w[j, t*K + k] * f[t][k](x[t, k])

so every prediction decomposes exactly into per-point contributions. Feature
nets can be hard-shared along the time axis (one net per series) or along the
series axis (one net per time offset) to shrink the parameter count; the
mixing weights and biases are never shared.

Parameters live in one dict of stacked float64 arrays (first axis = distinct
net index), which keeps the optimizer, gradient checks, and checkpointing
uniform. Gradients are hand-derived for this fixed composition.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .numeric import check_finite, leaky_relu, leaky_relu_grad, rng_stream

EXU_UNITS = 100
HIDDEN_UNITS = 32
LEAKY_SLOPE = 0.01
SHARING_MODES = ("none", "time", "feature")

PARAMS_PER_NET = 2 * EXU_UNITS + HIDDEN_UNITS * EXU_UNITS + HIDDEN_UNITS

CHECKPOINT_MAGIC = "namnc-checkpoint"
CHECKPOINT_VERSION = 1


class FeatureNet:
    """Scalar-to-scalar net: 100 exp-centered units, then 100->32->1 linear maps.

    Unit i maps x to leaky_relu(exp(w[i]) * (x - b[i])); the hidden linear map
    is followed by another leaky ReLU and the output map is linear. Both
    linear maps carry no bias. The arrays are views into the owning model's
    stacked parameters, so shared nets share storage and identity.
    """

    __slots__ = ("exu_w", "exu_b", "hidden", "out")

    def __init__(self, exu_w: np.ndarray, exu_b: np.ndarray, hidden: np.ndarray, out: np.ndarray):
        self.exu_w = exu_w      # (EXU_UNITS,) log-scale weights
        self.exu_b = exu_b      # (EXU_UNITS,) centers
        self.hidden = hidden    # (HIDDEN_UNITS, EXU_UNITS)
        self.out = out          # (HIDDEN_UNITS,)

    def eval_many(self, xs: np.ndarray) -> np.ndarray:
        """Evaluate the net on a vector of scalar inputs."""
        xs = np.asarray(xs, dtype=np.float64)
        z1 = np.exp(self.exu_w)[None, :] * (xs[:, None] - self.exu_b[None, :])
        a1 = leaky_relu(z1, LEAKY_SLOPE)
        a2 = leaky_relu(a1 @ self.hidden.T, LEAKY_SLOPE)
        return a2 @ self.out

    def __call__(self, x: float) -> float:
        return feature_net_forward(self, x)


def feature_net_forward(net: FeatureNet, x: float) -> float:
    """One scalar through one feature net; rejects non-finite input."""
    if not np.isfinite(x):
        raise FloatingPointError(f"feature net input must be finite, got {x}")
    return float(net.eval_many(np.array([x]))[0])


class NamNcModel:
    """Grid of feature nets plus per-target mixing weights and biases.

    params holds the trainable arrays:
      exu_w  (P, 100)      exu_b (P, 100)
      hidden (P, 32, 100)  out   (P, 32)
      mix_w  (K, tau*K)    beta  (K,)
    where P is the number of distinct nets (tau*K, K, or tau by sharing mode).
    """

    def __init__(self, tau: int, k_series: int, sharing: str, params: dict[str, np.ndarray]):
        if sharing not in SHARING_MODES:
            raise ValueError(f"sharing must be one of {SHARING_MODES}, got {sharing!r}")
        self.tau = tau
        self.k_series = k_series
        self.sharing = sharing
        self.params = params
        self._net_ids = self._build_net_ids()
        self.nets = self._build_net_grid()

    # -- structure ---------------------------------------------------------

    @property
    def n_distinct_nets(self) -> int:
        return distinct_net_count(self.tau, self.k_series, self.sharing)

    def net_index(self, t: int, k: int) -> int:
        """Index into the stacked net arrays for grid position (t, k)."""
        if self.sharing == "none":
            return t * self.k_series + k
        if self.sharing == "time":
            return k
        return t

    def _build_net_ids(self) -> np.ndarray:
        ids = np.empty(self.tau * self.k_series, dtype=np.intp)
        for t in range(self.tau):
            for k in range(self.k_series):
                ids[t * self.k_series + k] = self.net_index(t, k)
        return ids

    def _build_net_grid(self) -> list[list[FeatureNet]]:
        p = self.params
        distinct = [
            FeatureNet(p["exu_w"][n], p["exu_b"][n], p["hidden"][n], p["out"][n])
            for n in range(self.n_distinct_nets)
        ]
        return [
            [distinct[self.net_index(t, k)] for k in range(self.k_series)]
            for t in range(self.tau)
        ]

    def _reduce_to_nets(self, grid_grad: np.ndarray) -> np.ndarray:
        """Sum per-grid-position gradients into per-distinct-net gradients."""
        shaped = grid_grad.reshape((self.tau, self.k_series) + grid_grad.shape[1:])
        if self.sharing == "none":
            return grid_grad
        if self.sharing == "time":
            return shaped.sum(axis=0)
        return shaped.sum(axis=1)

    # -- evaluation ---------------------------------------------------------

    def _check_window_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-2:] != (self.tau, self.k_series):
            raise ValueError(
                f"window shape {x.shape[-2:]} does not match (tau, K) = "
                f"({self.tau}, {self.k_series})"
            )
        return x

    def _forward_cache(self, x_batch: np.ndarray, mask: np.ndarray | None = None) -> dict:
        """Batched forward pass keeping the intermediates backprop needs.

        x_batch: (B, tau, K); mask: optional inverted-dropout mask over the
        exu activations, shape (B, tau*K, EXU_UNITS).
        """
        p = self.params
        ids = self._net_ids
        b = x_batch.shape[0]
        xg = x_batch.reshape(b, self.tau * self.k_series)

        e_grid = np.exp(p["exu_w"])[ids]                      # (Pg, 100)
        z1 = e_grid[None] * (xg[:, :, None] - p["exu_b"][ids][None])
        a1 = leaky_relu(z1, LEAKY_SLOPE)
        if mask is not None:
            a1 = a1 * mask
        h_grid = p["hidden"][ids]                             # (Pg, 32, 100)
        z2 = np.einsum("bph,poh->bpo", a1, h_grid, optimize=True)
        a2 = leaky_relu(z2, LEAKY_SLOPE)
        o_grid = p["out"][ids]                                # (Pg, 32)
        f = np.einsum("bpo,po->bp", a2, o_grid, optimize=True)
        yhat = f @ p["mix_w"].T + p["beta"]
        return {
            "xg": xg, "e_grid": e_grid, "z1": z1, "a1": a1, "mask": mask,
            "h_grid": h_grid, "z2": z2, "a2": a2, "o_grid": o_grid,
            "f": f, "yhat": yhat,
        }

    def forward_batch(self, x_batch: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        """Predictions for a batch of windows; (B, tau, K) -> (B, K)."""
        x_batch = self._check_window_batch(x_batch)
        return self._forward_cache(x_batch, mask)["yhat"]

    def forward(self, window: np.ndarray) -> np.ndarray:
        """Predictions for one window; (tau, K) -> (K,)."""
        window = self._check_window_batch(window)
        if window.ndim != 2:
            raise ValueError("forward expects a single (tau, K) window")
        check_finite(window, "window")
        return self.forward_batch(window[None])[0]

    def loss(self, x_batch: np.ndarray, y_batch: np.ndarray) -> float:
        """Evaluation-mode mean squared error; same reduction as loss_and_grads."""
        x_batch = self._check_window_batch(x_batch)
        y_batch = np.asarray(y_batch, dtype=np.float64)
        resid = self.forward_batch(x_batch) - y_batch
        return float(np.mean(resid * resid))

    def loss_and_grads(
        self,
        x_batch: np.ndarray,
        y_batch: np.ndarray,
        mask: np.ndarray | None = None,
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean squared error over batch and targets, with analytic gradients.

        Gradients follow the forward composition in reverse; shared nets
        accumulate over every grid position they serve.
        """
        x_batch = self._check_window_batch(x_batch)
        y_batch = np.asarray(y_batch, dtype=np.float64)
        b = x_batch.shape[0]
        if y_batch.shape != (b, self.k_series):
            raise ValueError(f"target shape {y_batch.shape} != ({b}, {self.k_series})")

        c = self._forward_cache(x_batch, mask)
        resid = c["yhat"] - y_batch
        loss = float(np.mean(resid * resid))

        p = self.params
        d_yhat = (2.0 / resid.size) * resid                     # (B, K)
        g_beta = d_yhat.sum(axis=0)
        g_mix = d_yhat.T @ c["f"]                               # (K, Pg)
        d_f = d_yhat @ p["mix_w"]                               # (B, Pg)
        d_a2 = d_f[:, :, None] * c["o_grid"][None]
        d_z2 = d_a2 * leaky_relu_grad(c["z2"], LEAKY_SLOPE)
        g_out = np.einsum("bp,bpo->po", d_f, c["a2"], optimize=True)
        g_hidden = np.einsum("bpo,bph->poh", d_z2, c["a1"], optimize=True)
        d_a1 = np.einsum("bpo,poh->bph", d_z2, c["h_grid"], optimize=True)
        if mask is not None:
            d_a1 = d_a1 * mask
        d_z1 = d_a1 * leaky_relu_grad(c["z1"], LEAKY_SLOPE)
        # z1 = exp(w) * (x - b): dz1/dw = z1, dz1/db = -exp(w)
        g_exu_w = np.einsum("bph,bph->ph", d_z1, c["z1"], optimize=True)
        g_exu_b = -c["e_grid"] * d_z1.sum(axis=0)

        grads = {
            "exu_w": self._reduce_to_nets(g_exu_w),
            "exu_b": self._reduce_to_nets(g_exu_b),
            "hidden": self._reduce_to_nets(g_hidden),
            "out": self._reduce_to_nets(g_out),
            "mix_w": g_mix,
            "beta": g_beta,
        }
        return loss, grads

    # -- explanations --------------------------------------------------------

    def contribution_batch(self, x_batch: np.ndarray, target: int) -> np.ndarray:
        """Per-point contributions to one target; (B, tau, K) -> (B, tau, K)."""
        x_batch = self._check_window_batch(x_batch)
        f = self._forward_cache(x_batch)["f"]
        c = self.params["mix_w"][target][None] * f
        return c.reshape(x_batch.shape[0], self.tau, self.k_series)

    def contributions(self, window: np.ndarray) -> "ContributionTensor":
        """Exact additive decomposition of the prediction for one window."""
        window = self._check_window_batch(window)
        if window.ndim != 2:
            raise ValueError("contributions expects a single (tau, K) window")
        check_finite(window, "window")
        cache = self._forward_cache(window[None])
        f = cache["f"]                                          # (1, Pg)
        c = self.params["mix_w"] * f                            # (K, Pg)
        return ContributionTensor(
            c=c.reshape(self.k_series, self.tau, self.k_series).copy(),
            beta=self.params["beta"].copy(),
            prediction=cache["yhat"][0].copy(),
        )

    # -- bookkeeping ---------------------------------------------------------

    def copy_params(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.params.items()}

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        for name, arr in params.items():
            self.params[name][...] = arr

    def n_params(self) -> int:
        """Trainable scalar count, by walking the actual arrays."""
        return sum(arr.size for arr in self.params.values())


@dataclass
class ContributionTensor:
    """Additive explanation of one window's predictions.

    c[j, t, k] is what input point (t, k) adds to target j; beta[j] plus the
    sum of c[j] reconstructs prediction[j] up to 64-bit rounding.
    """

    c: np.ndarray           # (K, tau, K)
    beta: np.ndarray        # (K,)
    prediction: np.ndarray  # (K,)


def distinct_net_count(tau: int, k_series: int, sharing: str) -> int:
    if sharing == "none":
        return tau * k_series
    if sharing == "time":
        return k_series
    if sharing == "feature":
        return tau
    raise ValueError(f"sharing must be one of {SHARING_MODES}, got {sharing!r}")


def count_params(tau: int, k_series: int, sharing: str) -> int:
    """Trainable parameter count for a model of the given shape.

    Distinct nets contribute PARAMS_PER_NET each; every target owns tau*K
    mixing weights plus one bias regardless of sharing.
    """
    if tau < 1 or k_series < 1:
        raise ValueError("tau and k_series must be >= 1")
    nets = distinct_net_count(tau, k_series, sharing)
    return nets * PARAMS_PER_NET + k_series * (tau * k_series + 1)


def init_model(tau: int, k_series: int, sharing: str, rng: np.random.Generator) -> NamNcModel:
    """Fresh model: exu parameters standard normal, linear maps scaled by fan-in.

    Draw order is fixed (exu_w, exu_b, hidden, out, mix_w) so one seed always
    produces the same model.
    """
    if tau < 1 or k_series < 1:
        raise ValueError("tau and k_series must be >= 1")
    p = distinct_net_count(tau, k_series, sharing)
    grid = tau * k_series
    params = {
        "exu_w": rng.standard_normal((p, EXU_UNITS)),
        "exu_b": rng.standard_normal((p, EXU_UNITS)),
        "hidden": rng.standard_normal((p, HIDDEN_UNITS, EXU_UNITS)) / np.sqrt(EXU_UNITS),
        "out": rng.standard_normal((p, HIDDEN_UNITS)) / np.sqrt(HIDDEN_UNITS),
        "mix_w": rng.standard_normal((k_series, grid)) / np.sqrt(grid),
        "beta": np.zeros(k_series),
    }
    return NamNcModel(tau, k_series, sharing, params)


# -- checkpoint file -------------------------------------------------------
#
# Single JSON document:
#   magic, version, tau, k_series, sharing,
#   series_names (list or null), norm (means/stds lists or null),
#   params: {name: {shape, data(flat)}}
# Floats are written with repr precision, so a save/load round trip is exact.


def save_checkpoint(
    model: NamNcModel,
    path,
    series_names: list[str] | None = None,
    norm_means: np.ndarray | None = None,
    norm_stds: np.ndarray | None = None,
) -> None:
    doc = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "tau": model.tau,
        "k_series": model.k_series,
        "sharing": model.sharing,
        "series_names": list(series_names) if series_names is not None else None,
        "norm": None
        if norm_means is None
        else {
            "means": [float(v) for v in np.asarray(norm_means).ravel()],
            "stds": [float(v) for v in np.asarray(norm_stds).ravel()],
        },
        "params": {
            name: {"shape": list(arr.shape), "data": [float(v) for v in arr.ravel()]}
            for name, arr in model.params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> tuple[NamNcModel, dict]:
    """Load a checkpoint; returns the model and a meta dict.

    Meta keys: series_names (list | None), norm_means, norm_stds (float64
    arrays | None).
    """
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint (bad magic)")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    params = {
        name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc["params"].items()
    }
    model = NamNcModel(doc["tau"], doc["k_series"], doc["sharing"], params)
    norm = doc.get("norm")
    meta = {
        "series_names": doc.get("series_names"),
        "norm_means": None if norm is None else np.asarray(norm["means"], dtype=np.float64),
        "norm_stds": None if norm is None else np.asarray(norm["stds"], dtype=np.float64),
    }
    return model, meta
