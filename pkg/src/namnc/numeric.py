"""Dense numeric primitives: seeded RNG, activations, dropout, Adam, finite differences.

Everything runs in 64-bit floats. Arrays are plain numpy ndarrays (row-major,
float64); a NaN or Inf appearing in a result is treated as an error state by
the callers that can detect it cheaply (optimizer steps, loss evaluation).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def rng_stream(seed: int) -> np.random.Generator:
    """Deterministic random generator: PCG64 seeded with `seed`.

    The same seed yields the same bit stream on every run for a fixed numpy
    version, which is what makes repeated experiments comparable.
    """
    return np.random.Generator(np.random.PCG64(seed))


def spawn_seeds(seed: int, n: int) -> list[int]:
    """Derive `n` independent child seeds from one root seed.

    Children are decorrelated streams (numpy SeedSequence spawning), so folds
    and repetitions can each own a generator without sharing state.
    """
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1, np.uint64)[0]) for c in children]


def check_finite(arr: np.ndarray, name: str) -> np.ndarray:
    """Raise FloatingPointError if `arr` contains NaN or Inf."""
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {name}")
    return arr


def leaky_relu(x, slope: float = 0.01):
    """Element-wise leaky ReLU: x for x >= 0, slope*x below zero."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must be in (0, 1), got {slope}")
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x >= 0.0, x, slope * x)
    return out if out.ndim else float(out)


def leaky_relu_grad(x, slope: float = 0.01):
    """Derivative of leaky_relu; the kink at 0 takes the right-hand value 1."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0.0, 1.0, slope)


def dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: entries are 0 with probability p, else 1/(1-p).

    Multiplying activations by the mask keeps their expectation unchanged, so
    evaluation mode is simply "no mask". Only valid for 0 <= p < 1.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(shape, dtype=np.float64)
    keep = rng.random(shape) >= p
    return keep.astype(np.float64) / (1.0 - p)


@dataclass
class AdamState:
    """Per-array Adam accumulators plus hyperparameters.

    m and v track the first and second gradient moments and always match the
    parameter array's shape; `step` counts completed updates.
    """

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: np.ndarray, lr: float = 0.001, **kw) -> "AdamState":
        return cls(m=np.zeros_like(params), v=np.zeros_like(params), lr=lr, **kw)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam update, in place; returns `params`.

    No weight decay. Raises on shape mismatch or non-finite gradients.
    """
    if params.shape != grads.shape:
        raise ValueError(f"shape mismatch: params {params.shape} vs grads {grads.shape}")
    check_finite(grads, "gradients")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


@dataclass
class AdamOptimizer:
    """Adam over a dict of named parameter arrays, one AdamState per array."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: dict[str, AdamState] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, p in params.items():
            if name not in self.states:
                self.states[name] = AdamState.for_params(
                    p, lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps
                )
            adam_step(p, grads[name], self.states[name])


def finite_diff_grad(f, params: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    `f` must be a pure function of `params` (it is called with the same array
    perturbed in place and restored). Used as the independent oracle for the
    hand-derived gradients.
    """
    if h <= 0.0:
        raise ValueError(f"step size h must be positive, got {h}")
    params = np.asarray(params, dtype=np.float64)
    grad = np.zeros_like(params)
    flat = params.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(f(params))
        flat[i] = orig - h
        f_minus = float(f(params))
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError("non-finite function value during finite differencing")
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def finite_diff_grads(f, params: dict[str, np.ndarray], h: float = 1e-5) -> dict[str, np.ndarray]:
    """finite_diff_grad applied to every array in a parameter dict."""
    out = {}
    for name, arr in params.items():
        out[name] = finite_diff_grad(lambda _arr: f(params), arr, h=h)
    return out
