"""Hot numeric kernels: numba-compiled with a pure-numpy fallback.

The replay loop calls these once per compute event, so they dominate the
runtime of long simulations.  Backend selection:

* default: numba ``@njit`` kernels (compiled lazily on first call),
* ``GOSSIPSIM_NO_NUMBA=1`` in the environment, or numba missing: the
  vectorized numpy fallbacks.

Both backends perform the same floating-point operations in the same
per-coordinate order (no fastmath, no reassociation), so the quadratic
chain is bitwise identical across backends; the logistic reductions agree
to rounding error because BLAS sums in a different order.  All noise and
batch indices are drawn by the caller, never inside a kernel, so the RNG
stream consumption is backend independent by construction.

``benchmarks/bench_kernels.py`` times the two backends side by side.
"""

from __future__ import annotations

import os

import numpy as np


def _quad_chain_loops(x, center, step, noise):
    # y_{b+1} = y_b - step * (y_b - center + noise_b)
    y = x.copy()
    for b in range(noise.shape[0]):
        for k in range(y.shape[0]):
            y[k] = y[k] - step * (y[k] - center[k] + noise[b, k])
    return y


def _quad_chain_numpy(x, center, step, noise):
    y = x.copy()
    for b in range(noise.shape[0]):
        y -= step * (y - center + noise[b])
    return y


def _logistic_grad_loops(features, labels, w):
    # mean over samples of (sigmoid(x.w) - y) * x, labels in {0, 1}
    n, d = features.shape
    g = np.zeros(d)
    for s in range(n):
        z = 0.0
        for k in range(d):
            z += features[s, k] * w[k]
        r = 1.0 / (1.0 + np.exp(-z)) - labels[s]
        for k in range(d):
            g[k] += r * features[s, k]
    return g / n


def _logistic_grad_numpy(features, labels, w):
    r = 1.0 / (1.0 + np.exp(-(features @ w))) - labels
    return features.T @ r / features.shape[0]


def _logistic_loss_loops(features, labels, w):
    # mean cross-entropy, stable softplus form
    n = features.shape[0]
    total = 0.0
    for s in range(n):
        z = 0.0
        for k in range(features.shape[1]):
            z += features[s, k] * w[k]
        # log(1 + exp(z)) - y*z
        if z > 0.0:
            total += z + np.log1p(np.exp(-z)) - labels[s] * z
        else:
            total += np.log1p(np.exp(z)) - labels[s] * z
    return total / n


def _logistic_loss_numpy(features, labels, w):
    z = features @ w
    softplus = np.where(z > 0.0, z + np.log1p(np.exp(-np.abs(z))), np.log1p(np.exp(z)))
    return float(np.mean(softplus - labels * z))


def _numba_disabled() -> bool:
    return os.environ.get("GOSSIPSIM_NO_NUMBA", "").strip() not in ("", "0")


BACKEND = "numpy"
if not _numba_disabled():
    try:
        from numba import njit

        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is a declared dependency
        BACKEND = "numpy"

if BACKEND == "numba":
    quad_chain = njit(cache=True)(_quad_chain_loops)
    logistic_grad = njit(cache=True)(_logistic_grad_loops)
    logistic_loss = njit(cache=True)(_logistic_loss_loops)
else:
    quad_chain = _quad_chain_numpy
    logistic_grad = _logistic_grad_numpy
    logistic_loss = _logistic_loss_numpy

# Both implementations by name, for parity tests and the benchmark.
IMPLEMENTATIONS = {
    "numpy": {
        "quad_chain": _quad_chain_numpy,
        "logistic_grad": _logistic_grad_numpy,
        "logistic_loss": _logistic_loss_numpy,
    }
}
if BACKEND == "numba":
    IMPLEMENTATIONS["numba"] = {
        "quad_chain": quad_chain,
        "logistic_grad": logistic_grad,
        "logistic_loss": logistic_loss,
    }
