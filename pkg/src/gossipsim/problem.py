"""Objective families, stochastic gradient oracles, and local batch training.

Three objective kinds are provided:

* :class:`Quadratic` -- per-agent losses ``0.5 * ||x - c_i||^2`` with known
  closed-form constants; the workhorse for quantitative tests.
* :class:`Logistic` -- binary logistic regression on seeded Gaussian blobs,
  one private dataset per agent.
* :class:`TinyMLP` -- a one-hidden-layer softmax network on Gaussian blobs,
  for exercising non-convex objectives at desk scale.

Gradient oracles may inject additive per-coordinate Gaussian noise with a
configurable standard deviation; with the deviation at zero the quadratic
oracle is exact and the dataset oracles reduce to plain mini-batch sampling.
All arithmetic is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from gossipsim import _kernels, seeds
from gossipsim.errors import InvalidInputError, NumericalOverflowError


@dataclass(frozen=True)
class ProblemConstants:
    """Regularity constants of an objective instance.

    ``L`` gradient Lipschitz constant, ``sigma`` stochastic-gradient noise
    bound, ``zeta`` cross-agent gradient divergence bound, ``init_gap`` the
    suboptimality of the start point.  ``exact`` marks closed-form values;
    otherwise the fields are sampled estimates.
    """

    L: float
    sigma: float
    zeta: float
    init_gap: float
    exact: bool

    def __post_init__(self):
        for name in ("L", "sigma", "zeta", "init_gap"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0.0:
                raise InvalidInputError(f"constant {name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class LocalUpdate:
    """The model delta an agent produces from one batch-training pass."""

    delta: np.ndarray
    producer: int
    produced_at: float

    def __post_init__(self):
        if self.produced_at < 0.0:
            raise InvalidInputError("produced_at must be >= 0")


def _check_agent(obj, agent: int) -> None:
    if not 0 <= agent < obj.n_agents:
        raise InvalidInputError(f"agent {agent} out of range [0, {obj.n_agents})")


def _check_dim(obj, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (obj.dim,):
        raise InvalidInputError(f"expected shape ({obj.dim},), got {x.shape}")
    return x


class Quadratic:
    """Mean of per-agent quadratics ``f_i(x) = 0.5 * ||x - c_i||^2``."""

    kind = "quadratic"

    def __init__(self, centers: np.ndarray, noise_std: float = 0.0):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
        if noise_std < 0.0:
            raise InvalidInputError("noise_std must be >= 0")
        self.noise_std = float(noise_std)

    @property
    def n_agents(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def exact_gradient(self, agent: int, x: np.ndarray) -> np.ndarray:
        _check_agent(self, agent)
        return _check_dim(self, x) - self.centers[agent]

    def gradient(self, agent: int, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        g = self.exact_gradient(agent, x)
        if self.noise_std > 0.0:
            g = g + self.noise_std * rng.standard_normal(self.dim)
        return g

    def loss(self, agent: int, x: np.ndarray) -> float:
        _check_agent(self, agent)
        d = _check_dim(self, x) - self.centers[agent]
        return 0.5 * float(d @ d)

    def global_loss(self, x: np.ndarray) -> float:
        x = _check_dim(self, x)
        d = x[None, :] - self.centers
        return 0.5 * float(np.mean(np.sum(d * d, axis=1)))

    def global_gradient(self, x: np.ndarray) -> np.ndarray:
        return _check_dim(self, x) - self.centers.mean(axis=0)

    def draw_noise(self, batches: int, rng: np.random.Generator) -> np.ndarray:
        """Noise for a whole training chain in one draw.

        A single (batches, dim) call consumes the stream exactly like
        ``batches`` separate per-step draws, so the kernel path and a
        step-by-step loop over :meth:`gradient` stay interchangeable.
        """
        if self.noise_std > 0.0:
            return self.noise_std * rng.standard_normal((batches, self.dim))
        return np.zeros((batches, self.dim))

    def chain(self, agent: int, x: np.ndarray, batches: int, step: float,
              rng: np.random.Generator) -> np.ndarray:
        """Run ``batches`` gradient steps from ``x`` and return the endpoint."""
        x = _check_dim(self, x)
        return _kernels.quad_chain(x, self.centers[agent], step,
                                   self.draw_noise(batches, rng))

    def constants(self, x0: np.ndarray, rng=None) -> ProblemConstants:
        x0 = _check_dim(self, x0)
        cbar = self.centers.mean(axis=0)
        zeta = float(np.sqrt(np.max(np.sum((self.centers - cbar) ** 2, axis=1))))
        gap = self.global_loss(x0) - self.global_loss(cbar)
        return ProblemConstants(
            L=1.0,
            sigma=self.noise_std * math.sqrt(self.dim),
            zeta=zeta,
            init_gap=max(gap, 0.0),
            exact=True,
        )


class Logistic:
    """Binary logistic regression with one private dataset per agent.

    Labels live in {0, 1}; the model is a bias-free linear score.  The
    stochastic oracle samples ``batch_size`` rows with replacement.
    """

    kind = "logistic"

    def __init__(self, features: np.ndarray, labels: np.ndarray,
                 batch_size: int = 64, noise_std: float = 0.0):
        self.features = np.asarray(features, dtype=np.float64)  # (N, n, f)
        self.labels = np.asarray(labels, dtype=np.float64)      # (N, n)
        if self.features.ndim != 3 or self.labels.shape != self.features.shape[:2]:
            raise InvalidInputError("features must be (N, n, f) with labels (N, n)")
        if batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        self.batch_size = int(batch_size)
        self.noise_std = float(noise_std)

    @property
    def n_agents(self) -> int:
        return self.features.shape[0]

    @property
    def n_samples(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.features.shape[2]

    def exact_gradient(self, agent: int, x: np.ndarray) -> np.ndarray:
        _check_agent(self, agent)
        x = _check_dim(self, x)
        return _kernels.logistic_grad(self.features[agent], self.labels[agent], x)

    def gradient(self, agent: int, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        _check_agent(self, agent)
        x = _check_dim(self, x)
        if self.batch_size >= self.n_samples:
            g = _kernels.logistic_grad(self.features[agent], self.labels[agent], x)
        else:
            idx = rng.integers(0, self.n_samples, size=self.batch_size)
            g = _kernels.logistic_grad(self.features[agent][idx], self.labels[agent][idx], x)
        if self.noise_std > 0.0:
            g = g + self.noise_std * rng.standard_normal(self.dim)
        return g

    def loss(self, agent: int, x: np.ndarray) -> float:
        _check_agent(self, agent)
        x = _check_dim(self, x)
        return float(_kernels.logistic_loss(self.features[agent], self.labels[agent], x))

    def global_loss(self, x: np.ndarray) -> float:
        return float(np.mean([self.loss(i, x) for i in range(self.n_agents)]))

    def global_gradient(self, x: np.ndarray) -> np.ndarray:
        g = np.zeros(self.dim)
        for i in range(self.n_agents):
            g += self.exact_gradient(i, x)
        return g / self.n_agents

    def constants(self, x0: np.ndarray, rng=None) -> ProblemConstants:
        return _estimate_constants_sampled(self, x0, rng, smoothness_cap=self._smoothness_cap())

    def _smoothness_cap(self) -> float:
        # per-agent Hessian is bounded by 0.25 * lambda_max(X'X / n)
        worst = 0.0
        for i in range(self.n_agents):
            gram = self.features[i].T @ self.features[i] / self.n_samples
            worst = max(worst, float(np.linalg.eigvalsh(gram)[-1]))
        return 0.25 * worst


class TinyMLP:
    """One-hidden-layer tanh network with softmax cross-entropy loss.

    Parameters are a flat vector: hidden weights (h, f), hidden bias (h,),
    output weights (k, h), output bias (k,).
    """

    kind = "mlp"

    def __init__(self, features: np.ndarray, labels: np.ndarray,
                 hidden: int = 8, n_classes: int = 3,
                 batch_size: int = 64, noise_std: float = 0.0):
        self.features = np.asarray(features, dtype=np.float64)  # (N, n, f)
        self.labels = np.asarray(labels, dtype=np.int64)        # (N, n) class ids
        if self.features.ndim != 3 or self.labels.shape != self.features.shape[:2]:
            raise InvalidInputError("features must be (N, n, f) with labels (N, n)")
        self.hidden = int(hidden)
        self.n_classes = int(n_classes)
        self.batch_size = int(batch_size)
        self.noise_std = float(noise_std)

    @property
    def n_agents(self) -> int:
        return self.features.shape[0]

    @property
    def n_samples(self) -> int:
        return self.features.shape[1]

    @property
    def n_features(self) -> int:
        return self.features.shape[2]

    @property
    def dim(self) -> int:
        h, f, k = self.hidden, self.n_features, self.n_classes
        return h * f + h + k * h + k

    def _unpack(self, x):
        h, f, k = self.hidden, self.n_features, self.n_classes
        w1 = x[: h * f].reshape(h, f)
        b1 = x[h * f: h * f + h]
        w2 = x[h * f + h: h * f + h + k * h].reshape(k, h)
        b2 = x[h * f + h + k * h:]
        return w1, b1, w2, b2

    def _forward(self, X, x):
        w1, b1, w2, b2 = self._unpack(x)
        a = np.tanh(X @ w1.T + b1)
        logits = a @ w2.T + b2
        logits -= logits.max(axis=1, keepdims=True)
        expl = np.exp(logits)
        probs = expl / expl.sum(axis=1, keepdims=True)
        return a, probs

    def _grad_on(self, X, y, x):
        n = X.shape[0]
        w1, b1, w2, b2 = self._unpack(x)
        a, probs = self._forward(X, x)
        delta = probs
        delta[np.arange(n), y] -= 1.0
        delta /= n
        gw2 = delta.T @ a
        gb2 = delta.sum(axis=0)
        back = (delta @ w2) * (1.0 - a * a)
        gw1 = back.T @ X
        gb1 = back.sum(axis=0)
        return np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])

    def exact_gradient(self, agent: int, x: np.ndarray) -> np.ndarray:
        _check_agent(self, agent)
        x = _check_dim(self, x)
        return self._grad_on(self.features[agent], self.labels[agent], x)

    def gradient(self, agent: int, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        _check_agent(self, agent)
        x = _check_dim(self, x)
        if self.batch_size >= self.n_samples:
            g = self._grad_on(self.features[agent], self.labels[agent], x)
        else:
            idx = rng.integers(0, self.n_samples, size=self.batch_size)
            g = self._grad_on(self.features[agent][idx], self.labels[agent][idx], x)
        if self.noise_std > 0.0:
            g = g + self.noise_std * rng.standard_normal(self.dim)
        return g

    def loss(self, agent: int, x: np.ndarray) -> float:
        _check_agent(self, agent)
        x = _check_dim(self, x)
        X, y = self.features[agent], self.labels[agent]
        _, probs = self._forward(X, x)
        p = probs[np.arange(X.shape[0]), y]
        return float(-np.mean(np.log(np.maximum(p, 1e-300))))

    def global_loss(self, x: np.ndarray) -> float:
        return float(np.mean([self.loss(i, x) for i in range(self.n_agents)]))

    def global_gradient(self, x: np.ndarray) -> np.ndarray:
        g = np.zeros(self.dim)
        for i in range(self.n_agents):
            g += self.exact_gradient(i, x)
        return g / self.n_agents

    def constants(self, x0: np.ndarray, rng=None) -> ProblemConstants:
        return _estimate_constants_sampled(self, x0, rng, smoothness_cap=None)


def _estimate_constants_sampled(obj, x0, rng, smoothness_cap=None,
                                n_points: int = 32, n_draws: int = 32) -> ProblemConstants:
    """Sampled estimates of (L, sigma, zeta, init_gap) for dataset objectives."""
    x0 = _check_dim(obj, x0)
    rng = rng if rng is not None else np.random.default_rng(0)
    scale = 1.0 + float(np.linalg.norm(x0))
    points = x0 + scale * rng.standard_normal((n_points, obj.dim))
    points[0] = x0

    if smoothness_cap is not None:
        L = smoothness_cap
    else:
        L = 0.0
        for p in points:
            q = p + 0.1 * scale * rng.standard_normal(obj.dim)
            dist = float(np.linalg.norm(q - p))
            if dist == 0.0:
                continue
            for i in range(obj.n_agents):
                gp = obj.exact_gradient(i, p)
                gq = obj.exact_gradient(i, q)
                L = max(L, float(np.linalg.norm(gp - gq)) / dist)
        L *= 1.5  # sampled ratios under-estimate; widen

    sigma_sq = 0.0
    for p in points[: min(8, n_points)]:
        for i in range(obj.n_agents):
            exact = obj.exact_gradient(i, p)
            dev = 0.0
            for _ in range(n_draws):
                g = obj.gradient(i, p, rng)
                dev += float(np.sum((g - exact) ** 2))
            sigma_sq = max(sigma_sq, dev / n_draws)

    zeta = 0.0
    for p in points:
        gbar = obj.global_gradient(p)
        for i in range(obj.n_agents):
            zeta = max(zeta, float(np.linalg.norm(obj.exact_gradient(i, p) - gbar)))

    res = scipy.optimize.minimize(
        obj.global_loss, x0, jac=obj.global_gradient, method="L-BFGS-B",
        options={"maxiter": 500},
    )
    best = min(float(res.fun), obj.global_loss(x0))
    return ProblemConstants(
        L=L, sigma=math.sqrt(sigma_sq), zeta=zeta,
        init_gap=max(obj.global_loss(x0) - best, 0.0), exact=False,
    )


# ---------------------------------------------------------------------------
# module-level operation surface

def gradient(obj, agent: int, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Stochastic gradient of agent ``agent``'s local objective at ``x``."""
    return obj.gradient(agent, x, rng)


def loss(obj, agent: int | None, x: np.ndarray) -> float:
    """Local loss of one agent, or the network mean when ``agent`` is None."""
    if agent is None:
        return obj.global_loss(x)
    return obj.loss(agent, x)


def local_batch_train(obj, agent: int, x: np.ndarray, batches: int, step: float,
                      rng: np.random.Generator, at: float = 0.0) -> LocalUpdate:
    """Train ``batches`` gradient steps from ``x`` and return the delta.

    The reference point ``x`` is never mutated; the caller decides what to
    do with the produced update.
    """
    if step <= 0.0:
        raise InvalidInputError("step must be > 0")
    if batches < 1:
        raise InvalidInputError("batches must be >= 1")
    x = _check_dim(obj, x)
    _check_agent(obj, agent)

    if isinstance(obj, Quadratic):
        noise = obj.draw_noise(batches, rng)
        y = _kernels.quad_chain(x, obj.centers[agent], step, noise)
        if not np.all(np.isfinite(y)):
            # replay with the same noise to locate the first bad step
            z = x.copy()
            with np.errstate(over="ignore", invalid="ignore"):
                for b in range(batches):
                    z = z - step * (z - obj.centers[agent] + noise[b])
                    if not np.all(np.isfinite(z)):
                        raise NumericalOverflowError(
                            f"non-finite model at batch {b}", batch_index=b)
            raise NumericalOverflowError("non-finite model", batch_index=batches - 1)
        return LocalUpdate(delta=y - x, producer=agent, produced_at=at)

    y = x.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for b in range(batches):
            y = y - step * obj.gradient(agent, y, rng)
            if not np.all(np.isfinite(y)):
                raise NumericalOverflowError(f"non-finite model at batch {b}",
                                             batch_index=b)
    return LocalUpdate(delta=y - x, producer=agent, produced_at=at)


def estimate_constants(obj, x0: np.ndarray, rng=None) -> ProblemConstants:
    """Closed-form constants for quadratics, sampled estimates otherwise."""
    return obj.constants(x0, rng)


# ---------------------------------------------------------------------------
# seeded generators

def make_quadratic(n_agents: int, dim: int, spread: float, noise_std: float,
                   rng: np.random.Generator) -> Quadratic:
    """Quadratic family with centers drawn N(0, spread^2) per coordinate."""
    if n_agents < 1 or dim < 1:
        raise InvalidInputError("n_agents and dim must be >= 1")
    centers = spread * rng.standard_normal((n_agents, dim))
    return Quadratic(centers, noise_std=noise_std)


def make_logistic(n_agents: int, n_features: int, samples_per_agent: int,
                  batch_size: int, heterogeneity: float, noise_std: float,
                  rng: np.random.Generator) -> Logistic:
    """Two Gaussian blobs per agent, class means shifted per agent.

    ``heterogeneity`` scales a per-agent offset of the blob means, which is
    what makes the cross-agent gradient divergence nonzero.
    """
    base = rng.standard_normal(n_features)
    base /= max(np.linalg.norm(base), 1e-12)
    X = np.empty((n_agents, samples_per_agent, n_features))
    y = np.empty((n_agents, samples_per_agent))
    for i in range(n_agents):
        shift = heterogeneity * rng.standard_normal(n_features) / math.sqrt(n_features)
        labels = (rng.random(samples_per_agent) < 0.5).astype(np.float64)
        signs = 2.0 * labels - 1.0
        X[i] = signs[:, None] * (base + shift) + rng.standard_normal(
            (samples_per_agent, n_features))
        y[i] = labels
    return Logistic(X, y, batch_size=batch_size, noise_std=noise_std)


def make_mlp(n_agents: int, n_features: int, n_classes: int, hidden: int,
             samples_per_agent: int, batch_size: int, heterogeneity: float,
             noise_std: float, rng: np.random.Generator) -> TinyMLP:
    """Gaussian blob multi-class data with per-agent mean shifts."""
    means = 2.0 * rng.standard_normal((n_classes, n_features))
    X = np.empty((n_agents, samples_per_agent, n_features))
    y = np.empty((n_agents, samples_per_agent), dtype=np.int64)
    for i in range(n_agents):
        shift = heterogeneity * rng.standard_normal(n_features) / math.sqrt(n_features)
        labels = rng.integers(0, n_classes, size=samples_per_agent)
        X[i] = means[labels] + shift + rng.standard_normal((samples_per_agent, n_features))
        y[i] = labels
    return TinyMLP(X, y, hidden=hidden, n_classes=n_classes,
                   batch_size=batch_size, noise_std=noise_std)


def build_objective(cfg) -> "Quadratic | Logistic | TinyMLP":
    """Construct the objective described by a SimulationConfig."""
    rng = seeds.substream(cfg.seed, seeds.DATA)
    if cfg.objective == "quadratic":
        return make_quadratic(cfg.n_agents, cfg.dim, cfg.center_spread, cfg.noise_std, rng)
    if cfg.objective == "logistic":
        return make_logistic(cfg.n_agents, cfg.features, cfg.samples_per_agent,
                             cfg.batch_size, cfg.heterogeneity, cfg.noise_std, rng)
    if cfg.objective == "mlp":
        return make_mlp(cfg.n_agents, cfg.features, cfg.classes, cfg.hidden,
                        cfg.samples_per_agent, cfg.batch_size, cfg.heterogeneity,
                        cfg.noise_std, rng)
    raise InvalidInputError(f"unknown objective kind {cfg.objective!r}")
