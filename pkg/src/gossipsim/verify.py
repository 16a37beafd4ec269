"""Numerical fuzz verification of the analysis inequalities.

Each check evaluates one inequality on a concrete instance with a direct
brute-force left side and the closed-form right side; the divergence
constant is always recomputed per instance as the exact maximum, which
makes the checks as stringent as the hypotheses allow.  Instance weight
rows always carry at least two contributors: the communication model
postulates a row dispersion bound strictly below one (sum of squared
weights <= rho^2 < 1), which a single-contributor row cannot satisfy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from gossipsim import seeds
from gossipsim.errors import InvalidInputError, InvalidInstanceError

SLACK_TOL = 1e-9
ROW_TOL = 1e-12


@dataclass(frozen=True)
class InequalityInstance:
    """A small quadratic network frozen at one instant.

    ``centers`` define the per-agent objectives, ``points`` the per-agent
    models; gradients are exactly ``points - centers``.  ``receiver`` owns
    the weight row ``q`` (q[receiver] == 0, sums to 1).  ``zeta`` is the
    exact maximum distance of a local gradient from the gradient mean.
    """

    n_agents: int
    dim: int
    centers: np.ndarray
    points: np.ndarray
    receiver: int
    q: np.ndarray
    zeta: float

    def gradients(self) -> np.ndarray:
        return self.points - self.centers


def _tight_zeta(grads: np.ndarray) -> float:
    gbar = grads.mean(axis=0)
    return float(np.sqrt(np.max(np.sum((grads - gbar) ** 2, axis=1))))


def make_instance(n_agents: int, dim: int, rng,
                  center_scale: float = 1.0, point_scale: float = 2.0,
                  equal_gradients: bool = False) -> InequalityInstance:
    """Random instance with a weight row over >= 2 distinct contributors."""
    if n_agents < 3:
        raise InvalidInputError("need at least 3 agents for a 2-contributor row")
    centers = center_scale * rng.standard_normal((n_agents, dim))
    if equal_gradients:
        points = centers.copy()
    else:
        points = point_scale * rng.standard_normal((n_agents, dim))
    receiver = int(rng.integers(n_agents))
    others = np.array([j for j in range(n_agents) if j != receiver])
    support = int(rng.integers(2, n_agents))
    idx = rng.choice(others, size=min(support, others.size), replace=False)
    raw = rng.random(idx.size) + 0.05
    q = np.zeros(n_agents)
    q[idx] = raw / raw.sum()
    grads = points - centers
    return InequalityInstance(n_agents=n_agents, dim=dim, centers=centers,
                              points=points, receiver=receiver, q=q,
                              zeta=_tight_zeta(grads))


def check_deviation_mixing_bound(inst: InequalityInstance) -> tuple[float, float, bool]:
    """Squared norm of the q-mixed gradient deviation vs 2*N*zeta^2/(N-4).

    Left side by direct summation over the row; requires more than four
    agents (the bound's denominator).
    """
    if inst.n_agents <= 4:
        raise InvalidInstanceError("deviation mixing bound needs n_agents > 4")
    grads = inst.gradients()
    mixed = np.zeros(inst.dim)
    for j in range(inst.n_agents):
        mixed += inst.q[j] * (grads[inst.receiver] - grads[j])
    lhs = float(mixed @ mixed)
    rhs = 2.0 * inst.n_agents * inst.zeta ** 2 / (inst.n_agents - 4)
    return lhs, rhs, lhs <= rhs + SLACK_TOL


def check_weighted_gap_bound(inst: InequalityInstance) -> tuple[float, float, bool]:
    """Weighted sum of squared gradient gaps vs 9*N*zeta^2/4 (N >= 4)."""
    if inst.n_agents < 4:
        raise InvalidInstanceError("weighted gap bound needs n_agents >= 4")
    grads = inst.gradients()
    lhs = 0.0
    for j in range(inst.n_agents):
        if j == inst.receiver:
            continue
        gap = grads[j] - grads[inst.receiver]
        lhs += inst.q[j] * float(gap @ gap)
    rhs = 9.0 * inst.n_agents * inst.zeta ** 2 / 4.0
    return lhs, rhs, lhs <= rhs + SLACK_TOL


def zeta_is_valid(inst: InequalityInstance, tol: float = 1e-12) -> bool:
    """The reported divergence constant covers every agent's deviation."""
    grads = inst.gradients()
    gbar = grads.mean(axis=0)
    dev_sq = np.sum((grads - gbar) ** 2, axis=1)
    return bool(np.all(dev_sq <= inst.zeta ** 2 + tol))


def check_smoothness(obj, points: np.ndarray, declared_L: float,
                     tol: float = SLACK_TOL) -> tuple[float, bool]:
    """Empirical gradient Lipschitz ratio vs a declared constant.

    Scans consecutive pairs of the supplied points for every agent;
    coincident pairs are skipped (the ratio is undefined there).
    """
    points = np.asarray(points, dtype=np.float64)
    worst = 0.0
    for i in range(obj.n_agents):
        for a in range(points.shape[0] - 1):
            x, y = points[a], points[a + 1]
            dist = float(np.linalg.norm(x - y))
            if dist == 0.0:
                continue
            diff = obj.exact_gradient(i, x) - obj.exact_gradient(i, y)
            worst = max(worst, float(np.linalg.norm(diff)) / dist)
    return worst, worst <= declared_L + tol


def check_row_stochastic(rows, tol: float = ROW_TOL) -> bool:
    """Every aggregation row from a trace sums to one (vacuous if empty)."""
    for row in rows:
        s = float(np.sum(row.weights))
        if abs(s - 1.0) > tol or np.any(np.asarray(row.weights) < 0.0):
            return False
    return True


def run_fuzz(n_instances: int = 1000, seed: int = 0) -> dict:
    """Fuzz both gradient-divergence inequalities on seeded random instances.

    Instance k draws from substream (seed, FUZZ, check_id, k).  Returns a
    report with violation counts and worst observed slack per check.
    """
    if n_instances < 1:
        raise InvalidInputError("n_instances must be >= 1")
    report: dict = {"seed": seed, "instances_per_check": n_instances}
    specs = [
        ("deviation_mixing", 0, 5, check_deviation_mixing_bound),
        ("weighted_gap", 1, 4, check_weighted_gap_bound),
    ]
    for name, check_id, n_min, fn in specs:
        violations = 0
        worst_slack = math.inf
        invalid_zeta = 0
        for k in range(n_instances):
            rng = seeds.substream(seed, seeds.FUZZ, check_id, k)
            n = int(rng.integers(n_min, 51))
            d = int(rng.integers(1, 9))
            inst = make_instance(n, d, rng)
            if not zeta_is_valid(inst):
                invalid_zeta += 1
            lhs, rhs, holds = fn(inst)
            worst_slack = min(worst_slack, rhs - lhs)
            if not holds:
                violations += 1
        report[name] = {
            "violations": violations,
            "worst_slack": worst_slack,
            "invalid_zeta_instances": invalid_zeta,
            "passed": violations == 0 and invalid_zeta == 0,
        }
    report["passed"] = all(report[name]["passed"] for name, *_ in specs)
    return report
