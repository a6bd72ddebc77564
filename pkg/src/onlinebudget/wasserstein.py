"""Wasserstein distances under the sup-norm parameter metric.

Discrete measures are compared by solving the transport LP. Continuous
laws in the shipped scenarios differ only in the reward marginal (the
consumption law is shared), and coupling consumptions identically is
then optimal, so their distance is the 1-D quantile integral of the
reward laws.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .lp import LpProblem, LpStatus, lp_solve
from .model import ArrivalParameter, DistributionSchedule, FiniteSupport, Mixture, PhaseDistribution

DEFAULT_GRID = 10_000
WEIGHT_TOL = 1e-12


class WassersteinError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Atoms ``(rewards[j], consumption[j])`` with weights; duplicates merged."""

    rewards: np.ndarray
    consumption: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rewards, dtype=float).reshape(-1)
        a = np.asarray(self.consumption, dtype=float).reshape(r.size, -1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.size != r.size:
            raise ValueError("one weight per atom required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError("weights must be nonnegative and sum to 1")
        keys = np.column_stack([r, a])
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        merged = np.bincount(inv.reshape(-1), weights=w, minlength=uniq.shape[0])
        object.__setattr__(self, "rewards", uniq[:, 0].copy())
        object.__setattr__(self, "consumption", uniq[:, 1:].copy())
        object.__setattr__(self, "weights", merged)

    @classmethod
    def from_points(cls, points: Sequence[ArrivalParameter], weights) -> "DiscreteMeasure":
        r = np.array([p.reward for p in points], dtype=float)
        a = np.array([p.consumption for p in points], dtype=float).reshape(len(points), -1)
        return cls(r, a, weights)

    @classmethod
    def from_support(cls, fs: FiniteSupport) -> "DiscreteMeasure":
        return cls(fs.rewards, fs.consumption, fs.probs)

    @property
    def size(self) -> int:
        return self.rewards.size

    @property
    def m(self) -> int:
        return self.consumption.shape[1]


def rho_matrix(mu: DiscreteMeasure, nu: DiscreteMeasure) -> np.ndarray:
    cost = np.abs(mu.rewards[:, None] - nu.rewards[None, :])
    if mu.m:
        cost = np.maximum(cost, np.abs(mu.consumption[:, None, :] - nu.consumption[None, :, :]).max(axis=2))
    return cost


def wasserstein_discrete(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Optimal transport cost between two discrete measures.

    Equal-size measures with uniform weights are an assignment problem
    (an optimal coupling sits at a permutation), solved exactly by
    ``linear_sum_assignment``; everything else goes through the LP.
    """
    if mu.m != nu.m:
        raise ValueError(f"dimension mismatch: {mu.m} vs {nu.m}")
    cost = rho_matrix(mu, nu)
    n, k = cost.shape
    if n == k and np.allclose(mu.weights, 1.0 / n, rtol=0, atol=1e-15) and np.allclose(nu.weights, 1.0 / k, rtol=0, atol=1e-15):
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].sum() / n)
    # Row sums <= mu and column sums >= nu; equal total mass makes both tight.
    A = np.zeros((n + k, n * k))
    for j in range(n):
        A[j, j * k:(j + 1) * k] = 1.0
    for c in range(k):
        A[n + c, c::k] = -1.0
    b = np.concatenate([mu.weights, -nu.weights])
    sol = lp_solve(LpProblem(-cost.reshape(-1), A, b, 0.0, np.inf))
    if sol.status != LpStatus.OPTIMAL:
        raise WassersteinError(f"transport LP returned {sol.status.value}")
    return max(0.0, -sol.objective_value)


def total_variation_discrete(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    if mu.m != nu.m:
        raise ValueError(f"dimension mismatch: {mu.m} vs {nu.m}")
    both = DiscreteMeasure(
        np.concatenate([mu.rewards, nu.rewards]),
        np.vstack([mu.consumption, nu.consumption]),
        np.concatenate([mu.weights, np.zeros(nu.size)]),
    )
    keys = np.column_stack([both.rewards, both.consumption])

    def on(meas):
        out = np.zeros(both.size)
        mk = np.column_stack([meas.rewards, meas.consumption])
        for row, w in zip(mk, meas.weights):
            out[np.flatnonzero(np.all(keys == row, axis=1))[0]] += w
        return out

    return float(min(1.0, 0.5 * np.abs(on(mu) - on(nu)).sum()))


def wasserstein_1d_reward(law_a, law_b, grid: int = DEFAULT_GRID) -> float:
    """Midpoint-rule quantile integral of |F_a^-1(u) - F_b^-1(u)| over (0,1)."""
    if grid < 2:
        raise ValueError("grid must be at least 2")
    if law_a == law_b:
        return 0.0
    u = (np.arange(grid) + 0.5) / grid
    return float(np.mean(np.abs(law_a.quantile(u) - law_b.quantile(u))))


def phase_distance(d1: PhaseDistribution, d2: PhaseDistribution, grid: int = DEFAULT_GRID) -> float:
    if d1.is_finite != d2.is_finite:
        raise WassersteinError("cannot compare finite-support and continuous phases")
    if d1.is_finite:
        return wasserstein_discrete(DiscreteMeasure.from_support(d1.consumption_law), DiscreteMeasure.from_support(d2.consumption_law))
    if d1.consumption_law != d2.consumption_law:
        raise WassersteinError("continuous distances need identical consumption laws")
    return wasserstein_1d_reward(d1.reward_law, d2.reward_law, grid)


def _segments(*schedules: DistributionSchedule):
    """Maximal period ranges on which every schedule stays in one phase."""
    T = schedules[0].horizon
    cuts = sorted(set().union(*[set(s.starts.tolist()) for s in schedules]))
    ends = cuts[1:] + [T + 1]
    maps = [s.phase_of_period() for s in schedules]
    for start, end in zip(cuts, ends):
        yield start, end - start, [int(mp[start - 1]) for mp in maps]


def per_phase_distances(true_sched: DistributionSchedule, prior_sched: DistributionSchedule, grid: int = DEFAULT_GRID) -> list[dict]:
    if true_sched.horizon != prior_sched.horizon:
        raise ValueError("schedules must share the horizon")
    cache: dict = {}
    out = []
    for start, length, (i, j) in _segments(true_sched, prior_sched):
        if (i, j) not in cache:
            cache[(i, j)] = phase_distance(true_sched.law(i), prior_sched.law(j), grid)
        out.append({"start": start, "length": length, "distance": cache[(i, j)]})
    return out


def wbdb(true_sched: DistributionSchedule, prior_sched: DistributionSchedule, grid: int = DEFAULT_GRID) -> float:
    """Cumulative deviation sum_t W(P_t, Phat_t)."""
    return float(sum(seg["length"] * seg["distance"] for seg in per_phase_distances(true_sched, prior_sched, grid)))


def uniform_mixture(sched: DistributionSchedule) -> PhaseDistribution:
    """The average law (1/T) sum_t P_t as a single phase."""
    w = sched.lengths / sched.horizon
    if sched.is_finite:
        fs = sched.support_points()
        probs = sum(wk * d.consumption_law.probs for wk, (_, d) in zip(w, sched.phases))
        probs = probs / probs.sum()
        return PhaseDistribution(None, FiniteSupport(fs.rewards, fs.consumption, probs))
    cons = sched.law(0).consumption_law
    if any(d.consumption_law != cons for _, d in sched.phases):
        raise WassersteinError("continuous mixtures need a shared consumption law")
    laws = [d.reward_law for _, d in sched.phases]
    if all(law == laws[0] for law in laws):
        return PhaseDistribution(laws[0], cons)
    comps: dict = {}
    for wk, law in zip(w, laws):
        comps[law] = comps.get(law, 0.0) + wk
    total = sum(comps.values())
    return PhaseDistribution(Mixture(tuple((wk / total, law) for law, wk in comps.items())), cons)


def wbnb(true_sched: DistributionSchedule, grid: int = DEFAULT_GRID) -> float:
    """Non-stationarity sum_t W(P_t, Pbar_T) with Pbar_T the uniform mixture."""
    mix = uniform_mixture(true_sched)
    total = 0.0
    cache: dict = {}
    for (start, d), length in zip(true_sched.phases, true_sched.lengths):
        key = id(d)
        if key not in cache:
            cache[key] = phase_distance(d, mix, grid)
        total += length * cache[key]
    return float(total)


def quantile_atoms(law, n: int) -> DiscreteMeasure:
    """n equally weighted atoms at the midpoint quantiles of a reward law (m = 0)."""
    u = (np.arange(n) + 0.5) / n
    return DiscreteMeasure(law.quantile(u), np.zeros((n, 0)), np.full(n, 1.0 / n))
