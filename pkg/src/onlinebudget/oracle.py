"""Offline benchmarks and dual machinery.

The dual function of the expectation-relaxed problem is

    L(p) = c @ p + sum_t E_t[ max(0, r - a @ p) ]

over p >= 0. Continuous schedules are handled by sample average
approximation (one sample set per phase, reused for every period in
that phase) and minimized by projected subgradient descent. Finite
support schedules have exact expectations and are solved as the
equivalent linear program, whose duals are the minimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lp import Basis, LpProblem, LpSolution, LpStatus, lp_solve
from .model import ArrivalParameter, DistributionSchedule, FiniteSupport, Instance, SampledPath, sample_path, trial_seed

TIE_TOL = 1e-12


class OracleError(RuntimeError):
    pass


def h_maximize(p, theta: ArrivalParameter) -> tuple[float, float]:
    """Lagrangian maximizer for the accept/reject family; ties reject."""
    margin = theta.reward - float(np.dot(theta.consumption, p))
    if margin > TIE_TOL:
        return 1.0, margin
    return 0.0, max(0.0, margin)


@dataclass
class SolverConfig:
    max_iter: int = 5000
    tol: float = 1e-6
    check_every: int = 250
    step_multiplier: float = 1.0
    seed: int = 0
    clip: bool = True
    method: str = "subgradient"  # or "lp" (exact SAA minimizer)


@dataclass
class DualSolveReport:
    p_star: np.ndarray
    dual_value: float
    iterations: int
    saa_samples: int
    gamma: np.ndarray
    converged: bool = True
    gamma_total_se: Optional[np.ndarray] = None
    method: str = "subgradient"
    type_fractions: Optional[np.ndarray] = field(default=None, repr=False)
    basis: Optional[Basis] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "p_star": self.p_star.tolist(),
            "dual_value": self.dual_value,
            "iterations": self.iterations,
            "saa_samples": self.saa_samples,
            "converged": self.converged,
            "method": self.method,
            "gamma": self.gamma.tolist(),
        }


class DualProblem:
    """Expectation data for L(p) over periods ``start..T`` of a schedule.

    For continuous schedules the per-phase samples are drawn once at
    construction; re-solving on a tail with new capacities reuses them.
    """

    def __init__(self, schedule: DistributionSchedule, m: int, saa_samples: int = 10_000, seed: int = 0, clip: bool = True):
        if saa_samples < 1:
            raise ValueError("saa_samples must be at least 1")
        self.schedule = schedule
        self.m = m
        self.T = schedule.horizon
        self.saa_samples = saa_samples
        self.finite = schedule.is_finite
        self.phase_of = schedule.phase_of_period()
        if self.finite:
            fs = schedule.support_points()
            self.support = fs
            self._cons_t = np.ascontiguousarray(fs.consumption.T)
            self.probs = schedule.period_probs()
            # suffix[t] = expected type counts over periods t..T-1 (0-based)
            self.suffix = np.vstack([np.cumsum(self.probs[::-1], axis=0)[::-1], np.zeros(fs.n)])
        else:
            rng = np.random.default_rng(seed)
            self.rewards = []
            self.cons = []
            for _, d in schedule.phases:
                r = d.reward_law.sample(rng, saa_samples)
                a = d.consumption_law.sample(rng, (saa_samples, m))
                if clip:
                    a = np.clip(a, 0.0, 1.0)
                self.rewards.append(r)
                self.cons.append(a)

    # -- weights

    def phase_weights(self, start: int = 1) -> np.ndarray:
        """Number of periods of each phase within start..T (1-based)."""
        return np.bincount(self.phase_of[start - 1:], minlength=len(self.schedule.phases)).astype(float)

    def expected_counts(self, start: int = 1) -> np.ndarray:
        return self.suffix[start - 1].copy()

    # -- dual function

    def value(self, p, capacities, start: int = 1) -> float:
        p = np.asarray(p, dtype=float)
        total = float(np.dot(capacities, p))
        if self.finite:
            return float(self.finite_values(p[None, :], np.asarray(capacities, dtype=float)[None, :], start)[0])
        for w, r, a in zip(self.phase_weights(start), self.rewards, self.cons):
            if w:
                total += w * float(np.mean(np.maximum(0.0, r - a @ p)))
        return total

    def subgradient(self, p, capacities, start: int = 1) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if self.finite:
            return self.finite_subgradients(p[None, :], np.asarray(capacities, dtype=float)[None, :], start)[0]
        return np.asarray(capacities, dtype=float) - self.expected_consumption(p, start).sum(axis=0)

    def expected_consumption(self, p, start: int = 1) -> np.ndarray:
        """Per-phase expected consumption times phase weight (tie rejects)."""
        p = np.asarray(p, dtype=float)
        if self.finite:
            acc = (self.support.rewards - self.support.consumption @ p) > TIE_TOL
            return (self.expected_counts(start) * acc)[:, None] * self.support.consumption
        rows = []
        for w, r, a in zip(self.phase_weights(start), self.rewards, self.cons):
            acc = (r - a @ p) > TIE_TOL
            rows.append(w * (a * acc[:, None]).mean(axis=0))
        return np.array(rows)

    def phase_gamma(self, p) -> tuple[np.ndarray, np.ndarray]:
        """Per-phase expected consumption per period and its SAA standard error."""
        means, ses = [], []
        for r, a in zip(self.rewards, self.cons):
            g = a * ((r - a @ p) > TIE_TOL)[:, None]
            means.append(g.mean(axis=0))
            ses.append(g.std(axis=0, ddof=1) / np.sqrt(len(r)) if len(r) > 1 else np.zeros(self.m))
        return np.array(means), np.array(ses)

    # -- finite support, many price vectors at once
    #
    # Every reduction runs over the last (contiguous) axis, so a row gives
    # the same bits whether it is evaluated alone or inside a batch.

    def finite_margins(self, P: np.ndarray) -> np.ndarray:
        """r_j - a_j . p for each row p of P; shape (N, types)."""
        return self.support.rewards[None, :] - (P[:, None, :] * self.support.consumption[None, :, :]).sum(axis=-1)

    def finite_values(self, P: np.ndarray, C: np.ndarray, start: int = 1) -> np.ndarray:
        h = np.maximum(0.0, self.finite_margins(P))
        return (C * P).sum(axis=-1) + (self.suffix[start - 1][None, :] * h).sum(axis=-1)

    def finite_subgradients(self, P: np.ndarray, C: np.ndarray, start: int = 1) -> np.ndarray:
        acc = self.finite_margins(P) > TIE_TOL
        return C - self.finite_rows(self.suffix[start - 1][None, :] * acc)

    def finite_rows(self, W: np.ndarray) -> np.ndarray:
        """sum_j W[., j] a_j for each row of type weights W; shape (N, m)."""
        return (W[:, None, :] * self._cons_t[None, :, :]).sum(axis=-1)

    def finite_gamma(self, accept: np.ndarray, start: int = 1, stop: Optional[int] = None) -> np.ndarray:
        """Plan rows for periods start..stop (1-based, inclusive) under an accept mask."""
        probs = self.probs[start - 1:stop]
        return self.finite_rows(probs * accept[None, :])

    # -- exact SAA LP

    def saa_lp(self, capacities, start: int = 1, warm_start: Optional[Basis] = None) -> LpSolution:
        """The weighted knapsack LP whose duals minimize the (sampled) dual function."""
        if self.finite:
            return deterministic_ub_finite(capacities, self.support, self.expected_counts(start), warm_start)
        w = self.phase_weights(start)
        r = np.concatenate([wk / len(rk) * rk for wk, rk in zip(w, self.rewards)])
        A = np.vstack([wk / len(rk) * ak for wk, rk, ak in zip(w, self.rewards, self.cons)])
        return lp_solve(LpProblem(r, A.T, capacities, 0.0, 1.0), warm_start=warm_start)


def deterministic_ub_finite(remaining, support: FiniteSupport, expected_counts, warm_start: Optional[Basis] = None) -> LpSolution:
    """max sum_j r_j z_j  s.t.  sum_j a_j z_j <= remaining,  0 <= z_j <= E[H_j]."""
    remaining = np.maximum(np.asarray(remaining, dtype=float), 0.0)
    ub = np.maximum(np.asarray(expected_counts, dtype=float), 0.0)
    sol = lp_solve(LpProblem(support.rewards, support.consumption.T, remaining, 0.0, ub), warm_start=warm_start)
    if sol.status != LpStatus.OPTIMAL:
        raise OracleError(f"finite-support upper bound LP returned {sol.status.value}")
    return sol


def expected_type_counts(schedule: DistributionSchedule, start: int = 1) -> np.ndarray:
    return schedule.period_probs()[start - 1:].sum(axis=0)


def dual_solve(
    schedule: DistributionSchedule,
    capacities,
    saa_samples: int = 10_000,
    config: Optional[SolverConfig] = None,
    start: int = 1,
    problem: Optional[DualProblem] = None,
    warm_start=None,
) -> DualSolveReport:
    """Minimize the dual function over p >= 0 on periods ``start..T``.

    The returned plan has one row per period in ``start..T``: the expected
    consumption at the minimizer under that period's law.
    """
    config = config or SolverConfig()
    capacities = np.asarray(capacities, dtype=float)
    m = capacities.size
    if problem is None:
        problem = DualProblem(schedule, m, saa_samples, config.seed, config.clip)
    if problem.finite and config.method == "lp":
        return _solve_finite(problem, capacities, start, warm_start)
    if config.method == "lp":
        return _solve_saa_lp(problem, capacities, start, warm_start)
    return _solve_subgradient(problem, capacities, start, config, warm_start)


def _solve_finite(problem: DualProblem, capacities, start, warm_start) -> DualSolveReport:
    counts = problem.expected_counts(start)
    sol = deterministic_ub_finite(capacities, problem.support, counts, warm_start if isinstance(warm_start, Basis) else None)
    p = np.maximum(sol.dual, 0.0)
    frac = np.divide(sol.primal, counts, out=np.zeros_like(counts), where=counts > 0)
    frac = np.clip(frac, 0.0, 1.0)
    gamma = (problem.probs[start - 1:] * frac) @ problem.support.consumption
    return DualSolveReport(
        p_star=p,
        dual_value=problem.value(p, capacities, start),
        iterations=sol.iterations,
        saa_samples=0,
        gamma=gamma,
        converged=True,
        gamma_total_se=np.zeros(capacities.size),
        method="exact",
        type_fractions=frac,
        basis=sol.basis,
    )


def _continuous_report(problem, p, capacities, start, iterations, converged, method, basis=None):
    if problem.finite:
        acc = problem.finite_margins(p[None, :])[0] > TIE_TOL
        return DualSolveReport(
            p_star=p,
            dual_value=problem.value(p, capacities, start),
            iterations=iterations,
            saa_samples=0,
            gamma=problem.finite_gamma(acc, start),
            converged=converged,
            gamma_total_se=np.zeros(capacities.size),
            method=method,
            type_fractions=acc.astype(float),
        )
    means, ses = problem.phase_gamma(p)
    w = problem.phase_weights(start)
    gamma = means[problem.phase_of[start - 1:]]
    se = np.sqrt(((w[:, None] * ses) ** 2).sum(axis=0))
    return DualSolveReport(
        p_star=p,
        dual_value=problem.value(p, capacities, start),
        iterations=iterations,
        saa_samples=problem.saa_samples,
        gamma=gamma,
        converged=converged,
        gamma_total_se=se,
        method=method,
        basis=basis,
    )


def _solve_saa_lp(problem, capacities, start, warm_start) -> DualSolveReport:
    sol = problem.saa_lp(capacities, start, warm_start if isinstance(warm_start, Basis) else None)
    if sol.status != LpStatus.OPTIMAL:
        raise OracleError(f"sampled dual LP returned {sol.status.value}")
    p = np.maximum(sol.dual, 0.0)
    return _continuous_report(problem, p, capacities, start, sol.iterations, True, "lp", sol.basis)


def _solve_subgradient(problem, capacities, start, config: SolverConfig, warm_start) -> DualSolveReport:
    if problem.finite:
        m = capacities.size
        p0 = np.zeros(m) if warm_start is None or isinstance(warm_start, Basis) else np.asarray(warm_start, float)
        P, _, iters, conv = finite_subgradient_batch(problem, capacities[None, :], start, config, p0[None, :])
        return _continuous_report(problem, P[0], capacities, start, int(iters[0]), bool(conv[0]), "subgradient")
    n_periods = problem.T - start + 1
    scale = 1.0 / n_periods
    eta0 = config.step_multiplier * max(float(np.max(capacities)) * scale, 1e-12)
    m = capacities.size
    p = np.zeros(m) if warm_start is None or isinstance(warm_start, Basis) else np.maximum(np.asarray(warm_start, float), 0.0)

    avg = p.copy()
    avg_count = 0
    best_p, best_val = p.copy(), problem.value(p, capacities, start)
    prev_val = np.inf
    converged = False
    k = 0
    for k in range(1, config.max_iter + 1):
        g = problem.subgradient(p, capacities, start) * scale
        p = np.maximum(0.0, p - eta0 / np.sqrt(k) * g)
        # restart the running average at each halving point
        if k & (k - 1) == 0:
            avg = p.copy()
            avg_count = 1
        else:
            avg_count += 1
            avg += (p - avg) / avg_count
        if k % config.check_every == 0 or k == config.max_iter:
            for cand in (avg, p):
                v = problem.value(cand, capacities, start)
                if v < best_val:
                    best_val, best_p = v, cand.copy()
            if abs(prev_val - best_val) <= config.tol * (1.0 + abs(best_val)):
                converged = True
                break
            prev_val = best_val
    return _continuous_report(problem, best_p, capacities, start, k, converged, "subgradient")


def finite_subgradient_batch(problem: DualProblem, C: np.ndarray, start: int, config: SolverConfig, P0: np.ndarray):
    """Projected subgradient on a finite-support dual for N capacity vectors at once.

    Each row follows exactly the iteration it would follow alone and stops
    at its own convergence check. Returns (best prices, best values,
    iterations, converged flags).
    """
    C = np.asarray(C, dtype=float)
    N = C.shape[0]
    scale = 1.0 / (problem.T - start + 1)
    eta0 = config.step_multiplier * np.maximum(C.max(axis=1) * scale, 1e-12)
    P = np.maximum(np.asarray(P0, dtype=float), 0.0).copy()
    avg = P.copy()
    avg_count = 0
    best_p = P.copy()
    best_val = problem.finite_values(P, C, start)
    prev_val = np.full(N, np.inf)
    active = np.ones(N, dtype=bool)
    iters = np.zeros(N, dtype=int)
    converged = np.zeros(N, dtype=bool)
    for k in range(1, config.max_iter + 1):
        idx = np.flatnonzero(active)
        Pa = P[idx]
        G = problem.finite_subgradients(Pa, C[idx], start) * scale
        Pa = np.maximum(0.0, Pa - (eta0[idx] / np.sqrt(k))[:, None] * G)
        P[idx] = Pa
        # restart the running average at each halving point
        if k & (k - 1) == 0:
            avg[idx] = Pa
            avg_count = 1
        else:
            avg_count += 1
            avg[idx] = avg[idx] + (Pa - avg[idx]) / avg_count
        if k % config.check_every == 0 or k == config.max_iter:
            for cand in (avg[idx], Pa):
                v = problem.finite_values(cand, C[idx], start)
                better = v < best_val[idx]
                best_val[idx[better]] = v[better]
                best_p[idx[better]] = cand[better]
            bv = best_val[idx]
            done = np.abs(prev_val[idx] - bv) <= config.tol * (1.0 + np.abs(bv))
            iters[idx] = k
            converged[idx[done]] = True
            prev_val[idx] = bv
            active[idx[done]] = False
            if not active.any():
                break
    return best_p, best_val, iters, converged


def hindsight_optimum(path: SampledPath, capacities) -> tuple[float, np.ndarray]:
    """Full-information LP value on a realized path and its optimal fractions."""
    capacities = np.asarray(capacities, dtype=float)
    sol = lp_solve(LpProblem(path.rewards, path.consumption.T, capacities, 0.0, 1.0))
    if sol.status != LpStatus.OPTIMAL:
        raise OracleError(f"hindsight LP returned {sol.status.value}")
    return sol.objective_value, sol.primal


@dataclass
class UbEstimate:
    mean_hindsight: float
    std_error: float
    dual_value: float
    trials: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def ub_estimate(instance: Instance, trials: int, seed: int, saa_samples: int = 10_000, config: Optional[SolverConfig] = None) -> UbEstimate:
    """Monte Carlo mean of the hindsight optimum next to the dual value of the true schedule."""
    vals = np.array(
        [hindsight_optimum(sample_path(instance, "true", trial_seed(seed, i)), instance.capacities)[0] for i in range(trials)]
    )
    se = float(vals.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    cfg = config or SolverConfig(seed=seed, clip=instance.clip_consumption)
    rep = dual_solve(instance.true_schedule, instance.capacities, saa_samples, cfg)
    return UbEstimate(float(vals.mean()), se, rep.dual_value, trials)
