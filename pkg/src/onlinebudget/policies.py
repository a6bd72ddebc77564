"""Online policies for the accept/reject budget problem.

Every policy observes the arrival of period t, proposes a virtual action
from its current dual price, and plays it only if the remaining budget
covers the consumption in every resource (otherwise the played action
is 0). Dual-gradient policies then move the price with the virtual
consumption, accepted or not.

Two execution paths exist: per-arrival ``*_step`` functions acting on a
``PolicyState`` and a vectorized engine that runs many independent
trials at once. Both use the same arithmetic, so a trial gives the same
numbers either way.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .model import ArrivalParameter, SampledPath
from .oracle import TIE_TOL, DualProblem, DualSolveReport, SolverConfig, deterministic_ub_finite, dual_solve, finite_subgradient_batch

O2O_MULTIPLIERS = (0.25, 0.5, 1.0, 2.0, 4.0)
RESOLVE_THRESHOLD_TOL = 1e-9


class PolicyError(RuntimeError):
    pass


@dataclass
class Decision:
    action: float
    virtual_action: float
    accepted: bool
    reward: float
    consumption: np.ndarray


@dataclass
class PolicyState:
    kind: str
    dual: np.ndarray
    remaining: np.ndarray
    plan: Optional[np.ndarray]
    horizon: int
    period: int = 1
    step_size: float = 0.0
    step_schedule: str = "constant"
    batch_size: Optional[int] = None
    resolve_every: Optional[int] = None
    block_grad: Optional[np.ndarray] = None
    virtual_total: Optional[np.ndarray] = None
    max_dual: float = 0.0

    def __post_init__(self):
        m = self.remaining.size
        if self.block_grad is None:
            self.block_grad = np.zeros(m)
        if self.virtual_total is None:
            self.virtual_total = np.zeros(m)
        self.max_dual = max(self.max_dual, float(np.max(self.dual, initial=0.0)))


def _margin(reward: float, a: np.ndarray, p: np.ndarray) -> float:
    return reward - float((a * p).sum())


def step_at(step_size: float, schedule: str, t: int) -> float:
    """Step used for the update after period t (1-based)."""
    if schedule == "constant":
        return step_size
    if schedule == "sqrt_t":
        return step_size / np.sqrt(t)
    raise ValueError(f"unknown step schedule {schedule!r}")


def _play(state: PolicyState, theta: ArrivalParameter, virtual: float) -> Decision:
    a = theta.consumption
    g = a * virtual
    ok = virtual > 0 and bool(np.all(state.remaining >= g))
    if ok:
        state.remaining = state.remaining - g
        return Decision(1.0, virtual, True, theta.reward, g)
    return Decision(0.0, virtual, False, 0.0, np.zeros_like(a))


def igd_step(state: PolicyState, theta: ArrivalParameter) -> tuple[Decision, PolicyState]:
    """One period of dual gradient descent toward the plan.

    Covers IGD (plan from the prior), UGD (plan c/T) and the batched
    variant (``batch_size`` K: price frozen inside each block of K
    periods). Mutates and returns ``state``.
    """
    if state.plan is None:
        raise PolicyError("igd_step needs a consumption plan")
    t = state.period
    virtual = 1.0 if _margin(theta.reward, theta.consumption, state.dual) > TIE_TOL else 0.0
    decision = _play(state, theta, virtual)
    g = theta.consumption * virtual
    state.virtual_total = state.virtual_total + g
    state.block_grad = state.block_grad + (g - state.plan[t - 1])
    K = state.batch_size or 1
    if t % K == 0 or t == state.horizon:
        step = step_at(state.step_size, state.step_schedule, t)
        state.dual = np.maximum(0.0, state.dual + step * state.block_grad)
        state.block_grad = np.zeros_like(state.block_grad)
        state.max_dual = max(state.max_dual, float(np.max(state.dual, initial=0.0)))
    state.period = t + 1
    return decision, state


ugd_step = igd_step
bigd_step = igd_step


def fbp_step(state: PolicyState, theta: ArrivalParameter) -> tuple[Decision, PolicyState]:
    """Fixed bid price: accept iff r >= a @ p (ties accept), budget permitting."""
    virtual = 1.0 if theta.reward >= float((theta.consumption * state.dual).sum()) else 0.0
    decision = _play(state, theta, virtual)
    state.virtual_total = state.virtual_total + theta.consumption * virtual
    state.period += 1
    return decision, state


def o2o_step(state: PolicyState, theta: ArrivalParameter, dual_pool: np.ndarray, rng: np.random.Generator) -> tuple[Decision, PolicyState]:
    """Play the Lagrangian maximizer at a price drawn uniformly from the pool."""
    pool = np.atleast_2d(np.asarray(dual_pool, dtype=float))
    state.dual = pool[int(rng.integers(pool.shape[0]))]
    state.max_dual = max(state.max_dual, float(np.max(state.dual, initial=0.0)))
    virtual = 1.0 if _margin(theta.reward, theta.consumption, state.dual) > TIE_TOL else 0.0
    decision = _play(state, theta, virtual)
    state.virtual_total = state.virtual_total + theta.consumption * virtual
    state.period += 1
    return decision, state


@dataclass
class ResolveContext:
    """Prior-schedule data for re-solving from any period."""

    problem: DualProblem
    basis: object = None

    def counts(self, t: int) -> np.ndarray:
        return self.problem.expected_counts(t)


def resolve_step(state: PolicyState, theta: ArrivalParameter, ctx: ResolveContext) -> tuple[Decision, PolicyState]:
    """Re-solve the finite-support upper bound on the remaining budget and
    accept type j iff its allocation covers half its expected remaining count."""
    if theta.type_index is None:
        raise PolicyError("re-solving needs finite-support arrivals")
    t = state.period
    counts = ctx.counts(t)
    sol = deterministic_ub_finite(state.remaining, ctx.problem.support, counts, ctx.basis)
    ctx.basis = sol.basis
    j = theta.type_index
    virtual = 1.0 if sol.primal[j] >= 0.5 * counts[j] - RESOLVE_THRESHOLD_TOL else 0.0
    decision = _play(state, theta, virtual)
    state.virtual_total = state.virtual_total + theta.consumption * virtual
    state.period = t + 1
    return decision, state


def igd_resolve_step(state: PolicyState, theta: ArrivalParameter, ctx: ResolveContext, config: Optional[SolverConfig] = None) -> tuple[Decision, PolicyState]:
    """Gradient step as in ``igd_step``, except that at periods divisible by
    ``resolve_every`` the price and the plan tail are recomputed from the
    remaining budget and the prior tail (the previous price is discarded)."""
    t = state.period
    every = state.resolve_every
    if every and t % every == 0:
        config = config or SolverConfig()
        warm = ctx.basis if config.method == "lp" else state.dual
        rep = dual_solve(ctx.problem.schedule, state.remaining, ctx.problem.saa_samples, config, start=t, problem=ctx.problem, warm_start=warm)
        if rep.basis is not None:
            ctx.basis = rep.basis
        state.dual = rep.p_star.copy()
        plan = state.plan.copy()
        plan[t - 1:] = rep.gamma
        state.plan = plan
        state.block_grad = np.zeros_like(state.block_grad)
        state.max_dual = max(state.max_dual, float(np.max(state.dual, initial=0.0)))
    return igd_step(state, theta)


# ---------------------------------------------------------------- runs


@dataclass
class RunResult:
    reward: float
    remaining: np.ndarray
    max_dual: float
    virtual_total: np.ndarray
    final_dual: np.ndarray
    accepted: int
    dual_traj: Optional[np.ndarray] = field(default=None, repr=False)


def run_dual_engine(
    rewards: np.ndarray,
    consumption: np.ndarray,
    capacities: np.ndarray,
    *,
    plan: Optional[np.ndarray] = None,
    step_size: float = 0.0,
    step_schedule: str = "constant",
    batch_size: int = 1,
    fixed: Optional[np.ndarray] = None,
    pool: Optional[np.ndarray] = None,
    pool_index: Optional[np.ndarray] = None,
    tie_accept: bool = False,
    trace: bool = False,
) -> list[RunResult]:
    """Vectorized run of N independent trials.

    ``rewards`` is (N, T), ``consumption`` (N, T, m). Exactly one price
    source is used: a gradient plan (``plan``, T x m), a ``fixed`` price,
    or a ``pool`` with per-trial per-period indices ``pool_index`` (N, T).
    """
    N, T = rewards.shape
    m = consumption.shape[2]
    remaining = np.tile(np.asarray(capacities, dtype=float), (N, 1))
    total = np.zeros(N)
    accepted = np.zeros(N, dtype=int)
    virtual_total = np.zeros((N, m))
    if fixed is not None:
        p = np.tile(np.asarray(fixed, dtype=float), (N, 1))
    else:
        p = np.zeros((N, m))
    max_dual = p.max(axis=1, initial=0.0)
    block = np.zeros((N, m))
    traj = np.zeros((N, T + 1, m)) if trace else None
    if trace:
        traj[:, 0] = p
    for t in range(T):
        a = consumption[:, t]
        r = rewards[:, t]
        if pool is not None:
            p = pool[pool_index[:, t]]
            max_dual = np.maximum(max_dual, p.max(axis=1, initial=0.0))
        if tie_accept:
            virtual = r >= (a * p).sum(axis=1)
        else:
            virtual = (r - (a * p).sum(axis=1)) > TIE_TOL
        g = a * virtual[:, None]
        ok = virtual & np.all(remaining >= g, axis=1)
        remaining = np.where(ok[:, None], remaining - g, remaining)
        total = total + np.where(ok, r, 0.0)
        accepted += ok
        virtual_total = virtual_total + g
        if plan is not None:
            block = block + (g - plan[t])
            if (t + 1) % batch_size == 0 or t + 1 == T:
                p = np.maximum(0.0, p + step_at(step_size, step_schedule, t + 1) * block)
                block = np.zeros((N, m))
                max_dual = np.maximum(max_dual, p.max(axis=1, initial=0.0))
        if trace:
            traj[:, t + 1] = p
    return [
        RunResult(float(total[n]), remaining[n], float(max_dual[n]), virtual_total[n], p[n].copy(), int(accepted[n]), None if traj is None else traj[n])
        for n in range(N)
    ]


def _stack(paths: Sequence[SampledPath]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([p.rewards for p in paths]), np.stack([p.consumption for p in paths])


class Policy:
    """Common interface: ``run`` on one path, ``run_batch`` on several.

    ``rngs`` supplies one generator per path; only randomized policies
    draw from it.
    """

    name = "policy"

    def run(self, path: SampledPath, rng: Optional[np.random.Generator] = None, trace: bool = False) -> RunResult:
        return self.run_batch([path], [rng or np.random.default_rng(0)], trace)[0]

    def run_batch(self, paths, rngs=None, trace: bool = False) -> list[RunResult]:
        raise NotImplementedError


class IGD(Policy):
    """Dual gradient descent toward a consumption plan.

    The default step is the constant 1/sqrt(T K). With
    ``step_schedule="sqrt_t"`` the step after period t is
    ``step_size / sqrt(t)`` (``step_size`` defaults to 1 then).
    """

    name = "igdp"

    def __init__(
        self,
        capacities,
        plan,
        step_size: Optional[float] = None,
        batch_size: int = 1,
        name: Optional[str] = None,
        step_schedule: str = "constant",
    ):
        self.capacities = np.asarray(capacities, dtype=float)
        self.plan = np.asarray(plan, dtype=float)
        T = self.plan.shape[0]
        self.batch_size = int(batch_size)
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        step_at(1.0, step_schedule, 1)
        self.step_schedule = step_schedule
        if step_size is None:
            step_size = 1.0 / np.sqrt(T * self.batch_size) if step_schedule == "constant" else 1.0
        self.step_size = step_size
        if name:
            self.name = name

    def initial_state(self) -> PolicyState:
        T, m = self.plan.shape
        return PolicyState(
            kind=self.name,
            dual=np.zeros(m),
            remaining=self.capacities.copy(),
            plan=self.plan,
            horizon=T,
            step_size=self.step_size,
            step_schedule=self.step_schedule,
            batch_size=self.batch_size,
        )

    def run_batch(self, paths, rngs=None, trace=False):
        R, A = _stack(paths)
        return run_dual_engine(
            R, A, self.capacities, plan=self.plan, step_size=self.step_size, step_schedule=self.step_schedule, batch_size=self.batch_size, trace=trace
        )


class UGD(IGD):
    """IGD with the uniform plan c/T; needs no distributional knowledge."""

    name = "ugd"

    def __init__(self, capacities, horizon: int, step_size: Optional[float] = None, name: Optional[str] = None, step_schedule: str = "constant"):
        capacities = np.asarray(capacities, dtype=float)
        super().__init__(capacities, np.tile(capacities / horizon, (horizon, 1)), step_size, 1, name, step_schedule)


class BatchedIGD(IGD):
    """Price frozen within blocks of K periods; default step 1/sqrt(T K)."""

    name = "bigd"

    def __init__(self, capacities, plan, batch_size: int, step_size: Optional[float] = None, name: Optional[str] = None):
        super().__init__(capacities, plan, step_size, batch_size, name or f"bigd(K={batch_size})")


class FixedBidPrice(Policy):
    name = "fbp"

    def __init__(self, capacities, price, name: Optional[str] = None):
        self.capacities = np.asarray(capacities, dtype=float)
        self.price = np.maximum(np.asarray(price, dtype=float), 0.0)
        if name:
            self.name = name

    def initial_state(self, horizon: int) -> PolicyState:
        return PolicyState(self.name, self.price.copy(), self.capacities.copy(), None, horizon)

    def run_batch(self, paths, rngs=None, trace=False):
        R, A = _stack(paths)
        return run_dual_engine(R, A, self.capacities, fixed=self.price, tie_accept=True, trace=trace)


class OfflineToOnline(Policy):
    name = "o2o"

    def __init__(self, capacities, pool, name: Optional[str] = None):
        self.capacities = np.asarray(capacities, dtype=float)
        self.pool = np.atleast_2d(np.maximum(np.asarray(pool, dtype=float), 0.0))
        if name:
            self.name = name

    def initial_state(self, horizon: int) -> PolicyState:
        return PolicyState(self.name, self.pool[0].copy(), self.capacities.copy(), None, horizon)

    def run_batch(self, paths, rngs=None, trace=False):
        if rngs is None:
            raise PolicyError("o2o needs one generator per path")
        R, A = _stack(paths)
        T = R.shape[1]
        idx = np.stack([rng.integers(self.pool.shape[0], size=T) for rng in rngs])
        return run_dual_engine(R, A, self.capacities, pool=self.pool, pool_index=idx, trace=trace)


def build_o2o_pool(problem: DualProblem, capacities, multipliers=O2O_MULTIPLIERS, config: Optional[SolverConfig] = None) -> np.ndarray:
    base = config or SolverConfig()
    pool = []
    for mult in multipliers:
        cfg = SolverConfig(base.max_iter, base.tol, base.check_every, mult, base.seed, base.clip, base.method)
        pool.append(dual_solve(problem.schedule, capacities, problem.saa_samples, cfg, problem=problem).p_star)
    return np.array(pool)


class _SteppedPolicy(Policy):
    """Policies that re-solve an LP each period; run trial by trial."""

    def _state(self, horizon: int) -> PolicyState:
        raise NotImplementedError

    def _step(self, state, theta, ctx):
        raise NotImplementedError

    def run_batch(self, paths, rngs=None, trace=False):
        out = []
        for path in paths:
            ctx = ResolveContext(self.problem)
            state = self._state(len(path))
            total, accepted = 0.0, 0
            traj = [state.dual.copy()] if trace else None
            for theta in path:
                d, state = self._step(state, theta, ctx)
                total += d.reward
                accepted += d.accepted
                if trace:
                    traj.append(state.dual.copy())
            out.append(
                RunResult(total, state.remaining, state.max_dual, state.virtual_total, state.dual.copy(), accepted, None if traj is None else np.array(traj))
            )
        return out


class Resolving(_SteppedPolicy):
    """Re-solve the finite-support upper bound every period (threshold rule)."""

    name = "resolve"

    def __init__(self, capacities, problem: DualProblem, name: Optional[str] = None):
        if not problem.finite:
            raise PolicyError("re-solving needs a finite-support prior schedule")
        self.capacities = np.asarray(capacities, dtype=float)
        self.problem = problem
        if name:
            self.name = name

    def _state(self, horizon):
        return PolicyState(self.name, np.zeros(self.capacities.size), self.capacities.copy(), None, horizon)

    def _step(self, state, theta, ctx):
        return resolve_step(state, theta, ctx)


class ResolvingIGD(_SteppedPolicy):
    """IGD whose price and plan tail are re-solved every ``resolve_every`` periods.

    Re-solves start from the current price, which is already close to the
    new minimizer, so their convergence test runs every ``check_every``
    iterations (default 50) instead of the cold-start interval.
    """

    name = "igdp_resolve"

    def __init__(
        self,
        capacities,
        problem: DualProblem,
        plan,
        resolve_every: int,
        config: Optional[SolverConfig] = None,
        name: Optional[str] = None,
        check_every: Optional[int] = 50,
    ):
        if resolve_every < 1:
            raise ValueError("resolve_every must be positive")
        self.capacities = np.asarray(capacities, dtype=float)
        self.problem = problem
        self.plan = np.asarray(plan, dtype=float)
        self.resolve_every = int(resolve_every)
        config = config or SolverConfig()
        if check_every:
            config = replace(config, check_every=int(check_every))
        self.config = config
        self.name = name or f"igdp_resolve({resolve_every})"

    def _state(self, horizon):
        return PolicyState(
            kind=self.name,
            dual=np.zeros(self.capacities.size),
            remaining=self.capacities.copy(),
            plan=self.plan,
            horizon=horizon,
            step_size=1.0 / np.sqrt(horizon),
            batch_size=1,
            resolve_every=self.resolve_every,
        )

    def _step(self, state, theta, ctx):
        return igd_resolve_step(state, theta, ctx, self.config)

    def run_batch(self, paths, rngs=None, trace=False):
        config = self.config
        if not self.problem.finite or config.method == "lp":
            return super().run_batch(paths, rngs, trace)
        R, A = _stack(paths)
        return _run_resolving_engine(R, A, self.capacities, self.problem, self.plan, self.resolve_every, config, trace)


def _run_resolving_engine(rewards, consumption, capacities, problem: DualProblem, plan, every: int, config: SolverConfig, trace: bool) -> list[RunResult]:
    """Vectorized ``igd_resolve_step`` for finite-support priors: all trials
    re-solve at the same periods, so their dual solves run as one batch."""
    N, T = rewards.shape
    m = consumption.shape[2]
    remaining = np.tile(np.asarray(capacities, dtype=float), (N, 1))
    total = np.zeros(N)
    accepted = np.zeros(N, dtype=int)
    virtual_total = np.zeros((N, m))
    p = np.zeros((N, m))
    max_dual = np.zeros(N)
    step = 1.0 / np.sqrt(T)
    accept_types = None
    traj = np.zeros((N, T + 1, m)) if trace else None
    for t in range(1, T + 1):
        if t % every == 0:
            p, _, _, _ = finite_subgradient_batch(problem, remaining, t, config, p)
            accept_types = problem.finite_margins(p) > TIE_TOL
            max_dual = np.maximum(max_dual, p.max(axis=1, initial=0.0))
        a = consumption[:, t - 1]
        r = rewards[:, t - 1]
        virtual = (r - (a * p).sum(axis=1)) > TIE_TOL
        g = a * virtual[:, None]
        ok = virtual & np.all(remaining >= g, axis=1)
        remaining = np.where(ok[:, None], remaining - g, remaining)
        total = total + np.where(ok, r, 0.0)
        accepted += ok
        virtual_total = virtual_total + g
        target = plan[t - 1] if accept_types is None else problem.finite_rows(problem.probs[t - 1][None, :] * accept_types)
        p = np.maximum(0.0, p + step * (np.zeros((N, m)) + (g - target)))
        max_dual = np.maximum(max_dual, p.max(axis=1, initial=0.0))
        if trace:
            traj[:, t] = p
    return [
        RunResult(float(total[n]), remaining[n], float(max_dual[n]), virtual_total[n], p[n].copy(), int(accepted[n]), None if traj is None else traj[n])
        for n in range(N)
    ]


def plan_from_report(report: DualSolveReport) -> np.ndarray:
    return np.clip(report.gamma, 0.0, 1.0)
