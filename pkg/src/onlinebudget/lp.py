"""Dense bounded-variable linear programming.

Problems are stated as

    maximize    c @ x
    subject to  A @ x <= b
                lower <= x <= upper

and solved with a revised dual simplex method that keeps box constraints
implicit (nonbasic variables sit at one of their bounds). Because every
variable with a finite range can be parked at whichever bound makes its
reduced cost dual feasible, the all-slack basis is a valid starting point
and no phase one is needed. A bound-flipping ratio test lets many boxed
variables change bound in a single iteration, which keeps the iteration
count near the number of rows even with thousands of columns.

Warm starts: a solution carries its final basis; feeding it back for a
problem with the same matrix and objective (only ``rhs`` or bounds
changed) restarts from a dual feasible basis, usually finishing in a
couple of pivots.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-7
DUAL_TOL = 1e-9


class LpStatus(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


class LpNumericalError(RuntimeError):
    """Raised when the simplex iteration cap is hit."""


@dataclass
class LpProblem:
    objective: np.ndarray
    constraint_matrix: np.ndarray
    rhs: np.ndarray
    var_lower: np.ndarray
    var_upper: np.ndarray

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).reshape(-1)
        n = self.objective.size
        A = np.asarray(self.constraint_matrix, dtype=float)
        if A.size == 0:
            A = A.reshape(0, n)
        self.constraint_matrix = A
        self.rhs = np.asarray(self.rhs, dtype=float).reshape(-1)
        self.var_lower = np.broadcast_to(np.asarray(self.var_lower, dtype=float), (n,)).copy()
        self.var_upper = np.broadcast_to(np.asarray(self.var_upper, dtype=float), (n,)).copy()
        if A.ndim != 2 or A.shape[1] != n:
            raise ValueError(f"constraint matrix shape {A.shape} does not match {n} variables")
        if self.rhs.size != A.shape[0]:
            raise ValueError(f"rhs has {self.rhs.size} entries for {A.shape[0]} rows")
        if np.any(self.var_lower > self.var_upper):
            raise ValueError("var_lower exceeds var_upper")
        if np.any(np.isinf(self.var_lower) & (self.var_lower > 0)) or np.any(
            np.isinf(self.var_upper) & (self.var_upper < 0)
        ):
            raise ValueError("bounds must not be +inf below or -inf above")
        for name in ("objective", "rhs"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} must be finite")
        if not np.all(np.isfinite(A)):
            raise ValueError("constraint matrix must be finite")

    @property
    def num_rows(self) -> int:
        return self.constraint_matrix.shape[0]

    @property
    def num_vars(self) -> int:
        return self.objective.size

    def to_dict(self) -> dict:
        return {
            "objective": self.objective.tolist(),
            "constraint_matrix": self.constraint_matrix.tolist(),
            "rhs": self.rhs.tolist(),
            "var_lower": [_json_float(v) for v in self.var_lower],
            "var_upper": [_json_float(v) for v in self.var_upper],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LpProblem":
        allowed = {"objective", "constraint_matrix", "rhs", "var_lower", "var_upper"}
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"unknown LP fields: {sorted(unknown)}")
        n = len(data["objective"])
        lower = data.get("var_lower", [0.0] * n)
        upper = data.get("var_upper", [None] * n)
        return cls(
            objective=data["objective"],
            constraint_matrix=np.asarray(data.get("constraint_matrix", []), dtype=float).reshape(-1, n),
            rhs=data.get("rhs", []),
            var_lower=[_parse_bound(v, -np.inf) for v in lower],
            var_upper=[_parse_bound(v, np.inf) for v in upper],
        )


def _json_float(v: float):
    if np.isposinf(v):
        return "inf"
    if np.isneginf(v):
        return "-inf"
    return float(v)


def _parse_bound(v, default: float) -> float:
    if v is None:
        return default
    if isinstance(v, str):
        return float(v)
    return float(v)


@dataclass
class Basis:
    """Simplex basis over structural columns followed by one slack per row."""

    basic: np.ndarray
    at_upper: np.ndarray


@dataclass
class LpSolution:
    status: LpStatus
    objective_value: float
    primal: np.ndarray
    dual: np.ndarray
    iterations: int = 0
    basis: Optional[Basis] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "objective_value": _json_float(self.objective_value),
            "primal": self.primal.tolist(),
            "dual": self.dual.tolist(),
            "iterations": self.iterations,
        }


def lp_solve(
    problem: LpProblem,
    warm_start: Optional[Basis] = None,
    max_iter: Optional[int] = None,
) -> LpSolution:
    """Solve ``problem`` by the bounded dual simplex method.

    Infeasible and unbounded problems are reported through the status
    field; only a stalled iteration raises ``LpNumericalError``.
    """
    A = problem.constraint_matrix
    k, n = A.shape
    N = n + k
    if max_iter is None:
        max_iter = 50 * (k + n)

    M = np.hstack([A, np.eye(k)])
    cost = np.concatenate([problem.objective, np.zeros(k)])
    lower = np.concatenate([problem.var_lower, np.zeros(k)])
    upper = np.concatenate([problem.var_upper, np.full(k, np.inf)])
    b = problem.rhs

    # Infinite structural bounds get an artificial box; landing on it at
    # the optimum means the true problem is unbounded.
    scale = 1.0 + max(
        np.max(np.abs(b), initial=0.0),
        np.max(np.abs(problem.var_lower[np.isfinite(problem.var_lower)]), initial=0.0),
        np.max(np.abs(problem.var_upper[np.isfinite(problem.var_upper)]), initial=0.0),
    )
    big = 1e7 * scale
    art_lo = np.zeros(N, dtype=bool)
    art_hi = np.zeros(N, dtype=bool)
    art_lo[:n] = np.isneginf(lower[:n])
    art_hi[:n] = np.isposinf(upper[:n])
    lower = np.where(art_lo, -big, lower)
    upper[:n] = np.where(art_hi[:n], big, upper[:n])

    if k == 0:
        x = np.where(cost[:n] > 0, upper[:n], lower[:n])
        at_art = (art_lo[:n] | art_hi[:n]) & (np.abs(x) >= 0.5 * big)
        return _finish(problem, x, np.zeros(0), 0, at_art, None)

    basic, at_upper = _initial_basis(warm_start, cost, M, lower, upper, n, k)

    iterations = 0
    while True:
        B = M[:, basic]
        try:
            Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            basic, at_upper = _cold_basis(cost, lower, upper, n, k)
            continue
        nonbasic = np.ones(N, dtype=bool)
        nonbasic[basic] = False
        xN = np.where(at_upper, upper, lower)
        xN[~nonbasic] = 0.0
        xB = Binv @ (b - M @ xN)

        lo_B = lower[basic]
        up_B = upper[basic]
        # Tolerances scale with the true bounds, not the artificial box.
        lo_ref = np.where(art_lo[basic], 0.0, np.abs(lo_B))
        up_ref = np.where(art_hi[basic] | ~np.isfinite(up_B), 0.0, np.abs(up_B))
        below = lo_B - xB > FEAS_TOL * (1.0 + lo_ref)
        above = xB - up_B > FEAS_TOL * (1.0 + up_ref)
        infeasible_rows = np.flatnonzero(below | above)
        if infeasible_rows.size == 0:
            x = xN.copy()
            x[basic] = xB
            y = cost[basic] @ Binv
            basis = Basis(basic=basic.copy(), at_upper=at_upper.copy())
            at_art = (art_lo | art_hi) & (np.abs(x) >= 0.5 * big)
            return _finish(problem, x[:n], y, iterations, at_art[:n], basis)

        if iterations >= max_iter:
            raise LpNumericalError(f"simplex iteration cap {max_iter} reached")
        iterations += 1

        # Bland-style leaving choice: lowest variable index among the
        # primal infeasible basics.
        r = infeasible_rows[np.argmin(basic[infeasible_rows])]
        leave_low = bool(below[r])
        delta = (lo_B[r] - xB[r]) if leave_low else (xB[r] - up_B[r])

        y = cost[basic] @ Binv
        d = cost - y @ M
        alpha = Binv[r] @ M

        if leave_low:
            elig = nonbasic & (((~at_upper) & (alpha < -PIVOT_TOL)) | (at_upper & (alpha > PIVOT_TOL)))
        else:
            elig = nonbasic & (((~at_upper) & (alpha > PIVOT_TOL)) | (at_upper & (alpha < -PIVOT_TOL)))
        cand = np.flatnonzero(elig)
        if cand.size == 0:
            return _infeasible(problem, iterations)

        ratios = np.abs(d[cand]) / np.abs(alpha[cand])
        order = np.lexsort((cand, ratios))
        cand = cand[order]
        ranges = upper[cand] - lower[cand]
        drops = np.abs(alpha[cand]) * ranges
        slope_after = delta - np.cumsum(drops)
        stop = np.flatnonzero(~(slope_after > 0) | ~np.isfinite(ranges))
        if stop.size == 0:
            return _infeasible(problem, iterations)
        s = stop[0]
        flips = cand[:s]
        q = cand[s]

        at_upper[flips] = ~at_upper[flips]
        leaving = basic[r]
        basic[r] = q
        at_upper[q] = False
        at_upper[leaving] = not leave_low


def _initial_basis(warm_start, cost, M, lower, upper, n, k):
    if warm_start is not None and warm_start.basic.size == k and warm_start.at_upper.size == n + k:
        basic = warm_start.basic.copy()
        at_upper = warm_start.at_upper.copy()
        try:
            Binv = np.linalg.inv(M[:, basic])
        except np.linalg.LinAlgError:
            return _cold_basis(cost, lower, upper, n, k)
        d = cost - (cost[basic] @ Binv) @ M
        nonbasic = np.ones(n + k, dtype=bool)
        nonbasic[basic] = False
        finite = np.isfinite(upper - lower)
        want_upper = d > DUAL_TOL
        want_lower = d < -DUAL_TOL
        bad = nonbasic & ((want_upper & ~at_upper) | (want_lower & at_upper))
        if np.any(bad & ~finite):
            return _cold_basis(cost, lower, upper, n, k)
        at_upper[bad] = ~at_upper[bad]
        at_upper[~nonbasic] = False
        return basic, at_upper
    return _cold_basis(cost, lower, upper, n, k)


def _cold_basis(cost, lower, upper, n, k):
    basic = np.arange(n, n + k)
    at_upper = np.zeros(n + k, dtype=bool)
    at_upper[:n] = cost[:n] > 0
    return basic, at_upper


def _finish(problem, x, y, iterations, at_artificial, basis):
    if np.any(at_artificial):
        return LpSolution(LpStatus.UNBOUNDED, np.inf, x, y, iterations, None)
    y = np.where((y < 0) & (y > -1e-9), 0.0, y)
    value = float(problem.objective @ x)
    return LpSolution(LpStatus.OPTIMAL, value, x, y, iterations, basis)


def _infeasible(problem, iterations):
    return LpSolution(
        LpStatus.INFEASIBLE,
        -np.inf,
        np.full(problem.num_vars, np.nan),
        np.full(problem.num_rows, np.nan),
        iterations,
        None,
    )


def duality_gap(problem: LpProblem, sol: LpSolution) -> float:
    """Absolute gap between ``c @ x`` and the bounded dual objective.

    The dual objective is ``y @ b`` plus the bound terms contributed by
    the reduced costs of the structural variables.
    """
    y = sol.dual
    d = problem.objective - y @ problem.constraint_matrix
    lo = np.where(np.isfinite(problem.var_lower), problem.var_lower, 0.0)
    up = np.where(np.isfinite(problem.var_upper), problem.var_upper, 0.0)
    bound_term = np.sum(np.where(d > 0, d * up, d * lo))
    return abs(sol.objective_value - (y @ problem.rhs + bound_term))
