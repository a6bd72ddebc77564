"""Independent brute-force references used by the tests.

None of these import the package's solvers; they enumerate vertices,
run dynamic programs or apply closed forms directly.
"""

from __future__ import annotations

import itertools

import numpy as np


def lp_vertex_max(c, A, b, lo, up, tol=1e-9):
    """max c@x over {A x <= b, lo <= x <= up} (finite bounds) by vertex enumeration.

    Returns (value, x) or (None, None) when infeasible.
    """
    c = np.asarray(c, float)
    A = np.asarray(A, float).reshape(-1, c.size)
    b = np.asarray(b, float)
    n = c.size
    # all constraints as G x <= h
    G = np.vstack([A, np.eye(n), -np.eye(n)])
    h = np.concatenate([b, up, -np.asarray(lo, float)])
    best, arg = None, None
    for rows in itertools.combinations(range(G.shape[0]), n):
        M = G[list(rows)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, h[list(rows)])
        if np.all(G @ x <= h + tol * (1 + np.abs(h))):
            v = float(c @ x)
            if best is None or v > best:
                best, arg = v, x
    return best, arg


def transport_vertex_min(cost, mu, nu, tol=1e-10):
    """Optimal transport cost by enumerating spanning-tree bases of the transport polytope."""
    cost = np.asarray(cost, float)
    n, k = cost.shape
    cells = [(i, j) for i in range(n) for j in range(k)]
    # equality system: row sums (n) and column sums (k), one redundant
    E = np.zeros((n + k, n * k))
    for idx, (i, j) in enumerate(cells):
        E[i, idx] = 1.0
        E[n + j, idx] = 1.0
    rhs = np.concatenate([mu, nu])
    E, rhs = E[:-1], rhs[:-1]
    best = None
    for basis in itertools.combinations(range(n * k), n + k - 1):
        B = E[:, list(basis)]
        if abs(np.linalg.det(B)) < 1e-12:
            continue
        xb = np.linalg.solve(B, rhs)
        if np.any(xb < -tol):
            continue
        v = float(cost.reshape(-1)[list(basis)] @ xb)
        if best is None or v < best:
            best = v
    return best


def knapsack_greedy(r, a, cap, ub):
    """Fractional knapsack max sum r z, sum a z <= cap, 0 <= z <= ub (a > 0)."""
    order = np.argsort(-np.asarray(r) / np.asarray(a), kind="stable")
    left = cap
    value = 0.0
    for j in order:
        if r[j] <= 0 or left <= 0:
            continue
        take = min(ub[j], left / a[j])
        value += r[j] * take
        left -= a[j] * take
    return value


def single_resource_dual_grid(rewards, weights, c, grid):
    """min_p c p + sum_j w_j (r_j - p)^+ over a grid of p (unit consumption)."""
    rewards = np.asarray(rewards, float)
    vals = [c * p + float(np.sum(weights * np.maximum(0.0, rewards - p))) for p in grid]
    i = int(np.argmin(vals))
    return grid[i], vals[i]


def two_type_dp(r, probs, T, c):
    """Optimal expected reward of the two-type accept/reject problem with unit sizes.

    V[t][x] = value with t periods left and x units of capacity.
    """
    V = np.zeros((T + 1, c + 1))
    for t in range(1, T + 1):
        for x in range(c + 1):
            v = 0.0
            for rj, pj in zip(r, probs):
                acc = rj + V[t - 1][x - 1] if x > 0 else -np.inf
                v += pj * max(acc, V[t - 1][x])
            V[t][x] = v
    return V
