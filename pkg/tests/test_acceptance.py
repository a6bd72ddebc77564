"""Acceptance criteria, one test (or one test per setting) each.

Every check reports a PASS/FAIL line through the ``criterion`` fixture; the
lines are repeated in the terminal summary. Monte Carlo criteria are marked
slow; the whole file takes roughly half an hour on one core.
"""

import time

import numpy as np
import pytest

from onlinebudget.cli import main
from onlinebudget.harness import (
    ExperimentConfig,
    PolicySpec,
    build_adversarial,
    build_exp1,
    build_exp2,
    build_finite_stationary,
    build_stationary_uniform,
    run_experiment,
    scaling_study,
)
from onlinebudget.lp import LpProblem, LpStatus, duality_gap, lp_solve
from onlinebudget.model import Instance, path_q, sample_path
from onlinebudget.oracle import dual_solve
from onlinebudget.policies import IGD, UGD, BatchedIGD, plan_from_report
from onlinebudget.wasserstein import rho_matrix, wasserstein_discrete, wbdb, wbnb
from oracles import lp_vertex_max, transport_vertex_min
from test_wasserstein import random_measure

SEED = 20240601

# Feasibility ledger shared across the whole matrix: (min remaining seen, runs checked).
_FEASIBILITY = {"min_remaining": np.inf, "runs": 0}


def note_remaining(remaining):
    r = np.asarray(remaining, dtype=float)
    _FEASIBILITY["min_remaining"] = min(_FEASIBILITY["min_remaining"], float(r.min()))
    _FEASIBILITY["runs"] += 1


# ---------------------------------------------------------------- 1. dual bound


def random_instance(rng):
    setting = str(rng.choice(["uniform", "normal", "mixed"]))
    T = int(rng.integers(50, 400))
    m = int(rng.integers(1, 6))
    inst = build_exp1(setting, float(rng.uniform(1, 3)), float(rng.uniform(0, 2)), T=T, m=m, c=1)
    return Instance(T, m, rng.uniform(0.05, 0.5, m) * T, inst.true_schedule, inst.prior_schedule)


def test_criterion_1_dual_boundedness(criterion):
    rng = np.random.default_rng(SEED)
    t0 = time.perf_counter()
    worst = {"igd/ugd": -np.inf, "bigd": -np.inf}
    steps = 0
    for _ in range(100):
        inst = random_instance(rng)
        T = inst.horizon
        plan = plan_from_report(dual_solve(inst.prior_schedule, inst.capacities, saa_samples=1000))
        K = int(rng.integers(2, 11))
        pols = [IGD(inst.capacities, plan), UGD(inst.capacities, T), BatchedIGD(inst.capacities, plan, K)]
        for i in range(20):
            path = sample_path(inst, "true", int(rng.integers(0, 2**63)))
            q = path_q(path)
            for pol in pols:
                res = pol.run(path, trace=True)
                note_remaining(res.remaining)
                steps += T
                peak = float(np.abs(res.dual_traj).max())
                if isinstance(pol, BatchedIGD):
                    worst["bigd"] = max(worst["bigd"], peak - (q + pol.step_size * K))
                else:
                    worst["igd/ugd"] = max(worst["igd/ugd"], peak - (q + 1))
    elapsed = time.perf_counter() - t0
    ok = worst["igd/ugd"] <= 1e-9 and worst["bigd"] <= 1e-9 and elapsed < 60
    criterion(
        1,
        ok,
        f"max(|p|-bound) igd/ugd {worst['igd/ugd']:.3g}, bigd {worst['bigd']:.3g} over {steps} steps; {elapsed:.1f}s (limit 60s)",
    )


# ---------------------------------------------------------------- 3. experiment I tables

# target cells (percent of the upper bound), keyed by (alpha, beta)
IGDP_TABLE = {
    "uniform": {(1, 0): 96, (1, 1): 95, (1, 2): 94, (2, 0): 96, (2, 1): 95, (2, 2): 94, (3, 0): 96, (3, 1): 95, (3, 2): 94},
    "normal": {(1, 0): 96, (1, 1): 97, (1, 2): 94, (2, 0): 96, (2, 1): 96, (2, 2): 95, (3, 0): 97, (3, 1): 97, (3, 2): 96},
    "mixed": {(1, 0): 96, (1, 1): 97, (1, 2): 95, (2, 0): 96, (2, 1): 96, (2, 2): 96, (3, 0): 96, (3, 1): 97, (3, 2): 95},
}
UGD_30 = {"uniform": 80, "normal": 84, "mixed": 83}
FBP_12 = {"uniform": 0, "normal": 7, "mixed": 15}
FBP_10 = {"uniform": 96, "normal": 96, "mixed": 96}


@pytest.fixture(scope="module")
def exp1_cells():
    cache = {}

    def get(setting):
        if setting not in cache:
            cells = {}
            t0 = time.perf_counter()
            for (a, b) in IGDP_TABLE[setting]:
                cfg = ExperimentConfig(
                    build_exp1(setting, a, b),
                    [PolicySpec("igdp"), PolicySpec("ugd"), PolicySpec("fbp")],
                    500,
                    SEED,
                    threads=8,
                )
                res = run_experiment(cfg)
                for r in res.records:
                    note_remaining(r.final_remaining)
                cells[(a, b)] = {row.policy: row.pct_of_ub for row in res.summary}
                cells[(a, b)]["dual%"] = {row.policy: row.pct_of_dual for row in res.summary}
            cache[setting] = (cells, time.perf_counter() - t0)
        return cache[setting]

    return get


@pytest.mark.slow
@pytest.mark.parametrize("setting", ["uniform", "normal", "mixed"])
def test_criterion_3_experiment_one(setting, exp1_cells, criterion):
    cells, elapsed = exp1_cells(setting)
    misses = []
    for key, target in IGDP_TABLE[setting].items():
        got = cells[key]["igdp"]
        if abs(got - target) > 2:
            misses.append(f"igdp{key} {got:.1f} vs {target}")
    ugd = cells[(3, 0)]["ugd"]
    if abs(ugd - UGD_30[setting]) > 3:
        misses.append(f"ugd(3,0) {ugd:.1f} vs {UGD_30[setting]}+-3")
    fbp_bad = cells[(1, 2)]["fbp"]
    if fbp_bad > FBP_12[setting] + 5:
        misses.append(f"fbp(1,2) {fbp_bad:.1f} > {FBP_12[setting] + 5}")
    fbp_good = cells[(1, 0)]["fbp"]
    if fbp_good < FBP_10[setting] - 2:
        misses.append(f"fbp(1,0) {fbp_good:.1f} < {FBP_10[setting] - 2}")
    igdp = " ".join(f"{a}{b}:{cells[(a, b)]['igdp']:.1f}" for (a, b) in IGDP_TABLE[setting])
    detail = f"[{setting}] igdp {igdp}; ugd(3,0) {ugd:.1f}; fbp(1,2) {fbp_bad:.1f}; fbp(1,0) {fbp_good:.1f}; {elapsed:.0f}s"
    if misses:
        detail += "; misses: " + ", ".join(misses)
    criterion(3, not misses, detail)


# ---------------------------------------------------------------- 4. sqrt(T) scaling


@pytest.mark.slow
def test_criterion_4_sqrt_t_scaling(criterion):
    rows = scaling_study(build_stationary_uniform(1000), [1000, 4000, 16000], PolicySpec("ugd"), 500, SEED, threads=8)
    reg = [r["mean_regret"] for r in rows]
    ratios = [reg[1] / reg[0], reg[2] / reg[1]]
    ok = all(1.2 <= x <= 3.2 for x in ratios)
    criterion(4, ok, f"regret {', '.join(f'{x:.2f}' for x in reg)}; ratios {ratios[0]:.3f}, {ratios[1]:.3f} (band [1.2, 3.2])")


# ---------------------------------------------------------------- 5. bounded regret of re-solving


@pytest.mark.slow
def test_criterion_5_resolving_regret_flat(criterion):
    rows = scaling_study(build_finite_stationary(500), [500, 2000, 8000], PolicySpec("resolve"), 100, SEED, threads=8)
    reg = np.array([r["mean_regret"] for r in rows])
    se = np.array([r["regret_se"] for r in rows])
    pooled = float(np.sqrt(np.mean(se**2)))
    spread = float(reg.max() - reg.min())
    ok = spread <= 3 * pooled + 5
    criterion(5, ok, f"regret {', '.join(f'{x:.3f}' for x in reg)} at T=500/2000/8000; spread {spread:.3f} <= {3 * pooled + 5:.3f}")


# ---------------------------------------------------------------- 6. static policy failure


def test_criterion_6_egg_pair(criterion):
    eps, T = 0.05, 999
    res = run_experiment(ExperimentConfig(build_adversarial("egg_pair", T, eps), [PolicySpec("fbp"), PolicySpec("igdp")], 100, SEED, threads=1))
    for r in res.records:
        note_remaining(r.final_remaining)
    fbp = [r.total_reward for r in res.records if r.policy == "fbp"]
    igdp = max(r.regret for r in res.records if r.policy == "igdp")
    bound = 2 * eps * T + 5 * np.sqrt(T)
    ok = all(x == 0.0 for x in fbp) and igdp <= bound
    criterion(6, ok, f"fbp rewards all zero: {all(x == 0.0 for x in fbp)} ({len(fbp)} trials); igdp max regret {igdp:.2f} <= {bound:.2f}")


# ---------------------------------------------------------------- 7. wasserstein oracles


def test_criterion_7_wasserstein(criterion):
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(50):
        mu, nu = random_measure(rng, 4), random_measure(rng, 4)
        ref = transport_vertex_min(rho_matrix(mu, nu), mu.weights, nu.weights)
        worst = max(worst, abs(wasserstein_discrete(mu, nu) - ref))
    inst = build_exp1("uniform", 2, 1, T=1000)
    db = wbdb(inst.true_schedule, inst.prior_schedule)
    nb = wbnb(build_adversarial("eg1", 1000, 0.4).true_schedule)
    ok = worst <= 1e-8 and abs(db - 500) <= 5 and abs(nb - 200) <= 2
    criterion(7, ok, f"max |W - vertex oracle| {worst:.2e} on 50 pairs; wbdb {db:.3f} (500+-5); wbnb(eg1) {nb:.3f} (200+-2)")


# ---------------------------------------------------------------- 8. LP solver


def test_criterion_8_lp_solver(criterion):
    rng = np.random.default_rng(SEED)
    worst = 0.0
    status_miss = 0
    for _ in range(1000):
        n, k = int(rng.integers(1, 7)), int(rng.integers(0, 5))
        lo = rng.uniform(-2, 0, n)
        prob = LpProblem(rng.normal(size=n), rng.normal(size=(k, n)), rng.normal(size=k) + 0.5, lo, lo + rng.uniform(0.1, 3, n))
        sol = lp_solve(prob)
        ref, _ = lp_vertex_max(prob.objective, prob.constraint_matrix, prob.rhs, prob.var_lower, prob.var_upper)
        if ref is None:
            status_miss += sol.status != LpStatus.INFEASIBLE
        elif sol.status != LpStatus.OPTIMAL:
            status_miss += 1
        else:
            worst = max(worst, abs(sol.objective_value - ref))
    gaps = []
    instances = [build_exp1(s, 2, 1) for s in ("uniform", "normal", "mixed")] + [build_exp2(0.02, 0.02, seed=1)]
    for inst in instances:
        for i in range(3):
            path = sample_path(inst, "true", SEED + i)
            prob = LpProblem(path.rewards, path.consumption.T, inst.capacities, 0.0, 1.0)
            sol = lp_solve(prob)
            gaps.append(duality_gap(prob, sol) / max(1.0, abs(sol.objective_value)))
    ok = worst <= 1e-8 and status_miss == 0 and max(gaps) <= 1e-6
    criterion(8, ok, f"1000 random LPs: max |obj - oracle| {worst:.2e}, status mismatches {status_miss}; max relative duality gap {max(gaps):.2e} on {len(gaps)} hindsight LPs")


# ---------------------------------------------------------------- 9. complementary slackness


def test_criterion_9_complementary_slackness(criterion):
    worst = -np.inf
    checked = 0
    for setting in ("uniform", "normal", "mixed"):
        for (a, b) in IGDP_TABLE[setting]:
            inst = build_exp1(setting, a, b)
            rep = dual_solve(inst.prior_schedule, inst.capacities, saa_samples=10_000)
            total = rep.gamma.sum(axis=0)
            binding = rep.p_star > 1e-3
            excess = np.abs(total - inst.capacities)[binding] - 3 * rep.gamma_total_se[binding]
            if excess.size:
                worst = max(worst, float(excess.max()))
                checked += int(binding.sum())
    criterion(9, worst <= 0, f"{checked} binding resources over 27 configs; max(|sum gamma - c| - 3 SE) = {worst:.3g}")


# ---------------------------------------------------------------- 10. experiment II


@pytest.mark.slow
def test_criterion_10_experiment_two(criterion):
    specs = [PolicySpec("igdp"), PolicySpec("igdp_resolve", resolve_every=200), PolicySpec("igdp_resolve", resolve_every=1)]
    lines = []
    ok = True
    for a in (0.0, 0.02):
        for b in (0.0, 0.02):
            res = run_experiment(ExperimentConfig(build_exp2(a, b, seed=SEED), specs, 100, SEED, threads=8))
            for r in res.records:
                note_remaining(r.final_remaining)
            pct = {row.policy: row.pct_of_ub for row in res.summary}
            base, r200, r1 = pct["igdp"], pct["igdp_resolve(200)"], pct["igdp_resolve(1)"]
            good = base >= 93 and r1 >= r200 and r200 >= base - 0.5
            ok &= good
            lines.append(f"({a},{b}) igdp {base:.2f} re200 {r200:.2f} re1 {r1:.2f}{'' if good else ' <-'}")
    criterion(10, ok, "; ".join(lines))


# ---------------------------------------------------------------- 11. determinism


def test_criterion_11_thread_determinism(tmp_path, criterion):
    runs = {
        "exp1": ["exp1", "--setting", "mixed", "--alpha", "2", "--beta", "1", "--trials", "120", "--policies", "igdp,ugd,bigd,fbp,o2o", "--trace"],
        "exp2": ["exp2", "--alpha", "0.02", "--beta", "0.02", "--T", "200", "--trials", "60", "--resolve-every", "20", "--policies", "igdp,resolve"],
    }
    same = {}
    for name, args in runs.items():
        for threads in ("1", "8"):
            assert main(args + ["--seed", str(SEED), "--threads", threads, "--out", str(tmp_path / f"{name}-{threads}")]) == 0
        same[name] = (tmp_path / f"{name}-1" / "trials.csv").read_bytes() == (tmp_path / f"{name}-8" / "trials.csv").read_bytes()
    criterion(11, all(same.values()), ", ".join(f"{k} trials.csv identical: {v}" for k, v in same.items()))


# ---------------------------------------------------------------- 2. feasibility (runs last)


def test_criterion_2_feasibility(criterion):
    inst = build_exp1("uniform", 3, 2, T=1000)
    res = run_experiment(
        ExperimentConfig(inst, [PolicySpec("igdp"), PolicySpec("ugd"), PolicySpec("bigd", K=10), PolicySpec("fbp"), PolicySpec("o2o")], 50, SEED, threads=1)
    )
    for r in res.records:
        note_remaining(r.final_remaining)
    low, runs = _FEASIBILITY["min_remaining"], _FEASIBILITY["runs"]
    criterion(2, low >= 0, f"min remaining capacity {low:.6g} over {runs} policy runs (exact check)")
