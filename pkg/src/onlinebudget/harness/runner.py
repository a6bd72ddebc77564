"""Monte Carlo trial runner.

Each trial samples one true path from its own seed; every policy plays
that same path and the hindsight optimum is solved once per path.
Offline artifacts (prior dual price, plan, O2O pool) are computed once
per configuration. Trials are processed in fixed-size blocks, so the
numbers do not depend on how many workers run the blocks.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .. import __version__
from ..model import Instance, SampledPath, path_q, sample_path, trial_seed
from ..oracle import DualProblem, SolverConfig, dual_solve, hindsight_optimum
from ..policies import (
    IGD,
    UGD,
    BatchedIGD,
    FixedBidPrice,
    OfflineToOnline,
    Resolving,
    ResolvingIGD,
    build_o2o_pool,
    plan_from_report,
)

log = logging.getLogger(__name__)

BLOCK_SIZE = 50
MAX_FAIL_FRACTION = 0.01
POLICY_KINDS = ("igdp", "ugd", "bigd", "fbp", "o2o", "resolve", "igdp_resolve")
TRIALS_HEADER = ["trial", "policy", "reward", "hindsight", "regret", "max_dual", "clip_count"]


class ExperimentError(RuntimeError):
    pass


@dataclass
class PolicySpec:
    kind: str
    K: Optional[int] = None
    alpha: Optional[float] = None
    resolve_every: Optional[int] = None
    pool_size: int = 5
    label: Optional[str] = None
    step_schedule: str = "constant"

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy {self.kind!r}; expected one of {POLICY_KINDS}")
        if self.kind == "bigd" and not self.K:
            raise ValueError("bigd needs K")
        if self.kind == "igdp_resolve" and not self.resolve_every:
            raise ValueError("igdp_resolve needs resolve_every")

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.kind == "bigd":
            return f"bigd(K={self.K})"
        if self.kind == "igdp_resolve":
            return f"igdp_resolve({self.resolve_every})"
        return self.kind

    @classmethod
    def from_dict(cls, doc: dict) -> "PolicySpec":
        doc = dict(doc)
        kind = doc.pop("policy", doc.pop("kind", None))
        allowed = {"K", "alpha", "resolve_every", "pool_size", "label", "saa_samples", "step_schedule"}
        extra = set(doc) - allowed
        if extra:
            raise ValueError(f"unknown policy fields: {sorted(extra)}")
        doc.pop("saa_samples", None)
        return cls(kind, **doc)


@dataclass
class ExperimentConfig:
    instance: Instance
    policies: Sequence[PolicySpec]
    trials: int
    master_seed: int
    out: Optional[str] = None
    benchmark: str = "mean_hindsight"
    threads: int = 1
    trace: bool = False
    saa_samples: int = 10_000
    solver: SolverConfig = field(default_factory=SolverConfig)
    hindsight_cache: Optional[dict] = None
    echo: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.benchmark not in ("mean_hindsight", "dual_value", "both"):
            raise ValueError("benchmark must be mean_hindsight, dual_value or both")
        names = [p.name for p in self.policies]
        if len(set(names)) != len(names):
            raise ValueError("policy names must be unique")


@dataclass
class TrialRecord:
    trial_index: int
    policy: str
    total_reward: float
    hindsight_value: float
    regret: float
    final_remaining: np.ndarray
    max_dual_inf_norm: float
    clip_count: int
    path_q: float = float("nan")
    virtual_total: Optional[np.ndarray] = None
    final_dual: Optional[np.ndarray] = None
    error: Optional[str] = None
    dual_traj: Optional[np.ndarray] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class SummaryRow:
    policy: str
    mean_reward: float
    std_error: float
    mean_regret: float
    regret_std_error: float
    pct_of_ub: float
    benchmark_value: float
    pct_of_dual: Optional[float]
    dual_value: Optional[float]
    trials: int
    failed: int


@dataclass
class ExperimentResult:
    records: list
    summary: list
    mean_hindsight: float
    hindsight_se: float
    dual_value: Optional[float]
    offline: dict

    def summary_row(self, policy: str) -> SummaryRow:
        for row in self.summary:
            if row.policy == policy:
                return row
        raise KeyError(policy)


# ---------------------------------------------------------------- offline


@dataclass
class Offline:
    problem: Optional[DualProblem]
    report: Optional[object]
    policies: list

    def describe(self) -> dict:
        out = {}
        if self.report is not None:
            out["p_star"] = self.report.p_star.tolist()
            out["prior_dual_value"] = self.report.dual_value
            out["dual_converged"] = self.report.converged
            out["dual_iterations"] = self.report.iterations
        return out


def prepare(instance: Instance, specs: Sequence[PolicySpec], saa_samples: int, solver: SolverConfig) -> Offline:
    """Compute shared offline artifacts and build the policy objects."""
    T = instance.horizon
    c = instance.capacities
    needs_prior = any(s.kind != "ugd" for s in specs)
    problem = report = None
    if needs_prior:
        sched = instance.prior_or_true()
        problem = DualProblem(sched, instance.num_resources, saa_samples, solver.seed, instance.clip_consumption)
        report = dual_solve(sched, c, saa_samples, solver, problem=problem)
    pool = None
    policies = []
    for s in specs:
        if s.kind == "igdp":
            policies.append(IGD(c, plan_from_report(report), step_size=s.alpha, name=s.name, step_schedule=s.step_schedule))
        elif s.kind == "ugd":
            policies.append(UGD(c, T, step_size=s.alpha, name=s.name, step_schedule=s.step_schedule))
        elif s.kind == "bigd":
            policies.append(BatchedIGD(c, plan_from_report(report), s.K, step_size=s.alpha, name=s.name))
        elif s.kind == "fbp":
            policies.append(FixedBidPrice(c, report.p_star, name=s.name))
        elif s.kind == "o2o":
            if pool is None or len(pool) != s.pool_size:
                mults = _pool_multipliers(s.pool_size)
                pool = build_o2o_pool(problem, c, mults, solver)
            policies.append(OfflineToOnline(c, pool, name=s.name))
        elif s.kind == "resolve":
            policies.append(Resolving(c, problem, name=s.name))
        elif s.kind == "igdp_resolve":
            policies.append(ResolvingIGD(c, problem, plan_from_report(report), s.resolve_every, solver, name=s.name))
    return Offline(problem, report, policies)


def _pool_multipliers(size: int) -> tuple:
    if size < 1:
        raise ValueError("pool_size must be positive")
    if size == 5:
        return (0.25, 0.5, 1.0, 2.0, 4.0)
    return tuple(np.geomspace(0.25, 4.0, size)) if size > 1 else (1.0,)


# ---------------------------------------------------------------- trials


def path_key(path: SampledPath) -> str:
    h = hashlib.sha1(path.rewards.tobytes())
    h.update(path.consumption.tobytes())
    return h.hexdigest()


def _run_block(instance: Instance, policies: list, master_seed: int, indices: list, trace: bool, cache: dict):
    paths = []
    seeds = []
    hind = {}
    for i in indices:
        s = trial_seed(master_seed, i)
        seeds.append(s)
        path = sample_path(instance, "true", s)
        paths.append(path)
        key = path_key(path)
        if key in cache:
            hind[i] = (cache[key], key, None)
            continue
        try:
            hind[i] = (hindsight_optimum(path, instance.capacities)[0], key, None)
        except Exception as exc:  # recorded as a failure row
            hind[i] = (float("nan"), key, f"hindsight: {exc}")
    records = []
    for k, pol in enumerate(policies):
        rngs = [np.random.default_rng([s, k]) for s in seeds]
        try:
            results = pol.run_batch(paths, rngs, trace)
        except Exception:
            results = []
            for path, s in zip(paths, seeds):
                try:
                    results.append(pol.run_batch([path], [np.random.default_rng([s, k])], trace)[0])
                except Exception as exc:
                    results.append(exc)
        for i, path, res in zip(indices, paths, results):
            h, _, herr = hind[i]
            if isinstance(res, Exception) or herr:
                err = herr or f"{pol.name}: {res}"
                records.append(
                    TrialRecord(i, pol.name, float("nan"), h, float("nan"), np.full(instance.num_resources, np.nan), float("nan"), path.clip_count, error=err)
                )
                continue
            records.append(
                TrialRecord(
                    trial_index=i,
                    policy=pol.name,
                    total_reward=res.reward,
                    hindsight_value=h,
                    regret=h - res.reward,
                    final_remaining=res.remaining,
                    max_dual_inf_norm=res.max_dual,
                    clip_count=path.clip_count,
                    path_q=path_q(path),
                    virtual_total=res.virtual_total,
                    final_dual=res.final_dual,
                    dual_traj=res.dual_traj,
                )
            )
    new_cache = {key: h for (h, key, err) in hind.values() if err is None}
    return records, new_cache


def run_trials(instance: Instance, policies: list, trials: int, master_seed: int, threads: int = 1, trace: bool = False, cache: Optional[dict] = None) -> list:
    cache = cache if cache is not None else {}
    blocks = [list(range(s, min(s + BLOCK_SIZE, trials))) for s in range(0, trials, BLOCK_SIZE)]
    records = []
    if threads <= 1 or len(blocks) == 1:
        for b in blocks:
            recs, new = _run_block(instance, policies, master_seed, b, trace, cache)
            records.extend(recs)
            cache.update(new)
    else:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            futs = [ex.submit(_run_block, instance, policies, master_seed, b, trace, cache) for b in blocks]
            for f in futs:
                recs, new = f.result()
                records.extend(recs)
                cache.update(new)
    order = {p.name: k for k, p in enumerate(policies)}
    records.sort(key=lambda r: (r.trial_index, order[r.policy]))
    return records


def summarize(records: list, policy_names: Sequence[str], dual_value: Optional[float], benchmark: str) -> tuple[list, float, float]:
    by_trial = {}
    for r in records:
        if not np.isnan(r.hindsight_value):
            by_trial[r.trial_index] = r.hindsight_value
    hv = np.array(list(by_trial.values()))
    mean_h = float(hv.mean()) if hv.size else float("nan")
    se_h = float(hv.std(ddof=1) / np.sqrt(hv.size)) if hv.size > 1 else 0.0
    bench = dual_value if benchmark == "dual_value" else mean_h
    rows = []
    for name in policy_names:
        mine = [r for r in records if r.policy == name]
        ok = [r for r in mine if not r.failed]
        rew = np.array([r.total_reward for r in ok])
        reg = np.array([r.regret for r in ok])
        n = rew.size
        mean = float(rew.mean()) if n else float("nan")
        rows.append(
            SummaryRow(
                policy=name,
                mean_reward=mean,
                std_error=float(rew.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
                mean_regret=float(reg.mean()) if n else float("nan"),
                regret_std_error=float(reg.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
                pct_of_ub=100.0 * mean / bench if bench else float("nan"),
                benchmark_value=float(bench) if bench is not None else float("nan"),
                pct_of_dual=100.0 * mean / dual_value if dual_value else None,
                dual_value=dual_value,
                trials=n,
                failed=len(mine) - n,
            )
        )
    return rows, mean_h, se_h


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run every policy on the same sampled paths and aggregate.

    Writes ``trials.csv``, ``summary.json`` and optionally ``dual_traj.csv``
    when ``config.out`` is set.
    """
    inst = config.instance
    solver = config.solver
    offline = prepare(inst, config.policies, config.saa_samples, solver)
    policies = offline.policies
    # The dual value of the true schedule is always reported next to the mean hindsight.
    if offline.report is not None and inst.prior_schedule is None:
        dual_value = offline.report.dual_value
    else:
        dual_value = dual_solve(inst.true_schedule, inst.capacities, config.saa_samples, solver).dual_value
    records = run_trials(inst, policies, config.trials, config.master_seed, config.threads, config.trace, config.hindsight_cache)
    failed_trials = {r.trial_index for r in records if r.failed}
    if len(failed_trials) > MAX_FAIL_FRACTION * config.trials:
        msgs = sorted({r.error for r in records if r.failed})
        raise ExperimentError(f"{len(failed_trials)} of {config.trials} trials failed: {msgs[:3]}")
    summary, mean_h, se_h = summarize(records, [p.name for p in policies], dual_value, config.benchmark)
    result = ExperimentResult(records, summary, mean_h, se_h, dual_value, offline.describe())
    if config.out:
        write_outputs(config, result)
    return result


# ---------------------------------------------------------------- output


def trials_csv(records: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRIALS_HEADER)
    for r in records:
        w.writerow([r.trial_index, r.policy, repr(float(r.total_reward)), repr(float(r.hindsight_value)), repr(float(r.regret)), repr(float(r.max_dual_inf_norm)), r.clip_count])
    return buf.getvalue()


def version_string() -> str:
    try:
        here = Path(__file__).resolve().parent
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here, capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _json_safe(x):
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def write_outputs(config: ExperimentConfig, result: ExperimentResult) -> None:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trials.csv").write_text(trials_csv(result.records))
    doc = {
        "version": version_string(),
        "config": {
            **config.echo,
            "instance": config.instance.name,
            "T": config.instance.horizon,
            "m": config.instance.num_resources,
            "capacities": config.instance.capacities.tolist(),
            "trials": config.trials,
            "master_seed": config.master_seed,
            "benchmark": config.benchmark,
            "saa_samples": config.saa_samples,
            "policies": [asdict(p) for p in config.policies],
        },
        "benchmarks": {
            "mean_hindsight": _json_safe(result.mean_hindsight),
            "mean_hindsight_se": _json_safe(result.hindsight_se),
            "dual_value": _json_safe(result.dual_value),
        },
        "offline": result.offline,
        "summary": [{k: _json_safe(v) for k, v in asdict(row).items()} for row in result.summary],
        "failures": [{"trial": r.trial_index, "policy": r.policy, "error": r.error} for r in result.records if r.failed],
    }
    (out / "summary.json").write_text(json.dumps(doc, indent=2) + "\n")
    if config.trace:
        m = config.instance.num_resources
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "policy", "t"] + [f"p{i + 1}" for i in range(m)])
        for r in result.records:
            if r.dual_traj is None:
                continue
            for t, p in enumerate(r.dual_traj, start=1):
                w.writerow([r.trial_index, r.policy, t] + [repr(float(v)) for v in p])
        (out / "dual_traj.csv").write_text(buf.getvalue())


# ---------------------------------------------------------------- scaling


def scaling_study(base: Instance, T_grid: Sequence[int], policy: PolicySpec, trials: int, master_seed: int, threads: int = 1, saa_samples: int = 10_000, solver: Optional[SolverConfig] = None) -> list[dict]:
    """Regret at each horizon with capacities scaled linearly in T."""
    rows = []
    for T in T_grid:
        inst = base.rescaled(int(T))
        cfg = ExperimentConfig(inst, [policy], trials, master_seed, threads=threads, saa_samples=saa_samples, solver=solver or SolverConfig())
        res = run_experiment(cfg)
        row = res.summary[0]
        rows.append(
            {
                "T": int(T),
                "mean_regret": row.mean_regret,
                "regret_se": row.regret_std_error,
                "regret_over_sqrt_T": row.mean_regret / np.sqrt(T),
                "mean_reward": row.mean_reward,
                "mean_hindsight": res.mean_hindsight,
                "capacity_scaling": "linear",
            }
        )
    return rows
