"""Instance builders for the experiments and the adversarial constructions."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Optional

import numpy as np

from ..model import (
    DistributionSchedule,
    FiniteSupport,
    Instance,
    Mixture,
    PhaseDistribution,
    PointMass,
    TruncNormal,
    Uniform,
)

EXP1_CONSUMPTION = Uniform(0.1, 1.1)
SETTINGS = ("uniform", "normal", "mixed")
ADVERSARIAL_KINDS = ("eg1", "eg2", "egg_pair")


def _reward_law(setting: str, level: float, normal_mode: str = "reject"):
    if setting == "uniform":
        return Uniform(0.0, level)
    if setting == "normal":
        return TruncNormal(level, 1.0, normal_mode)
    if setting == "mixed":
        return Mixture(((0.5, Uniform(0.0, level)), (0.5, TruncNormal(level, 1.0, normal_mode))))
    raise ValueError(f"unknown setting {setting!r}; expected one of {SETTINGS}")


def build_exp1(
    setting: str,
    alpha: float,
    beta: float,
    T: int = 1000,
    m: int = 10,
    c: float = 200.0,
    clip: bool = True,
    normal_mode: str = "reject",
) -> Instance:
    """Two-phase online LP: reward level 1 then alpha; the prior shifts both by beta.

    Consumption is Unif[0.1, 1.1] per resource and period, clipped to
    [0, 1] unless ``clip`` is False. ``normal_mode`` picks how normal
    rewards are made nonnegative ("reject" or "censor").
    """
    if T < 2:
        raise ValueError("experiment I needs T >= 2")
    split = T // 2 + 1

    def sched(l1, l2):
        first = PhaseDistribution(_reward_law(setting, l1, normal_mode), EXP1_CONSUMPTION)
        second = PhaseDistribution(_reward_law(setting, l2, normal_mode), EXP1_CONSUMPTION)
        return DistributionSchedule(T, ((1, first), (split, second)))

    return Instance(
        horizon=T,
        num_resources=m,
        capacities=np.full(m, float(c)),
        true_schedule=sched(1.0, alpha),
        prior_schedule=sched(1.0 + beta, alpha + beta),
        clip_consumption=clip,
        name=f"exp1-{setting}-a{alpha}-b{beta}",
    )


@dataclass(frozen=True, eq=False)
class Topology:
    legs: list
    incidence: np.ndarray  # itineraries x legs
    fares: np.ndarray
    base_probs: np.ndarray
    capacity_per_period: np.ndarray


def load_topology(path: Optional[str] = None) -> Topology:
    if path is None:
        text = resources.files("onlinebudget.harness").joinpath("data/hub_spoke.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    try:
        doc = json.loads(text)
        legs = doc["legs"]
        its = doc["itineraries"]
        inc = np.zeros((len(its), len(legs)))
        for k, it in enumerate(its):
            for leg in it["legs"]:
                inc[k, int(leg)] = 1.0
        fares = np.array([float(it["fare"]) for it in its])
        probs = np.array([float(it["prob"]) for it in its])
        cap = np.array([float(leg["capacity_per_period"]) for leg in legs])
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ValueError(f"malformed topology: {exc}") from exc
    if len(its) == 0 or np.any(probs < 0) or probs.sum() <= 0 or np.any(cap <= 0):
        raise ValueError("malformed topology: needs itineraries, nonnegative probabilities and positive capacities")
    return Topology(legs, inc, fares, probs / probs.sum(), cap)


def _normalize_rows(M: np.ndarray) -> np.ndarray:
    return M / M.sum(axis=1, keepdims=True)


def build_exp2(alpha: float, beta: float, topology: Optional[Topology] = None, seed: int = 0, T: int = 1000) -> Instance:
    """Network revenue management with per-period noisy arrival probabilities.

    The true vectors are normalize(P0 + alpha U_t) and the prior vectors
    normalize(P_t + beta V_t), with U, V uniform noise drawn once from
    ``seed``.
    """
    topo = topology or load_topology()
    n = topo.fares.size
    rng = np.random.default_rng(seed)
    U = rng.random((T, n))
    V = rng.random((T, n))
    P = _normalize_rows(topo.base_probs[None, :] + alpha * U) if alpha else np.tile(topo.base_probs, (T, 1))
    Phat = _normalize_rows(P + beta * V) if beta else P.copy()

    def sched(M):
        phases = []
        last = None
        for t, row in enumerate(M):
            if last is not None and np.array_equal(row, last):
                continue
            phases.append((t + 1, PhaseDistribution(None, FiniteSupport(topo.fares, topo.incidence, row))))
            last = row
        return DistributionSchedule(T, tuple(phases))

    return Instance(
        horizon=T,
        num_resources=topo.incidence.shape[1],
        capacities=topo.capacity_per_period * T,
        true_schedule=sched(P),
        prior_schedule=sched(Phat),
        name=f"exp2-a{alpha}-b{beta}",
    )


def _point_schedule(T: int, rewards) -> DistributionSchedule:
    phases = []
    for t, r in enumerate(rewards):
        if phases and phases[-1][1].reward_law.value == r:
            continue
        phases.append((t + 1, PhaseDistribution(PointMass(float(r)), PointMass(1.0))))
    return DistributionSchedule(T, tuple(phases))


def build_adversarial(kind: str, T: int, param: float) -> Instance:
    """Point-mass constructions with one resource and unit consumption.

    eg1 / eg2: c = T/2, reward 1 for the first T/2 periods and 1 + kappa
    (eg1) or 1 - kappa (eg2) afterwards; no prior.
    egg_pair: c = T/3, true rewards 1 for the first 2T/3 periods and 1/2
    after; the prior reads 1 + 2 eps, 1 + eps and 1/2 + eps on the thirds.
    """
    if kind in ("eg1", "eg2"):
        if T < 2:
            raise ValueError("eg1/eg2 need T >= 2")
        half = T // 2
        late = 1.0 + param if kind == "eg1" else 1.0 - param
        rewards = [1.0] * half + [late] * (T - half)
        return Instance(T, 1, [T / 2.0], _point_schedule(T, rewards), None, name=f"{kind}-k{param}")
    if kind == "egg_pair":
        if T < 3:
            raise ValueError("egg_pair needs T >= 3")
        third, two = T // 3, (2 * T) // 3
        true = [1.0] * two + [0.5] * (T - two)
        prior = [1.0 + 2 * param] * third + [1.0 + param] * (two - third) + [0.5 + param] * (T - two)
        return Instance(T, 1, [T / 3.0], _point_schedule(T, true), _point_schedule(T, prior), name=f"egg_pair-e{param}")
    raise ValueError(f"unknown adversarial kind {kind!r}; expected one of {ADVERSARIAL_KINDS}")


def build_stationary_uniform(T: int, m: int = 1, c_fraction: float = 0.25) -> Instance:
    """Unif[0,1] rewards, unit consumption on every resource, c = c_fraction * T."""
    sched = DistributionSchedule(T, ((1, PhaseDistribution(Uniform(0.0, 1.0), PointMass(1.0))),))
    return Instance(T, m, np.full(m, c_fraction * T), sched, sched, name="stationary-uniform")


def build_finite_stationary(
    T: int,
    rewards=(1.0, 0.6, 0.3),
    consumption=((1.0,), (1.0,), (1.0,)),
    probs=(0.3, 0.3, 0.4),
    c_fraction: float = 0.5,
) -> Instance:
    """Stationary finite-support instance (prior equals truth)."""
    fs = FiniteSupport(np.array(rewards), np.array(consumption), np.array(probs))
    sched = DistributionSchedule(T, ((1, PhaseDistribution(None, fs)),))
    m = fs.consumption.shape[1]
    return Instance(T, m, np.full(m, c_fraction * T), sched, sched, name="finite-stationary")
