"""Instances, arrival distributions and seeded path sampling.

An arrival is a reward coefficient ``r`` plus a consumption vector ``a`` in
[0,1]^m (the linear accept/reject family), optionally tagged with the index
of a finite-support type. Distributions are piecewise constant in time:
a schedule is an ordered list of phases, each phase holding one law.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Union

import numpy as np
from scipy.special import ndtr, ndtri

WEIGHT_TOL = 1e-12
SEED_MIX = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1
Q_SAMPLES = 100_000


class MissingScheduleError(ValueError):
    pass


def trial_seed(master: int, index: int) -> int:
    """Per-trial 64-bit seed: master xor (index times a large odd constant)."""
    return (int(master) ^ ((int(index) * SEED_MIX) & MASK64)) & MASK64


@dataclass(frozen=True, eq=False)
class ArrivalParameter:
    reward: float
    consumption: np.ndarray
    type_index: Optional[int] = None

    def __post_init__(self):
        a = np.asarray(self.consumption, dtype=float).reshape(-1)
        object.__setattr__(self, "consumption", a)
        if not np.isfinite(self.reward):
            raise ValueError("reward must be finite")

    @property
    def m(self) -> int:
        return self.consumption.size


def rho_distance(a: ArrivalParameter, b: ArrivalParameter) -> float:
    """Sup-norm distance between two linear-family parameters.

    With actions in [0,1] the sup over x of the gap in (f, g) is reached
    at x = 1, so this is the sup norm of the stacked coefficients.
    """
    if a.m != b.m:
        raise ValueError(f"dimension mismatch: {a.m} vs {b.m}")
    gap = abs(a.reward - b.reward)
    if a.m:
        gap = max(gap, float(np.max(np.abs(a.consumption - b.consumption))))
    return float(gap)


# ---------------------------------------------------------------- laws


@dataclass(frozen=True)
class PointMass:
    value: float

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return np.full(size, float(self.value))

    def cdf(self, x):
        return (np.asarray(x, dtype=float) >= self.value).astype(float)

    def quantile(self, u):
        return np.full(np.shape(u), float(self.value))

    def support(self) -> tuple[float, float]:
        return (float(self.value), float(self.value))

    def to_dict(self) -> dict:
        return {"kind": "point_mass", "value": self.value}


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"Uniform needs lo <= hi, got [{self.lo}, {self.hi}]")

    def sample(self, rng, size):
        return rng.uniform(self.lo, self.hi, size)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.hi == self.lo:
            return (x >= self.lo).astype(float)
        return np.clip((x - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def quantile(self, u):
        return self.lo + np.asarray(u, dtype=float) * (self.hi - self.lo)

    def support(self):
        return (float(self.lo), float(self.hi))

    def to_dict(self):
        return {"kind": "uniform", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class TruncNormal:
    """Normal(mean, sd) made nonnegative.

    ``mode="reject"`` conditions on x >= 0 (negative draws are redrawn);
    ``mode="censor"`` maps negative draws to 0, leaving an atom at 0.
    """

    mean: float
    sd: float
    mode: str = "reject"

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("TruncNormal sd must be positive")
        if self.mode not in ("reject", "censor"):
            raise ValueError("TruncNormal mode must be 'reject' or 'censor'")

    @property
    def _mass_below(self) -> float:
        return float(ndtr(-self.mean / self.sd))

    def sample(self, rng, size):
        out = rng.normal(self.mean, self.sd, size)
        if self.mode == "censor":
            return np.maximum(out, 0.0)
        bad = out < 0
        while np.any(bad):
            out[bad] = rng.normal(self.mean, self.sd, int(bad.sum()))
            bad = out < 0
        return out

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        base = ndtr((x - self.mean) / self.sd)
        if self.mode == "censor":
            return np.where(x < 0, 0.0, base)
        z0 = self._mass_below
        val = (base - z0) / (1.0 - z0)
        return np.where(x < 0, 0.0, np.clip(val, 0.0, 1.0))

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        if self.mode == "censor":
            return np.maximum(self.mean + self.sd * ndtri(u), 0.0)
        z0 = self._mass_below
        return np.maximum(self.mean + self.sd * ndtri(z0 + u * (1.0 - z0)), 0.0)

    def support(self):
        return (0.0, np.inf)

    def to_dict(self):
        doc = {"kind": "trunc_normal", "mean": self.mean, "sd": self.sd}
        if self.mode != "reject":
            doc["mode"] = self.mode
        return doc


@dataclass(frozen=True)
class Mixture:
    components: tuple  # of (weight, law)

    def __post_init__(self):
        comps = tuple((float(w), law) for w, law in self.components)
        object.__setattr__(self, "components", comps)
        w = np.array([c[0] for c in comps])
        if w.size == 0 or np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError("mixture weights must be nonnegative and sum to 1")

    @property
    def weights(self) -> np.ndarray:
        return np.array([c[0] for c in self.components])

    def sample(self, rng, size):
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        which = rng.choice(len(self.components), size=n, p=self.weights)
        out = np.empty(n)
        for k, (_, law) in enumerate(self.components):
            idx = np.flatnonzero(which == k)
            if idx.size:
                out[idx] = law.sample(rng, idx.size)
        return out.reshape(shape)

    def cdf(self, x):
        return sum(w * law.cdf(x) for w, law in self.components)

    def quantile(self, u, iters: int = 100):
        # The mixture quantile is bracketed by the component quantiles;
        # bisect on the cdf inside that bracket.
        u = np.asarray(u, dtype=float)
        qs = np.stack([np.broadcast_to(law.quantile(u), u.shape) for _, law in self.components])
        lo, hi = qs.min(axis=0), qs.max(axis=0)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return hi

    def support(self):
        sups = [law.support() for w, law in self.components if w > 0]
        return (min(s[0] for s in sups), max(s[1] for s in sups))

    def to_dict(self):
        return {
            "kind": "mixture",
            "components": [{"weight": w, "law": law.to_dict()} for w, law in self.components],
        }


RewardLaw = Union[PointMass, Uniform, TruncNormal, Mixture]


@dataclass(frozen=True, eq=False)
class FiniteSupport:
    """Finitely many arrival types ``(rewards[j], consumption[j])`` with probabilities."""

    rewards: np.ndarray
    consumption: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rewards, dtype=float).reshape(-1)
        a = np.asarray(self.consumption, dtype=float)
        if a.ndim == 1:
            a = a.reshape(r.size, -1)
        p = np.asarray(self.probs, dtype=float).reshape(-1)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "consumption", a)
        object.__setattr__(self, "probs", p)
        if a.shape[0] != r.size or p.size != r.size:
            raise ValueError("finite support arrays disagree on the number of types")
        if np.any(p < 0) or abs(p.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError("finite support probabilities must be nonnegative and sum to 1")
        if np.any(a < 0) or np.any(a > 1):
            raise ValueError("finite support consumption entries must lie in [0,1]")
        if not np.all(np.isfinite(r)):
            raise ValueError("finite support rewards must be finite")

    @property
    def n(self) -> int:
        return self.rewards.size

    def same_points(self, other: "FiniteSupport") -> bool:
        return (
            self.rewards.shape == other.rewards.shape
            and self.consumption.shape == other.consumption.shape
            and np.array_equal(self.rewards, other.rewards)
            and np.array_equal(self.consumption, other.consumption)
        )

    def points(self) -> list[ArrivalParameter]:
        return [ArrivalParameter(float(r), a, j) for j, (r, a) in enumerate(zip(self.rewards, self.consumption))]

    def to_dict(self):
        return {
            "kind": "finite_support",
            "points": [{"reward": float(r), "consumption": a.tolist()} for r, a in zip(self.rewards, self.consumption)],
            "probs": self.probs.tolist(),
        }


@dataclass(frozen=True)
class PhaseDistribution:
    """One period's law: reward and per-resource consumption drawn independently,
    or a joint finite-support law (then ``reward_law`` is None)."""

    reward_law: Optional[RewardLaw]
    consumption_law: Union[RewardLaw, FiniteSupport]

    def __post_init__(self):
        if not self.is_finite and self.reward_law is None:
            raise ValueError("continuous phases need a reward law")

    @property
    def is_finite(self) -> bool:
        return isinstance(self.consumption_law, FiniteSupport)

    def to_dict(self, start: int) -> dict:
        return {
            "start": start,
            "reward_law": None if self.reward_law is None else self.reward_law.to_dict(),
            "consumption_law": self.consumption_law.to_dict(),
        }


@dataclass(frozen=True)
class DistributionSchedule:
    horizon: int
    phases: tuple  # of (start_period, PhaseDistribution), 1-based starts

    def __post_init__(self):
        phases = tuple((int(s), d) for s, d in self.phases)
        object.__setattr__(self, "phases", phases)
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        starts = [s for s, _ in phases]
        if not starts or starts[0] != 1:
            raise ValueError("first phase must start at period 1")
        if any(b <= a for a, b in zip(starts, starts[1:])) or starts[-1] > self.horizon:
            raise ValueError("phase starts must be strictly increasing within 1..T")
        finite = [d.is_finite for _, d in phases]
        if any(finite) and not all(finite):
            raise ValueError("cannot mix finite-support and continuous phases")
        if all(finite):
            first = phases[0][1].consumption_law
            if not all(d.consumption_law.same_points(first) for _, d in phases):
                raise ValueError("finite-support phases must share the same support points")

    @property
    def is_finite(self) -> bool:
        return self.phases[0][1].is_finite

    @property
    def starts(self) -> np.ndarray:
        return np.array([s for s, _ in self.phases])

    @property
    def lengths(self) -> np.ndarray:
        ends = np.append(self.starts[1:], self.horizon + 1)
        return ends - self.starts

    def phase_of_period(self) -> np.ndarray:
        """Phase index for each 0-based period."""
        return np.repeat(np.arange(len(self.phases)), self.lengths)

    def law(self, k: int) -> PhaseDistribution:
        return self.phases[k][1]

    def num_resources(self) -> int:
        d = self.law(0)
        if d.is_finite:
            return d.consumption_law.consumption.shape[1]
        raise ValueError("continuous schedules do not fix m; it comes from the instance")

    def support_points(self) -> FiniteSupport:
        if not self.is_finite:
            raise ValueError("schedule is not finite-support")
        return self.law(0).consumption_law

    def period_probs(self) -> np.ndarray:
        """T x n matrix of per-period type probabilities (finite support)."""
        P = np.stack([d.consumption_law.probs for _, d in self.phases])
        return P[self.phase_of_period()]

    def tail(self, start: int) -> "DistributionSchedule":
        """Schedule restricted to periods start..T, renumbered from 1."""
        if not 1 <= start <= self.horizon:
            raise ValueError("tail start out of range")
        keep = []
        for s, d in self.phases:
            if s <= start:
                keep = [(1, d)]
            else:
                keep.append((s - start + 1, d))
        return DistributionSchedule(self.horizon - start + 1, tuple(keep))

    def to_dict(self) -> dict:
        return {"T": self.horizon, "phases": [d.to_dict(s) for s, d in self.phases]}


# ---------------------------------------------------------------- instance


@dataclass(frozen=True)
class Instance:
    horizon: int
    num_resources: int
    capacities: np.ndarray
    true_schedule: DistributionSchedule
    prior_schedule: Optional[DistributionSchedule] = None
    q_bound: Optional[float] = None
    clip_consumption: bool = True
    name: str = ""

    def __post_init__(self):
        c = np.asarray(self.capacities, dtype=float).reshape(-1)
        object.__setattr__(self, "capacities", c)
        if c.size != self.num_resources:
            raise ValueError("capacities length differs from num_resources")
        if np.any(c <= 0) or not np.all(np.isfinite(c)):
            raise ValueError("capacities must be positive and finite")
        for s in (self.true_schedule, self.prior_schedule):
            if s is None:
                continue
            if s.horizon != self.horizon:
                raise ValueError("schedules must share the instance horizon")
            if s.is_finite and s.num_resources() != self.num_resources:
                raise ValueError("finite support consumption width differs from m")

    @property
    def is_finite(self) -> bool:
        return self.true_schedule.is_finite

    def schedule(self, which: str) -> DistributionSchedule:
        if which == "true":
            return self.true_schedule
        if which == "prior":
            if self.prior_schedule is None:
                raise MissingScheduleError("instance has no prior schedule")
            return self.prior_schedule
        raise ValueError(f"unknown schedule {which!r}")

    def prior_or_true(self) -> DistributionSchedule:
        return self.prior_schedule if self.prior_schedule is not None else self.true_schedule

    def q(self) -> float:
        """The ratio bound: given value, else analytic from bounded supports,
        else a sample estimate over the prior schedule."""
        if self.q_bound is not None:
            return float(self.q_bound)
        analytic = _analytic_q(self)
        if analytic is not None:
            return analytic
        path = sample_path(self, "prior" if self.prior_schedule is not None else "true", 0, size=Q_SAMPLES)
        return path_q(path)

    def rescaled(self, horizon: int) -> "Instance":
        """Same laws on a new horizon; phase starts and capacities scale linearly."""
        f = horizon / self.horizon

        def scale(s: Optional[DistributionSchedule]):
            if s is None:
                return None
            phases = []
            for start, d in s.phases:
                new = int(np.floor((start - 1) * f)) + 1
                if phases and phases[-1][0] == new:
                    phases[-1] = (new, d)
                else:
                    phases.append((new, d))
            return DistributionSchedule(horizon, tuple(phases))

        return Instance(
            horizon,
            self.num_resources,
            self.capacities * f,
            scale(self.true_schedule),
            scale(self.prior_schedule),
            self.q_bound,
            self.clip_consumption,
            self.name,
        )

    def to_dict(self) -> dict:
        doc = {
            "T": self.horizon,
            "m": self.num_resources,
            "c": self.capacities.tolist(),
            "phases": self.true_schedule.to_dict()["phases"],
        }
        if self.prior_schedule is not None:
            doc["prior_phases"] = self.prior_schedule.to_dict()["phases"]
        if self.q_bound is not None:
            doc["q_bound"] = self.q_bound
        if not self.clip_consumption:
            doc["clip"] = False
        return doc


def _analytic_q(instance: Instance) -> Optional[float]:
    best = 0.0
    for s in (instance.true_schedule, instance.prior_schedule):
        if s is None:
            continue
        for _, d in s.phases:
            if d.is_finite:
                fs = d.consumption_law
                live = fs.probs > 0
                for r, a in zip(fs.rewards[live], fs.consumption[live]):
                    pos = a[a > 0]
                    if pos.size and r > 0:
                        best = max(best, r / pos.min())
                continue
            r_hi = d.reward_law.support()[1]
            a_lo, a_hi = d.consumption_law.support()
            if not np.isfinite(r_hi):
                return None
            if r_hi <= 0 or a_hi <= 0:
                continue
            if a_lo <= 0:
                return np.inf
            best = max(best, r_hi / min(a_lo, 1.0))
    return best


# ---------------------------------------------------------------- sampling


@dataclass
class SampledPath:
    rewards: np.ndarray
    consumption: np.ndarray
    type_index: Optional[np.ndarray] = None
    clip_count: int = 0

    def __len__(self) -> int:
        return self.rewards.size

    def __getitem__(self, t: int) -> ArrivalParameter:
        j = None if self.type_index is None else int(self.type_index[t])
        return ArrivalParameter(float(self.rewards[t]), self.consumption[t], j)

    def __iter__(self) -> Iterator[ArrivalParameter]:
        for t in range(len(self)):
            yield self[t]

    @classmethod
    def from_parameters(cls, params: Sequence[ArrivalParameter]) -> "SampledPath":
        r = np.array([p.reward for p in params], dtype=float)
        a = np.array([p.consumption for p in params], dtype=float).reshape(len(params), -1)
        idx = [p.type_index for p in params]
        ti = None if any(j is None for j in idx) else np.array(idx, dtype=int)
        return cls(r, a, ti, 0)


def path_q(path: SampledPath) -> float:
    """Largest r / a_i over periods and resources with a_i > 0 (0 if none)."""
    a = path.consumption
    r = np.broadcast_to(path.rewards[:, None], a.shape)
    pos = a > 0
    if not np.any(pos):
        return 0.0
    return float(max(0.0, np.max(r[pos] / a[pos])))


def sample_path(instance: Instance, which: str, seed: int, size: Optional[int] = None) -> SampledPath:
    """Draw one path from the chosen schedule.

    Phases are sampled in order (rewards first, then consumption, then the
    next phase) from a single ``default_rng(seed)`` stream. ``size``
    overrides the horizon with a stationary draw from the schedule's
    mixture of phases, used for q estimation.
    """
    sched = instance.schedule(which)
    rng = np.random.default_rng(seed)
    m = instance.num_resources
    if size is not None:
        lengths = np.floor(sched.lengths / sched.horizon * size).astype(int)
        lengths[-1] += size - lengths.sum()
    else:
        lengths = sched.lengths

    if sched.is_finite:
        probs = np.repeat(np.stack([d.consumption_law.probs for _, d in sched.phases]), lengths, axis=0)
        cdf = np.cumsum(probs, axis=1)
        cdf[:, -1] = 1.0
        u = rng.random(probs.shape[0])
        idx = (u[:, None] >= cdf).sum(axis=1)
        fs = sched.support_points()
        return SampledPath(fs.rewards[idx].copy(), fs.consumption[idx].copy(), idx, 0)

    T = int(lengths.sum())
    rewards = np.empty(T)
    cons = np.empty((T, m))
    pos = 0
    for (_, d), n in zip(sched.phases, lengths):
        if n == 0:
            continue
        rewards[pos:pos + n] = d.reward_law.sample(rng, n)
        cons[pos:pos + n] = d.consumption_law.sample(rng, (n, m))
        pos += n
    clips = 0
    if instance.clip_consumption:
        outside = (cons < 0) | (cons > 1)
        clips = int(outside.sum())
        np.clip(cons, 0.0, 1.0, out=cons)
    return SampledPath(rewards, cons, None, clips)


# ---------------------------------------------------------------- JSON


def law_from_dict(doc: Optional[dict]):
    if doc is None:
        return None
    doc = dict(doc)
    kind = doc.pop("kind", None)
    fields = {
        "point_mass": {"value"},
        "uniform": {"lo", "hi"},
        "trunc_normal": {"mean", "sd"},
        "mixture": {"components"},
        "finite_support": {"points", "probs"},
    }
    if kind not in fields:
        raise ValueError(f"unknown law kind {kind!r}")
    optional = {"mode"} if kind == "trunc_normal" else set()
    if not fields[kind] <= set(doc) <= fields[kind] | optional:
        raise ValueError(f"{kind} law expects fields {sorted(fields[kind])}, got {sorted(doc)}")
    if kind == "point_mass":
        return PointMass(float(doc["value"]))
    if kind == "uniform":
        return Uniform(float(doc["lo"]), float(doc["hi"]))
    if kind == "trunc_normal":
        return TruncNormal(float(doc["mean"]), float(doc["sd"]), str(doc.get("mode", "reject")))
    if kind == "mixture":
        comps = []
        for c in doc["components"]:
            if set(c) != {"weight", "law"}:
                raise ValueError("mixture components need exactly weight and law")
            comps.append((float(c["weight"]), law_from_dict(c["law"])))
        return Mixture(tuple(comps))
    pts = doc["points"]
    for p in pts:
        if set(p) != {"reward", "consumption"}:
            raise ValueError("finite support points need exactly reward and consumption")
    return FiniteSupport(
        np.array([p["reward"] for p in pts], dtype=float),
        np.array([p["consumption"] for p in pts], dtype=float),
        np.array(doc["probs"], dtype=float),
    )


def _phases_from_list(T: int, items: list) -> DistributionSchedule:
    phases = []
    for item in items:
        extra = set(item) - {"start", "reward_law", "consumption_law"}
        if extra:
            raise ValueError(f"unknown phase fields: {sorted(extra)}")
        phases.append(
            (int(item["start"]), PhaseDistribution(law_from_dict(item.get("reward_law")), law_from_dict(item["consumption_law"])))
        )
    return DistributionSchedule(T, tuple(phases))


def schedule_from_dict(doc: dict) -> DistributionSchedule:
    """Accepts a bare schedule ``{T, phases}`` or a full instance document."""
    allowed = {"T", "phases", "m", "c", "prior_phases", "q_bound", "clip"}
    extra = set(doc) - allowed
    if extra:
        raise ValueError(f"unknown schedule fields: {sorted(extra)}")
    return _phases_from_list(int(doc["T"]), doc["phases"])


def instance_from_dict(doc: dict) -> Instance:
    allowed = {"T", "m", "c", "phases", "prior_phases", "q_bound", "clip"}
    extra = set(doc) - allowed
    if extra:
        raise ValueError(f"unknown instance fields: {sorted(extra)}")
    T = int(doc["T"])
    prior = doc.get("prior_phases")
    return Instance(
        horizon=T,
        num_resources=int(doc["m"]),
        capacities=np.array(doc["c"], dtype=float),
        true_schedule=_phases_from_list(T, doc["phases"]),
        prior_schedule=None if prior is None else _phases_from_list(T, prior),
        q_bound=doc.get("q_bound"),
        clip_consumption=bool(doc.get("clip", True)),
    )


def load_instance(path: str) -> Instance:
    with open(path) as fh:
        return instance_from_dict(json.load(fh))


def save_instance(instance: Instance, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(instance.to_dict(), fh, indent=2)
