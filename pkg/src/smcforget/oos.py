"""Retrospective handling of a delayed (out-of-sequence) time-0 measurement.

A filter has already been run with ``G_0 = 1`` (the time-0 measurement was
missing) and its particle states ``X~_0, ..., X~_{k+1}`` were stored.  When
the measurement arrives, a corrected filter with ``G_0 = G_0'`` is
simulated conditionally on the stored states, step by step, by maximal
coupling of the two predictive laws.  At the first time ``sigma`` where the
states agree, the stored suffix is a valid sample of the corrected filter
and the replay stops.
"""

from __future__ import annotations

import math

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .coupling import (
    PredictiveMixture,
    cond_max_couple,
    cond_max_couple_discrete,
    discrete_predictive,
)
from .errors import DomainError
from .fkmodel import DiscreteFKModel, FeynmanKacModel
from .smc import ParticleSystem, pf_trajectory

OOS_SCHEMES = ("state", "individual", "alternating")


class _DelayedPotentialModel(FeynmanKacModel):
    """General model whose ``G_0`` is multiplied by the delayed likelihood."""

    def __init__(self, base: FeynmanKacModel, delayed: Callable):
        self.base = base
        self.delayed = delayed
        self.horizon = base.horizon
        self.bounds = None

    def sample_initial(self, rng, size):
        return self.base.sample_initial(rng, size)

    def initial_density(self, x):
        return self.base.initial_density(x)

    def sample_mutation(self, k, x, rng):
        return self.base.sample_mutation(k, x, rng)

    def mutation_density(self, k, x, y):
        return self.base.mutation_density(k, x, y)

    def potential(self, k, x):
        g = self.base.potential(k, x)
        return g * np.asarray(self.delayed(x), dtype=float) if k == 0 else g


def corrected_model(base: FeynmanKacModel, delayed_potential) -> FeynmanKacModel:
    """The model including the late measurement: ``G_0 <- G_0 * G_0'``.

    For discrete models ``delayed_potential`` is a vector over states;
    otherwise a callable on state arrays.
    """
    if isinstance(base, DiscreteFKModel):
        g = np.asarray(delayed_potential, dtype=float)
        if g.shape != (base.S,) or np.any(g <= 0):
            raise DomainError("delayed potential must be a positive vector over states")
        return base.with_potential(0, base.potential_vector(0) * g)
    return _DelayedPotentialModel(base, delayed_potential)


@dataclass
class DelayedMeasurementScenario:
    """Stored base-filter states ``X~_0..X~_{k+1}`` plus the late measurement's likelihood."""

    base_model: FeynmanKacModel
    trajectory: Sequence[ParticleSystem]
    delayed_potential: object

    def __post_init__(self):
        if len(self.trajectory) < 2:
            raise DomainError("need at least X~_0 and X~_1")
        for t, sys in enumerate(self.trajectory):
            if sys.k != t:
                raise DomainError("stored trajectory must hold consecutive times starting at 0")
        if isinstance(self.base_model, DiscreteFKModel):
            g = np.asarray(self.delayed_potential, dtype=float)
            if np.any(g <= 0):
                raise DomainError("delayed potential must be strictly positive")

    @property
    def arrival(self) -> int:
        """Index ``k + 1`` of the latest stored state."""
        return len(self.trajectory) - 1

    @property
    def N(self) -> int:
        return self.trajectory[0].N


@dataclass
class OOSResult:
    trajectory: list[ParticleSystem]
    sigma: Optional[int]
    coupled: bool
    final: ParticleSystem = field(repr=False)


def simulate_scenario(model: FeynmanKacModel, N: int, arrival: int, delayed_potential,
                      rng: np.random.Generator) -> DelayedMeasurementScenario:
    """Run the base filter up to ``arrival`` and package the stored states."""
    traj = list(pf_trajectory(model, N, arrival, rng))
    return DelayedMeasurementScenario(model, traj, delayed_potential)


def _couple_given(x_given: np.ndarray, model_given, model_target, prev_given, prev_target,
                  k: int, scheme_step: str, rng) -> np.ndarray:
    """Draw ``X_t`` conditionally on ``X~_t = x_given``."""
    N = x_given.shape[-1]
    if isinstance(model_given, DiscreteFKModel):
        mu_given = discrete_predictive(model_given, prev_given, k)
        mu_target = discrete_predictive(model_target, prev_target, k)
        if scheme_step == "individual":
            return cond_max_couple_discrete(x_given, mu_given, mu_target, rng)
        with np.errstate(divide="ignore"):
            lg, lt = np.log(mu_given.probs), np.log(mu_target.probs)
        return np.asarray(cond_max_couple(
            x_given, lambda v: float(lg[v].sum()), lambda v: float(lt[v].sum()),
            lambda r: mu_target.sample(r, N), rng))
    mix_given = PredictiveMixture(model_given, prev_given, k)
    mix_target = PredictiveMixture(model_target, prev_target, k)
    if scheme_step == "individual":
        return np.array([cond_max_couple(x, mix_given.log_density, mix_target.log_density,
                                         mix_target.sample, rng) for x in x_given])
    return np.asarray(cond_max_couple(
        x_given,
        lambda v: sum(mix_given.log_density(y) for y in v),
        lambda v: sum(mix_target.log_density(y) for y in v),
        lambda r: mix_target.sample(r, N), rng))


def process_oos(scenario: DelayedMeasurementScenario, scheme: str, rng: np.random.Generator,
                start_with: str = "state") -> OOSResult:
    """Replay the corrected filter against the stored states until they coincide.

    Returns the corrected states ``X_0..X_sigma`` (or ``X_0..X_{k+1}`` when
    coupling never happens) and ``final``, the state to use at the arrival
    step: the stored ``X~_{k+1}`` when coupled, else the corrected ``X_{k+1}``.
    """
    if scheme not in OOS_SCHEMES:
        raise DomainError(f"unknown scheme {scheme!r}")
    base = scenario.base_model
    target = corrected_model(base, scenario.delayed_potential)
    stored = scenario.trajectory
    # both filters draw X_0 from eta_0, so they share it
    out = [stored[0]]
    for t in range(1, scenario.arrival + 1):
        if scheme == "alternating":
            step = start_with if t % 2 == 1 else ("individual" if start_with == "state" else "state")
        else:
            step = scheme
        x_t = _couple_given(stored[t].particles, base, target, stored[t - 1].particles,
                            out[-1].particles, t - 1, step, rng)
        if np.array_equal(x_t, stored[t].particles):
            out.append(stored[t])
            return OOSResult(out, t, True, stored[-1])
        out.append(ParticleSystem(x_t, t))
    return OOSResult(out, None, False, out[-1])


@dataclass(frozen=True)
class OOSRecord:
    N: int
    delay: int
    scheme: str
    sigma: Optional[int]
    coupled: bool


@dataclass(frozen=True)
class DiagnosticRow:
    N: int
    delay: int
    scheme: str
    replicates: int
    #: None when at least half of the runs did not couple
    median_sigma: Optional[float]
    coupled_fraction: float


@dataclass
class Diagnostic:
    rows: list[DiagnosticRow]
    #: (N, scheme) -> smallest delay whose coupling frequency is >= threshold, or None
    safe_delay: dict
    #: (N, delay, scheme) -> counts for sigma = 1..delay, then a final "not coupled" bin
    histograms: dict


def coupling_diagnostic(records: Sequence[OOSRecord], threshold: float = 0.99) -> Diagnostic:
    """Summarize coupling times per ``(N, delay, scheme)``.

    Histogram bins with zero counts are kept so every delay has the same
    bin layout.
    """
    if not records:
        raise DomainError("empty batch")
    groups: dict = {}
    for r in records:
        groups.setdefault((r.N, r.delay, r.scheme), []).append(r)
    rows, hists = [], {}
    for (N, delay, scheme), rs in sorted(groups.items()):
        sig = [r.sigma for r in rs if r.coupled]
        # uncoupled runs have sigma beyond the arrival step, so they count as +inf
        med = float(np.median(sig + [math.inf] * (len(rs) - len(sig))))
        rows.append(DiagnosticRow(N, delay, scheme, len(rs),
                                  med if math.isfinite(med) else None, len(sig) / len(rs)))
        counts = np.zeros(delay + 1, dtype=int)
        for s in sig:
            counts[s - 1] += 1
        counts[delay] = len(rs) - len(sig)
        hists[(N, delay, scheme)] = counts
    safe: dict = {}
    for row in rows:
        key = (row.N, row.scheme)
        safe.setdefault(key, None)
        if row.coupled_fraction >= threshold and (safe[key] is None or row.delay < safe[key]):
            safe[key] = row.delay
    return Diagnostic(rows, safe, hists)
