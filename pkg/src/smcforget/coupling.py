"""Maximal couplings of particle filters and coupling-time measurement.

Two filters with the same dynamics but different states are advanced
jointly.  The *individual* scheme maximally couples each particle pair of
the two predictive mixtures independently; the *state* scheme maximally
couples the two product laws of the whole particle vectors.  Once the
vectors agree the pair moves with common randomness forever after.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .exact import binomial_pmf
from .errors import DegenerateWeightError, DimensionError, DomainError, NonTerminationError
from .fkmodel import DiscreteFKModel, FeynmanKacModel
from .measures import DiscretePMF, max_couple_discrete, sample_from_probs, tv_distance
from .smc import ParticleSystem, pf_step, sample_ancestors

MAX_REJECTIONS = 10**7
SCHEMES = ("individual", "state", "alternating")


def cond_max_couple(x, log_mu: Callable, log_nu: Callable, sample_nu: Callable,
                    rng: np.random.Generator, max_iter: int = MAX_REJECTIONS):
    """Given ``x ~ mu``, return ``y ~ nu`` such that ``(x, y)`` is a maximal coupling.

    Densities are passed as log-densities (w.r.t. a common dominating
    measure) so that product laws over many particles do not underflow.
    Keep ``x`` with probability ``1 ^ nu(x)/mu(x)``; otherwise propose
    ``y ~ nu`` and accept with probability ``1 - (1 ^ mu(y)/nu(y))``.
    """
    if rng.random() < math.exp(min(0.0, log_nu(x) - log_mu(x))):
        return x
    for _ in range(max_iter):
        y = sample_nu(rng)
        if rng.random() >= math.exp(min(0.0, log_mu(y) - log_nu(y))):
            return y
    raise NonTerminationError(f"cond_max_couple: no acceptance in {max_iter} proposals")


def cond_max_couple_discrete(x, mu: DiscretePMF, nu: DiscretePMF, rng: np.random.Generator) -> np.ndarray:
    """Vectorized conditional maximal coupling on a finite alphabet.

    Each entry of ``x`` (assumed drawn from ``mu``) is kept with probability
    ``1 ^ nu(x)/mu(x)`` and otherwise replaced by a draw from the normalized
    residual ``(nu - mu)^+``, which is the exact output law of the rejection
    loop in :func:`cond_max_couple`.
    """
    if mu.size != nu.size:
        raise DimensionError("alphabet sizes differ")
    x = np.asarray(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        keep_prob = np.where(mu.probs > 0, np.minimum(1.0, nu.probs / mu.probs), 0.0)
    keep = rng.random(x.shape) < keep_prob[x]
    out = x.copy()
    n_move = int(np.count_nonzero(~keep))
    if n_move:
        residual = np.clip(nu.probs - mu.probs, 0.0, None)
        out[~keep] = sample_from_probs(residual, rng, n_move)
    return out


@dataclass(frozen=True, eq=False)
class CoupledFilterPair:
    sys_a: ParticleSystem
    sys_b: ParticleSystem
    coupled: bool = False
    sigma: Optional[int] = None

    @classmethod
    def start(cls, particles_a, particles_b, k: int = 0) -> CoupledFilterPair:
        a = np.asarray(particles_a)
        b = np.asarray(particles_b)
        if a.shape != b.shape or a.ndim != 1:
            raise DimensionError("coupled filters need equal particle counts")
        same = bool(np.array_equal(a, b))
        return cls(ParticleSystem(a, k), ParticleSystem(b, k), same, k if same else None)

    @property
    def k(self) -> int:
        return self.sys_a.k


def discrete_predictive(model: DiscreteFKModel, particles: np.ndarray, k: int) -> DiscretePMF:
    """Exact pmf of ``Phi_{k+1}`` applied to the empirical measure of ``particles`` (time k)."""
    counts = np.bincount(np.asarray(particles).ravel(), minlength=model.S).astype(float)
    w = counts * model.potential_vector(k)
    total = w.sum()
    if not total > 0:
        raise DegenerateWeightError("all weights are zero")
    return DiscretePMF((w / total) @ model.mutation_matrix(k + 1))


class PredictiveMixture:
    """Predictive mixture ``sum_j W^j M_{k+1}(X^j, .)`` of a general model."""

    def __init__(self, model: FeynmanKacModel, particles: np.ndarray, k: int):
        w = np.asarray(model.potential(k, particles), dtype=float)
        total = w.sum()
        if not total > 0:
            raise DegenerateWeightError("all weights are zero")
        self.model, self.particles, self.k = model, particles, k
        self.weights = w / total

    def log_density(self, y) -> float:
        d = self.model.mutation_density(self.k + 1, self.particles, y)
        return math.log(float(np.dot(self.weights, d)))

    def sample(self, rng, n=None):
        size = 1 if n is None else n
        a = sample_ancestors(self.weights, size, rng)
        y = self.model.sample_mutation(self.k + 1, self.particles[a], rng)
        return y[0] if n is None else y


def _advance_together(pair: CoupledFilterPair, model, rng) -> CoupledFilterPair:
    nxt = pf_step(pair.sys_a, model, rng)
    return replace(pair, sys_a=nxt, sys_b=nxt)


def _finish(pair: CoupledFilterPair, xa: np.ndarray, xb: np.ndarray) -> CoupledFilterPair:
    k = pair.k + 1
    same = bool(np.array_equal(xa, xb))
    if same:
        xb = xa
    return CoupledFilterPair(ParticleSystem(xa, k), ParticleSystem(xb, k), same, k if same else None)


def coupled_step_individual(pair: CoupledFilterPair, model: FeynmanKacModel,
                            rng: np.random.Generator) -> CoupledFilterPair:
    """Couple each particle pair maximally and independently across ``i``."""
    if pair.coupled:
        return _advance_together(pair, model, rng)
    N, k = pair.sys_a.N, pair.k
    if isinstance(model, DiscreteFKModel):
        mu = discrete_predictive(model, pair.sys_a.particles, k)
        nu = discrete_predictive(model, pair.sys_b.particles, k)
        xa, xb = max_couple_discrete(mu, nu, rng, size=N)
        return _finish(pair, xa, xb)
    mu = PredictiveMixture(model, pair.sys_a.particles, k)
    nu = PredictiveMixture(model, pair.sys_b.particles, k)
    xa = mu.sample(rng, N)
    xb = np.array([cond_max_couple(x, mu.log_density, nu.log_density, nu.sample, rng) for x in xa])
    return _finish(pair, xa, xb)


def coupled_step_state(pair: CoupledFilterPair, model: FeynmanKacModel,
                       rng: np.random.Generator) -> CoupledFilterPair:
    """Maximally couple the product laws ``mu^{(x)N}`` and ``nu^{(x)N}`` of the next states."""
    if pair.coupled:
        return _advance_together(pair, model, rng)
    N, k = pair.sys_a.N, pair.k
    if isinstance(model, DiscreteFKModel):
        mu = discrete_predictive(model, pair.sys_a.particles, k)
        nu = discrete_predictive(model, pair.sys_b.particles, k)
        with np.errstate(divide="ignore"):
            lmu, lnu = np.log(mu.probs), np.log(nu.probs)

        def log_mu(v):
            return float(lmu[v].sum())

        def log_nu(v):
            return float(lnu[v].sum())

        def sample_nu(r):
            return nu.sample(r, N)

        xa = mu.sample(rng, N)
    else:
        mix_a = PredictiveMixture(model, pair.sys_a.particles, k)
        mix_b = PredictiveMixture(model, pair.sys_b.particles, k)

        def log_mu(v):
            return sum(mix_a.log_density(y) for y in v)

        def log_nu(v):
            return sum(mix_b.log_density(y) for y in v)

        def sample_nu(r):
            return mix_b.sample(r, N)

        xa = mix_a.sample(rng, N)
    xb = cond_max_couple(xa, log_mu, log_nu, sample_nu, rng)
    return _finish(pair, xa, np.asarray(xb))


def state_coupling_probability(mu: DiscretePMF, nu: DiscretePMF, N: int) -> float:
    """Exact ``1 - TV(mu^{(x)N}, nu^{(x)N})`` for two-state laws.

    The likelihood ratio of product Bernoulli laws depends only on the
    number of ones, so the product TV equals the TV of two binomials.
    """
    if mu.size != 2 or nu.size != 2:
        raise DimensionError("exact product TV is implemented for two-state laws")
    a = binomial_pmf(N, mu[1])
    b = binomial_pmf(N, nu[1])
    return 1.0 - min(1.0, 0.5 * float(np.abs(a - b).sum()))


def individual_coupling_probability(mu: DiscretePMF, nu: DiscretePMF, N: int) -> float:
    """Exact ``(1 - TV(mu, nu))^N`` for independent per-particle maximal couplings."""
    return (1.0 - tv_distance(mu, nu)) ** N


@dataclass(frozen=True)
class CouplingResult:
    sigma: Optional[int]
    timed_out: bool
    steps: int


def coupling_time(model: FeynmanKacModel, N: int, init_a, init_b, scheme: str, max_steps: int,
                  rng: np.random.Generator, start_with: str = "state",
                  faithful_steps: int = 0) -> CouplingResult:
    """Run coupled filters from ``init_a``/``init_b`` until their states coincide.

    ``alternating`` uses the state coupling and the individual coupling on
    successive steps, beginning with ``start_with``.  Reaching
    ``max_steps`` without coupling is reported through ``timed_out``.
    With ``faithful_steps > 0`` the pair keeps running after coupling and
    the two trajectories are asserted identical.
    """
    if scheme not in SCHEMES:
        raise DomainError(f"unknown scheme {scheme!r}")
    if start_with not in ("state", "individual"):
        raise DomainError(f"unknown start_with {start_with!r}")
    if max_steps > model.horizon:
        raise DomainError(f"max_steps={max_steps} exceeds horizon {model.horizon}")
    pair = CoupledFilterPair.start(init_a, init_b)
    if np.asarray(init_a).size != N:
        raise DimensionError("initial state size does not match N")
    steps = 0
    while not pair.coupled and steps < max_steps:
        pair = _scheme_step(scheme, steps, start_with)(pair, model, rng)
        steps += 1
    if not pair.coupled:
        return CouplingResult(None, True, steps)
    for _ in range(min(faithful_steps, model.horizon - pair.k)):
        pair = _advance_together(pair, model, rng)
        if not np.array_equal(pair.sys_a.particles, pair.sys_b.particles):
            raise AssertionError("coupled filters diverged")
    return CouplingResult(pair.sigma, False, steps)


def _scheme_step(scheme: str, t: int, start_with: str = "state"):
    if scheme == "individual":
        return coupled_step_individual
    if scheme == "state":
        return coupled_step_state
    first, second = ((coupled_step_state, coupled_step_individual) if start_with == "state"
                     else (coupled_step_individual, coupled_step_state))
    return first if t % 2 == 0 else second


def empirical_kernel_tv(mu: DiscretePMF, m: np.ndarray, N: int, replicates: int,
                        rng: np.random.Generator) -> tuple[float, float]:
    """Monte Carlo mean and standard error of ``||mu^N M - mu M||_TV`` for i.i.d. particles.

    Each replicate's TV is computed exactly from the empirical counts.
    """
    m = np.asarray(m, dtype=float)
    counts = rng.multinomial(N, mu.probs, size=replicates)
    diff = (counts / N - mu.probs) @ m
    tv = 0.5 * np.abs(diff).sum(axis=1)
    return float(tv.mean()), float(tv.std(ddof=1) / math.sqrt(replicates))
