"""Particle filter and conditional particle filter engines.

Particle arrays have shape ``(*batch, N)``: the last axis indexes
particles and any leading axes index independent replicates, which lets
Monte Carlo studies run many filters in one vectorized pass.  Resampling
is multinomial throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .errors import DegenerateWeightError, DomainError
from .fkmodel import FeynmanKacModel

TINY_WEIGHT = 1e-300


@dataclass(frozen=True, eq=False)
class ParticleSystem:
    particles: np.ndarray
    k: int = 0

    @property
    def N(self) -> int:
        return self.particles.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.particles.shape[:-1]


@dataclass(frozen=True, eq=False)
class ReferencePath:
    """Frozen CPF trajectory ``x*_0, ..., x*_{T-1}``."""

    states: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "states", np.asarray(self.states))

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, k):
        return self.states[k]


def sample_ancestors(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` indices per row, i.i.d. categorical with probabilities proportional to ``weights``.

    Inverse CDF with one uniform per draw and a binary search on the
    cumulative weights.  Rows of a batch are searched in one call by
    shifting row ``r`` of the normalized CDF to ``[r, r + 1]``.
    """
    weights = np.asarray(weights, dtype=float)
    batch = weights.shape[:-1]
    W = weights.shape[-1]
    w = weights.reshape(-1, W)
    cdf = np.cumsum(w, axis=1)
    total = cdf[:, -1:]
    if np.any(~(total > 0)):
        raise DegenerateWeightError("all selection weights are zero")
    if np.any(total < TINY_WEIGHT):
        raise DegenerateWeightError("selection weights sum below 1e-300")
    cdf = cdf / total
    cdf[:, -1] = 1.0
    u = rng.random((w.shape[0], n))
    if w.shape[0] == 1:
        idx = np.searchsorted(cdf[0], u[0], side="right")[None]
    else:
        offset = np.arange(w.shape[0], dtype=float)[:, None]
        flat = np.searchsorted((cdf + offset).ravel(), (u + offset).ravel(), side="right")
        idx = flat.reshape(u.shape) - np.arange(w.shape[0])[:, None] * W
    return np.clip(idx, 0, W - 1).reshape(batch + (n,))


def initial_system(model: FeynmanKacModel, N: int, rng: np.random.Generator, batch: tuple = ()) -> ParticleSystem:
    if N < 1:
        raise DomainError("need at least one particle")
    return ParticleSystem(np.asarray(model.sample_initial(rng, tuple(batch) + (N,))), 0)


def _mutate_from(parents_pool: np.ndarray, weights: np.ndarray, N: int, k: int,
                 model: FeynmanKacModel, rng: np.random.Generator) -> ParticleSystem:
    a = sample_ancestors(weights, N, rng)
    parents = np.take_along_axis(parents_pool, a, axis=-1)
    return ParticleSystem(np.asarray(model.sample_mutation(k + 1, parents, rng)), k + 1)


def pf_step(sys: ParticleSystem, model: FeynmanKacModel, rng: np.random.Generator) -> ParticleSystem:
    """One selection (multinomial on ``G_k``) and mutation (``M_{k+1}``) step."""
    w = model.potential(sys.k, sys.particles)
    return _mutate_from(sys.particles, w, sys.N, sys.k, model, rng)


def pf_trajectory(model: FeynmanKacModel, N: int, steps: int, rng: np.random.Generator,
                  batch: tuple = (), init: ParticleSystem | None = None) -> Iterator[ParticleSystem]:
    """Yield ``X_0, ..., X_steps`` without storing the whole path."""
    if steps > model.horizon:
        raise DomainError(f"steps={steps} exceeds horizon {model.horizon}")
    sys = init if init is not None else initial_system(model, N, rng, batch)
    yield sys
    for _ in range(steps):
        sys = pf_step(sys, model, rng)
        yield sys


def run_pf(model: FeynmanKacModel, N: int, steps: int, rng: np.random.Generator,
           batch: tuple = ()) -> list[ParticleSystem]:
    """Particle filter: i.i.d. initial draws from ``eta_0``, then ``steps`` PF steps."""
    return list(pf_trajectory(model, N, steps, rng, batch))


def _with_reference(sys: ParticleSystem, ref_state) -> np.ndarray:
    ref = np.broadcast_to(np.asarray(ref_state, dtype=sys.particles.dtype), sys.batch_shape)
    return np.concatenate([ref[..., None], sys.particles], axis=-1)


def cpf_step(sys: ParticleSystem, model: FeynmanKacModel, ref_state, rng: np.random.Generator) -> ParticleSystem:
    """Conditional PF step: the reference ``x*_k`` competes as ancestor index 0.

    ``ref_state`` may be a scalar or broadcast against the batch shape.
    The output holds only the ``N`` non-reference particles.
    """
    pool = _with_reference(sys, ref_state)
    w = model.potential(sys.k, pool)
    return _mutate_from(pool, w, sys.N, sys.k, model, rng)


def cpf_trajectory(model: FeynmanKacModel, N: int, ref: ReferencePath, steps: int,
                   rng: np.random.Generator, batch: tuple = ()) -> Iterator[ParticleSystem]:
    if steps > model.horizon:
        raise DomainError(f"steps={steps} exceeds horizon {model.horizon}")
    if len(ref) < steps:
        raise DomainError(f"reference path of length {len(ref)} shorter than {steps} steps")
    sys = initial_system(model, N, rng, batch)
    yield sys
    for k in range(steps):
        sys = cpf_step(sys, model, ref[k], rng)
        yield sys


def run_cpf(model: FeynmanKacModel, N: int, ref: ReferencePath, steps: int,
            rng: np.random.Generator, batch: tuple = ()) -> list[ParticleSystem]:
    """Conditional particle filter with frozen reference path ``ref``."""
    if len(ref) != model.horizon:
        raise DomainError(f"reference length {len(ref)} != horizon {model.horizon}")
    return list(cpf_trajectory(model, N, ref, steps, rng, batch))


def predictive_estimate(sys: ParticleSystem, phi: Callable):
    """Unweighted particle mean of ``phi`` (per replicate for batched systems)."""
    v = np.asarray(phi(sys.particles), dtype=float)
    out = np.broadcast_to(v, sys.particles.shape).mean(axis=-1)
    return float(out) if out.ndim == 0 else out


def _weighted_mean(values: np.ndarray, w: np.ndarray):
    total = w.sum(axis=-1)
    if np.any(~(total > 0)):
        raise DegenerateWeightError("all weights are zero")
    out = (w * values).sum(axis=-1) / total
    return float(out) if np.ndim(out) == 0 else out


def filter_estimate(sys: ParticleSystem, model: FeynmanKacModel, phi: Callable):
    """Potential-weighted particle mean of ``phi``."""
    w = np.asarray(model.potential(sys.k, sys.particles), dtype=float)
    v = np.broadcast_to(np.asarray(phi(sys.particles), dtype=float), w.shape)
    return _weighted_mean(v, w)


def cpf_filter_estimate(sys: ParticleSystem, model: FeynmanKacModel, ref_state, phi: Callable):
    """CPF filter: weighted mean over the N particles plus the reference ``x*_k``."""
    pool = _with_reference(sys, ref_state)
    w = np.asarray(model.potential(sys.k, pool), dtype=float)
    v = np.broadcast_to(np.asarray(phi(pool), dtype=float), w.shape)
    return _weighted_mean(v, w)
