"""Feynman-Kac models and their exact ideal recursions on finite state spaces.

A model is the triplet of an initial law, mutation kernels ``M_k``
(``k >= 1``) and potentials ``G_k`` (``k >= 0``).  Particle states are
scalars; engines pass whole arrays of states to the model, so every
model method is vectorized over its state arguments.

Indexing follows the usual convention: ``potential(k, x)`` is ``G_k`` for
``k = 0, ..., T-1`` and ``sample_mutation(k, x, rng)`` draws from
``M_k(x, .)`` for ``k = 1, ..., T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateWeightError, DimensionError, DomainError, UnsupportedError
from .measures import DiscretePMF, tv_distance

ROW_TOL = 1e-12


@dataclass(frozen=True)
class MixingBounds:
    """Strong-mixing constants: ``m_lo <= M_k(x, y) <= m_hi`` and ``g_lo <= G_k <= g_hi``."""

    m_lo: float
    m_hi: float
    g_lo: float
    g_hi: float

    def __post_init__(self):
        if not (0 < self.m_lo <= self.m_hi < math.inf):
            raise DomainError(f"need 0 < m_lo <= m_hi < inf, got {self.m_lo}, {self.m_hi}")
        if not (0 < self.g_lo <= self.g_hi < math.inf):
            raise DomainError(f"need 0 < g_lo <= g_hi < inf, got {self.g_lo}, {self.g_hi}")

    @property
    def m_ratio(self) -> float:
        return self.m_hi / self.m_lo

    @property
    def g_ratio(self) -> float:
        return self.g_hi / self.g_lo


class FeynmanKacModel:
    """Interface for general models.

    Subclasses implement the sampler/density/potential hooks.  Densities
    are with respect to a fixed dominating measure declared by the
    subclass; the library never integrates them numerically.
    """

    horizon: int
    bounds: Optional[MixingBounds] = None
    #: set to True to assert declared potential bounds on every evaluation
    debug: bool = False

    def sample_initial(self, rng: np.random.Generator, size) -> np.ndarray:
        raise NotImplementedError

    def initial_density(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample_mutation(self, k: int, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def mutation_density(self, k: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def potential(self, k: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _checked(self, g: np.ndarray) -> np.ndarray:
        if self.debug:
            if not np.all(np.isfinite(g)) or np.any(g < 0):
                raise DomainError("potential must be finite and non-negative")
            if self.bounds is not None:
                lo, hi = self.bounds.g_lo, self.bounds.g_hi
                if np.any(g < lo * (1 - 1e-12)) or np.any(g > hi * (1 + 1e-12)):
                    raise DomainError(f"potential outside declared bounds [{lo}, {hi}]")
        return g


class FunctionalFKModel(FeynmanKacModel):
    """General model assembled from user callables.

    ``mutation_sampler(k, x, rng)`` and ``mutation_density(k, x, y)`` must
    broadcast over array arguments; ``potential(k, x)`` likewise.
    """

    def __init__(
        self,
        initial_sampler: Callable,
        initial_density: Callable,
        mutation_sampler: Callable,
        mutation_density: Callable,
        potential: Callable,
        horizon: int,
        bounds: Optional[MixingBounds] = None,
    ):
        if horizon < 1:
            raise DomainError("horizon must be positive")
        self._init_sampler = initial_sampler
        self._init_density = initial_density
        self._mut_sampler = mutation_sampler
        self._mut_density = mutation_density
        self._potential = potential
        self.horizon = int(horizon)
        self.bounds = bounds

    def sample_initial(self, rng, size):
        return np.asarray(self._init_sampler(rng, size))

    def initial_density(self, x):
        return np.asarray(self._init_density(x))

    def sample_mutation(self, k, x, rng):
        return np.asarray(self._mut_sampler(k, x, rng))

    def mutation_density(self, k, x, y):
        return np.asarray(self._mut_density(k, x, y), dtype=float)

    def potential(self, k, x):
        return self._checked(np.asarray(self._potential(k, x), dtype=float))


class DiscreteFKModel(FeynmanKacModel):
    """Finite-state model with explicit stochastic matrices and potential vectors.

    ``mutations`` is either one ``(S, S)`` matrix used for every ``k`` or a
    ``(T, S, S)`` stack holding ``M_1, ..., M_T``; ``potentials`` is ``(S,)``
    or ``(T, S)`` holding ``G_0, ..., G_{T-1}``.  The dominating measure is
    counting measure, so the mixing bounds are plain entry bounds.
    """

    def __init__(self, mutations, potentials, initial: DiscretePMF, horizon: int):
        m = np.array(mutations, dtype=float)
        g = np.array(potentials, dtype=float)
        if horizon < 1:
            raise DomainError("horizon must be positive")
        if m.ndim == 2:
            m = m[None]
        if g.ndim == 1:
            g = g[None]
        S = m.shape[-1]
        if m.shape[-2] != S or m.ndim != 3:
            raise DimensionError(f"mutation matrices must be square, got shape {m.shape}")
        if g.shape[-1] != S or initial.size != S:
            raise DimensionError("potential / initial law size does not match the state count")
        if m.shape[0] not in (1, horizon) or g.shape[0] not in (1, horizon):
            raise DimensionError("time-varying stacks must have length equal to the horizon")
        if np.any(m < 0) or np.any(np.abs(m.sum(axis=-1) - 1.0) > ROW_TOL):
            raise DomainError("mutation matrices must be row-stochastic")
        if np.any(g <= 0) or not np.all(np.isfinite(g)):
            raise DomainError("potentials must be finite and strictly positive")
        m.setflags(write=False)
        g.setflags(write=False)
        self._m = m
        self._g = g
        self._cum_m = np.cumsum(m, axis=-1)
        self.S = S
        self.initial = initial
        self.horizon = int(horizon)
        self.bounds = MixingBounds(float(m.min()), float(m.max()), float(g.min()), float(g.max())) if m.min() > 0 else None
        #: symmetric flip probability when built by :func:`binary_model`
        self.flip_epsilon: Optional[float] = None

    def __repr__(self):
        return f"DiscreteFKModel(S={self.S}, horizon={self.horizon}, flip_epsilon={self.flip_epsilon})"

    @property
    def homogeneous(self) -> bool:
        return self._m.shape[0] == 1 and self._g.shape[0] == 1

    def mutation_matrix(self, k: int) -> np.ndarray:
        if not 1 <= k <= self.horizon:
            raise DomainError(f"mutation index {k} outside 1..{self.horizon}")
        return self._m[0 if self._m.shape[0] == 1 else k - 1]

    def potential_vector(self, k: int) -> np.ndarray:
        if not 0 <= k < self.horizon:
            raise DomainError(f"potential index {k} outside 0..{self.horizon - 1}")
        return self._g[0 if self._g.shape[0] == 1 else k]

    def with_potential(self, k: int, g) -> DiscreteFKModel:
        """Copy of the model with ``G_k`` replaced."""
        g_new = np.array(np.broadcast_to(self._g, (self.horizon, self.S)))
        g_new[k] = g
        out = DiscreteFKModel(self._m if self._m.shape[0] > 1 else self._m[0], g_new, self.initial, self.horizon)
        out.flip_epsilon = self.flip_epsilon
        return out

    def with_initial(self, initial: DiscretePMF) -> DiscreteFKModel:
        out = DiscreteFKModel(self._m if self._m.shape[0] > 1 else self._m[0],
                              self._g if self._g.shape[0] > 1 else self._g[0], initial, self.horizon)
        out.flip_epsilon = self.flip_epsilon
        return out

    def sample_initial(self, rng, size):
        return self.initial.sample(rng, size)

    def initial_density(self, x):
        return self.initial.probs[np.asarray(x)]

    def sample_mutation(self, k, x, rng):
        if not 1 <= k <= self.horizon:
            raise DomainError(f"mutation index {k} outside 1..{self.horizon}")
        x = np.asarray(x)
        cum = self._cum_m[0 if self._m.shape[0] == 1 else k - 1]
        u = rng.random(x.shape)
        if self.S == 2:
            return (u >= cum[x, 0]).astype(np.int64)
        y = (u[..., None] >= cum[x]).sum(axis=-1)
        return np.minimum(y, self.S - 1)

    def mutation_density(self, k, x, y):
        return self.mutation_matrix(k)[np.asarray(x), np.asarray(y)]

    def potential(self, k, x):
        return self.potential_vector(k)[np.asarray(x)]


def psi_update(mu: DiscretePMF, g) -> DiscretePMF:
    """Reweight ``mu`` by the potential ``g`` and renormalize."""
    g = np.asarray(g, dtype=float)
    if g.shape != mu.probs.shape:
        raise DimensionError("potential length does not match the measure")
    w = mu.probs * g
    total = w.sum()
    if not total > 0:
        raise DegenerateWeightError("mu(G) = 0")
    return DiscretePMF(w / total)


def phi_step(mu: DiscretePMF, g, m) -> DiscretePMF:
    """Selection by ``g`` followed by mutation through the stochastic matrix ``m``."""
    m = np.asarray(m, dtype=float)
    if m.shape != (mu.size, mu.size):
        raise DimensionError("mutation matrix does not match the measure")
    return DiscretePMF(psi_update(mu, g).probs @ m)


def propagate(model: DiscreteFKModel, mu: DiscretePMF, start: int, stop: int) -> DiscretePMF:
    """Apply ``Phi_stop o ... o Phi_{start+1}`` to ``mu``."""
    for j in range(start + 1, stop + 1):
        mu = phi_step(mu, model.potential_vector(j - 1), model.mutation_matrix(j))
    return mu


def ideal_recursion(model: DiscreteFKModel, n: int) -> list[tuple[DiscretePMF, DiscretePMF]]:
    """Exact predictors and filters ``(eta_k, pi_k)`` for ``k = 0, ..., n``."""
    if n > model.horizon:
        raise DomainError(f"n={n} exceeds horizon {model.horizon}")
    eta = model.initial
    out = []
    for k in range(n + 1):
        if k > 0:
            eta = phi_step(eta, model.potential_vector(k - 1), model.mutation_matrix(k))
        # G_T is not part of the model; report pi_T = eta_T there
        pi = psi_update(eta, model.potential_vector(k)) if k < model.horizon else eta
        out.append((eta, pi))
    return out


def flip_matrix(eps: float) -> np.ndarray:
    return np.array([[1.0 - eps, eps], [eps, 1.0 - eps]])


def binary_model(eps: float, g0: float = 1.0, g1: float = 1.0, T: int = 10_000,
                 initial: Optional[DiscretePMF] = None) -> DiscreteFKModel:
    """Two-state model: flip with probability ``eps``, potential ``(g0, g1)``.

    The initial law defaults to Bernoulli(1/2).
    """
    if not 0 < eps < 0.5:
        raise DomainError(f"eps={eps} outside (0, 1/2)")
    if not (g0 > 0 and g1 > 0):
        raise DomainError("potentials must be positive")
    model = DiscreteFKModel(flip_matrix(eps), [g0, g1],
                            initial if initial is not None else DiscretePMF.bernoulli(0.5), T)
    model.flip_epsilon = float(eps)
    return model


def ideal_contraction_tv(model: DiscreteFKModel, k: int, mu: DiscretePMF, nu: DiscretePMF) -> float:
    """TV distance between the ideal flows started from ``mu`` and ``nu`` after k steps."""
    return tv_distance(propagate(model, mu, 0, k), propagate(model, nu, 0, k))


@dataclass(frozen=True)
class StabilityConstants:
    """Constants derived from the mixing bounds.

    ``beta``: ideal-filter TV contraction per step.
    ``lp2_constant``: time-uniform L2 error constant of the particle filter.
    ``log_time_factor``: steps per ``log N`` sufficient for the Hellinger argument.
    ``product_rate_constant``: expected squared Hellinger rate ``c'/N``; also the
    particle-count threshold above which the uniform forgetting bound applies.
    ``n_min``: smallest such particle count.
    ``eps_small_n``: per-particle minorization constant for the small-N bound.
    ``poc_constant``: constant ``C`` of the propagation-of-chaos bound.
    ``delta_eps``: log-time constant of the two-state lower-bound example
    (``None`` unless the model is a symmetric flip model).
    """

    beta: float
    lp2_constant: float
    log_time_factor: float
    product_rate_constant: float
    n_min: int
    eps_small_n: float
    poc_constant: float
    delta_eps: Optional[float] = None


def delta_eps(eps: float) -> float:
    """Log-time constant ``1 / log((1 - 2 eps)^-2)`` of the two-state example."""
    return 1.0 / math.log((1.0 - 2.0 * eps) ** -2)


def stability_constants(source, flip_eps: Optional[float] = None, p: int = 2) -> StabilityConstants:
    """Evaluate the strong-mixing constants for a model or an :class:`MixingBounds`.

    Only ``p = 2`` is supported: it is the only exponent whose moment
    constant is available in closed form.
    """
    if p != 2:
        raise UnsupportedError("L^p constants are only available for p = 2")
    if isinstance(source, MixingBounds):
        bounds = source
    else:
        bounds = getattr(source, "bounds", None)
        if flip_eps is None:
            flip_eps = getattr(source, "flip_epsilon", None)
    if bounds is None:
        raise DomainError("model has no mixing bounds")
    mr, gr = bounds.m_ratio, bounds.g_ratio
    eps_small = (1.0 / mr) ** 2
    beta = 1.0 - eps_small
    log_factor = (1.0 / (2.0 * math.log(1.0 / beta)) if beta > 0 else 0.0) + 1.0 / math.log(2.0)
    c_lp = 2.0 * mr**3 * gr
    c_prime = 4.5 * mr**8 * gr**4
    poc = c_lp**2 * (mr**2 * gr**2 / 8.0)
    return StabilityConstants(
        beta=beta,
        lp2_constant=c_lp,
        log_time_factor=log_factor,
        product_rate_constant=c_prime,
        n_min=math.floor(c_prime) + 1,
        eps_small_n=eps_small,
        poc_constant=poc,
        delta_eps=delta_eps(flip_eps) if flip_eps is not None else None,
    )
