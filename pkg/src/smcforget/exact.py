"""Exact laws of particle filters on two-state models.

With two states, the number ``C`` of particles in state 1 is a sufficient
statistic: given ``C_k = c`` the next particles are i.i.d. Bernoulli with
success probability

    p_k(c) = (1 - w) M_{k+1}(0, 1) + w M_{k+1}(1, 1),   w = G_k(1) c / (G_k(0)(N - c) + G_k(1) c),

so ``C_{k+1} | C_k = c ~ Binomial(N, p_k(c))``.  Evolving the law of ``C``
with the dense ``(N+1) x (N+1)`` binomial transition matrix gives
machine-precision forgetting and propagation-of-chaos distances.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlog1py, xlogy

from .errors import DimensionError, DomainError
from .fkmodel import DiscreteFKModel, ideal_recursion, stability_constants
from .measures import DiscretePMF

SIMPLEX_TOL = 1e-12
_ROW_CHUNK = 512
_CACHE_BYTES = 1_300_000_000
_matrix_cache: OrderedDict = OrderedDict()


def binomial_pmf(n: int, p) -> np.ndarray:
    """Binomial(n, p) pmf through log-gamma; ``p`` may be an array (one row per entry)."""
    p = np.asarray(p, dtype=float)
    s = np.arange(n + 1)
    log_coef = gammaln(n + 1) - gammaln(s + 1) - gammaln(n - s + 1)
    pp = p[..., None]
    return np.exp(log_coef + xlogy(s, pp) + xlog1py(n - s, -pp))


@dataclass(frozen=True, eq=False)
class CountChainDistribution:
    """Law of the number of particles in state 1 at time ``n``."""

    N: int
    weights: np.ndarray
    n: int = 0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.N + 1,):
            raise DimensionError(f"expected {self.N + 1} count weights, got {w.shape}")
        if np.any(w < -SIMPLEX_TOL) or abs(w.sum() - 1.0) > 1e-9:
            raise DomainError("count weights are not a probability vector")
        w = np.clip(w, 0.0, None)
        object.__setattr__(self, "weights", w / w.sum())

    @classmethod
    def point(cls, N: int, c: int, n: int = 0) -> CountChainDistribution:
        w = np.zeros(N + 1)
        w[c] = 1.0
        return cls(N, w, n)

    @classmethod
    def iid(cls, N: int, p1: float, n: int = 0) -> CountChainDistribution:
        """Count law of ``N`` i.i.d. Bernoulli(p1) particles."""
        return cls(N, binomial_pmf(N, p1), n)

    def mean(self) -> float:
        return float(np.dot(np.arange(self.N + 1), self.weights))

    def var(self) -> float:
        c = np.arange(self.N + 1)
        m = self.mean()
        return float(np.dot((c - m) ** 2, self.weights))

    def as_pmf(self) -> DiscretePMF:
        return DiscretePMF(self.weights)


def _require_binary(model: DiscreteFKModel) -> None:
    if not isinstance(model, DiscreteFKModel) or model.S != 2:
        raise DomainError("count-chain oracle requires a two-state DiscreteFKModel")


def success_probability(model: DiscreteFKModel, N: int, c, k: int = 0):
    """``p_k(c)``: probability that a new particle lands in state 1 given ``C_k = c``."""
    _require_binary(model)
    g0, g1 = model.potential_vector(k)
    m = model.mutation_matrix(k + 1)
    c = np.asarray(c, dtype=float)
    w = g1 * c / (g0 * (N - c) + g1 * c)
    return (1.0 - w) * m[0, 1] + w * m[1, 1]


def count_transition_row(model: DiscreteFKModel, N: int, c: int, k: int = 0) -> DiscretePMF:
    """Law of ``C_{k+1}`` given ``C_k = c``."""
    if not 0 <= c <= N:
        raise DomainError(f"count {c} outside 0..{N}")
    return DiscretePMF(binomial_pmf(N, float(success_probability(model, N, c, k))))


def transition_matrix(model: DiscreteFKModel, N: int, k: int = 0) -> np.ndarray:
    """Dense count-chain transition from time ``k`` to ``k + 1``; rows indexed by ``c``."""
    _require_binary(model)
    key = (N, model.potential_vector(k).tobytes(), model.mutation_matrix(k + 1).tobytes())
    hit = _matrix_cache.get(key)
    if hit is not None:
        _matrix_cache.move_to_end(key)
        return hit
    p = success_probability(model, N, np.arange(N + 1), k)
    T = np.empty((N + 1, N + 1))
    for start in range(0, N + 1, _ROW_CHUNK):
        T[start:start + _ROW_CHUNK] = binomial_pmf(N, p[start:start + _ROW_CHUNK])
    T.setflags(write=False)
    _matrix_cache[key] = T
    while sum(v.nbytes for v in _matrix_cache.values()) > _CACHE_BYTES and len(_matrix_cache) > 1:
        _matrix_cache.popitem(last=False)
    return T


def clear_cache() -> None:
    _matrix_cache.clear()


def evolve_counts(dist: CountChainDistribution, model: DiscreteFKModel) -> CountChainDistribution:
    """One exact step of the count chain: ``w'_{c'} = sum_c w_c Binomial(N, p(c))(c')``."""
    w = dist.weights @ transition_matrix(model, dist.N, dist.n)
    return CountChainDistribution(dist.N, w / w.sum(), dist.n + 1)


def evolve_count_weights(weights: np.ndarray, model: DiscreteFKModel, N: int, start: int, steps: int) -> np.ndarray:
    """Evolve one or several weight vectors (rows) ``steps`` times from time ``start``."""
    w = np.asarray(weights, dtype=float)
    for j in range(start, start + steps):
        w = w @ transition_matrix(model, N, j)
        w = w / w.sum(axis=-1, keepdims=True)
    return w


def count_law(model: DiscreteFKModel, N: int, k: int, init: CountChainDistribution | None = None) -> CountChainDistribution:
    """Exact law of ``C_k``; by default the particles start i.i.d. from the model's initial law."""
    if init is None:
        init = CountChainDistribution.iid(N, model.initial[1])
    w = evolve_count_weights(init.weights, model, N, init.n, k - init.n)
    return CountChainDistribution(N, w, k)


def exact_forgetting_path(model: DiscreteFKModel, N: int, kmax: int) -> np.ndarray:
    """TV distances between the all-zeros and all-ones started filters for ``k = 0..kmax``.

    Because the particle laws are exchangeable, the TV distance between
    the count laws equals the TV distance between the particle vector laws.
    """
    _require_binary(model)
    w = np.zeros((2, N + 1))
    w[0, 0] = 1.0
    w[1, N] = 1.0
    out = np.empty(kmax + 1)
    out[0] = 1.0
    for j in range(kmax):
        w = w @ transition_matrix(model, N, j)
        w /= w.sum(axis=1, keepdims=True)
        out[j + 1] = min(1.0, 0.5 * float(np.abs(w[0] - w[1]).sum()))
    return out


def exact_forgetting_tv(model: DiscreteFKModel, N: int, k: int) -> float:
    return float(exact_forgetting_path(model, N, k)[k])


def forgetting_lower_bound(eps: float, N: int, k: int) -> float:
    """Chebyshev lower bound ``1 - (2/N) (1 - (1-2eps)^2)^-1 (1-2eps)^-2k`` on the forgetting TV."""
    r = 1.0 - 2.0 * eps
    return 1.0 - (2.0 / N) / (1.0 - r * r) * r ** (-2 * k)


@dataclass(frozen=True)
class Moments:
    mean_P: float
    mean_Ptilde: float
    var_upper: float


def exact_moments(eps: float, N: int, n: int) -> Moments:
    """Closed-form means of the state-1 proportions and the variance bound (uniform potentials).

    ``P`` is the proportion for the filter started from all ones and
    ``Ptilde`` for the one started from all zeros.
    """
    r = 1.0 - 2.0 * eps
    return Moments(r**n / 2 + 0.5, -(r**n) / 2 + 0.5, 1.0 / (4.0 * N) / (1.0 - r * r))


def count_chain_moments(model: DiscreteFKModel, N: int, nmax: int, start_count: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of the proportion ``C_n / N`` for ``n = 0..nmax`` from a point mass."""
    c = np.arange(N + 1) / N
    w = CountChainDistribution.point(N, start_count).weights
    means, variances = [], []
    for j in range(nmax + 1):
        if j:
            w = w @ transition_matrix(model, N, j - 1)
            w /= w.sum()
        m = float(np.dot(c, w))
        means.append(m)
        variances.append(float(np.dot((c - m) ** 2, w)))
    return np.array(means), np.array(variances)


def exact_poc_tv_grid(model: DiscreteFKModel, N: int, qs, k: int) -> np.ndarray:
    """Exact ``||Law(X_k^{1:q}) - eta_k^{(x)q}||_TV`` for each ``q`` in ``qs``.

    Particles start i.i.d. from the model's initial law.  Given ``C_{k-1}``
    the first ``q`` particles at time ``k`` are i.i.d. Bernoulli(p(C)), and
    configurations with the same number of ones share one probability, so
    the TV reduces to a sum over that number.
    """
    _require_binary(model)
    qs = [int(q) for q in qs]
    for q in qs:
        if not 1 <= q <= N:
            raise DomainError(f"q={q} outside 1..{N}")
    if k == 0:
        return np.zeros(len(qs))
    law = count_law(model, N, k - 1)
    p = success_probability(model, N, np.arange(N + 1), k - 1)
    eta_k1 = ideal_recursion(model, k)[k][0][1]
    out = np.empty(len(qs))
    for i, q in enumerate(qs):
        mixed = np.zeros(q + 1)
        for start in range(0, N + 1, _ROW_CHUNK):
            sl = slice(start, start + _ROW_CHUNK)
            mixed += law.weights[sl] @ binomial_pmf(q, p[sl])
        ideal = binomial_pmf(q, eta_k1)
        out[i] = min(1.0, 0.5 * float(np.abs(mixed - ideal).sum()))
    return out


def exact_poc_tv(model: DiscreteFKModel, N: int, q: int, k: int) -> float:
    return float(exact_poc_tv_grid(model, N, [q], k)[0])


def small_n_upper_bound(model: DiscreteFKModel, N: int, k: int) -> float:
    """``(1 - eps^N)^k`` with ``eps = (m_lo / m_hi)^2``."""
    eps = stability_constants(model).eps_small_n
    return (1.0 - eps**N) ** k


def verify_small_n_bound(model: DiscreteFKModel, N: int, k: int, scale: float = 1.0) -> bool:
    """Check the exact forgetting TV against ``scale * (1 - eps^N)^k``.

    ``scale`` exists only so that tests can tamper with the bound.
    """
    return exact_forgetting_tv(model, N, k) <= scale * small_n_upper_bound(model, N, k) + 1e-12


def hellinger_forgetting_bound(b: float, N) -> np.ndarray:
    """``f(N) = (1 - (1 - b/N)^{2N})^{1/2}``, the uniform forgetting bound as a function of N."""
    N = np.asarray(N, dtype=float)
    return np.sqrt(1.0 - (1.0 - b / N) ** (2.0 * N))


def monotone_bound_check(b: float, N_range) -> bool:
    """Check that ``f(N)`` above is non-increasing on a grid of ``N > b``."""
    if not b > 1:
        raise DomainError("b must exceed 1")
    grid = np.sort(np.asarray(list(N_range), dtype=float))
    grid = grid[grid > b]
    f = hellinger_forgetting_bound(b, grid)
    return bool(np.all(np.diff(f) <= 1e-12))


def poc_upper_bound(C: float, N: int, q: int) -> float:
    """``min(1, sqrt(2 C q / N))``."""
    return min(1.0, math.sqrt(2.0 * C * q / N))
