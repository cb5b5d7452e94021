"""Finite probability measures, their distances, and maximal couplings.

Everything here works on a finite alphabet ``{0, ..., S-1}`` with counting
measure as the dominating measure, so total variation and Hellinger
distances are exact finite sums.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np

from .errors import DimensionError, DomainError

NEG_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DiscretePMF:
    """Probability vector over ``{0, ..., S-1}``.

    Entries are renormalized on construction; entries below ``-1e-12``
    are rejected and tiny negative round-off is clipped to zero.
    """

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).ravel()
        if p.size == 0:
            raise DomainError("empty probability vector")
        if not np.all(np.isfinite(p)):
            raise DomainError("probability vector has non-finite entries")
        if np.any(p < -NEG_TOL):
            raise DomainError(f"negative probability {p.min():.3g}")
        p = np.clip(p, 0.0, None)
        total = p.sum()
        if total <= 0:
            raise DomainError("probability vector has zero mass")
        p = p / total
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def size(self) -> int:
        return self.probs.size

    def __len__(self) -> int:
        return self.probs.size

    def __getitem__(self, s):
        return self.probs[s]

    def __repr__(self) -> str:
        return f"DiscretePMF({np.array2string(self.probs, precision=6)})"

    def allclose(self, other: DiscretePMF, atol: float = 1e-12) -> bool:
        return self.size == other.size and bool(np.allclose(self.probs, other.probs, rtol=0, atol=atol))

    @classmethod
    def dirac(cls, s: int, size: int) -> DiscretePMF:
        p = np.zeros(size)
        p[s] = 1.0
        return cls(p)

    @classmethod
    def bernoulli(cls, p1: float) -> DiscretePMF:
        if not 0.0 <= p1 <= 1.0:
            raise DomainError(f"Bernoulli parameter {p1} outside [0, 1]")
        return cls(np.array([1.0 - p1, p1]))

    @classmethod
    def uniform(cls, size: int) -> DiscretePMF:
        return cls(np.full(size, 1.0 / size))

    def mean(self) -> float:
        return float(np.dot(np.arange(self.size), self.probs))

    def expect(self, phi) -> float:
        """Integral of ``phi`` (a vector indexed by symbol, or a callable)."""
        values = phi(np.arange(self.size)) if callable(phi) else np.asarray(phi, dtype=float)
        return float(np.dot(self.probs, values))

    def sample(self, rng: np.random.Generator, size=None):
        """Inverse-CDF draws; one uniform per draw."""
        return sample_from_probs(self.probs, rng, size)


def sample_from_probs(probs: np.ndarray, rng: np.random.Generator, size=None):
    cdf = np.cumsum(probs)
    u = rng.random(size) * cdf[-1]
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, probs.size - 1)


def _check_same(p: DiscretePMF, q: DiscretePMF) -> None:
    if p.size != q.size:
        raise DimensionError(f"alphabet sizes differ: {p.size} != {q.size}")


def _check_unit(x: float, name: str) -> None:
    if not (0.0 <= x <= 1.0):
        raise DomainError(f"{name}={x} outside [0, 1]")


def tv_distance(p: DiscretePMF, q: DiscretePMF) -> float:
    """Total variation distance, half the L1 distance between the vectors."""
    _check_same(p, q)
    return min(1.0, 0.5 * float(np.abs(p.probs - q.probs).sum()))


def hellinger_sq(p: DiscretePMF, q: DiscretePMF) -> float:
    """Squared Hellinger distance ``1 - sum sqrt(p q)``."""
    _check_same(p, q)
    bc = float(np.sqrt(p.probs * q.probs).sum())
    return min(1.0, max(0.0, 1.0 - bc))


def hellinger_sq_product(h2: float, n: int) -> float:
    """Squared Hellinger distance between n-fold products, given that of one factor."""
    _check_unit(h2, "h2")
    if n < 1:
        raise DomainError(f"n={n} must be positive")
    return 1.0 - (1.0 - h2) ** n


def product_tv_upper(tvs: Sequence[float]) -> float:
    """Upper bound ``1 - prod(1 - tv_i)`` on the TV distance of product measures."""
    tvs = np.asarray(tvs, dtype=float).ravel()
    for t in tvs:
        _check_unit(float(t), "tv")
    return 1.0 - float(np.prod(1.0 - tvs))


def lecam_tv_upper(h2: float) -> float:
    """Le Cam bound on TV from squared Hellinger: ``sqrt(1 - (1 - h2)^2)``."""
    _check_unit(h2, "h2")
    return float(np.sqrt(1.0 - (1.0 - h2) ** 2))


def product_pmf(factors: Sequence[DiscretePMF]) -> DiscretePMF:
    """Enumerated product measure on ``S_1 x ... x S_n``, flattened in C order."""
    if not factors:
        raise DomainError("need at least one factor")
    return DiscretePMF(reduce(np.multiply.outer, [f.probs for f in factors]).ravel())


def max_couple_discrete(p: DiscretePMF, q: DiscretePMF, rng: np.random.Generator, size=None):
    """Draw ``(x, y)`` from a maximal coupling of ``p`` and ``q``.

    The overlap ``min(p, q)`` is sampled jointly; otherwise ``x`` and ``y``
    come from the normalized residuals, whose supports are disjoint, so
    ``P(x != y)`` equals the TV distance exactly.  With ``size`` given,
    returns arrays of independent pairs.
    """
    _check_same(p, q)
    overlap = np.minimum(p.probs, q.probs)
    a = float(overlap.sum())
    residual = float(np.clip(p.probs - overlap, 0.0, None).sum())
    shape = () if size is None else size
    # scale by a + residual so that p == q can never fall into an empty residual
    same = rng.random(shape) * (a + residual) < a
    x = np.empty(shape, dtype=np.int64)
    y = np.empty(shape, dtype=np.int64)
    n_same = int(np.count_nonzero(same))
    n_diff = int(same.size - n_same)
    if n_same:
        z = sample_from_probs(overlap, rng, n_same)
        x[same] = z
        y[same] = z
    if n_diff:
        x[~same] = sample_from_probs(np.clip(p.probs - overlap, 0.0, None), rng, n_diff)
        y[~same] = sample_from_probs(np.clip(q.probs - overlap, 0.0, None), rng, n_diff)
    if size is None:
        return int(x), int(y)
    return x, y
