"""Randomized and exhaustive checks of the stability inequalities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exact import exact_forgetting_path, exact_poc_tv_grid, monotone_bound_check, poc_upper_bound
from .fkmodel import DiscreteFKModel, ideal_contraction_tv, psi_update, stability_constants
from .measures import (
    DiscretePMF,
    hellinger_sq,
    hellinger_sq_product,
    lecam_tv_upper,
    product_pmf,
    product_tv_upper,
    tv_distance,
)

TOL = 1e-12


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    cases: int
    violations: int
    worst_margin: float
    detail: str = ""


def slack_check(name: str, slack: np.ndarray, detail: str = "") -> CheckResult:
    """``slack`` holds ``bound - value`` per case; negative beyond TOL is a violation."""
    slack = np.asarray(slack, dtype=float).ravel()
    bad = int(np.count_nonzero(slack < -TOL))
    return CheckResult(name, bad == 0, slack.size, bad, float(slack.min()), detail)


def _random_pmfs(rng: np.random.Generator, n: int, size: int) -> np.ndarray:
    # mix in sparse vectors so that disjoint supports and point masses get exercised
    p = rng.dirichlet(np.full(size, 0.5), n)
    sparse = rng.random((n, size)) < 0.3
    p = np.where(sparse & (rng.random((n, 1)) < 0.2), 0.0, p)
    empty = p.sum(axis=1) == 0
    p[empty, 0] = 1.0
    return p / p.sum(axis=1, keepdims=True)


def check_lecam(rng, n_cases: int) -> CheckResult:
    slack = np.empty(n_cases)
    for i in range(n_cases):
        S = int(rng.integers(2, 7))
        a, b = (DiscretePMF(v) for v in _random_pmfs(rng, 2, S))
        slack[i] = lecam_tv_upper(hellinger_sq(a, b)) - tv_distance(a, b)
    return slack_check("lecam", slack)


def check_product_tv(rng, n_cases: int) -> CheckResult:
    slack = np.empty(n_cases)
    for i in range(n_cases):
        n = int(rng.integers(1, 4))
        S = int(rng.integers(2, 4))
        mus = [DiscretePMF(v) for v in _random_pmfs(rng, n, S)]
        nus = [DiscretePMF(v) for v in _random_pmfs(rng, n, S)]
        tv = tv_distance(product_pmf(mus), product_pmf(nus))
        slack[i] = product_tv_upper([tv_distance(m, v) for m, v in zip(mus, nus)]) - tv
    return slack_check("product-tv", slack)


def check_tensorization(rng, n_cases: int) -> CheckResult:
    """Squared Hellinger of an n-fold product equals ``1 - (1 - h2)^n``; slack is minus the error."""
    slack = np.empty(n_cases)
    for i in range(n_cases):
        n = int(rng.integers(1, 5))
        S = int(rng.integers(2, 4))
        a, b = (DiscretePMF(v) for v in _random_pmfs(rng, 2, S))
        exact = hellinger_sq(product_pmf([a] * n), product_pmf([b] * n))
        slack[i] = -abs(exact - hellinger_sq_product(hellinger_sq(a, b), n))
    return slack_check("hellinger-tensorization", slack)


def check_psi_lipschitz(rng, n_cases: int) -> CheckResult:
    slack = np.empty(n_cases)
    for i in range(n_cases):
        S = int(rng.integers(2, 6))
        g = rng.uniform(0.05, 1.0, S)
        a, b = (DiscretePMF(v) for v in _random_pmfs(rng, 2, S))
        ratio = g.max() / g.min()
        slack[i] = ratio * tv_distance(a, b) - tv_distance(psi_update(a, g), psi_update(b, g))
    return slack_check("psi-lipschitz", slack)


def check_ideal_contraction(rng, n_cases: int, kmax: int = 50, scale: float = 1.0) -> CheckResult:
    """Random two-state models and Dirac pairs: ``TV(Phi_{0,k} mu, Phi_{0,k} nu) <= beta^k``."""
    slack = []
    for _ in range(n_cases):
        m = rng.uniform(0.05, 0.95, 2)
        mat = np.array([[1 - m[0], m[0]], [m[1], 1 - m[1]]])
        model = DiscreteFKModel(mat, rng.uniform(0.05, 1.0, 2), DiscretePMF.uniform(2), kmax)
        beta = stability_constants(model).beta
        mu, nu = DiscretePMF.dirac(0, 2), DiscretePMF.dirac(1, 2)
        k = int(rng.integers(0, kmax + 1))
        slack.append(scale * beta**k - ideal_contraction_tv(model, k, mu, nu))
    return slack_check("ideal-contraction", np.array(slack))


def check_monotone(rng, n_cases: int) -> CheckResult:
    passed = np.empty(n_cases)
    for i in range(n_cases):
        b = float(np.exp(rng.uniform(np.log(1.01), np.log(1e9))))
        grid = b * (1.0 + np.exp(rng.uniform(-8, 8, 16)))
        passed[i] = 0.0 if monotone_bound_check(b, grid) else -1.0
    return slack_check("monotone-bound", passed)


def inequality_suite(rng: np.random.Generator, n_cases: int) -> list[CheckResult]:
    return [
        check_lecam(rng, n_cases),
        check_product_tv(rng, n_cases),
        check_tensorization(rng, n_cases),
        check_psi_lipschitz(rng, n_cases),
        check_ideal_contraction(rng, n_cases),
        check_monotone(rng, n_cases),
    ]


def check_small_n(model: DiscreteFKModel, Ns=range(1, 9), kmax: int = 50, scale: float = 1.0) -> CheckResult:
    """Exact forgetting TV against ``scale * (1 - eps^N)^k`` for every ``N`` and ``k <= kmax``."""
    eps = stability_constants(model).eps_small_n
    k = np.arange(1, kmax + 1)
    slack = [scale * (1.0 - eps**N) ** k - exact_forgetting_path(model, N, kmax)[1:] for N in Ns]
    return slack_check("small-n-bound", np.concatenate(slack))


def check_poc_bound(model: DiscreteFKModel, Ns, ks, scale: float = 1.0) -> CheckResult:
    C = stability_constants(model).poc_constant
    slack = []
    for N in Ns:
        qs = sorted({2**j for j in range(N.bit_length()) if 2**j <= N} | {N})
        for k in ks:
            tv = exact_poc_tv_grid(model, N, qs, k)
            slack.extend(scale * poc_upper_bound(C, N, q) - t for q, t in zip(qs, tv))
    return slack_check("poc-bound", np.array(slack))


def large_n_regime(model: DiscreteFKModel, max_grid_N: int) -> tuple[bool, str]:
    """Whether the particle-count threshold of the uniform forgetting bound is reachable."""
    cp = stability_constants(model).product_rate_constant
    if cp > max_grid_N:
        return False, f"N >= c' = {cp:.6g} is not desk-feasible (largest grid N = {max_grid_N})"
    return True, f"N >= c' = {cp:.6g} is within the grid (largest grid N = {max_grid_N})"

