import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import binom

from smcforget.errors import DimensionError, DomainError
from smcforget.exact import (
    CountChainDistribution,
    binomial_pmf,
    count_chain_moments,
    count_law,
    count_transition_row,
    evolve_counts,
    exact_forgetting_path,
    exact_forgetting_tv,
    exact_moments,
    exact_poc_tv,
    exact_poc_tv_grid,
    forgetting_lower_bound,
    hellinger_forgetting_bound,
    monotone_bound_check,
    poc_upper_bound,
    small_n_upper_bound,
    success_probability,
    transition_matrix,
    verify_small_n_bound,
)
from smcforget.fkmodel import DiscreteFKModel, binary_model, ideal_recursion
from smcforget.measures import DiscretePMF


# ---- brute-force oracle over all 2^N ordered particle vectors

def _configs(N):
    return np.array(list(itertools.product((0, 1), repeat=N)))


def _vector_transition(model, N, k):
    xs = _configs(N)
    g = model.potential_vector(k)
    m = model.mutation_matrix(k + 1)
    P = np.empty((len(xs), len(xs)))
    for a, x in enumerate(xs):
        w = g[x] / g[x].sum()
        pred = w @ m[x]  # law of each new particle
        P[a] = np.prod(np.where(xs == 1, pred[1], pred[0]), axis=1)
    return P


def _vector_law(model, N, k, start=None):
    xs = _configs(N)
    if start is None:
        law = np.prod(np.where(xs == 1, model.initial[1], model.initial[0]), axis=1)
    else:
        law = np.all(xs == start, axis=1).astype(float)
    for j in range(k):
        law = law @ _vector_transition(model, N, j)
    return law


MODELS = [binary_model(0.1), binary_model(0.1, 0.1, 1.0), binary_model(0.3, 1.0, 0.4,
                                                                     initial=DiscretePMF.bernoulli(0.2))]


def test_binomial_pmf_matches_scipy():
    for n in (0, 1, 7, 200):
        for p in (0.0, 0.13, 0.5, 1.0):
            assert np.allclose(binomial_pmf(n, p), binom.pmf(np.arange(n + 1), n, p), atol=1e-14)
    rows = binomial_pmf(5, np.array([0.2, 0.7]))
    assert rows.shape == (2, 6)


def test_success_probability_by_hand():
    m = binary_model(0.1, 0.1, 1.0)
    w = 2 * 1.0 / (0.1 * 2 + 2 * 1.0)
    assert success_probability(m, 4, 2) == pytest.approx((1 - w) * 0.1 + w * 0.9)
    assert success_probability(m, 4, 0) == pytest.approx(0.1)
    assert success_probability(m, 4, 4) == pytest.approx(0.9)


def test_transition_rows_are_binomial():
    m = binary_model(0.1)
    T = transition_matrix(m, 6)
    assert np.allclose(T.sum(axis=1), 1.0)
    assert np.allclose(T[0], binom.pmf(np.arange(7), 6, 0.1))
    assert np.allclose(count_transition_row(m, 6, 3).probs, T[3])
    with pytest.raises(DomainError):
        count_transition_row(m, 6, 7)


def test_non_binary_rejected():
    m = DiscreteFKModel(np.full((3, 3), 1 / 3), [1, 1, 1], DiscretePMF.uniform(3), 5)
    with pytest.raises(DomainError):
        transition_matrix(m, 4)


class TestCountDistribution:
    def test_validation(self):
        with pytest.raises(DimensionError):
            CountChainDistribution(3, np.ones(3) / 3)
        with pytest.raises(DomainError):
            CountChainDistribution(1, np.array([0.7, 0.7]))

    def test_iid_moments(self):
        d = CountChainDistribution.iid(10, 0.3)
        assert d.mean() == pytest.approx(3.0)
        assert d.var() == pytest.approx(2.1)
        assert d.as_pmf().size == 11

    def test_evolve_point_mass(self):
        d = evolve_counts(CountChainDistribution.point(5, 0), binary_model(0.1))
        assert d.n == 1
        assert np.allclose(d.weights, binom.pmf(np.arange(6), 5, 0.1))


@pytest.mark.parametrize("model", MODELS)
@pytest.mark.parametrize("N", [1, 2, 4])
def test_count_law_matches_enumeration(model, N):
    xs = _configs(N)
    law = _vector_law(model, N, 4)
    by_count = np.bincount(xs.sum(axis=1), weights=law, minlength=N + 1)
    assert np.allclose(count_law(model, N, 4).weights, by_count, atol=1e-13)


@pytest.mark.parametrize("model", MODELS)
@pytest.mark.parametrize("N", [1, 3, 5])
def test_forgetting_matches_vector_tv(model, N):
    # the count-law TV equals the TV between laws of the ordered particle vectors
    path = exact_forgetting_path(model, N, 6)
    for k in range(7):
        a = _vector_law(model, N, k, start=np.zeros(N))
        b = _vector_law(model, N, k, start=np.ones(N))
        assert path[k] == pytest.approx(0.5 * np.abs(a - b).sum(), abs=1e-13)


@pytest.mark.parametrize("model", MODELS)
@pytest.mark.parametrize("N,q,k", [(3, 1, 1), (3, 3, 2), (4, 2, 3), (5, 5, 4), (6, 3, 2)])
def test_poc_matches_enumeration(model, N, q, k):
    xs = _configs(N)
    law = _vector_law(model, N, k)
    sub = {}
    for x, p in zip(xs, law):
        key = tuple(x[:q])
        sub[key] = sub.get(key, 0.0) + p
    eta1 = ideal_recursion(model, k)[k][0][1]
    tv = 0.5 * sum(abs(p - eta1 ** sum(c) * (1 - eta1) ** (q - sum(c))) for c, p in sub.items())
    assert exact_poc_tv(model, N, q, k) == pytest.approx(tv, abs=1e-13)


def test_poc_edge_cases():
    m = binary_model(0.1)
    assert np.all(exact_poc_tv_grid(m, 8, [1, 4, 8], 0) == 0)
    # uniform potentials and symmetric start: each particle is marginally Bernoulli(1/2)
    assert exact_poc_tv(m, 16, 1, 5) == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(DomainError):
        exact_poc_tv(m, 8, 9, 2)


def test_forgetting_examples():
    assert exact_forgetting_tv(binary_model(0.1), 1, 1) == pytest.approx(0.8)
    assert exact_forgetting_path(binary_model(0.1), 10, 0)[0] == 1.0


def test_forgetting_lower_bound_formula():
    r = 0.8
    assert forgetting_lower_bound(0.1, 64, 3) == pytest.approx(1 - (2 / 64) / (1 - r * r) * r ** -6)


def test_exact_moments_closed_form_vs_chain():
    N = 16
    m = binary_model(0.1)
    mean_p, var_p = count_chain_moments(m, N, 10, N)
    mean_q, _ = count_chain_moments(m, N, 10, 0)
    for n in range(11):
        mo = exact_moments(0.1, N, n)
        assert mean_p[n] == pytest.approx(mo.mean_P, abs=1e-12)
        assert mean_q[n] == pytest.approx(mo.mean_Ptilde, abs=1e-12)
        assert var_p[n] <= mo.var_upper + 1e-12
    assert exact_moments(0.1, 128, 2).mean_P == pytest.approx(0.82)


def test_small_n_bound_and_tamper():
    m = binary_model(0.1)
    assert small_n_upper_bound(m, 2, 3) == pytest.approx((1 - 81.0**-2) ** 3)
    assert verify_small_n_bound(m, 3, 10)
    assert not verify_small_n_bound(m, 1, 1, scale=0.5)


def test_monotone_check():
    assert monotone_bound_check(10.0, range(5, 10_000))
    f = hellinger_forgetting_bound(10.0, np.array([11.0, 100.0, 1e6]))
    assert np.all(np.diff(f) < 0)
    with pytest.raises(DomainError):
        monotone_bound_check(0.5, [2, 3])


def test_poc_upper_bound():
    assert poc_upper_bound(1.0, 8, 1) == pytest.approx(0.5)
    assert poc_upper_bound(1e6, 8, 1) == 1.0


@given(st.floats(0.01, 0.49), st.floats(0.05, 1.0), st.floats(0.05, 1.0), st.integers(1, 12), st.integers(0, 8))
def test_count_law_is_probability(eps, g0, g1, N, k):
    w = count_law(binary_model(eps, g0, g1), N, k).weights
    assert np.all(w >= 0) and w.sum() == pytest.approx(1.0)


@given(st.integers(1, 8), st.integers(1, 50))
def test_small_n_bound_property(N, k):
    assert verify_small_n_bound(binary_model(0.1), N, k)


def test_log_time_offsets():
    # k = delta log N - 5 stays above the Chebyshev floor; 12 delta log N steps forget almost surely
    m = binary_model(0.1)
    delta = 1 / math.log(1 / 0.64)
    for N in (64, 128, 256):
        path = exact_forgetting_path(m, N, math.ceil(12 * delta * math.log(N)))
        k_early = math.floor(delta * math.log(N)) - 5
        assert path[k_early] >= forgetting_lower_bound(0.1, N, k_early) - 1e-12
        assert path[-1] <= 0.9
