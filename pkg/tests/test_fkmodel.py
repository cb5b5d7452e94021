import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smcforget.errors import DimensionError, DomainError, UnsupportedError
from smcforget.fkmodel import (
    MixingBounds,
    DiscreteFKModel,
    FunctionalFKModel,
    binary_model,
    delta_eps,
    ideal_contraction_tv,
    ideal_recursion,
    phi_step,
    propagate,
    psi_update,
    stability_constants,
)
from smcforget.measures import DiscretePMF, tv_distance


def test_two_step_hand_iteration():
    m = binary_model(0.1).with_initial(DiscretePMF.dirac(0, 2))
    rec = ideal_recursion(m, 2)
    assert rec[1][0].probs == pytest.approx([0.9, 0.1])
    assert rec[2][0].probs == pytest.approx([0.82, 0.18])


def test_symmetric_fixed_point():
    for eta, pi in ideal_recursion(binary_model(0.17), 30):
        assert eta.probs == pytest.approx([0.5, 0.5], abs=1e-15)
        assert pi.allclose(eta)


def test_filter_is_reweighted_predictor():
    m = binary_model(0.1, 0.1, 1.0)
    eta, pi = ideal_recursion(m, 0)[0]
    assert pi[1] == pytest.approx(1 / 1.1)


def test_horizon_filter_equals_predictor():
    m = binary_model(0.1, 0.1, 1.0, T=3)
    eta, pi = ideal_recursion(m, 3)[3]
    assert pi is eta
    with pytest.raises(DomainError):
        ideal_recursion(m, 4)


def test_psi_idempotent_under_constant_potential():
    mu = DiscretePMF([0.2, 0.5, 0.3])
    assert psi_update(mu, [2.0, 2.0, 2.0]).allclose(mu)
    assert psi_update(psi_update(mu, [3, 3, 3]), [3, 3, 3]).allclose(mu)


def test_phi_step_by_hand():
    out = phi_step(DiscretePMF([0.5, 0.5]), [0.1, 1.0], [[0.9, 0.1], [0.1, 0.9]])
    w1 = 1 / 1.1
    assert out[1] == pytest.approx((1 - w1) * 0.1 + w1 * 0.9)


def test_doubly_stochastic_preserves_uniform():
    m = np.array([[0.5, 0.3, 0.2], [0.3, 0.4, 0.3], [0.2, 0.3, 0.5]])
    model = DiscreteFKModel(m, [1.0, 1.0, 1.0], DiscretePMF.uniform(3), 10)
    for eta, _ in ideal_recursion(model, 10):
        assert eta.allclose(DiscretePMF.uniform(3), atol=1e-15)


def test_propagate_matches_recursion():
    m = binary_model(0.2, 0.3, 1.0)
    rec = ideal_recursion(m, 5)
    assert propagate(m, m.initial, 0, 5).allclose(rec[5][0])
    assert propagate(m, rec[2][0], 2, 5).allclose(rec[5][0])


class TestBinaryModel:
    def test_rows(self):
        m = binary_model(0.25)
        assert m.mutation_matrix(1).tolist() == [[0.75, 0.25], [0.25, 0.75]]
        assert m.potential_vector(0).tolist() == [1.0, 1.0]
        assert m.flip_epsilon == 0.25

    @pytest.mark.parametrize("eps,g0,g1", [(0.0, 1, 1), (0.5, 1, 1), (0.1, 0.0, 1), (0.1, 1, -1)])
    def test_ranges(self, eps, g0, g1):
        with pytest.raises(DomainError):
            binary_model(eps, g0, g1)

    def test_index_ranges(self):
        m = binary_model(0.1, T=4)
        with pytest.raises(DomainError):
            m.mutation_matrix(0)
        with pytest.raises(DomainError):
            m.potential_vector(4)
        with pytest.raises(DomainError):
            m.sample_mutation(5, np.zeros(3, dtype=int), np.random.default_rng(0))

    def test_sampler_law(self, rng):
        m = binary_model(0.1)
        y = m.sample_mutation(1, np.zeros(100_000, dtype=int), rng)
        assert abs(y.mean() - 0.1) < 4 * math.sqrt(0.09 / 100_000)

    def test_with_potential_keeps_others(self):
        m = binary_model(0.1, T=5).with_potential(0, [0.1, 1.0])
        assert m.potential_vector(0).tolist() == [0.1, 1.0]
        assert m.potential_vector(1).tolist() == [1.0, 1.0]
        assert m.flip_epsilon == 0.1


def test_discrete_model_validation():
    init = DiscretePMF.uniform(2)
    with pytest.raises(DomainError):
        DiscreteFKModel([[0.5, 0.6], [0.5, 0.5]], [1, 1], init, 3)
    with pytest.raises(DimensionError):
        DiscreteFKModel([[1.0]], [1, 1], init, 3)
    with pytest.raises(DomainError):
        DiscreteFKModel([[0.5, 0.5], [0.5, 0.5]], [0, 1], init, 3)
    with pytest.raises(DimensionError):
        DiscreteFKModel(np.full((2, 2, 2), 0.5), [1, 1], init, 3)


def test_three_state_sampler(rng):
    m = np.array([[0.2, 0.3, 0.5], [1 / 3, 1 / 3, 1 / 3], [0.0, 0.1, 0.9]])
    model = DiscreteFKModel(m, [1, 1, 1], DiscretePMF.uniform(3), 3)
    n = 60_000
    y = model.sample_mutation(1, np.full(n, 2), rng)
    freq = np.bincount(y, minlength=3) / n
    assert np.all(np.abs(freq - m[2]) < 4 * np.sqrt(m[2] * (1 - m[2]) / n) + 1e-12)
    assert model.bounds is None


def test_time_varying_stacks():
    m = np.stack([[[0.9, 0.1], [0.1, 0.9]], [[0.6, 0.4], [0.4, 0.6]]])
    g = np.array([[1.0, 2.0], [3.0, 1.0]])
    model = DiscreteFKModel(m, g, DiscretePMF.uniform(2), 2)
    assert model.mutation_matrix(2)[0, 1] == 0.4
    assert model.potential_vector(1)[0] == 3.0
    assert not model.homogeneous
    assert model.bounds == MixingBounds(0.1, 0.9, 1.0, 3.0)


def test_functional_model_debug_bounds():
    model = FunctionalFKModel(
        lambda rng, size: rng.normal(size=size), lambda x: np.exp(-x * x / 2),
        lambda k, x, rng: x + rng.normal(size=np.shape(x)), lambda k, x, y: np.exp(-(y - x) ** 2 / 2),
        lambda k, x: np.full(np.shape(x), 5.0), horizon=3, bounds=MixingBounds(0.1, 1.0, 1.0, 2.0))
    assert model.potential(0, np.zeros(2)).tolist() == [5.0, 5.0]
    model.debug = True
    with pytest.raises(DomainError):
        model.potential(0, np.zeros(2))


class TestConstants:
    def test_flip_model_values(self):
        c = stability_constants(binary_model(0.1))
        assert c.beta == pytest.approx(80 / 81)
        assert c.lp2_constant == pytest.approx(2 * 9**3)
        assert c.log_time_factor == pytest.approx(1 / (2 * math.log(81 / 80)) + 1 / math.log(2))
        assert c.product_rate_constant == pytest.approx(4.5 * 9**8)
        assert c.n_min == math.floor(4.5 * 9**8) + 1
        assert c.eps_small_n == pytest.approx(1 / 81)
        assert c.delta_eps == pytest.approx(2.2407, abs=1e-4)

    def test_potential_ratio_enters(self):
        c = stability_constants(binary_model(0.1, 0.1, 1.0))
        assert c.lp2_constant == pytest.approx(2 * 9**3 * 10)
        assert c.product_rate_constant == pytest.approx(4.5 * 9**8 * 10**4)

    def test_flat_kernel(self):
        c = stability_constants(MixingBounds(0.5, 0.5, 1.0, 1.0))
        assert c.beta == 0.0
        assert c.delta_eps is None

    def test_p_other_than_two(self):
        with pytest.raises(UnsupportedError):
            stability_constants(binary_model(0.1), p=3)

    def test_missing_bounds(self):
        m = DiscreteFKModel([[1.0, 0.0], [0.5, 0.5]], [1, 1], DiscretePMF.uniform(2), 3)
        with pytest.raises(DomainError):
            stability_constants(m)

    def test_delta_eps(self):
        assert delta_eps(0.1) == pytest.approx(1 / math.log(1 / 0.64))


class TestContraction:
    def test_dirac_pair_one_step(self):
        m = binary_model(0.1)
        tv = ideal_contraction_tv(m, 1, DiscretePMF.dirac(0, 2), DiscretePMF.dirac(1, 2))
        assert tv == pytest.approx(0.8)
        assert tv <= stability_constants(m).beta

    def test_k_zero_and_equal(self):
        m = binary_model(0.1)
        mu, nu = DiscretePMF([0.3, 0.7]), DiscretePMF([0.6, 0.4])
        assert ideal_contraction_tv(m, 0, mu, nu) == pytest.approx(tv_distance(mu, nu))
        assert ideal_contraction_tv(m, 7, mu, mu) == 0.0


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(0.01, 1.0), st.floats(0.01, 1.0),
       st.integers(0, 50))
def test_contraction_property(a, b, g0, g1, k):
    model = DiscreteFKModel([[1 - a, a], [b, 1 - b]], [g0, g1], DiscretePMF.uniform(2), 50)
    beta = stability_constants(model).beta
    tv = ideal_contraction_tv(model, k, DiscretePMF.dirac(0, 2), DiscretePMF.dirac(1, 2))
    assert tv <= beta**k + 1e-12


@given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3).filter(lambda v: sum(v) > 1e-3),
       st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3).filter(lambda v: sum(v) > 1e-3),
       st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3))
def test_psi_lipschitz(p, q, g):
    mu, nu = DiscretePMF(p), DiscretePMF(q)
    ratio = max(g) / min(g)
    assert tv_distance(psi_update(mu, g), psi_update(nu, g)) <= ratio * tv_distance(mu, nu) + 1e-12
