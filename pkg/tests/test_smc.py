import math

import numpy as np
import pytest

from smcforget.errors import DegenerateWeightError, DomainError
from smcforget.exact import count_law
from smcforget.fkmodel import DiscreteFKModel, binary_model, ideal_recursion
from smcforget.measures import DiscretePMF
from smcforget.smc import (
    ParticleSystem,
    ReferencePath,
    cpf_filter_estimate,
    cpf_step,
    filter_estimate,
    initial_system,
    pf_step,
    predictive_estimate,
    run_cpf,
    run_pf,
    sample_ancestors,
)
from stats_helpers import pooled_chisquare_pvalue


def indicator(x):
    return x == 1


class TestAncestors:
    def test_uniform_weights(self, rng):
        a = sample_ancestors(np.ones(4), 100_000, rng)
        freq = np.bincount(a, minlength=4) / a.size
        assert np.all(np.abs(freq - 0.25) < 4 * math.sqrt(0.25 * 0.75 / a.size))

    def test_batched_rows_independent_laws(self, rng):
        w = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 5.0], [1.0, 1.0, 2.0]])
        a = sample_ancestors(w, 20_000, rng)
        assert np.all(a[0] == 0)
        assert np.all(a[1] == 2)
        freq = np.bincount(a[2], minlength=3) / 20_000
        assert np.all(np.abs(freq - [0.25, 0.25, 0.5]) < 4 * math.sqrt(0.25 / 20_000))

    def test_zero_weights(self, rng):
        with pytest.raises(DegenerateWeightError):
            sample_ancestors(np.zeros(3), 2, rng)
        with pytest.raises(DegenerateWeightError):
            sample_ancestors(np.full(3, 1e-320), 2, rng)


class TestPF:
    def test_steps_zero(self, rng):
        traj = run_pf(binary_model(0.1), 5, 0, rng)
        assert len(traj) == 1 and traj[0].k == 0

    def test_horizon(self, rng):
        with pytest.raises(DomainError):
            run_pf(binary_model(0.1, T=3), 5, 4, rng)

    def test_count_is_binomial_from_all_zeros(self, rng):
        N, reps = 50, 10_000
        sys = ParticleSystem(np.zeros((reps, N), dtype=np.int64))
        counts = pf_step(sys, binary_model(0.1), rng).particles.sum(axis=1)
        se = math.sqrt(N * 0.09 / reps)
        assert abs(counts.mean() - 0.1 * N) < 4 * se

    def test_single_particle_is_markov_chain(self, rng):
        sys = ParticleSystem(np.zeros((100_000, 1), dtype=np.int64))
        out = pf_step(sys, binary_model(0.3, 0.01, 1.0), rng).particles
        assert abs(out.mean() - 0.3) < 4 * math.sqrt(0.21 / 100_000)

    def test_determinism(self):
        m = binary_model(0.1, 0.1, 1.0)
        a = run_pf(m, 16, 10, np.random.default_rng(5))
        b = run_pf(m, 16, 10, np.random.default_rng(5))
        assert all(np.array_equal(x.particles, y.particles) for x, y in zip(a, b))
        assert [s.k for s in a] == list(range(11))

    def test_unbiased_resampling(self, rng):
        # E[eta_{k+1}^N(phi) | X_k] = Phi_{k+1}(eta_k^N)(phi), computed exactly
        m = binary_model(0.2, 0.1, 1.0)
        x = np.array([0, 0, 0, 1, 1])
        w = m.potential_vector(0)[x]
        exact = (w / w.sum()) @ m.mutation_matrix(1)[x, 1]
        reps = 100_000
        sys = ParticleSystem(np.broadcast_to(x, (reps, 5)).copy())
        est = predictive_estimate(pf_step(sys, m, rng), indicator)
        assert abs(est.mean() - exact) < 4 * est.std(ddof=1) / math.sqrt(reps)

    def test_count_histogram_matches_exact_law(self, rng):
        m = binary_model(0.1, 0.1, 1.0)
        N, reps, k = 8, 20_000, 3
        traj = run_pf(m, N, k, rng, batch=(reps,))
        counts = np.bincount(traj[-1].particles.sum(axis=1), minlength=N + 1)
        law = count_law(m, N, k).weights
        assert pooled_chisquare_pvalue(counts, law) > 0.001


class TestEstimates:
    def test_predictive(self):
        sys = ParticleSystem(np.array([0, 1, 1, 1]))
        assert predictive_estimate(sys, indicator) == 0.75
        assert predictive_estimate(sys, lambda x: np.ones(x.shape)) == 1.0
        assert predictive_estimate(ParticleSystem(np.full(3, 1)), indicator) == 1.0

    def test_filter_by_hand(self):
        sys = ParticleSystem(np.array([0, 1]))
        assert filter_estimate(sys, binary_model(0.1, 0.1, 1.0), lambda x: x) == pytest.approx(10 / 11)

    def test_filter_constant_potential(self):
        sys = ParticleSystem(np.array([0, 1, 1]))
        assert filter_estimate(sys, binary_model(0.1), indicator) == pytest.approx(2 / 3)

    def test_cpf_filter_by_hand(self):
        sys = ParticleSystem(np.array([0]))
        val = cpf_filter_estimate(sys, binary_model(0.1, 0.1, 1.0), 1, lambda x: x)
        assert val == pytest.approx(10 / 11)

    def test_constant_phi(self):
        sys = ParticleSystem(np.array([[0, 1], [1, 1]]))
        m = binary_model(0.1, 0.1, 1.0)
        assert np.allclose(filter_estimate(sys, m, lambda x: np.full(x.shape, 3.0)), 3.0)
        assert np.allclose(cpf_filter_estimate(sys, m, 0, lambda x: np.full(x.shape, 3.0)), 3.0)


class TestCPF:
    def test_output_excludes_reference(self, rng):
        sys = initial_system(binary_model(0.1), 6, rng)
        out = cpf_step(sys, binary_model(0.1), 1, rng)
        assert out.N == 6 and out.k == 1

    def test_reference_selection_frequency(self, rng):
        g = np.array([0.1, 1.0])
        m = DiscreteFKModel(np.eye(2), g, DiscretePMF.uniform(2), 5)
        reps = 100_000
        # identity mutation and particles at 0, so an output at 1 means the reference was chosen
        sys = ParticleSystem(np.broadcast_to(np.array([0, 0, 0]), (reps, 3)).copy())
        out = cpf_step(sys, m, 1, rng).particles
        p_ref = 1.0 / (1.0 + 3 * 0.1)
        freq = out[:, 0].mean()
        assert abs(freq - p_ref) < 4 * math.sqrt(p_ref * (1 - p_ref) / reps)

    def test_tiny_reference_weight_never_selected(self, rng):
        m = DiscreteFKModel(np.eye(2), [1.0, 1e-300], DiscretePMF.uniform(2), 5)
        sys = ParticleSystem(np.zeros((1000, 4), dtype=np.int64))
        assert not np.any(cpf_step(sys, m, 1, rng).particles)

    def test_all_at_reference_equals_pf(self, rng):
        m = binary_model(0.2)
        reps, N = 50_000, 4
        sys = ParticleSystem(np.ones((reps, N), dtype=np.int64))
        a = cpf_step(sys, m, 1, rng).particles.mean()
        b = pf_step(sys, m, rng).particles.mean()
        assert abs(a - b) < 4 * math.sqrt(2 * 0.16 / (reps * N))

    def test_run_cpf_checks_reference_length(self, rng):
        m = binary_model(0.1, T=5)
        with pytest.raises(DomainError):
            run_cpf(m, 4, ReferencePath(np.zeros(3)), 2, rng)
        traj = run_cpf(m, 4, ReferencePath(np.zeros(5)), 0, rng)
        assert len(traj) == 1

    def test_cpf_determinism(self):
        m = binary_model(0.1, 0.1, 1.0, T=6)
        ref = ReferencePath(np.array([0, 1, 0, 1, 0, 1]))
        a = run_cpf(m, 8, ref, 6, np.random.default_rng(9))
        b = run_cpf(m, 8, ref, 6, np.random.default_rng(9))
        assert all(np.array_equal(x.particles, y.particles) for x, y in zip(a, b))

    def test_large_n_filter_near_truth(self, rng):
        m = binary_model(0.1, 0.1, 1.0, T=20)
        ref = ReferencePath(np.zeros(20))
        traj = run_cpf(m, 4096, ref, 10, rng)
        pi10 = ideal_recursion(m, 10)[10][1]
        assert abs(cpf_filter_estimate(traj[-1], m, 0, indicator) - pi10[1]) < 0.05
