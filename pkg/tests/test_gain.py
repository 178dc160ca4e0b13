"""Tests for the gain-function solvers and admissibility diagnostics."""

import numpy as np
import pytest

from fpf_lab import (
    GainField,
    ModelValidationError,
    ParticleEnsemble,
    check_admissible,
    compute_gain,
    constant_gain,
    ensemble_stats,
    exact_gain,
    gain_residual_on_grid,
    galerkin_gain,
    make_model,
    monomial_exponents,
    sample_initial_ensemble,
)


def _stats_for(states, obs_fn):
    ens = ParticleEnsemble(states=states, time=0.0, seed=0,
                           streams=np.arange(len(states), dtype=np.uint64))
    return ensemble_stats(ens, obs_fn)


class TestConstantGain:
    def test_three_particle_hand_value(self):
        """States {-1, 0, 1} with h = x: the ensemble mean and h_hat are 0,
        so K = (1/N) sum (h - h_hat)(x - mean) = ((-1)(-1) + 0 + 1*1)/3 = 2/3."""
        states = np.array([[-1.0], [0.0], [1.0]])
        stats = _stats_for(states, lambda s: s[:, 0])
        field = constant_gain(states, stats, np.ones((3, 1)))
        np.testing.assert_allclose(field.k, 2.0 / 3.0, rtol=1e-15)
        np.testing.assert_array_equal(field.k_jac, np.zeros((3, 1, 1)))

    def test_correction_reduces_to_observation_term(self):
        """A constant gain has Omega = (1/2) K . grad K = 0 identically, so
        u = -K (h + h_hat) / 2 holds bit for bit."""
        gen = np.random.default_rng(42)
        states = gen.normal(size=(50, 2))
        stats = _stats_for(states, lambda s: s[:, 0] + 0.3 * s[:, 1] ** 2)
        h_grad = np.column_stack([np.ones(50), 0.6 * states[:, 1]])
        field = constant_gain(states, stats, h_grad)
        expected_u = -0.5 * field.k * (stats.h_vals + stats.h_hat)[:, None]
        np.testing.assert_array_equal(field.u, expected_u)

    def test_large_sample_limit(self):
        """For x ~ N(0,1) and h = x the gain converges to Var(x) = 1."""
        ens = sample_initial_ensemble(1, 100000, [0.0], [[1.0]], seed=7)
        stats = ensemble_stats(ens, lambda s: s[:, 0])
        field = constant_gain(ens.states, stats, np.ones((ens.n, 1)))
        np.testing.assert_allclose(field.k[0, 0], 1.0, atol=0.02)


class TestExactGain:
    def test_equals_cov_times_obs_vector(self):
        gen = np.random.default_rng(3)
        states = gen.normal(size=(200, 2))
        stats = _stats_for(states, lambda s: s[:, 0])
        field = exact_gain(stats, np.array([1.0, 0.0]), np.ones((200, 2)))
        np.testing.assert_allclose(field.k[0], stats.cov @ [1.0, 0.0],
                                   rtol=1e-14)
        np.testing.assert_array_equal(field.k_jac, np.zeros((200, 2, 2)))

    def test_requires_affine_observation(self):
        model = make_model("cubic-sensor")
        ens = sample_initial_ensemble(1, 20, [0.0], [[1.0]], seed=1)
        stats = ensemble_stats(ens, model.obs_at)
        with pytest.raises(ModelValidationError,
                           match="exact solver requires affine h"):
            compute_gain(model, ens.states, stats, "exact_gaussian")

    def test_alias_spellings_agree(self):
        model = make_model("linear1d")
        ens = sample_initial_ensemble(1, 30, [0.0], [[1.0]], seed=4)
        stats = ensemble_stats(ens, model.obs_at)
        a = compute_gain(model, ens.states, stats, "exact_gaussian")
        b = compute_gain(model, ens.states, stats, "exact")
        np.testing.assert_array_equal(a.k, b.k)

    def test_unknown_method(self):
        model = make_model("linear1d")
        ens = sample_initial_ensemble(1, 10, [0.0], [[1.0]], seed=4)
        stats = ensemble_stats(ens, model.obs_at)
        with pytest.raises(ValueError, match="unknown gain method"):
            compute_gain(model, ens.states, stats, "spectral")


class TestGalerkinGain:
    def test_degree_one_equals_constant_gain(self):
        """In the degree-1 monomial basis the weak form reduces exactly to
        the cross-covariance formula (with the ridge disabled)."""
        for dim in (1, 2):
            ens = sample_initial_ensemble(dim, 500, np.zeros(dim),
                                          np.eye(dim), seed=dim)
            obs = lambda s: s[:, 0] ** 3
            stats = ensemble_stats(ens, obs)
            h_grad = np.column_stack(
                [3.0 * ens.states[:, 0] ** 2] + [np.zeros(500)] * (dim - 1))
            g1 = galerkin_gain(ens.states, stats, h_grad, degree=1, ridge=0.0)
            gc = constant_gain(ens.states, stats, h_grad)
            np.testing.assert_allclose(g1.k, gc.k, rtol=0, atol=1e-10)

    def test_jacobian_is_symmetric(self):
        """K is the gradient of a potential, so grad K^T is symmetric."""
        ens = sample_initial_ensemble(2, 400, [0.0, 0.0], np.eye(2), seed=13)
        stats = ensemble_stats(ens, lambda s: s[:, 0] ** 3 + s[:, 1])
        h_grad = np.column_stack([3.0 * ens.states[:, 0] ** 2, np.ones(400)])
        field = galerkin_gain(ens.states, stats, h_grad, degree=3)
        np.testing.assert_array_equal(field.k_jac,
                                      field.k_jac.transpose(0, 2, 1))

    def test_observation_offset_invariance(self):
        """Only h - h_hat enters the weak form, so shifting h by a constant
        leaves the solve unchanged to roundoff."""
        ens = sample_initial_ensemble(2, 2000, [0.0, 0.0], np.eye(2), seed=13)
        obs = lambda s: s[:, 0] ** 3 + s[:, 1]
        stats_a = ensemble_stats(ens, obs)
        stats_b = ensemble_stats(ens, lambda s: obs(s) + 5.0)
        h_grad = np.column_stack([3.0 * ens.states[:, 0] ** 2, np.ones(2000)])
        ga = galerkin_gain(ens.states, stats_a, h_grad, degree=3)
        gb = galerkin_gain(ens.states, stats_b, h_grad, degree=3)
        np.testing.assert_allclose(ga.k, gb.k, rtol=0, atol=1e-13)

    def test_field_evaluation_off_ensemble(self):
        """k_at evaluates the fitted polynomial gain anywhere; for the
        linear observation at large N it approaches the constant exact
        gain K = 1 throughout the bulk."""
        ens = sample_initial_ensemble(1, 100000, [0.0], [[1.0]], seed=7)
        stats = ensemble_stats(ens, lambda s: s[:, 0])
        field = galerkin_gain(ens.states, stats, np.ones((ens.n, 1)),
                              degree=3)
        at_zero = field.k_at(np.array([[0.0]]))
        np.testing.assert_allclose(at_zero[0, 0], 1.0, atol=0.05)

    def test_basis_size(self):
        """Monomials of total degree 1..D in d variables: C(d+D, D) - 1."""
        from math import comb
        for d, deg in [(1, 3), (2, 3), (3, 2), (2, 1)]:
            exps = monomial_exponents(d, deg)
            assert len(exps) == comb(d + deg, deg) - 1
            assert exps.shape[1] == d
            assert np.all(exps.sum(axis=1) >= 1)

    def test_degree_zero_rejected(self):
        with pytest.raises(ValueError):
            monomial_exponents(2, 0)


class TestAdmissibility:
    def test_identity_map_not_flagged(self):
        n, d = 5, 2
        field = GainField(k=np.zeros((n, d)), k_jac=np.zeros((n, d, d)),
                          u=np.zeros((n, d)), u_jac=np.zeros((n, d, d)),
                          method="constant")
        flags, dets = check_admissible(field, dz=0.3, dt=0.01)
        assert not flags.any()
        np.testing.assert_allclose(dets, 1.0, atol=1e-15)

    def test_singular_displacement_flagged(self):
        """A gain slope of -1/dz collapses the update map: the displacement
        Jacobian I + dz * grad K^T vanishes and must be flagged."""
        dz = 0.2
        k_jac = np.zeros((3, 1, 1))
        k_jac[1, 0, 0] = -1.0 / dz
        field = GainField(k=np.zeros((3, 1)), k_jac=k_jac,
                          u=np.zeros((3, 1)), u_jac=np.zeros((3, 1, 1)),
                          method="constant")
        flags, dets = check_admissible(field, dz=dz, dt=0.01)
        np.testing.assert_array_equal(flags, [False, True, False])
        assert dets[1] == pytest.approx(0.0, abs=1e-12)

    def test_orientation_reversal_flagged(self):
        """Negative determinants (folded maps) are inadmissible too."""
        k_jac = np.full((1, 1, 1), -3.0)
        field = GainField(k=np.zeros((1, 1)), k_jac=k_jac,
                          u=np.zeros((1, 1)), u_jac=np.zeros((1, 1, 1)),
                          method="constant")
        flags, dets = check_admissible(field, dz=1.0, dt=0.0)
        assert flags[0]
        assert dets[0] == pytest.approx(-2.0)


class TestGainResidualOnGrid:
    """Weak-form defect |d/dx(pK) + (h - h_hat) p| on a standard normal."""

    def setup_method(self):
        self.x = np.linspace(-8.0, 8.0, 2001)
        self.p = np.exp(-0.5 * self.x ** 2) / np.sqrt(2.0 * np.pi)

    def test_zero_gain_defect(self):
        """With K = 0 the defect is max |x| p(x), attained at x = 1."""
        res = gain_residual_on_grid(self.x, self.p, self.x,
                                    np.zeros_like(self.x))
        phi_at_one = np.exp(-0.5) / np.sqrt(2.0 * np.pi)
        assert res == pytest.approx(0.24197072451914342, rel=1e-12)
        assert res == pytest.approx(phi_at_one, rel=1e-6)

    def test_exact_gain_near_zero_defect(self):
        """K = 1 solves the equation for h = x exactly; what is left is
        second-order discretization error."""
        res = gain_residual_on_grid(self.x, self.p, self.x,
                                    np.ones_like(self.x))
        assert res <= 1e-4

    def test_wrong_gain_detected(self):
        res = gain_residual_on_grid(self.x, self.p, self.x,
                                    2.0 * np.ones_like(self.x))
        assert res > 0.1
