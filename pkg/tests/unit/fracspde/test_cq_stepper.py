"""
Unit tests for fracspde.cq_stepper module.
"""
import numpy as np
import pytest
from scipy import special

from common.types import DomainError, GridMismatchError, HurstPair, NoiseGridSpec, NonlinearSource, ProblemSpec, SourceKind
from fracspde.cq_stepper import (
    CqStepper,
    cq_weights,
    power_series_coefficients,
    run_trajectory,
    step,
    system_matrix,
)
from fracspde.fem import Mesh1D, assemble_mass, assemble_stiffness, l2_norm
from fracspde.noise import BoxIncrementField, sample_sheet_increments


def constant_source_spec(alpha, T=1.0):
    return ProblemSpec(
        alpha=alpha,
        hurst=HurstPair(h1=0.5, h2=0.5),
        beta=0.0,
        T=T,
        f=NonlinearSource(kind=SourceKind.CONSTANT, amplitude=1.0),
    )


class TestWeights:
    """Test the convolution weights."""

    def test_square_root_coefficients(self):
        """(1 - zeta)^{1/2} = 1 - z/2 - z^2/8 - z^3/16 - 5 z^4/128 - ..."""
        np.testing.assert_allclose(power_series_coefficients(0.5, 5), [1, -0.5, -0.125, -0.0625, -5 / 128])

    def test_scaling_by_tau(self):
        weights = cq_weights(0.5, 0.04, 4)
        np.testing.assert_allclose(weights.d, 5.0 * power_series_coefficients(0.5, 4))
        np.testing.assert_allclose(weights.g, power_series_coefficients(0.5, 4))
        assert not weights.d.flags.writeable

    def test_gamma_zero_is_backward_difference(self):
        np.testing.assert_array_equal(cq_weights(0.0, 0.1, 4).d, [1.0, 0.0, 0.0, 0.0])

    def test_tail_is_negative_and_partial_sums_decay(self):
        """sum_{i<N} g_i = Gamma(N - gamma) / (Gamma(1 - gamma) Gamma(N))."""
        gamma, count = 0.3, 2000
        g = cq_weights(gamma, 1.0, count).g
        assert np.all(g[1:] < 0.0)
        expected = np.exp(special.gammaln(count - gamma) - special.gammaln(1 - gamma) - special.gammaln(count))
        assert g.sum() == pytest.approx(expected, rel=1e-9)

    @pytest.mark.parametrize("gamma,tau,count", [(1.0, 0.1, 4), (-0.1, 0.1, 4), (0.5, 0.0, 4), (0.5, 0.1, 0)])
    def test_domain_errors(self, gamma, tau, count):
        with pytest.raises(DomainError):
            cq_weights(gamma, tau, count)


class TestStep:
    """Test the single step on one unknown."""

    def test_heat_limit_is_backward_euler(self):
        """alpha = 1 with one unknown: (M/tau + S) u_n = M u_{n-1}/tau + c h."""
        spec = constant_source_spec(1.0)
        m_t = 10
        result = run_trajectory(spec, m_t, 2, None)

        tau, h = spec.T / m_t, 0.5
        mass, stiff = 4 * h / 6, 2 / h
        u = 0.0
        for _ in range(m_t):
            u = (mass * u / tau + h) / (mass / tau + stiff)
        np.testing.assert_allclose(result.final.coeffs, [u], rtol=1e-13)

    def test_fractional_memory(self):
        """alpha = 1/2 with one unknown, memory sum written out term by term."""
        spec = constant_source_spec(0.5)
        m_t = 12
        result = run_trajectory(spec, m_t, 2, None)

        tau, h = spec.T / m_t, 0.5
        mass, stiff = 4 * h / 6, 2 / h
        d = tau ** -0.5 * power_series_coefficients(0.5, m_t)
        u = [0.0]
        for n in range(1, m_t + 1):
            memory = sum(d[n - j] * u[j] for j in range(1, n))
            u.append((mass * u[n - 1] / tau - stiff * memory + h) / (mass / tau + d[0] * stiff))
        np.testing.assert_allclose(result.final.coeffs, [u[-1]], rtol=1e-12)

    def test_step_matches_stepper(self, rough_spec):
        mesh = Mesh1D(rough_spec.l, 6)
        stepper = CqStepper.build(rough_spec, mesh, 4)
        history = np.zeros((5, mesh.dim))
        load = np.linspace(0.0, 1.0, mesh.dim)
        history[1] = stepper.advance(1, history, load)
        direct = step(2, history, stepper.weights, assemble_mass(mesh), assemble_stiffness(mesh), load, rough_spec)
        np.testing.assert_allclose(stepper.advance(2, history, load), direct, rtol=1e-13)

    def test_explicit_mesh_matches_rebuilt_mesh(self, rough_spec):
        mesh = Mesh1D(rough_spec.l, 6)
        weights = cq_weights(rough_spec.alpha, 0.125, 3)
        mass, stiff = assemble_mass(mesh), assemble_stiffness(mesh)
        history = np.zeros((3, mesh.dim))
        history[1] = np.linspace(0.1, 0.5, mesh.dim)
        load = np.ones(mesh.dim)
        given = step(2, history, weights, mass, stiff, load, rough_spec, mesh=mesh)
        rebuilt = step(2, history, weights, mass, stiff, load, rough_spec)
        np.testing.assert_array_equal(given, rebuilt)

    def test_mesh_must_match_matrices(self, rough_spec):
        mesh = Mesh1D(rough_spec.l, 6)
        mass, stiff = assemble_mass(mesh), assemble_stiffness(mesh)
        with pytest.raises(GridMismatchError, match="unknowns"):
            step(1, np.zeros((2, mesh.dim)), cq_weights(0.5, 0.1, 2), mass, stiff, np.zeros(mesh.dim),
                 rough_spec, mesh=Mesh1D(rough_spec.l, 8))

    def test_system_matrix(self):
        mesh = Mesh1D(1.0, 4)
        weights = cq_weights(0.5, 0.25, 3)
        matrix = system_matrix(weights, assemble_mass(mesh), assemble_stiffness(mesh))
        expected = assemble_mass(mesh).to_dense() / 0.25 + 2.0 * assemble_stiffness(mesh).to_dense()
        np.testing.assert_allclose(matrix.to_dense(), expected)

    def test_needs_enough_history_and_weights(self, rough_spec):
        mesh = Mesh1D(1.0, 4)
        mass, stiff = assemble_mass(mesh), assemble_stiffness(mesh)
        with pytest.raises(DomainError):
            step(3, np.zeros((2, 3)), cq_weights(0.5, 0.1, 3), mass, stiff, np.zeros(3), rough_spec)
        with pytest.raises(DomainError):
            step(3, np.zeros((4, 3)), cq_weights(0.5, 0.1, 2), mass, stiff, np.zeros(3), rough_spec)


class TestRunTrajectory:
    """Test full trajectories."""

    def field(self, spec, m_t, n_x, seed=3):
        return sample_sheet_increments(NoiseGridSpec.for_domain(spec.T, spec.l, m_t, n_x), spec.hurst, seed)

    def test_quiet_problem_stays_at_zero(self, quiet_spec):
        result = run_trajectory(quiet_spec, 8, 8, self.field(quiet_spec, 8, 8))
        np.testing.assert_array_equal(result.final.coeffs, 0.0)

    def test_same_noise_same_solution(self, rough_spec):
        first = run_trajectory(rough_spec, 8, 8, self.field(rough_spec, 8, 8))
        second = run_trajectory(rough_spec, 8, 8, self.field(rough_spec, 8, 8))
        np.testing.assert_array_equal(first.final.coeffs, second.final.coeffs)
        assert np.any(first.final.coeffs != 0.0)

    def test_linear_in_noise_without_source(self):
        spec = ProblemSpec(alpha=0.6, hurst=HurstPair(h1=0.3, h2=0.4), beta=2.0, T=0.5)
        noise = self.field(spec, 16, 8)
        once = run_trajectory(spec, 16, 8, noise).final.coeffs
        twice = run_trajectory(spec, 16, 8, BoxIncrementField(noise.spec, 2.0 * noise.values)).final.coeffs
        np.testing.assert_allclose(twice, 2.0 * once, rtol=1e-12)

    def test_first_box_drives_first_step(self):
        """Noise only on time box 0 reaches U^1; noise only on the last box touches U^{m_t} alone."""
        spec = ProblemSpec(alpha=0.5, hurst=HurstPair(h1=0.5, h2=0.5), T=1.0)
        noise = self.field(spec, 4, 4)
        last_only = BoxIncrementField(noise.spec, np.zeros_like(noise.values))
        last_only.values[-1] = noise.values[-1]
        result = run_trajectory(spec, 4, 4, last_only, snapshots=[3])
        np.testing.assert_array_equal(result.snapshots[3].coeffs, 0.0)
        assert np.any(result.final.coeffs != 0.0)

    def test_snapshots(self, rough_spec):
        result = run_trajectory(rough_spec, 8, 8, self.field(rough_spec, 8, 8), snapshots=[0, 4, 8, 4], seed=3)
        assert sorted(result.snapshots) == [0, 4, 8]
        np.testing.assert_array_equal(result.snapshots[0].coeffs, 0.0)
        np.testing.assert_array_equal(result.snapshots[8].coeffs, result.final.coeffs)
        assert result.times(rough_spec.T / 8)[4] == pytest.approx(0.125)
        assert result.metadata['seed'] == 3
        assert result.metadata['noise'] is True

    def test_snapshot_out_of_range(self, rough_spec):
        with pytest.raises(DomainError):
            run_trajectory(rough_spec, 8, 8, None, snapshots=[9])

    def test_noise_grid_must_match(self, rough_spec):
        with pytest.raises(GridMismatchError, match="does not match"):
            run_trajectory(rough_spec, 8, 8, self.field(rough_spec, 8, 4))

    def test_noise_must_cover_domain(self, rough_spec):
        other = ProblemSpec(alpha=0.5, hurst=HurstPair(h1=0.4, h2=0.4), T=1.0)
        with pytest.raises(GridMismatchError, match="covers"):
            run_trajectory(rough_spec, 8, 8, self.field(other, 8, 8))

    def test_no_noise_means_deterministic_problem(self, rough_spec):
        result = run_trajectory(rough_spec, 8, 8, None)
        # sin(0) = 0 and no noise: nothing moves
        np.testing.assert_array_equal(result.final.coeffs, 0.0)
        assert result.metadata['noise'] is False

    @pytest.mark.slow
    @pytest.mark.parametrize("alpha", [0.3, 1.0])
    def test_long_runs_stay_bounded(self, alpha):
        """A constant source without noise: the norm grows monotonically and stays finite over 4096 steps."""
        m_t = 4096
        result = run_trajectory(constant_source_spec(alpha), m_t, 16, None, snapshots=range(512, m_t + 1, 512))
        norms = [l2_norm(result.snapshots[n]) for n in sorted(result.snapshots)]
        assert np.all(np.isfinite(norms))
        assert all(later >= earlier - 1e-12 for earlier, later in zip(norms, norms[1:]))
        assert norms[-1] <= 1.0
