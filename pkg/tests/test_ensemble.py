import csv

import numpy as np
import pytest

from rldp.controls import ZeroPolicy
from rldp.ensemble import (empirical_measure_at, marginal_flow,
                           simulate_particle_system,
                           solve_mckean_vlasov_reference, write_paths_csv)
from rldp.errors import BudgetError, InputError
from rldp.geometry import ConvexDomain
from rldp.integrator import TimeGrid, simulate_reflected_path
from rldp.model import (MeasureSummary, ModelSpec, make_m1, make_m2)
from rldp.rng import NOISE, substream

BOX1 = ConvexDomain.box([0.0], [1.0])


class TestParticleSystem:
    def test_degenerate_noise_constant_paths(self):
        m = make_m1(BOX1, sigma_scale=0.0, init=[[0.2], [0.5], [0.8]])
        grid = TimeGrid(1.0, 16)
        ens = simulate_particle_system(m, 3, grid, seed=0)
        assert np.allclose(ens.states, ens.states[0])
        assert np.all(ens.local_time[-1] == 0.0)

    def test_mean_attraction_two_body_ode(self):
        # theta=1, sigma=0, inits {0, 1}: the particle gap obeys the exact
        # discrete recursion gap_{k+1} = (1 - theta dt) gap_k
        m = make_m2(BOX1, theta=1.0, sigma_scale=0.0, init=[[0.0], [1.0]])
        grid = TimeGrid(1.0, 50)
        ens = simulate_particle_system(m, 2, grid, seed=0)
        gap = ens.states[:, 1, 0] - ens.states[:, 0, 0]
        expected = (1.0 - grid.dt) ** np.arange(grid.n_steps + 1)
        assert np.allclose(gap, expected, atol=1e-12)
        # symmetric pair converges toward the midpoint 0.5
        assert abs(ens.states[-1, 0, 0] - 0.5) < abs(ens.states[0, 0, 0] - 0.5)
        # continuous-limit decay e^{-theta t} within Euler error
        assert gap[-1] == pytest.approx(np.exp(-1.0), abs=2 * grid.dt)

    def test_single_particle_matches_path_integrator(self):
        m = make_m1(BOX1, init=[[0.5]])
        grid = TimeGrid(1.0, 32)
        ens = simulate_particle_system(m, 1, grid, seed=13)
        flow = [empirical_measure_at(ens, t) for t in grid.nodes]
        path = simulate_reflected_path(m, grid, flow, None,
                                       ens.noises[:, 0, :], [0.5])
        # bit-identical: the N=1 system couples to its own empirical law
        assert np.array_equal(path.states, ens.states[:, 0, :])
        assert np.array_equal(path.local_time, ens.local_time[:, 0])

    def test_determinism_same_seed(self):
        m = make_m2(BOX1, theta=0.5)
        grid = TimeGrid(0.5, 16)
        a = simulate_particle_system(m, 8, grid, seed=3)
        b = simulate_particle_system(m, 8, grid, seed=3)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.noises, b.noises)

    def test_replicas_differ(self):
        m = make_m1(BOX1)
        grid = TimeGrid(0.5, 16)
        a = simulate_particle_system(m, 8, grid, seed=3, replica=0)
        b = simulate_particle_system(m, 8, grid, seed=3, replica=1)
        assert not np.array_equal(a.states, b.states)

    def test_zero_policy_bit_identical_to_none(self):
        m = make_m1(BOX1)
        grid = TimeGrid(0.5, 16)
        a = simulate_particle_system(m, 8, grid, seed=3)
        b = simulate_particle_system(m, 8, grid, policy=ZeroPolicy(1), seed=3)
        assert np.array_equal(a.states, b.states)

    def test_budget_enforced(self):
        m = make_m1(BOX1)
        grid = TimeGrid(0.5, 16)
        with pytest.raises(BudgetError):
            simulate_particle_system(m, 100, grid, seed=0, budget=10)

    def test_containment(self):
        m = make_m1(BOX1, sigma_scale=2.0)
        grid = TimeGrid(1.0, 64)
        ens = simulate_particle_system(m, 32, grid, seed=1)
        assert m.domain.contains_all(ens.states.reshape(-1, 1)).all()


class TestEmpiricalMeasure:
    def test_two_particles(self):
        m = make_m1(BOX1, sigma_scale=0.0, init=[[0.0], [1.0]])
        grid = TimeGrid(1.0, 4)
        ens = simulate_particle_system(m, 2, grid, seed=0)
        mu = empirical_measure_at(ens, 0.0)
        assert np.allclose(mu.weights, [0.5, 0.5])
        assert mu.mean[0] == pytest.approx(0.5)

    def test_single_particle_dirac(self):
        m = make_m1(BOX1, init=[[0.3]])
        grid = TimeGrid(1.0, 4)
        ens = simulate_particle_system(m, 1, grid, seed=0)
        assert empirical_measure_at(ens, 0.0).is_dirac()

    def test_equal_states_dirac(self):
        m = make_m1(BOX1, sigma_scale=0.0, init=[[0.7]])
        grid = TimeGrid(1.0, 4)
        ens = simulate_particle_system(m, 4, grid, seed=0)
        mu = empirical_measure_at(ens, 1.0)
        assert mu.cov_trace() == pytest.approx(0.0)


class TestReferenceFlow:
    def test_deterministic_contraction_flow(self):
        # sigma = 0, b = -x on [-1, 1], nu0 = delta_{0.5}:
        # nu(t) = delta_{0.5 exp(-t)} within Euler error
        dom = ConvexDomain.box([-1.0], [1.0])

        def drift(t, x, mu):
            return -np.asarray(x, dtype=float)

        def diffusion(t, x, mu):
            return np.zeros((1, 1))

        m = ModelSpec(name="contract", domain=dom, d1=1, horizon=1.0,
                      drift=drift, diffusion=diffusion, bound_L=2.0,
                      lipschitz_K=1.0, init_points=np.array([[0.5]]),
                      init_sampler=None, params={})
        grid = TimeGrid(1.0, 100)
        for method in ("large_N", "picard"):
            flow = solve_mckean_vlasov_reference(m, grid, method=method,
                                                 n_ref=64, n_inner=64, seed=0)
            got = np.array([flow[k].mean[0] for k in range(101)])
            exact = 0.5 * np.exp(-grid.nodes)
            assert np.max(np.abs(got - exact)) <= 3 * grid.dt

    def test_symmetric_marginal_mean(self):
        m = make_m1(BOX1)
        grid = TimeGrid(1.0, 32)
        flow = solve_mckean_vlasov_reference(m, grid, n_ref=4096, seed=0)
        means = np.array([flow[k].mean[0] for k in range(33)])
        se = 0.3 / np.sqrt(4096)  # sub-interval sd bound
        assert np.all(np.abs(means - 0.5) <= 3 * se + 0.02)

    def test_measure_free_picard_converges_immediately(self):
        m = make_m1(BOX1)  # coefficients do not depend on mu
        grid = TimeGrid(0.5, 16)
        flow = solve_mckean_vlasov_reference(m, grid, method="picard",
                                             n_inner=256, seed=0, tol=5e-3)
        assert flow.converged
        # first entry is the gap to the initial guess; the first true Picard
        # update is already a fixed point, so the next gap is below tol
        assert len(flow.iteration_distances) <= 2
        assert flow.iteration_distances[-1] < 5e-3


class TestOutputs:
    def test_paths_csv_row_count(self, tmp_path):
        m = make_m1(BOX1)
        grid = TimeGrid(1.0, 16)
        ens = simulate_particle_system(m, 8, grid, seed=1)
        out = tmp_path / "paths.csv"
        write_paths_csv(ens, str(out))
        with open(out, newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1 + 8 * 17  # header + N (n_steps + 1)
        header = rows[0]
        assert header[:4] == ["replica", "particle", "k", "t"]
        # round-trip float fidelity
        assert float(rows[1][4]) == ens.states[0, 0, 0]
