import math

import numpy as np
import pytest

from rldp.controls import ZeroPolicy, constant_family
from rldp.ensemble import (marginal_flow, simulate_particle_system,
                           solve_mckean_vlasov_reference)
from rldp.errors import InputError
from rldp.geometry import ConvexDomain
from rldp.integrator import TimeGrid
from rldp.ldp import (constant_functional, distance_to_target_functional,
                      estimate_rate, functional_from_config,
                      laplace_functional_mc, optimize_controls,
                      terminal_mean_functional, variational_objective)
from rldp.model import MeasureSummary, ModelSpec, make_m1

BOX1 = ConvexDomain.box([0.0], [1.0])


class TestFunctionals:
    def test_constant(self):
        f = constant_functional(0.4)
        m = make_m1(BOX1)
        ens = simulate_particle_system(m, 2, TimeGrid(0.25, 4), seed=0)
        assert f(marginal_flow(ens)) == 0.4

    def test_from_config(self):
        f = functional_from_config({"functional": "constant", "c": 1.0})
        assert f.f_max >= 1.0
        with pytest.raises(InputError):
            functional_from_config({"functional": "nope"})

    def test_bound_enforced(self):
        f = terminal_mean_functional(scale=1.0, cap=0.01)
        m = make_m1(BOX1)
        ens = simulate_particle_system(m, 2, TimeGrid(0.25, 4), seed=0)
        assert abs(f(marginal_flow(ens))) <= 0.01


class TestLaplace:
    def test_constant_exact(self):
        m = make_m1(BOX1)
        grid = TimeGrid(0.25, 8)
        est = laplace_functional_mc(m, constant_functional(0.7), 4, grid, 16,
                                    seed=0)
        assert est.value == 0.7
        assert est.std_error == 0.0
        assert est.effective_sample_size == pytest.approx(16.0)

    def test_n1_direct_mc_oracle(self):
        # N=1 reduces to -log E[exp(-g(X(T)))]; compare to a direct average
        # over the same replicas
        m = make_m1(BOX1, sigma_scale=0.5, init=[[0.5]])
        grid = TimeGrid(0.25, 16)
        g = terminal_mean_functional(scale=1.0)
        n_rep = 512
        est = laplace_functional_mc(m, g, 1, grid, n_rep, seed=7)
        samples = []
        for rep in range(n_rep):
            ens = simulate_particle_system(m, 1, grid, seed=7, replica=rep)
            samples.append(float(ens.states[-1, 0, 0]))
        direct = -math.log(np.mean(np.exp(-np.asarray(samples))))
        assert est.value == pytest.approx(direct, abs=1e-12)

    def test_value_between_f_extremes(self):
        m = make_m1(BOX1)
        grid = TimeGrid(0.25, 8)
        g = terminal_mean_functional(scale=1.0)
        for n in (8, 32):
            est = laplace_functional_mc(m, g, n, grid, 32, seed=2)
            f_vals = [g(marginal_flow(simulate_particle_system(
                m, n, grid, seed=2, replica=r))) for r in range(32)]
            assert min(f_vals) - 1e-12 <= est.value <= max(f_vals) + 1e-12


class TestVariational:
    def test_zero_policy_equals_laplace_for_constant_f(self):
        m = make_m1(BOX1)
        grid = TimeGrid(0.25, 8)
        f = constant_functional(0.3)
        var = variational_objective(m, f, ZeroPolicy(1), 4, grid, 8, seed=1)
        lap = laplace_functional_mc(m, f, 4, grid, 8, seed=1)
        assert var.cost_part == 0.0
        assert var.objective == lap.value == 0.3

    def test_constant_policy_cost_exact(self):
        m = make_m1(BOX1)
        grid = TimeGrid(1.0, 8)
        fam = constant_family(1, bound=5.0)
        v = 1.5
        est = variational_objective(m, constant_functional(0.0),
                                    fam.make([v]), 4, grid, 8, seed=1)
        assert est.objective == pytest.approx(0.5 * v * v * 1.0, abs=1e-12)
        assert est.std_error == pytest.approx(0.0, abs=1e-12)

    def test_representation_inequality_sample(self):
        # infimum over controls upper-bounds nothing: any policy's objective
        # dominates the Laplace value up to noise
        m = make_m1(BOX1, sigma_scale=0.5)
        grid = TimeGrid(0.25, 8)
        g = terminal_mean_functional(scale=0.5)
        lap = laplace_functional_mc(m, g, 16, grid, 64, seed=5)
        fam = constant_family(1, bound=2.0)
        rng = np.random.default_rng(0)
        ok = 0
        for _ in range(5):
            pol = fam.make(rng.uniform(-1.5, 1.5, 1))
            var = variational_objective(m, g, pol, 16, grid, 64, seed=5)
            tol = 3.0 * math.hypot(lap.std_error, var.std_error)
            ok += lap.value <= var.objective + tol
        assert ok >= 4


class TestOptimizer:
    def test_zero_functional_recovers_zero_control(self):
        m = make_m1(BOX1, sigma_scale=0.5)
        grid = TimeGrid(0.25, 8)
        fam = constant_family(1, bound=2.0)
        res = optimize_controls(m, constant_functional(0.0), fam, 4, grid, 4,
                                40, seed=0)
        assert res.cost_part <= 1e-6

    def test_objective_never_exceeds_zero_policy(self):
        m = make_m1(BOX1, sigma_scale=0.5)
        grid = TimeGrid(0.25, 8)
        g = terminal_mean_functional(scale=1.0)
        fam = constant_family(1, bound=2.0)
        res = optimize_controls(m, g, fam, 8, grid, 8, 30, seed=4)
        zero = variational_objective(m, g, ZeroPolicy(1), 8, grid, 8, seed=4)
        assert res.objective <= zero.objective + 1e-12

    def test_trace_monotone(self):
        m = make_m1(BOX1, sigma_scale=0.5)
        grid = TimeGrid(0.25, 8)
        g = terminal_mean_functional(scale=1.0)
        fam = constant_family(1, bound=2.0)
        res = optimize_controls(m, g, fam, 4, grid, 4, 30, seed=2)
        assert np.all(np.diff(res.trace) <= 0)
        assert res.n_evaluations <= 30


class TestRate:
    def test_lln_target_near_zero(self):
        m = make_m1(BOX1, sigma_scale=0.4, init=[[0.5]], horizon=0.25)
        grid = TimeGrid(0.25, 16)
        ref = solve_mckean_vlasov_reference(m, grid, n_ref=1024, seed=9)
        fam = constant_family(1, bound=2.0)
        est = estimate_rate(m, ref, [1.0], fam, 16, grid, 8, 25, seed=4,
                            radius=0.15)
        assert est.feasible
        assert est.upper_bound <= 0.05

    def test_unreachable_target_infeasible(self):
        # sigma = 0 and bounded controls cannot move delta_{0.1} to
        # a distant target within the short horizon
        m = make_m1(BOX1, sigma_scale=0.0, init=[[0.1]], horizon=0.05)
        grid = TimeGrid(0.05, 8)
        target = MeasureSummary.dirac([0.95])
        fam = constant_family(1, bound=1.0)
        est = estimate_rate(m, target, [2.0], fam, 4, grid, 4, 15, seed=0,
                            radius=0.05)
        assert not est.feasible
        assert est.upper_bound == math.inf

    def test_bad_schedule_rejected(self):
        m = make_m1(BOX1)
        fam = constant_family(1)
        with pytest.raises(InputError):
            estimate_rate(m, MeasureSummary.dirac([0.5]), [2.0, 1.0], fam,
                          4, TimeGrid(0.25, 4), 4, 15, seed=0)
