import numpy as np
import pytest

from rldp.errors import InputError, PreconditionError
from rldp.geometry import ConvexDomain, skorokhod_1d
from rldp.integrator import (TimeGrid, brownian_increments,
                             coarsen_increments, refine_increments,
                             simulate_reflected_path, step_reflected)
from rldp.model import MeasureSummary, ModelSpec, make_m1
from rldp.rng import NOISE, substream

BOX1 = ConvexDomain.box([0.0], [1.0])


class TestTimeGrid:
    def test_basic(self):
        g = TimeGrid(1.0, 4)
        assert g.dt == pytest.approx(0.25)
        assert np.allclose(g.nodes, [0, 0.25, 0.5, 0.75, 1.0])
        assert g.node_index(0.5) == 2

    def test_off_grid_time_rejected(self):
        with pytest.raises(InputError):
            TimeGrid(1.0, 4).node_index(0.3)

    def test_refine(self):
        g = TimeGrid(1.0, 4).refine(2)
        assert g.n_steps == 8 and g.horizon == 1.0

    def test_invalid(self):
        with pytest.raises(InputError):
            TimeGrid(-1.0, 4)
        with pytest.raises(InputError):
            TimeGrid(1.0, 0)


class TestStepReflected:
    def test_no_motion(self):
        x, dK, dabs, hit = step_reflected(BOX1, np.array([0.5]),
                                          np.zeros(1), np.zeros(1),
                                          np.zeros(1), 0.1)
        assert x[0] == 0.5 and dabs == 0.0 and not hit

    def test_clamp_arithmetic(self):
        x, dK, dabs, hit = step_reflected(BOX1, np.array([0.9]),
                                          np.array([2.0]), np.zeros(1),
                                          np.zeros(1), 0.1)
        assert x[0] == pytest.approx(1.0)
        assert dabs == pytest.approx(0.1)
        assert hit

    def test_radial_projection(self):
        dom = ConvexDomain.ball([0.0, 0.0], 1.0)
        x, dK, dabs, hit = step_reflected(dom, np.array([0.8, 0.0]),
                                          np.zeros(2), np.zeros(2),
                                          np.array([0.4, 0.0]), 1.0)
        assert np.allclose(x, [1.0, 0.0])
        assert np.allclose(dK, [0.2, 0.0])


def _frozen_flow(grid, point):
    return [MeasureSummary.dirac(point)] * (grid.n_steps + 1)


class TestSimulateReflectedPath:
    def test_frozen_dynamics_constant_path(self):
        m = make_m1(BOX1)
        grid = TimeGrid(1.0, 50)
        path = simulate_reflected_path(m, grid, _frozen_flow(grid, [0.3]),
                                       None, np.zeros((50, 1)), [0.3])
        assert np.allclose(path.states, 0.3)
        assert path.local_time[-1] == 0.0

    def test_reflected_ode_local_time(self):
        # b = -2, sigma = 0, x0 = 0.1: exact solution x(t) = max(0, 0.1 - 2t),
        # |K|(t) = 2 (t - 0.05)^+
        def drift(t, x, mu):
            return np.full(np.shape(x), -2.0)

        def diffusion(t, x, mu):
            return np.zeros((1, 1))

        m = ModelSpec(name="ode", domain=BOX1, d1=1, horizon=1.0,
                      drift=drift, diffusion=diffusion, bound_L=3.0,
                      lipschitz_K=1.0, init_points=np.array([[0.1]]),
                      init_sampler=None, params={})
        grid = TimeGrid(1.0, 100)  # dt = 0.01
        path = simulate_reflected_path(m, grid, _frozen_flow(grid, [0.1]),
                                       None, np.zeros((100, 1)), [0.1])
        t = grid.nodes
        exact_x = np.maximum(0.0, 0.1 - 2.0 * t)
        exact_k = 2.0 * np.maximum(0.0, t - 0.05)
        tol = 2 * grid.dt * 2.0
        assert np.max(np.abs(path.states[:, 0] - exact_x)) <= tol
        assert np.max(np.abs(path.local_time - exact_k)) <= tol
        # once absorbed at 0 the path sticks there
        assert np.all(path.states[10:, 0] == 0.0)

    def test_matches_skorokhod_map(self):
        m = make_m1(BOX1)
        grid = TimeGrid(1.0, 256)
        rng = substream(42, NOISE, 0, 0)
        noise = brownian_increments(rng, 256, 1, grid.dt)
        x0 = 0.5
        path = simulate_reflected_path(m, grid, _frozen_flow(grid, [0.5]),
                                       None, noise, [x0])
        w = x0 + np.r_[0.0, np.cumsum(noise[:, 0])]
        x_oracle, ell_oracle = skorokhod_1d(w, 0.0, 1.0)
        overshoot = 2 * np.max(np.abs(noise))
        assert np.max(np.abs(path.states[:, 0] - x_oracle)) <= overshoot
        assert abs(path.local_time[-1] - ell_oracle[-1]) <= 2 * overshoot

    def test_containment_always(self):
        m = make_m1(BOX1, sigma_scale=2.0)
        grid = TimeGrid(1.0, 64)
        rng = substream(7, NOISE, 0, 0)
        noise = brownian_increments(rng, 64, 1, grid.dt)
        path = simulate_reflected_path(m, grid, _frozen_flow(grid, [0.5]),
                                       None, noise, [0.5])
        assert m.domain.contains_all(path.states).all()

    def test_exterior_start_rejected(self):
        m = make_m1(BOX1)
        grid = TimeGrid(1.0, 4)
        with pytest.raises(PreconditionError):
            simulate_reflected_path(m, grid, _frozen_flow(grid, [0.5]),
                                    None, np.zeros((4, 1)), [1.5])


class TestBrownianCoupling:
    def test_refine_then_coarsen_recovers(self):
        rng = substream(11, NOISE, 0, 0)
        dt = 0.25
        dW = brownian_increments(rng, 8, 2, dt)
        bridge_rng = substream(11, 5, 0)  # BRIDGE namespace
        fine = refine_increments(dW, dt, bridge_rng)
        assert fine.shape == (16, 2)
        assert np.allclose(coarsen_increments(fine, 2), dW)

    def test_increment_variance(self):
        rng = np.random.default_rng(0)
        dW = brownian_increments(rng, 20000, 1, 0.01)
        assert np.var(dW) == pytest.approx(0.01, rel=0.05)
