"""Submartingale diagnostics for reflected dynamics.

For a test function f(t, x, z) with boundary condition
<grad_x f, n(x)> <= 0 on the boundary, the compensated process

    M_f(t) = f(t, X(t), W(t)) - f(0, X(0), W(0))
             - int_0^t [f_s + A f](s, X(s), h(s), W(s)) ds

must be a submartingale when the law of (X, control, W) solves the
controlled reflected equation.  The generator A carries four terms:
drift+control against grad_x f, the second-order x-diffusion, the x-z
cross term, and the z-noise Laplacian.

Statistical testing uses nonnegative weights measurable at the earlier
time, a one-sided lower confidence bound, and a discretization-bias
allowance proportional to the step size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .ensemble import Ensemble, MeasureFlow
from .errors import InputError, ModelError, PreconditionError
from .geometry import ConvexDomain
from .integrator import TimeGrid
from .model import MeasureSummary, ModelSpec, coefficients_batch
from . import rng as rngmod


@dataclass(frozen=True)
class TestFunction:
    """f(t, x, z) with analytic partials; all callables broadcast over
    leading axes of x (..., d) and z (..., d1)."""

    id: str
    d: int
    d1: int
    f: object = field(repr=False)
    f_t: object = field(repr=False)
    grad_x: object = field(repr=False)   # (..., d)
    grad_z: object = field(repr=False)   # (..., d1)
    hess_xx: object = field(repr=False)  # (..., d, d)
    hess_xz: object = field(repr=False)  # (..., d, d1)
    hess_zz: object = field(repr=False)  # (..., d1, d1)


def _zeros_like_vec(x, m):
    return np.zeros(np.shape(x)[:-1] + (m,))


def _zeros_like_mat(x, m, k):
    return np.zeros(np.shape(x)[:-1] + (m, k))


def standard_test_functions(d: int, d1: int) -> dict[str, TestFunction]:
    """Registered test functions for a given state/noise dimension."""
    eye_xx = np.eye(d)

    funcs = {}

    funcs["constant"] = TestFunction(
        id="constant", d=d, d1=d1,
        f=lambda t, x, z: np.broadcast_to(1.0, np.shape(x)[:-1]).copy(),
        f_t=lambda t, x, z: np.zeros(np.shape(x)[:-1]),
        grad_x=lambda t, x, z: _zeros_like_vec(x, d),
        grad_z=lambda t, x, z: _zeros_like_vec(x, d1),
        hess_xx=lambda t, x, z: _zeros_like_mat(x, d, d),
        hess_xz=lambda t, x, z: _zeros_like_mat(x, d, d1),
        hess_zz=lambda t, x, z: _zeros_like_mat(x, d1, d1),
    )

    funcs["time"] = TestFunction(
        id="time", d=d, d1=d1,
        f=lambda t, x, z: np.broadcast_to(np.asarray(t, dtype=float),
                                          np.shape(x)[:-1]).copy(),
        f_t=lambda t, x, z: np.ones(np.shape(x)[:-1]),
        grad_x=lambda t, x, z: _zeros_like_vec(x, d),
        grad_z=lambda t, x, z: _zeros_like_vec(x, d1),
        hess_xx=lambda t, x, z: _zeros_like_mat(x, d, d),
        hess_xz=lambda t, x, z: _zeros_like_mat(x, d, d1),
        hess_zz=lambda t, x, z: _zeros_like_mat(x, d1, d1),
    )

    funcs["neg_x_sq"] = TestFunction(
        id="neg_x_sq", d=d, d1=d1,
        f=lambda t, x, z: -np.sum(np.asarray(x) ** 2, axis=-1),
        f_t=lambda t, x, z: np.zeros(np.shape(x)[:-1]),
        grad_x=lambda t, x, z: -2.0 * np.asarray(x, dtype=float),
        grad_z=lambda t, x, z: _zeros_like_vec(x, d1),
        hess_xx=lambda t, x, z: np.broadcast_to(
            -2.0 * eye_xx, np.shape(x)[:-1] + (d, d)).copy(),
        hess_xz=lambda t, x, z: _zeros_like_mat(x, d, d1),
        hess_zz=lambda t, x, z: _zeros_like_mat(x, d1, d1),
    )

    def e_x1(x):
        g = np.zeros(np.shape(x)[:-1] + (d,))
        g[..., 0] = 1.0
        return g

    funcs["linear_x1"] = TestFunction(
        id="linear_x1", d=d, d1=d1,
        f=lambda t, x, z: np.asarray(x)[..., 0].copy(),
        f_t=lambda t, x, z: np.zeros(np.shape(x)[:-1]),
        grad_x=lambda t, x, z: e_x1(x),
        grad_z=lambda t, x, z: _zeros_like_vec(x, d1),
        hess_xx=lambda t, x, z: _zeros_like_mat(x, d, d),
        hess_xz=lambda t, x, z: _zeros_like_mat(x, d, d1),
        hess_zz=lambda t, x, z: _zeros_like_mat(x, d1, d1),
    )

    def e_z1(x):
        g = np.zeros(np.shape(x)[:-1] + (d1,))
        g[..., 0] = 1.0
        return g

    funcs["linear_z1"] = TestFunction(
        id="linear_z1", d=d, d1=d1,
        f=lambda t, x, z: np.asarray(z)[..., 0].copy(),
        f_t=lambda t, x, z: np.zeros(np.shape(x)[:-1]),
        grad_x=lambda t, x, z: _zeros_like_vec(x, d),
        grad_z=lambda t, x, z: e_z1(x),
        hess_xx=lambda t, x, z: _zeros_like_mat(x, d, d),
        hess_xz=lambda t, x, z: _zeros_like_mat(x, d, d1),
        hess_zz=lambda t, x, z: _zeros_like_mat(x, d1, d1),
    )

    def x1z1_hess_xz(x):
        h = np.zeros(np.shape(x)[:-1] + (d, d1))
        h[..., 0, 0] = 1.0
        return h

    funcs["x1_z1"] = TestFunction(
        id="x1_z1", d=d, d1=d1,
        f=lambda t, x, z: np.asarray(x)[..., 0] * np.asarray(z)[..., 0],
        f_t=lambda t, x, z: np.zeros(np.shape(x)[:-1]),
        grad_x=lambda t, x, z: e_x1(x) * np.asarray(z)[..., 0, None],
        grad_z=lambda t, x, z: e_z1(x) * np.asarray(x)[..., 0, None],
        hess_xx=lambda t, x, z: _zeros_like_mat(x, d, d),
        hess_xz=lambda t, x, z: x1z1_hess_xz(x),
        hess_zz=lambda t, x, z: _zeros_like_mat(x, d1, d1),
    )

    funcs["neg_z_sq"] = TestFunction(
        id="neg_z_sq", d=d, d1=d1,
        f=lambda t, x, z: -np.sum(np.asarray(z) ** 2, axis=-1),
        f_t=lambda t, x, z: np.zeros(np.shape(x)[:-1]),
        grad_x=lambda t, x, z: _zeros_like_vec(x, d),
        grad_z=lambda t, x, z: -2.0 * np.asarray(z, dtype=float),
        hess_xx=lambda t, x, z: _zeros_like_mat(x, d, d),
        hess_xz=lambda t, x, z: _zeros_like_mat(x, d, d1),
        hess_zz=lambda t, x, z: np.broadcast_to(
            -2.0 * np.eye(d1), np.shape(x)[:-1] + (d1, d1)).copy(),
    )

    return funcs


# -- boundary condition --------------------------------------------------------------

@dataclass(frozen=True)
class BoundaryCheck:
    passed: bool
    worst_value: float
    worst_point: np.ndarray
    n_samples: int


def boundary_condition_check(f: TestFunction, domain: ConvexDomain,
                             n_samples: int = 256, seed: int = 0,
                             horizon: float = 1.0, z_scale: float = 2.0,
                             tol: float = 1e-10) -> BoundaryCheck:
    """Max of <grad_x f, n(x)> over sampled boundary points; pass iff <= tol."""
    if n_samples < 1:
        raise InputError("n_samples must be >= 1")
    gen = rngmod.substream(seed, rngmod.SAMPLER, 1)
    xs = domain.sample_boundary(gen, n_samples)
    zs = gen.standard_normal((n_samples, f.d1)) * z_scale
    ts = gen.uniform(0.0, horizon, size=n_samples)
    worst = -np.inf
    worst_point = xs[0]
    for t, x, z in zip(ts, xs, zs):
        n = domain.outward_normal(x)
        val = float(f.grad_x(t, x[None, :], z[None, :])[0] @ n)
        if val > worst:
            worst = val
            worst_point = x
    return BoundaryCheck(passed=bool(worst <= tol), worst_value=worst,
                         worst_point=worst_point, n_samples=n_samples)


# -- generator -----------------------------------------------------------------------

def generator_apply(model: ModelSpec, f: TestFunction, t: float, x, y, z,
                    nu_t: MeasureSummary) -> float:
    """The controlled generator applied to f at a single point.

    y is the control value (atomic relaxed control slice), z the current
    driving-noise value.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    val = _generator_batch(model, f, t, x[None, :], y[None, :], z[None, :],
                           nu_t)[0]
    if not np.isfinite(val):
        raise ModelError(f"non-finite generator value at t={t}, x={x}")
    return float(val)


def _generator_batch(model: ModelSpec, f: TestFunction, t: float,
                     x: np.ndarray, y: np.ndarray, z: np.ndarray,
                     nu_t: MeasureSummary) -> np.ndarray:
    b, sig = coefficients_batch(model, t, x, nu_t)
    gx = f.grad_x(t, x, z)
    hxx = f.hess_xx(t, x, z)
    hxz = f.hess_xz(t, x, z)
    hzz = f.hess_zz(t, x, z)
    drift_term = np.einsum("...i,...i->...", b + np.einsum("...ij,...j->...i", sig, y), gx)
    a = np.einsum("...ik,...jk->...ij", sig, sig)  # sigma sigma^T
    diff_term = 0.5 * np.einsum("...ij,...ij->...", a, hxx)
    cross_term = np.einsum("...ij,...ij->...", sig, hxz)
    noise_term = 0.5 * np.einsum("...ii->...", hzz)
    return drift_term + diff_term + cross_term + noise_term


# -- the compensated process -----------------------------------------------------------

def mf_process(f: TestFunction, states, controls, noise_path,
               nu_flow: MeasureFlow, model: ModelSpec,
               grid: TimeGrid) -> np.ndarray:
    """Discrete M_f series with left-endpoint Riemann sums; M_f(0) = 0.

    states:     (n+1, d) or (n+1, N, d)
    controls:   (n, d1) or (n, N, d1) atomic control values
    noise_path: (n+1, d1) or (n+1, N, d1) cumulative driving noise
    Returns (n+1,) or (n+1, N).
    """
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    noise_path = np.asarray(noise_path, dtype=float)
    single = states.ndim == 2
    if single:
        states = states[:, None, :]
        controls = controls[:, None, :]
        noise_path = noise_path[:, None, :]
    n = grid.n_steps
    if states.shape[0] != n + 1 or noise_path.shape[0] != n + 1:
        raise InputError("states and noise path must have one row per node")
    if controls.shape[0] != n:
        raise InputError("controls must have one value per grid cell")
    if len(nu_flow) != n + 1:
        raise InputError("nu_flow must share the grid")

    dt = grid.dt
    n_paths = states.shape[1]
    f_vals = np.empty((n + 1, n_paths))
    integrand = np.empty((n, n_paths))
    for k in range(n + 1):
        t = grid.nodes[k]
        f_vals[k] = f.f(t, states[k], noise_path[k])
        if k < n:
            integrand[k] = (f.f_t(t, states[k], noise_path[k])
                            + _generator_batch(model, f, t, states[k],
                                               controls[k], noise_path[k],
                                               nu_flow[k]))
    m = np.zeros((n + 1, n_paths))
    m[1:] = (f_vals[1:] - f_vals[0]) - np.cumsum(integrand, axis=0) * dt
    return m[:, 0] if single else m


# -- statistical submartingale test ------------------------------------------------------

def default_psi_dictionary(domain: ConvexDomain):
    """Nonnegative weights measurable at the conditioning time.

    Each entry maps (states_t0 (N, d), noise_t0 (N, d1)) -> weights (N,).
    Includes the constant weight (the unconditional test).
    """
    lo = domain.lo[0] if domain.kind == "box" else domain.center[0] - domain.radius
    hi = domain.hi[0] if domain.kind == "box" else domain.center[0] + domain.radius
    span = hi - lo

    return {
        "one": lambda x, w: np.ones(x.shape[0]),
        "x1_high": lambda x, w: np.clip((x[:, 0] - lo) / span, 0.0, 1.0),
        "x1_low": lambda x, w: np.clip((hi - x[:, 0]) / span, 0.0, 1.0),
        "w1_pos": lambda x, w: np.clip(w[:, 0] + 0.5, 0.0, 1.0),
    }


@dataclass(frozen=True)
class SubmartingaleEntry:
    t0: float
    t1: float
    psi_id: str
    statistic: float       # weighted mean of M_f(t1) - M_f(t0)
    std_error: float
    lower_bound: float     # statistic - z * std_error
    threshold: float       # -(z * std_error + c_bias * dt)
    passed: bool


@dataclass(frozen=True)
class SubmartingaleReport:
    function_id: str
    confidence: float
    c_bias: float
    entries: tuple
    passed: bool

    def to_dict(self) -> dict:
        return {
            "function": self.function_id,
            "confidence": self.confidence,
            "c_bias": self.c_bias,
            "passed": self.passed,
            "entries": [
                {"t0": e.t0, "t1": e.t1, "psi": e.psi_id,
                 "statistic": e.statistic, "std_error": e.std_error,
                 "lower_bound": e.lower_bound, "threshold": e.threshold,
                 "passed": e.passed}
                for e in self.entries
            ],
        }


def submartingale_test(ens: Ensemble, nu_flow: MeasureFlow, f: TestFunction,
                       model: ModelSpec, time_pairs, n_paths: int | None = None,
                       confidence: float = 0.95, c_bias: float = 0.0,
                       psi_dictionary=None,
                       skip_boundary_check: bool = False) -> SubmartingaleReport:
    """One-sided test of E[Psi (M_f(t1) - M_f(t0))] >= 0 on simulated paths.

    The boundary condition on f is a hypothesis of the characterization;
    violating functions are rejected unless skip_boundary_check is set
    (the hook used by designed negative controls).
    """
    if not skip_boundary_check:
        check = boundary_condition_check(f, model.domain,
                                         horizon=model.horizon)
        if not check.passed:
            raise PreconditionError(
                f"test function {f.id} violates the boundary condition "
                f"(worst value {check.worst_value:.3g})")
    if psi_dictionary is None:
        psi_dictionary = default_psi_dictionary(model.domain)

    n_use = ens.n_particles if n_paths is None else min(n_paths, ens.n_particles)
    states = ens.states[:, :n_use, :]
    controls = ens.controls[:, :n_use, :]
    w = ens.noise_paths()[:, :n_use, :]
    m = mf_process(f, states, controls, w, nu_flow, model, ens.grid)

    z_crit = float(stats.norm.ppf(confidence))
    dt = ens.grid.dt
    entries = []
    for (t0, t1) in time_pairs:
        k0, k1 = ens.grid.node_index(t0), ens.grid.node_index(t1)
        if not k0 < k1:
            raise InputError("time pairs must satisfy t0 < t1")
        dm = m[k1] - m[k0]
        for psi_id, psi in psi_dictionary.items():
            wts = np.asarray(psi(states[k0], w[k0]), dtype=float)
            if np.any(wts < 0):
                raise InputError(f"psi {psi_id} produced negative weights")
            vals = wts * dm
            stat = float(np.mean(vals))
            se = float(np.std(vals, ddof=1) / math.sqrt(n_use))
            lower = stat - z_crit * se
            threshold = -(z_crit * se + c_bias * dt)
            entries.append(SubmartingaleEntry(
                t0=float(t0), t1=float(t1), psi_id=psi_id, statistic=stat,
                std_error=se, lower_bound=lower, threshold=threshold,
                passed=bool(lower >= threshold)))
    return SubmartingaleReport(
        function_id=f.id, confidence=confidence, c_bias=c_bias,
        entries=tuple(entries), passed=all(e.passed for e in entries))


def calibrate_bias_allowance(model: ModelSpec, f: TestFunction,
                             base_grid: TimeGrid, n_paths: int = 512,
                             seed: int = 0, floor: float = 0.0) -> float:
    """Slope of |mean M_f(T)| against dt over step sizes {4h, 2h, h}.

    Regression through the origin on grids coarsened from the base grid;
    calibrated once per model against a reference compliant function.
    """
    from .ensemble import simulate_particle_system, marginal_flow

    slopes_x = []
    slopes_y = []
    for factor in (4, 2, 1):
        if base_grid.n_steps % factor != 0:
            raise InputError("base grid must allow 4x/2x coarsening")
        grid = TimeGrid(base_grid.horizon, base_grid.n_steps // factor)
        ens = simulate_particle_system(model, n_paths, grid, seed=seed)
        flow = marginal_flow(ens)
        m = mf_process(f, ens.states, ens.controls, ens.noise_paths(),
                       flow, model, grid)
        slopes_x.append(grid.dt)
        slopes_y.append(abs(float(np.mean(m[-1]))))
    x = np.asarray(slopes_x)
    y = np.asarray(slopes_y)
    slope = float((x @ y) / (x @ x))
    return max(slope, floor)
