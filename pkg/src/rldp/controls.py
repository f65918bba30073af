"""Control policies, their relaxed-control view, and the quadratic cost.

Only atomic relaxed controls (Dirac-valued time slices induced by an
ordinary feedback rule h) are representable: every control the optimizer
touches is an ordinary h, and for quadratic cost at fixed mean atomic
controls are optimal anyway.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .integrator import TimeGrid
from .model import MeasureSummary


@dataclass(frozen=True)
class RelaxedControlView:
    """Moments of the relaxed control induced by piecewise-constant h."""

    grid: TimeGrid
    values: np.ndarray       # (n_cells, d1)
    first_moment: float      # int |y| r(dy x dt)
    quadratic_cost: float    # int |y|^2 r(dy x dt)

    def mass_up_to(self, t: float) -> float:
        """r(R^{d1} x [0, t]) = t by construction."""
        return float(t)


def relax_control(h, grid: TimeGrid) -> RelaxedControlView:
    """Exact moments of the atomic relaxed control rho(B x I) = int_I delta_h(t)(B) dt."""
    h = np.asarray(h, dtype=float)
    if h.ndim == 1:
        h = h[:, None]
    if h.shape[0] == grid.n_steps + 1:
        h = h[:-1]
    if h.shape[0] != grid.n_steps:
        raise InputError("h must have one value per grid cell")
    if not np.all(np.isfinite(h)):
        raise InputError("control values must be finite")
    norms = np.linalg.norm(h, axis=1)
    dt = grid.dt
    return RelaxedControlView(
        grid=grid, values=h,
        first_moment=float(np.sum(norms) * dt),
        quadratic_cost=float(np.sum(norms ** 2) * dt),
    )


def ensemble_cost(ens) -> float:
    """(1 / 2N) sum_i sum_k |h_{i,k}|^2 dt, exact for piecewise-constant h."""
    h = ens.controls  # (n_steps, N, d1)
    n_particles = h.shape[1]
    return float(np.sum(h ** 2) * ens.grid.dt / (2.0 * n_particles))


# -- policy families -------------------------------------------------------------

class ControlPolicy:
    """Feedback rule h(t, x, mu); evaluate is vectorized over particles."""

    family = "base"

    def evaluate(self, t: float, states: np.ndarray,
                 mu: MeasureSummary) -> np.ndarray:
        """Return h values, shape (N, d1), for states of shape (N, d)."""
        raise NotImplementedError

    @property
    def theta(self) -> np.ndarray:
        return np.zeros(0)

    @property
    def policy_id(self) -> str:
        return self.family

    def is_zero(self) -> bool:
        return False


class ZeroPolicy(ControlPolicy):
    family = "zero"

    def __init__(self, d1: int):
        self.d1 = d1

    def evaluate(self, t, states, mu):
        return np.zeros((states.shape[0], self.d1))

    def is_zero(self):
        return True


class ConstantPolicy(ControlPolicy):
    family = "constant"

    def __init__(self, v):
        self.v = np.atleast_1d(np.asarray(v, dtype=float))
        if not np.all(np.isfinite(self.v)):
            raise InputError("constant control must be finite")

    def evaluate(self, t, states, mu):
        return np.broadcast_to(self.v, (states.shape[0], self.v.shape[0])).copy()

    @property
    def theta(self):
        return self.v.copy()

    @property
    def policy_id(self):
        return f"constant({np.array2string(self.v, precision=6)})"

    def is_zero(self):
        return bool(np.all(self.v == 0.0))


class PiecewiseConstantPolicy(ControlPolicy):
    """Shared per-cell values, or per-particle when values is 3-d."""

    family = "piecewise_constant"

    def __init__(self, values, grid: TimeGrid):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != grid.n_steps:
            raise InputError("values must have one row per grid cell")
        if not np.all(np.isfinite(values)):
            raise InputError("control values must be finite")
        self.values = values
        self.grid = grid

    def evaluate(self, t, states, mu):
        k = min(int(np.floor(t / self.grid.dt + 1e-12)), self.grid.n_steps - 1)
        v = self.values[k]
        if v.ndim == 1:  # shared across particles
            return np.broadcast_to(v, (states.shape[0], v.shape[-1])).copy()
        return v.copy()

    @property
    def theta(self):
        return self.values.ravel().copy()

    def is_zero(self):
        return bool(np.all(self.values == 0.0))


class FeedbackPolicy(ControlPolicy):
    """h = clip(Theta^T phi(t, x, mean(mu)), bounds).

    Basis: tensor products of {1, t, x components, mean components} up to
    total degree 2.
    """

    family = "feedback"

    def __init__(self, weights, d: int, d1: int, bound: float = 3.0):
        self.d = d
        self.d1 = d1
        self.bound = float(bound)
        n_feat = self.n_features(d)
        weights = np.asarray(weights, dtype=float).reshape(n_feat, d1)
        if not np.all(np.isfinite(weights)):
            raise InputError("feedback weights must be finite")
        self.weights = weights

    @staticmethod
    def n_features(d: int) -> int:
        # linear part: 1, t, x (d), m (d); quadratic part: all products of
        # the 1 + 2d nonconstant linear terms, with repetition
        lin = 1 + 2 * d
        return 1 + lin + lin * (lin + 1) // 2

    @staticmethod
    def features(t: float, states: np.ndarray, mean: np.ndarray) -> np.ndarray:
        n = states.shape[0]
        tcol = np.full((n, 1), t)
        mrow = np.broadcast_to(mean, states.shape)
        lin = np.concatenate([tcol, states, mrow], axis=1)  # (n, 1+2d)
        cols = [np.ones((n, 1)), lin]
        m = lin.shape[1]
        quad = [lin[:, [i]] * lin[:, [j]] for i in range(m) for j in range(i, m)]
        cols.extend(quad)
        return np.concatenate(cols, axis=1)

    def evaluate(self, t, states, mu):
        phi = self.features(t, states, mu.mean)
        return np.clip(phi @ self.weights, -self.bound, self.bound)

    @property
    def theta(self):
        return self.weights.ravel().copy()

    def is_zero(self):
        return bool(np.all(self.weights == 0.0))


# -- families for the optimizer ---------------------------------------------------

@dataclass(frozen=True)
class PolicyFamily:
    """Parameter space plus constructor for one policy family."""

    name: str
    dim: int
    make: object = field(repr=False)  # callable theta -> ControlPolicy
    bound: float = 3.0

    def zero_policy(self) -> ControlPolicy:
        return self.make(np.zeros(self.dim))


def constant_family(d1: int, bound: float = 3.0) -> PolicyFamily:
    def make(theta):
        return ConstantPolicy(np.clip(np.asarray(theta, dtype=float), -bound, bound))
    return PolicyFamily(name="constant", dim=d1, make=make, bound=bound)


def piecewise_family(grid: TimeGrid, d1: int, bound: float = 3.0) -> PolicyFamily:
    n = grid.n_steps

    def make(theta):
        vals = np.clip(np.asarray(theta, dtype=float).reshape(n, d1), -bound, bound)
        return PiecewiseConstantPolicy(vals, grid)
    return PolicyFamily(name="piecewise_constant", dim=n * d1, make=make, bound=bound)


def feedback_family(d: int, d1: int, bound: float = 3.0) -> PolicyFamily:
    n_feat = FeedbackPolicy.n_features(d)

    def make(theta):
        return FeedbackPolicy(theta, d=d, d1=d1, bound=bound)
    return PolicyFamily(name="feedback", dim=n_feat * d1, make=make, bound=bound)


def policy_from_config(cfg: dict, grid: TimeGrid, d: int, d1: int) -> ControlPolicy:
    """Build a policy from {"policy": family, ...params}."""
    cfg = dict(cfg)
    family = cfg.pop("policy", None)
    if family == "zero":
        return ZeroPolicy(d1)
    if family == "constant":
        return ConstantPolicy(cfg["v"])
    if family == "piecewise_constant":
        return PiecewiseConstantPolicy(cfg["values"], grid)
    if family == "feedback":
        return FeedbackPolicy(cfg["theta"], d=d, d1=d1,
                              bound=cfg.get("bound", 3.0))
    raise InputError(f"unknown policy family {family!r}")
