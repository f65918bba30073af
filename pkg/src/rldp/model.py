"""Model coefficients, empirical-measure summaries, and assumption checks.

Coefficient callables take (t, x, mu) where mu is a MeasureSummary.  They
must accept x of shape (d,) or batched (N, d) and return arrays that
broadcast to (..., d) for the drift and (..., d, d1) for the diffusion.
All measure dependence enters through the summary (finite support plus
cached moments): every measure the simulator produces is empirical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import AssumptionViolationError, InputError, ModelError
from .geometry import ConvexDomain
from . import rng as rngmod

_WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class MeasureSummary:
    """A finite-support probability measure with cached moments."""

    points: np.ndarray   # (n, d)
    weights: np.ndarray  # (n,), nonnegative, sums to 1
    mean: np.ndarray     # (d,)
    second_moment: np.ndarray  # (d, d)

    @staticmethod
    def from_points(points, weights=None) -> "MeasureSummary":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = points.shape[0]
        if weights is None:
            weights = np.full(n, 1.0 / n)
        else:
            weights = np.asarray(weights, dtype=float)
            if weights.shape != (n,):
                raise InputError("weights must match the number of support points")
            if np.any(weights < 0):
                raise InputError("weights must be nonnegative")
            if abs(weights.sum() - 1.0) > _WEIGHT_TOL:
                raise InputError("weights must sum to 1")
        if not np.all(np.isfinite(points)):
            raise InputError("support points must be finite")
        mean = weights @ points
        second = (points.T * weights) @ points
        return MeasureSummary(points=points, weights=weights, mean=mean,
                              second_moment=second)

    @staticmethod
    def dirac(x) -> "MeasureSummary":
        return MeasureSummary.from_points(np.atleast_1d(np.asarray(x, dtype=float))[None, :])

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.points.shape[0]

    def covariance(self) -> np.ndarray:
        return self.second_moment - np.outer(self.mean, self.mean)

    def cov_trace(self) -> float:
        return float(np.trace(self.covariance()))

    def is_dirac(self, tol: float = 0.0) -> bool:
        return self.n_atoms == 1 or bool(
            np.all(np.abs(self.points - self.points[0]) <= tol))


@dataclass(frozen=True)
class ModelSpec:
    """Coefficients, horizon and initial conditions of the particle system."""

    name: str
    domain: ConvexDomain
    d1: int
    horizon: float
    drift: Callable          # (t, x, mu) -> (..., d)
    diffusion: Callable      # (t, x, mu) -> (..., d, d1)
    bound_L: float           # declared sup of |b| + ||sigma||_HS
    lipschitz_K: float       # declared Lipschitz constant
    init_points: np.ndarray | None = None      # deterministic x^{i,N}, (m, d)
    init_sampler: Callable | None = None       # (rng, n) -> (n, d)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.horizon <= 0:
            raise InputError("horizon must be positive")
        if self.d1 < 1:
            raise InputError("noise dimension must be >= 1")
        if self.bound_L <= 0 or self.lipschitz_K <= 0:
            raise InputError("declared constants L and K must be positive")
        if self.init_points is None and self.init_sampler is None:
            raise InputError("model needs deterministic inits or a sampler")

    @property
    def d(self) -> int:
        return self.domain.dimension

    def initial_states(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n initial states: cycled deterministic points or i.i.d. samples."""
        if self.init_points is not None:
            pts = np.asarray(self.init_points, dtype=float)
            reps = int(np.ceil(n / pts.shape[0]))
            return np.tile(pts, (reps, 1))[:n]
        return np.asarray(self.init_sampler(rng, n), dtype=float)

    @property
    def init_kind(self) -> str:
        return "deterministic" if self.init_points is not None else "sampled"


def eval_coefficients(model: ModelSpec, t: float, x, mu: MeasureSummary,
                      strict: bool = False):
    """Evaluate (b, sigma) at a single state.

    In strict mode asserts the declared bound |b| + ||sigma||_HS <= L.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not 0.0 <= t <= model.horizon + 1e-12:
        raise InputError(f"time {t} outside [0, {model.horizon}]")
    b = np.broadcast_to(np.asarray(model.drift(t, x, mu), dtype=float),
                        (model.d,)).copy()
    sig = np.broadcast_to(np.asarray(model.diffusion(t, x, mu), dtype=float),
                          (model.d, model.d1)).copy()
    if not (np.all(np.isfinite(b)) and np.all(np.isfinite(sig))):
        raise ModelError(f"non-finite coefficients at t={t}, x={x}")
    if strict:
        total = np.linalg.norm(b) + np.linalg.norm(sig)
        if total > model.bound_L + 1e-9:
            raise AssumptionViolationError(
                f"|b|+||sigma|| = {total:.6g} exceeds declared L = {model.bound_L}")
    return b, sig


def coefficients_batch(model: ModelSpec, t: float, x: np.ndarray,
                       mu: MeasureSummary):
    """Batched coefficient evaluation for the ensemble hot loop."""
    b = np.asarray(model.drift(t, x, mu), dtype=float)
    sig = np.asarray(model.diffusion(t, x, mu), dtype=float)
    b = np.broadcast_to(b, x.shape)
    sig = np.broadcast_to(sig, x.shape[:-1] + (model.d, model.d1))
    return b, sig


# -- Assumption (A3) validation ------------------------------------------------

@dataclass(frozen=True)
class AssumptionReport:
    max_bound_observed: float
    max_lipschitz_ratio_observed: float
    bound_ok: bool
    lipschitz_ok: bool
    n_samples: int

    @property
    def passed(self) -> bool:
        return self.bound_ok and self.lipschitz_ok


def _random_summary(domain: ConvexDomain, rng: np.random.Generator) -> MeasureSummary:
    n = int(rng.integers(1, 6))
    pts = domain.sample_interior(rng, n)
    w = rng.uniform(0.2, 1.0, size=n)
    w /= w.sum()
    return MeasureSummary.from_points(pts, w)


def validate_assumptions(model: ModelSpec, n_samples: int = 1000,
                         seed: int = 0) -> AssumptionReport:
    """Sample (t, x, mu) tuples and pairs; check the declared (A3) constants.

    Failures are report entries, not exceptions.  The Lipschitz denominator
    uses the bounded-Lipschitz distance between the sampled measures.
    """
    from .measures import bl_distance  # local import to avoid a cycle

    if n_samples < 2:
        raise InputError("n_samples must be >= 2")
    gen = rngmod.substream(seed, rngmod.SAMPLER)
    max_bound = 0.0
    max_ratio = 0.0
    for _ in range(n_samples):
        t = float(gen.uniform(0.0, model.horizon))
        x = model.domain.sample_interior(gen, 2)
        mu = _random_summary(model.domain, gen)
        nu = _random_summary(model.domain, gen)
        try:
            b1, s1 = eval_coefficients(model, t, x[0], mu)
            b2, s2 = eval_coefficients(model, t, x[1], nu)
        except ModelError:
            max_bound = np.inf
            continue
        max_bound = max(max_bound,
                        np.linalg.norm(b1) + np.linalg.norm(s1),
                        np.linalg.norm(b2) + np.linalg.norm(s2))
        denom = float(np.linalg.norm(x[0] - x[1])) + bl_distance(mu, nu).value
        if denom > 1e-9:
            num = np.linalg.norm(b1 - b2) + np.linalg.norm(s1 - s2)
            max_ratio = max(max_ratio, num / denom)
    return AssumptionReport(
        max_bound_observed=float(max_bound),
        max_lipschitz_ratio_observed=float(max_ratio),
        bound_ok=bool(max_bound <= model.bound_L + 1e-9),
        lipschitz_ok=bool(max_ratio <= model.lipschitz_K + 1e-9),
        n_samples=n_samples,
    )


# -- Model zoo -----------------------------------------------------------------

def _identity_sigma(d: int, d1: int, scale: float = 1.0) -> np.ndarray:
    sig = np.zeros((d, d1))
    for i in range(min(d, d1)):
        sig[i, i] = scale
    return sig


def _uniform_sampler(domain: ConvexDomain):
    def sample(rng, n):
        return domain.sample_interior(rng, n)
    return sample


def make_m1(domain: ConvexDomain, d1: int | None = None, horizon: float = 1.0,
            sigma_scale: float = 1.0, init=None) -> ModelSpec:
    """M1: zero drift, constant (identity-like) diffusion."""
    d = domain.dimension
    d1 = d if d1 is None else d1
    sig = _identity_sigma(d, d1, sigma_scale)

    def drift(t, x, mu):
        return np.zeros(np.shape(x))

    def diffusion(t, x, mu):
        return sig

    return ModelSpec(
        name="m1", domain=domain, d1=d1, horizon=horizon,
        drift=drift, diffusion=diffusion,
        bound_L=np.linalg.norm(sig) + 1.0, lipschitz_K=1.0,
        init_points=_init_points(init), init_sampler=None if init is not None else _uniform_sampler(domain),
        params={"sigma_scale": sigma_scale},
    )


def make_m2(domain: ConvexDomain, theta: float = 1.0, sigma_scale: float = 0.5,
            d1: int | None = None, horizon: float = 1.0, init=None) -> ModelSpec:
    """M2: mean attraction b = theta (mean(mu) - x), sigma = s I."""
    d = domain.dimension
    d1 = d if d1 is None else d1
    sig = _identity_sigma(d, d1, sigma_scale)
    diam = 2.0 * domain.bounding_radius

    def drift(t, x, mu):
        return theta * (mu.mean - np.asarray(x, dtype=float))

    def diffusion(t, x, mu):
        return sig

    return ModelSpec(
        name="m2", domain=domain, d1=d1, horizon=horizon,
        drift=drift, diffusion=diffusion,
        bound_L=abs(theta) * diam + np.linalg.norm(sig) + 1.0,
        lipschitz_K=2.0 * abs(theta) + 1.0,
        init_points=_init_points(init), init_sampler=None if init is not None else _uniform_sampler(domain),
        params={"theta": theta, "sigma_scale": sigma_scale},
    )


def make_m3(domain: ConvexDomain, sigma_scale: float = 0.5, alpha: float = 1.0,
            clip_L: float = 2.0, d1: int | None = None, horizon: float = 1.0,
            init=None) -> ModelSpec:
    """M3: distribution-dependent diffusion s (1 + alpha tr cov(mu)) I, clipped."""
    d = domain.dimension
    d1 = d if d1 is None else d1
    eye = _identity_sigma(d, d1, 1.0)
    hs = np.linalg.norm(eye)

    def drift(t, x, mu):
        return np.zeros(np.shape(x))

    def diffusion(t, x, mu):
        s = min(clip_L / max(hs, 1.0), sigma_scale * (1.0 + alpha * mu.cov_trace()))
        return s * eye

    return ModelSpec(
        name="m3", domain=domain, d1=d1, horizon=horizon,
        drift=drift, diffusion=diffusion,
        bound_L=clip_L + 1.0,
        lipschitz_K=max(1.0, 4.0 * sigma_scale * alpha * hs * domain.bounding_radius + 1.0),
        init_points=_init_points(init), init_sampler=None if init is not None else _uniform_sampler(domain),
        params={"sigma_scale": sigma_scale, "alpha": alpha, "clip_L": clip_L},
    )


def make_drifted(domain: ConvexDomain, b_const, sigma_scale: float = 1.0,
                 d1: int | None = None, horizon: float = 1.0, init=None) -> ModelSpec:
    """Constant-drift, constant-diffusion model (diagnostic negative controls)."""
    d = domain.dimension
    d1 = d if d1 is None else d1
    b_const = np.broadcast_to(np.asarray(b_const, dtype=float), (d,)).copy()
    sig = _identity_sigma(d, d1, sigma_scale)

    def drift(t, x, mu):
        return np.broadcast_to(b_const, np.shape(x))

    def diffusion(t, x, mu):
        return sig

    return ModelSpec(
        name="drifted", domain=domain, d1=d1, horizon=horizon,
        drift=drift, diffusion=diffusion,
        bound_L=float(np.linalg.norm(b_const) + np.linalg.norm(sig) + 1.0),
        lipschitz_K=1.0,
        init_points=_init_points(init), init_sampler=None if init is not None else _uniform_sampler(domain),
        params={"b": b_const.tolist(), "sigma_scale": sigma_scale},
    )


def _init_points(init):
    if init is None:
        return None
    pts = np.atleast_2d(np.asarray(init, dtype=float))
    return pts


MODEL_REGISTRY = {
    "m1": make_m1,
    "m2": make_m2,
    "m3": make_m3,
    "drifted": make_drifted,
}


def model_from_config(cfg: dict) -> ModelSpec:
    """Build a model from {"model": name, "domain": {...}, ...params}."""
    cfg = dict(cfg)
    name = cfg.pop("model", None)
    if name not in MODEL_REGISTRY:
        raise InputError(f"unknown model {name!r}; known: {sorted(MODEL_REGISTRY)}")
    domain = ConvexDomain.from_config(cfg.pop("domain"))
    return MODEL_REGISTRY[name](domain, **cfg)
