"""Bounded convex domains, boundary normals, projections and 1D Skorokhod maps.

Two domain kinds are supported: axis-aligned boxes and Euclidean balls.
Boxes have corners and therefore fall outside the smooth-domain hypothesis
of the underlying theory; they are supported because they admit exact 1D
reflection oracles.  Corner normals use the normalized sum of the active
face normals; corner events have probability ~0 under nondegenerate noise.

All operations are pure functions of immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, PreconditionError

INTERIOR = "interior"
BOUNDARY = "boundary"
EXTERIOR = "exterior"

DEFAULT_BOUNDARY_TOL = 1e-12

# Two-sided Skorokhod fixed-point iteration controls.
_SK_TOL = 1e-14
_SK_MAX_ITER = 100


def _as_point(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != d:
        raise InputError(f"point has dimension {x.shape[-1]}, domain has {d}")
    if not np.all(np.isfinite(x)):
        raise InputError("point has non-finite coordinates")
    return x


@dataclass(frozen=True)
class ConvexDomain:
    """A bounded convex domain: axis-aligned box or Euclidean ball."""

    kind: str                       # "box" or "ball"
    lo: np.ndarray | None = None    # box only, shape (d,)
    hi: np.ndarray | None = None    # box only, shape (d,)
    center: np.ndarray | None = None  # ball only, shape (d,)
    radius: float | None = None       # ball only
    boundary_tol: float = DEFAULT_BOUNDARY_TOL

    @staticmethod
    def box(lo, hi, boundary_tol: float = DEFAULT_BOUNDARY_TOL) -> "ConvexDomain":
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise InputError("box bounds must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise InputError("box bounds must be finite")
        if not np.all(hi > lo):
            raise InputError("box requires hi > lo on every axis")
        return ConvexDomain(kind="box", lo=lo, hi=hi, boundary_tol=boundary_tol)

    @staticmethod
    def ball(center, radius, boundary_tol: float = DEFAULT_BOUNDARY_TOL) -> "ConvexDomain":
        center = np.atleast_1d(np.asarray(center, dtype=float))
        radius = float(radius)
        if not np.all(np.isfinite(center)) or not np.isfinite(radius):
            raise InputError("ball parameters must be finite")
        if radius <= 0:
            raise InputError("ball requires radius > 0")
        return ConvexDomain(kind="ball", center=center, radius=radius,
                            boundary_tol=boundary_tol)

    @property
    def dimension(self) -> int:
        if self.kind == "box":
            return self.lo.shape[0]
        return self.center.shape[0]

    @property
    def bounding_radius(self) -> float:
        """Radius of a ball centered at the origin containing the closure."""
        if self.kind == "box":
            return float(np.linalg.norm(np.maximum(np.abs(self.lo), np.abs(self.hi))))
        return float(np.linalg.norm(self.center) + self.radius)

    # -- membership ---------------------------------------------------------

    def contains(self, x) -> str:
        """Classify a single point as interior / boundary / exterior."""
        x = _as_point(x, self.dimension)
        if x.ndim != 1:
            raise InputError("contains expects a single point")
        eps = self.boundary_tol
        if self.kind == "box":
            if np.any(x < self.lo - eps) or np.any(x > self.hi + eps):
                return EXTERIOR
            on_face = np.any(x <= self.lo + eps) or np.any(x >= self.hi - eps)
            return BOUNDARY if on_face else INTERIOR
        r = float(np.linalg.norm(x - self.center))
        if r > self.radius + eps:
            return EXTERIOR
        if r >= self.radius - eps:
            return BOUNDARY
        return INTERIOR

    def contains_all(self, x) -> np.ndarray:
        """Boolean membership in the closure, batched over leading axes."""
        x = _as_point(x, self.dimension)
        eps = self.boundary_tol
        if self.kind == "box":
            inside = np.all(x >= self.lo - eps, axis=-1) & np.all(x <= self.hi + eps, axis=-1)
            return inside
        return np.linalg.norm(x - self.center, axis=-1) <= self.radius + eps

    # -- projection ---------------------------------------------------------

    def project(self, x):
        """Euclidean projection onto the closure.

        Returns (p, hit_boundary, displacement).  Batched: ``x`` may have
        shape (..., d); outputs broadcast accordingly (scalars for a single
        point).
        """
        x = _as_point(x, self.dimension)
        if self.kind == "box":
            p = np.clip(x, self.lo, self.hi)
        else:
            delta = x - self.center
            r = np.linalg.norm(delta, axis=-1, keepdims=True)
            scale = np.where(r > self.radius, self.radius / np.where(r == 0.0, 1.0, r), 1.0)
            p = self.center + delta * scale
        disp = np.linalg.norm(x - p, axis=-1)
        hit = disp > 0.0
        if x.ndim == 1:
            return p, bool(hit), float(disp)
        return p, hit, disp

    # -- normals ------------------------------------------------------------

    def outward_normal(self, x) -> np.ndarray:
        """Outward unit normal at a boundary point.

        Box corners return the normalized sum of active face normals.
        """
        x = _as_point(x, self.dimension)
        if self.contains(x) != BOUNDARY:
            raise PreconditionError("outward_normal requires a boundary point")
        eps = self.boundary_tol
        if self.kind == "ball":
            delta = x - self.center
            return delta / np.linalg.norm(delta)
        n = np.zeros_like(x)
        n -= (x <= self.lo + eps).astype(float)
        n += (x >= self.hi - eps).astype(float)
        norm = np.linalg.norm(n)
        if norm == 0.0:  # unreachable given the boundary precondition
            raise PreconditionError("no active face at boundary point")
        return n / norm

    def normals_at(self, x) -> np.ndarray:
        """Batched outward normals; rows not on the boundary are zero.

        Used by diagnostics on projected states, where off-boundary rows
        must contribute nothing.
        """
        x = _as_point(x, self.dimension)
        eps = max(self.boundary_tol, 1e-9)
        if self.kind == "ball":
            delta = x - self.center
            r = np.linalg.norm(delta, axis=-1, keepdims=True)
            on = np.abs(r - self.radius) <= eps
            return np.where(on, delta / np.where(r == 0, 1.0, r), 0.0)
        n = np.zeros_like(x)
        n -= (x <= self.lo + eps).astype(float)
        n += (x >= self.hi - eps).astype(float)
        norms = np.linalg.norm(n, axis=-1, keepdims=True)
        return np.where(norms > 0, n / np.where(norms == 0, 1.0, norms), 0.0)

    # -- sampling helpers ----------------------------------------------------

    def sample_interior(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n points uniform on the closure (used by validators and tests)."""
        d = self.dimension
        if self.kind == "box":
            return rng.uniform(self.lo, self.hi, size=(n, d))
        g = rng.standard_normal((n, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        u = rng.uniform(0.0, 1.0, size=(n, 1)) ** (1.0 / d)
        return self.center + self.radius * g * u

    def sample_boundary(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n points uniform-ish on the boundary."""
        d = self.dimension
        if self.kind == "ball":
            g = rng.standard_normal((n, d))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            return self.center + self.radius * g
        pts = rng.uniform(self.lo, self.hi, size=(n, d))
        axes = rng.integers(0, d, size=n)
        sides = rng.integers(0, 2, size=n)
        vals = np.where(sides == 0, self.lo[axes], self.hi[axes])
        pts[np.arange(n), axes] = vals
        return pts

    # -- config round-trip ---------------------------------------------------

    def to_config(self) -> dict:
        if self.kind == "box":
            return {"kind": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}
        return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}

    @staticmethod
    def from_config(cfg: dict) -> "ConvexDomain":
        kind = cfg.get("kind")
        if kind == "box":
            return ConvexDomain.box(cfg["lo"], cfg["hi"])
        if kind == "ball":
            return ConvexDomain.ball(cfg["center"], cfg["radius"])
        raise InputError(f"unknown domain kind: {kind!r}")


# -- 1D Skorokhod maps --------------------------------------------------------

def skorokhod_1d(w, lo: float, hi: float = np.inf):
    """Discrete Skorokhod reflection map on a sampled scalar path.

    One-sided (hi = +inf): x(t) = w(t) + max(0, sup_{s<=t}(lo - w(s))).
    Two-sided: fixed-point iteration of the one-sided maps until the
    correction stabilizes.  Returns (x, ell) where ell is the cumulative
    local time (total boundary push), nondecreasing with ell[0] = 0.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 1:
        raise InputError("skorokhod_1d expects a 1-d sampled path")
    if not np.all(np.isfinite(w)):
        raise InputError("path has non-finite values")
    lo = float(lo)
    hi = float(hi)
    if not lo < hi:
        raise InputError("requires lo < hi")
    if not (lo <= w[0] <= hi):
        raise InputError("path must start inside [lo, hi]")

    if np.isinf(hi):
        ell = np.maximum.accumulate(np.maximum(lo - w, 0.0))
        return w + ell, ell

    lower = np.zeros_like(w)
    upper = np.zeros_like(w)
    for _ in range(_SK_MAX_ITER):
        new_lower = np.maximum.accumulate(np.maximum(lo - w + upper, 0.0))
        new_upper = np.maximum.accumulate(np.maximum(w + new_lower - hi, 0.0))
        change = max(np.max(np.abs(new_lower - lower)), np.max(np.abs(new_upper - upper)))
        lower, upper = new_lower, new_upper
        if change < _SK_TOL:
            break
    x = np.clip(w + lower - upper, lo, hi)  # clamp residual fp error at nodes
    ell = lower + upper
    return x, ell
