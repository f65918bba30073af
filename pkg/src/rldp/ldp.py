"""Laplace-functional Monte Carlo, the variational objective, control search,
and rate-function upper estimates.

The fixed-N identity being exercised:

    -(1/N) log E[exp(-N F(mu^N))]
        = inf over controls of { (1/2N) E[sum_i int |h_i|^2 dt] + E[F(controlled mu^N)] }

The infimum runs over all progressively measurable controls; the package
searches restricted families (constant / piecewise / feedback), so every
rate output is an upper estimate and is named accordingly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .controls import ControlPolicy, PolicyFamily, ensemble_cost
from .ensemble import (Ensemble, MeasureFlow, marginal_flow,
                       simulate_particle_system)
from .errors import InputError
from .integrator import TimeGrid
from .measures import bl_distance
from .model import MeasureSummary, ModelSpec
from . import rng as rngmod

ESS_GUARD_FRACTION = 0.01


# -- functionals of the path-marginal flow ---------------------------------------

@dataclass(frozen=True)
class Functional:
    """Bounded functional of a path-marginal flow (list of summaries)."""

    id: str
    evaluate: object = field(repr=False)  # callable flow -> float
    f_max: float = 1.0

    def __call__(self, flow) -> float:
        val = float(self.evaluate(flow))
        if not math.isfinite(val):
            raise InputError(f"functional {self.id} returned non-finite value")
        if abs(val) > self.f_max + 1e-9:
            raise InputError(
                f"functional {self.id} value {val} exceeds declared bound {self.f_max}")
        return val


def constant_functional(c: float) -> Functional:
    return Functional(id=f"constant({c})", evaluate=lambda flow: c,
                      f_max=abs(c) + 1e-12)


def terminal_mean_functional(scale: float = 1.0, coord: int = 0,
                             center: float = 0.0, cap: float = 1.0) -> Functional:
    """F(flow) = scale * clip(mean_coord(T) - center, -cap, cap)."""
    def ev(flow):
        m = flow[-1].mean[coord] if not isinstance(flow, MeasureFlow) else flow.terminal.mean[coord]
        return scale * float(np.clip(m - center, -cap, cap))
    return Functional(id=f"terminal_mean(scale={scale},coord={coord},center={center})",
                      evaluate=ev, f_max=abs(scale) * cap)


def distance_to_target_functional(target, scale: float = 1.0,
                                  mode: str = "terminal") -> Functional:
    """F(flow) = scale * distance(flow, target); distance is BL-based.

    mode "terminal": BL distance of the terminal marginals.
    mode "integrated": time-average of the per-node BL distances.
    """
    def dist(flow):
        return flow_distance(flow, target, mode)
    return Functional(id=f"bl_to_target(scale={scale},mode={mode})",
                      evaluate=lambda flow: scale * dist(flow),
                      f_max=2.0 * abs(scale))


def flow_distance(flow, target, mode: str = "terminal") -> float:
    """BL distance between a marginal flow and a target flow or summary."""
    summaries = flow.summaries if isinstance(flow, MeasureFlow) else list(flow)
    if isinstance(target, MeasureSummary):
        return bl_distance(summaries[-1], target).value
    tgt = target.summaries if isinstance(target, MeasureFlow) else list(target)
    if mode == "terminal":
        return bl_distance(summaries[-1], tgt[-1]).value
    if mode != "integrated":
        raise InputError(f"unknown distance mode {mode!r}")
    vals = [bl_distance(a, b).value for a, b in zip(summaries, tgt)]
    return float(np.mean(vals))


FUNCTIONAL_REGISTRY = {
    "constant": constant_functional,
    "terminal_mean": terminal_mean_functional,
}


def functional_from_config(cfg: dict) -> Functional:
    cfg = dict(cfg)
    name = cfg.pop("functional", None)
    if name not in FUNCTIONAL_REGISTRY:
        raise InputError(f"unknown functional {name!r}")
    return FUNCTIONAL_REGISTRY[name](**cfg)


# -- Laplace functional -------------------------------------------------------------

@dataclass(frozen=True)
class LaplaceEstimate:
    value: float
    std_error: float
    n_particles: int
    n_replicas: int
    effective_sample_size: float
    log_sum_exp_guard: bool  # True when the estimate is unreliable


def _replica_flows(model: ModelSpec, n_particles: int, grid: TimeGrid,
                   n_replicas: int, seed: int, policy=None, budget=None):
    for m in range(n_replicas):
        ens = simulate_particle_system(model, n_particles, grid, policy=policy,
                                       seed=seed, replica=m, budget=budget)
        yield ens


def laplace_functional_mc(model: ModelSpec, functional: Functional,
                          n_particles: int, grid: TimeGrid, n_replicas: int,
                          seed: int = 0, budget=None) -> LaplaceEstimate:
    """-(1/N) log mean exp(-N F(mu^N)) over independent uncontrolled replicas.

    Uses a shifted (log-sum-exp) average; the standard error comes from the
    delta method on the exponential average and the effective-sample-size
    guard flags degenerate weight concentration.
    """
    if n_replicas < 2:
        raise InputError("need at least two replicas")
    f_vals = np.array([functional(marginal_flow(ens))
                       for ens in _replica_flows(model, n_particles, grid,
                                                 n_replicas, seed, budget=budget)])
    a = -n_particles * f_vals
    a_max = float(np.max(a))
    w = np.exp(a - a_max)
    mean_w = float(np.mean(w))
    value = -(a_max + math.log(mean_w)) / n_particles
    sd_w = float(np.std(w, ddof=1))
    std_error = sd_w / (mean_w * math.sqrt(n_replicas) * n_particles)
    ess = float(np.sum(w) ** 2 / np.sum(w ** 2))
    return LaplaceEstimate(
        value=value, std_error=std_error, n_particles=n_particles,
        n_replicas=n_replicas, effective_sample_size=ess,
        log_sum_exp_guard=bool(ess < ESS_GUARD_FRACTION * n_replicas),
    )


# -- variational objective ------------------------------------------------------------

@dataclass(frozen=True)
class VariationalEstimate:
    objective: float
    cost_part: float
    f_part: float
    std_error: float
    n_particles: int
    n_replicas: int


def variational_objective(model: ModelSpec, functional: Functional,
                          policy: ControlPolicy, n_particles: int,
                          grid: TimeGrid, n_replicas: int, seed: int = 0,
                          budget=None) -> VariationalEstimate:
    """Mean control cost plus mean F over controlled replicas."""
    costs = np.empty(n_replicas)
    f_vals = np.empty(n_replicas)
    for m, ens in enumerate(_replica_flows(model, n_particles, grid,
                                           n_replicas, seed, policy=policy,
                                           budget=budget)):
        costs[m] = ensemble_cost(ens)
        f_vals[m] = functional(marginal_flow(ens))
    totals = costs + f_vals
    se = float(np.std(totals, ddof=1) / math.sqrt(n_replicas)) if n_replicas > 1 else 0.0
    return VariationalEstimate(
        objective=float(np.mean(totals)), cost_part=float(np.mean(costs)),
        f_part=float(np.mean(f_vals)), std_error=se,
        n_particles=n_particles, n_replicas=n_replicas,
    )


# -- control optimization ---------------------------------------------------------------

@dataclass(frozen=True)
class OptimizationResult:
    policy: ControlPolicy
    theta: np.ndarray
    objective: float
    cost_part: float
    f_part: float
    trace: np.ndarray         # best-so-far objective per evaluation
    n_evaluations: int
    budget_exhausted: bool


class _BudgetExhausted(Exception):
    pass


def optimize_controls(model: ModelSpec, functional: Functional,
                      family: PolicyFamily, n_particles: int, grid: TimeGrid,
                      n_replicas: int, budget: int, seed: int = 0,
                      n_restarts: int = 3, sim_budget=None) -> OptimizationResult:
    """Restarted Nelder-Mead over the family parameters.

    Common random numbers: every evaluation reuses the same replica
    substreams, so objective differences reflect theta only.  The zero
    parameter vector is always in the restart set, hence the returned
    objective never exceeds the zero-policy objective.
    """
    if budget < family.dim + 2:
        raise InputError("budget must be at least dim(theta) + 2")

    evals = {"n": 0}
    best = {"theta": None, "objective": np.inf}
    trace = []

    def objective_fn(theta):
        if evals["n"] >= budget:
            raise _BudgetExhausted
        evals["n"] += 1
        est = variational_objective(model, functional, family.make(theta),
                                    n_particles, grid, n_replicas, seed=seed,
                                    budget=sim_budget)
        if est.objective < best["objective"]:
            best["objective"] = est.objective
            best["theta"] = np.asarray(theta, dtype=float).copy()
        trace.append(best["objective"])
        return est.objective

    start_rng = rngmod.substream(seed, rngmod.OPT)
    starts = [np.zeros(family.dim)]
    for _ in range(max(0, n_restarts - 1)):
        starts.append(start_rng.uniform(-family.bound / 2, family.bound / 2,
                                        size=family.dim))

    exhausted = False
    per_restart = max(family.dim + 2, budget // max(1, len(starts)))
    for x0 in starts:
        if evals["n"] >= budget:
            exhausted = True
            break
        try:
            minimize(objective_fn, x0, method="Nelder-Mead",
                     options={"maxfev": min(per_restart, budget - evals["n"]),
                              "xatol": 1e-4, "fatol": 1e-8})
        except _BudgetExhausted:
            exhausted = True
            break

    theta = best["theta"]
    policy = family.make(theta)
    final = variational_objective(model, functional, policy, n_particles,
                                  grid, n_replicas, seed=seed, budget=sim_budget)
    return OptimizationResult(
        policy=policy, theta=theta, objective=final.objective,
        cost_part=final.cost_part, f_part=final.f_part,
        trace=np.asarray(trace), n_evaluations=evals["n"],
        budget_exhausted=exhausted,
    )


# -- rate-function upper estimate ----------------------------------------------------------

@dataclass(frozen=True)
class RateEstimate:
    target_description: str
    radius: float
    lambdas: tuple
    achieved_distances: tuple
    cost_values: tuple
    feasible: bool
    upper_bound: float        # +inf when no penalty weight reaches the radius
    selected_lambda: float | None


def achieved_distance(model: ModelSpec, policy: ControlPolicy, target,
                      n_particles: int, grid: TimeGrid, n_replicas: int,
                      seed: int, mode: str, budget=None) -> float:
    vals = [flow_distance(marginal_flow(ens), target, mode)
            for ens in _replica_flows(model, n_particles, grid, n_replicas,
                                      seed, policy=policy, budget=budget)]
    return float(np.mean(vals))


def estimate_rate(model: ModelSpec, target, lambda_schedule, family: PolicyFamily,
                  n_particles: int, grid: TimeGrid, n_replicas: int,
                  budget: int, seed: int = 0, radius: float = 0.1,
                  distance_mode: str = "terminal",
                  sim_budget=None) -> RateEstimate:
    """Upper estimate of the rate of steering into a target neighborhood.

    For each penalty weight lambda the control family is optimized against
    F_lambda = lambda * distance(flow, target); the reported bound is the
    control cost at the largest lambda whose achieved distance is within
    the radius.  No feasible lambda means the target is unreachable for
    this family and budget (the inf-over-empty-set = infinity branch).
    """
    lambdas = [float(l) for l in lambda_schedule]
    if any(b <= a for a, b in zip(lambdas, lambdas[1:])):
        raise InputError("lambda schedule must be increasing")
    dists, costs = [], []
    feasible_pairs = []
    for lam in lambdas:
        f_lam = distance_to_target_functional(target, scale=lam,
                                              mode=distance_mode)
        res = optimize_controls(model, f_lam, family, n_particles, grid,
                                n_replicas, budget, seed=seed,
                                sim_budget=sim_budget)
        dist = achieved_distance(model, res.policy, target, n_particles, grid,
                                 n_replicas, seed, distance_mode, budget=sim_budget)
        dists.append(dist)
        costs.append(res.cost_part)
        if dist <= radius:
            feasible_pairs.append((lam, res.cost_part))
    target_desc = (f"terminal summary, mean={np.array2string(target.mean, precision=4)}"
                   if isinstance(target, MeasureSummary)
                   else f"measure flow ({getattr(target, 'method', 'direct')})")
    if feasible_pairs:
        sel_lam, cost = feasible_pairs[-1]
        return RateEstimate(
            target_description=target_desc, radius=radius,
            lambdas=tuple(lambdas), achieved_distances=tuple(dists),
            cost_values=tuple(costs), feasible=True,
            upper_bound=max(0.0, cost), selected_lambda=sel_lam)
    return RateEstimate(
        target_description=target_desc, radius=radius, lambdas=tuple(lambdas),
        achieved_distances=tuple(dists), cost_values=tuple(costs),
        feasible=False, upper_bound=math.inf, selected_lambda=None)
