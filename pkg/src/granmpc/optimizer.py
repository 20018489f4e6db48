"""Bound-constrained Nelder-Mead with quadratic penalties and multistart.

Inequality constraints ``g(u) <= 0`` are folded into the objective as
``weight * sum(max(0, g + shift)^2)``; the weight grows geometrically
between rounds and the shifts carry multiplier estimates from round to round
so the final iterate lands on the constraint instead of just outside it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

log = logging.getLogger(__name__)


@dataclass
class NlpProblem:
    objective: Callable[[np.ndarray], float]
    bounds: Sequence[tuple[float, float]]
    # Returns the vector of constraint values g(u); feasible where all <= 0.
    constraints: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        self.bounds = [(float(lo), float(hi)) for lo, hi in self.bounds]
        if any(lo > hi for lo, hi in self.bounds):
            raise ValueError("every lower bound must not exceed its upper bound")

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.bounds])

    def g(self, u) -> np.ndarray:
        if self.constraints is None:
            return np.zeros(0)
        return np.atleast_1d(np.asarray(self.constraints(u), dtype=float))

    def residual(self, u) -> float:
        """Largest constraint violation (0 when feasible)."""
        g = self.g(u)
        return float(max(0.0, g.max())) if g.size else 0.0


@dataclass
class NlpSolution:
    x: np.ndarray
    fun: float
    max_residual: float
    iterations: int
    converged: bool
    evaluations: int = 0
    history: list = field(default_factory=list, repr=False)


class InfeasibleProblem(RuntimeError):
    """No start reached the feasibility tolerance; ``solution`` is the least-violating point."""

    def __init__(self, solution: NlpSolution):
        super().__init__(f"no feasible point found (best residual {solution.max_residual:.3g})")
        self.solution = solution


def penalize(problem: NlpProblem, weight: float, shifts=None) -> Callable[[np.ndarray], float]:
    if not weight > 0:
        raise ValueError("penalty weight must be positive")

    def f(u):
        g = problem.g(u)
        if shifts is not None:
            g = g + shifts
        return problem.objective(u) + weight * float(np.sum(np.maximum(0.0, g) ** 2))

    return f


def _initial_simplex(x0, lo, hi, scale=0.1):
    n = len(x0)
    simplex = np.tile(x0, (n + 1, 1))
    for k in range(n):
        step = scale * (hi[k] - lo[k]) if hi[k] > lo[k] else 0.0
        if step == 0.0:
            step = scale * max(1.0, abs(x0[k]))
        # Step toward the interior so the vertex stays inside the box.
        if x0[k] + step > hi[k] and x0[k] - step >= lo[k]:
            step = -step
        simplex[k + 1, k] = x0[k] + step
    return simplex


def minimize(problem: NlpProblem, starts, *, initial_weight: float = 10.0, growth: float = 10.0,
             rounds: int = 4, feas_tol: float = 1e-6, xatol: float = 1e-7, fatol: float = 1e-12,
             max_evals: int | None = None) -> NlpSolution:
    """Penalized Nelder-Mead from every start; returns the best solution.

    Feasible candidates beat infeasible ones; among feasible candidates the
    lowest objective wins, otherwise the lowest residual. Raises
    :class:`InfeasibleProblem` if nothing is feasible.
    """
    lo, hi = problem.lower, problem.upper
    starts = [np.clip(np.asarray(s, dtype=float).reshape(-1), lo, hi) for s in starts]
    if not starts:
        raise ValueError("at least one start is required")
    n = len(lo)
    max_evals = max_evals or 400 * n
    bounds = list(zip(lo, hi))

    best = None
    history = []
    total_evals = 0
    total_iters = 0
    for x0 in starts:
        x = x0
        m = problem.g(x).size
        shifts = np.zeros(m)
        weight = initial_weight
        for _ in range(rounds):
            fpen = penalize(problem, weight, shifts if m else None)
            res = _scipy_minimize(fpen, x, method="Nelder-Mead", bounds=bounds,
                                  options={"xatol": xatol, "fatol": fatol, "maxfev": max_evals,
                                           "initial_simplex": _initial_simplex(x, lo, hi)})
            total_evals += res.nfev
            total_iters += res.nit
            # Keep the start if the simplex never improved on it.
            x = np.clip(res.x, lo, hi) if res.fun <= fpen(x) else x
            if m == 0:
                break
            g = problem.g(x)
            if g.max() <= feas_tol:
                break
            # Multiplier update expressed as a shift for the next weight.
            shifts = np.maximum(0.0, g + shifts) / growth
            weight *= growth
        cand = _candidate(problem, x, feas_tol)
        # A feasible start that the search failed to improve on is kept as is.
        first = _candidate(problem, x0, feas_tol)
        if _better(first, cand):
            cand = first
        history.append(cand)
        if best is None or _better(cand, best):
            best = cand

    best.iterations = total_iters
    best.evaluations = total_evals
    best.history = history
    if not best.converged:
        log.debug("penalized search ended infeasible, residual %.3g", best.max_residual)
        raise InfeasibleProblem(best)
    return best


def _candidate(problem: NlpProblem, x, feas_tol: float) -> NlpSolution:
    res = problem.residual(x)
    return NlpSolution(x, float(problem.objective(x)), res, 0, res <= feas_tol)


def _better(a: NlpSolution, b: NlpSolution) -> bool:
    if a.converged != b.converged:
        return a.converged
    if a.converged:
        return a.fun < b.fun
    return a.max_residual < b.max_residual
