"""Bound-constrained design optimization of the scattering objective.

The primary algorithm is a native method of moving asymptotes (MMA) for the
box-constrained separable subproblem; a projected-gradient loop with Armijo
backtracking serves as fallback.  Maximization is handled by negating the
objective and gradient internally.  Each outer evaluation runs the full
chain: apply design -> refine -> assemble -> solve -> adjoint ->
sensitivities.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import adjoint_sens as adj
from . import bem
from .model import apply_design, refine_for_analysis
from .quadrature import SubdivisionPolicy

_ASYM_INIT = 0.5
_ASYM_GROW = 1.2
_ASYM_SHRINK = 0.7
_MOVE_FRACTION = 0.9   # keep iterates strictly inside the asymptotes


@dataclass(frozen=True)
class ConvergenceCriteria:
    """Stop when |dJ|/|J| < ftol_rel between accepted iterates or the
    evaluation budget is exhausted."""

    ftol_rel: float = 1e-3
    max_eval: int = 100

    def __post_init__(self):
        if self.ftol_rel <= 0:
            raise ValueError("ftol_rel must be positive")


@dataclass
class OptimizationState:
    """Design vector with box bounds, evaluation bookkeeping and the MMA
    asymptotes."""

    x: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    iteration: int = 0
    eval_count: int = 0
    history: list = field(default_factory=list)   # (eval_count, J, metric)
    asym_lo: np.ndarray | None = None
    asym_hi: np.ndarray | None = None
    x_prev: np.ndarray | None = None
    x_prev2: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).copy()
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if np.any(self.x < self.lower) or np.any(self.x > self.upper):
            raise ValueError("initial design violates bounds")


def _update_asymptotes(state: OptimizationState):
    span = state.upper - state.lower
    span = np.where(span > 0, span, 1.0)
    if state.x_prev is None or state.x_prev2 is None:
        state.asym_lo = state.x - _ASYM_INIT * span
        state.asym_hi = state.x + _ASYM_INIT * span
        return
    osc = (state.x - state.x_prev) * (state.x_prev - state.x_prev2)
    gamma = np.where(osc > 0, _ASYM_GROW, np.where(osc < 0, _ASYM_SHRINK, 1.0))
    d_lo = gamma * (state.x_prev - state.asym_lo)
    d_hi = gamma * (state.asym_hi - state.x_prev)
    d_lo = np.clip(d_lo, 1e-6 * span, 10.0 * span)
    d_hi = np.clip(d_hi, 1e-6 * span, 10.0 * span)
    state.asym_lo = state.x - d_lo
    state.asym_hi = state.x + d_hi


def shrink_asymptotes(state: OptimizationState, factor: float = 0.5):
    """Tighten the asymptotes around the current iterate after a trial step
    made the objective worse (conservativity safeguard)."""
    span = state.upper - state.lower
    span = np.where(span > 0, span, 1.0)
    d_lo = np.maximum(factor * (state.x - state.asym_lo), 1e-6 * span)
    d_hi = np.maximum(factor * (state.asym_hi - state.x), 1e-6 * span)
    state.asym_lo = state.x - d_lo
    state.asym_hi = state.x + d_hi


def mma_step(state: OptimizationState, J: float,
             gradient: np.ndarray,
             update_asymptotes: bool = True) -> np.ndarray:
    """One MMA step for MINIMIZATION of J under the box bounds.

    With only box constraints the convex subproblem separates per
    coordinate and has the closed-form minimizer
    x* = (L sqrt(p) + U sqrt(q)) / (sqrt(p) + sqrt(q)).
    """
    g = np.asarray(gradient, dtype=float)
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient must be finite")
    if update_asymptotes or state.asym_lo is None:
        _update_asymptotes(state)
    L, U = state.asym_lo, state.asym_hi
    x = state.x
    span = np.where(state.upper > state.lower, state.upper - state.lower, 1.0)
    gp, gm = np.maximum(g, 0.0), np.maximum(-g, 0.0)
    p = (U - x) ** 2 * (1.001 * gp + 0.001 * gm + 1e-5 / span)
    q = (x - L) ** 2 * (0.001 * gp + 1.001 * gm + 1e-5 / span)
    sp, sq = np.sqrt(p), np.sqrt(q)
    xs = (L * sp + U * sq) / (sp + sq)
    lo = np.maximum(state.lower, L + (1 - _MOVE_FRACTION) * (x - L))
    hi = np.minimum(state.upper, U - (1 - _MOVE_FRACTION) * (U - x))
    return np.clip(xs, lo, hi)


def accept(state: OptimizationState, x_new: np.ndarray):
    """Record x_new as the next accepted iterate."""
    state.x_prev2 = state.x_prev
    state.x_prev = state.x.copy()
    state.x = np.asarray(x_new, dtype=float).copy()
    state.iteration += 1


def projected_gradient_step(state: OptimizationState, gradient: np.ndarray,
                            step: float) -> np.ndarray:
    """Ascent trial point: projection of x + step * gradient onto the box."""
    return np.clip(state.x + step * np.asarray(gradient, dtype=float),
                   state.lower, state.upper)


@dataclass
class EvalResult:
    """One full objective/gradient evaluation at a design point."""

    J: float
    gradient: np.ndarray
    model: object
    solution: bem.BemSolution
    field: adj.SensitivityField


class ScatteringProblem:
    """Objective/gradient evaluator for a scene's design space."""

    def __init__(self, scene, policy: SubdivisionPolicy | None = None):
        self.scene = scene
        self.policy = policy or SubdivisionPolicy()
        self.model = scene.build_model()
        self.design = scene.design_space(self.model)
        self.radial = scene.design.get("mode", "cp") == "radial"
        self.objective = adj.Objective(scene.observation_points)
        if self.radial:
            a0 = float(scene.design["initial"])
            self.unit_cp = self.model.global_cp / a0
            self.x0 = np.array([a0])
            self.lower = np.array([float(scene.design["lower"])])
            self.upper = np.array([float(scene.design["upper"])])
        else:
            m = self.design.free_mask
            self.x0 = self.design.initial[m]
            self.lower = self.design.lower[m]
            self.upper = self.design.upper[m]

    def model_at(self, x):
        if self.radial:
            return self.model.with_global_cp(self.unit_cp * x[0])
        full = self.design.initial.copy()
        full[self.design.free_mask] = x
        return apply_design(self.model, full, self.design)

    def evaluate(self, x) -> EvalResult:
        m = self.model_at(x)
        refined, M = refine_for_analysis(m, dict(self.scene.refinement))
        system = bem.assemble(refined, self.scene.incident.wavenumber,
                              self.policy)
        sol = bem.solve(system, self.scene.incident)
        values = adj.observation_values(sol, self.objective)
        J = adj.objective(sol, self.objective, values)
        lam = adj.adjoint_solve(sol, self.objective, values)
        field = adj.sensitivities(sol, lam, M)
        if self.radial:
            grad = np.array([adj.radius_sensitivity(field, m.global_cp,
                                                    float(x[0]))])
        else:
            grad = field.s.ravel()[self.design.free_mask]
        return EvalResult(J, grad, m, sol, field)


def _metric(problem, state, x_prev):
    if problem.radial:
        return float(state.x[0])
    return float(np.linalg.norm(state.x - x_prev))


def _write_artifacts(problem, state, out_dir):
    if out_dir is None:
        return
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "history.csv"), "w") as f:
        f.write("eval,J,a_or_norm_dx\n")
        for ev, J, met in state.history:
            f.write(f"{ev},{J:.17g},{met:.17g}\n")
    with open(os.path.join(out_dir, "checkpoint.json"), "w") as f:
        json.dump({"x": state.x.tolist(),
                   "eval_count": state.eval_count,
                   "iteration": state.iteration,
                   "J": state.history[-1][1] if state.history else None}, f,
                  indent=2)


def run(scene, algorithm: str = "mma",
        criteria: ConvergenceCriteria | None = None,
        policy: SubdivisionPolicy | None = None,
        out_dir: str | None = None,
        progress=None) -> tuple[OptimizationState, EvalResult]:
    """Maximize the scene objective over its design space.

    Returns the final state and the evaluation at the final accepted design.
    The history logs every objective evaluation (accepted or not).
    """
    if algorithm not in ("mma", "pg"):
        raise ValueError("algorithm must be 'mma' or 'pg'")
    criteria = criteria or ConvergenceCriteria()
    problem = ScatteringProblem(scene, policy)
    state = OptimizationState(problem.x0, problem.lower, problem.upper)

    res = problem.evaluate(state.x)
    state.eval_count = 1
    state.history.append((1, res.J, _metric(problem, state, state.x)))
    if progress:
        progress(state, res)
    _write_artifacts(problem, state, out_dir)

    step = None
    fresh_asymptotes = True
    while state.eval_count < criteria.max_eval:
        if algorithm == "mma":
            x_new = mma_step(state, -res.J, -res.gradient,
                             update_asymptotes=fresh_asymptotes)
        else:
            if step is None:
                span = np.max(problem.upper - problem.lower)
                gmax = np.max(np.abs(res.gradient))
                step = 0.1 * span / max(gmax, 1e-30)
            x_new = projected_gradient_step(state, res.gradient, step)
        if np.allclose(x_new, state.x, rtol=0, atol=1e-14):
            break

        res_new = problem.evaluate(x_new)
        state.eval_count += 1

        if algorithm == "mma":
            if res_new.J < res.J:  # worse trial: tighten and retry
                state.history.append((state.eval_count, res_new.J,
                                      _metric(problem, state, state.x)))
                _write_artifacts(problem, state, out_dir)
                shrink_asymptotes(state)
                fresh_asymptotes = False
                span = np.max(problem.upper - problem.lower)
                if np.max(np.abs(x_new - state.x)) < 1e-6 * span:
                    break
                continue
            fresh_asymptotes = True

        if algorithm == "pg":
            gain = res.gradient @ (x_new - state.x)
            if res_new.J < res.J + 1e-4 * gain:  # insufficient ascent
                state.history.append((state.eval_count, res_new.J,
                                      _metric(problem, state, state.x)))
                step *= 0.5
                _write_artifacts(problem, state, out_dir)
                if step < 1e-12:
                    break
                continue
            step *= 1.5

        x_old = state.x.copy()
        J_old = res.J
        accept(state, x_new)
        res = res_new
        state.history.append((state.eval_count, res.J,
                              _metric(problem, state, x_old)))
        if progress:
            progress(state, res)
        _write_artifacts(problem, state, out_dir)
        small_J = abs(res.J - J_old) < criteria.ftol_rel * max(abs(res.J),
                                                              1e-30)
        span = np.max(problem.upper - problem.lower)
        small_x = np.max(np.abs(state.x - x_old)) < criteria.ftol_rel * span
        if small_J and (algorithm == "pg" or small_x):
            break

    _write_artifacts(problem, state, out_dir)
    return state, res
