"""Fixed-stress splitting for one implicit Euler step, plus a monolithic oracle.

One iteration performs two solves:

(a) (tau K(div u^i) grad p, grad q) + (S + L)(p, q) = G + L M p^i - B^T u^i
(b) A u = F + B p^{i+1}

where F and G are the mechanics and flow loads of the time step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import Discretization
from .fem import FEFunction
from .physics import ConductivityBreakdown, ModelParameters, PermeabilityModel
from .solver import DEFAULT_CONFIG, NonConvergence, SolverConfig, factorize

INCREMENT = "increment"
RESIDUAL = "residual"
DIVERGENCE_LIMIT = 1e10


@dataclass(frozen=True)
class StoppingRule:
    """``increment``: ||x_{k+1} - x_k|| < tol; ``residual``: ||r_k|| / ||r_0|| < tol."""

    kind: str = INCREMENT
    tol: float = 1e-6
    max_iter: int = 100

    def __post_init__(self):
        if self.kind not in (INCREMENT, RESIDUAL):
            raise ValueError(f"unknown stopping rule {self.kind!r}")
        if not (self.tol > 0 and self.max_iter >= 1):
            raise ValueError("tol must be positive and max_iter at least 1")


@dataclass
class IterationRecord:
    iteration: int
    increment_norm: float
    residual_ratio: float
    p_increment_l2: float
    error_p: float | None = None
    error_u_energy: float | None = None


@dataclass
class IterationTrace:
    rule: StoppingRule
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    residual0: float = 0.0
    status: str = "running"

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def final_increment(self) -> float:
        return self.records[-1].increment_norm if self.records else math.nan

    @property
    def final_residual_ratio(self) -> float:
        return self.records[-1].residual_ratio if self.records else math.nan

    def error_ratios(self) -> np.ndarray:
        """||e_p^{i+1}|| / ||e_p^i|| for i >= 1 (needs a reference)."""
        e = np.array([r.error_p for r in self.records], dtype=float)
        if e.size < 2:
            return np.empty(0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return e[1:] / e[:-1]

    def increment_ratios(self) -> np.ndarray:
        """Ratios of successive pressure increments in L2."""
        d = np.array([r.p_increment_l2 for r in self.records], dtype=float)
        if d.size < 2:
            return np.empty(0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return d[1:] / d[:-1]


@dataclass
class StepState:
    u: FEFunction
    p: FEFunction
    time_index: int = 0
    trace: IterationTrace | None = None

    @classmethod
    def zeros(cls, disc: Discretization, time_index: int = 0) -> "StepState":
        return cls(FEFunction.zeros(disc.V), FEFunction.zeros(disc.Q), time_index)

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.u.coeffs, self.p.coeffs])


def _check_scaled(params: ModelParameters):
    if params.mu != 0.5 or params.alpha != 1.0:
        raise ValueError("solvers expect scaled parameters (2 mu = 1, alpha = 1); "
                         "see physics.scale_parameters")


def elasticity_factor(disc: Discretization, lam: float, config: SolverConfig = DEFAULT_CONFIG):
    cache = disc.__dict__.setdefault("_factor_cache", {})
    key = (float(lam), config)
    if key not in cache:
        cache[key] = factorize(disc.elasticity(lam), config)
    return cache[key]


class StepProblem:
    """Loads and fixed operators of one time step."""

    def __init__(self, disc: Discretization, prev: StepState, params: ModelParameters,
                 model: PermeabilityModel, data, solver: SolverConfig = DEFAULT_CONFIG):
        _check_scaled(params)
        self.disc, self.params, self.model, self.solver = disc, params, model, solver
        self.step = prev.time_index + 1
        step = self.step
        self.A = disc.elasticity(params.lam)
        self.B = disc.coupling()
        self.M = disc.mass()
        self.F = disc.mech_source(lambda x, y: data.f(x, y, step))
        src = disc.flow_source(lambda x, y: data.g(x, y, step),
                               zero_mean=getattr(data, "zero_mean_flow", False))
        self.G = src + self.B.T @ prev.u.coeffs + params.S * (self.M @ prev.p.coeffs)
        self.free = disc.free

    def laplace(self, u_coeffs) -> sp.csr_matrix:
        return self.disc.weighted_laplace(self.disc.conductivity(u_coeffs, self.model))

    def residual(self, u, p, klap=None) -> np.ndarray:
        """Stacked algebraic residual on the free displacement DOFs and all pressure DOFs."""
        if klap is None:
            klap = self.laplace(u)
        pr = self.params
        ru = (self.A @ u - self.B @ p - self.F)[self.free]
        rp = self.B.T @ u + pr.tau * (klap @ p) + pr.S * (self.M @ p) - self.G
        return np.concatenate([ru, rp])

    def data_norm(self) -> float:
        return float(np.linalg.norm(np.concatenate([self.F[self.free], self.G])))


def _l2(M, v) -> float:
    return math.sqrt(max(float(v @ (M @ v)), 0.0))


def fixed_stress_step(disc: Discretization, prev: StepState, params: ModelParameters,
                      model: PermeabilityModel, data, stop: StoppingRule = StoppingRule(),
                      init_guess: StepState | None = None, reference: StepState | None = None,
                      solver: SolverConfig = DEFAULT_CONFIG) -> StepState:
    """Run the splitting until ``stop`` fires or its iteration cap is reached.

    The initial guess defaults to the previous state. Hitting the cap is not
    an error: the returned state carries a trace with ``converged = False``.
    ConductivityBreakdown is re-raised with ``trace`` and ``state`` attached.
    """
    prob = StepProblem(disc, prev, params, model, data, solver)
    pr = params
    guess = init_guess or prev
    u = guess.u.coeffs.copy()
    p = guess.p.coeffs.copy()
    mech = elasticity_factor(disc, pr.lam, solver)
    M, B = prob.M, prob.B
    trace = IterationTrace(stop)

    def state():
        return StepState(FEFunction(disc.V, u.copy()), FEFunction(disc.Q, p.copy()),
                         prob.step, trace)

    try:
        klap = prob.laplace(u)
        r0 = float(np.linalg.norm(prob.residual(u, p, klap)))
        trace.residual0 = r0
        for it in range(1, stop.max_iter + 1):
            P = (pr.tau * klap + (pr.S + pr.L) * M).tocsr()
            rhs_p = prob.G + pr.L * (M @ p) - B.T @ u
            p_new = factorize(P, solver).solve(rhs_p)
            u_new = mech.solve(prob.F + B @ p_new)
            dp, du = p_new - p, u_new - u
            inc = math.sqrt(float(du @ du + dp @ dp))
            u, p = u_new, p_new
            if not math.isfinite(inc) or inc > DIVERGENCE_LIMIT:
                trace.records.append(IterationRecord(it, inc, math.inf, math.inf))
                trace.status = "diverged"
                return state()
            klap = prob.laplace(u)
            r = float(np.linalg.norm(prob.residual(u, p, klap)))
            ratio = r / r0 if r0 > 0 else (0.0 if r == 0 else math.inf)
            rec = IterationRecord(it, inc, ratio, _l2(M, dp))
            if reference is not None:
                ep = p - reference.p.coeffs
                eu = u - reference.u.coeffs
                rec.error_p = _l2(M, ep)
                rec.error_u_energy = math.sqrt(max(float(eu @ (prob.A @ eu)), 0.0))
            trace.records.append(rec)
            value = inc if stop.kind == INCREMENT else ratio
            if value < stop.tol:
                trace.converged = True
                trace.status = "converged"
                return state()
        trace.status = "max_iter"
        return state()
    except ConductivityBreakdown as exc:
        trace.status = "breakdown"
        exc.trace = trace
        exc.state = state()
        raise


def coupled_residual(disc: Discretization, state: StepState, prev: StepState,
                     params: ModelParameters, model: PermeabilityModel, data) -> float:
    """Euclidean norm of the algebraic time-step residual, K taken at ``state``."""
    prob = StepProblem(disc, prev, params, model, data)
    return float(np.linalg.norm(prob.residual(state.u.coeffs, state.p.coeffs)))


class PicardNonConvergence(NonConvergence):
    pass


def monolithic_solve(disc: Discretization, prev: StepState, params: ModelParameters,
                     model: PermeabilityModel, data, picard_tol: float = 1e-12,
                     max_iter: int = 200) -> StepState:
    """Solve the coupled step by Picard iteration on K(div u).

    Each sweep solves the symmetric indefinite block system
    [[A, -B], [-B^T, -(tau K + S M)]] with a sparse LU factorization and
    one step of iterative refinement.
    Iteration stops when ||dx|| <= picard_tol * max(1, ||x||).
    """
    prob = StepProblem(disc, prev, params, model, data)
    pr = params
    n_u = disc.n_u
    x = prev.stacked()
    rhs = np.concatenate([prob.F, -prob.G])
    linear = model.is_linear
    history = []
    for it in range(1, max_iter + 1):
        klap = prob.laplace(x[:n_u])
        C = (pr.tau * klap + pr.S * prob.M)
        K = sp.bmat([[prob.A, -prob.B], [-prob.B.T, -C]], format="csc")
        # quasi-definite: symmetric pivot order without row interchanges
        lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
        x_new = lu.solve(rhs)
        x_new = x_new + lu.solve(rhs - K @ x_new)
        step = float(np.linalg.norm(x_new - x))
        history.append(step)
        x = x_new
        if linear or step <= picard_tol * max(1.0, float(np.linalg.norm(x))):
            out = StepState(FEFunction(disc.V, x[:n_u].copy()),
                            FEFunction(disc.Q, x[n_u:].copy()), prob.step)
            out.picard_iterations = it
            out.picard_history = history
            return out
    raise PicardNonConvergence(f"Picard stalled after {max_iter} sweeps "
                               f"(last increment {history[-1]:.3e})", iterations=max_iter)


def run_time_series(disc: Discretization, initial: StepState, n_steps: int,
                    params: ModelParameters, model: PermeabilityModel, data,
                    stop: StoppingRule = StoppingRule(), strict: bool = False,
                    step_solver: Callable | None = None) -> list[StepState]:
    """Apply ``fixed_stress_step`` n_steps times, feeding each state into the next load.

    With ``strict`` a non-converged step raises NonConvergence. Any error is
    tagged with ``time_index``.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    step_solver = step_solver or fixed_stress_step
    states = []
    prev = initial
    for _ in range(n_steps):
        try:
            nxt = step_solver(disc, prev, params, model, data, stop)
        except Exception as exc:
            exc.time_index = prev.time_index + 1
            raise
        if strict and nxt.trace is not None and not nxt.trace.converged:
            err = NonConvergence(f"step {nxt.time_index} did not converge "
                                 f"({nxt.trace.status})", iterations=nxt.trace.iterations)
            err.time_index = nxt.time_index
            raise err
        states.append(nxt)
        prev = nxt
    return states
