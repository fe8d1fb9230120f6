"""Acceptance checks, each returning a pass/fail verdict with a short detail line."""
from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import experiments, fem, manufactured, theory
from .assembly import discretization
from .experiments import ExperimentConfig, run_single, run_sweep
from .fem import FEFunction
from .fixedstress import (RESIDUAL, StepState, StoppingRule, fixed_stress_step,
                          monolithic_solve)
from .manufactured import ManufacturedData
from .physics import (ModelParameters, PermeabilityModel, assumption_constants,
                      eval_K)
from .solver import factorize

MODELS = ("o", "i", "ii", "iii")
BOUND_SLACK = 1.05
LAM, TAU, S, K0, K1 = 1e2, 1e-2, 1e-4, 1e-6, 1e-1


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number} [{verdict}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(number: int, name: str, fn: Callable[[], tuple[bool, str]]) -> CriterionResult:
    t0 = time.perf_counter()
    passed, detail = fn()
    return CriterionResult(number, name, bool(passed), detail, time.perf_counter() - t0)


def _rel_l2(space, a, b) -> float:
    diff = fem.norms(FEFunction(space, a - b))["l2"]
    return diff / fem.norms(FEFunction(space, b))["l2"]


def _setup(level, model, tau=TAU, lam=LAM, L=None):
    disc = discretization(level)
    params = ModelParameters(lam=lam, S=S, tau=tau, L=L or theory.l_star(lam))
    data = ManufacturedData(lam, tau, model.K0, S)
    return disc, params, data


# 1 ------------------------------------------------------------------------
def oracle_equivalence(level: int = 1, tol: float = 1e-6):
    parts, ok = [], True
    for label in MODELS:
        t0 = time.perf_counter()
        model = PermeabilityModel(label, K0, K1)
        disc, params, data = _setup(level, model)
        prev = StepState.zeros(disc)
        fs = fixed_stress_step(disc, prev, params, model, data)
        ref = monolithic_solve(disc, prev, params, model, data)
        ep = _rel_l2(disc.Q, fs.p.coeffs, ref.p.coeffs)
        eu = _rel_l2(disc.V, fs.u.coeffs, ref.u.coeffs)
        secs = time.perf_counter() - t0
        good = fs.trace.converged and ep <= tol and eu <= tol and secs <= 60
        ok &= good
        parts.append(f"({label}) p {ep:.1e} u {eu:.1e}")
    return ok, "; ".join(parts)


# 2 ------------------------------------------------------------------------
def contraction_trace(label: str, level: int = 0, tau: float = 1e-4, lam: float = LAM,
                      k1: float = K1):
    """Fixed-stress trace measured against the monolithic solution."""
    model = PermeabilityModel(label, K0, k1)
    disc, params, data = _setup(level, model, tau=tau, lam=lam)
    prev = StepState.zeros(disc)
    ref = monolithic_solve(disc, prev, params, model, data)
    return fixed_stress_step(disc, prev, params, model, data, reference=ref).trace


def model_bound(label: str, tau: float, lam: float = LAM, k1: float = K1) -> float:
    tc = theory.constants_for(PermeabilityModel(label, K0, k1), lam, theory.l_star(lam))
    return theory.contraction_bound(tc, tau)


def linear_contraction():
    trace = contraction_trace("i")
    ratios = trace.error_ratios()
    bound = model_bound("i", 1e-4)
    worst = float(ratios.max())
    ok = trace.converged and bool(np.all(ratios < 1)) and worst <= BOUND_SLACK * bound
    return ok, (f"max ratio {worst:.4f} over {ratios.size} ratios, bound {bound:.4f} "
                f"(beta_s {theory.inf_sup_for_level(0):.4f}, Stokes, h=1/16)")


# 3 ------------------------------------------------------------------------
def theory_formulas():
    rng = np.random.default_rng(20240601)
    worst = 0.0
    for lam, beta in zip(10 ** rng.uniform(-3, 6, 100), rng.uniform(0.01, 1.0, 100)):
        direct, closed = theory.quotient_c0_c1(float(lam), float(beta))
        worst = max(worst, abs(direct - closed) / closed)
    lam = 1e8
    tc = theory.TheoryConstants(d=2, lam=lam, beta_s=theory.inf_sup_for_level(0), c_inf=0.0,
                                k_lip=0.0, k_min=K0, L=theory.l_star(lam))
    gap = abs(theory.contraction_bound(tc, TAU) - 1 / math.sqrt(2))
    lstar_ok = abs(theory.l_star(1e2) - 1 / 100.5) < 1e-15 and theory.l_star(0) == 2
    ok = worst <= 1e-14 and gap <= 1e-3 and lstar_ok
    return ok, f"c0/c1 identity max rel diff {worst:.1e}; |bound(1e8) - 1/sqrt2| = {gap:.1e}"


# sweeps ---------------------------------------------------------------------
def _preset(name, **filters):
    configs = experiments.load_configs(name)
    return [c for c in configs if all(getattr(c, k) in v for k, v in filters.items())]


def _table(records, row_key, col_key):
    out = {}
    for r in records:
        out.setdefault(row_key(r), {})[col_key(r)] = r.iters if r.converged else None
    return out


def _fmt_h(h):
    return f"1/{round(1 / h)}"


# 4 ------------------------------------------------------------------------
def parameter_robustness(jobs: int = 1):
    recs = run_sweep(_preset("fig3"), jobs=jobs)
    its = [r.iters for r in recs]
    conv = all(r.converged for r in recs)
    spread = max(its) / min(its)
    table = _table(recs, lambda r: r.lam, lambda r: r.h)
    rows = "; ".join(f"lam {lam:g}: " + " ".join(str(v) for v in row.values())
                     for lam, row in table.items())
    return conv and spread <= 3.0, f"all converged {conv}, max/min {spread:.2f} [{rows}]"


# 5 ------------------------------------------------------------------------
def k0_insensitivity(jobs: int = 1):
    recs = run_sweep(_preset("fig4", stop_rule={RESIDUAL}), jobs=jobs)
    table = _table(recs, lambda r: r.h, lambda r: r.K0)
    ok = all(len(set(row.values())) == 1 and None not in row.values() for row in table.values())
    rows = "; ".join(f"h {_fmt_h(h)}: " + " ".join(str(v) for v in row.values())
                     for h, row in table.items())
    return ok, rows


# 6 ------------------------------------------------------------------------
def stabilization_sensitivity(jobs: int = 1):
    recs = run_sweep(_preset("fig6"), jobs=jobs)
    by = {}
    for r in recs:
        factor = round(r.L / theory.l_star(r.lam), 6)
        by.setdefault((r.K0, r.h), {})[factor] = r
    full = all(pt[1.0].converged and pt[2.0].converged for pt in by.values())
    half_fails = sum(not pt[0.5].converged for pt in by.values())
    order_ok = all(pt[1.0].iters <= pt[2.0].iters for pt in by.values()
                   if all(p.converged for p in pt.values()))
    counts = " ".join(f"{pt[1.0].iters}/{pt[2.0].iters}/"
                      f"{pt[0.5].iters if pt[0.5].converged else '-'}" for pt in by.values())
    ok = full and half_fails >= 1 and order_ok
    return ok, (f"L*,2L* converge everywhere {full}; L*/2 fails at {half_fails}/{len(by)}; "
                f"iters L*/2L*/(L*/2): {counts}")


# 7 ------------------------------------------------------------------------
def time_step_sensitivity(level: int = 3, jobs: int = 1):
    taus = (1e-4, 5e-4, 5e-2, 1e-1)
    configs = _preset("fig5", level={level}, tau=set(taus))
    recs = run_sweep(configs, jobs=jobs)
    conv = {r.tau: r for r in recs}
    small = all(conv[t].converged for t in (1e-4, 5e-4))
    large_fail = any(not conv[t].converged for t in (5e-2, 1e-1))
    detail = ", ".join(f"tau {t:g}: {conv[t].iters if conv[t].converged else 'no'}" for t in taus)
    return small and large_fail, f"h={_fmt_h(configs[0].h)}; {detail}"


# 8 ------------------------------------------------------------------------
def convergence_orders(levels=(0, 1, 2)):
    model = PermeabilityModel("o", K0)
    errs_p, errs_u = [], []
    for level in levels:
        disc, params, data = _setup(level, model)
        st = fixed_stress_step(disc, StepState.zeros(disc), params, model, data)
        errs_p.append(fem.l2_error(st.p, manufactured.p_exact, subtract_means=True))
        errs_u.append(fem.l2_error(st.u, manufactured.u_exact))
    op = np.log2(np.array(errs_p[:-1]) / np.array(errs_p[1:]))
    ou = np.log2(np.array(errs_u[:-1]) / np.array(errs_u[1:]))
    ok = bool(np.all(op >= 1.8) and np.all(ou >= 1.8))
    return ok, (f"p orders {np.array2string(op, precision=2)}, "
                f"u orders {np.array2string(ou, precision=2)}")


# 9 ------------------------------------------------------------------------
def _quadrature_exact():
    rule = fem.triangle_rule(4)
    worst = 0.0
    for a in range(5):
        for b in range(5 - a):
            got = np.sum(rule.weights * rule.points[:, 1] ** a * rule.points[:, 2] ** b)
            # weights sum to one, i.e. integrals are divided by the reference area 1/2
            exact = 2 * math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
            worst = max(worst, abs(got - exact))
    return worst < 1e-15, f"quadrature error {worst:.1e}"


def _spd():
    disc = discretization(0)
    model = PermeabilityModel("i", K0, K1)
    u = fem.interpolate(disc.V, manufactured.u_exact)
    P = disc.pressure_matrix(disc.conductivity(u.coeffs, model), TAU, S, theory.l_star(LAM))
    mins = []
    for mat in (disc.elasticity(LAM), P):
        dense = mat.toarray()
        mins.append(np.linalg.eigvalsh(0.5 * (dense + dense.T)).min())
        factorize(mat)
    return min(mins) > 0, f"min eigenvalues A {mins[0]:.1e}, P {mins[1]:.1e}"


def _lipschitz():
    rng = np.random.default_rng(7)
    ok = True
    for label in MODELS:
        model = PermeabilityModel(label, 1e-3, 1e-3)
        ac = assumption_constants(model, -0.5, 0.5)
        a, b = rng.uniform(-0.5, 0.5, (2, 1000))
        lhs = np.abs(eval_K(model, a) - eval_K(model, b))
        ok &= bool(np.all(lhs <= ac.k_lip * np.abs(a - b) + 4e-16 * ac.k_max))
    return ok, "Lipschitz sampling on [-0.5, 0.5]"


def _csv_and_determinism():
    configs = [ExperimentConfig(model="iii", K0=K0, K1=K1, level=0),
               ExperimentConfig(model="i", K0=K0, K1=K1, level=0, stop_rule=RESIDUAL)]
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "rt.csv"
        recs = run_sweep(configs, path)
        again = experiments.read_csv(path)
    rerun = run_single(configs[0])
    return again == recs and rerun == recs[0], "CSV round trip and rerun identity"


def _fixed_stress_contracts():
    worst = 0.0
    for label in MODELS:
        for tau in (1e-4, 1e-3):
            worst = max(worst, float(contraction_trace(label, tau=tau).error_ratios().max()))
    return worst < 1, f"error ratios below 1 for L = L*, tau <= 1e-3 (max {worst:.3f})"


def _bound_holds():
    """Measured worst ratio against the bound with the Stokes beta_s (the default).

    The detail also lists the bound with the lam-consistent discrete constant.
    """
    parts, ok = [], True
    beta2 = theory.inf_sup_for_level(0, LAM)
    for label in ("o", "i", "iii"):  # k_min = 0 on [-1, 1] for the squared affine law
        for tau in (1e-4, 1e-3):
            worst = float(contraction_trace(label, tau=tau).error_ratios().max())
            bound = model_bound(label, tau)
            tc = theory.constants_for(PermeabilityModel(label, K0, K1), LAM,
                                      theory.l_star(LAM), beta_s=beta2)
            alt = theory.contraction_bound(tc, tau)
            ok &= worst <= BOUND_SLACK * bound
            parts.append(f"({label},{tau:g}) {worst:.3f}/{bound:.3f}/{alt:.3f}")
    return ok, "measured/bound/lam-consistent bound " + " ".join(parts)


def _bound_monotone():
    base = dict(d=2, lam=LAM, beta_s=0.4, c_inf=6.0, k_lip=1e-3, k_min=1e-6, L=theory.l_star(LAM))
    b0 = theory.contraction_bound(theory.TheoryConstants(**base), 1e-3)
    ok = theory.contraction_bound(theory.TheoryConstants(**base), 2e-3) > b0
    ok &= theory.contraction_bound(theory.TheoryConstants(**{**base, "k_lip": 2e-3}), 1e-3) > b0
    ok &= theory.contraction_bound(theory.TheoryConstants(**{**base, "k_min": 2e-6}), 1e-3) < b0
    # lambda moves together with L = L*(lambda)
    lam2 = {**base, "lam": 2e2, "L": theory.l_star(2e2)}
    ok &= theory.contraction_bound(theory.TheoryConstants(**lam2), 1e-3) < b0
    return ok, "bound monotone in tau, k_lip, k_min, lambda (with L = L*)"


INVARIANT_CHECKS = {
    "quadrature": _quadrature_exact,
    "spd": _spd,
    "lipschitz": _lipschitz,
    "csv_determinism": _csv_and_determinism,
    "fixed_stress_contraction": _fixed_stress_contracts,
    "bound_monotone": _bound_monotone,
    "theory_bound": _bound_holds,
}


def invariant_suite():
    failed, details = [], []
    for name, check in INVARIANT_CHECKS.items():
        ok, detail = check()
        details.append(f"{name} {'ok' if ok else 'FAILED'} ({detail})")
        if not ok:
            failed.append(name)
    return not failed, "; ".join(details)


CRITERIA = {
    1: ("oracle equivalence", oracle_equivalence),
    2: ("linear contraction", linear_contraction),
    3: ("theory formulas", theory_formulas),
    4: ("parameter robustness", parameter_robustness),
    5: ("K0 insensitivity", k0_insensitivity),
    6: ("stabilization sensitivity", stabilization_sensitivity),
    7: ("time-step sensitivity", time_step_sensitivity),
    8: ("discretization sanity", convergence_orders),
    9: ("invariant suites", invariant_suite),
}
_PARALLEL = {4, 5, 6, 7}


def run_criterion(number: int, jobs: int = 1) -> CriterionResult:
    name, fn = CRITERIA[number]
    call = (lambda: fn(jobs=jobs)) if number in _PARALLEL else fn
    return _timed(number, name, call)


def run_all(numbers=None, jobs: int = 1, echo: Callable[[str], None] | None = print):
    results = []
    for n in numbers or sorted(CRITERIA):
        res = run_criterion(n, jobs)
        if echo:
            echo(res.line())
        results.append(res)
    return results
