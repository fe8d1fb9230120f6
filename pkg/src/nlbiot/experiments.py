"""Experiment configs, parameter sweeps, CSV records, plots and bound reports.

Config files are INI text. A ``[run]`` section holds one base configuration;
every further section named ``axis.<key>`` turns ``<key>`` into a sweep axis
with a comma-separated ``values`` list. The grid is the Cartesian product of
the axes in file order, the last axis varying fastest.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import theory
from .assembly import discretization
from .fixedstress import (INCREMENT, RESIDUAL, StepState, StoppingRule, fixed_stress_step,
                          monolithic_solve)
from .manufactured import ManufacturedData
from .mesh import COARSE_H
from .physics import (CONSTANT, EXPONENTIAL, QUADRATIC_DIV, SQUARED_AFFINE,
                      ConductivityBreakdown, ModelParameters, PermeabilityModel,
                      assumption_constants)
from .solver import SolverError

MAX_LEVEL = 3  # h = 1/128
LSTAR, MULTIPLE, EXPLICIT = "Lstar", "multiple", "explicit"
L_POLICIES = (LSTAR, MULTIPLE, EXPLICIT)
MEASURE_INCREMENTS, MEASURE_REFERENCE = "increments", "reference"

LABELS = {CONSTANT: "o", QUADRATIC_DIV: "i", SQUARED_AFFINE: "ii", EXPONENTIAL: "iii"}

CSV_COLUMNS = (
    "model", "K0", "K1", "lambda", "S", "tau", "h", "L", "stop_rule", "iters",
    "converged", "final_increment", "final_residual_ratio", "measured_contraction",
    "theory_bound", "config_digest",
)
BOUND_COLUMNS = ("lambda", "tau", "L", "beta_s", "c_inf", "k_lip", "k_min", "bound")

# config-file keys that differ from the attribute names
_KEY_ALIASES = {"lambda": "lam", "mesh_level": "level", "stop": "stop_rule"}


class ConfigError(ValueError):
    pass


class CSVFormatError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "o"
    K0: float = 1e-6
    K1: float = 0.0
    lam: float = 1e2
    S: float = 1e-4
    tau: float = 1e-2
    level: int = 0
    L_policy: str = LSTAR
    L_value: float = 1.0
    stop_rule: str = INCREMENT
    tol: float = 1e-6
    max_iter: int = 100
    n_steps: int = 1
    measure: str = MEASURE_INCREMENTS

    def __post_init__(self):
        model = PermeabilityModel(self.model, self.K0, self.K1)  # validates the law
        object.__setattr__(self, "model", LABELS[model.variant])
        if not (self.lam >= 0 and self.S >= 0 and self.tau > 0):
            raise ConfigError("need lambda >= 0, S >= 0 and tau > 0")
        if not 0 <= self.level <= MAX_LEVEL:
            raise ConfigError(f"mesh level must lie in [0, {MAX_LEVEL}]")
        if self.L_policy not in L_POLICIES:
            raise ConfigError(f"L_policy must be one of {L_POLICIES}")
        if not (self.L_value > 0 and math.isfinite(self.L_value)):
            raise ConfigError("L_value must be positive")
        if self.stop_rule not in (INCREMENT, RESIDUAL):
            raise ConfigError(f"stop_rule must be {INCREMENT!r} or {RESIDUAL!r}")
        if self.max_iter < 1 or self.n_steps < 1 or not self.tol > 0:
            raise ConfigError("max_iter and n_steps must be >= 1 and tol > 0")
        if self.measure not in (MEASURE_INCREMENTS, MEASURE_REFERENCE):
            raise ConfigError(f"measure must be {MEASURE_INCREMENTS!r} or {MEASURE_REFERENCE!r}")
        if self.measure == MEASURE_REFERENCE and self.n_steps != 1:
            raise ConfigError("reference contraction is only measured for a single step")

    @property
    def h(self) -> float:
        return COARSE_H / 2**self.level

    @property
    def L(self) -> float:
        if self.L_policy == EXPLICIT:
            return float(self.L_value)
        factor = 1.0 if self.L_policy == LSTAR else self.L_value
        return factor * theory.l_star(self.lam)

    def permeability(self) -> PermeabilityModel:
        return PermeabilityModel(self.model, self.K0, self.K1)

    def parameters(self) -> ModelParameters:
        return ModelParameters(lam=self.lam, S=self.S, tau=self.tau, L=self.L)

    def digest(self) -> str:
        text = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _convert(name: str, text: str):
    ftype = {f.name: f.type for f in fields(ExperimentConfig)}[name]
    text = text.strip()
    if ftype == "int":
        return int(text)
    if ftype == "float":
        return float(text)
    return text


def _attr(key: str) -> str:
    name = _KEY_ALIASES.get(key, key)
    # configparser lower-cases keys; match attributes case-insensitively
    for f in fields(ExperimentConfig):
        if f.name.lower() == name.lower():
            return f.name
    raise ConfigError(f"unknown config key {key!r}")


def parse_config_text(text: str) -> list[ExperimentConfig]:
    """Expand INI text into the list of grid configurations."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    base = {}
    if cp.has_section("run"):
        for key, value in cp.items("run"):
            name = _attr(key)
            base[name] = _convert(name, value)
    axes = []
    for section in cp.sections():
        if section == "run":
            continue
        if not section.startswith("axis."):
            raise ConfigError(f"unknown section [{section}]")
        name = _attr(section[len("axis."):])
        raw = cp.get(section, "values", fallback="")
        values = [_convert(name, v) for v in raw.split(",") if v.strip()]
        if not values:
            raise ConfigError(f"[{section}] has no values")
        axes.append((name, values))
    names = [a[0] for a in axes]
    grid = []
    for combo in itertools.product(*[a[1] for a in axes]):
        try:
            grid.append(ExperimentConfig(**{**base, **dict(zip(names, combo))}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc
    return grid


def preset_names() -> list[str]:
    files = resources.files("nlbiot").joinpath("configs").iterdir()
    return sorted(p.name[:-4] for p in files if p.name.endswith(".ini"))


def load_configs(source) -> list[ExperimentConfig]:
    """Read a config file, or a packaged preset such as ``fig3``."""
    path = Path(source)
    if path.is_file():
        return parse_config_text(path.read_text())
    if str(source) in preset_names():
        res = resources.files("nlbiot").joinpath("configs", f"{source}.ini")
        return parse_config_text(res.read_text())
    raise ConfigError(f"no config file or preset named {source!r}")


@dataclass(eq=False)
class ResultRecord:
    model: str
    K0: float
    K1: float
    lam: float
    S: float
    tau: float
    h: float
    L: float
    stop_rule: str
    iters: int
    converged: bool
    final_increment: float
    final_residual_ratio: float
    measured_contraction: float
    theory_bound: float
    config_digest: str

    def _key(self):
        return tuple("nan" if isinstance(v, float) and math.isnan(v) else v
                     for v in asdict(self).values())

    def __eq__(self, other):
        return isinstance(other, ResultRecord) and self._key() == other._key()

    def to_row(self) -> list[str]:
        out = []
        for v in asdict(self).values():
            if isinstance(v, bool):
                out.append("true" if v else "false")
            else:
                out.append(repr(v) if isinstance(v, float) else str(v))
        return out

    @classmethod
    def from_row(cls, row: list[str], line: int | None = None) -> "ResultRecord":
        if len(row) != len(CSV_COLUMNS):
            raise CSVFormatError(f"expected {len(CSV_COLUMNS)} fields, got {len(row)}", line)
        values = {}
        for f, text in zip(fields(cls), row):
            try:
                if f.type == "bool":
                    if text not in ("true", "false"):
                        raise ValueError(f"not a boolean: {text!r}")
                    values[f.name] = text == "true"
                elif f.type == "int":
                    values[f.name] = int(text)
                elif f.type == "float":
                    values[f.name] = float(text)
                else:
                    values[f.name] = text
            except ValueError as exc:
                raise CSVFormatError(f"column {f.name}: {exc}", line) from exc
        return cls(**values)


def _theory_bound(config: ExperimentConfig) -> float:
    try:
        tc = theory.constants_for(config.permeability(), config.lam, config.L)
        return theory.contraction_bound(tc, config.tau)
    except (ValueError, ArithmeticError):
        return math.nan


def _worst_ratio(ratios: np.ndarray) -> float:
    ratios = ratios[np.isfinite(ratios)]
    return float(ratios.max()) if ratios.size else math.nan


def run_single(config: ExperimentConfig) -> ResultRecord:
    """Run one configuration; failures become a non-converged record.

    ``measured_contraction`` is the worst ratio of successive pressure
    increments, or of pressure errors against a monolithic reference when
    ``measure = reference``.
    """
    disc = discretization(config.level)
    params = config.parameters()
    model = config.permeability()
    data = ManufacturedData(config.lam, config.tau, config.K0, config.S)
    stop = StoppingRule(config.stop_rule, config.tol, config.max_iter)
    prev = StepState.zeros(disc)
    reference = None
    if config.measure == MEASURE_REFERENCE:
        try:
            reference = monolithic_solve(disc, prev, params, model, data)
        except (SolverError, ArithmeticError):
            reference = None
    iters, converged, trace = 0, True, None
    for _ in range(config.n_steps):
        try:
            state = fixed_stress_step(disc, prev, params, model, data, stop,
                                      reference=reference)
        except ConductivityBreakdown as exc:
            trace = exc.trace
            iters, converged = max(iters, trace.iterations), False
            break
        except SolverError:
            iters, converged = config.max_iter, False
            break
        trace = state.trace
        iters = max(iters, trace.iterations)
        converged = converged and trace.converged
        prev = state
        if not trace.converged:
            break
    if trace is None or not trace.records:
        inc = res = contraction = math.nan
    else:
        inc, res = trace.final_increment, trace.final_residual_ratio
        ratios = trace.error_ratios() if reference is not None else trace.increment_ratios()
        contraction = _worst_ratio(ratios)
    return ResultRecord(
        model=config.model, K0=float(config.K0), K1=float(config.K1), lam=float(config.lam),
        S=float(config.S), tau=float(config.tau), h=float(config.h), L=float(config.L),
        stop_rule=config.stop_rule, iters=int(iters), converged=bool(converged),
        final_increment=float(inc), final_residual_ratio=float(res),
        measured_contraction=contraction, theory_bound=_theory_bound(config),
        config_digest=config.digest(),
    )


def write_csv(records, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(rec.to_row())


def read_csv(path) -> list[ResultRecord]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise CSVFormatError(f"header must be {','.join(CSV_COLUMNS)}", 1)
        return [ResultRecord.from_row(row, reader.line_num) for row in reader if row]


def run_sweep(configs, out_path=None, jobs: int = 1) -> list[ResultRecord]:
    """Run every config; rows keep grid order whatever the number of jobs."""
    configs = list(configs)
    if jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(run_single, configs))
    else:
        records = [run_single(c) for c in configs]
    if out_path is not None:
        write_csv(records, out_path)
    return records


def with_max_iter(configs, max_iter: int | None):
    if max_iter is None:
        return list(configs)
    return [replace(c, max_iter=max_iter) for c in configs]


_FAMILY_FIELDS = ("model", "K0", "K1", "lam", "S", "tau", "L", "stop_rule")
_FIELD_LABELS = {"lam": "lambda"}


def _family_key(records):
    varying = [f for f in _FAMILY_FIELDS if len({getattr(r, f) for r in records}) > 1]

    def key(rec):
        return tuple(getattr(rec, f) for f in varying)

    def label(k):
        parts = [f"{_FIELD_LABELS.get(f, f)}={v:g}" if isinstance(v, float)
                 else f"{_FIELD_LABELS.get(f, f)}={v}" for f, v in zip(varying, k)]
        return ", ".join(parts) or "all runs"

    return key, label


def plot_series(records) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Label -> (h descending, iteration counts with NaN where not converged)."""
    key, label = _family_key(records)
    families: dict = {}
    for rec in records:
        families.setdefault(key(rec), []).append(rec)
    out = {}
    for k in sorted(families, key=str):
        recs = sorted(families[k], key=lambda r: -r.h)
        h = np.array([r.h for r in recs])
        it = np.array([r.iters if r.converged else np.nan for r in recs], dtype=float)
        out[label(k)] = (h, it)
    return out


def plot(csv_path, out_path, title: str | None = None) -> Path:
    """Iteration count against h, one line per parameter family.

    Non-converged runs are NaN in their line, which matplotlib draws as a gap.
    The SVG is byte-identical for identical input.
    """
    import matplotlib
    from matplotlib.backends.backend_svg import FigureCanvasSVG
    from matplotlib.figure import Figure

    records = read_csv(csv_path)
    with matplotlib.rc_context({"svg.hashsalt": "nlbiot", "svg.fonttype": "none"}):
        fig = Figure(figsize=(6.0, 4.0))
        FigureCanvasSVG(fig)
        ax = fig.add_subplot()
        for name, (h, it) in plot_series(records).items():
            ax.plot(h, it, marker="o", label=name)
        ax.set_xscale("log", base=2)
        hs = sorted({r.h for r in records}, reverse=True)
        if hs:
            ax.set_xticks(hs, [f"1/{round(1 / v)}" for v in hs])
        ax.set_xlabel("h")
        ax.set_ylabel("fixed-stress iterations")
        if title:
            ax.set_title(title)
        if records:
            ax.legend(fontsize="small")
        fig.tight_layout()
        out = Path(out_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out, format="svg", metadata={"Date": None})
    return out


def bound_rows(configs) -> list[dict]:
    """Theory bound inputs and values for each distinct (law, lambda, tau, L)."""
    rows, seen = [], set()
    for c in configs:
        key = (c.model, c.K0, c.K1, c.lam, c.tau, c.L)
        if key in seen:
            continue
        seen.add(key)
        row = {"lambda": c.lam, "tau": c.tau, "L": c.L, "beta_s": theory.inf_sup_for_level(0),
               "c_inf": theory.grad_p_sup(), "k_lip": math.nan, "k_min": math.nan,
               "bound": math.nan}
        try:
            ac = assumption_constants(c.permeability())
            row.update(k_lip=ac.k_lip, k_min=ac.k_min)
            tc = theory.constants_for(c.permeability(), c.lam, c.L, beta_s=row["beta_s"])
            row["bound"] = theory.contraction_bound(tc, c.tau)
        except (ValueError, ArithmeticError):
            pass
        rows.append(row)
    return rows


def write_bound_report(configs, path) -> list[dict]:
    rows = bound_rows(configs)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BOUND_COLUMNS)
        for row in rows:
            writer.writerow([repr(float(row[c])) for c in BOUND_COLUMNS])
    return rows
