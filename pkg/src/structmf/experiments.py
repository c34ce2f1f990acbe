"""Temperature and timing experiments on the square Ising grid, emitted as CSV rows."""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable

import numpy as np

from .graph_core import PRESETS, classify, rows_forest
from .model import ising_grid
from .meanfield import MFProblem, SolveOptions, solve
from .tree_inference import exact_log_partition

METHODS = ("NMF", "SMF1", "SMF2", "EXACT", "GIBBS")
MF_METHODS = ("NMF", "SMF1", "SMF2")


def default_temperatures() -> list[float]:
    return [float(t) for t in np.geomspace(0.5, 5.0, 21)]


@dataclass
class ExperimentConfig:
    size: int = 9
    temps: list[float] = field(default_factory=default_temperatures)
    methods: list[str] = field(default_factory=lambda: list(MF_METHODS))
    tol: float = 1e-8
    max_sweeps: int = 10000
    damping: float = 0.5
    seed: int = 0
    init: str = "perturbed"
    timing_temperature: float = 2.0
    gibbs_sweeps: int = 1000
    timing: bool = True
    jobs: int = 1
    out: str | None = None

    def __post_init__(self):
        self.methods = [m.upper() for m in self.methods]
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}")
        if any(not t > 0 for t in self.temps) or not self.timing_temperature > 0:
            raise ValueError("temperatures must be positive")
        if self.size < 2 and set(self.methods) & {"SMF1", "SMF2"}:
            raise ValueError("SMF presets need size >= 2")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)

    def solve_options(self) -> SolveOptions:
        return SolveOptions(self.tol, self.max_sweeps, self.damping, self.init, self.seed)


@dataclass
class ResultRow:
    method: str
    T: float
    logZ_estimate: float | None
    exact_logZ: float | None
    abs_error: float | None
    elapsed_ms: float
    converged: bool | None

    HEADER = ("method", "T", "logZ_estimate", "exact_logZ", "abs_error", "elapsed_ms", "converged")

    def cells(self, timing: bool = True) -> list[str]:
        def num(x):
            return "" if x is None else f"{x:.12g}"

        return [self.method, num(self.T), num(self.logZ_estimate), num(self.exact_logZ), num(self.abs_error),
                num(self.elapsed_ms if timing else 0.0), "" if self.converged is None else str(self.converged).lower()]


def make_row(method: str, T: float, estimate, exact, elapsed_ms: float, converged) -> ResultRow:
    err = abs(estimate - exact) if estimate is not None and exact is not None else None
    return ResultRow(method, T, estimate, exact, err, elapsed_ms, converged)


def _temperature_point(config: ExperimentConfig, T: float) -> list[ResultRow]:
    model = ising_grid(config.size, T)
    t0 = time.perf_counter()
    exact, _ = exact_log_partition(model, marginals=False)
    exact_ms = (time.perf_counter() - t0) * 1e3
    rows = []
    for method in config.methods:
        if method in MF_METHODS:
            problem = MFProblem(model, PRESETS[method.lower()](model.graph))
            sol = solve(problem, config.solve_options())
            rows.append(make_row(method, T, sol.lower_bound, exact, sol.elapsed_ms[-1], sol.converged))
        elif method == "EXACT":
            rows.append(make_row(method, T, exact, exact, exact_ms, True))
        else:
            from .gibbs import GibbsState, sweep

            dec = classify(rows_forest(model.graph))
            state = GibbsState.start(model, config.seed)
            t0 = time.perf_counter()
            for _ in range(config.gibbs_sweeps):
                sweep(model, dec, state)
            rows.append(make_row(method, T, None, exact, (time.perf_counter() - t0) * 1e3, None))
    return rows


def temperature_experiment(config: ExperimentConfig) -> list[ResultRow]:
    """Error of each method's bound over the temperature grid; rows in (T, method) order."""
    temps = list(config.temps)
    if config.jobs > 1:
        with ProcessPoolExecutor(config.jobs) as pool:
            chunks = list(pool.map(_temperature_point, [config] * len(temps), temps))
    else:
        chunks = [_temperature_point(config, T) for T in temps]
    return [row for chunk in chunks for row in chunk]


@dataclass
class TraceRow:
    method: str
    T: float
    sweep: int
    elapsed_ms: float
    objective: float
    abs_error: float

    HEADER = ("method", "T", "sweep", "elapsed_ms", "objective", "abs_error")

    def cells(self, timing: bool = True) -> list[str]:
        return [self.method, f"{self.T:.12g}", str(self.sweep), f"{self.elapsed_ms if timing else 0.0:.12g}",
                f"{self.objective:.12g}", f"{self.abs_error:.12g}"]


def timing_experiment(config: ExperimentConfig) -> list[TraceRow]:
    """Per-sweep error-versus-time traces at ``config.timing_temperature``, same seed for every method."""
    T = config.timing_temperature
    model = ising_grid(config.size, T)
    exact, _ = exact_log_partition(model, marginals=False)
    rows = []
    for method in [m for m in config.methods if m in MF_METHODS]:
        problem = MFProblem(model, PRESETS[method.lower()](model.graph))
        sol = solve(problem, config.solve_options())
        for i, (g, ms) in enumerate(zip(sol.objective_trace, sol.elapsed_ms)):
            rows.append(TraceRow(method, T, i, ms, g, abs(exact - g)))
    return rows


def write_rows(rows: Iterable, header, fh, timing: bool = True) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row.cells(timing))


def rows_to_csv(rows, header, timing: bool = True) -> str:
    buf = io.StringIO()
    write_rows(rows, header, buf, timing)
    return buf.getvalue()


def config_dict(config: ExperimentConfig) -> dict:
    return asdict(config)
