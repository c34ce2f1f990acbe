"""Command-line entry point: ``structmf {classify,solve,experiment-temperature,experiment-timing}``.

Exit codes: 0 success, 1 usage or file error, 2 guard violation.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from contextlib import contextmanager

from .experiments import ExperimentConfig, ResultRow, TraceRow, make_row, temperature_experiment, timing_experiment, write_rows
from .graph_core import PRESETS, GraphError, Kind, classify, load_selection
from .model import ModelError, ising_grid, load_model
from .tree_inference import IntractableError, exact_log_partition


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


@contextmanager
def _output(path):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _load_model(args):
    if args.model:
        return load_model(args.model)
    if args.temperature is None:
        raise UsageError("either --model or --temperature (with --size) is required")
    return ising_grid(args.size or 9, args.temperature)


def cmd_classify(args) -> int:
    model = _load_model(args)
    if not args.subgraph:
        raise UsageError("--subgraph is required")
    dec = classify(load_selection(args.subgraph, model.graph))
    for comp in dec.components:
        print(f"component {comp.index}: size {len(comp.vertices)}, {comp.kind.value}, "
              f"intra {len(comp.intra_dropped)}, cross {len(comp.cross_dropped)}")
    n = len(dec.components)
    noun = "component" if n == 1 else "components"
    if dec.is_v_acyclic:
        print(f"{n} {noun}, all VAcyclic")
    else:
        nb = sum(c.kind is Kind.B_ACYCLIC for c in dec.components)
        intra = sum(len(v) for v in dec.dropped_intra.values())
        kinds = "BAcyclic" if n == 1 else f"{nb} BAcyclic"
        print(f"{n} {noun}, {kinds}, {intra} intra dropped edges")
    return 0


def _selection_for(method, model, args):
    if method == "mf":
        if not args.subgraph:
            raise UsageError("--method mf needs --subgraph")
        return load_selection(args.subgraph, model.graph)
    if args.subgraph:
        return load_selection(args.subgraph, model.graph)
    return PRESETS[method](model.graph)


def cmd_solve(args) -> int:
    from .meanfield import MFProblem, SolveOptions, solve, write_trace

    model = _load_model(args)
    method = args.method
    T = args.temperature if args.temperature is not None else float("nan")
    exact = None
    try:
        exact, _ = exact_log_partition(model, marginals=False)
    except IntractableError:
        if method == "exact":
            raise

    if method == "exact":
        row = make_row("EXACT", T, exact, exact, 0.0, True)
    elif method == "gibbs":
        from .gibbs import estimate_marginals, write_marginals

        sel = load_selection(args.subgraph, model.graph) if args.subgraph else PRESETS["nmf"](model.graph)
        t0 = time.perf_counter()
        est = estimate_marginals(model, classify(sel), args.sweeps, args.burnin, args.seed)
        row = make_row("GIBBS", T, None, exact, (time.perf_counter() - t0) * 1e3, None)
        if args.marginals:
            write_marginals(est, args.marginals)
    else:
        sel = _selection_for(method, model, args)
        opts = SolveOptions(args.tol, args.max_sweeps, args.damping, args.init, args.seed)
        sol = solve(MFProblem(model, sel), opts)
        row = make_row(method.upper(), T, sol.lower_bound, exact, sol.elapsed_ms[-1], sol.converged)
        if args.trace:
            write_trace(sol, args.trace)
    with _output(args.out) as fh:
        write_rows([row], ResultRow.HEADER, fh, timing=not args.no_timing)
    return 0


_EXPERIMENT_KEYS = ("size", "temps", "methods", "tol", "max_sweeps", "damping", "seed", "init", "jobs", "out")


def _experiment_config(args, timing_temperature=None) -> ExperimentConfig:
    data = {}
    if args.config:
        with open(args.config) as fh:
            data.update(json.load(fh))
    for key in _EXPERIMENT_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    if timing_temperature is not None:
        data["timing_temperature"] = timing_temperature
    if args.no_timing:
        data["timing"] = False
    return ExperimentConfig.from_dict(data)


def cmd_experiment_temperature(args) -> int:
    config = _experiment_config(args)
    rows = temperature_experiment(config)
    with _output(config.out) as fh:
        write_rows(rows, ResultRow.HEADER, fh, timing=config.timing)
    return 0


def cmd_experiment_timing(args) -> int:
    config = _experiment_config(args, args.temperature)
    rows = timing_experiment(config)
    with _output(config.out) as fh:
        write_rows(rows, TraceRow.HEADER, fh, timing=config.timing)
    return 0


def _temps(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad temperature list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="model JSON file")
    common.add_argument("--subgraph", help="subgraph JSON file with kept_edges")
    common.add_argument("--size", type=int, default=None, help="Ising grid side (default 9)")
    common.add_argument("--temperature", type=float, default=None)
    common.add_argument("--tol", type=float, default=None)
    common.add_argument("--max-sweeps", dest="max_sweeps", type=int, default=None)
    common.add_argument("--damping", type=float, default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--init", choices=["perturbed", "uniform"], default=None)
    common.add_argument("--out", default=None, help="output CSV (default stdout)")
    common.add_argument("--no-timing", action="store_true", help="write elapsed_ms as 0 for byte-stable output")

    parser = _Parser(prog="structmf", description="Structured mean field for pairwise discrete MRFs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("classify", parents=[common], help="report v-/b-acyclic components")

    p = sub.add_parser("solve", parents=[common], help="estimate log Z with one method")
    p.add_argument("--method", choices=["exact", "nmf", "smf1", "smf2", "mf", "gibbs"], default="mf")
    p.add_argument("--trace", help="write per-sweep trace CSV here")
    p.add_argument("--sweeps", type=int, default=10000, help="Gibbs sweeps")
    p.add_argument("--burnin", type=int, default=1000, help="Gibbs burn-in sweeps")
    p.add_argument("--marginals", help="write Gibbs marginal estimates CSV here")

    for name in ("experiment-temperature", "experiment-timing"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--config", help="JSON config; flags override its values")
        p.add_argument("--temps", type=_temps, default=None, help="comma-separated temperatures")
        p.add_argument("--methods", type=lambda s: s.split(","), default=None)
        p.add_argument("--jobs", type=int, default=None)
    return parser


_COMMANDS = {
    "classify": cmd_classify,
    "solve": cmd_solve,
    "experiment-temperature": cmd_experiment_temperature,
    "experiment-timing": cmd_experiment_timing,
}


def _fill_solve_defaults(args):
    defaults = {"tol": 1e-8, "max_sweeps": 10000, "damping": 0.5, "seed": 0, "init": "perturbed"}
    for key, val in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, val)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command in ("classify", "solve"):
        _fill_solve_defaults(args)
    try:
        return _COMMANDS[args.command](args)
    except IntractableError as exc:
        print(f"structmf: intractable: {exc}", file=sys.stderr)
        return 2
    except (UsageError, GraphError, ModelError, ValueError, OSError, json.JSONDecodeError) as exc:
        from .gibbs import GibbsError

        if isinstance(exc, GibbsError):
            print(f"structmf: {exc}", file=sys.stderr)
            return 2
        print(f"structmf: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
