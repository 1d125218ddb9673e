"""Command-line front end: check | synthesize | simulate | verify | bench.

Exit codes are a stable contract: 0 success/certified, 2 input error,
3 infeasible/uncertified/unsatisfied, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cbf import Barrier, InfeasibleStepError
from .config import ConfigError, ScenarioConfig, load_config
from .simulate import (
    SimulationError,
    read_trajectory_signal,
    run_closed_loop,
    write_trajectory_log,
)
from .stl import (
    FormulaSyntaxError,
    IntervalError,
    UndefinedPredicateError,
    horizon,
    robustness,
    robustness_lipschitz,
)
from .synthesis import solve_sop
from .tube import Tube, load_tube, save_tube

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_UNCERTIFIED = 3
EXIT_RUNTIME = 4

# ValueError covers malformed artifact files (tube records, covers, logs)
_INPUT_ERRORS = (ConfigError, FormulaSyntaxError, IntervalError,
                 UndefinedPredicateError, FileNotFoundError, KeyError,
                 ValueError)


def _out_dir(config: ScenarioConfig, args) -> Path:
    out = Path(args.out) if args.out else Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _format_tree(f, indent: int = 0) -> str:
    from .stl import And, Or, Not, Until, Eventually, Always, Predicate, TrueFormula
    pad = "  " * indent
    if isinstance(f, (Predicate, TrueFormula)):
        return f"{pad}{f}"
    if isinstance(f, Not):
        return f"{pad}Not\n{_format_tree(f.child, indent + 1)}"
    if isinstance(f, (And, Or)):
        name = type(f).__name__
        return (f"{pad}{name}\n{_format_tree(f.left, indent + 1)}\n"
                f"{_format_tree(f.right, indent + 1)}")
    if isinstance(f, (Eventually, Always)):
        name = "Eventually" if isinstance(f, Eventually) else "Always"
        return f"{pad}{name}[{f.start:g},{f.end:g}]\n{_format_tree(f.child, indent + 1)}"
    if isinstance(f, Until):
        return (f"{pad}Until[{f.start:g},{f.end:g}]\n{_format_tree(f.left, indent + 1)}\n"
                f"{_format_tree(f.right, indent + 1)}")
    return f"{pad}{f!r}"


def _write_tube_profile(tube: Tube, path: Path) -> None:
    ts = np.linspace(0.0, tube.t_f, 201)
    centers = tube.center_grid(ts)
    radii = tube.radius_grid(ts)
    header = "t," + ",".join(f"c_{i+1}" for i in range(tube.dimension)) + ",r"
    rows = [header]
    for k, t in enumerate(ts):
        vals = [f"{t:.17g}"] + [f"{v:.17g}" for v in centers[:, k]] + [f"{radii[k]:.17g}"]
        rows.append(",".join(vals))
    path.write_text("\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_check(args) -> int:
    config = load_config(args.config)
    f = config.build_formula()
    print(f"formula: {config.formula}")
    print(_format_tree(f))
    print(f"horizon: {horizon(f):g} s")
    print(f"robustness lipschitz: {robustness_lipschitz(f):.6g}")
    print(f"dimension: {config.dimension}, t_f: {config.t_f:g} s")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    config = load_config(args.config)
    out = _out_dir(config, args)
    instance = config.instance()
    settings = config.solver_settings(seed=args.seed, workers=args.workers)

    result = solve_sop(instance, settings)

    tube_path = out / f"{config.name}_tube.json"
    result_path = out / f"{config.name}_result.json"
    save_tube(result.tube, tube_path)
    result.save(result_path)
    if args.emit_plot_data:
        _write_tube_profile(result.tube, out / f"{config.name}_tube_profile.csv")

    print(f"eta_star: {result.eta_star:.6g}")
    print(f"lipschitz: {result.lipschitz.combined:.6g}")
    print(f"epsilon: {result.epsilon:.6g}")
    print(f"margin eta*+L*eps: {result.margin:.6g}")
    print(f"certificate: {'ok' if result.certificate_ok else 'NOT certified'}")
    print(f"worst constraint: {result.worst_constraint}")
    print(f"synthesis time: {result.wall_time:.3f} s")
    print(f"wrote {tube_path} and {result_path}")
    return EXIT_OK if result.certificate_ok else EXIT_UNCERTIFIED


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    out = _out_dir(config, args)
    tube = load_tube(args.tube)
    if tube.dimension != config.dimension:
        raise ConfigError(
            f"tube dimension {tube.dimension} does not match config {config.dimension}")
    if abs(tube.t_f - config.t_f) > 1e-9:
        raise ConfigError(f"tube horizon {tube.t_f} does not match config {config.t_f}")

    formula = config.build_formula()
    barrier = Barrier(tube, gain=config.gain)
    dynamics = config.make_dynamics()
    x0 = config.pick_x0(tube, seed=args.seed)
    report = run_closed_loop(dynamics, barrier, x0, config.dt, formula,
                             weight=config.weight_matrix(),
                             input_bound=config.input_bound,
                             until_convention=config.until_convention)

    log_path = out / f"{config.name}_trajectory.csv"
    write_trajectory_log(log_path, report)
    summary = {
        "x0": [float(v) for v in x0],
        "steps": len(report.steps),
        "min_b": report.min_b,
        "tube_violations": report.tube_violations,
        "final_robustness": report.final_robustness,
        "satisfied": report.satisfied,
        "saturated_steps": report.saturated_steps,
    }
    report_path = out / f"{config.name}_report.json"
    report_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if args.emit_plot_data:
        _write_tube_profile(tube, out / f"{config.name}_tube_profile.csv")

    print(f"steps: {len(report.steps)}, min_b: {report.min_b:.6g}, "
          f"tube violations: {report.tube_violations}")
    print(f"final robustness: {report.final_robustness:.6g} "
          f"({'satisfied' if report.satisfied else 'NOT satisfied'})")
    print(f"wrote {log_path} and {report_path}")
    return EXIT_OK if report.satisfied else EXIT_UNCERTIFIED


def cmd_verify(args) -> int:
    config = load_config(args.config)
    signal = read_trajectory_signal(args.log)
    if signal.dimension != config.dimension:
        raise ConfigError(
            f"log dimension {signal.dimension} does not match config {config.dimension}")
    formula = config.build_formula()
    report = robustness(formula, signal, 0.0, until_convention=config.until_convention)
    print(f"robustness: {report.value:.9g}")
    print("verdict: satisfied" if report.satisfied else "verdict: NOT satisfied")
    return EXIT_OK if report.satisfied else EXIT_UNCERTIFIED


@dataclass
class BenchRecord:
    task: str
    synthesis_s: float
    simulate_s: float
    eta_star: float
    certified: bool
    robustness: float


def cmd_bench(args) -> int:
    records = []
    worst_exit = EXIT_OK
    for cfg_path in args.configs:
        config = load_config(cfg_path)
        out = _out_dir(config, args)

        t0 = time.perf_counter()
        instance = config.instance()
        settings = config.solver_settings(seed=args.seed, workers=args.workers)
        result = solve_sop(instance, settings)
        synth_s = time.perf_counter() - t0
        save_tube(result.tube, out / f"{config.name}_tube.json")
        result.save(out / f"{config.name}_result.json")

        t1 = time.perf_counter()
        barrier = Barrier(result.tube, gain=config.gain)
        report = run_closed_loop(config.make_dynamics(), barrier,
                                 config.pick_x0(result.tube, seed=args.seed),
                                 config.dt, config.build_formula(),
                                 weight=config.weight_matrix(),
                                 input_bound=config.input_bound,
                                 until_convention=config.until_convention)
        sim_s = time.perf_counter() - t1
        write_trajectory_log(out / f"{config.name}_trajectory.csv", report)
        if args.emit_plot_data:
            _write_tube_profile(result.tube, out / f"{config.name}_tube_profile.csv")

        records.append(BenchRecord(task=config.name, synthesis_s=synth_s,
                                   simulate_s=sim_s, eta_star=result.eta_star,
                                   certified=result.certificate_ok,
                                   robustness=report.final_robustness))
        last_out = out
        if not report.satisfied:
            worst_exit = EXIT_UNCERTIFIED

    header = "task | synthesis_s | simulate_s | eta_star | certified | robustness"
    lines = [header]
    for r in records:
        lines.append(f"{r.task} | {r.synthesis_s:.3f} | {r.simulate_s:.3f} | "
                     f"{r.eta_star:.6g} | {'yes' if r.certified else 'no'} | "
                     f"{r.robustness:.6g}")
    table = "\n".join(lines)
    print(table)
    (last_out / "bench.txt").write_text(table + "\n")
    return worst_exit


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tubecbf",
        description="Synthesize spatiotemporal-tube barrier controllers for STL tasks")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="scenario YAML")
        p.add_argument("--seed", type=int, default=None, help="override solver seed")
        p.add_argument("--workers", type=int, default=1, help="objective worker threads")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--emit-plot-data", action="store_true",
                       help="write tube cross-section CSV for external plotting")

    p_check = sub.add_parser("check", help="parse and report the task formula")
    common(p_check)
    p_check.set_defaults(func=cmd_check)

    p_syn = sub.add_parser("synthesize", help="solve for a certified tube")
    common(p_syn)
    p_syn.set_defaults(func=cmd_synthesize)

    p_sim = sub.add_parser("simulate", help="closed-loop run under the safety QP")
    common(p_sim)
    p_sim.add_argument("--tube", required=True, help="tube record JSON")
    p_sim.set_defaults(func=cmd_simulate)

    p_ver = sub.add_parser("verify", help="recompute robustness from a trajectory log")
    common(p_ver)
    p_ver.add_argument("--log", required=True, help="trajectory CSV")
    p_ver.set_defaults(func=cmd_verify)

    p_bench = sub.add_parser("bench", help="synthesize+simulate a batch of scenarios")
    p_bench.add_argument("configs", nargs="+", help="scenario YAML files")
    p_bench.add_argument("--seed", type=int, default=None)
    p_bench.add_argument("--workers", type=int, default=1)
    p_bench.add_argument("--out", default=None)
    p_bench.add_argument("--emit-plot-data", action="store_true")
    p_bench.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _INPUT_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (InfeasibleStepError, SimulationError) as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
