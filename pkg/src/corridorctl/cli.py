"""Command-line interface: calibrate-tsc, train-offline, train-online,
evaluate, and report."""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

from . import __version__
from .calibration import CalibrationSettings, calibrate_tsc
from .experiments import (STRATEGY_ORDER, EvaluationResult, ExperimentPlan,
                          evaluate, scenario_label)
from .network import (NetworkParams, ScenarioConfig, ScenarioError,
                      load_scenario)
from .qlearn import load_table_file, save_table_file
from .reporting import (calibration_figure, density_profile_figure,
                        training_curve_figure, write_csv,
                        write_density_profile_csv, write_metrics_csv,
                        write_summary_table_csv, write_trace_csv)
from .training import (OfflineSettings, OnlineSettings, train_offline,
                       train_online)

TABLE_FILES = {
    "coordinated": "qtable_coordinated.json",
    "sub_vsl": "qtable_sub_vsl.json",
    "sub_rm": "qtable_sub_rm.json",
    "sub_lc": "qtable_sub_lc.json",
}


def _load_scenario_arg(path) -> ScenarioConfig:
    if path is None:
        return ScenarioConfig()
    return load_scenario(Path(path).read_text())


def _write_metadata(out_dir: Path, verb: str, payload: dict) -> None:
    payload = {"tool": "corridorctl", "version": __version__, "verb": verb,
               **payload}
    (out_dir / "run_metadata.json").write_text(json.dumps(payload, indent=2))


def _save_tables(tables: dict, out_dir: Path) -> list:
    written = []
    for name, table in tables.items():
        filename = TABLE_FILES.get(name, f"qtable_{name}.json")
        save_table_file(table, out_dir / filename)
        written.append(filename)
    return written


def _load_artifacts(tables_dir) -> dict:
    artifacts = {}
    if tables_dir is None:
        return artifacts
    for name, filename in TABLE_FILES.items():
        path = Path(tables_dir) / filename
        if path.exists():
            artifacts[name] = load_table_file(path)
    return artifacts


def cmd_calibrate_tsc(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenario = _load_scenario_arg(args.scenario)
    settings = CalibrationSettings(iterations=args.iterations)
    started = time.time()
    result = calibrate_tsc(settings, scenario.network, seed=args.seed)
    elapsed = time.time() - started
    rows = [{
        "demand_veh_h": s.demand_veh_h, "cycle_s": s.cycle_s,
        "iteration": s.iteration, "travel_time_s": s.travel_time_s,
        "fuel": s.fuel, "emission": s.emission,
        "performance_index": s.performance,
        "flow_ratio_sum": s.flow_ratio_sum,
    } for s in result.samples]
    write_csv(rows, out_dir / "calibration_samples.csv")
    write_csv([{"alpha1": result.alpha1, "alpha2": result.alpha2,
                "r_squared": result.r_squared,
                "lost_time_s": result.model.lost_time_s}],
              out_dir / "calibration_fit.csv")
    calibration_figure(result.samples, result.alpha1, result.alpha2,
                       result.r_squared, result.model.lost_time_s,
                       out_dir / "figures" / "calibration_fit.png")
    _write_metadata(out_dir, "calibrate-tsc",
                    {"seed": args.seed, "iterations": args.iterations,
                     "elapsed_s": elapsed})
    print(f"calibrate-tsc: alpha1={result.alpha1:.2f} "
          f"alpha2={result.alpha2:.2f} R^2={result.r_squared:.3f} "
          f"({len(result.samples)} samples, {elapsed:.1f} s)")
    return 0


def cmd_train_offline(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenario = _load_scenario_arg(args.scenario)
    settings = OfflineSettings(max_episodes=args.max_episodes)
    started = time.time()
    result = train_offline(args.strategy, scenario.network, seed=args.seed,
                           settings=settings)
    elapsed = time.time() - started
    written = _save_tables(result.tables, out_dir)
    write_csv(result.log_rows, out_dir / f"offline_log_{args.strategy}.csv")
    training_curve_figure(result.log_rows,
                          out_dir / "figures" / f"offline_{args.strategy}.png")
    _write_metadata(out_dir, "train-offline", {
        "seed": args.seed, "strategy": args.strategy,
        "episodes": result.episodes, "converged": result.converged,
        "stopped_reason": result.stopped_reason, "tables": written,
        "elapsed_s": elapsed})
    status = "converged" if result.converged else "NOT converged (cap reached)"
    print(f"train-offline[{args.strategy}]: {status} after "
          f"{result.episodes} episodes ({elapsed:.1f} s)")
    return 0


def cmd_train_online(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenario = _load_scenario_arg(args.scenario)
    artifacts = _load_artifacts(args.tables)
    from .experiments import make_strategy
    name = "ql_coordinated" if args.strategy == "coordinated" \
        else "ql_uncoordinated"
    strategy = make_strategy(name, artifacts)
    strategy.mode = "train"
    settings = OnlineSettings(max_iterations=args.max_iterations)
    started = time.time()
    result = train_online(strategy, scenario.network, seed=args.seed,
                          settings=settings)
    elapsed = time.time() - started
    written = _save_tables(result.tables, out_dir)
    write_csv(result.log_rows, out_dir / f"online_log_{args.strategy}.csv")
    training_curve_figure(result.log_rows,
                          out_dir / "figures" / f"online_{args.strategy}.png",
                          x_key="iteration")
    _write_metadata(out_dir, "train-online", {
        "seed": args.seed, "strategy": args.strategy,
        "iterations": result.episodes, "stopped": result.converged,
        "stopped_reason": result.stopped_reason, "tables": written,
        "elapsed_s": elapsed})
    print(f"train-online[{args.strategy}]: {result.stopped_reason} after "
          f"{result.episodes} iterations ({elapsed:.1f} s)")
    return 0


def cmd_evaluate(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenario = _load_scenario_arg(args.scenario)
    artifacts = _load_artifacts(args.tables)
    plan = ExperimentPlan(strategies=tuple(args.strategies),
                          replications=args.replications,
                          seed_base=args.seed)
    started = time.time()
    result = evaluate(plan, scenario.network, artifacts)
    elapsed = time.time() - started
    write_metrics_csv(result.rows, out_dir / "metrics.csv")
    write_summary_table_csv(result.rows, out_dir / "metrics_table.csv")
    traces_dir = out_dir / "traces"
    for (label, name), run in result.traces.items():
        write_trace_csv(run, traces_dir / f"trace_{label}_{name}.csv")
    _write_metadata(out_dir, "evaluate", {
        "seed_base": args.seed, "replications": args.replications,
        "strategies": list(args.strategies),
        "seeds": {f"{label}/{name}": seeds
                  for (label, name), seeds in result.seeds.items()},
        "elapsed_s": elapsed})
    print(f"evaluate: {len(result.rows)} strategy/scenario cells, "
          f"{args.replications} replications each ({elapsed:.1f} s)")
    return 0


def cmd_report(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenario = _load_scenario_arg(args.scenario)
    artifacts = _load_artifacts(args.tables)
    plan = ExperimentPlan(strategies=tuple(args.strategies),
                          replications=args.replications,
                          seed_base=args.seed)
    result = evaluate(plan, scenario.network, artifacts)
    write_metrics_csv(result.rows, out_dir / "metrics.csv")
    write_summary_table_csv(result.rows, out_dir / "metrics_table.csv")
    figures_dir = out_dir / "figures"
    profiles_dir = out_dir / "density_profiles"
    section = plan.incident_section
    for level in plan.demand_levels:
        for incident in plan.incidents:
            label = scenario_label(level, incident)
            cell = {name: run for (lab, name), run in result.traces.items()
                    if lab == label}
            if not cell:
                continue
            density_profile_figure(
                cell, section, f"{label} (section {section})",
                figures_dir / f"density_{label}_section{section}.png")
            for name, run in cell.items():
                write_density_profile_csv(
                    run, section,
                    profiles_dir / f"density_{label}_{name}.csv")
    _write_metadata(out_dir, "report", {
        "seed_base": args.seed, "replications": args.replications,
        "strategies": list(args.strategies)})
    print(f"report: figures in {figures_dir}, profiles in {profiles_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corridorctl",
        description="Freeway-arterial corridor simulation and control "
                    "experiments")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, default_seed=0):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--scenario", help="scenario YAML file (defaults apply)")
        p.add_argument("--seed", type=int, default=default_seed)

    p = sub.add_parser("calibrate-tsc",
                       help="sweep the isolated intersection and fit the "
                            "cycle model")
    common(p)
    p.add_argument("--iterations", type=int, default=2)
    p.set_defaults(func=cmd_calibrate_tsc)

    p = sub.add_parser("train-offline",
                       help="train agents on the single-section network")
    common(p)
    p.add_argument("--strategy", choices=("coordinated", "uncoordinated"),
                   default="coordinated")
    p.add_argument("--max-episodes", type=int,
                   default=OfflineSettings.max_episodes)
    p.set_defaults(func=cmd_train_offline)

    p = sub.add_parser("train-online",
                       help="refine trained agents on the corridor")
    common(p)
    p.add_argument("--tables", required=True,
                   help="directory with offline-trained tables")
    p.add_argument("--strategy", choices=("coordinated", "uncoordinated"),
                   default="coordinated")
    p.add_argument("--max-iterations", type=int,
                   default=OnlineSettings.max_iterations)
    p.set_defaults(func=cmd_train_online)

    p = sub.add_parser("evaluate",
                       help="run the strategy/scenario evaluation matrix")
    common(p, default_seed=ExperimentPlan.seed_base)
    p.add_argument("--tables", help="directory with trained tables")
    p.add_argument("--strategies", nargs="+", default=list(STRATEGY_ORDER),
                   choices=list(STRATEGY_ORDER))
    p.add_argument("--replications", type=int, default=10)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report",
                       help="evaluate and render density-profile figures")
    common(p, default_seed=ExperimentPlan.seed_base)
    p.add_argument("--tables", help="directory with trained tables")
    p.add_argument("--strategies", nargs="+", default=list(STRATEGY_ORDER),
                   choices=list(STRATEGY_ORDER))
    p.add_argument("--replications", type=int, default=10)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, ValueError, FileNotFoundError) as exc:
        print(f"corridorctl {args.verb}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
