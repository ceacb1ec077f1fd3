"""Command-line front end: run, replay and sweep."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .coherency import load_registry
from .grid import CaseError, bundled_path, load_case
from .harness import (
    load_scenario,
    replay,
    run,
    scenario_case,
    sweep,
    write_run_outputs,
    write_sweep_outputs,
)
from .pipeline import PipelineConfig, load_pipeline_config
from .sim import read_stream_csv


def _config(path) -> PipelineConfig:
    return load_pipeline_config(path) if path else PipelineConfig()


def _registry(path, case):
    return load_registry(path or bundled_path("cgg39.json"), case)


def cmd_run(args) -> int:
    case = load_case(args.case)
    script, overrides = load_scenario(args.scenario)
    case = scenario_case(case, overrides)
    result = run(case, script, _config(args.config), _registry(args.registry, case))
    write_run_outputs(result, args.out, plots=not args.no_plots)
    print(f"{script.name}: {result.report.verdict}")
    return 0


def cmd_replay(args) -> int:
    stream = read_stream_csv(args.stream)
    case = load_case(args.case)
    result = replay(stream, case, _config(args.config), _registry(args.registry, case), Path(args.stream).stem)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(result.report.to_json())
    print(f"{Path(args.stream).name}: {result.report.verdict}")
    return 0


def cmd_sweep(args) -> int:
    case = load_case(args.case)
    script, overrides = load_scenario(args.template)
    case = scenario_case(case, overrides)
    with open(args.grid) as fh:
        grid = json.load(fh)
    rows = sweep(case, script, grid, _config(args.config), _registry(args.registry, case), args.jobs)
    write_sweep_outputs(rows, args.out)
    for point, rep in rows:
        print(json.dumps(point, sort_keys=True), rep.verdict)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pmusplit", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    default_case = str(bundled_path("ieee39.json"))

    p = sub.add_parser("run", help="simulate, detect, split and re-simulate one scenario")
    p.add_argument("--case", default=default_case)
    p.add_argument("--scenario", required=True)
    p.add_argument("--config")
    p.add_argument("--registry")
    p.add_argument("--out", required=True)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replay", help="run detectors on a recorded PMU stream (report only)")
    p.add_argument("--stream", required=True)
    p.add_argument("--case", default=default_case, help="supplies inertias and the network for cutsets")
    p.add_argument("--config")
    p.add_argument("--registry")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("sweep", help="one run per point of a parameter grid")
    p.add_argument("--case", default=default_case)
    p.add_argument("--template", required=True)
    p.add_argument("--grid", required=True, help="JSON object: parameter -> list of values")
    p.add_argument("--config")
    p.add_argument("--registry")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CaseError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
