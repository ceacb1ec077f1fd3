"""Run every bundled scenario end to end and write its outputs under one directory."""
import argparse
import time
from pathlib import Path

from pmusplit.grid import bundled_path, load_ieee39
from pmusplit.harness import load_scenario, run, scenario_case, write_run_outputs

SCENARIOS = ("flt1617", "flt2122", "trip2829")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/scenarios")
    ap.add_argument("--no-plots", action="store_true")
    args = ap.parse_args()
    case39 = load_ieee39()
    for name in SCENARIOS:
        script, overrides = load_scenario(bundled_path(f"{name}.json"))
        t0 = time.perf_counter()
        result = run(scenario_case(case39, overrides), script)
        write_run_outputs(result, Path(args.out) / name, plots=not args.no_plots)
        rep = result.report
        print(f"{name:9s} {rep.verdict:24s} t_detect={rep.t_detect} path={rep.path} group={rep.group} "
              f"cutset={rep.cutset} ({time.perf_counter() - t0:.1f} s)")


if __name__ == "__main__":
    main()
