"""Fault-duration sweep on the 16-17 fault: brackets the critical clearing time."""
import argparse

from pmusplit.grid import bundled_path, load_ieee39
from pmusplit.harness import load_scenario, sweep, write_sweep_outputs


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cycles", type=int, nargs="+", default=list(range(1, 13)))
    ap.add_argument("--jobs", type=int, default=4)
    ap.add_argument("--out", default="out/cct_sweep")
    args = ap.parse_args()
    script, _ = load_scenario(bundled_path("flt1617.json"))
    rows = sweep(load_ieee39(), script, {"fault_cycles": args.cycles}, jobs=args.jobs)
    write_sweep_outputs(rows, args.out)
    last_stable = None
    for point, rep in rows:
        print(f"{point['fault_cycles']:3d} cycles  {rep.verdict:24s} t_detect={rep.t_detect}")
        if rep.verdict == "no-oos":
            last_stable = point["fault_cycles"]
    if last_stable is not None:
        print(f"CCT between {last_stable} and {last_stable + 1} cycles")


if __name__ == "__main__":
    main()
