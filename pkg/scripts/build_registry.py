"""Build the bundled CGG registry for the 39-bus case.

Three cutsets are fixed by hand (the splits exercised by the bundled scenarios);
the rest come from a minimum cut on the branch graph weighted by the absolute
pre-fault active power flow.
"""
import argparse
import json

import networkx as nx

from pmusplit.coherency import CggRegistry
from pmusplit.grid import branch_flows, bundled_path, load_ieee39, run_power_flow

GROUPS = [
    (1, {1, 8}), (2, {2, 3}), (3, {4, 5}), (4, {6, 7}), (5, {1, 8, 9}), (6, {4, 5, 6, 7}),
    (7, {8, 9}), (8, {1, 8, 9, 10}), (9, {2, 3, 10}), (10, {4, 5, 6, 7, 9}), (11, {1, 8, 10}),
    (12, {9}),
]
FIXED = {
    6: [(14, 15), (16, 17)],
    4: [(16, 24), (21, 22)],
    12: [(25, 26), (17, 27)],
}
# keeps equal-flow ties from preferring many near-idle branches
BRANCH_PENALTY = 1e-3


def min_flow_cut(case, flows, group):
    g = nx.DiGraph()
    for br, p in zip(case.branches, flows):
        cap = abs(p) + BRANCH_PENALTY
        for a, b in ((br.from_bus, br.to_bus), (br.to_bus, br.from_bus)):
            if g.has_edge(a, b):
                g[a][b]["capacity"] += cap
            else:
                g.add_edge(a, b, capacity=cap)
    for m in case.machines:
        end = "S" if m.id in group else "T"
        if end == "S":
            g.add_edge("S", m.bus)
        else:
            g.add_edge(m.bus, "T")
    _, (side, _) = nx.minimum_cut(g, "S", "T")
    cut = []
    for br in case.branches:
        if (br.from_bus in side) != (br.to_bus in side):
            cut.append((br.from_bus, br.to_bus))
    return sorted(cut)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(bundled_path("cgg39.json")))
    args = ap.parse_args()
    case = load_ieee39()
    flows = branch_flows(case, run_power_flow(case))
    data = []
    for sc, grp in GROUPS:
        cut = FIXED.get(sc) or min_flow_cut(case, flows, grp)
        data.append({"scenario": sc, "group": sorted(grp), "cutset": [list(c) for c in cut]})
        print(sc, sorted(grp), cut)
    CggRegistry.from_list(data).validate(case)
    with open(args.out, "w") as fh:
        json.dump(data, fh, indent=1)
        fh.write("\n")


if __name__ == "__main__":
    main()
