"""Static network model: case ingestion, power flow, Ybus assembly and Kron reduction.

All electrical quantities are per-unit on the case base (100 MVA by default).
Angles are radians internally; the case file stores no angles.
"""
from __future__ import annotations

import json
from collections import defaultdict, deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable

import jsonschema
import numpy as np

BUS_TYPES = ("slack", "PV", "PQ")


class CaseError(ValueError):
    """Base class for invalid case data."""


class SchemaError(CaseError):
    pass


class DanglingReferenceError(CaseError):
    pass


class DisconnectedNetworkError(CaseError):
    pass


class UnknownBranchError(CaseError, KeyError):
    pass


class PowerFlowError(RuntimeError):
    pass


class SingularNetworkError(np.linalg.LinAlgError):
    pass


CASE_SCHEMA = {
    "type": "object",
    "required": ["base_mva", "f0_hz", "buses", "branches", "machines"],
    "properties": {
        "base_mva": {"type": "number", "exclusiveMinimum": 0},
        "f0_hz": {"type": "number", "exclusiveMinimum": 0},
        "buses": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "type"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "integer"},
                    "type": {"enum": list(BUS_TYPES)},
                    "p_load": {"type": "number"},
                    "q_load": {"type": "number"},
                    "g_shunt": {"type": "number"},
                    "b_shunt": {"type": "number"},
                    "v_set": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
        "branches": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from_bus", "to_bus", "x"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "integer"},
                    "from_bus": {"type": "integer"},
                    "to_bus": {"type": "integer"},
                    "r": {"type": "number"},
                    "x": {"type": "number"},
                    "b": {"type": "number"},
                    "tap": {"type": "number", "exclusiveMinimum": 0},
                    "status": {"enum": ["in", "out"]},
                },
            },
        },
        "machines": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["bus", "h", "xd_prime"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "integer"},
                    "bus": {"type": "integer"},
                    "h": {"type": "number"},
                    "xd_prime": {"type": "number"},
                    "d": {"type": "number"},
                    "p_sched": {"type": "number"},
                },
            },
        },
    },
}


@dataclass(frozen=True)
class Bus:
    id: int
    type: str
    p_load: float = 0.0
    q_load: float = 0.0
    g_shunt: float = 0.0
    b_shunt: float = 0.0
    v_set: float = 1.0


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0
    tap: float = 1.0
    status: str = "in"

    @property
    def ends(self) -> frozenset[int]:
        return frozenset((self.from_bus, self.to_bus))


@dataclass(frozen=True)
class Machine:
    id: int
    bus: int
    h: float
    xd_prime: float
    d: float = 0.0
    p_sched: float = 0.0


@dataclass(frozen=True)
class GridCase:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    machines: tuple[Machine, ...]
    base_mva: float = 100.0
    f0_hz: float = 60.0
    name: str = "case"
    _bus_pos: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_bus_pos", {b.id: k for k, b in enumerate(self.buses)})

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_machine(self) -> int:
        return len(self.machines)

    @property
    def omega0(self) -> float:
        return 2.0 * np.pi * self.f0_hz

    @property
    def inertia(self) -> np.ndarray:
        """M_i = 2 H_i in seconds (speeds are in p.u.)."""
        return np.array([2.0 * m.h for m in self.machines])

    @property
    def damping(self) -> np.ndarray:
        return np.array([m.d for m in self.machines])

    def bus_index(self, bus_id: int) -> int:
        return self._bus_pos[bus_id]

    def branch(self, ref) -> Branch:
        """Look up a branch by integer id or by an unordered ``(from, to)`` pair."""
        if isinstance(ref, (list, tuple)):
            ends = frozenset(int(v) for v in ref)
            hits = [br for br in self.branches if br.ends == ends]
            if len(hits) != 1:
                raise UnknownBranchError(f"no unique branch between buses {sorted(ends)}")
            return hits[0]
        for br in self.branches:
            if br.id == ref:
                return br
        raise UnknownBranchError(f"unknown branch id {ref!r}")

    def branch_ids(self, refs: Iterable) -> frozenset[int]:
        return frozenset(self.branch(r).id for r in refs)

    def in_service(self, outages: Iterable[int] = ()) -> list[Branch]:
        out = set(outages)
        return [br for br in self.branches if br.status == "in" and br.id not in out]

    def islands(self, outages: Iterable[int] = ()) -> list[frozenset[int]]:
        """Connected bus sets of the in-service graph, ordered by their smallest bus id."""
        adj = defaultdict(set)
        for br in self.in_service(outages):
            adj[br.from_bus].add(br.to_bus)
            adj[br.to_bus].add(br.from_bus)
        seen: set[int] = set()
        groups = []
        for b in sorted(self._bus_pos):
            if b in seen:
                continue
            comp = {b}
            queue = deque([b])
            while queue:
                u = queue.popleft()
                for v in adj[u]:
                    if v not in comp:
                        comp.add(v)
                        queue.append(v)
            seen |= comp
            groups.append(frozenset(comp))
        return groups

    def machine_islands(self, outages: Iterable[int] = ()) -> np.ndarray:
        """Island label per machine (0-based, ordered by first machine appearance)."""
        comp_of = {}
        for k, comp in enumerate(self.islands(outages)):
            for b in comp:
                comp_of[b] = k
        raw = [comp_of[m.bus] for m in self.machines]
        relabel: dict[int, int] = {}
        return np.array([relabel.setdefault(r, len(relabel)) for r in raw], dtype=int)

    def with_machines(self, **overrides) -> "GridCase":
        """Copy with per-machine field overrides, e.g. ``d={9: -2.0}``."""
        machines = []
        for m in self.machines:
            kw = {k: v[m.id] for k, v in overrides.items() if m.id in v}
            machines.append(Machine(**{**m.__dict__, **kw}))
        return GridCase(self.buses, self.branches, tuple(machines), self.base_mva, self.f0_hz, self.name)


def case_from_dict(data: dict) -> GridCase:
    try:
        jsonschema.validate(data, CASE_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"case schema violation at {where}: {exc.message}") from None

    buses = tuple(Bus(**b) for b in data["buses"])
    branches = tuple(
        Branch(**{"id": k + 1, **br}) for k, br in enumerate(data["branches"])
    )
    machines = tuple(Machine(**{"id": k + 1, **m}) for k, m in enumerate(data["machines"]))
    case = GridCase(buses, branches, machines, data["base_mva"], data["f0_hz"], data.get("name", "case"))
    validate_case(case)
    return case


def validate_case(case: GridCase) -> None:
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        raise SchemaError("duplicate bus id")
    if len({br.id for br in case.branches}) != len(case.branches):
        raise SchemaError("duplicate branch id")
    known = set(ids)
    for br in case.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                raise DanglingReferenceError(f"branch {br.id} references unknown bus {end}")
        if br.r == 0 and br.x == 0:
            raise SchemaError(f"branch {br.id} has zero impedance")
    for m in case.machines:
        if m.bus not in known:
            raise DanglingReferenceError(f"machine {m.id} references unknown bus {m.bus}")
        if m.h <= 0 or m.xd_prime <= 0:
            raise SchemaError(f"machine {m.id} needs H > 0 and X'd > 0")
    slack = [b.id for b in case.buses if b.type == "slack"]
    if len(slack) != 1:
        raise SchemaError(f"expected exactly one slack bus, found {len(slack)}")
    gen_buses = {m.bus for m in case.machines}
    for b in case.buses:
        if b.type in ("slack", "PV") and b.id not in gen_buses:
            raise SchemaError(f"{b.type} bus {b.id} has no machine")
    comps = case.islands()
    if len(comps) > 1:
        stray = sorted(min(c) for c in comps[1:])
        raise DisconnectedNetworkError(f"in-service network is disconnected; islands start at buses {stray}")


def load_case(path) -> GridCase:
    path = Path(path)
    with path.open() as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    return case_from_dict(data)


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("pmusplit") / "data" / name))


def load_ieee39() -> GridCase:
    return load_case(bundled_path("ieee39.json"))


# --- admittance ---------------------------------------------------------------


@dataclass(frozen=True)
class YbusMatrix:
    y: np.ndarray
    index: dict  # bus id -> row


def build_ybus(case: GridCase, outages: Iterable = ()) -> YbusMatrix:
    """Pi-model bus admittance matrix with the given branches removed.

    ``outages`` may hold branch ids or ``(from, to)`` pairs.
    """
    out = case.branch_ids(outages)
    n = case.n_bus
    y = np.zeros((n, n), dtype=complex)
    for br in case.in_service(out):
        f, t = case.bus_index(br.from_bus), case.bus_index(br.to_bus)
        ys = 1.0 / complex(br.r, br.x)
        half = 0.5j * br.b
        y[f, f] += (ys + half) / br.tap**2
        y[t, t] += ys + half
        y[f, t] -= ys / br.tap
        y[t, f] -= ys / br.tap
    for k, bus in enumerate(case.buses):
        y[k, k] += complex(bus.g_shunt, bus.b_shunt)
    return YbusMatrix(y, {b.id: k for k, b in enumerate(case.buses)})


# --- power flow ---------------------------------------------------------------


@dataclass(frozen=True)
class PowerFlowSolution:
    vm: np.ndarray
    va: np.ndarray  # rad
    p_gen: np.ndarray  # per machine
    q_gen: np.ndarray
    iterations: int
    mismatch: float

    @property
    def v(self) -> np.ndarray:
        return self.vm * np.exp(1j * self.va)


def run_power_flow(case: GridCase, tol: float = 1e-10, max_iter: int = 30) -> PowerFlowSolution:
    """Polar Newton-Raphson; the slack absorbs the imbalance, no reactive limits."""
    ybus = build_ybus(case).y
    n = case.n_bus
    types = np.array([b.type for b in case.buses])
    p_load = np.array([b.p_load for b in case.buses])
    q_load = np.array([b.q_load for b in case.buses])
    p_gen_bus = np.zeros(n)
    for m in case.machines:
        p_gen_bus[case.bus_index(m.bus)] += m.p_sched
    p_spec = p_gen_bus - p_load
    q_spec = -q_load

    pv = np.flatnonzero(types == "PV")
    pq = np.flatnonzero(types == "PQ")
    non_slack = np.flatnonzero(types != "slack")
    vm = np.ones(n)
    va = np.zeros(n)
    for k in np.concatenate([pv, np.flatnonzero(types == "slack")]):
        vm[k] = case.buses[k].v_set

    def mismatch():
        v = vm * np.exp(1j * va)
        s = v * np.conj(ybus @ v)
        return np.concatenate([s.real[non_slack] - p_spec[non_slack], s.imag[pq] - q_spec[pq]]), v

    for it in range(max_iter + 1):
        f, v = mismatch()
        worst = float(np.max(np.abs(f))) if f.size else 0.0
        if not np.isfinite(worst):
            break
        if worst < tol:
            s = v * np.conj(ybus @ v)
            s_gen_bus = s + p_load + 1j * q_load
            p_gen = np.empty(case.n_machine)
            q_gen = np.empty(case.n_machine)
            for i, m in enumerate(case.machines):
                k = case.bus_index(m.bus)
                same = [j for j, mm in enumerate(case.machines) if mm.bus == m.bus]
                share = 1.0 / len(same)
                p_gen[i] = m.p_sched if types[k] == "PV" else s_gen_bus.real[k] * share
                q_gen[i] = s_gen_bus.imag[k] * share
            return PowerFlowSolution(vm.copy(), va.copy(), p_gen, q_gen, it, worst)
        if it == max_iter:
            break
        # Jacobian from the complex derivative formulas
        ibus = ybus @ v
        diag_v = np.diag(v)
        diag_i = np.diag(ibus)
        diag_vn = np.diag(v / vm)
        ds_dva = 1j * diag_v @ np.conj(diag_i - ybus @ diag_v)
        ds_dvm = diag_v @ np.conj(ybus @ diag_vn) + np.conj(diag_i) @ diag_vn
        jac = np.block([
            [ds_dva.real[np.ix_(non_slack, non_slack)], ds_dvm.real[np.ix_(non_slack, pq)]],
            [ds_dva.imag[np.ix_(pq, non_slack)], ds_dvm.imag[np.ix_(pq, pq)]],
        ])
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            break
        va[non_slack] += dx[: len(non_slack)]
        vm[pq] += dx[len(non_slack):]
    raise PowerFlowError(f"power flow did not converge within {max_iter} iterations (case {case.name})")


# --- classical-model network ----------------------------------------------------


def load_admittance(case: GridCase, pf: PowerFlowSolution) -> np.ndarray:
    """Constant-impedance load equivalents at the pre-fault voltages."""
    s = np.array([complex(b.p_load, b.q_load) for b in case.buses])
    return np.conj(s) / pf.vm**2


def internal_emf(case: GridCase, pf: PowerFlowSolution) -> np.ndarray:
    """EMF behind transient reactance, E = V_t + j X'd I."""
    emf = np.empty(case.n_machine, dtype=complex)
    v = pf.v
    for i, m in enumerate(case.machines):
        vt = v[case.bus_index(m.bus)]
        current = np.conj(complex(pf.p_gen[i], pf.q_gen[i]) / vt)
        emf[i] = vt + 1j * m.xd_prime * current
    return emf


@dataclass(frozen=True)
class ReducedNetwork:
    """Admittance among machine internal nodes plus the bus-voltage recovery map.

    ``y`` is m x m; bus voltages follow from ``v_bus = recover @ emf``.
    """

    y: np.ndarray
    emf_mag: np.ndarray
    recover: np.ndarray
    outages: frozenset = frozenset()
    fault_bus: int | None = None


def augmented_bus_matrix(case: GridCase, ybus: YbusMatrix, y_load: np.ndarray,
                         shunts: dict | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Bus block with loads and X'd admittances folded in, and the bus-to-machine coupling."""
    y_bb = ybus.y.copy() + np.diag(y_load)
    y_bg = np.zeros((case.n_bus, case.n_machine), dtype=complex)
    for i, m in enumerate(case.machines):
        k = ybus.index[m.bus]
        yd = 1.0 / (1j * m.xd_prime)
        y_bb[k, k] += yd
        y_bg[k, i] = -yd
    for bus_id, y_sh in (shunts or {}).items():
        k = ybus.index[bus_id]
        y_bb[k, k] += y_sh
    return y_bb, y_bg


def kron_reduce(ybus: YbusMatrix, case: GridCase, pf: PowerFlowSolution,
                shunts: dict | None = None, outages: Iterable = ()) -> ReducedNetwork:
    """Eliminate every network bus, leaving machine internal nodes."""
    y_load = load_admittance(case, pf)
    y_bb, y_bg = augmented_bus_matrix(case, ybus, y_load, shunts)
    y_gg = np.diag([1.0 / (1j * m.xd_prime) for m in case.machines])
    try:
        recover = -np.linalg.solve(y_bb, y_bg)
    except np.linalg.LinAlgError as exc:
        raise SingularNetworkError(f"interior network block is singular: {exc}") from None
    if not np.all(np.isfinite(recover)) or np.linalg.cond(y_bb) > 1e14:
        raise SingularNetworkError("interior network block is singular (isolated bus group?)")
    y_red = y_gg + y_bg.T @ recover
    fault = next(iter(shunts)) if shunts else None
    return ReducedNetwork(y_red, np.abs(internal_emf(case, pf)), recover,
                          frozenset(case.branch_ids(outages)), fault)


def solve_network(ybus: YbusMatrix, case: GridCase, emfs: np.ndarray, y_load: np.ndarray,
                  shunts: dict | None = None) -> np.ndarray:
    """Bus voltage phasors for given internal EMFs by a direct full-network solve."""
    y_bb, y_bg = augmented_bus_matrix(case, ybus, y_load, shunts)
    try:
        return np.linalg.solve(y_bb, -y_bg @ np.asarray(emfs, dtype=complex))
    except np.linalg.LinAlgError as exc:
        raise SingularNetworkError(str(exc)) from None


def machine_currents(case: GridCase, emfs: np.ndarray, v_bus: np.ndarray, index: dict) -> np.ndarray:
    """Current out of each internal node through X'd."""
    vt = np.array([v_bus[index[m.bus]] for m in case.machines])
    xd = np.array([m.xd_prime for m in case.machines])
    return (np.asarray(emfs) - vt) / (1j * xd)


def electrical_power(y_red: np.ndarray, emfs: np.ndarray) -> np.ndarray:
    return np.real(emfs * np.conj(y_red @ emfs))


def branch_flows(case: GridCase, pf: PowerFlowSolution, outages: Iterable = ()) -> np.ndarray:
    """Active power leaving the from-bus of every branch (0 for out-of-service ones)."""
    out = case.branch_ids(outages)
    v = pf.v
    flows = np.zeros(len(case.branches))
    for k, br in enumerate(case.branches):
        if br.status != "in" or br.id in out:
            continue
        vf, vt = v[case.bus_index(br.from_bus)], v[case.bus_index(br.to_bus)]
        ys = 1.0 / complex(br.r, br.x)
        i_f = ((ys + 0.5j * br.b) / br.tap**2) * vf - ys / br.tap * vt
        flows[k] = (vf * np.conj(i_f)).real
    return flows
