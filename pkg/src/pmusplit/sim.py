"""Classical-model swing simulation with scripted topology events and PMU-rate sampling."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .grid import (
    GridCase,
    PowerFlowSolution,
    ReducedNetwork,
    build_ybus,
    electrical_power,
    internal_emf,
    kron_reduce,
    run_power_flow,
)

FAULT_ADMITTANCE = -1e6j
EVENT_KINDS = ("apply_fault", "clear_fault", "trip_branch", "split")


class SimulationError(RuntimeError):
    pass


class EquilibriumError(SimulationError):
    pass


class CutsetError(ValueError):
    """A cutset that does not separate the network as declared."""


@dataclass(frozen=True)
class Event:
    t: float
    kind: str
    target: object = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")


@dataclass(frozen=True)
class EventScript:
    events: tuple[Event, ...] = ()
    end_time: float = 10.0
    h_int: float = 1e-3
    t_s: float = 1.0 / 60.0
    name: str = "scenario"

    def __post_init__(self):
        times = [e.t for e in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("event times must be nondecreasing")
        if self.h_int <= 0 or self.t_s <= 0 or self.end_time < 0:
            raise ValueError("h_int, t_s must be positive and end_time nonnegative")

    @property
    def substeps(self) -> int:
        """Integration steps per PMU sample; h_int is snapped so that t_s is a multiple of it."""
        return max(1, round(self.t_s / self.h_int))

    @property
    def h(self) -> float:
        return self.t_s / self.substeps

    @property
    def n_frames(self) -> int:
        return int(math.floor(self.end_time / self.t_s + 1e-9)) + 1

    def replace(self, **kw) -> "EventScript":
        return EventScript(**{**self.__dict__, **kw})

    @classmethod
    def from_dict(cls, data: dict) -> "EventScript":
        events = tuple(
            Event(float(e["t"]), e["kind"], _freeze(e.get("target")), dict(e.get("params") or {}))
            for e in data.get("events", [])
        )
        return cls(
            events=events,
            end_time=float(data["end_time_s"]),
            h_int=float(data.get("h_int_s", 1e-3)),
            t_s=float(data.get("t_s", 1.0 / 60.0)),
            name=data.get("name", "scenario"),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "events": [
                {"t": e.t, "kind": e.kind, "target": _thaw(e.target), "params": e.params}
                for e in self.events
            ],
            "end_time_s": self.end_time,
            "h_int_s": self.h_int,
            "t_s": self.t_s,
        }


def _freeze(v):
    if isinstance(v, list):
        return tuple(_freeze(x) for x in v)
    return v


def _thaw(v):
    if isinstance(v, tuple):
        return [_thaw(x) for x in v]
    return v


def load_script(path) -> EventScript:
    with Path(path).open() as fh:
        return EventScript.from_dict(json.load(fh))


@dataclass
class SimState:
    t: float
    delta: np.ndarray  # rad
    omega: np.ndarray  # p.u. deviation
    island: np.ndarray

    def copy(self) -> "SimState":
        return SimState(self.t, self.delta.copy(), self.omega.copy(), self.island.copy())


@dataclass(frozen=True)
class Frame:
    n: int
    t: float
    delta: np.ndarray
    omega: np.ndarray
    island: np.ndarray
    vbus: np.ndarray | None = None
    theta: np.ndarray | None = None


@dataclass
class PmuStream:
    """Uniformly sampled generator angle/speed stream with network snapshots.

    Arrays are frame-major: ``delta[n, i]``. ``theta`` holds branch angle
    differences in degrees (NaN for out-of-service branches).
    """

    t: np.ndarray
    delta: np.ndarray
    omega: np.ndarray
    island: np.ndarray
    machine_ids: tuple[int, ...]
    vbus: np.ndarray | None = None
    theta: np.ndarray | None = None
    bus_ids: tuple[int, ...] = ()
    branch_ends: tuple[tuple[int, int], ...] = ()
    t_s: float = 1.0 / 60.0
    log: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def n_machine(self) -> int:
        return self.delta.shape[1]

    def frame(self, n: int) -> Frame:
        return Frame(
            n, float(self.t[n]), self.delta[n], self.omega[n], self.island[n],
            None if self.vbus is None else self.vbus[n],
            None if self.theta is None else self.theta[n],
        )

    def frames(self):
        for n in range(len(self)):
            yield self.frame(n)

    def island_segment(self, label: int, start: int = 0) -> "PmuStream":
        """Machines of one island from frame ``start`` on (labels taken at ``start``)."""
        cols = np.flatnonzero(self.island[start] == label)
        return PmuStream(
            self.t[start:], self.delta[start:, cols], self.omega[start:, cols], self.island[start:, cols],
            tuple(self.machine_ids[c] for c in cols), self.vbus[start:] if self.vbus is not None else None,
            self.theta[start:] if self.theta is not None else None, self.bus_ids, self.branch_ends, self.t_s,
        )

    # --- CSV --------------------------------------------------------------------

    def header(self) -> list[str]:
        cols = ["n", "t"]
        cols += [f"delta_{i}" for i in self.machine_ids]
        cols += [f"omega_{i}" for i in self.machine_ids]
        cols += [f"island_{i}" for i in self.machine_ids]
        if self.vbus is not None:
            cols += [f"vmag_{b}" for b in self.bus_ids]
        if self.theta is not None:
            cols += [f"theta_{f}_{t}" for f, t in self.branch_ends]
        return cols

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for k in range(len(self)):
                row = [k, repr(float(self.t[k]))]
                row += [repr(float(v)) for v in np.degrees(self.delta[k])]
                row += [repr(float(v)) for v in self.omega[k]]
                row += [int(v) for v in self.island[k]]
                if self.vbus is not None:
                    row += [repr(float(v)) for v in np.abs(self.vbus[k])]
                if self.theta is not None:
                    row += [repr(float(v)) for v in self.theta[k]]
                w.writerow(row)


class StreamSchemaError(ValueError):
    pass


def read_stream_csv(path) -> PmuStream:
    """Parse the CSV export. Angles come back in radians; vbus carries magnitudes only."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise StreamSchemaError(f"{path}: empty file") from None
        rows = list(reader)
    if header[:2] != ["n", "t"]:
        raise StreamSchemaError(f"{path}: header must start with n,t")
    ids = [int(h.split("_", 1)[1]) for h in header if h.startswith("delta_")]
    if not ids:
        raise StreamSchemaError(f"{path}: no delta_<id> columns")
    for prefix in ("omega_", "island_"):
        if [int(h.split("_", 1)[1]) for h in header if h.startswith(prefix)] != ids:
            raise StreamSchemaError(f"{path}: {prefix}<id> columns do not match delta columns")
    col = {h: k for k, h in enumerate(header)}
    bus_ids = [int(h[5:]) for h in header if h.startswith("vmag_")]
    ends = [tuple(int(x) for x in h[6:].split("_")) for h in header if h.startswith("theta_")]
    try:
        data = np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise StreamSchemaError(f"{path}: non-numeric value ({exc})") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise StreamSchemaError(f"{path}: ragged rows")
    core = [col["t"]] + [col[f"{p}{i}"] for p in ("delta_", "omega_", "island_") for i in ids]
    bad = ~np.all(np.isfinite(data[:, core]), axis=1)
    if bad.any():
        raise StreamSchemaError(f"{path}: non-finite value in data row {int(np.argmax(bad)) + 1}")
    t = data[:, col["t"]]
    dt = np.diff(t)
    if len(dt) and (np.any(dt <= 0) or np.ptp(dt) > 1e-6 * max(dt.mean(), 1e-12)):
        raise StreamSchemaError(f"{path}: non-uniform sampling")
    m = len(ids)
    delta = np.radians(data[:, [col[f"delta_{i}"] for i in ids]])
    omega = data[:, [col[f"omega_{i}"] for i in ids]]
    island = data[:, [col[f"island_{i}"] for i in ids]].astype(int)
    vbus = data[:, [col[f"vmag_{b}"] for b in bus_ids]] if bus_ids else None
    theta = data[:, [col["theta_%d_%d" % e] for e in ends]] if ends else None
    t_s = float(dt.mean()) if len(dt) else 1.0 / 60.0
    assert delta.shape[1] == m
    return PmuStream(t, delta, omega, island, tuple(ids), vbus, theta, tuple(bus_ids), tuple(ends), t_s)


# --- dynamics -------------------------------------------------------------------


def derivatives(delta, omega, emf_mag, y_red, p_mech, inertia, damping, omega0):
    emf = emf_mag * np.exp(1j * delta)
    p_e = electrical_power(y_red, emf)
    return omega0 * omega, (p_mech - p_e - damping * omega) / inertia


def step(state: SimState, reduced: ReducedNetwork, h_int: float, p_mech, inertia, damping,
         omega0: float) -> SimState:
    """One classical RK4 step of the swing equations."""
    args = (reduced.emf_mag, reduced.y, p_mech, inertia, damping, omega0)
    d, w = state.delta, state.omega
    k1d, k1w = derivatives(d, w, *args)
    k2d, k2w = derivatives(d + 0.5 * h_int * k1d, w + 0.5 * h_int * k1w, *args)
    k3d, k3w = derivatives(d + 0.5 * h_int * k2d, w + 0.5 * h_int * k2w, *args)
    k4d, k4w = derivatives(d + h_int * k3d, w + h_int * k3w, *args)
    return SimState(
        state.t + h_int,
        d + h_int / 6.0 * (k1d + 2 * k2d + 2 * k3d + k4d),
        w + h_int / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w),
        state.island,
    )


def init_from_power_flow(case: GridCase, pf: PowerFlowSolution, tol: float = 1e-8) -> SimState:
    emf = internal_emf(case, pf)
    state = SimState(0.0, np.angle(emf), np.zeros(case.n_machine), case.machine_islands())
    reduced = kron_reduce(build_ybus(case), case, pf)
    _, dw = derivatives(state.delta, state.omega, reduced.emf_mag, reduced.y, pf.p_gen,
                        case.inertia, case.damping, case.omega0)
    if np.max(np.abs(dw)) >= tol:
        raise EquilibriumError(f"initial state is not an equilibrium (max |dw/dt| = {np.max(np.abs(dw)):.3e})")
    return state


@dataclass
class SplitOutcome:
    islands: list[frozenset[int]]  # machine ids per island
    labels: np.ndarray
    stream: PmuStream | None = None

    def segments(self, start: int = 0) -> list[PmuStream]:
        if self.stream is None:
            return []
        return [self.stream.island_segment(k, start) for k in range(len(self.islands))]


def split_islands(case: GridCase, outages: Iterable, cutset: Iterable) -> SplitOutcome:
    """Machine islands after removing ``cutset`` on top of the current ``outages``.

    Raises CutsetError if removal does not increase the number of machine islands.
    """
    before = case.machine_islands(outages)
    cut = case.branch_ids(cutset)
    after = case.machine_islands(set(case.branch_ids(outages)) | cut)
    if after.max() <= before.max():
        raise CutsetError(f"cutset {sorted(cut)} does not separate any machine group")
    islands = [frozenset(case.machines[i].id for i in np.flatnonzero(after == k)) for k in range(after.max() + 1)]
    return SplitOutcome(islands, after)


class Simulator:
    """Event-driven integrator over a fixed case; topology and fault state are mutable."""

    def __init__(self, case: GridCase, script: EventScript, pf: PowerFlowSolution | None = None):
        self.case = case
        self.script = script
        self.pf = pf if pf is not None else run_power_flow(case)
        self.state = init_from_power_flow(case, self.pf)
        self.p_mech = self.pf.p_gen.copy()
        self.inertia = case.inertia
        self.damping = case.damping
        self.outages: set[int] = set()
        self.shunts: dict[int, complex] = {}
        self._cache: dict = {}
        self.log: list[tuple[float, str, object]] = []
        self.reduced = self._network()

    def _network(self) -> ReducedNetwork:
        key = (frozenset(self.outages), tuple(sorted(self.shunts.items())))
        if key not in self._cache:
            ybus = build_ybus(self.case, self.outages)
            self._cache[key] = kron_reduce(ybus, self.case, self.pf, self.shunts, self.outages)
        return self._cache[key]

    def apply(self, event: Event) -> None:
        if event.kind == "apply_fault":
            y = event.params.get("y", FAULT_ADMITTANCE)
            if isinstance(y, (list, tuple)):
                y = complex(*y)
            self.shunts[int(event.target)] = complex(y)
        elif event.kind == "clear_fault":
            if event.target is None:
                self.shunts.clear()
            else:
                self.shunts.pop(int(event.target), None)
        elif event.kind == "trip_branch":
            self.outages |= set(self.case.branch_ids([event.target]))
        elif event.kind == "split":
            self.apply_split(event.target)
            return
        self.reduced = self._network()
        self.state.island = self.case.machine_islands(self.outages)
        self.log.append((self.state.t, event.kind, event.target))

    def apply_split(self, cutset) -> SplitOutcome:
        outcome = split_islands(self.case, self.outages, cutset)
        self.outages |= set(self.case.branch_ids(cutset))
        self.reduced = self._network()
        self.state.island = outcome.labels.copy()
        self.log.append((self.state.t, "split", tuple(cutset)))
        return outcome

    def sample(self) -> tuple[np.ndarray, np.ndarray]:
        emf = self.reduced.emf_mag * np.exp(1j * self.state.delta)
        vbus = self.reduced.recover @ emf
        ang = np.angle(vbus)
        theta = np.full(len(self.case.branches), np.nan)
        for k, br in enumerate(self.case.branches):
            if br.status == "in" and br.id not in self.outages:
                f, t = self.case.bus_index(br.from_bus), self.case.bus_index(br.to_bus)
                theta[k] = math.remainder(ang[f] - ang[t], 2 * math.pi)
        return vbus, np.degrees(theta)

    def run(self, controller: Callable[[Frame, "Simulator"], Sequence | None] | None = None) -> PmuStream:
        """Integrate to the end time.

        ``controller`` is called with every sampled frame and may return a list of
        ``(t_apply, Event)`` pairs that are merged into the pending event queue.
        """
        script = self.script
        h = script.h
        sub = script.substeps
        n_frames = script.n_frames
        m, nb, nbr = self.case.n_machine, self.case.n_bus, len(self.case.branches)
        t_out = np.arange(n_frames) * script.t_s
        delta = np.empty((n_frames, m))
        omega = np.empty((n_frames, m))
        island = np.empty((n_frames, m), dtype=int)
        vbus = np.empty((n_frames, nb), dtype=complex)
        theta = np.empty((n_frames, nbr))
        pending = sorted(((round(e.t / h), k, e) for k, e in enumerate(script.events)), key=lambda x: (x[0], x[1]))
        seq = len(pending)
        step_no = 0

        def fire_due():
            while pending and pending[0][0] <= step_no:
                self.apply(pending.pop(0)[2])

        for n in range(n_frames):
            fire_due()
            if not (np.all(np.isfinite(self.state.delta)) and np.all(np.isfinite(self.state.omega))):
                raise SimulationError(f"non-finite state; last valid time {t_out[max(n - 1, 0)]:.4f} s")
            delta[n] = self.state.delta
            omega[n] = self.state.omega
            island[n] = self.state.island
            vbus[n], theta[n] = self.sample()
            if controller is not None:
                frame = Frame(n, float(t_out[n]), delta[n], omega[n], island[n], vbus[n], theta[n])
                for t_apply, ev in controller(frame, self) or ():
                    pending.append((max(round(t_apply / h), step_no), seq, ev))
                    seq += 1
                pending.sort(key=lambda x: (x[0], x[1]))
                fire_due()
            if n == n_frames - 1:
                break
            for _ in range(sub):
                fire_due()
                self.state = step(self.state, self.reduced, h, self.p_mech, self.inertia,
                                  self.damping, self.case.omega0)
                step_no += 1
                self.state.t = step_no * h
        return PmuStream(
            t_out, delta, omega, island, tuple(mm.id for mm in self.case.machines), vbus, theta,
            tuple(b.id for b in self.case.buses),
            tuple((br.from_bus, br.to_bus) for br in self.case.branches), script.t_s, list(self.log),
        )


def run_scenario(case: GridCase, script: EventScript, controller=None) -> PmuStream:
    return Simulator(case, script).run(controller)


def apply_split(case: GridCase, stream_outages: Iterable, cutset: Iterable) -> SplitOutcome:
    """Islands formed by opening ``cutset`` given the branches already out of service."""
    return split_islands(case, stream_outages, cutset)


def fault_script(bus: int, line, cycles: float, *, t_fault: float = 0.1, end_time: float = 5.0,
                 f0: float = 60.0, name: str | None = None, h_int: float = 1e-3,
                 t_s: float = 1.0 / 60.0) -> EventScript:
    """Bolted fault at ``bus`` cleared after ``cycles`` by tripping ``line``."""
    t_clear = t_fault + cycles / f0
    events = (
        Event(t_fault, "apply_fault", bus),
        Event(t_clear, "clear_fault", bus),
        Event(t_clear, "trip_branch", tuple(line)),
    )
    return EventScript(events, end_time, h_int, t_s, name or f"flt{bus}_{cycles}c")
