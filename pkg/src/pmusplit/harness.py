"""End-to-end runs, stream replay, parameter sweeps and their reports."""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .coherency import CggRegistry
from .grid import GridCase, load_case
from .pipeline import Pipeline, PipelineConfig, default_registry
from .sim import EventScript, PmuStream, Simulator, load_script, read_stream_csv


class SweepError(ValueError):
    pass


@dataclass(frozen=True)
class IslandSummary:
    machines: tuple[int, ...]
    wk_detect: float
    wk_max_after: float
    wk_final: float
    t_settle: float | None  # from here on W_K stays below the decay fraction of wk_detect
    spread_final_deg: float
    stable: bool


@dataclass(frozen=True)
class RunReport:
    scenario: str
    verdict: str
    t_detect: float | None = None
    path: str | None = None
    detector: str | None = None
    theta_max_branch: tuple[int, int] | None = None
    theta_max_deg: float | None = None
    vmin_bus: int | None = None
    vmin_pu: float | None = None
    t_decide: float | None = None
    t_split: float | None = None
    cgg: int | None = None
    group: tuple[int, ...] | None = None
    cutset: tuple[tuple[int, int], ...] | None = None
    islands: tuple[IslandSummary, ...] = ()
    undamped_alarms: tuple[tuple[float, int, int], ...] = ()
    kappa_max: tuple[int, ...] = ()
    kappa_at_detect: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


@dataclass
class RunResult:
    report: RunReport
    stream: PmuStream
    pipeline: Pipeline


# --- scenario files ----------------------------------------------------------------


def load_scenario(path) -> tuple[EventScript, dict]:
    """Event script plus optional per-machine overrides (``{"d": {"9": -1.0}}``)."""
    with Path(path).open() as fh:
        data = json.load(fh)
    overrides = {k: {int(i): float(v) for i, v in m.items()} for k, m in data.get("machine_overrides", {}).items()}
    return EventScript.from_dict(data), overrides


def scenario_case(case: GridCase, overrides: dict) -> GridCase:
    return case.with_machines(**overrides) if overrides else case


# --- report assembly ---------------------------------------------------------------


def _frame_index(stream: PmuStream, t: float) -> int:
    return int(np.argmin(np.abs(stream.t - t)))


def summarize(stream: PmuStream, pipe: Pipeline, scenario: str) -> RunReport:
    det = pipe.detection
    alarms = tuple(pipe.alarms)
    kappa = tuple(int(k) for k in pipe.counter.kappa)
    if det is None:
        return RunReport(scenario, "no-oos", undamped_alarms=alarms, kappa_max=kappa)

    n_det = _frame_index(stream, det.t)
    theta_branch = theta_val = vmin_bus = vmin = None
    if stream.theta is not None:
        th = np.abs(stream.theta[n_det])
        if np.any(np.isfinite(th)):
            k = int(np.nanargmax(th))
            theta_branch, theta_val = tuple(stream.branch_ends[k]), float(th[k])
    if stream.vbus is not None:
        vm = np.abs(stream.vbus[n_det])
        k = int(np.argmin(vm))
        vmin_bus, vmin = stream.bus_ids[k], float(vm[k])
    base = dict(t_detect=det.t, path=det.path, detector=det.detector, theta_max_branch=theta_branch,
                theta_max_deg=theta_val, vmin_bus=vmin_bus, vmin_pu=vmin, undamped_alarms=alarms,
                kappa_max=kappa, kappa_at_detect=pipe.kappa_at_detect)
    dec = pipe.decision
    if dec is None:
        return RunReport(scenario, "detected-no-match", **base)

    islands = _island_summaries(stream, pipe, n_det, dec.t_split)
    verdict = "detected-split-stable" if islands and all(s.stable for s in islands) else "detected-split-unstable"
    return RunReport(scenario, verdict, t_decide=dec.t_decide, t_split=dec.t_split, cgg=dec.scenario,
                     group=tuple(sorted(dec.cm)), cutset=tuple(tuple(c) for c in dec.cutset),
                     islands=tuple(islands), **base)


def _island_summaries(stream: PmuStream, pipe: Pipeline, n_det: int, t_split: float) -> list[IslandSummary]:
    n_split = int(np.searchsorted(stream.t, t_split - 1e-9))
    if n_split >= len(stream):
        return []
    labels = stream.island[-1]
    m = pipe.inertia
    late = {e.island for e in pipe.post_split_events}
    out = []
    for lab in sorted(set(int(v) for v in labels)):
        cols = np.flatnonzero(labels == lab)
        ids = tuple(stream.machine_ids[c] for c in cols)
        mi = m[cols]
        sub_d = np.unwrap(stream.delta[:, cols], axis=0)
        sub_w = stream.omega[:, cols]
        w_t = sub_w - (sub_w @ mi / mi.sum())[:, None]
        d_t = sub_d - (sub_d @ mi / mi.sum())[:, None]
        wk = np.mean(0.5 * mi * w_t**2, axis=1)
        wk_det = float(wk[n_det])
        after = wk[n_split:]
        # settled from the first frame after which W_K stays under the decay fraction
        above = np.flatnonzero(after >= pipe.cfg.wk_decay * wk_det)
        if not above.size:
            t_settle = float(stream.t[n_split])
        elif above[-1] + 1 < len(after):
            t_settle = float(stream.t[n_split + above[-1] + 1])
        else:
            t_settle = None
        spread = float(np.degrees(np.ptp(d_t[-1]))) if len(cols) > 1 else 0.0
        stable = lab not in late and spread < 180.0
        out.append(IslandSummary(ids, wk_det, float(after.max()), float(after[-1]), t_settle, spread, stable))
    return out


# --- entry points --------------------------------------------------------------------


def run(case: GridCase, script: EventScript, cfg: PipelineConfig | None = None,
        registry: CggRegistry | None = None) -> RunResult:
    cfg = cfg or PipelineConfig()
    registry = registry if registry is not None else default_registry(case)
    sim = Simulator(case, script)
    pipe = Pipeline(case, cfg, registry)
    stream = sim.run(lambda frame, s: pipe.feed(frame, sorted(s.outages)))
    return RunResult(summarize(stream, pipe, script.name), stream, pipe)


def replay(stream: PmuStream, case: GridCase, cfg: PipelineConfig | None = None,
           registry: CggRegistry | None = None, name: str = "replay") -> RunResult:
    """Detectors and group identification only; no actuation."""
    cfg = cfg or PipelineConfig()
    registry = registry if registry is not None else default_registry(case)
    inertia = _stream_inertia(case, stream)
    pipe = Pipeline(case, cfg, registry, stream.machine_ids, inertia, actuate=False)
    for frame in stream.frames():
        pipe.feed(frame)
    return RunResult(summarize(stream, pipe, name), stream, pipe)


def _stream_inertia(case: GridCase, stream: PmuStream) -> np.ndarray:
    by_id = {m.id: 2.0 * m.h for m in case.machines}
    try:
        return np.array([by_id[i] for i in stream.machine_ids])
    except KeyError as exc:
        raise ValueError(f"stream machine {exc} not in case") from None


def with_fault_cycles(script: EventScript, cycles: float, f0: float = 60.0) -> EventScript:
    """Move clearing actions to ``cycles`` after the first applied fault."""
    faults = [e for e in script.events if e.kind == "apply_fault"]
    if not faults:
        raise SweepError("template has no apply_fault event")
    t_clear = faults[0].t + cycles / f0
    events = []
    for e in script.events:
        if e.kind in ("clear_fault", "trip_branch") and e.t >= faults[0].t:
            e = type(e)(t_clear, e.kind, e.target, e.params)
        events.append(e)
    events.sort(key=lambda e: e.t)
    return script.replace(events=tuple(events), name=f"{script.name}_{cycles:g}c")


def grid_points(grid: dict) -> list[dict]:
    if not grid or any(not isinstance(v, list) or not v for v in grid.values()):
        raise SweepError("parameter grid must map names to nonempty lists")
    keys = sorted(grid)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


def sweep_point(case: GridCase, script: EventScript, cfg: PipelineConfig, point: dict,
                registry: CggRegistry | None = None) -> RunReport:
    cfg_kw = {k[len("config."):]: v for k, v in point.items() if k.startswith("config.")}
    s = script
    for k, v in point.items():
        if k == "fault_cycles":
            s = with_fault_cycles(s, float(v), case.f0_hz)
        elif k == "end_time_s":
            s = s.replace(end_time=float(v))
        elif not k.startswith("config."):
            raise SweepError(f"unknown sweep parameter {k!r}")
    if cfg_kw:
        cfg = cfg.replace(**cfg_kw)
    tag = ",".join(f"{k}={v}" for k, v in sorted(point.items()))
    rep = run(case, s.replace(name=f"{script.name}[{tag}]"), cfg, registry).report
    return rep


def sweep(case: GridCase, script: EventScript, grid: dict, cfg: PipelineConfig | None = None,
          registry: CggRegistry | None = None, jobs: int = 1) -> list[tuple[dict, RunReport]]:
    cfg = cfg or PipelineConfig()
    points = grid_points(grid)
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as ex:
            reports = list(ex.map(sweep_point, itertools.repeat(case), itertools.repeat(script),
                                  itertools.repeat(cfg), points, itertools.repeat(registry)))
    else:
        reports = [sweep_point(case, script, cfg, p, registry) for p in points]
    return list(zip(points, reports))


# --- output files ----------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_run_outputs(result: RunResult, out_dir, plots: bool = True) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(result.report.to_json())
    result.stream.to_csv(out / "stream.csv")
    pipe = result.pipeline
    with (out / "coi_events.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "island", "path", "i_max", "j_max", "delta_max_deg"])
        w.writerows([[_fmt(x) for x in row] for row in pipe.coi_log])
    with (out / "pp_events.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "kind", "group_or_machine", "kappa"])
        w.writerows([[_fmt(x) for x in row] for row in pipe.pp_log])
    with (out / "splits.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_detect", "t_split", "scenario", "group", "cutset"])
        d = pipe.decision
        if d is not None:
            w.writerow([repr(d.t_detect), repr(d.t_split), d.scenario, " ".join(map(str, sorted(d.cm))),
                        " ".join(f"{a}-{b}" for a, b in d.cutset)])
    with (out / "indices.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "wk", "gamma", "delta_max_deg"])
        for t, wk, g, dm in pipe.trace:
            w.writerow([repr(t), repr(wk), repr(g), repr(math.degrees(dm))])
    if plots:
        from .plots import write_run_plots

        write_run_plots(result, out)


def write_sweep_outputs(rows: Sequence[tuple[dict, RunReport]], out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    keys = sorted({k for p, _ in rows for k in p})
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys + ["verdict", "t_detect", "path", "cgg", "group", "theta_max_deg", "vmin_pu"])
        for p, r in rows:
            w.writerow([p.get(k, "") for k in keys] + [
                r.verdict, "" if r.t_detect is None else repr(r.t_detect), r.path or "",
                "" if r.cgg is None else r.cgg, " ".join(map(str, r.group or ())),
                "" if r.theta_max_deg is None else repr(r.theta_max_deg),
                "" if r.vmin_pu is None else repr(r.vmin_pu)])
    for k, (_, r) in enumerate(rows):
        (out / f"report_{k:03d}.json").write_text(r.to_json())


__all__ = [
    "IslandSummary", "RunReport", "RunResult", "SweepError", "grid_points", "load_case", "load_scenario",
    "load_script", "read_stream_csv", "replay", "run", "scenario_case", "summarize", "sweep",
    "with_fault_cycles", "write_run_outputs", "write_sweep_outputs",
]
