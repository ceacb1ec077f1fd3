"""Frame-by-frame protection pipeline: detection, group identification, split decision."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .coherency import (
    AnglePrediction,
    CggRegistry,
    CriticalBipartition,
    InsufficientSamplesError,
    algorithm1,
    load_registry,
    taylor_predict,
)
from .coi import AngleUnwrapper, CoiDetector, ConfigError, DetectorConfig, OosEvent, coi_transform
from .grid import GridCase, bundled_path
from .portrait import PeakCounter, PortraitDetector, PpConfig
from .sim import Event, Frame

VERDICTS = ("no-oos", "detected-split-stable", "detected-split-unstable", "detected-no-match")


@dataclass(frozen=True)
class PipelineConfig:
    coi: DetectorConfig = field(default_factory=DetectorConfig)
    pp: PpConfig = field(default_factory=PpConfig)
    horizon: float = 0.1  # s
    fit_window: int = 12
    give_up: float = 0.5  # s after detection without a registry match
    split_delay: int = 1  # frames between decision and actuation
    onset_omega: float = 1e-3  # p.u., freezes the angle baseline
    wk_decay: float = 0.1  # post-split W_K fraction counted as settled

    def __post_init__(self):
        if not self.pp.delta_arm_coi < self.coi.delta_arm:
            raise ConfigError("delta_arm_coi must be below delta_arm")
        if self.pp.n_window != self.coi.n_window:
            raise ConfigError("portrait and COI windows must have the same length")
        if self.split_delay < 0 or self.give_up <= 0 or self.horizon <= 0:
            raise ConfigError("split_delay >= 0, give_up > 0 and horizon > 0 required")

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        data = dict(data)
        coi = DetectorConfig.from_dict(data.pop("coi", {}))
        pp = PpConfig.from_dict(data.pop("pp", {}))
        known = {f.name for f in fields(cls)} - {"coi", "pp"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown pipeline keys: {sorted(unknown)}")
        return cls(coi=coi, pp=pp, **data)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("coi", "pp")}
        return {"coi": self.coi.to_dict(), "pp": self.pp.to_dict(), **d}

    def replace(self, **kw) -> "PipelineConfig":
        """Copy with overrides; dotted keys reach into the sub-configs (``coi.alpha_w``)."""
        top = {k: v for k, v in kw.items() if "." not in k}
        d = self.to_dict()
        for key, val in kw.items():
            if "." in key:
                sub, name = key.split(".", 1)
                d[sub][name] = val
        d.update(top)
        return PipelineConfig.from_dict(d)


def load_pipeline_config(path) -> PipelineConfig:
    with Path(path).open() as fh:
        return PipelineConfig.from_dict(json.load(fh))


def default_registry(case: GridCase | None = None) -> CggRegistry:
    return load_registry(bundled_path("cgg39.json"), case)


@dataclass(frozen=True)
class SplitDecision:
    t_detect: float
    t_decide: float
    t_split: float
    scenario: int
    cm: frozenset
    nm: frozenset
    cutset: tuple
    bipartition: CriticalBipartition
    prediction: AnglePrediction


@dataclass
class _Island:
    label: int
    ids: tuple
    cols: np.ndarray
    coi: CoiDetector
    pp: PortraitDetector


class Pipeline:
    """Stateful per-frame processor. ``feed`` returns events to actuate (live runs only)."""

    def __init__(self, case: GridCase, cfg: PipelineConfig, registry: CggRegistry | None = None,
                 machine_ids: Sequence[int] | None = None, inertia=None, actuate: bool = True):
        self.case = case
        self.cfg = cfg
        self.registry = registry if registry is not None else CggRegistry()
        self.machine_ids = tuple(machine_ids) if machine_ids is not None else tuple(m.id for m in case.machines)
        self.inertia = np.asarray(inertia if inertia is not None else case.inertia, dtype=float)
        self.actuate = actuate
        self.unwrap = AngleUnwrapper()
        self._labels: tuple | None = None
        self.islands: list[_Island] = []
        self.counter = PeakCounter(len(self.machine_ids), cfg.pp.peak_growth, cfg.pp.kappa_hat,
                                   cfg.pp.omega_neglect)
        self.baseline: np.ndarray | None = None
        self.history: deque = deque(maxlen=max(cfg.fit_window, 2))
        self.detection: OosEvent | None = None
        self.detection_frame: Frame | None = None
        self.kappa_at_detect: tuple[int, ...] = ()
        self.decision: SplitDecision | None = None
        self.gave_up_at: float | None = None
        self.post_split_events: list[OosEvent] = []
        self.coi_log: list[tuple] = []
        self.pp_log: list[tuple] = []
        self.alarms: list[tuple[float, int, int]] = []
        self.trace: list[tuple] = []
        self.split_seen_at: float | None = None
        self.attempts = 0

    # --- island bookkeeping ---------------------------------------------------------

    def _rebuild(self, labels: np.ndarray) -> None:
        groups = self.registry.groups()
        self.islands = []
        for lab in sorted(set(int(v) for v in labels)):
            cols = np.flatnonzero(labels == lab)
            ids = tuple(self.machine_ids[c] for c in cols)
            m = self.inertia[cols]
            local_groups = [g for g in groups if g < set(ids)]
            self.islands.append(_Island(
                lab, ids, cols,
                CoiDetector(self.cfg.coi, ids, m, lab),
                PortraitDetector(self.cfg.pp, ids, m, local_groups, lab),
            ))

    # --- per frame --------------------------------------------------------------------

    def feed(self, frame: Frame, outages: Sequence[int] = ()) -> list[tuple[float, Event]]:
        t = frame.t
        delta = self.unwrap(frame.delta)
        omega = np.asarray(frame.omega, dtype=float)
        labels = np.asarray(frame.island, dtype=int)
        key = tuple(labels.tolist())
        if key != self._labels:
            if self._labels is not None and len(set(key)) > len(set(self._labels)) and self.decision is not None:
                self.split_seen_at = t
            self._labels = key
            self._rebuild(labels)

        d_t, w_t = coi_transform(delta, omega, self.inertia, labels)
        wk_i = 0.5 * self.inertia * w_t**2
        for i in self.counter.update(wk_i, w_t):
            self.alarms.append((t, self.machine_ids[i], int(self.counter.kappa[i])))
            self.pp_log.append((t, "undamped-alarm", str(self.machine_ids[i]), int(self.counter.kappa[i])))

        if self.baseline is None and np.max(np.abs(w_t)) > self.cfg.onset_omega:
            self.baseline = d_t.copy()
        self.history.append(np.degrees(d_t - (self.baseline if self.baseline is not None else d_t * 0)))

        fired = []
        for isl in self.islands:
            if len(isl.ids) < 2:
                continue
            ev = isl.coi.update(t, delta[isl.cols], omega[isl.cols])
            status = isl.coi.status
            if ev is not None:
                self.coi_log.append((t, isl.label, ev.path, ev.i_max, ev.j_max, ev.delta_max_deg))
            pev = isl.pp.update(t, delta[isl.cols], omega[isl.cols], status)
            if pev is not None:
                self.pp_log.append((t, "pp-oos", "+".join(str(i) for i in sorted(pev.group)), 0))
            for e in (ev, pev):
                if e is not None:
                    fired.append(e)

        wk_total = float(np.mean(wk_i))
        self.trace.append((t, wk_total, float(np.mean(d_t * w_t)),
                           max((isl.coi.latest.delta_max for isl in self.islands if len(isl.ids) > 1), default=0.0)))

        actions: list[tuple[float, Event]] = []
        if self.detection is None:
            if fired:
                self.detection = fired[0]
                self.detection_frame = frame
                self.kappa_at_detect = tuple(int(k) for k in self.counter.kappa)
        elif self.decision is not None and t > self.decision.t_split:
            self.post_split_events.extend(fired)

        if self.detection is not None and self.decision is None and self.gave_up_at is None:
            if t - self.detection.t > self.cfg.give_up + 1e-9:
                self.gave_up_at = t
            else:
                actions = self._try_split(frame, labels, outages)
        return actions

    def _try_split(self, frame: Frame, labels: np.ndarray, outages) -> list[tuple[float, Event]]:
        from .coherency import match_and_split

        self.attempts += 1
        island = self.detection.island
        cols = np.flatnonzero(labels == island)
        if len(self.history) < self.cfg.fit_window or len(cols) < 2:
            return []
        hist = np.array(self.history)[:, cols]
        try:
            pred = taylor_predict(hist, self.cfg.coi.t_s, self.cfg.horizon, self.cfg.fit_window,
                                  None if self.baseline is None else np.degrees(self.baseline[cols]))
        except InsufficientSamplesError:
            return []
        ids = [self.machine_ids[c] for c in cols]
        bip = algorithm1(pred, self.registry, ids)
        if bip is None:
            return []
        cmd = match_and_split(bip, self.registry, self.case, outages)
        if cmd is None:
            return []
        t_split = frame.t + self.cfg.split_delay * self.cfg.coi.t_s
        self.decision = SplitDecision(self.detection.t, frame.t, t_split, cmd.scenario, bip.cm, bip.nm,
                                      cmd.cutset, bip, pred)
        if not self.actuate:
            return []
        return [(t_split, Event(t_split, "split", tuple(cmd.cutset)))]
