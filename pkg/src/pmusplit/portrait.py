"""Phase-portrait out-of-step detector for machine groups and the growing-peak counter."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from .coi import ConfigError, OosEvent, WindowStatus


@dataclass(frozen=True)
class PpConfig:
    delta_arm_coi: float = 100.0  # deg
    eps_delta: float = 1e-6  # rad per sample
    eps_omega: float = 1e-6  # p.u. per sample
    eps_slope: float = 1e-3  # p.u./rad
    n_window: int = 9
    groups: tuple[tuple[int, ...], ...] | None = None  # None: singletons plus registry groups
    delta_sep: float = 180.0  # deg, portrait angle that confirms on its own
    kappa_hat: int = 5
    peak_growth: float = 1.05
    omega_neglect: float = 5e-4

    def __post_init__(self):
        if self.eps_slope <= 0:
            raise ConfigError("eps_slope must be positive")
        if self.n_window < 1:
            raise ConfigError("n_window must be positive")
        if self.kappa_hat < 5:
            raise ConfigError("kappa_hat must be at least 5")
        if self.peak_growth <= 1:
            raise ConfigError("peak_growth must exceed 1")
        if self.groups is not None:
            object.__setattr__(self, "groups", tuple(tuple(sorted(int(i) for i in g)) for g in self.groups))

    @property
    def depth(self) -> int:
        return self.n_window + 2

    @classmethod
    def from_dict(cls, data: dict) -> "PpConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown portrait keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["groups"] is not None:
            d["groups"] = [list(g) for g in d["groups"]]
        return d


def group_aggregate(delta, omega, group_mask, inertia) -> tuple[float, float]:
    """Inertia-weighted centre of the group minus that of its complement."""
    mask = np.asarray(group_mask, dtype=bool)
    if mask.all() or not mask.any():
        raise ValueError("group must be a nonempty proper subset")
    m = np.asarray(inertia, dtype=float)
    delta = np.asarray(delta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    ma, mb = m[mask], m[~mask]
    d_a = np.dot(ma, delta[mask]) / ma.sum() - np.dot(mb, delta[~mask]) / mb.sum()
    w_a = np.dot(ma, omega[mask]) / ma.sum() - np.dot(mb, omega[~mask]) / mb.sum()
    return float(d_a), float(w_a)


@dataclass
class PhasePortrait:
    group: frozenset
    mask: np.ndarray
    depth: int
    delta: deque = field(default_factory=deque)
    omega: deque = field(default_factory=deque)

    def __post_init__(self):
        self.delta = deque(maxlen=self.depth)
        self.omega = deque(maxlen=self.depth)

    def push(self, d_a: float, w_a: float) -> None:
        self.delta.append(d_a)
        self.omega.append(w_a)


def pp_conditions(delta_a: Sequence[float], omega_a: Sequence[float], cfg: PpConfig) -> bool:
    """Diverging-portrait test on a window of N+2 samples; the first is the reference."""
    d = np.asarray(delta_a, dtype=float)
    w = np.asarray(omega_a, dtype=float)
    if len(d) < cfg.depth:
        return False
    d, w = d[-cfg.depth:], w[-cfg.depth:]
    if math.degrees(d[-1]) <= cfg.delta_arm_coi:
        return False
    if not (np.all(w[1:] > w[0]) and np.all(d[1:] > d[0])):
        return False
    dd, dw = np.diff(d), np.diff(w)
    if not (np.all(dd > cfg.eps_delta) and np.all(dw > cfg.eps_omega)):
        return False
    return bool(np.all(dw / dd > cfg.eps_slope))


def detector2_step(portraits: Iterable[PhasePortrait], coi_status: WindowStatus, cfg: PpConfig,
                   t: float = 0.0, island: int = 0) -> OosEvent | None:
    """First monitored group whose portrait diverges while the system-wide gates hold."""
    if not (coi_status.armed and coi_status.growing):
        return None
    for p in portraits:
        if not pp_conditions(list(p.delta), list(p.omega), cfg):
            continue
        if coi_status.wk_rising or math.degrees(p.delta[-1]) >= cfg.delta_sep:
            path = "pp-wk" if coi_status.wk_rising else "pp-sep"
            return OosEvent(t, island, path, min(p.group), -1, math.degrees(p.delta[-1]),
                            detector="pp", group=p.group)
    return None


class PortraitDetector:
    """Portfolio of portraits for one island, updated once per frame."""

    def __init__(self, cfg: PpConfig, machine_ids: Sequence[int], inertia,
                 groups: Iterable[Iterable[int]] = (), island: int = 0):
        self.cfg = cfg
        self.machine_ids = tuple(machine_ids)
        self.inertia = np.asarray(inertia, dtype=float)
        self.island = island
        members = set(self.machine_ids)
        wanted = [tuple(g) for g in cfg.groups] if cfg.groups is not None else (
            [(i,) for i in self.machine_ids] + [tuple(g) for g in groups])
        self.portraits: list[PhasePortrait] = []
        seen = set()
        for g in wanted:
            grp = frozenset(g)
            # both orientations: the group ahead of, or behind, the rest
            for side in (grp, frozenset(members) - grp):
                if not side or side == members or not side <= members or side in seen:
                    continue
                seen.add(side)
                mask = np.array([i in side for i in self.machine_ids])
                self.portraits.append(PhasePortrait(side, mask, cfg.depth))
        self.event: OosEvent | None = None

    def update(self, t: float, delta, omega, coi_status: WindowStatus) -> OosEvent | None:
        for p in self.portraits:
            p.push(*group_aggregate(delta, omega, p.mask, self.inertia))
        ev = detector2_step(self.portraits, coi_status, self.cfg, t, self.island)
        if ev is not None and self.event is None:
            self.event = ev
        return ev


@dataclass
class PeakCounter:
    """Growing-peak counter on per-machine kinetic energies."""

    n: int
    growth: float = 1.05
    kappa_hat: int = 5
    omega_neglect: float = 5e-4
    kappa: np.ndarray = field(init=False)
    abs_max: np.ndarray = field(init=False)
    alarm: np.ndarray = field(init=False)
    _hist: deque = field(init=False, repr=False)

    def __post_init__(self):
        self.kappa = np.zeros(self.n, dtype=int)
        self.abs_max = np.zeros(self.n)
        self.alarm = np.zeros(self.n, dtype=bool)
        self._hist = deque(maxlen=3)

    def update(self, wk_i, omega_t) -> list[int]:
        """Feed one sample; returns local indices whose alarm was raised on this sample."""
        self._hist.append((np.asarray(wk_i, dtype=float).copy(), np.asarray(omega_t, dtype=float).copy()))
        if len(self._hist) < 3:
            return []
        (w0, _), (w1, om1), (w2, _) = self._hist
        peak = (w1 > w0) & (w1 >= w2) & (np.abs(om1) >= self.omega_neglect)
        raised = []
        for i in np.flatnonzero(peak):
            if w1[i] > self.growth * self.abs_max[i]:
                self.kappa[i] += 1
            self.abs_max[i] = max(self.abs_max[i], w1[i])
            if self.kappa[i] >= self.kappa_hat and not self.alarm[i]:
                self.alarm[i] = True
                raised.append(int(i))
        return raised


def undamped_step(wk_i, omega_t, counter: PeakCounter) -> tuple[PeakCounter, list[int]]:
    return counter, counter.update(wk_i, omega_t)
