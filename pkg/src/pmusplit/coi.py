"""COI-referenced stability indices and the windowed out-of-step detector."""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

PATHS = ("wk-growth", "gamma-growth", "crt-angle")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    """Thresholds for the COI detector. Angles in degrees, speeds in p.u."""

    delta_arm: float = 120.0
    delta_crt: float = 220.0
    eps_delta: float = 1.0  # deg/s
    n_window: int = 9
    eps_w: float = 1e-6
    alpha_w: float = 1.1
    eps_gamma: float = 1e-6
    alpha_gamma: float = 1.1
    omega_min: float = 0.003
    t_s: float = 1.0 / 60.0

    def __post_init__(self):
        if not (self.delta_crt > self.delta_arm > 90.0):
            raise ConfigError("need delta_crt > delta_arm > 90 deg")
        if self.alpha_w <= 1 or self.alpha_gamma <= 1:
            raise ConfigError("alpha_w and alpha_gamma must exceed 1")
        if self.omega_min <= 0:
            raise ConfigError("omega_min must be positive")
        if self.n_window < 2:
            raise ConfigError("n_window must be at least 2")
        if self.t_s <= 0:
            raise ConfigError("t_s must be positive")

    @property
    def depth(self) -> int:
        """Samples needed for the windowed ratios: k = n-N..n plus two predecessors."""
        return self.n_window + 3

    @classmethod
    def from_dict(cls, data: dict) -> "DetectorConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown detector keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path) -> DetectorConfig:
    with Path(path).open() as fh:
        return DetectorConfig.from_dict(json.load(fh))


# --- per-frame quantities ----------------------------------------------------------


def coi_transform(delta, omega, inertia, labels=None):
    """Subtract the inertia-weighted centre of each island from angles and speeds."""
    delta = np.asarray(delta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    inertia = np.asarray(inertia, dtype=float)
    labels = np.zeros(len(delta), dtype=int) if labels is None else np.asarray(labels)
    d_t = np.empty_like(delta)
    w_t = np.empty_like(omega)
    for lab in np.unique(labels):
        sel = labels == lab
        m = inertia[sel]
        d_t[sel] = _centre(delta[sel], m)
        w_t[sel] = _centre(omega[sel], m)
    return d_t, w_t


def _centre(x: np.ndarray, m: np.ndarray) -> np.ndarray:
    # runaway angles are large, so the plain difference leaves a rounding residue in
    # sum(m * y); a second pass plus folding what is left into the heaviest machine
    # keeps the weighted sum at machine precision
    y = x - np.dot(m, x) / m.sum()
    y = y - np.dot(m, y) / m.sum()
    k = int(np.argmax(m))
    y[k] -= np.dot(m, y) / m[k]
    return y


def kinetic_energy(omega_t, inertia) -> tuple[np.ndarray, float]:
    wk_i = 0.5 * np.asarray(inertia) * np.asarray(omega_t) ** 2
    return wk_i, float(wk_i.mean())


def gamma_index(delta_t, omega_t) -> tuple[np.ndarray, float]:
    g = np.asarray(delta_t) * np.asarray(omega_t)
    return g, float(g.mean())


def critical_pair(delta) -> tuple[int, int, float]:
    """0-based (i, j), i < j, maximising |delta_i - delta_j|; ties keep the lowest indices."""
    delta = np.asarray(delta, dtype=float)
    m = len(delta)
    if m < 2:
        raise ValueError("critical pair needs at least two machines")
    best = (0, 1, abs(delta[0] - delta[1]))
    for i in range(m - 1):
        diff = np.abs(delta[i + 1:] - delta[i])
        j = int(np.argmax(diff))
        if diff[j] > best[2]:
            best = (i, i + 1 + j, float(diff[j]))
    return best[0], best[1], float(best[2])


@dataclass(frozen=True)
class CoiFrame:
    t: float
    delta_t: np.ndarray  # rad
    omega_t: np.ndarray  # p.u.
    wk_i: np.ndarray
    wk: float
    gamma_i: np.ndarray
    gamma: float
    delta_max: float  # rad
    i_max: int  # positive-side member of the critical pair (local index)
    j_max: int


def coi_frame(t: float, delta, omega, inertia) -> CoiFrame:
    """Indices for one island (all inputs restricted to its machines)."""
    d_t, w_t = coi_transform(delta, omega, inertia)
    wk_i, wk = kinetic_energy(w_t, inertia)
    g_i, g = gamma_index(d_t, w_t)
    if len(d_t) >= 2:
        i, j, dmax = critical_pair(d_t)
        if d_t[i] < d_t[j]:
            i, j = j, i
    else:
        i, j, dmax = 0, 0, 0.0
    return CoiFrame(t, d_t, w_t, wk_i, wk, g_i, g, dmax, i, j)


# --- window logic ---------------------------------------------------------------------


@dataclass(frozen=True)
class WindowStatus:
    armed: bool  # delta_max[n] > delta_arm
    growing: bool  # delta_max rising across the window
    wk_rising: bool  # W_K increments above eps_w across the window
    wk_growth: bool  # ... and accelerating
    gamma_growth: bool
    moving: bool  # critical pair moving apart from the COI
    beyond_crt: bool

    @property
    def fires(self) -> bool:
        return (self.armed and self.growing and self.moving
                and (self.wk_growth or self.gamma_growth or self.beyond_crt))

    @property
    def path(self) -> str | None:
        if not self.fires:
            return None
        if self.wk_growth:
            return PATHS[0]
        if self.gamma_growth:
            return PATHS[1]
        return PATHS[2]


def _accelerating(series: np.ndarray, n_window: int, eps: float, alpha: float) -> tuple[bool, bool]:
    """(increments > eps for all k in window, increments also growing by > alpha).

    ``series`` holds samples n-N-2 .. n.
    """
    inc = np.diff(series)  # inc[j] belongs to sample k = n-N-1 .. n
    in_window = inc[-(n_window + 1):]
    rising = bool(np.all(in_window > eps))
    prev = inc[-(n_window + 2):-1]
    if not rising or np.any(prev <= 0):
        return rising, False
    return rising, bool(np.all(in_window / prev > alpha))


def evaluate_window(frames: Sequence[CoiFrame], cfg: DetectorConfig) -> WindowStatus:
    """Apply the composite rule at the newest frame of ``frames`` (oldest first).

    With fewer than ``cfg.depth`` frames only the arming test is evaluated.
    """
    newest = frames[-1]
    armed = math.degrees(newest.delta_max) > cfg.delta_arm
    beyond = math.degrees(newest.delta_max) > cfg.delta_crt
    w = newest.omega_t
    moving = len(w) >= 2 and (w[newest.i_max] > cfg.omega_min or w[newest.j_max] < -cfg.omega_min)
    if len(frames) < cfg.depth:
        return WindowStatus(armed, False, False, False, False, bool(moving), beyond)
    win = list(frames)[-cfg.depth:]
    dmax = np.degrees([f.delta_max for f in win])
    growing = bool(np.all(np.diff(dmax)[-(cfg.n_window + 1):] > cfg.eps_delta * cfg.t_s))
    wk_rising, wk_growth = _accelerating(np.array([f.wk for f in win]), cfg.n_window, cfg.eps_w, cfg.alpha_w)
    gam = np.array([f.gamma for f in win])
    g_rising, g_acc = _accelerating(gam, cfg.n_window, cfg.eps_gamma, cfg.alpha_gamma)
    gamma_growth = bool(np.all(gam[-(cfg.n_window + 1):] > 0)) and g_rising and g_acc
    return WindowStatus(armed, growing, wk_rising, wk_growth and wk_rising, gamma_growth, bool(moving), beyond)


@dataclass(frozen=True)
class OosEvent:
    t: float
    island: int
    path: str
    i_max: int  # machine id
    j_max: int
    delta_max_deg: float
    detector: str = "coi"
    group: frozenset | None = None


def detector1_step(window: Sequence[CoiFrame], cfg: DetectorConfig, machine_ids: Sequence[int],
                   island: int = 0) -> OosEvent | None:
    status = evaluate_window(window, cfg)
    if not status.fires:
        return None
    f = window[-1]
    return OosEvent(f.t, island, status.path, machine_ids[f.i_max], machine_ids[f.j_max],
                    math.degrees(f.delta_max))


class AngleUnwrapper:
    """Removes 2*pi jumps per machine across consecutive frames."""

    def __init__(self):
        self._prev = None
        self._offset = None

    def __call__(self, delta: np.ndarray) -> np.ndarray:
        delta = np.asarray(delta, dtype=float)
        if self._prev is None:
            self._prev = delta.copy()
            self._offset = np.zeros_like(delta)
            return delta.copy()
        jump = delta - self._prev
        self._offset -= 2 * np.pi * np.round(jump / (2 * np.pi))
        self._prev = delta.copy()
        return delta + self._offset


class CoiDetector:
    """Streaming fold over one island: a bounded ring of CoiFrames, one update per frame."""

    def __init__(self, cfg: DetectorConfig, machine_ids: Sequence[int], inertia, island: int = 0):
        self.cfg = cfg
        self.machine_ids = tuple(machine_ids)
        self.inertia = np.asarray(inertia, dtype=float)
        self.island = island
        self.window: deque[CoiFrame] = deque(maxlen=cfg.depth)
        self.status: WindowStatus | None = None
        self.event: OosEvent | None = None

    def update(self, t: float, delta, omega) -> OosEvent | None:
        frame = coi_frame(t, delta, omega, self.inertia)
        self.window.append(frame)
        self.status = evaluate_window(self.window, self.cfg)
        if self.status.fires and len(self.machine_ids) >= 2:
            f = frame
            ev = OosEvent(t, self.island, self.status.path, self.machine_ids[f.i_max],
                          self.machine_ids[f.j_max], math.degrees(f.delta_max))
            if self.event is None:
                self.event = ev
            return ev
        return None

    @property
    def latest(self) -> CoiFrame:
        return self.window[-1]
