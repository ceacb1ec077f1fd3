"""Post-detection critical-group identification and CGG-based splitting."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grid import GridCase


class InsufficientSamplesError(ValueError):
    pass


@dataclass(frozen=True)
class AnglePrediction:
    """Predicted COI-angle deviations ``values[k, i]`` (deg) for k = 1..h samples ahead."""

    values: np.ndarray
    horizon: float
    baseline: np.ndarray | None = None

    @property
    def h(self) -> int:
        return self.values.shape[0]


def prediction_steps(horizon: float, t_s: float) -> int:
    return max(1, int(round(horizon / t_s)))


def taylor_predict(history: np.ndarray, t_s: float, horizon: float = 0.1, fit_window: int = 12,
                   baseline: np.ndarray | None = None) -> AnglePrediction:
    """Least-squares quadratic per machine over the last ``fit_window`` samples, extrapolated.

    ``history`` is samples x machines, newest last, in any angle unit (the
    prediction keeps it).
    """
    history = np.asarray(history, dtype=float)
    if history.ndim == 1:
        history = history[:, None]
    if history.shape[0] < fit_window or fit_window < 3:
        raise InsufficientSamplesError(f"need {fit_window} samples (>= 3), have {history.shape[0]}")
    y = history[-fit_window:]
    # time in samples, newest at 0, keeps the normal equations well conditioned
    s = np.arange(-fit_window + 1, 1, dtype=float)
    vander = np.vander(s, 3)
    coef, *_ = np.linalg.lstsq(vander, y, rcond=None)
    h = prediction_steps(horizon, t_s)
    ahead = np.vander(np.arange(1, h + 1, dtype=float), 3)
    return AnglePrediction(ahead @ coef, horizon, baseline)


# --- Algorithm 1 ------------------------------------------------------------------


def spread(values: np.ndarray) -> float:
    return float(values.max() - values.min()) if values.size else 0.0


def bipartition_metrics(pred: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centroid distance d[k] and the within-spread / distance ratio phi[k] for one bipartition."""
    a, b = pred[:, mask], pred[:, ~mask]
    d = np.abs(a.mean(axis=1) - b.mean(axis=1))
    within = (a.max(axis=1) - a.min(axis=1)) + (b.max(axis=1) - b.min(axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.where(d > 0, within / np.where(d > 0, d, 1.0), np.inf)
    return d, phi


def candidate_groups(pred: np.ndarray) -> list[tuple[int, ...]]:
    """Descending-order prefixes of every predicted sample, first-seen order, one per bipartition."""
    m = pred.shape[1]
    seen: set[frozenset] = set()
    out = []
    for row in pred:
        order = np.argsort(-row, kind="stable")
        for g in range(1, m):
            grp = tuple(sorted(int(i) for i in order[:g]))
            key = frozenset(grp)
            comp = frozenset(range(m)) - key
            if key in seen or comp in seen:
                continue
            seen.add(key)
            out.append(grp)
    return out


@dataclass(frozen=True)
class CriticalBipartition:
    cm: frozenset  # machine ids
    nm: frozenset
    k: int  # predicted sample at which the group entered the candidate set (1-based)
    d: np.ndarray
    phi: np.ndarray


def algorithm1(prediction: AnglePrediction | np.ndarray, registry: "CggRegistry | None" = None,
               machine_ids: Sequence[int] | None = None) -> CriticalBipartition | None:
    """Critical machine group from predicted angles, or None when no split is warranted now."""
    pred = prediction.values if isinstance(prediction, AnglePrediction) else np.asarray(prediction, float)
    h, m = pred.shape
    ids = list(machine_ids) if machine_ids is not None else list(range(1, m + 1))
    if m < 2:
        return None
    max_diff = pred.max(axis=1) - pred.min(axis=1)
    if np.any(np.diff(max_diff) < 0):
        return None

    cands = candidate_groups(pred)
    first_k = {}
    for k, row in enumerate(pred, start=1):
        order = np.argsort(-row, kind="stable")
        for g in range(1, m):
            first_k.setdefault(frozenset(int(i) for i in order[:g]), k)
    metrics = []
    for grp in cands:
        mask = np.zeros(m, dtype=bool)
        mask[list(grp)] = True
        metrics.append(bipartition_metrics(pred, mask))
    phis = np.array([phi for _, phi in metrics])

    chosen = None
    for a, grp in enumerate(cands):
        d_a, phi_a = metrics[a]
        others = np.delete(phis, a, axis=0)
        if others.size and not np.all(phi_a[None, :] < others):
            continue
        if not np.all(np.isfinite(phi_a)):
            continue
        if h > 1 and not np.all(np.diff(d_a) > 0):
            continue
        chosen = a
        break
    if chosen is None:
        return None
    grp = cands[chosen]
    cm = frozenset(ids[i] for i in grp)
    nm = frozenset(ids) - cm
    if registry is not None and registry.lookup(cm, frozenset(ids)) is None:
        return None
    d, phi = metrics[chosen]
    return CriticalBipartition(cm, nm, first_k.get(frozenset(grp), 1), d, phi)


# --- CGG registry -------------------------------------------------------------------


class RegistryError(ValueError):
    pass


@dataclass(frozen=True)
class CggEntry:
    scenario: int
    group: frozenset
    cutset: tuple[tuple[int, int], ...]


@dataclass
class CggRegistry:
    entries: list[CggEntry] = field(default_factory=list)

    def lookup(self, group: Iterable[int], members: Iterable[int] | None = None) -> CggEntry | None:
        """Exact match on either side of the bipartition within ``members``."""
        grp = frozenset(group)
        comp = frozenset(members) - grp if members is not None else None
        for e in self.entries:
            if e.group == grp or (comp is not None and e.group == comp):
                return e
        return None

    def groups(self) -> list[frozenset]:
        return [e.group for e in self.entries]

    def validate(self, case: GridCase) -> None:
        """Each cutset must split the intact topology into exactly the group and its complement."""
        all_ids = frozenset(m.id for m in case.machines)
        for e in self.entries:
            if not e.group or e.group >= all_ids:
                raise RegistryError(f"scenario {e.scenario}: group must be a proper nonempty subset")
            try:
                ids = case.branch_ids(e.cutset)
            except KeyError as exc:
                raise RegistryError(f"scenario {e.scenario}: {exc}") from None
            labels = case.machine_islands(ids)
            inside = {labels[k] for k, m in enumerate(case.machines) if m.id in e.group}
            outside = {labels[k] for k, m in enumerate(case.machines) if m.id not in e.group}
            if len(inside) != 1 or len(outside) != 1 or inside == outside:
                raise RegistryError(f"scenario {e.scenario}: cutset does not isolate group {sorted(e.group)}")

    def to_list(self) -> list[dict]:
        return [{"scenario": e.scenario, "group": sorted(e.group), "cutset": [list(c) for c in e.cutset]}
                for e in self.entries]

    @classmethod
    def from_list(cls, data: list) -> "CggRegistry":
        try:
            entries = [
                CggEntry(int(d["scenario"]), frozenset(int(g) for g in d["group"]),
                         tuple((int(a), int(b)) for a, b in d["cutset"]))
                for d in data
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise RegistryError(f"malformed registry entry: {exc}") from None
        return cls(entries)


def load_registry(path, case: GridCase | None = None) -> CggRegistry:
    with Path(path).open() as fh:
        reg = CggRegistry.from_list(json.load(fh))
    if case is not None:
        reg.validate(case)
    return reg


@dataclass(frozen=True)
class SplitCommand:
    scenario: int
    group: frozenset
    cutset: tuple[tuple[int, int], ...]  # branches still in service that must open


def match_and_split(bipartition: CriticalBipartition, registry: CggRegistry, case: GridCase,
                    outages: Iterable[int] = ()) -> SplitCommand | None:
    """Registry lookup; stored cutsets are for the intact grid, already-open branches are skipped.

    None means no CGG matches and local protection remains in charge.
    """
    members = bipartition.cm | bipartition.nm
    entry = registry.lookup(bipartition.cm, members)
    if entry is None:
        return None
    out = set(outages)
    live = tuple(c for c in entry.cutset if case.branch(c).id not in out)
    return SplitCommand(entry.scenario, entry.group, live)
