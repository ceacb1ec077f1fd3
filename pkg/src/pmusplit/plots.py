"""Standalone SVG line plots of run traces (cosmetic, no plotting dependency)."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf")
W, H, PAD = 640, 300, 48


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return list(np.linspace(lo, hi, n))


def line_plot(x, series: Sequence[tuple[str, np.ndarray]], title: str, xlabel: str = "t [s]",
              ylabel: str = "", vlines: Sequence[float] = ()) -> str:
    x = np.asarray(x, dtype=float)
    ys = [np.asarray(y, dtype=float) for _, y in series]
    finite = np.concatenate([y[np.isfinite(y)] for y in ys]) if ys else np.array([0.0])
    y_lo, y_hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if y_hi - y_lo < 1e-12:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    x_lo, x_hi = (float(x.min()), float(x.max())) if x.size else (0.0, 1.0)
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0

    def sx(v):
        return PAD + (v - x_lo) / (x_hi - x_lo) * (W - 2 * PAD)

    def sy(v):
        return H - PAD - (v - y_lo) / (y_hi - y_lo) * (H - 2 * PAD)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="10">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2}" y="16" text-anchor="middle" font-size="12">{escape(title)}</text>',
           f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" fill="none" stroke="black"/>']
    for v in _ticks(x_lo, x_hi):
        out.append(f'<text x="{sx(v):.1f}" y="{H - PAD + 14}" text-anchor="middle">{v:.3g}</text>')
    for v in _ticks(y_lo, y_hi):
        out.append(f'<text x="{PAD - 4}" y="{sy(v) + 3:.1f}" text-anchor="end">{v:.3g}</text>')
    out.append(f'<text x="{W / 2}" y="{H - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="12" y="{H / 2}" transform="rotate(-90 12 {H / 2})" text-anchor="middle">{escape(ylabel)}</text>')
    for v in vlines:
        if x_lo <= v <= x_hi:
            out.append(f'<line x1="{sx(v):.1f}" y1="{PAD}" x2="{sx(v):.1f}" y2="{H - PAD}" stroke="red" stroke-dasharray="4 3"/>')
    for k, ((name, _), y) in enumerate(zip(series, ys)):
        ok = np.isfinite(y)
        pts = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(x[ok], y[ok]))
        color = PALETTE[k % len(PALETTE)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1" points="{pts}"/>')
        out.append(f'<text x="{W - PAD + 4}" y="{PAD + 12 * k + 8}" fill="{color}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_run_plots(result, out_dir) -> None:
    out = Path(out_dir)
    s = result.stream
    pipe = result.pipeline
    rep = result.report
    marks = [v for v in (rep.t_detect, rep.t_split) if v is not None]
    m = pipe.inertia
    d = np.unwrap(s.delta, axis=0)
    d_t = np.empty_like(d)
    for n in range(len(s)):
        lab = s.island[n]
        for L in np.unique(lab):
            c = lab == L
            d_t[n, c] = d[n, c] - d[n, c] @ m[c] / m[c].sum()
    names = [f"G{i}" for i in s.machine_ids]
    (out / "angles.svg").write_text(line_plot(
        s.t, list(zip(names, np.degrees(d_t).T)), "COI-relative rotor angles", ylabel="deg", vlines=marks))
    tr = np.array(pipe.trace) if pipe.trace else np.zeros((0, 4))
    (out / "wk.svg").write_text(line_plot(tr[:, 0], [("W_K", tr[:, 1])], "Kinetic energy", vlines=marks))
    (out / "gamma.svg").write_text(line_plot(tr[:, 0], [("gamma", tr[:, 2])], "Gamma index", vlines=marks))
    if s.theta is not None:
        th = np.abs(s.theta)
        worst = np.argsort(-np.nan_to_num(np.nanmax(th, axis=0), nan=-1.0))[:5]
        (out / "theta.svg").write_text(line_plot(
            s.t, [(f"{s.branch_ends[k][0]}-{s.branch_ends[k][1]}", th[:, k]) for k in worst],
            "Largest branch angle differences", ylabel="deg", vlines=marks))
    if s.vbus is not None:
        vm = np.abs(s.vbus)
        low = np.argsort(vm.min(axis=0))[:5]
        (out / "vmag.svg").write_text(line_plot(
            s.t, [(f"bus {s.bus_ids[k]}", vm[:, k]) for k in low], "Lowest bus voltages", ylabel="p.u.",
            vlines=marks))
    if rep.group:
        from .portrait import group_aggregate

        mask = np.array([i in rep.group for i in s.machine_ids])
        n_end = len(s) if rep.t_split is None else int(np.searchsorted(s.t, rep.t_split))
        pts = np.array([group_aggregate(d[n], s.omega[n], mask, m) for n in range(n_end)])
        if len(pts):
            (out / "portrait.svg").write_text(line_plot(
                np.degrees(pts[:, 0]), [("omega_A", pts[:, 1])],
                f"Phase portrait of group {{{','.join(map(str, rep.group))}}}", xlabel="delta_A [deg]",
                ylabel="p.u."))
