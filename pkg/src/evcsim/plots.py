"""Minimal deterministic SVG line charts for run logs.

No plotting library: the files are assembled as text so identical runs
produce identical bytes. Five chart groups cover the interesting signals;
attack windows are shaded behind the traces.
"""

from __future__ import annotations

import math
from typing import Sequence

from .mitigate import RunLog
from .stats import EmptyPhase

WIDTH, HEIGHT = 880, 340
_ML, _MR, _MT, _MB = 64, 18, 34, 42   # margins: left right top bottom
_PW, _PH = WIDTH - _ML - _MR, HEIGHT - _MT - _MB
_COLORS = ("#1f77b4", "#d62728", "#2ca02c")
_SHADE = "#e8c2c8"

#: filename -> (title, y label, series labels, log accessor names)
CHART_GROUPS: dict[str, tuple[str, str, tuple[str, ...], tuple[str, ...]]] = {
    "duties.svg": (
        "Applied duty commands", "duty",
        ("d_pv", "d_bes", "d_ev"), ("routed:pv", "routed:bes", "routed:ev"),
    ),
    "power.svg": ("PV array power", "W", ("p_pv",), ("p_pv",)),
    "bus_voltage.svg": ("DC bus voltage", "V", ("v_bus",), ("v_bus",)),
    "currents.svg": (
        "Storage currents", "A", ("i_bes", "i_ev"), ("i_bes", "i_ev")
    ),
    "battery_voltages.svg": (
        "Storage terminal voltages", "V",
        ("v_bes", "v_ev"), ("v_bes", "v_ev"),
    ),
}


def _column(log: RunLog, accessor: str) -> list[float]:
    if accessor.startswith("routed:"):
        return log.routed[accessor.split(":", 1)[1]]
    return log.signal(accessor)


def _nice_step(span: float, target: int = 5) -> float:
    raw = span / max(target, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            return mult * mag
    return 10.0 * mag


def _ticks(lo: float, hi: float) -> list[float]:
    step = _nice_step(hi - lo)
    first = math.ceil(lo / step) * step
    out = []
    v = first
    while v <= hi + 1e-9 * step:
        out.append(0.0 if abs(v) < 1e-12 else v)
        v += step
    return out


def _fmt_num(v: float) -> str:
    return f"{v:g}"


def _px(v: float) -> str:
    return f"{v:.2f}"


def _chart(
    title: str,
    ylabel: str,
    t: Sequence[float],
    series: list[tuple[str, Sequence[float]]],
    windows: dict[str, tuple[float, float]],
) -> str:
    t0, t1 = t[0], t[-1]
    if t1 <= t0:
        t1 = t0 + 1.0
    ys = [v for _, vals in series for v in vals]
    y0, y1 = min(ys), max(ys)
    if y1 - y0 < 1e-12:
        pad = max(abs(y0) * 0.1, 0.5)
        y0, y1 = y0 - pad, y1 + pad
    else:
        pad = (y1 - y0) * 0.06
        y0, y1 = y0 - pad, y1 + pad

    def sx(x: float) -> float:
        return _ML + (x - t0) / (t1 - t0) * _PW

    def sy(y: float) -> float:
        return _MT + (y1 - y) / (y1 - y0) * _PH

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        "<style>text{font-family:sans-serif;font-size:12px;fill:#222}"
        ".tick{stroke:#999;stroke-width:1}.grid{stroke:#eee;stroke-width:1}"
        "</style>",
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{_ML}" y="20" font-size="14" font-weight="bold">{title}</text>',
    ]
    for ch in sorted(windows):
        lo, hi = windows[ch]
        lo, hi = max(lo, t0), min(hi, t1)
        if hi <= lo:
            continue
        out.append(
            f'<rect x="{_px(sx(lo))}" y="{_MT}" '
            f'width="{_px(sx(hi) - sx(lo))}" height="{_PH}" '
            f'fill="{_SHADE}" fill-opacity="0.45"/>'
        )
    for yv in _ticks(y0, y1):
        yy = _px(sy(yv))
        out.append(f'<line class="grid" x1="{_ML}" y1="{yy}" x2="{_ML + _PW}" y2="{yy}"/>')
        out.append(f'<line class="tick" x1="{_ML - 4}" y1="{yy}" x2="{_ML}" y2="{yy}"/>')
        out.append(
            f'<text x="{_ML - 8}" y="{yy}" text-anchor="end" dy="4">{_fmt_num(yv)}</text>'
        )
    for xv in _ticks(t0, t1):
        xx = _px(sx(xv))
        base = _MT + _PH
        out.append(f'<line class="tick" x1="{xx}" y1="{base}" x2="{xx}" y2="{base + 4}"/>')
        out.append(
            f'<text x="{xx}" y="{base + 18}" text-anchor="middle">{_fmt_num(xv)}</text>'
        )
    out.append(
        f'<rect x="{_ML}" y="{_MT}" width="{_PW}" height="{_PH}" '
        'fill="none" stroke="#444" stroke-width="1"/>'
    )
    out.append(
        f'<text x="{_ML + _PW / 2:.0f}" y="{HEIGHT - 6}" text-anchor="middle">t [s]</text>'
    )
    out.append(
        f'<text x="14" y="{_MT + _PH / 2:.0f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {_MT + _PH / 2:.0f})">{ylabel}</text>'
    )
    for i, (label, vals) in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{_px(sx(x))},{_px(sy(y))}" for x, y in zip(t, vals))
        out.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        lx = _ML + _PW - 110
        ly = _MT + 10 + 16 * i
        out.append(
            f'<line x1="{lx}" y1="{ly}" x2="{lx + 18}" y2="{ly}" '
            f'stroke="{color}" stroke-width="3"/>'
        )
        out.append(f'<text x="{lx + 24}" y="{ly + 4}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plots(log: RunLog) -> dict[str, str]:
    """Render every chart group; filename -> SVG text.

    An empty log has nothing to draw and raises :class:`EmptyPhase` so the
    caller can report it instead of writing blank files.
    """
    if len(log) == 0:
        raise EmptyPhase("run log is empty, nothing to plot")
    out: dict[str, str] = {}
    for fname, (title, ylabel, labels, accessors) in CHART_GROUPS.items():
        series = [
            (lab, _column(log, acc)) for lab, acc in zip(labels, accessors)
        ]
        out[fname] = _chart(title, ylabel, log.t, series, log.windows)
    return out
