"""Deterministic SVG rendering of synthesis tracks.

Accepts any combination of an f0 contour (semitones), a voicing track, and a
spectral frame matrix, stacked as aligned panels over a shared frame axis.
The output is a pure function of the input arrays: numbers are formatted at
fixed precision and nothing time- or id-dependent is emitted, so equal inputs
give byte-identical documents.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .corpus import UNVOICED
from .tensor import ShapeError

WIDTH = 960
MARGIN_LEFT = 64
MARGIN_RIGHT = 16
MARGIN_TOP = 30
PANEL_GAP = 20
F0_HEIGHT = 200
UV_HEIGHT = 34
SPECTRAL_HEIGHT = 200
AXIS_HEIGHT = 34
MAX_HEATMAP_COLUMNS = 600

_INK = "#1f2430"
_GRID = "#d5d9e0"
_F0_LINE = "#0b6e99"
_UV_FILL = "#c05746"


def _fmt(x: float) -> str:
    s = f"{float(x):.2f}"
    return "0.00" if s == "-0.00" else s


def _tick_step(span: float, target: int = 6) -> float:
    if span <= 0:
        return 1.0
    raw = span / target
    mag = 10.0 ** np.floor(np.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if mag * mult >= raw:
            return mag * mult
    return mag * 10.0


def _ticks(lo: float, hi: float) -> list[float]:
    step = _tick_step(hi - lo)
    first = np.ceil(lo / step) * step
    out = []
    v = first
    while v <= hi + 1e-9:
        out.append(float(v))
        v += step
    return out


def unvoiced_spans(uv: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [start, end) runs of unvoiced frames."""
    spans = []
    start = None
    for i, v in enumerate(uv):
        if v == UNVOICED and start is None:
            start = i
        elif v != UNVOICED and start is not None:
            spans.append((start, i))
            start = None
    if start is not None:
        spans.append((start, len(uv)))
    return spans


def _text(x, y, s, anchor="start", size=12, rotate=None) -> str:
    t = f'transform="rotate(-90 {_fmt(x)} {_fmt(y)})" ' if rotate else ""
    return (f'<text x="{_fmt(x)}" y="{_fmt(y)}" {t}fill="{_INK}" '
            f'font-family="sans-serif" font-size="{size}" '
            f'text-anchor="{anchor}">{s}</text>')


class _Frame:
    """Shared frame-to-pixel mapping for every panel."""

    def __init__(self, n_frames: int):
        self.n = n_frames
        self.x0 = MARGIN_LEFT
        self.width = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
        self.sx = self.width / max(1, n_frames)

    def x(self, frame: float) -> float:
        return self.x0 + frame * self.sx


def _f0_panel(f0: np.ndarray, frame: _Frame, top: float) -> list[str]:
    lo = float(np.floor(f0.min())) - 1.0
    hi = float(np.ceil(f0.max())) + 1.0
    sy = F0_HEIGHT / (hi - lo)
    parts = [_text(frame.x0, top - 6, "f0 (semitones)")]
    for tick in _ticks(lo, hi):
        y = top + (hi - tick) * sy
        parts.append(f'<line x1="{_fmt(frame.x0)}" y1="{_fmt(y)}" '
                     f'x2="{_fmt(frame.x0 + frame.width)}" y2="{_fmt(y)}" '
                     f'stroke="{_GRID}" stroke-width="1"/>')
        parts.append(_text(frame.x0 - 8, y + 4, _fmt(tick), anchor="end", size=11))
    pts = " ".join(f"{_fmt(frame.x(i + 0.5))},{_fmt(top + (hi - v) * sy)}"
                   for i, v in enumerate(f0))
    parts.append(f'<polyline points="{pts}" fill="none" stroke="{_F0_LINE}" '
                 f'stroke-width="1.5"/>')
    parts.append(_text(16, top + F0_HEIGHT / 2, "semitones", anchor="middle",
                       size=11, rotate=True))
    return parts


def _uv_panel(uv: np.ndarray, frame: _Frame, top: float) -> list[str]:
    parts = [_text(frame.x0, top - 6, "voicing (filled = unvoiced)")]
    parts.append(f'<rect x="{_fmt(frame.x0)}" y="{_fmt(top)}" '
                 f'width="{_fmt(frame.width)}" height="{UV_HEIGHT}" '
                 f'fill="none" stroke="{_GRID}"/>')
    for a, b in unvoiced_spans(uv):
        parts.append(f'<rect class="uv" x="{_fmt(frame.x(a))}" y="{_fmt(top)}" '
                     f'width="{_fmt((b - a) * frame.sx)}" height="{UV_HEIGHT}" '
                     f'fill="{_UV_FILL}"/>')
    return parts


def _spectral_panel(spec: np.ndarray, frame: _Frame, top: float) -> list[str]:
    n, dim = spec.shape
    bucket = int(np.ceil(n / MAX_HEATMAP_COLUMNS))
    cols = [spec[i:i + bucket].mean(axis=0) for i in range(0, n, bucket)]
    lo, hi = float(spec.min()), float(spec.max())
    scale = (hi - lo) if hi > lo else 1.0
    cell_h = SPECTRAL_HEIGHT / dim
    parts = [_text(frame.x0, top - 6, "spectral frames (dark = high)")]
    for c, col in enumerate(cols):
        x = frame.x(c * bucket)
        w = (min(n, (c + 1) * bucket) - c * bucket) * frame.sx
        for d in range(dim):
            g = int(round(235 - 205 * (float(col[d]) - lo) / scale))
            # channel 0 at the bottom, like a spectrogram
            y = top + (dim - 1 - d) * cell_h
            parts.append(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" '
                         f'width="{_fmt(w)}" height="{_fmt(cell_h)}" '
                         f'fill="#{g:02x}{g:02x}{g:02x}"/>')
    parts.append(_text(16, top + SPECTRAL_HEIGHT / 2, "channel", anchor="middle",
                       size=11, rotate=True))
    return parts


def _frame_axis(frame: _Frame, top: float) -> list[str]:
    parts = [f'<line x1="{_fmt(frame.x0)}" y1="{_fmt(top)}" '
             f'x2="{_fmt(frame.x0 + frame.width)}" y2="{_fmt(top)}" '
             f'stroke="{_INK}" stroke-width="1"/>']
    for tick in _ticks(0, frame.n):
        x = frame.x(tick)
        parts.append(f'<line x1="{_fmt(x)}" y1="{_fmt(top)}" x2="{_fmt(x)}" '
                     f'y2="{_fmt(top + 5)}" stroke="{_INK}" stroke-width="1"/>')
        parts.append(_text(x, top + 18, str(int(tick)), anchor="middle", size=11))
    parts.append(_text(frame.x0 + frame.width / 2, top + 32, "frames",
                       anchor="middle"))
    return parts


def render_tracks_svg(tracks: dict, title: Optional[str] = None) -> str:
    """Render a dict with any of "f0", "uv", "spectral" to an SVG document.

    All provided tracks must be nonempty and share a frame count.
    """
    f0 = None if tracks.get("f0") is None else np.asarray(tracks["f0"], dtype=np.float64)
    uv = None if tracks.get("uv") is None else np.asarray(tracks["uv"])
    spec = None if tracks.get("spectral") is None else np.asarray(tracks["spectral"], dtype=np.float64)
    lengths = {name: len(a) for name, a in
               (("f0", f0), ("uv", uv), ("spectral", spec)) if a is not None}
    if not lengths:
        raise ShapeError("nothing to plot: provide f0, uv, or spectral")
    if any(n == 0 for n in lengths.values()):
        raise ShapeError(f"empty track: {lengths}")
    if len(set(lengths.values())) != 1:
        raise ShapeError(f"track lengths disagree: {lengths}")
    if f0 is not None and not np.all(np.isfinite(f0)):
        raise ShapeError("f0 contains non-finite values")
    if spec is not None:
        if spec.ndim != 2:
            raise ShapeError(f"spectral track must be 2-d, got shape {spec.shape}")
        if not np.all(np.isfinite(spec)):
            raise ShapeError("spectral track contains non-finite values")

    frame = _Frame(next(iter(lengths.values())))
    body: list[str] = []
    top = MARGIN_TOP + (18 if title else 0)
    if title:
        body.append(_text(MARGIN_LEFT, MARGIN_TOP - 8, title, size=14))
    if f0 is not None:
        body.extend(_f0_panel(f0, frame, top + 14))
        top += 14 + F0_HEIGHT + PANEL_GAP
    if uv is not None:
        body.extend(_uv_panel(uv, frame, top + 14))
        top += 14 + UV_HEIGHT + PANEL_GAP
    if spec is not None:
        body.extend(_spectral_panel(spec, frame, top + 14))
        top += 14 + SPECTRAL_HEIGHT + PANEL_GAP
    body.extend(_frame_axis(frame, top))
    height = top + AXIS_HEIGHT
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
            f'height="{int(height)}" viewBox="0 0 {WIDTH} {int(height)}">'
            f'<rect width="{WIDTH}" height="{int(height)}" fill="#ffffff"/>')
    return head + "".join(body) + "</svg>"
