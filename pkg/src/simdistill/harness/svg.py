"""Static SVG 1.1 charts: polyline curves and point scatters.

No plotting dependency — runs emit a small deterministic subset of SVG
(text, line, polyline, circle, rect). The same data always produces the
same bytes, so chart files can be diffed across runs.
"""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_FONT = 'font-family="Helvetica,Arial,sans-serif"'


def _fmt(v: float) -> str:
    """Fixed-precision coordinate formatting keeps output byte-stable."""
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _tick_label(v: float) -> str:
    return f"{v:.6g}"


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    """Round tick positions at a 1/2/5 step covering [lo, hi]."""
    if not np.isfinite(lo) or not np.isfinite(hi):
        return [0.0]
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    raw = span / max(n, 1)
    mag = 10.0 ** np.floor(np.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = np.ceil(lo / step) * step
    ticks = list(np.arange(first, hi + 0.5 * step, step))
    return [float(t) for t in ticks] or [lo]


class _Frame:
    """Maps data coordinates into the pixel plot box and draws the frame."""

    def __init__(self, width, height, x_range, y_range, title, x_label, y_label, log_y):
        self.width, self.height = width, height
        self.left, self.right = 62.0, width - 16.0
        self.top, self.bottom = 34.0, height - 42.0
        self.log_y = log_y
        x_lo, x_hi = x_range
        y_lo, y_hi = y_range
        if x_hi <= x_lo:
            x_lo, x_hi = x_lo - 0.5, x_lo + 0.5
        if y_hi <= y_lo:
            y_lo, y_hi = y_lo - 0.5, y_lo + 0.5
        self.x_lo, self.x_hi = x_lo, x_hi
        self.y_lo, self.y_hi = y_lo, y_hi
        self.parts: list[str] = [
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
            f'width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">',
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
            f'<text x="{_fmt(width / 2)}" y="20" text-anchor="middle" {_FONT} '
            f'font-size="14">{escape(title)}</text>',
        ]
        self._frame_and_ticks(x_label, y_label)

    def px(self, x: float) -> float:
        f = (x - self.x_lo) / (self.x_hi - self.x_lo)
        return self.left + f * (self.right - self.left)

    def py(self, y: float) -> float:
        if self.log_y:
            f = (np.log10(y) - np.log10(self.y_lo)) / (np.log10(self.y_hi) - np.log10(self.y_lo))
        else:
            f = (y - self.y_lo) / (self.y_hi - self.y_lo)
        return self.bottom - f * (self.bottom - self.top)

    def _frame_and_ticks(self, x_label: str, y_label: str) -> None:
        p = self.parts
        p.append(
            f'<rect x="{_fmt(self.left)}" y="{_fmt(self.top)}" '
            f'width="{_fmt(self.right - self.left)}" height="{_fmt(self.bottom - self.top)}" '
            f'fill="none" stroke="#444" stroke-width="1"/>'
        )
        for t in _nice_ticks(self.x_lo, self.x_hi):
            if not (self.x_lo <= t <= self.x_hi):
                continue
            x = self.px(t)
            p.append(
                f'<line x1="{_fmt(x)}" y1="{_fmt(self.bottom)}" x2="{_fmt(x)}" '
                f'y2="{_fmt(self.bottom + 4)}" stroke="#444" stroke-width="1"/>'
            )
            p.append(
                f'<text x="{_fmt(x)}" y="{_fmt(self.bottom + 16)}" text-anchor="middle" '
                f'{_FONT} font-size="10">{_tick_label(t)}</text>'
            )
        if self.log_y:
            lo_exp = int(np.floor(np.log10(self.y_lo)))
            hi_exp = int(np.ceil(np.log10(self.y_hi)))
            y_ticks = [10.0 ** e for e in range(lo_exp, hi_exp + 1)]
        else:
            y_ticks = _nice_ticks(self.y_lo, self.y_hi)
        for t in y_ticks:
            if not (self.y_lo <= t <= self.y_hi):
                continue
            y = self.py(t)
            p.append(
                f'<line x1="{_fmt(self.left - 4)}" y1="{_fmt(y)}" x2="{_fmt(self.left)}" '
                f'y2="{_fmt(y)}" stroke="#444" stroke-width="1"/>'
            )
            p.append(
                f'<text x="{_fmt(self.left - 7)}" y="{_fmt(y + 3)}" text-anchor="end" '
                f'{_FONT} font-size="10">{_tick_label(t)}</text>'
            )
        p.append(
            f'<text x="{_fmt((self.left + self.right) / 2)}" y="{_fmt(self.height - 8)}" '
            f'text-anchor="middle" {_FONT} font-size="11">{escape(x_label)}</text>'
        )
        p.append(
            f'<text x="14" y="{_fmt((self.top + self.bottom) / 2)}" text-anchor="middle" '
            f'{_FONT} font-size="11" transform="rotate(-90 14 '
            f'{_fmt((self.top + self.bottom) / 2)})">{escape(y_label)}</text>'
        )

    def legend(self, labels: list[str]) -> None:
        x0 = self.left + 10
        y = self.top + 14
        for i, label in enumerate(labels):
            color = PALETTE[i % len(PALETTE)]
            self.parts.append(
                f'<line x1="{_fmt(x0)}" y1="{_fmt(y - 3)}" x2="{_fmt(x0 + 18)}" '
                f'y2="{_fmt(y - 3)}" stroke="{color}" stroke-width="2"/>'
            )
            self.parts.append(
                f'<text x="{_fmt(x0 + 23)}" y="{_fmt(y)}" {_FONT} '
                f'font-size="10">{escape(label)}</text>'
            )
            y += 14

    def render(self) -> str:
        return "\n".join(self.parts) + "\n</svg>\n"


def _finite_pairs(xs, ys):
    xs = np.asarray(xs, dtype=float).ravel()
    ys = np.asarray(ys, dtype=float).ravel()
    keep = np.isfinite(xs) & np.isfinite(ys)
    return xs[keep], ys[keep]


def line_chart(
    series: list[tuple],
    path: str | Path | None = None,
    *,
    title: str = "",
    x_label: str = "",
    y_label: str = "",
    width: int = 640,
    height: int = 400,
    log_y: bool = False,
) -> str:
    """Draw ``(label, xs, ys)`` series as polylines; non-finite points are dropped.

    With ``log_y`` the y axis is decade-scaled and non-positive values are
    dropped along with the NaNs.
    """
    cleaned = []
    for label, xs, ys in series:
        xs, ys = _finite_pairs(xs, ys)
        if log_y:
            keep = ys > 0
            xs, ys = xs[keep], ys[keep]
        cleaned.append((label, xs, ys))
    all_x = np.concatenate([xs for _, xs, _ in cleaned]) if cleaned else np.zeros(0)
    all_y = np.concatenate([ys for _, _, ys in cleaned]) if cleaned else np.zeros(0)
    if all_x.size == 0:
        x_range, y_range = (0.0, 1.0), (0.1, 1.0) if log_y else (0.0, 1.0)
    else:
        x_range = (float(all_x.min()), float(all_x.max()))
        y_lo, y_hi = float(all_y.min()), float(all_y.max())
        if log_y:
            y_range = (y_lo / 1.5, y_hi * 1.5)
        else:
            pad = 0.05 * (y_hi - y_lo) or 0.5
            y_range = (y_lo - pad, y_hi + pad)
    frame = _Frame(width, height, x_range, y_range, title, x_label, y_label, log_y)
    for i, (label, xs, ys) in enumerate(cleaned):
        if xs.size == 0:
            continue
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_fmt(frame.px(x))},{_fmt(frame.py(y))}" for x, y in zip(xs, ys))
        frame.parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
    frame.legend([label for label, _, _ in cleaned])
    text = frame.render()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def scatter_plot(
    groups: list[tuple],
    path: str | Path | None = None,
    *,
    title: str = "",
    x_label: str = "x1",
    y_label: str = "x2",
    width: int = 480,
    height: int = 480,
    radius: float = 1.6,
) -> str:
    """Draw ``(label, points)`` groups of 2-D points as colored circles."""
    cleaned = []
    for label, pts in groups:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        pts = pts[np.isfinite(pts).all(axis=1)]
        cleaned.append((label, pts))
    stacked = (
        np.concatenate([p for _, p in cleaned if p.size], axis=0)
        if any(p.size for _, p in cleaned)
        else np.zeros((1, 2))
    )
    lo = stacked.min(axis=0)
    hi = stacked.max(axis=0)
    pad = 0.06 * np.maximum(hi - lo, 1e-9)
    frame = _Frame(
        width, height,
        (float(lo[0] - pad[0]), float(hi[0] + pad[0])),
        (float(lo[1] - pad[1]), float(hi[1] + pad[1])),
        title, x_label, y_label, log_y=False,
    )
    for i, (label, pts) in enumerate(cleaned):
        color = PALETTE[i % len(PALETTE)]
        for x, y in pts:
            frame.parts.append(
                f'<circle cx="{_fmt(frame.px(x))}" cy="{_fmt(frame.py(y))}" '
                f'r="{_fmt(radius)}" fill="{color}" fill-opacity="0.55"/>'
            )
    frame.legend([label for label, _ in cleaned])
    text = frame.render()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
