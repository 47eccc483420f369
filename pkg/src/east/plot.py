"""Tiny self-contained SVG writers for accuracy curves and mask heatmaps."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


def _svg(width: int, height: int, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">')
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>',
                      *body, "</svg>"]) + "\n"


def accuracy_chart(curves: list[tuple[str, list[tuple[float, float]]]],
                   title: str = "top-1 accuracy vs observation ratio",
                   width: int = 560, height: int = 380) -> str:
    """Line chart with one polyline per ``(label, [(rho, top1), ...])`` curve."""
    left, right, top, bottom = 60, 150, 40, 50
    pw, ph = width - left - right, height - top - bottom
    xs = [r for _, pts in curves for r, _ in pts] or [0.1, 0.9]
    x0, x1 = min(min(xs), 0.1), max(max(xs), 0.9)
    if x1 - x0 < 1e-9:
        x0, x1 = x0 - 0.05, x1 + 0.05

    def sx(x: float) -> float:
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y: float) -> float:
        return top + (1.0 - y) * ph

    body = [f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">'
            f'{escape(title)}</text>',
            f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
            f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for y in np.linspace(0, 1, 6):
        body.append(f'<line x1="{left - 4}" y1="{sy(y):.1f}" x2="{left + pw}" y2="{sy(y):.1f}" '
                    f'stroke="#dddddd"/>')
        body.append(f'<text x="{left - 8}" y="{sy(y) + 4:.1f}" text-anchor="end">{y:.1f}</text>')
    ticks = sorted({round(x, 6) for x in xs})
    for x in ticks:
        body.append(f'<line x1="{sx(x):.1f}" y1="{top + ph}" x2="{sx(x):.1f}" y2="{top + ph + 4}" '
                    f'stroke="black"/>')
        body.append(f'<text x="{sx(x):.1f}" y="{top + ph + 18}" text-anchor="middle">{x:g}</text>')
    body.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">'
                f'observation ratio</text>')
    body.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
                f'transform="rotate(-90 16 {top + ph / 2:.1f})">top-1 accuracy</text>')
    for n, (label, pts) in enumerate(curves):
        color = PALETTE[n % len(PALETTE)]
        coords = " ".join(f"{sx(r):.1f},{sy(a):.1f}" for r, a in sorted(pts))
        body.append(f'<polyline class="curve" data-label="{escape(label)}" points="{coords}" '
                    f'fill="none" stroke="{color}" stroke-width="2"/>')
        for r, a in pts:
            body.append(f'<circle cx="{sx(r):.1f}" cy="{sy(a):.1f}" r="3" fill="{color}"/>')
        ly = top + 10 + 20 * n
        body.append(f'<line x1="{left + pw + 15}" y1="{ly}" x2="{left + pw + 35}" y2="{ly}" '
                    f'stroke="{color}" stroke-width="2"/>')
        body.append(f'<text class="legend" x="{left + pw + 40}" y="{ly + 4}">{escape(label)}</text>')
    return _svg(width, height, body)


def mask_heatmap(clip: np.ndarray, keep: np.ndarray, ranks: np.ndarray, p: int, d: int,
                 cell: int = 24) -> str:
    """One panel per tubelet time step: the step's first frame, dimmed where masked.

    Retained cells get a colored outline whose opacity follows the cell's
    temporal-difference rank, so the panel doubles as a rank heatmap.
    """
    L, Hp, Wp = keep.shape
    gap, label_h = 10, 18
    pw, ph = Wp * cell, Hp * cell
    width = L * (pw + gap) + gap
    height = ph + label_h + 2 * gap
    peak = max(int(ranks.max()), 1)
    body = []
    for t in range(L):
        ox, oy = gap + t * (pw + gap), gap + label_h
        body.append(f'<text x="{ox}" y="{gap + 10}">t={t} kept {int(keep[t].sum())}</text>')
        frame = clip[t * d].mean(axis=-1)
        for i in range(Hp):
            for j in range(Wp):
                shade = int(frame[i * p:(i + 1) * p, j * p:(j + 1) * p].mean())
                if not keep[t, i, j]:
                    shade = shade // 4
                x, y = ox + j * cell, oy + i * cell
                body.append(f'<rect class="{"kept" if keep[t, i, j] else "masked"}" '
                            f'x="{x:.1f}" y="{y:.1f}" width="{cell}" height="{cell}" '
                            f'fill="rgb({shade},{shade},{shade})"/>')
                if keep[t, i, j]:
                    alpha = 0.25 + 0.75 * ranks[t, i, j] / peak
                    body.append(f'<rect x="{x + 0.5:.1f}" y="{y + 0.5:.1f}" width="{cell - 1}" '
                                f'height="{cell - 1}" fill="none" stroke="#ff5a00" '
                                f'stroke-opacity="{alpha:.2f}"/>')
    return _svg(width, height, body)
