"""Grouped bar charts as standalone SVG text.

Only ``<rect>`` (one per bar, nothing else), ``<line>`` and ``<text>`` are
emitted. Every bar value is also written as a text label so charts can be
checked without rendering them.
"""

from __future__ import annotations

from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def grouped_bar_chart(
    title: str,
    x_label: str,
    y_label: str,
    groups: Sequence[str],
    series: Sequence[tuple],
    y_max: float = 1.0,
    stamp: bool = False,
) -> str:
    """``series`` is a list of ``(name, values)`` with one value per group."""
    if not groups:
        raise ValueError("no groups to plot")
    for name, values in series:
        if len(values) != len(groups):
            raise ValueError(f"series {name!r} has {len(values)} values for {len(groups)} groups")

    width, height = 640, 400
    left, right, top, bottom = 70, 150, 50, 70
    plot_w = width - left - right
    plot_h = height - top - bottom
    base = top + plot_h
    y_max = max([y_max] + [v for _, vals in series for v in vals]) or 1.0

    def y_px(v):
        return base - plot_h * v / y_max

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
        f'<text x="{width / 2:.1f}" y="28" text-anchor="middle" font-size="16">{escape(title)}</text>',
        f'<line x1="{left}" y1="{base}" x2="{left + plot_w}" y2="{base}" stroke="#000"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{base}" stroke="#000"/>',
    ]
    for i in range(5):
        v = y_max * i / 4
        y = y_px(v)
        out.append(f'<line x1="{left - 4}" y1="{y:.1f}" x2="{left}" y2="{y:.1f}" stroke="#000"/>')
        out.append(f'<text x="{left - 8}" y="{y + 4:.1f}" text-anchor="end" font-size="11">{v:.2f}</text>')

    slot = plot_w / len(groups)
    bar_w = slot * 0.8 / max(len(series), 1)
    for g, label in enumerate(groups):
        x0 = left + g * slot + slot * 0.1
        for s, (name, values) in enumerate(series):
            v = float(values[g])
            x = x0 + s * bar_w
            y = y_px(v)
            out.append(
                f'<rect class="bar" x="{x:.1f}" y="{y:.1f}" width="{bar_w:.1f}" '
                f'height="{base - y:.1f}" fill="{COLORS[s % len(COLORS)]}" '
                f'data-group="{escape(str(label))}" data-series="{escape(name)}" data-value="{v!r}"/>'
            )
            out.append(f'<text x="{x + bar_w / 2:.1f}" y="{y - 3:.1f}" text-anchor="middle" '
                       f'font-size="9">{v:.3f}</text>')
        out.append(f'<text x="{left + (g + 0.5) * slot:.1f}" y="{base + 18}" text-anchor="middle" '
                   f'font-size="12">{escape(str(label))}</text>')

    out.append(f'<text x="{left + plot_w / 2:.1f}" y="{height - 20}" text-anchor="middle" '
               f'font-size="13">{escape(x_label)}</text>')
    out.append(f'<text x="18" y="{top + plot_h / 2:.1f}" text-anchor="middle" font-size="13" '
               f'transform="rotate(-90 18 {top + plot_h / 2:.1f})">{escape(y_label)}</text>')
    for s, (name, _) in enumerate(series):
        out.append(f'<text x="{left + plot_w + 12}" y="{top + 16 + 18 * s}" font-size="12" '
                   f'fill="{COLORS[s % len(COLORS)]}">&#9632; {escape(name)}</text>')
    if stamp:
        now = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        out.append(f'<text x="{width - 6}" y="{height - 6}" text-anchor="end" font-size="8">{now}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_chart(path, *args, **kwargs) -> Path:
    path = Path(path)
    path.write_text(grouped_bar_chart(*args, **kwargs))
    return path
