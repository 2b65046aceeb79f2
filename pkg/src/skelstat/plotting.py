"""Tiny SVG line-plot writer for sorted p-value curves."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def pvalue_plot_svg(curves, alpha=None, title="", width=640, height=420):
    """SVG text with one polyline per ``{label: sorted p-values}`` entry and an optional alpha line."""
    ml, mr, mt, mb = 60, 150, 36, 46
    pw, ph = width - ml - mr, height - mt - mb
    K = max(len(v) for v in curves.values())

    def xy(i, p):
        x = ml + (i / max(K - 1, 1)) * pw
        y = mt + (1.0 - float(p)) * ph
        return f"{x:.2f},{y:.2f}"

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<text x="{width / 2 - mr / 2:.0f}" y="20" text-anchor="middle" font-size="14">'
           f'{escape(title)}</text>',
           f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
           f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>']
    for t in np.linspace(0, 1, 6):
        y = mt + (1 - t) * ph
        out.append(f'<line x1="{ml - 4}" y1="{y:.2f}" x2="{ml}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{ml - 8}" y="{y + 4:.2f}" text-anchor="end">{t:.1f}</text>')
    for i in sorted({0, (K - 1) // 2, K - 1}):
        x = ml + (i / max(K - 1, 1)) * pw
        out.append(f'<text x="{x:.2f}" y="{mt + ph + 18}" text-anchor="middle">{i + 1}</text>')
    out.append(f'<text x="{ml + pw / 2:.0f}" y="{height - 8}" text-anchor="middle">'
               'GOPs sorted by p-value</text>')
    out.append(f'<text x="16" y="{mt + ph / 2:.0f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {mt + ph / 2:.0f})">p-value</text>')
    if alpha is not None:
        y = mt + (1 - alpha) * ph
        out.append(f'<line x1="{ml}" y1="{y:.2f}" x2="{ml + pw}" y2="{y:.2f}" '
                   'stroke="gray" stroke-dasharray="5,4"/>')
        out.append(f'<text x="{ml + pw + 6}" y="{y + 4:.2f}">alpha = {alpha:g}</text>')
    for k, (label, vals) in enumerate(curves.items()):
        color = _COLORS[k % len(_COLORS)]
        pts = " ".join(xy(i, p) for i, p in enumerate(np.sort(np.asarray(vals, float))))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = mt + 20 + 18 * k
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly - 4}" x2="{ml + pw + 30}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 36}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_pvalue_plot(report, path, title=None):
    svg = pvalue_plot_svg({"raw": report.raw_p, "BH": report.bh_p, "Bonferroni": report.bonf_p},
                          alpha=report.alpha, title=title or f"{report.mode.upper()} GOPs (K={report.K})")
    with open(path, "w") as fh:
        fh.write(svg)
