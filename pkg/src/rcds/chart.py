"""Standalone SVG chart: risk and usage curves against the threshold grid.

Dual-axis line chart with the resource cap drawn on the usage axis, the
feasible region shaded, and the chosen threshold marked. Pure string
assembly with fixed-precision numbers, so output is byte-stable.
"""

import numpy as np

WIDTH, HEIGHT = 860, 520
ML, MR, MT, MB = 70, 70, 48, 56

RISK_COLOR = "#b2182b"
USAGE_COLOR = "#2166ac"
KAPPA_COLOR = "#636363"
FEASIBLE_COLOR = "#a6dba0"
CHOSEN_COLOR = "#1a1a1a"


def _f(v):
    return f"{v:.2f}"


def _ticks(lo, hi, n=6):
    if hi <= lo:
        hi = lo + 1.0
    raw = np.linspace(lo, hi, n)
    return raw


def render_chart(table, kappa, selection=None, title="Risk and usage by threshold"):
    """Render the dose-response table and cap into a standalone SVG string."""
    xs = np.asarray(table.xs, dtype=float)
    order = np.argsort(xs)
    xs = xs[order]
    risk = np.asarray(table.risk, dtype=float)[order]
    usage = np.asarray(table.usage, dtype=float)[order]

    x_lo, x_hi = float(xs.min()), float(xs.max())
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 1.0, x_hi + 1.0
    r_hi = max(float(np.nanmax(risk)) * 1.2, 1e-6)
    u_hi = max(float(np.nanmax(usage)), float(kappa)) * 1.15

    pw = WIDTH - ML - MR
    ph = HEIGHT - MT - MB

    def sx(v):
        return ML + (v - x_lo) / (x_hi - x_lo) * pw

    def sr(v):
        return MT + ph - v / r_hi * ph

    def su(v):
        return MT + ph - v / u_hi * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="16">{title}</text>',
    ]

    # feasible region: contiguous x-ranges with usage <= kappa
    feasible = usage <= kappa
    runs = []
    start = None
    for i, ok in enumerate(feasible):
        if ok and start is None:
            start = i
        if (not ok or i == len(feasible) - 1) and start is not None:
            end = i if ok else i - 1
            runs.append((start, end))
            start = None
    for a, b in runs:
        x0, x1 = sx(xs[a]), sx(xs[b])
        if x1 > x0:
            parts.append(
                f'<rect x="{_f(x0)}" y="{MT}" width="{_f(x1 - x0)}" '
                f'height="{ph}" fill="{FEASIBLE_COLOR}" opacity="0.35"/>'
            )

    # axes
    parts.append(
        f'<line x1="{ML}" y1="{MT + ph}" x2="{ML + pw}" y2="{MT + ph}" '
        'stroke="black" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{MT + ph}" '
        'stroke="black" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{ML + pw}" y1="{MT}" x2="{ML + pw}" y2="{MT + ph}" '
        'stroke="black" stroke-width="1"/>'
    )
    for v in _ticks(x_lo, x_hi):
        parts.append(
            f'<text x="{_f(sx(v))}" y="{MT + ph + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{v:.0f}</text>'
        )
    for v in _ticks(0, r_hi):
        parts.append(
            f'<text x="{ML - 8}" y="{_f(sr(v) + 4)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11" '
            f'fill="{RISK_COLOR}">{v:.3f}</text>'
        )
    for v in _ticks(0, u_hi):
        parts.append(
            f'<text x="{ML + pw + 8}" y="{_f(su(v) + 4)}" text-anchor="start" '
            f'font-family="sans-serif" font-size="11" '
            f'fill="{USAGE_COLOR}">{v:.2f}</text>'
        )
    parts.append(
        f'<text x="{ML + pw / 2:.1f}" y="{HEIGHT - 14}" text-anchor="middle" '
        'font-family="sans-serif" font-size="12">threshold</text>'
    )

    # confidence bands when present
    if not np.all(np.isnan(np.asarray(table.risk_lo, dtype=float))):
        rl = np.asarray(table.risk_lo, dtype=float)[order]
        rh = np.asarray(table.risk_hi, dtype=float)[order]
        pts = [f"{_f(sx(x))},{_f(sr(v))}" for x, v in zip(xs, rh)]
        pts += [f"{_f(sx(x))},{_f(sr(v))}" for x, v in zip(xs[::-1], rl[::-1])]
        parts.append(
            f'<polygon points="{" ".join(pts)}" fill="{RISK_COLOR}" '
            'opacity="0.12"/>'
        )
    if not np.all(np.isnan(np.asarray(table.usage_lo, dtype=float))):
        ul = np.asarray(table.usage_lo, dtype=float)[order]
        uh = np.asarray(table.usage_hi, dtype=float)[order]
        pts = [f"{_f(sx(x))},{_f(su(v))}" for x, v in zip(xs, uh)]
        pts += [f"{_f(sx(x))},{_f(su(v))}" for x, v in zip(xs[::-1], ul[::-1])]
        parts.append(
            f'<polygon points="{" ".join(pts)}" fill="{USAGE_COLOR}" '
            'opacity="0.12"/>'
        )

    # curves (points when the table has a single row)
    risk_pts = [f"{_f(sx(x))},{_f(sr(v))}" for x, v in zip(xs, risk)]
    usage_pts = [f"{_f(sx(x))},{_f(su(v))}" for x, v in zip(xs, usage)]
    if len(xs) > 1:
        parts.append(
            f'<polyline points="{" ".join(risk_pts)}" fill="none" '
            f'stroke="{RISK_COLOR}" stroke-width="2"/>'
        )
        parts.append(
            f'<polyline points="{" ".join(usage_pts)}" fill="none" '
            f'stroke="{USAGE_COLOR}" stroke-width="2"/>'
        )
    for x, v in zip(xs, risk):
        parts.append(
            f'<circle cx="{_f(sx(x))}" cy="{_f(sr(v))}" r="2.5" '
            f'fill="{RISK_COLOR}"/>'
        )
    for x, v in zip(xs, usage):
        parts.append(
            f'<circle cx="{_f(sx(x))}" cy="{_f(su(v))}" r="2.5" '
            f'fill="{USAGE_COLOR}"/>'
        )

    # resource cap on the usage axis
    parts.append(
        f'<line x1="{ML}" y1="{_f(su(kappa))}" x2="{ML + pw}" '
        f'y2="{_f(su(kappa))}" stroke="{KAPPA_COLOR}" stroke-width="1.5" '
        'stroke-dasharray="6,4"/>'
    )
    parts.append(
        f'<text x="{ML + pw - 4}" y="{_f(su(kappa) - 6)}" text-anchor="end" '
        f'font-family="sans-serif" font-size="11" fill="{KAPPA_COLOR}">'
        f'cap = {kappa:g}</text>'
    )

    # chosen threshold
    if selection is not None and selection.chosen_x is not None:
        cx = sx(selection.chosen_x)
        parts.append(
            f'<line x1="{_f(cx)}" y1="{MT}" x2="{_f(cx)}" y2="{MT + ph}" '
            f'stroke="{CHOSEN_COLOR}" stroke-width="1" stroke-dasharray="3,3"/>'
        )
        parts.append(
            f'<circle cx="{_f(cx)}" cy="{_f(sr(selection.chosen_risk))}" '
            f'r="5" fill="none" stroke="{CHOSEN_COLOR}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{_f(cx)}" y="{MT - 6}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12" fill="{CHOSEN_COLOR}">'
            f'chosen x = {selection.chosen_x:g}</text>'
        )

    # legend
    parts.append(
        f'<rect x="{ML + 10}" y="{MT + 8}" width="12" height="3" '
        f'fill="{RISK_COLOR}"/>'
    )
    parts.append(
        f'<text x="{ML + 28}" y="{MT + 13}" font-family="sans-serif" '
        f'font-size="11">risk at horizon (left)</text>'
    )
    parts.append(
        f'<rect x="{ML + 10}" y="{MT + 24}" width="12" height="3" '
        f'fill="{USAGE_COLOR}"/>'
    )
    parts.append(
        f'<text x="{ML + 28}" y="{MT + 29}" font-family="sans-serif" '
        f'font-size="11">expected measurements (right)</text>'
    )

    parts.append("</svg>")
    return "\n".join(parts)
