"""Log-scaled SVG heatmaps of gridded values."""
import math

import numpy as np

# viridis anchors, evenly spaced on [0, 1]
RAMP = np.array([
    (68, 1, 84), (72, 40, 120), (62, 74, 137), (49, 104, 142), (38, 130, 142),
    (31, 158, 137), (53, 183, 121), (109, 205, 89), (180, 222, 44), (253, 231, 37),
], dtype=float)
MISSING = "#bdbdbd"


def colour(t):
    """Hex colour for t in [0, 1] on the fixed ramp."""
    t = min(max(float(t), 0.0), 1.0) * (len(RAMP) - 1)
    k = min(int(t), len(RAMP) - 2)
    rgb = RAMP[k] + (t - k) * (RAMP[k + 1] - RAMP[k])
    return "#%02x%02x%02x" % tuple(int(round(c)) for c in rgb)


def _scale(values, log):
    v = np.asarray(values, dtype=float)
    ok = np.isfinite(v) & ((v > 0) if log else True)
    if not ok.any():
        return np.full(v.shape, np.nan), (math.nan, math.nan)
    w = np.where(ok, np.log10(np.where(ok, v, 1.0)) if log else v, np.nan)
    lo, hi = float(np.nanmin(w)), float(np.nanmax(w))
    span = hi - lo if hi > lo else 1.0
    return (w - lo) / span, (lo, hi)


def heatmap(image, bounds, path, title="", log=True, cell=12):
    """Write a heatmap of ``image`` (nx, ny; x-major) covering ``bounds``.

    Non-finite cells, and non-positive cells on a log scale, are grey.
    """
    img = np.asarray(image, dtype=float)
    nx, ny = img.shape
    t, (lo, hi) = _scale(img, log)
    width, height = nx * cell, ny * cell
    bar = 16
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width + 90}" height="{height + 40}" '
        f'viewBox="0 0 {width + 90} {height + 40}" font-family="sans-serif" font-size="10">',
        f'<text x="0" y="12">{_escape(title)}</text>',
        '<g transform="translate(0,20)" shape-rendering="crispEdges">',
    ]
    for i in range(nx):
        for j in range(ny):
            fill = colour(t[i, j]) if np.isfinite(t[i, j]) else MISSING
            y = (ny - 1 - j) * cell
            out.append(f'<rect x="{i * cell}" y="{y}" width="{cell}" height="{cell}" fill="{fill}"/>')
    steps = 32
    for k in range(steps):
        y = height * (1 - (k + 1) / steps)
        out.append(f'<rect x="{width + 10}" y="{y:.3f}" width="{bar}" '
                   f'height="{height / steps:.3f}" fill="{colour((k + 0.5) / steps)}"/>')
    out.append("</g>")
    label = (lambda z: f"{10 ** z:.4g}") if log else (lambda z: f"{z:.4g}")
    if math.isfinite(lo):
        out.append(f'<text x="{width + 30}" y="{height + 20}">{label(lo)}</text>')
        out.append(f'<text x="{width + 30}" y="28">{label(hi)}</text>')
    x0, y0, x1, y1 = bounds
    out.append(f'<text x="0" y="{height + 34}">x [{x0:.4g}, {x1:.4g}]  y [{y0:.4g}, {y1:.4g}]'
               f'{"  log10 scale" if log else ""}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def _escape(s):
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
