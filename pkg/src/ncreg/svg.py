"""Minimal static SVG charts (line traces and bar summaries)."""

from xml.sax.saxutils import escape

import numpy as np

W, H = 640, 400
PAD = 60


def _frame(title, body, xlabel="", ylabel=""):
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">\n'
        f'<rect width="{W}" height="{H}" fill="white"/>\n'
        f'<text x="{W / 2}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{escape(title)}</text>\n'
        f'<line x1="{PAD}" y1="{H - PAD}" x2="{W - PAD}" y2="{H - PAD}" stroke="black"/>\n'
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{H - PAD}" stroke="black"/>\n'
        f'<text x="{W / 2}" y="{H - 15}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(xlabel)}</text>\n'
        f'<text x="15" y="{H / 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 15 {H / 2})">{escape(ylabel)}</text>\n'
        f"{body}</svg>\n"
    )


def _tick(y, value):
    return (f'<text x="{PAD - 5}" y="{y + 4:.1f}" text-anchor="end" font-family="sans-serif" '
            f'font-size="10">{value:.3g}</text>\n')


def line_plot(values, title="loss", xlabel="step", ylabel="loss", log=True):
    """Polyline of a 1-D trace; log scale when every value is positive."""
    y = np.asarray(values, dtype=np.float64)
    if len(y) == 0:
        return _frame(title, "", xlabel, ylabel)
    use_log = log and np.all(y > 0)
    t = np.log10(y) if use_log else y
    lo, hi = float(t.min()), float(t.max())
    if hi == lo:
        hi = lo + 1.0
    xs = PAD + (W - 2 * PAD) * np.arange(len(t)) / max(len(t) - 1, 1)
    ys = H - PAD - (H - 2 * PAD) * (t - lo) / (hi - lo)
    pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(xs, ys))
    body = f'<polyline fill="none" stroke="steelblue" stroke-width="1.2" points="{pts}"/>\n'
    body += _tick(H - PAD, 10 ** lo if use_log else lo) + _tick(PAD, 10 ** hi if use_log else hi)
    return _frame(title, body, xlabel, ylabel + (" (log)" if use_log else ""))


def bar_chart(labels, values, errors=None, title="", ylabel=""):
    """Vertical bars with optional symmetric error bars."""
    v = np.asarray(values, dtype=np.float64)
    e = np.zeros_like(v) if errors is None else np.nan_to_num(np.asarray(errors, dtype=np.float64))
    top = float(np.max(v + e)) if len(v) else 1.0
    top = top if top > 0 else 1.0
    slot = (W - 2 * PAD) / max(len(v), 1)
    body = ""
    for i, (lab, val, err) in enumerate(zip(labels, v, e)):
        x = PAD + i * slot + slot * 0.15
        h = (H - 2 * PAD) * max(val, 0.0) / top
        body += (f'<rect x="{x:.1f}" y="{H - PAD - h:.1f}" width="{slot * 0.7:.1f}" height="{h:.1f}" '
                 f'fill="steelblue"/>\n')
        if err > 0:
            cx = x + slot * 0.35
            y0 = H - PAD - (H - 2 * PAD) * (val - err) / top
            y1 = H - PAD - (H - 2 * PAD) * (val + err) / top
            body += f'<line x1="{cx:.1f}" y1="{y0:.1f}" x2="{cx:.1f}" y2="{y1:.1f}" stroke="black"/>\n'
        body += (f'<text x="{x + slot * 0.35:.1f}" y="{H - PAD + 14}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="10">{escape(str(lab))}</text>\n')
    body += _tick(PAD, top) + _tick(H - PAD, 0.0)
    return _frame(title, body, "", ylabel)
