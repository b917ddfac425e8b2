"""Minimal SVG plots written by hand: polylines over a framed axis box."""
from __future__ import annotations

import math

import numpy as np

W, H = 640, 420
PAD_L, PAD_R, PAD_T, PAD_B = 70, 20, 30, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


class _Canvas:
    def __init__(self, xlim, ylim, title, xlabel, ylabel, ylog=False):
        self.x0, self.x1 = xlim
        self.ylog = ylog
        lo, hi = ylim
        if ylog:
            lo, hi = math.log10(lo), math.log10(hi)
        if hi <= lo:
            hi = lo + 1.0
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        self.y0, self.y1 = lo, hi
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
            f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
            f'<rect x="{PAD_L}" y="{PAD_T}" width="{W - PAD_L - PAD_R}" height="{H - PAD_T - PAD_B}" '
            'fill="none" stroke="black"/>',
            f'<text x="{W / 2}" y="18" text-anchor="middle" font-size="14">{title}</text>',
            f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle" font-size="12">{xlabel}</text>',
            f'<text x="15" y="{H / 2}" text-anchor="middle" font-size="12" '
            f'transform="rotate(-90 15 {H / 2})">{ylabel}</text>',
        ]
        self._ticks()

    def px(self, x):
        return PAD_L + (x - self.x0) / (self.x1 - self.x0) * (W - PAD_L - PAD_R)

    def py(self, y):
        if self.ylog:
            y = math.log10(y)
        return H - PAD_B - (y - self.y0) / (self.y1 - self.y0) * (H - PAD_T - PAD_B)

    def _ticks(self):
        for k in range(6):
            x = self.x0 + k * (self.x1 - self.x0) / 5
            X = self.px(x)
            self.parts.append(f'<line x1="{_fmt(X)}" y1="{H - PAD_B}" x2="{_fmt(X)}" y2="{H - PAD_B + 5}" stroke="black"/>')
            self.parts.append(f'<text x="{_fmt(X)}" y="{H - PAD_B + 18}" text-anchor="middle" font-size="10">{x:.3g}</text>')
        if self.ylog:
            ticks = [10.0**e for e in range(math.floor(self.y0), math.ceil(self.y1) + 1)
                     if self.y0 <= e <= self.y1]
        else:
            ticks = [self.y0 + k * (self.y1 - self.y0) / 5 for k in range(6)]
        for y in ticks:
            Y = self.py(y)
            self.parts.append(f'<line x1="{PAD_L - 5}" y1="{_fmt(Y)}" x2="{PAD_L}" y2="{_fmt(Y)}" stroke="black"/>')
            self.parts.append(f'<text x="{PAD_L - 8}" y="{_fmt(Y + 3)}" text-anchor="end" font-size="10">{y:.3g}</text>')

    def polyline(self, xs, ys, color, width=1.5, dash=None):
        pts = " ".join(f"{_fmt(self.px(x))},{_fmt(self.py(y))}" for x, y in zip(xs, ys)
                       if math.isfinite(x) and math.isfinite(y) and (not self.ylog or y > 0))
        if not pts:
            return
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>')

    def band(self, xs, lo, hi, color, opacity=0.2):
        pts = [(x, y) for x, y in zip(xs, hi)] + [(x, y) for x, y in zip(xs[::-1], lo[::-1])]
        pts = [p for p in pts if math.isfinite(p[1]) and (not self.ylog or p[1] > 0)]
        if len(pts) < 3:
            return
        s = " ".join(f"{_fmt(self.px(x))},{_fmt(self.py(y))}" for x, y in pts)
        self.parts.append(f'<polygon points="{s}" fill="{color}" fill-opacity="{opacity}" stroke="none"/>')

    def legend(self, labels):
        for k, (label, color) in enumerate(labels):
            y = PAD_T + 15 + 15 * k
            self.parts.append(f'<line x1="{W - PAD_R - 120}" y1="{y}" x2="{W - PAD_R - 100}" y2="{y}" stroke="{color}" stroke-width="2"/>')
            self.parts.append(f'<text x="{W - PAD_R - 95}" y="{y + 4}" font-size="10">{label}</text>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>", ""])


def survival_svg(curve, fit=None) -> str:
    """Survival estimates with Wilson band on a log ordinate, plus the fitted line."""
    T = np.asarray(curve.horizons, float)
    p = np.asarray(curve.estimates, float)
    positive = np.concatenate([p[p > 0], curve.ci_high[curve.ci_high > 0]])
    floor = 0.5 / max(curve.n_runs, 1)
    lo = max(min(positive.min() if len(positive) else floor, floor), 1e-12)
    c = _Canvas((0.0, float(T.max())), (lo, 1.0), "Survival P(extinction time >= T)", "T", "probability", ylog=True)
    c.band(T, np.maximum(curve.ci_low, lo), curve.ci_high, COLORS[0])
    c.polyline(T, p, COLORS[0], 2.0)
    labels = [("estimate", COLORS[0])]
    if fit is not None and fit.available:
        xs = np.linspace(0.0, float(T.max()), 50)
        c.polyline(xs, np.exp(fit.intercept - fit.c_hat * xs), COLORS[1], 1.5, dash="5,3")
        labels.append((f"fit c={fit.c_hat:.3g}", COLORS[1]))
    c.legend(labels)
    return c.render()


def fan_svg(times, levels, quantiles, title="Front quantiles") -> str:
    """Fan chart: symmetric quantile pairs as bands, the median as a line."""
    times = np.asarray(times, float)
    q = np.asarray(quantiles, float)
    finite = q[np.isfinite(q)]
    top = float(finite.max()) if len(finite) else 1.0
    c = _Canvas((0.0, float(times.max())), (0.0, top * 1.05), title, "t", "distance from origin")
    levels = list(levels)
    for j, lv in enumerate(levels):
        k = next((i for i, u in enumerate(levels) if abs(u - (1 - lv)) < 1e-12), None)
        if k is not None and lv < 0.5:
            c.band(times, q[:, j], q[:, k], COLORS[0], 0.15)
    labels = []
    for j, lv in enumerate(levels):
        if abs(lv - 0.5) < 1e-12:
            c.polyline(times, q[:, j], COLORS[0], 2.0)
            labels.append(("median", COLORS[0]))
        elif lv >= 0.99 - 1e-12:
            c.polyline(times, q[:, j], COLORS[1], 1.2, dash="4,3")
            labels.append((f"q{lv:g}", COLORS[1]))
    c.legend(labels)
    return c.render()
