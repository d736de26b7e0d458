"""Self-contained SVG line charts; plain text output, byte-deterministic for
fixed input."""

from __future__ import annotations

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")

_W, _H = 720, 380
_PAD_L, _PAD_R, _PAD_T, _PAD_B = 60, 150, 30, 45


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def line_chart(series, title: str, xlabel: str, ylabel: str) -> str:
    """series: list of (name, xs, ys) with equal-length float lists."""
    series = [(n, list(xs), list(ys)) for n, xs, ys in series if len(xs) > 0]
    if not series:
        raise ValueError("no data to plot")
    all_x = [v for _, xs, _ in series for v in xs]
    all_y = [v for _, _, ys in series for v in ys]
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = min(all_y), max(all_y)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    plot_w = _W - _PAD_L - _PAD_R
    plot_h = _H - _PAD_T - _PAD_B

    def px(x):
        return _PAD_L + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y):
        return _PAD_T + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W // 2}" y="20" text-anchor="middle" font-size="14" '
        f'font-family="sans-serif">{title}</text>',
        f'<rect x="{_PAD_L}" y="{_PAD_T}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#cccccc"/>',
    ]
    for tx in _ticks(x_lo, x_hi):
        out.append(f'<line x1="{_fmt(px(tx))}" y1="{_PAD_T + plot_h}" x2="{_fmt(px(tx))}" '
                   f'y2="{_PAD_T + plot_h + 4}" stroke="black"/>')
        out.append(f'<text x="{_fmt(px(tx))}" y="{_PAD_T + plot_h + 16}" text-anchor="middle" '
                   f'font-size="10" font-family="sans-serif">{tx:.4g}</text>')
    for ty in _ticks(y_lo, y_hi):
        out.append(f'<line x1="{_PAD_L - 4}" y1="{_fmt(py(ty))}" x2="{_PAD_L}" '
                   f'y2="{_fmt(py(ty))}" stroke="black"/>')
        out.append(f'<text x="{_PAD_L - 7}" y="{_fmt(py(ty) + 3)}" text-anchor="end" '
                   f'font-size="10" font-family="sans-serif">{ty:.4g}</text>')
    out.append(f'<text x="{_PAD_L + plot_w // 2}" y="{_H - 8}" text-anchor="middle" '
               f'font-size="11" font-family="sans-serif">{xlabel}</text>')
    out.append(f'<text x="16" y="{_PAD_T + plot_h // 2}" text-anchor="middle" font-size="11" '
               f'font-family="sans-serif" transform="rotate(-90 16 {_PAD_T + plot_h // 2})">'
               f'{ylabel}</text>')
    for i, (name, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        points = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                   f'points="{points}"/>')
        ly = _PAD_T + 14 + 16 * i
        lx = _W - _PAD_R + 10
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{lx + 23}" y="{ly}" font-size="11" '
                   f'font-family="sans-serif">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
