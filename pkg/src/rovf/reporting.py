"""Human-readable artifacts: metrics table and SVG line plots.

SVG is written directly (no plotting dependency, no display) so report
bytes are a pure function of the data.
"""

from __future__ import annotations

from pathlib import Path

_PALETTE = ("#1f6fb2", "#d1495b", "#3d8f5f", "#8a6fb8", "#c98a2b")


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def svg_line_plot(
    series: list[tuple[str, list[float], list[float]]],
    title: str,
    xlabel: str,
    ylabel: str,
    width: int = 720,
    height: int = 440,
) -> str:
    """One SVG document with a polyline per (label, xs, ys) series."""
    if not series or any(len(xs) == 0 or len(xs) != len(ys) for _, xs, ys in series):
        raise ValueError("each series needs matching, non-empty xs and ys")
    left, right, top, bottom = 70.0, 20.0, 42.0, 52.0
    plot_w = width - left - right
    plot_h = height - top - bottom

    all_x = [x for _, xs, _ in series for x in xs]
    all_y = [y for _, _, ys in series for y in ys]
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = min(all_y), max(all_y)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0 if y_lo != 0 else 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def sx(x: float) -> float:
        return left + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y: float) -> float:
        return top + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="16">{title}</text>',
    ]
    # axes
    parts.append(
        f'<line x1="{left:.1f}" y1="{top + plot_h:.1f}" x2="{left + plot_w:.1f}" '
        f'y2="{top + plot_h:.1f}" stroke="black"/>'
    )
    parts.append(
        f'<line x1="{left:.1f}" y1="{top:.1f}" x2="{left:.1f}" y2="{top + plot_h:.1f}" '
        f'stroke="black"/>'
    )
    n_ticks = 5
    for i in range(n_ticks + 1):
        fx = x_lo + (x_hi - x_lo) * i / n_ticks
        px = sx(fx)
        parts.append(
            f'<line x1="{px:.2f}" y1="{top + plot_h:.1f}" x2="{px:.2f}" '
            f'y2="{top + plot_h + 5:.1f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{px:.2f}" y="{top + plot_h + 20:.1f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{_fmt(fx)}</text>'
        )
        fy = y_lo + (y_hi - y_lo) * i / n_ticks
        py = sy(fy)
        parts.append(
            f'<line x1="{left - 5:.1f}" y1="{py:.2f}" x2="{left:.1f}" y2="{py:.2f}" '
            f'stroke="black"/>'
        )
        parts.append(
            f'<text x="{left - 8:.1f}" y="{py + 4:.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{_fmt(fy)}</text>'
        )
    parts.append(
        f'<text x="{left + plot_w / 2:.1f}" y="{height - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">{xlabel}</text>'
    )
    parts.append(
        f'<text x="18" y="{top + plot_h / 2:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 18 {top + plot_h / 2:.1f})">{ylabel}</text>'
    )
    for idx, (label, xs, ys) in enumerate(series):
        color = _PALETTE[idx % len(_PALETTE)]
        points = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>'
        )
        if len(series) > 1:
            ly = top + 16 * idx
            parts.append(
                f'<line x1="{left + plot_w - 110:.1f}" y1="{ly:.1f}" '
                f'x2="{left + plot_w - 90:.1f}" y2="{ly:.1f}" stroke="{color}" stroke-width="2"/>'
            )
            parts.append(
                f'<text x="{left + plot_w - 84:.1f}" y="{ly + 4:.1f}" '
                f'font-family="sans-serif" font-size="11">{label}</text>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def metrics_table_csv(rows: list[dict]) -> str:
    """Table shaped like the headline results: one row per evaluated model."""
    lines = ["model,epochs,top1,top3,epoch_time_s"]
    for row in rows:
        epochs = row.get("epochs", "-")
        epoch_time = row.get("epoch_time_s")
        time_txt = f"{epoch_time:.2f}" if isinstance(epoch_time, (int, float)) else "-"
        lines.append(
            f"{row['model']},{epochs},{row['top1']:.4f},{row['top3']:.4f},{time_txt}"
        )
    return "\n".join(lines) + "\n"


def write_text(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.write_text(text)
    return path
