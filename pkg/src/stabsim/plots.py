"""Self-contained SVG plots of sweep results.

Presentation only: nothing here feeds back into results.  The writer is
deliberately dependency-free and emits deterministic bytes so plot files
hash-verify like every other output.
"""

from __future__ import annotations

from .metrics import GainSweepRow

__all__ = ["sweep_plot_svg"]

_W, _H = 420, 320
_MARGIN = 48


def _fmt(v: float) -> str:
    return "%.2f" % v


def _panel(rows: list[GainSweepRow], use_retinal: bool, x0: int) -> list[str]:
    pts = [
        (r.gain, (r.motion_ratio_retinal if use_retinal else r.motion_ratio_world))
        for r in rows
    ]
    pts = [(g, v) for g, v in pts if v is not None]
    out = []
    label = "perceived / retinal" if use_retinal else "perceived / world"
    gx0, gy0 = x0 + _MARGIN, _H - _MARGIN
    gx1, gy1 = x0 + _W - 16, 24
    out.append(f'<rect x="{gx0}" y="{gy1}" width="{gx1 - gx0}" height="{gy0 - gy1}" fill="none" stroke="#999"/>')
    out.append(f'<text x="{x0 + _W / 2:.0f}" y="{_H - 10}" text-anchor="middle" font-size="12">gain</text>')
    out.append(
        f'<text x="{x0 + 14}" y="{_H / 2:.0f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 {x0 + 14} {_H / 2:.0f})">{label}</text>'
    )
    if not pts:
        return out
    gmin = min(g for g, _ in pts)
    gmax = max(g for g, _ in pts)
    vmax = max(1.5, max(v for _, v in pts))
    gspan = (gmax - gmin) or 1.0

    def sx(g: float) -> float:
        return gx0 + (g - gmin) / gspan * (gx1 - gx0)

    def sy(v: float) -> float:
        return gy0 - min(v, vmax) / vmax * (gy0 - gy1)

    # unity reference line and the gain-1 divider
    out.append(
        f'<line x1="{gx0}" y1="{sy(1.0):.1f}" x2="{gx1}" y2="{sy(1.0):.1f}" stroke="#ccc" stroke-dasharray="4 3"/>'
    )
    if gmin < 1.0 < gmax:
        out.append(
            f'<line x1="{sx(1.0):.1f}" y1="{gy1}" x2="{sx(1.0):.1f}" y2="{gy0}" stroke="#ccc" stroke-dasharray="4 3"/>'
        )
    path = " ".join(f"{sx(g):.1f},{sy(v):.1f}" for g, v in pts)
    out.append(f'<polyline points="{path}" fill="none" stroke="#1f6eb4" stroke-width="1.5"/>')
    for g, v in pts:
        out.append(f'<circle cx="{sx(g):.1f}" cy="{sy(v):.1f}" r="3" fill="#1f6eb4"/>')
    for g in (gmin, gmax):
        out.append(f'<text x="{sx(g):.1f}" y="{gy0 + 14}" text-anchor="middle" font-size="10">{_fmt(g)}</text>')
    for v in (0.0, 1.0, vmax):
        out.append(f'<text x="{gx0 - 4}" y="{sy(v) + 3:.1f}" text-anchor="end" font-size="10">{_fmt(v)}</text>')
    return out


def sweep_plot_svg(rows: list[GainSweepRow], path, title: str = "") -> None:
    """Two panels: perceived motion against world motion and against retinal motion."""
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{2 * _W}" height="{_H}" '
        f'font-family="sans-serif">',
        f'<text x="{_W}" y="16" text-anchor="middle" font-size="13">{title}</text>',
    ]
    parts.extend(_panel(rows, use_retinal=False, x0=0))
    parts.extend(_panel(rows, use_retinal=True, x0=_W))
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
