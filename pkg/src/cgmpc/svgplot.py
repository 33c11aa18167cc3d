"""Tiny native SVG writer for phase-plane trajectory plots.

Just polylines in a scaled viewport with the constraint box and setpoint;
keeps the pipeline free of plotting dependencies.
"""

_PALETTE = ["#1f77b4", "#2ca02c", "#d62728", "#ff7f0e", "#9467bd", "#8c564b"]


def _fmt(v):
    return f"{v:.2f}"


class _Frame:
    def __init__(self, x_range, y_range, width, height, pad):
        self.x0, self.x1 = x_range
        self.y0, self.y1 = y_range
        self.w, self.h, self.pad = width, height, pad

    def px(self, x):
        return self.pad + (x - self.x0) / (self.x1 - self.x0) * (self.w - 2 * self.pad)

    def py(self, y):
        # SVG y runs downward
        return self.h - self.pad - (y - self.y0) / (self.y1 - self.y0) * (self.h - 2 * self.pad)


def phase_plot(path, trajectories, box_lo, box_hi, setpoint=None, title="",
               width=640, height=520):
    """Write an SVG overlaying labelled (x1, x2) trajectories.

    trajectories: dict name -> list of (T, 2) arrays.
    """
    sx = box_hi[0] - box_lo[0]
    sy = box_hi[1] - box_lo[1]
    fr = _Frame((box_lo[0] - 0.08 * sx, box_hi[0] + 0.08 * sx),
                (box_lo[1] - 0.08 * sy, box_hi[1] + 0.08 * sy),
                width, height, pad=46)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{_fmt(fr.px(box_lo[0]))}" y="{_fmt(fr.py(box_hi[1]))}" '
        f'width="{_fmt(fr.px(box_hi[0]) - fr.px(box_lo[0]))}" '
        f'height="{_fmt(fr.py(box_lo[1]) - fr.py(box_hi[1]))}" '
        'fill="none" stroke="black" stroke-width="1.2"/>',
    ]
    if title:
        parts.append(f'<text x="{width // 2}" y="24" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="15">{title}</text>')
    legend_y = 40
    for i, (name, trajs) in enumerate(trajectories.items()):
        color = _PALETTE[i % len(_PALETTE)]
        for traj in trajs:
            pts = " ".join(f"{_fmt(fr.px(p[0]))},{_fmt(fr.py(p[1]))}"
                           for p in traj)
            parts.append(f'<polyline points="{pts}" fill="none" '
                         f'stroke="{color}" stroke-width="1" opacity="0.75"/>')
        parts.append(f'<line x1="{width - 170}" y1="{legend_y}" '
                     f'x2="{width - 140}" y2="{legend_y}" stroke="{color}" '
                     'stroke-width="2"/>')
        parts.append(f'<text x="{width - 132}" y="{legend_y + 4}" '
                     f'font-family="sans-serif" font-size="12">{name}</text>')
        legend_y += 18
    if setpoint is not None:
        parts.append(f'<circle cx="{_fmt(fr.px(setpoint[0]))}" '
                     f'cy="{_fmt(fr.py(setpoint[1]))}" r="4" fill="black"/>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
