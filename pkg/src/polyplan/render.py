"""Static floorplan rendering (SVG primary, PNG secondary) and door arcs.

All geometry is drawn in the image frame (origin top-left, y down; SVG uses
the same frame). Angles are measured from +x with y down, so a positive
sweep appears clockwise on screen. Room fill colors hash the room's centroid
location, not its semantics.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

PALETTE = [
    "#8dd3c7", "#ffffb3", "#bebada", "#fb8072", "#80b1d3", "#fdb462",
    "#b3de69", "#fccde5", "#d9d9d9", "#bc80bd", "#ccebc5", "#ffed6f",
    "#a6cee3", "#fdbf6f", "#cab2d6", "#b2df8a",
]


@dataclass
class RenderStyle:
    scale: float = 2.0
    background: str = "#ffffff"
    wall_color: str = "#222222"
    wall_width: float = 1.5
    window_color: str = "#1f78b4"
    door_color: str = "#e31a1c"
    palette: list = field(default_factory=lambda: list(PALETTE))


@dataclass
class ArcPrimitive:
    """One door leaf: a quarter-circle around `center` starting at
    `start_angle` (radians) and sweeping 90 degrees."""

    center: tuple
    radius: float
    start_angle: float
    clockwise: bool  # on-screen direction (y-down frame)
    branch: str  # single_vertical / double_vertical / single_horizontal / double_horizontal

    @property
    def end_angle(self) -> float:
        return self.start_angle + (math.pi / 2 if self.clockwise else -math.pi / 2)

    def point(self, angle: float) -> tuple:
        return (
            self.center[0] + self.radius * math.cos(angle),
            self.center[1] + self.radius * math.sin(angle),
        )


def plot_door_arcs(doors) -> list[ArcPrimitive]:
    """Arc primitives for a set of door lines.

    Doors shorter than 1.5x the median length get one quadrant of radius
    len swung from the far endpoint around the reference endpoint; longer
    doors get two opposite quadrants of radius len/2 (a double door) bulging
    to one side of the line. Orientation (which endpoint anchors, which way
    the leaf swings) follows the dominant axis of the line. Zero-length
    doors are skipped with a warning.
    """
    lines = [np.asarray(d, dtype=np.float64) for d in doors]
    lengths = [float(np.hypot(*(l[1] - l[0]))) for l in lines]
    positive = [x for x in lengths if x > 0]
    if not positive:
        return []
    median = float(np.median(positive))
    arcs = []
    for line, length in zip(lines, lengths):
        if length == 0.0:
            warnings.warn(f"zero-length door {line.tolist()} skipped")
            continue
        (x1, y1), (x2, y2) = line
        vertical = abs(y2 - y1) > abs(x2 - x1)
        if vertical:
            if y2 > y1:
                e1, e2 = (x1, y1), (x2, y2)
            else:
                e1, e2 = (x2, y2), (x1, y1)
            single_clockwise = True  # swing from e2 clockwise
            double_side = "right"  # of the directed line e1 -> e2
        else:
            if x2 > x1:
                e1, e2 = (x2, y2), (x1, y1)
            else:
                e1, e2 = (x1, y1), (x2, y2)
            single_clockwise = False
            double_side = "left"
        axis = "vertical" if vertical else "horizontal"
        direction = math.atan2(e2[1] - e1[1], e2[0] - e1[0])
        if length < 1.5 * median:
            arcs.append(
                ArcPrimitive(
                    center=e1,
                    radius=length,
                    start_angle=direction,
                    clockwise=single_clockwise,
                    branch=f"single_{axis}",
                )
            )
        else:
            # opposite quadrants: the leaf at e1 starts along the line, the
            # leaf at e2 starts back along it; right side = +90 deg in the
            # y-down frame, left side = -90 deg
            toward_side = double_side == "right"
            arcs.append(
                ArcPrimitive(
                    center=e1,
                    radius=length / 2,
                    start_angle=direction,
                    clockwise=toward_side,
                    branch=f"double_{axis}",
                )
            )
            arcs.append(
                ArcPrimitive(
                    center=e2,
                    radius=length / 2,
                    start_angle=direction + math.pi,
                    clockwise=not toward_side,
                    branch=f"double_{axis}",
                )
            )
    return arcs


def _centroid_color(corners: np.ndarray, width: float, height: float, palette) -> str:
    cx, cy = np.asarray(corners, dtype=np.float64).mean(axis=0)
    gx = min(3, int(cx / width * 4))
    gy = min(3, int(cy / height * 4))
    return palette[(gy * 4 + gx) % len(palette)]


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def render_floorplan(plan, style: RenderStyle | None = None) -> str:
    """Deterministic SVG drawing: filled rooms, dashed windows, door arcs."""
    style = style or RenderStyle()
    s = style.scale
    w, h = plan.width * s, plan.height * s
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(w)}" height="{_fmt(h)}" '
        f'viewBox="0 0 {_fmt(w)} {_fmt(h)}">',
        f'<rect width="{_fmt(w)}" height="{_fmt(h)}" fill="{style.background}"/>',
    ]
    for corners, _ in plan.rooms:
        pts = " ".join(f"{_fmt(x * s)},{_fmt(y * s)}" for x, y in np.asarray(corners))
        color = _centroid_color(corners, plan.width, plan.height, style.palette)
        parts.append(
            f'<polygon points="{pts}" fill="{color}" stroke="{style.wall_color}" '
            f'stroke-width="{_fmt(style.wall_width)}"/>'
        )
    for window in plan.windows:
        (x1, y1), (x2, y2) = np.asarray(window, dtype=np.float64)
        parts.append(
            f'<line x1="{_fmt(x1 * s)}" y1="{_fmt(y1 * s)}" x2="{_fmt(x2 * s)}" y2="{_fmt(y2 * s)}" '
            f'stroke="{style.window_color}" stroke-width="{_fmt(style.wall_width)}" '
            f'stroke-dasharray="4 3"/>'
        )
    for arc in plot_door_arcs(plan.doors):
        sx, sy = arc.point(arc.start_angle)
        ex, ey = arc.point(arc.end_angle)
        sweep = 1 if arc.clockwise else 0
        r = arc.radius * s
        parts.append(
            f'<path d="M {_fmt(sx * s)} {_fmt(sy * s)} A {_fmt(r)} {_fmt(r)} 0 0 {sweep} '
            f'{_fmt(ex * s)} {_fmt(ey * s)}" fill="none" stroke="{style.door_color}" '
            f'stroke-width="{_fmt(style.wall_width)}"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def save_render(plan, path, style: RenderStyle | None = None) -> None:
    """Write an SVG (by extension) or rasterize a PNG via Pillow."""
    path = str(path)
    if path.endswith(".svg"):
        with open(path, "w") as f:
            f.write(render_floorplan(plan, style))
        return
    if not path.endswith(".png"):
        raise ValueError(f"unsupported render format: {path}")
    from PIL import Image, ImageDraw

    style = style or RenderStyle()
    s = style.scale
    img = Image.new("RGB", (int(plan.width * s), int(plan.height * s)), style.background)
    draw = ImageDraw.Draw(img)
    for corners, _ in plan.rooms:
        pts = [(x * s, y * s) for x, y in np.asarray(corners)]
        color = _centroid_color(corners, plan.width, plan.height, style.palette)
        draw.polygon(pts, fill=color, outline=style.wall_color)
    for window in plan.windows:
        (x1, y1), (x2, y2) = np.asarray(window, dtype=np.float64)
        _dashed_line(draw, (x1 * s, y1 * s), (x2 * s, y2 * s), style.window_color)
    for arc in plot_door_arcs(plan.doors):
        r = arc.radius * s
        cx, cy = arc.center[0] * s, arc.center[1] * s
        a0 = math.degrees(arc.start_angle)
        a1 = math.degrees(arc.end_angle)
        if not arc.clockwise:
            a0, a1 = a1, a0  # Pillow draws from start to end counter... increasing angle
        draw.arc([cx - r, cy - r, cx + r, cy + r], a0, a1, fill=style.door_color)
    img.save(path)


def _dashed_line(draw, a, b, color, dash=6.0, gap=4.0):
    ax, ay = a
    bx, by = b
    length = math.hypot(bx - ax, by - ay)
    if length == 0:
        return
    ux, uy = (bx - ax) / length, (by - ay) / length
    t = 0.0
    while t < length:
        t2 = min(t + dash, length)
        draw.line([(ax + ux * t, ay + uy * t), (ax + ux * t2, ay + uy * t2)], fill=color)
        t = t2 + gap
