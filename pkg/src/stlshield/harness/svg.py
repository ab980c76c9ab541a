"""Deterministic SVG rendering of a single trajectory over its scene.

Built by string assembly with fixed float formatting so identical runs
produce byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

from ..runtime import RunRecord
from ..world import Circle, Rect, Scene

PHASE_COLORS = {
    "shielded": "#1f77b4",
    "fallback": "#d62728",
    "free": "#ff7f0e",
    "post": "#9467bd",
}

_SCALE = 120.0  # pixels per meter
_MARGIN = 24.0


def _fmt(v: float) -> str:
    return f"{v:.4f}"


def phase_runs(phases: tuple[str, ...]) -> list[tuple[int, int, str]]:
    """Contiguous spans of equal phase as (start, end, phase); the span covers
    action indices start..end-1 and therefore poses start..end."""
    runs = []
    i = 0
    while i < len(phases):
        j = i
        while j < len(phases) and phases[j] == phases[i]:
            j += 1
        runs.append((i, j, phases[i]))
        i = j
    return runs


def render_trajectory_svg(scene: Scene, record: RunRecord, title: str = "") -> str:
    grid = scene.grid
    world_w = grid.width * grid.resolution
    world_h = grid.height * grid.resolution
    width = world_w * _SCALE + 2 * _MARGIN
    height = world_h * _SCALE + 2 * _MARGIN

    def px(x: float) -> str:
        return _fmt(_MARGIN + x * _SCALE)

    def py(y: float) -> str:
        return _fmt(_MARGIN + (world_h - y) * _SCALE)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" '
        f'height="{_fmt(height)}" viewBox="0 0 {_fmt(width)} {_fmt(height)}">',
        f'<rect x="0" y="0" width="{_fmt(width)}" height="{_fmt(height)}" fill="#ffffff"/>',
        f'<rect x="{px(0.0)}" y="{py(world_h)}" width="{_fmt(world_w * _SCALE)}" '
        f'height="{_fmt(world_h * _SCALE)}" fill="#f5f5f5" stroke="#333333"/>',
    ]
    if title:
        out.append(
            f'<text x="{_fmt(_MARGIN)}" y="{_fmt(_MARGIN - 8.0)}" '
            f'font-family="monospace" font-size="13">{title}</text>'
        )

    for iy in range(grid.height):
        for ix in range(grid.width):
            if grid.occupied(ix, iy):
                out.append(
                    f'<rect x="{px(ix * grid.resolution)}" '
                    f'y="{py((iy + 1) * grid.resolution)}" '
                    f'width="{_fmt(grid.resolution * _SCALE)}" '
                    f'height="{_fmt(grid.resolution * _SCALE)}" fill="#444444"/>'
                )

    for region in scene.regions:
        is_goal = region.name == scene.goal.name
        stroke = ' stroke="#000000" stroke-width="2"' if is_goal else ""
        shape = region.shape
        if isinstance(shape, Circle):
            out.append(
                f'<circle cx="{px(shape.cx)}" cy="{py(shape.cy)}" '
                f'r="{_fmt(shape.radius * _SCALE)}" fill="#2ca02c" '
                f'fill-opacity="0.25"{stroke}/>'
            )
            lx, ly = shape.cx, shape.cy
        else:
            assert isinstance(shape, Rect)
            out.append(
                f'<rect x="{px(shape.xmin)}" y="{py(shape.ymax)}" '
                f'width="{_fmt((shape.xmax - shape.xmin) * _SCALE)}" '
                f'height="{_fmt((shape.ymax - shape.ymin) * _SCALE)}" '
                f'fill="#d62728" fill-opacity="0.2"{stroke}/>'
            )
            lx, ly = (shape.xmin + shape.xmax) / 2.0, (shape.ymin + shape.ymax) / 2.0
        out.append(
            f'<text x="{px(lx)}" y="{py(ly)}" font-family="monospace" font-size="11" '
            f'text-anchor="middle">{region.name}</text>'
        )

    poses = record.trajectory
    for start, end, phase in phase_runs(record.phases):
        points = " ".join(
            f"{px(p.x)},{py(p.y)}" for p in poses[start : end + 1]
        )
        out.append(
            f'<polyline points="{points}" fill="none" '
            f'stroke="{PHASE_COLORS[phase]}" stroke-width="2.5" '
            f'stroke-linejoin="round" stroke-linecap="round"/>'
        )

    out.append(
        f'<circle cx="{px(poses[0].x)}" cy="{py(poses[0].y)}" r="5" '
        f'fill="#ffffff" stroke="#000000" stroke-width="2"/>'
    )
    out.append(
        f'<circle cx="{px(poses[-1].x)}" cy="{py(poses[-1].y)}" r="5" '
        f'fill="#000000"/>'
    )

    present = sorted(set(record.phases), key=list(PHASE_COLORS).index)
    for i, phase in enumerate(present):
        x = _MARGIN + 110.0 * i
        y = height - 8.0
        out.append(
            f'<rect x="{_fmt(x)}" y="{_fmt(y - 10.0)}" width="12" height="12" '
            f'fill="{PHASE_COLORS[phase]}"/>'
        )
        out.append(
            f'<text x="{_fmt(x + 16.0)}" y="{_fmt(y)}" font-family="monospace" '
            f'font-size="11">{phase}</text>'
        )

    out.append("</svg>")
    return "\n".join(out) + "\n"


def save_trajectory_svg(path: str | Path, scene: Scene, record: RunRecord, title: str = "") -> None:
    Path(path).write_text(render_trajectory_svg(scene, record, title), encoding="utf-8")
