"""Occupancy-grid world model: scenes, footprint collision, discrete unicycle steps."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Union

import numpy as np


class SceneParseError(ValueError):
    """Scene JSON is structurally malformed (bad type, missing or unknown key)."""


class SceneValidationError(ValueError):
    """Scene JSON parsed but violates a semantic constraint."""


class NoFreeGoalCell(ValueError):
    """Goal region does not overlap any footprint-free grid cell."""


class Action(Enum):
    MOVE_AHEAD = "MoveAhead"
    ROTATE_LEFT = "RotateLeft"
    ROTATE_RIGHT = "RotateRight"
    END = "End"


# Fixed action order; also the tie-break order everywhere an argmax is taken.
ACTIONS: tuple[Action, ...] = (
    Action.MOVE_AHEAD,
    Action.ROTATE_LEFT,
    Action.ROTATE_RIGHT,
    Action.END,
)

ACTION_INDEX: dict[Action, int] = {a: i for i, a in enumerate(ACTIONS)}


@dataclass(frozen=True)
class Pose:
    """Planar position in meters plus a discrete heading index."""

    x: float
    y: float
    heading: int


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    radius: float

    def __post_init__(self) -> None:
        if self.radius <= 0.0:
            raise SceneValidationError(f"circle radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self) -> None:
        if self.xmin >= self.xmax or self.ymin >= self.ymax:
            raise SceneValidationError("rect must have xmin < xmax and ymin < ymax")


Shape = Union[Circle, Rect]


@dataclass(frozen=True)
class Region:
    """Named area used by predicates and by the goal of the main task."""

    name: str
    shape: Shape


@dataclass(frozen=True)
class OccupancyMap:
    """Boolean occupancy grid. ``cells[iy][ix]`` is True when blocked; iy counts
    up from the bottom row, and each cell spans ``resolution`` meters per side."""

    resolution: float
    cells: tuple[tuple[bool, ...], ...]

    def __post_init__(self) -> None:
        if self.resolution <= 0.0:
            raise SceneValidationError("map resolution must be positive")
        if not self.cells or not self.cells[0]:
            raise SceneValidationError("map grid must be non-empty")
        w = len(self.cells[0])
        if any(len(row) != w for row in self.cells):
            raise SceneValidationError("map grid rows must have equal length")

    @property
    def width(self) -> int:
        return len(self.cells[0])

    @property
    def height(self) -> int:
        return len(self.cells)

    def occupied(self, ix: int, iy: int) -> bool:
        return self.cells[iy][ix]

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return int(x / self.resolution), int(y / self.resolution)

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        return (ix + 0.5) * self.resolution, (iy + 0.5) * self.resolution


@dataclass(frozen=True)
class Scene:
    """Immutable world description: grid, named regions, start pose, goal region,
    and the discretization of the robot's motion."""

    grid: OccupancyMap
    regions: tuple[Region, ...]
    start: Pose
    goal: Region
    footprint_radius: float
    step_length: float
    heading_count: int

    @cached_property
    def _region_index(self) -> dict[str, Region]:
        return {r.name: r for r in self.regions}

    def region(self, name: str) -> Region:
        try:
            return self._region_index[name]
        except KeyError:
            raise KeyError(f"unknown region {name!r}") from None

    @cached_property
    def heading_vectors(self) -> tuple[tuple[float, float], ...]:
        """Unit direction per heading index, counterclockwise from +x.

        Axis-aligned components are snapped to exact 0/±1 so that motion on
        scenes with 4 headings stays on the cell-center lattice bit-for-bit.
        """
        out = []
        for k in range(self.heading_count):
            theta = 2.0 * math.pi * k / self.heading_count
            c, s = math.cos(theta), math.sin(theta)
            if abs(c) < 1e-12:
                c = 0.0
            elif abs(c - 1.0) < 1e-12:
                c = 1.0
            elif abs(c + 1.0) < 1e-12:
                c = -1.0
            if abs(s) < 1e-12:
                s = 0.0
            elif abs(s - 1.0) < 1e-12:
                s = 1.0
            elif abs(s + 1.0) < 1e-12:
                s = -1.0
            out.append((c, s))
        return tuple(out)


def signed_distance(pose: Pose, region: Region) -> float:
    """Signed distance from ``pose`` to the boundary of ``region``.

    Positive inside the region, negative outside, zero on the boundary.
    """
    s = region.shape
    if isinstance(s, Circle):
        dx = pose.x - s.cx
        dy = pose.y - s.cy
        return s.radius - math.sqrt(dx * dx + dy * dy)
    dx = max(s.xmin - pose.x, pose.x - s.xmax)
    dy = max(s.ymin - pose.y, pose.y - s.ymax)
    if dx <= 0.0 and dy <= 0.0:
        return -max(dx, dy)
    px = dx if dx > 0.0 else 0.0
    py = dy if dy > 0.0 else 0.0
    return -math.sqrt(px * px + py * py)


def is_free(grid: OccupancyMap, x: float, y: float, radius: float) -> bool:
    """True when a disk of ``radius`` at (x, y) lies inside the map and clear
    of every occupied cell. The area beyond the map border counts as blocked."""
    res = grid.resolution
    if x - radius < 0.0 or y - radius < 0.0:
        return False
    if x + radius > grid.width * res or y + radius > grid.height * res:
        return False
    ix0 = max(int((x - radius) / res), 0)
    iy0 = max(int((y - radius) / res), 0)
    ix1 = min(int((x + radius) / res), grid.width - 1)
    iy1 = min(int((y + radius) / res), grid.height - 1)
    rr = radius * radius
    for iy in range(iy0, iy1 + 1):
        row = grid.cells[iy]
        ylo = iy * res
        yhi = ylo + res
        ny = y if ylo <= y <= yhi else (ylo if y < ylo else yhi)
        dy = y - ny
        for ix in range(ix0, ix1 + 1):
            if not row[ix]:
                continue
            xlo = ix * res
            xhi = xlo + res
            nx = x if xlo <= x <= xhi else (xlo if x < xlo else xhi)
            dx = x - nx
            if dx * dx + dy * dy <= rr:
                return False
    return True


def _motion_free(scene: Scene, x1: float, y1: float, x0: float, y0: float) -> bool:
    r = scene.footprint_radius
    if not is_free(scene.grid, x1, y1, r):
        return False
    # Swept check only matters when a single step can jump past a thin wall.
    if scene.step_length <= 2.0 * r:
        return True
    n = int(math.ceil(scene.step_length / r))
    for i in range(1, n):
        f = i / n
        if not is_free(scene.grid, x0 + (x1 - x0) * f, y0 + (y1 - y0) * f, r):
            return False
    return True


def step(pose: Pose, action: Action, scene: Scene) -> Pose:
    """Apply one discrete action. A blocked MoveAhead is a silent no-op; End
    never changes the pose."""
    n = scene.heading_count
    if action is Action.ROTATE_LEFT:
        return Pose(pose.x, pose.y, (pose.heading - 1) % n)
    if action is Action.ROTATE_RIGHT:
        return Pose(pose.x, pose.y, (pose.heading + 1) % n)
    if action is Action.END:
        return pose
    dx, dy = scene.heading_vectors[pose.heading]
    nx = pose.x + scene.step_length * dx
    ny = pose.y + scene.step_length * dy
    if not _motion_free(scene, nx, ny, pose.x, pose.y):
        return pose
    return Pose(nx, ny, pose.heading)


def cached_step(scene: Scene, pose: Pose, action: Action, memo: dict) -> Pose:
    """``step`` with an explicit memo dict; safe because step is pure and
    lattice scenes revisit the same poses constantly."""
    key = (pose.x, pose.y, pose.heading, action)
    nxt = memo.get(key)
    if nxt is None:
        nxt = step(pose, action, scene)
        memo[key] = nxt
    return nxt


def free_cells(grid: OccupancyMap, radius: float) -> list[tuple[int, int]]:
    """Grid cells whose center admits the robot footprint, in row-major order."""
    out = []
    for iy in range(grid.height):
        for ix in range(grid.width):
            cx, cy = grid.cell_center(ix, iy)
            if is_free(grid, cx, cy, radius):
                out.append((ix, iy))
    return out


def shortest_path_costs(grid: OccupancyMap, goal: Region, radius: float) -> np.ndarray:
    """Hop-count distance from every footprint-free cell to the goal region.

    Returns a (height, width) float array; unreachable or non-free cells hold
    inf. Uses 4-connected breadth-first search seeded at free cells whose
    center lies strictly inside the goal region.

    Raises NoFreeGoalCell when the goal overlaps no free cell.
    """
    h, w = grid.height, grid.width
    costs = np.full((h, w), math.inf)
    free = [[False] * w for _ in range(h)]
    queue: deque[tuple[int, int]] = deque()
    for ix, iy in free_cells(grid, radius):
        free[iy][ix] = True
        cx, cy = grid.cell_center(ix, iy)
        if signed_distance(Pose(cx, cy, 0), goal) > 0.0:
            costs[iy, ix] = 0.0
            queue.append((ix, iy))
    if not queue:
        raise NoFreeGoalCell(f"goal region {goal.name!r} covers no free cell")
    while queue:
        ix, iy = queue.popleft()
        c = costs[iy, ix] + 1.0
        for jx, jy in ((ix + 1, iy), (ix - 1, iy), (ix, iy + 1), (ix, iy - 1)):
            if 0 <= jx < w and 0 <= jy < h and free[jy][jx] and c < costs[jy, jx]:
                costs[jy, jx] = c
                queue.append((jx, jy))
    return costs


_SCENE_KEYS = {
    "map",
    "regions",
    "start",
    "goal_region",
    "footprint_radius",
    "step_length",
    "heading_count",
}


def _parse_shape(obj: dict) -> Shape:
    kind = obj.get("shape")
    if kind == "circle":
        try:
            (cx, cy), radius = obj["center"], obj["radius"]
        except KeyError as e:
            raise SceneParseError(f"circle region missing key {e}") from None
        return Circle(float(cx), float(cy), float(radius))
    if kind == "rect":
        try:
            (x0, y0), (x1, y1) = obj["min"], obj["max"]
        except KeyError as e:
            raise SceneParseError(f"rect region missing key {e}") from None
        return Rect(float(x0), float(y0), float(x1), float(y1))
    raise SceneValidationError(f"unknown region shape {kind!r}")


def parse_scene(obj: dict) -> Scene:
    """Build a Scene from a decoded JSON object, validating as it goes."""
    if not isinstance(obj, dict):
        raise SceneParseError("scene JSON must be an object")
    unknown = set(obj) - _SCENE_KEYS
    if unknown:
        raise SceneParseError(f"unknown scene keys: {sorted(unknown)}")
    try:
        map_obj = obj["map"]
        rows = map_obj["grid"]
        resolution = float(map_obj["resolution"])
        region_objs = obj["regions"]
        start_obj = obj["start"]
        goal_name = obj["goal_region"]
    except (KeyError, TypeError) as e:
        raise SceneParseError(f"scene JSON missing or malformed key: {e}") from None

    if not isinstance(rows, list) or not all(isinstance(r, str) for r in rows):
        raise SceneParseError("map.grid must be a list of strings")
    for r in rows:
        bad = set(r) - {".", "#"}
        if bad:
            raise SceneParseError(f"map rows may only contain '.' and '#', got {sorted(bad)}")
    # Rows are written top-down; flip so cells[0] is the bottom row.
    cells = tuple(tuple(ch == "#" for ch in row) for row in reversed(rows))
    grid = OccupancyMap(resolution=resolution, cells=cells)

    regions = []
    seen = set()
    for robj in region_objs:
        name = robj.get("name")
        if not isinstance(name, str) or not name:
            raise SceneParseError("every region needs a non-empty string name")
        if name in seen:
            raise SceneValidationError(f"duplicate region name {name!r}")
        seen.add(name)
        regions.append(Region(name=name, shape=_parse_shape(robj)))

    heading_count = int(obj.get("heading_count", 12))
    if heading_count < 2:
        raise SceneValidationError("heading_count must be at least 2")
    try:
        start = Pose(float(start_obj["x"]), float(start_obj["y"]), int(start_obj["heading"]))
    except (KeyError, TypeError) as e:
        raise SceneParseError(f"start pose missing or malformed key: {e}") from None
    if not 0 <= start.heading < heading_count:
        raise SceneValidationError(f"start heading {start.heading} out of range [0, {heading_count})")

    footprint_radius = float(obj.get("footprint_radius", 0.25))
    step_length = float(obj.get("step_length", 0.25))
    if footprint_radius <= 0.0 or step_length <= 0.0:
        raise SceneValidationError("footprint_radius and step_length must be positive")

    by_name = {r.name: r for r in regions}
    if goal_name not in by_name:
        raise SceneValidationError(f"goal_region {goal_name!r} is not a declared region")
    if not is_free(grid, start.x, start.y, footprint_radius):
        raise SceneValidationError("start pose is in collision")

    return Scene(
        grid=grid,
        regions=tuple(regions),
        start=start,
        goal=by_name[goal_name],
        footprint_radius=footprint_radius,
        step_length=step_length,
        heading_count=heading_count,
    )


def load_scene(path: str | Path) -> Scene:
    """Load and validate a scene JSON file."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneParseError(f"{path}: {e}") from None
    return parse_scene(obj)
