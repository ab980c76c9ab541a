"""Stand-in foundation-model action head.

A softmax over shortest-path-to-goal progress scores, with deterministic
per-state jitter so distinct states break ties differently. It knows nothing
about the temporal specification; its only objective is the instructed goal
region, making it a realistic subject for shielding.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .shield import ActionDistribution
from .world import (
    ACTIONS,
    Action,
    Pose,
    Scene,
    shortest_path_costs,
    signed_distance,
    step,
)

# score for End when the goal is out of reach; far enough below every
# progress score that the softmax underflows to an exact zero probability
_END_FAR_SCORE = -1e9


@dataclass(frozen=True)
class Instruction:
    """The task handed to the model: reach a region and declare completion."""

    goal_region: str
    label: str = ""


@dataclass(frozen=True)
class SurrogateConfig:
    temperature: float = 0.5
    # End becomes attractive within this distance of the goal boundary
    goal_radius: float = 0.5
    end_bonus: float = 5.0
    noise_seed: int = 0

    def __post_init__(self) -> None:
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")


@lru_cache(maxsize=None)
def _cost_field(scene: Scene, region_name: str) -> np.ndarray:
    region = scene.region(region_name)
    costs = shortest_path_costs(scene.grid, region, scene.footprint_radius)
    costs.setflags(write=False)
    return costs


def _jitter(cfg: SurrogateConfig, action_idx: int, ix: int, iy: int, heading: int) -> float:
    packed = struct.pack("<qiiii", cfg.noise_seed, action_idx, ix, iy, heading)
    return 0.25 * ((zlib.crc32(packed) & 0xFFFFFFFF) / 2**32)


def _cell_cost(scene: Scene, costs: np.ndarray, x: float, y: float, big: float) -> float:
    ix, iy = scene.grid.cell_of(x, y)
    if not scene.grid.in_bounds(ix, iy):
        return big
    c = float(costs[iy, ix])
    return big if math.isinf(c) else c


def fm_distribution(
    scene: Scene, pose: Pose, instr: Instruction, cfg: SurrogateConfig
) -> ActionDistribution:
    """Action distribution the surrogate proposes at ``pose``.

    Motion actions score the negated shortest-path cost of the cell they lead
    toward; End scores near the top when the robot is within reach of the
    goal and at a floor that softmaxes to exactly zero otherwise.
    """
    costs = _cost_field(scene, instr.goal_region)
    big = float(scene.grid.width * scene.grid.height + 8)
    ix, iy = scene.grid.cell_of(pose.x, pose.y)

    scores = [0.0, 0.0, 0.0, 0.0]
    for idx, action in enumerate(ACTIONS):
        if action is Action.END:
            continue
        nxt = step(pose, action, scene)
        if action is Action.MOVE_AHEAD:
            # blocked moves keep the current cell and earn no progress
            c = _cell_cost(scene, costs, nxt.x, nxt.y, big)
        else:
            dx, dy = scene.heading_vectors[nxt.heading]
            c = _cell_cost(
                scene,
                costs,
                nxt.x + scene.step_length * dx,
                nxt.y + scene.step_length * dy,
                big,
            )
        scores[idx] = -c + _jitter(cfg, idx, ix, iy, pose.heading)

    end_idx = ACTIONS.index(Action.END)
    sd = signed_distance(pose, scene.region(instr.goal_region))
    if sd > -cfg.goal_radius:
        scores[end_idx] = max(scores[:end_idx]) + cfg.end_bonus
    else:
        scores[end_idx] = _END_FAR_SCORE

    top = max(scores)
    weights = [math.exp((s - top) / cfg.temperature) for s in scores]
    total = sum(weights)
    return ActionDistribution(tuple(w / total for w in weights))
