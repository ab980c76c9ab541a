"""Shared fixtures: hand-sized scenes and a policy trained once per session."""

from __future__ import annotations

import json

import pytest

from stlshield.stl import parse_spec
from stlshield.synthesis import SynthesisConfig, train_policy
from stlshield.world import parse_scene


def open_rows(width: int, height: int, blocked: set[tuple[int, int]] = frozenset()):
    """Grid rows, top-down, with optional blocked (ix, iy) cells."""
    rows = []
    for iy in range(height - 1, -1, -1):
        rows.append("".join("#" if (ix, iy) in blocked else "." for ix in range(width)))
    return rows


def scene_payload(**over):
    payload = {
        "map": {"resolution": 0.25, "grid": open_rows(8, 8)},
        "regions": [
            {"name": "a", "shape": "circle", "center": [1.375, 1.375], "radius": 0.3},
        ],
        "start": {"x": 0.375, "y": 0.375, "heading": 0},
        "goal_region": "a",
        "footprint_radius": 0.25,
        "step_length": 0.25,
        "heading_count": 4,
    }
    payload.update(over)
    return payload


def make_scene(**over):
    return parse_scene(scene_payload(**over))


@pytest.fixture(scope="session")
def micro_scene():
    return make_scene()


@pytest.fixture(scope="session")
def micro_spec():
    return parse_spec("F[0,20]a")


MICRO_SYNTH = SynthesisConfig(episodes=12000, epsilon_schedule=(1.0, 0.05, 6000), seed=3)


@pytest.fixture(scope="session")
def micro_q(micro_scene, micro_spec):
    return train_policy(micro_scene, micro_spec, MICRO_SYNTH)


@pytest.fixture(scope="session")
def micro_experiment(tmp_path_factory):
    """A complete on-disk experiment around the micro scene."""
    root = tmp_path_factory.mktemp("micro_exp")
    scene_path = root / "scene.json"
    scene_path.write_text(json.dumps(scene_payload()))
    exp = {
        "scene": "scene.json",
        "spec": "F[0,20]a",
        "instruction": {"goal_region": "a", "label": "go to a"},
        "surrogate": {"temperature": 0.5, "goal_radius": 0.5, "end_bonus": 5.0, "noise_seed": 1},
        "synthesis": {
            "episodes": MICRO_SYNTH.episodes,
            "epsilon_schedule": list(MICRO_SYNTH.epsilon_schedule),
            "seed": MICRO_SYNTH.seed,
        },
        "run": {"t_max": 40, "seed": 77},
        "n_runs": 6,
        "out_dir": str(root / "out"),
    }
    exp_path = root / "experiment.json"
    exp_path.write_text(json.dumps(exp))
    return exp_path


@pytest.fixture(scope="session")
def micro_cli_out(micro_experiment, tmp_path_factory):
    """Micro experiment trained through the command-line entry point."""
    from stlshield.harness.cli import main

    out = tmp_path_factory.mktemp("micro_cli")
    assert main(["synth", str(micro_experiment), "--out", str(out)]) == 0
    return out
