"""Experiment configuration: one JSON file names a scene, a specification,
an instruction for the surrogate, and all run parameters."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

from ..runtime import RunConfig
from ..stl import And, Atom, Formula, Not, Or, parse_spec
from ..surrogate import Instruction, SurrogateConfig
from ..synthesis import SynthesisConfig
from ..world import Scene, load_scene, parse_scene


class ConfigError(ValueError):
    """Experiment configuration missing, malformed, or inconsistent."""


_TOP_KEYS = {"scene", "spec", "instruction", "surrogate", "synthesis", "run", "n_runs", "out_dir"}


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    scene: Scene
    spec: Formula
    spec_text: str
    instruction: Instruction
    surrogate: SurrogateConfig
    synthesis: SynthesisConfig
    run: RunConfig
    n_runs: int
    out_dir: Path


def builtin_experiments() -> tuple[str, ...]:
    root = resources.files("stlshield") / "data" / "experiments"
    return tuple(sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json")))


def _load_json(text: str, origin: str) -> dict:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{origin}: {e}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{origin}: top level must be an object")
    return obj


def _resolve_scene(ref: object, base_dir: Path | None) -> Scene:
    if not isinstance(ref, str) or not ref:
        raise ConfigError("'scene' must be a non-empty string")
    if ref.startswith("builtin:"):
        name = ref[len("builtin:") :]
        res = resources.files("stlshield") / "data" / "scenes" / f"{name}.json"
        try:
            text = res.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ConfigError(f"no bundled scene named {name!r}") from None
        return parse_scene(_load_json(text, ref))
    path = Path(ref)
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    return load_scene(path)


def _spec_regions(f: Formula) -> set[str]:
    if isinstance(f, Atom):
        return {f.pred.region}
    if isinstance(f, Not):
        return _spec_regions(f.operand)
    if isinstance(f, (And, Or)):
        return _spec_regions(f.left) | _spec_regions(f.right)
    return _spec_regions(f.operand)


def _section(raw: dict, key: str) -> dict:
    value = raw.get(key, {})
    if not isinstance(value, dict):
        raise ConfigError(f"'{key}' must be an object")
    return value


def _build(raw: dict, base_dir: Path | None, name: str) -> ExperimentConfig:
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
    for key in ("scene", "spec", "instruction", "run", "n_runs"):
        if key not in raw:
            raise ConfigError(f"experiment config needs {key!r}")

    scene = _resolve_scene(raw["scene"], base_dir)
    spec_text = raw["spec"]
    if not isinstance(spec_text, str):
        raise ConfigError("'spec' must be a string")
    spec = parse_spec(spec_text)

    instr_obj = _section(raw, "instruction")
    if "goal_region" not in instr_obj:
        raise ConfigError("'instruction' needs 'goal_region'")
    instruction = Instruction(
        goal_region=str(instr_obj["goal_region"]), label=str(instr_obj.get("label", ""))
    )

    known = {r.name for r in scene.regions}
    missing = _spec_regions(spec) - known
    if missing:
        raise ConfigError(f"specification names unknown regions: {sorted(missing)}")
    if instruction.goal_region not in known:
        raise ConfigError(f"instruction goal {instruction.goal_region!r} is not a scene region")

    try:
        surrogate = SurrogateConfig(**_section(raw, "surrogate"))
    except TypeError as e:
        raise ConfigError(f"'surrogate': {e}") from None

    synth_obj = dict(_section(raw, "synthesis"))
    if "epsilon_schedule" in synth_obj:
        sched = synth_obj["epsilon_schedule"]
        if not isinstance(sched, (list, tuple)) or len(sched) != 3:
            raise ConfigError("'synthesis.epsilon_schedule' must be [start, end, episodes]")
        synth_obj["epsilon_schedule"] = (float(sched[0]), float(sched[1]), int(sched[2]))
    try:
        synthesis = SynthesisConfig(**synth_obj)
    except TypeError as e:
        raise ConfigError(f"'synthesis': {e}") from None

    try:
        run = RunConfig(**_section(raw, "run"))
    except TypeError as e:
        raise ConfigError(f"'run': {e}") from None

    n_runs = raw["n_runs"]
    if not isinstance(n_runs, int) or n_runs < 1:
        raise ConfigError("'n_runs' must be a positive integer")

    out_dir = Path(raw.get("out_dir", "out"))
    return ExperimentConfig(
        name=name,
        scene=scene,
        spec=spec,
        spec_text=spec_text,
        instruction=instruction,
        surrogate=surrogate,
        synthesis=synthesis,
        run=run,
        n_runs=n_runs,
        out_dir=out_dir,
    )


def _apply_override(raw: dict, spec: str) -> None:
    if "=" not in spec:
        raise ConfigError(f"override {spec!r} must look like section.key=value")
    dotted, text = spec.split("=", 1)
    keys = dotted.split(".")
    if not all(keys):
        raise ConfigError(f"override {spec!r} has an empty key component")
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    node = raw
    for k in keys[:-1]:
        nxt = node.get(k)
        if not isinstance(nxt, dict):
            nxt = {}
            node[k] = nxt
        node = nxt
    node[keys[-1]] = value


def load_experiment(
    ref: str,
    overrides: Sequence[str] = (),
    seed: int | None = None,
    out: str | None = None,
) -> ExperimentConfig:
    """Load an experiment by bundled name (``case1``) or by file path.

    ``overrides`` are dotted assignments like ``synthesis.episodes=5000``;
    ``seed`` and ``out`` replace the run seed and output directory.
    """
    path = Path(ref)
    if path.suffix == ".json" or path.exists():
        raw = _load_json(path.read_text(encoding="utf-8"), str(path))
        base_dir: Path | None = path.resolve().parent
        name = path.stem
    else:
        res = resources.files("stlshield") / "data" / "experiments" / f"{ref}.json"
        try:
            text = res.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ConfigError(
                f"no experiment named {ref!r}; bundled: {', '.join(builtin_experiments())}"
            ) from None
        raw = _load_json(text, ref)
        base_dir = None
        name = ref
    for ov in overrides:
        _apply_override(raw, ov)
    cfg = _build(raw, base_dir, name)
    if seed is not None:
        cfg = replace(cfg, run=replace(cfg.run, seed=seed))
    if out is not None:
        cfg = replace(cfg, out_dir=Path(out))
    return cfg
