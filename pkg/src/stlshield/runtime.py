"""Shielded episode execution.

Each step samples from the surrogate's action distribution projected onto the
actions certified feasible by backup-policy rollouts. When nothing is
certifiable, or the surrogate puts no probability on any certified action,
the backup policy acts directly, and once the specification is discharged
(or its horizon has passed) the surrogate runs unmodified. After the
surrogate declares completion, the backup policy keeps driving until the
specification verdict is settled.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .shield import ActionDistribution, feasibility_vector, project_distribution
from .stl import ConjunctEvaluator, Formula, SpecMonitor, Trace, Verdict, horizon, robustness
from .surrogate import Instruction, SurrogateConfig, fm_distribution
from .synthesis import QTable, policy_action
from .world import ACTION_INDEX, ACTIONS, Action, Pose, Scene, step

PHASE_SHIELDED = "shielded"
PHASE_FALLBACK = "fallback"
PHASE_FREE = "free"
PHASE_POST = "post"


@dataclass(frozen=True)
class RunConfig:
    t_max: int
    seed: int
    delta: float = 1.0

    def __post_init__(self) -> None:
        if self.t_max < 1:
            raise ValueError("t_max must be positive")
        if self.delta != 1.0:
            raise ValueError("only the hard constraint delta == 1.0 is supported")


@dataclass(frozen=True)
class RunRecord:
    """Everything observable about one episode.

    ``phases[i]`` tells which rule chose ``actions[i]``: shielded sampling,
    backup fallback, free surrogate sampling, or the post-completion backup.
    """

    trajectory: tuple[Pose, ...]
    actions: tuple[Action, ...]
    phases: tuple[str, ...]
    stl_satisfied: bool
    main_done: bool
    fallback_steps: int
    projected_steps: int
    final_robustness: float
    seed: int


def sample_action(dist: ActionDistribution, u: float) -> Action:
    """Inverse-CDF draw in the fixed action order."""
    acc = 0.0
    for i, p in enumerate(dist.probs):
        acc += p
        if u < acc:
            return ACTIONS[i]
    for i in (3, 2, 1, 0):  # guard against cumulative rounding
        if dist.probs[i] > 0.0:
            return ACTIONS[i]
    return ACTIONS[-1]


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def execute_episode(
    scene: Scene,
    spec: Formula,
    q: QTable,
    instr: Instruction,
    fm_cfg: SurrogateConfig,
    run_cfg: RunConfig,
    audit: list | None = None,
) -> RunRecord:
    """Run one shielded episode.

    Draws exactly one random number per main-loop step, whichever branch
    consumes it, so runs with a common seed stay aligned across variations.
    With ``audit`` a list, every projected step appends a dict with the
    surrogate distribution, feasibility flags, projected distribution, and
    the action that was executed.
    """
    T = horizon(spec)
    if run_cfg.t_max <= T:
        raise ValueError(f"t_max={run_cfg.t_max} must exceed the specification horizon {T}")

    rng = _rng(run_cfg.seed)
    evaluator = ConjunctEvaluator(spec, scene)
    mon = SpecMonitor(spec, scene, evaluator)
    pose = scene.start
    mon.observe(pose)

    trajectory = [pose]
    actions: list[Action] = []
    phases: list[str] = []
    step_memo: dict = {}
    main_done = False
    fallback_steps = 0
    projected_steps = 0
    t = 0

    while not main_done and t < run_cfg.t_max:
        u = rng.random()
        sampled_from_fm = False
        if mon.verdict() is Verdict.SATISFIED:
            action = sample_action(fm_distribution(scene, pose, instr, fm_cfg), u)
            sampled_from_fm = True
            phase = PHASE_FREE
        elif t < T:
            jvec = feasibility_vector(
                trajectory, t, q, scene, spec, mon.statuses(), evaluator, step_memo
            )
            pi_fm = fm_distribution(scene, pose, instr, fm_cfg) if 1 in jvec.flags else None
            if pi_fm is not None and any(pi_fm.probs[i] > 0.0 for i in jvec.support):
                pi_star = project_distribution(pi_fm, jvec)
                action = sample_action(pi_star, u)
                assert jvec.flags[ACTION_INDEX[action]] == 1
                sampled_from_fm = True
                phase = PHASE_SHIELDED
                projected_steps += 1
                if audit is not None:
                    audit.append(
                        {
                            "t": t,
                            "pi_fm": pi_fm.probs,
                            "j": jvec.flags,
                            "pi_star": pi_star.probs,
                            "action": action,
                        }
                    )
            else:
                # no certified action, or the model puts no mass on any of
                # them; either way nothing can be sampled from the model, so
                # the backup policy supplies the step. Prefer its own action
                # when certified, else the first certified action in order.
                # An End taken here is a wait, not a completion claim.
                action = policy_action(q, pose, t, mon.status_mask())
                if pi_fm is not None and jvec.flags[ACTION_INDEX[action]] != 1:
                    action = ACTIONS[jvec.support[0]]
                phase = PHASE_FALLBACK
                fallback_steps += 1
        else:
            action = sample_action(fm_distribution(scene, pose, instr, fm_cfg), u)
            sampled_from_fm = True
            phase = PHASE_FREE

        pose = step(pose, action, scene)
        mon.observe(pose)
        trajectory.append(pose)
        actions.append(action)
        phases.append(phase)
        if sampled_from_fm and action is Action.END:
            main_done = True
        t += 1

    # the robot may not rest until the specification verdict is settled
    while mon.verdict() is not Verdict.SATISFIED and t < T:
        action = policy_action(q, pose, t, mon.status_mask())
        pose = step(pose, action, scene)
        mon.observe(pose)
        trajectory.append(pose)
        actions.append(action)
        phases.append(PHASE_POST)
        t += 1

    trace = Trace(tuple(trajectory)).padded(T + 1)
    rho = robustness(trace, spec, 0, scene)
    return RunRecord(
        trajectory=tuple(trajectory),
        actions=tuple(actions),
        phases=tuple(phases),
        stl_satisfied=rho > 0.0,
        main_done=main_done,
        fallback_steps=fallback_steps,
        projected_steps=projected_steps,
        final_robustness=rho,
        seed=run_cfg.seed,
    )


def execute_unmodified(
    scene: Scene,
    spec: Formula,
    instr: Instruction,
    fm_cfg: SurrogateConfig,
    run_cfg: RunConfig,
) -> RunRecord:
    """Run the surrogate without any shielding, for comparison."""
    T = horizon(spec)
    if run_cfg.t_max <= T:
        raise ValueError(f"t_max={run_cfg.t_max} must exceed the specification horizon {T}")
    rng = _rng(run_cfg.seed)
    pose = scene.start
    trajectory = [pose]
    actions: list[Action] = []
    phases: list[str] = []
    main_done = False
    t = 0
    while not main_done and t < run_cfg.t_max:
        u = rng.random()
        action = sample_action(fm_distribution(scene, pose, instr, fm_cfg), u)
        pose = step(pose, action, scene)
        trajectory.append(pose)
        actions.append(action)
        phases.append(PHASE_FREE)
        if action is Action.END:
            main_done = True
        t += 1
    trace = Trace(tuple(trajectory)).padded(T + 1)
    rho = robustness(trace, spec, 0, scene)
    return RunRecord(
        trajectory=tuple(trajectory),
        actions=tuple(actions),
        phases=tuple(phases),
        stl_satisfied=rho > 0.0,
        main_done=main_done,
        fallback_steps=0,
        projected_steps=0,
        final_robustness=rho,
        seed=run_cfg.seed,
    )


def record_to_dict(record: RunRecord) -> dict:
    return {
        "version": 1,
        "trajectory": [[p.x, p.y, p.heading] for p in record.trajectory],
        "actions": [a.value for a in record.actions],
        "phases": list(record.phases),
        "stl_satisfied": record.stl_satisfied,
        "main_done": record.main_done,
        "fallback_steps": record.fallback_steps,
        "projected_steps": record.projected_steps,
        "final_robustness": record.final_robustness,
        "seed": record.seed,
    }


def record_from_dict(obj: dict) -> RunRecord:
    if obj.get("version") != 1:
        raise ValueError(f"unsupported record version {obj.get('version')!r}")
    return RunRecord(
        trajectory=tuple(Pose(x, y, int(h)) for x, y, h in obj["trajectory"]),
        actions=tuple(Action(a) for a in obj["actions"]),
        phases=tuple(obj["phases"]),
        stl_satisfied=bool(obj["stl_satisfied"]),
        main_done=bool(obj["main_done"]),
        fallback_steps=int(obj["fallback_steps"]),
        projected_steps=int(obj["projected_steps"]),
        final_robustness=float(obj["final_robustness"]),
        seed=int(obj["seed"]),
    )


def save_record(record: RunRecord, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record_to_dict(record), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_record(path: str | Path) -> RunRecord:
    with open(path, "r", encoding="utf-8") as fh:
        return record_from_dict(json.load(fh))
