"""Action-distribution shielding.

At each step, every candidate action is scored by rolling the backup policy
forward from its successor and checking the resulting trace against the
specification. The proposed distribution is then reweighted in closed form so
that only feasible actions keep probability mass, which is the minimal change
in KL divergence among all distributions supported on feasible actions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .stl import ConjunctEvaluator, Formula, SpecMonitor, Verdict, horizon
from .synthesis import QTable, policy_action
from .world import ACTIONS, Action, Pose, Scene, cached_step


class Infeasible(RuntimeError):
    """No action keeps the specification satisfiable."""


@dataclass(frozen=True)
class ActionDistribution:
    """Probabilities over the fixed action order."""

    probs: tuple[float, float, float, float]

    def __post_init__(self) -> None:
        for p in self.probs:
            if p < -1e-12 or p > 1.0 + 1e-12:
                raise ValueError(f"probability {p} outside [0, 1]")
        total = sum(self.probs)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total}, expected 1")

    def prob(self, action: Action) -> float:
        return self.probs[ACTIONS.index(action)]


@dataclass(frozen=True)
class FeasibilityVector:
    """Per-action feasibility flags in the fixed action order."""

    flags: tuple[int, int, int, int]

    def __post_init__(self) -> None:
        for j in self.flags:
            if j not in (0, 1):
                raise ValueError(f"feasibility flag must be 0 or 1, got {j}")

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(i for i, j in enumerate(self.flags) if j)


def project_distribution(
    dist: ActionDistribution, feas: FeasibilityVector
) -> ActionDistribution:
    """Minimal-KL reweighting onto the feasible actions.

    The optimum keeps each feasible action's probability proportional to its
    original value and zeroes the rest. The output support is the feasible
    set intersected with the input support, so a feasible set carrying no
    probability mass at all admits no projection and raises Infeasible.
    """
    support = feas.support
    if not support:
        raise Infeasible("no feasible action to project onto")
    mass = sum(dist.probs[i] for i in support)
    if mass == 0.0:
        raise Infeasible("feasible actions carry no probability mass")
    probs = [dist.probs[i] / mass if i in support else 0.0 for i in range(4)]
    # the feasible mass must be exactly 1, not 1 minus rounding residue. Only
    # the last support element is adjusted: every later summand is exactly
    # 0.0, so no further rounding can undo the correction, and a few ulps on
    # one coordinate is far below any optimality tolerance.
    last = support[-1]
    for _ in range(8):
        residue = 1.0 - sum(probs)
        if residue == 0.0:
            break
        probs[last] += residue
    return ActionDistribution(tuple(probs))


def exponential_tilt(
    dist: ActionDistribution, feas: FeasibilityVector, lam: float
) -> ActionDistribution:
    """Soft reweighting p_i proportional to p_i * exp(-lam * J_i).

    lam == 0 returns the distribution unchanged; lam -> -inf recovers the
    hard projection wherever the feasible set carries mass.
    """
    if lam == 0.0:
        return dist
    exponents = [-lam * j for j in feas.flags]
    shift = max(
        e for e, p in zip(exponents, dist.probs) if p > 0.0
    )
    weights = [p * math.exp(e - shift) for p, e in zip(dist.probs, exponents)]
    total = sum(weights)
    if total <= 0.0:
        raise Infeasible("tilt removed all probability mass")
    return ActionDistribution(tuple(w / total for w in weights))


@dataclass(frozen=True)
class ShieldConfig:
    """delta is the required satisfaction probability; only the hard
    constraint delta == 1 has a closed-form projection."""

    delta: float = 1.0

    def __post_init__(self) -> None:
        if self.delta != 1.0:
            raise ValueError("only delta == 1.0 is supported")


def evaluate_action(
    prefix: Sequence[Pose],
    t: int,
    action: Action,
    q: QTable,
    scene: Scene,
    spec: Formula,
    status: Sequence[Verdict],
    evaluator: ConjunctEvaluator | None = None,
    runs: Sequence[int] | None = None,
    step_memo: dict | None = None,
) -> int:
    """Feasibility of taking ``action`` at time ``t``.

    ``prefix`` is x_0..x_t and ``status`` the per-conjunct verdicts after
    observing it. The candidate action is applied, then the backup policy runs
    the trace out to the specification horizon; the flag is 1 exactly when the
    completed trace satisfies the specification (strictly positive
    robustness). The rollout stops early once the verdict is decided, which
    cannot change the answer because prefix verdicts are irrevocable.
    """
    decided = _decided(status)
    if decided is not None:
        return decided

    T = horizon(spec)
    mon = SpecMonitor.resumed(
        spec,
        scene,
        t + 1,
        status,
        evaluator=evaluator,
        runs=runs if runs is not None else _streaks(prefix, spec, scene, evaluator),
    )
    if step_memo is None:
        step_memo = {}
    pose = cached_step(scene, prefix[-1], action, step_memo)
    mon.observe(pose)
    for tt in range(t + 1, T):
        verdict = mon.verdict()
        if verdict is not Verdict.INCONCLUSIVE:
            return int(verdict is Verdict.SATISFIED)
        pose = cached_step(
            scene, pose, policy_action(q, pose, tt, mon.status_mask()), step_memo
        )
        mon.observe(pose)
    return int(mon.verdict() is Verdict.SATISFIED)


def _decided(status: Sequence[Verdict]) -> int | None:
    saw_open = False
    for s in status:
        if s is Verdict.VIOLATED:
            return 0
        if s is Verdict.INCONCLUSIVE:
            saw_open = True
    return None if saw_open else 1


def _streaks(
    prefix: Sequence[Pose],
    spec: Formula,
    scene: Scene,
    evaluator: ConjunctEvaluator | None,
) -> tuple[int, ...]:
    """Positive-streak lengths at the end of ``prefix`` for each conjunct
    operand, needed to resume monitoring of F-G composite conjuncts."""
    if evaluator is None:
        evaluator = ConjunctEvaluator(spec, scene)
    n = len(evaluator.operands)
    runs = [0] * n
    alive = set(range(n))
    for pose in reversed(prefix):
        values = evaluator.values(pose)
        for i in tuple(alive):
            if values[i] > 0.0:
                runs[i] += 1
            else:
                alive.discard(i)
        if not alive:
            break
    return tuple(runs)


def feasibility_vector(
    prefix: Sequence[Pose],
    t: int,
    q: QTable,
    scene: Scene,
    spec: Formula,
    status: Sequence[Verdict],
    evaluator: ConjunctEvaluator | None = None,
    step_memo: dict | None = None,
) -> FeasibilityVector:
    """Feasibility flags for all four actions at time ``t``."""
    decided = _decided(status)
    if decided is not None:
        return FeasibilityVector((decided,) * 4)
    runs = _streaks(prefix, spec, scene, evaluator)
    if step_memo is None:
        step_memo = {}
    flags = []
    by_successor: dict[Pose, int] = {}
    for a in ACTIONS:
        nxt = cached_step(scene, prefix[-1], a, step_memo)
        flag = by_successor.get(nxt)
        if flag is None:
            # End and a blocked move land on the same pose; one rollout serves both
            flag = evaluate_action(
                prefix, t, a, q, scene, spec, status, evaluator, runs, step_memo
            )
            by_successor[nxt] = flag
        flags.append(flag)
    return FeasibilityVector(tuple(flags))
