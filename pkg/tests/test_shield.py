"""KL projection, exponential tilt, and rollout feasibility."""

import math
import random

import pytest

from stlshield.shield import (
    ActionDistribution,
    FeasibilityVector,
    Infeasible,
    ShieldConfig,
    _streaks,
    evaluate_action,
    exponential_tilt,
    feasibility_vector,
    project_distribution,
)
from stlshield.stl import ConjunctEvaluator, SpecMonitor, Verdict, horizon, robustness
from stlshield.synthesis import policy_action
from stlshield.world import ACTIONS, Action, step


def dist(*probs):
    return ActionDistribution(tuple(probs))


def feas(*flags):
    return FeasibilityVector(tuple(flags))


def random_dist(rng):
    raw = [rng.random() for _ in range(4)]
    if rng.random() < 0.3:
        raw[rng.randrange(4)] = 0.0
    total = sum(raw)
    return dist(*(p / total for p in raw))


def test_distribution_validation():
    with pytest.raises(ValueError):
        dist(0.5, 0.5, 0.5, 0.5)
    with pytest.raises(ValueError):
        dist(-0.1, 0.6, 0.3, 0.2)
    with pytest.raises(ValueError):
        feas(0, 1, 2, 0)
    assert feas(0, 1, 1, 0).support == (1, 2)


def test_projection_hand_example():
    out = project_distribution(dist(0.5, 0.3, 0.2, 0.0), feas(1, 0, 1, 0))
    assert out.probs[1] == 0.0 and out.probs[3] == 0.0
    assert out.probs[0] == pytest.approx(5 / 7, rel=1e-12)
    assert out.probs[2] == pytest.approx(2 / 7, rel=1e-12)
    assert sum(out.probs) == 1.0


def test_projection_support_and_mass_law():
    rng = random.Random(31)
    for _ in range(500):
        d = random_dist(rng)
        flags = [rng.randrange(2) for _ in range(4)]
        if not any(flags):
            flags[rng.randrange(4)] = 1
        if sum(d.probs[i] for i in range(4) if flags[i]) == 0.0:
            with pytest.raises(Infeasible):
                project_distribution(d, feas(*flags))
            continue
        out = project_distribution(d, feas(*flags))
        for i in range(4):
            if not flags[i]:
                assert out.probs[i] == 0.0
        assert sum(out.probs) == 1.0


def test_projection_preserves_ratios():
    rng = random.Random(32)
    for _ in range(500):
        d = random_dist(rng)
        flags = [1, rng.randrange(2), rng.randrange(2), 1]
        out = project_distribution(d, feas(*flags))
        support = [i for i in range(4) if flags[i] and d.probs[i] > 1e-9]
        if len(support) < 2:
            continue
        i, j = support[0], support[-1]
        assert out.probs[i] * d.probs[j] == pytest.approx(out.probs[j] * d.probs[i], rel=1e-9)


def test_projection_zero_mass_rejected():
    # the output support must be the feasible set intersected with the input
    # support; when that intersection is empty no projection exists
    with pytest.raises(Infeasible):
        project_distribution(dist(1.0, 0.0, 0.0, 0.0), feas(0, 1, 1, 0))


def test_projection_infeasible():
    with pytest.raises(Infeasible):
        project_distribution(dist(0.25, 0.25, 0.25, 0.25), feas(0, 0, 0, 0))


def test_shield_config_rejects_soft_delta():
    assert ShieldConfig().delta == 1.0
    with pytest.raises(ValueError):
        ShieldConfig(delta=0.9)


def test_tilt_zero_is_identity():
    d = dist(0.4, 0.3, 0.2, 0.1)
    assert exponential_tilt(d, feas(1, 0, 0, 1), 0.0) is d


def test_tilt_hand_example():
    out = exponential_tilt(dist(0.25, 0.25, 0.25, 0.25), feas(1, 1, 0, 0), -math.log(2))
    assert out.probs == pytest.approx((1 / 3, 1 / 3, 1 / 6, 1 / 6), rel=1e-12)


def test_tilt_limit_recovers_projection():
    rng = random.Random(33)
    for _ in range(200):
        d = random_dist(rng)
        flags = [rng.randrange(2) for _ in range(4)]
        if not any(flags):
            flags[rng.randrange(4)] = 1
        f = feas(*flags)
        # the hard projection needs mass on the feasible set
        if sum(d.probs[i] for i in f.support) < 1e-6:
            continue
        hard = project_distribution(d, f)
        soft = exponential_tilt(d, f, -50.0)
        for a, b in zip(soft.probs, hard.probs):
            assert a == pytest.approx(b, abs=1e-9)


def reference_flag(prefix, t, action, q, scene, spec):
    """Independent feasibility: apply the action, finish the trace with the
    greedy policy, and check strict robustness of the whole run."""
    T = horizon(spec)
    mon = SpecMonitor(spec, scene)
    for pose in prefix:
        mon.observe(pose)
    poses = list(prefix)
    pose = step(poses[-1], action, scene)
    mon.observe(pose)
    poses.append(pose)
    for tt in range(t + 1, T):
        pose = step(pose, policy_action(q, pose, tt, mon.status_mask()), scene)
        mon.observe(pose)
        poses.append(pose)
    return int(robustness(poses, spec, 0, scene) > 0.0)


def test_evaluate_action_matches_full_rollout(micro_scene, micro_spec, micro_q):
    ev = ConjunctEvaluator(micro_spec, micro_scene)
    rng = random.Random(34)
    mon = SpecMonitor(micro_spec, micro_scene, ev)
    prefix = [micro_scene.start]
    mon.observe(prefix[0])
    for t in range(horizon(micro_spec) - 1):
        for action in ACTIONS:
            got = evaluate_action(
                prefix, t, action, micro_q, micro_scene, micro_spec, mon.statuses(), ev
            )
            want = reference_flag(prefix, t, action, micro_q, micro_scene, micro_spec)
            assert got == want, (t, action)
        # walk a random feasible-ish path so later prefixes vary
        action = ACTIONS[rng.randrange(3)]  # never End: keep the walk moving
        prefix.append(step(prefix[-1], action, micro_scene))
        mon.observe(prefix[-1])


def test_evaluate_action_decided_short_circuit(micro_scene, micro_spec, micro_q):
    sat = (Verdict.SATISFIED,)
    bad = (Verdict.VIOLATED,)
    prefix = [micro_scene.start]
    assert evaluate_action(prefix, 0, Action.END, micro_q, micro_scene, micro_spec, sat) == 1
    assert evaluate_action(prefix, 0, Action.END, micro_q, micro_scene, micro_spec, bad) == 0


def test_feasibility_vector_start_state(micro_scene, micro_spec, micro_q):
    mon = SpecMonitor(micro_spec, micro_scene)
    mon.observe(micro_scene.start)
    fv = feasibility_vector(
        [micro_scene.start], 0, micro_q, micro_scene, micro_spec, mon.statuses()
    )
    # plenty of horizon left: the trained backup policy recovers from any move
    assert fv.flags == (1, 1, 1, 1)


def test_feasibility_vector_decided(micro_scene, micro_spec, micro_q):
    fv = feasibility_vector(
        [micro_scene.start], 3, micro_q, micro_scene, micro_spec, (Verdict.SATISFIED,)
    )
    assert fv.flags == (1, 1, 1, 1)
    fv = feasibility_vector(
        [micro_scene.start], 3, micro_q, micro_scene, micro_spec, (Verdict.VIOLATED,)
    )
    assert fv.flags == (0, 0, 0, 0)


def test_feasibility_vector_dedups_blocked_and_end(micro_scene, micro_spec, micro_q):
    # facing the border wall: MOVE_AHEAD is a no-op, so it must agree with End
    from stlshield.world import Pose

    pose = Pose(0.375, 0.375, 2)  # heading 2 points at the -x wall
    assert step(pose, Action.MOVE_AHEAD, micro_scene) == pose
    mon = SpecMonitor(micro_spec, micro_scene)
    mon.observe(pose)
    fv = feasibility_vector([pose], 0, micro_q, micro_scene, micro_spec, mon.statuses())
    assert fv.flags[ACTIONS.index(Action.MOVE_AHEAD)] == fv.flags[ACTIONS.index(Action.END)]


def test_streaks_counts_trailing_positives(micro_scene, micro_spec):
    from stlshield.world import Pose

    ev = ConjunctEvaluator(micro_spec, micro_scene)
    inside = Pose(1.375, 1.375, 0)  # region center
    outside = Pose(0.375, 0.375, 0)
    assert _streaks([inside, inside, inside], micro_spec, micro_scene, ev) == (3,)
    assert _streaks([inside, inside, outside], micro_spec, micro_scene, ev) == (0,)
    assert _streaks([outside, inside, inside], micro_spec, micro_scene, ev) == (2,)
