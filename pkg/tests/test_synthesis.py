"""Funnel calibration, shaped rewards, Q-learning, and the synthesis gate."""

import math
import random

import numpy as np
import pytest

from conftest import MICRO_SYNTH, make_scene

from stlshield.stl import (
    ConjunctEvaluator,
    Verdict,
    eval_nontemporal,
    horizon,
    nontemporal_operand,
    parse_spec,
    top_conjuncts,
)
from stlshield.synthesis import (
    DegenerateRobustness,
    FunnelParams,
    IllegalTStar,
    QTable,
    SynthesisConfig,
    SynthesisGateError,
    _draw_statuses,
    build_plans,
    funnel_params,
    funnel_value,
    greedy_rollout,
    load_qtable,
    policy_action,
    save_qtable,
    shaped_reward,
    synthesize_policy,
    train_policy,
)
from stlshield.world import ACTIONS, Action, Pose, free_cells


def random_funnel(rng: random.Random) -> FunnelParams:
    rho_max = rng.uniform(0.05, 5.0)
    rho_min = rho_max - rng.uniform(rho_max + 0.01, rho_max + 10.0)  # keep gamma0 > rho_max
    gamma0 = rho_max - rho_min
    gamma_inf = rng.uniform(0.01, 0.99) * min(gamma0, rho_max)
    t_star = rng.randrange(1, 200)
    ell = math.log((gamma0 - gamma_inf) / (rho_max - gamma_inf)) / t_star
    return FunnelParams(gamma0, gamma_inf, ell, t_star, rho_max)


def test_funnel_anchor_identities():
    rng = random.Random(21)
    for _ in range(100):
        p = random_funnel(rng)
        assert funnel_value(p, 0) == pytest.approx(p.gamma0, rel=1e-9)
        assert funnel_value(p, p.t_star) == pytest.approx(p.rho_max, rel=1e-9)


def test_funnel_strictly_decreasing_above_asymptote():
    rng = random.Random(22)
    for _ in range(100):
        p = random_funnel(rng)
        prev = funnel_value(p, 0)
        for t in range(1, 3 * p.t_star + 1):
            cur = funnel_value(p, t)
            assert p.gamma_inf < cur < prev
            prev = cur
        # the residual above the asymptote decays exponentially:
        # r(s + u) r(0) == r(s) r(u)
        r = lambda t: funnel_value(p, t) - p.gamma_inf
        assert r(3 * p.t_star) * r(0) == pytest.approx(r(p.t_star) * r(2 * p.t_star), rel=1e-9)


@pytest.fixture(scope="module")
def two_region_scene():
    return make_scene(
        regions=[
            {"name": "a", "shape": "circle", "center": [1.375, 1.375], "radius": 0.3},
            {"name": "b", "shape": "circle", "center": [0.375, 1.375], "radius": 0.45},
        ]
    )


def test_funnel_params_calibration(two_region_scene):
    conjunct = parse_spec("F[0,10]b")
    p = funnel_params(conjunct, two_region_scene, t_star=5)
    # the max over free cell centers is attained at the region center
    assert p.rho_max == pytest.approx(0.45)
    assert p.gamma_inf == pytest.approx(0.05 * p.rho_max)
    assert p.gamma0 > p.rho_max
    assert funnel_value(p, p.t_star) == pytest.approx(p.rho_max, rel=1e-12)


def test_funnel_anchor_legality(two_region_scene):
    always = parse_spec("G[3,9]b")
    assert funnel_params(always, two_region_scene).t_star == 3
    with pytest.raises(IllegalTStar):
        funnel_params(always, two_region_scene, t_star=4)
    eventually = parse_spec("F[2,8]b")
    for ok in (2, 8):
        funnel_params(eventually, two_region_scene, t_star=ok)
    for bad in (1, 9):
        with pytest.raises(IllegalTStar):
            funnel_params(eventually, two_region_scene, t_star=bad)
    nested = parse_spec("F[2,5]G[1,4]b")
    for ok in (3, 6):
        funnel_params(nested, two_region_scene, t_star=ok)
    for bad in (2, 7):
        with pytest.raises(IllegalTStar):
            funnel_params(nested, two_region_scene, t_star=bad)


def test_funnel_anchor_clamped_to_one(two_region_scene):
    p = funnel_params(parse_spec("F[0,10]b"), two_region_scene, t_star=0)
    assert p.t_star == 1
    assert funnel_value(p, 1) == pytest.approx(p.rho_max, rel=1e-12)


def test_funnel_positive_everywhere_operand(two_region_scene):
    # nothing blocks "outside a tiny far corner region": rho_min > 0
    scene = make_scene(
        regions=[{"name": "z", "shape": "circle", "center": [10.0, 10.0], "radius": 0.1}],
        goal_region="z",
    )
    p = funnel_params(parse_spec("F[0,5](!z)"), scene, t_star=2)
    assert p.gamma0 > p.rho_max
    assert p.ell > 0
    assert funnel_value(p, 2) == pytest.approx(p.rho_max, rel=1e-12)


def test_funnel_degenerate_operand(two_region_scene):
    # region buried in the inflated border: no free cell center inside
    scene = make_scene(
        regions=[{"name": "z", "shape": "circle", "center": [0.125, 0.125], "radius": 0.05}],
        goal_region="z",
    )
    with pytest.raises(DegenerateRobustness):
        funnel_params(parse_spec("F[0,5]z"), scene)


def test_build_plans_fractions(two_region_scene):
    spec = parse_spec("F[0,10]a & G[0,10](!b) & a")
    plans = build_plans(spec, two_region_scene)
    # the non-temporal third conjunct gets no funnel
    assert [p.index for p in plans] == [0, 1]
    reach, safety = plans
    assert reach.funnel.gamma_inf == pytest.approx(0.05 * reach.funnel.rho_max)
    assert safety.funnel.gamma_inf == pytest.approx(0.95 * safety.funnel.rho_max)
    assert reach.active == (0, 10) and safety.active == (0, 10)


def test_build_plans_t_star_override(two_region_scene):
    spec = parse_spec("F[0,10]a")
    default = build_plans(spec, two_region_scene)[0]
    assert default.funnel.t_star == (0 + 10 + 1) // 2
    chosen = build_plans(spec, two_region_scene, t_star_choices={0: 8})[0]
    assert chosen.funnel.t_star == 8


def test_shaped_reward_single_conjunct_identities(two_region_scene):
    spec = parse_spec("F[0,10]b")
    plans = build_plans(spec, two_region_scene, t_star_choices={0: 5})
    p = plans[0].funnel
    cells = free_cells(two_region_scene.grid, two_region_scene.footprint_radius)
    values = {
        c: eval_nontemporal(
            Pose(*two_region_scene.grid.cell_center(*c), 0),
            nontemporal_operand(plans[0].conjunct),
            two_region_scene,
        )
        for c in cells
    }
    lo_cell = min(values, key=values.get)
    hi_cell = max(values, key=values.get)
    lo_pose = Pose(*two_region_scene.grid.cell_center(*lo_cell), 0)
    hi_pose = Pose(*two_region_scene.grid.cell_center(*hi_cell), 0)
    # at the worst cell the funnel opening exactly cancels the deficit
    assert shaped_reward(lo_pose, 0, plans, 0, two_region_scene) == pytest.approx(0.0, abs=1e-9)
    # at the anchor, the best cell earns exactly rho_max
    assert shaped_reward(hi_pose, p.t_star, plans, 0, two_region_scene) == pytest.approx(
        p.rho_max, rel=1e-9
    )


def test_shaped_reward_masking(two_region_scene):
    spec = parse_spec("F[0,10]a & G[0,10](!b)")
    plans = build_plans(spec, two_region_scene)
    pose = Pose(1.375, 0.375, 0)
    both = shaped_reward(pose, 3, plans, 0, two_region_scene)
    per = [
        eval_nontemporal(pose, nontemporal_operand(p.conjunct), two_region_scene)
        + funnel_value(p.funnel, 3)
        - p.funnel.rho_max
        for p in plans
    ]
    assert both == min(per)
    only_second = shaped_reward(pose, 3, plans, 0b01, two_region_scene)  # first resolved
    assert only_second == per[1]
    assert shaped_reward(pose, 3, plans, 0b0101, two_region_scene) == 0.0


def test_shaped_reward_sign_semantics(two_region_scene):
    rng = random.Random(23)
    spec = parse_spec("F[0,10]b")
    plans = build_plans(spec, two_region_scene)
    p = plans[0].funnel
    cells = free_cells(two_region_scene.grid, two_region_scene.footprint_radius)
    for _ in range(500):
        ix, iy = cells[rng.randrange(len(cells))]
        pose = Pose(*two_region_scene.grid.cell_center(ix, iy), rng.randrange(4))
        t = rng.randrange(0, 12)
        value = eval_nontemporal(pose, nontemporal_operand(plans[0].conjunct), two_region_scene)
        if value >= p.rho_max - funnel_value(p, t):
            assert shaped_reward(pose, t, plans, 0, two_region_scene) >= -1e-12


def test_draw_statuses_consistency():
    rng = np.random.Generator(np.random.PCG64(5))
    conjuncts = top_conjuncts(parse_spec("F[5,10]a & G[0,8](!b) & F[2,4]G[0,3]a & a"))
    for t0 in range(0, 20):
        for _ in range(50):
            statuses = _draw_statuses(conjuncts, t0, rng)
            assert all(s is not Verdict.VIOLATED for s in statuses)
            f, g, fg, atom = statuses
            if t0 < 5:
                assert f is Verdict.INCONCLUSIVE
            if t0 <= 8:
                assert g is Verdict.INCONCLUSIVE
            if t0 < 2 + 3:
                assert fg is Verdict.INCONCLUSIVE
            if t0 >= 1:
                assert atom is Verdict.SATISFIED


def test_qtable_keys_and_defaults(micro_scene, micro_spec):
    q = QTable.for_task(micro_scene, micro_spec)
    assert q.horizon == horizon(micro_spec)
    seen = set()
    for pose in (Pose(0.375, 0.375, 0), Pose(0.625, 0.375, 0), Pose(0.375, 0.625, 3)):
        for t in (0, 1, 7):
            for mask in (0, 1):
                key = q.pose_key(pose, t, mask)
                assert key not in seen
                seen.add(key)
    assert q.action_values(q.pose_key(Pose(0.875, 0.875, 2), 3, 0)) == (0.0,) * 4
    assert len(q) == 0


def test_policy_action_tie_break(micro_scene, micro_spec):
    q = QTable.for_task(micro_scene, micro_spec)
    assert policy_action(q, micro_scene.start, 0, 0) is Action.MOVE_AHEAD


def test_training_determinism(micro_scene, micro_spec, tmp_path):
    cfg = SynthesisConfig(episodes=1500, epsilon_schedule=(1.0, 0.1, 1000), seed=9)
    a = train_policy(micro_scene, micro_spec, cfg)
    b = train_policy(micro_scene, micro_spec, cfg)
    pa, pb = tmp_path / "a.bin", tmp_path / "b.bin"
    save_qtable(a, pa)
    save_qtable(b, pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_qtable_save_load_round_trip(micro_q, tmp_path):
    path = tmp_path / "q.bin"
    save_qtable(micro_q, path)
    loaded = load_qtable(path)
    again = tmp_path / "q2.bin"
    save_qtable(loaded, again)
    assert path.read_bytes() == again.read_bytes()
    assert len(loaded) == len(micro_q)
    key = micro_q.pose_key(Pose(0.375, 0.375, 0), 0, 0)
    assert loaded.action_values(key) == micro_q.action_values(key)


def test_qtable_rejects_corrupt_file(micro_q, tmp_path):
    path = tmp_path / "q.bin"
    save_qtable(micro_q, path)
    data = path.read_bytes()
    bad_magic = tmp_path / "bad1.bin"
    bad_magic.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(ValueError):
        load_qtable(bad_magic)
    truncated = tmp_path / "bad2.bin"
    truncated.write_bytes(data[:-8])
    with pytest.raises(ValueError):
        load_qtable(truncated)


def test_greedy_rollout_shape(micro_scene, micro_spec, micro_q):
    trace = greedy_rollout(micro_scene, micro_spec, micro_q)
    assert len(trace) == horizon(micro_spec) + 1
    assert trace[0] == micro_scene.start


def test_synthesis_gate_passes(micro_scene, micro_spec):
    q, report = synthesize_policy(micro_scene, micro_spec, MICRO_SYNTH)
    assert report["gate_passed"] and report["rounds"] == 1
    assert report["greedy_robustness"] > 0.0
    assert report["states"] == len(q)


def test_synthesis_gate_error(micro_scene, micro_spec):
    hopeless = SynthesisConfig(episodes=1, epsilon_schedule=(0.0, 0.0, 1), seed=1)
    with pytest.raises(SynthesisGateError):
        synthesize_policy(micro_scene, micro_spec, hopeless, max_rounds=1)
