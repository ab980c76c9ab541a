"""Offline policy synthesis.

A time-decaying funnel around each temporal conjunct turns the specification
into a dense shaped reward; tabular Q-learning over (cell, heading, time,
constraint-status) then yields a deterministic backup policy. Synthesis is
gated: the greedy policy must itself satisfy the specification from the start
state before it is accepted.
"""

from __future__ import annotations

import math
import struct
from array import array
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .stl import (
    Always,
    ConjunctEvaluator,
    Eventually,
    EventuallyAlways,
    Formula,
    SpecMonitor,
    Trace,
    Verdict,
    eval_nontemporal,
    horizon,
    nontemporal_operand,
    robustness,
    top_conjuncts,
)
from .world import ACTIONS, Pose, Scene, cached_step, free_cells


class IllegalTStar(ValueError):
    """Funnel anchor time outside the range the conjunct type allows."""


class DegenerateRobustness(ValueError):
    """Conjunct operand is non-positive over every reachable cell, so no
    funnel can demand satisfaction."""


class SynthesisGateError(RuntimeError):
    """Training exhausted its escalation budget without producing a greedy
    policy that satisfies the specification."""


@dataclass(frozen=True)
class FunnelParams:
    """Exponential envelope gamma(t) = (gamma0 - gamma_inf) e^{-ell t} + gamma_inf.

    Calibrated so gamma(t_star) == rho_max: a state can only keep the shaped
    reward non-negative at t_star by actually satisfying the operand.
    """

    gamma0: float
    gamma_inf: float
    ell: float
    t_star: int
    rho_max: float


def funnel_value(p: FunnelParams, t: int) -> float:
    return (p.gamma0 - p.gamma_inf) * math.exp(-p.ell * t) + p.gamma_inf


def _legal_t_star_range(conjunct: Formula) -> tuple[int, int]:
    if isinstance(conjunct, Always):
        return conjunct.window.lo, conjunct.window.lo
    if isinstance(conjunct, Eventually):
        return conjunct.window.lo, conjunct.window.hi
    if isinstance(conjunct, EventuallyAlways):
        lo = conjunct.outer.lo + conjunct.inner.lo
        return lo, conjunct.outer.hi + conjunct.inner.lo
    raise ValueError("funnels apply to temporal conjuncts only")


def funnel_params(
    conjunct: Formula,
    scene: Scene,
    t_star: int | None = None,
    gamma_inf_fraction: float = 0.05,
) -> FunnelParams:
    """Calibrate a funnel for one temporal conjunct.

    The anchor t_star must fall where satisfaction of the operand actually
    resolves the conjunct: at the window start for G, anywhere in the window
    for F, and anywhere an inner window may start for the F-G composite.
    Bounds come from scanning every footprint-free cell center.
    """
    lo, hi = _legal_t_star_range(conjunct)
    choice = lo if t_star is None else t_star
    if choice < lo or choice > hi:
        raise IllegalTStar(f"t_star={choice} outside legal range [{lo},{hi}]")

    operand = nontemporal_operand(conjunct)
    cells = free_cells(scene.grid, scene.footprint_radius)
    if not cells:
        raise DegenerateRobustness("scene has no footprint-free cells")
    values = [
        eval_nontemporal(Pose(*scene.grid.cell_center(ix, iy), 0), operand, scene)
        for ix, iy in cells
    ]
    rho_max = max(values)
    rho_min = min(values)
    if rho_max <= 0.0:
        raise DegenerateRobustness(
            "conjunct operand is non-positive at every free cell center"
        )

    gamma_inf = gamma_inf_fraction * rho_max
    gamma0 = rho_max - rho_min
    if gamma0 <= rho_max:
        # operand positive everywhere: widen so the envelope still decays
        gamma0 = rho_max + gamma_inf
    anchor = max(1, choice)  # exponential calibration needs t_star >= 1
    ell = math.log((gamma0 - gamma_inf) / (rho_max - gamma_inf)) / anchor
    return FunnelParams(gamma0, gamma_inf, ell, anchor, rho_max)


@dataclass(frozen=True)
class ConjunctPlan:
    """Funnel plus bookkeeping for one temporal conjunct.

    ``index`` is the conjunct's position among the top-level conjuncts and
    selects its 2-bit field in a packed status mask. ``active`` is the span of
    absolute times at which the operand's value can still matter.
    """

    conjunct: Formula
    funnel: FunnelParams
    active: tuple[int, int]
    index: int


def _default_t_star(conjunct: Formula) -> int:
    if isinstance(conjunct, Always):
        return conjunct.window.lo
    if isinstance(conjunct, Eventually):
        return (conjunct.window.lo + conjunct.window.hi + 1) // 2
    outer, inner = conjunct.outer, conjunct.inner
    return outer.lo + inner.lo + (outer.hi - outer.lo + 1) // 2


def _active_span(conjunct: Formula) -> tuple[int, int]:
    if isinstance(conjunct, EventuallyAlways):
        return (
            conjunct.outer.lo + conjunct.inner.lo,
            conjunct.outer.hi + conjunct.inner.hi,
        )
    return conjunct.window.lo, conjunct.window.hi


def build_plans(
    spec: Formula,
    scene: Scene,
    t_star_choices: dict[int, int] | None = None,
    gamma_inf_fraction: float = 0.05,
    safety_gamma_inf_fraction: float = 0.95,
) -> tuple[ConjunctPlan, ...]:
    """Funnel plans for every temporal top-level conjunct of ``spec``.

    Reach conjuncts (F, F-G) use ``gamma_inf_fraction``: their envelope
    tightens toward rho_max, and witnessing the operand resolves them and
    removes the pressure. A bare G stays unresolved until its window closes,
    so a tightening envelope would demand ever-growing margin for the rest of
    the run and fight the reach conjuncts under the min composition;
    ``safety_gamma_inf_fraction`` instead lets its requirement settle at the
    complementary cushion (1 - fraction) * rho_max above violation.
    """
    plans = []
    for index, conjunct in enumerate(top_conjuncts(spec)):
        if not isinstance(conjunct, (Eventually, Always, EventuallyAlways)):
            continue
        choice = None
        if t_star_choices is not None and index in t_star_choices:
            choice = t_star_choices[index]
        if choice is None:
            choice = _default_t_star(conjunct)
        fraction = (
            safety_gamma_inf_fraction
            if isinstance(conjunct, Always)
            else gamma_inf_fraction
        )
        funnel = funnel_params(conjunct, scene, choice, fraction)
        plans.append(ConjunctPlan(conjunct, funnel, _active_span(conjunct), index))
    return tuple(plans)


def shaped_reward(
    state: Pose,
    t: int,
    plans: tuple[ConjunctPlan, ...],
    status_mask: int,
    scene: Scene,
    evaluator: ConjunctEvaluator | None = None,
) -> float:
    """Worst funnel margin rho + gamma(t) - rho_max over unresolved conjuncts;
    zero once every planned conjunct is resolved."""
    vals = evaluator.values(state) if evaluator is not None else None
    worst = None
    for p in plans:
        if (status_mask >> (2 * p.index)) & 3:
            continue
        v = (
            vals[p.index]
            if vals is not None
            else eval_nontemporal(state, nontemporal_operand(p.conjunct), scene)
        )
        r = v + funnel_value(p.funnel, t) - p.funnel.rho_max
        if worst is None or r < worst:
            worst = r
    return 0.0 if worst is None else worst


@dataclass(frozen=True)
class SynthesisConfig:
    episodes: int = 200_000
    learning_rate: float = 0.1
    discount: float = 0.99
    # (start, end, episodes over which to decay linearly)
    epsilon_schedule: tuple[float, float, int] = (1.0, 0.05, 100_000)
    seed: int = 0


class QTable:
    """Sparse action-value table keyed by (cell, heading, time, status mask).

    Rows are created on first write; unseen states read as all-zero, which
    makes the greedy tie-break fall through to the first action.
    """

    def __init__(
        self,
        width: int,
        height: int,
        heading_count: int,
        horizon: int,
        n_conjuncts: int,
        resolution: float,
    ):
        if horizon < 1:
            raise ValueError("policy horizon must be at least 1 step")
        self.width = width
        self.height = height
        self.heading_count = heading_count
        self.horizon = horizon
        self.n_conjuncts = n_conjuncts
        self.resolution = resolution
        self.span = 4**n_conjuncts
        self._index: dict[int, int] = {}
        self._values = array("d")

    @classmethod
    def for_task(cls, scene: Scene, spec: Formula) -> "QTable":
        return cls(
            scene.grid.width,
            scene.grid.height,
            scene.heading_count,
            horizon(spec),
            len(top_conjuncts(spec)),
            scene.grid.resolution,
        )

    def __len__(self) -> int:
        return len(self._index)

    def state_key(self, ix: int, iy: int, heading: int, t: int, mask: int) -> int:
        cell = iy * self.width + ix
        return ((cell * self.heading_count + heading) * self.horizon + t) * self.span + mask

    def pose_key(self, pose: Pose, t: int, mask: int) -> int:
        ix = int(pose.x / self.resolution)
        iy = int(pose.y / self.resolution)
        return self.state_key(ix, iy, pose.heading, t, mask)

    def action_values(self, key: int) -> tuple[float, float, float, float]:
        base = self._index.get(key)
        if base is None:
            return (0.0, 0.0, 0.0, 0.0)
        v = self._values
        return (v[base], v[base + 1], v[base + 2], v[base + 3])

    def _ensure(self, key: int) -> int:
        base = self._index.get(key)
        if base is None:
            base = len(self._values)
            self._index[key] = base
            self._values.extend((0.0, 0.0, 0.0, 0.0))
        return base


def _argmax(vals) -> int:
    best = 0
    for i in range(1, 4):
        if vals[i] > vals[best]:
            best = i
    return best


def policy_action(q: QTable, pose: Pose, t: int, status_mask: int):
    """Greedy backup-policy action; ties break in fixed action order."""
    return ACTIONS[_argmax(q.action_values(q.pose_key(pose, t, status_mask)))]


def _hop_buckets(seeds, free_set, cap):
    """Free cells bucketed by 4-connected hop distance (0..cap) from a seed
    set; bucket 0 is the seed set itself."""
    seen = set(seeds)
    frontier = list(seeds)
    buckets = [list(seeds)]
    while frontier and len(buckets) <= cap:
        nxt = []
        for ix, iy in frontier:
            for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                cell = (ix + dx, iy + dy)
                if cell in free_set and cell not in seen:
                    seen.add(cell)
                    nxt.append(cell)
        if nxt:
            buckets.append(nxt)
        frontier = nxt
    return buckets


def _draw_statuses(conjuncts, t0: int, rng) -> tuple[Verdict, ...]:
    """Random constraint statuses consistent with a decision at time t0."""
    out = []
    for c in conjuncts:
        if isinstance(c, Eventually):
            if t0 > c.window.hi:
                out.append(Verdict.SATISFIED)
            elif t0 >= c.window.lo and rng.random() < 0.5:
                out.append(Verdict.SATISFIED)
            else:
                out.append(Verdict.INCONCLUSIVE)
        elif isinstance(c, Always):
            out.append(Verdict.SATISFIED if t0 > c.window.hi else Verdict.INCONCLUSIVE)
        elif isinstance(c, EventuallyAlways):
            earliest = c.outer.lo + c.inner.hi
            latest = c.outer.hi + c.inner.hi
            if t0 > latest:
                out.append(Verdict.SATISFIED)
            elif t0 >= earliest and rng.random() < 0.5:
                out.append(Verdict.SATISFIED)
            else:
                out.append(Verdict.INCONCLUSIVE)
        else:
            # non-temporal conjuncts resolve on the first observation
            out.append(Verdict.SATISFIED if t0 >= 1 else Verdict.INCONCLUSIVE)
    return tuple(out)


def train_policy(
    scene: Scene,
    spec: Formula,
    cfg: SynthesisConfig,
    plans: tuple[ConjunctPlan, ...] | None = None,
    evaluator: ConjunctEvaluator | None = None,
) -> QTable:
    """Tabular Q-learning against the funnel-shaped reward.

    Episodes mix three start distributions: the scene start at time 0, a
    uniformly random free pose at a random time with a random consistent
    constraint status, and a pose at a stratified hop distance from a randomly
    chosen unresolved conjunct's region while that conjunct is in (or shortly
    before) its window. The last kind keeps flip events and their approach
    paths frequent so the flip value reaches the rest of the table without
    waiting for undirected exploration to stumble into a region in-window.
    """
    if plans is None:
        plans = build_plans(spec, scene)
    T = horizon(spec)
    q = QTable.for_task(scene, spec)
    if evaluator is None:
        evaluator = ConjunctEvaluator(spec, scene)
    conjuncts = top_conjuncts(spec)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))
    cells = free_cells(scene.grid, scene.footprint_radius)
    if not cells:
        raise DegenerateRobustness("scene has no footprint-free cells")
    centers = [scene.grid.cell_center(ix, iy) for ix, iy in cells]
    # per temporal conjunct: free cells bucketed by hop distance from the
    # cells where its operand holds
    focus = []
    free_set = set(cells)
    for p in plans:
        seeds = [
            cells[i]
            for i, c in enumerate(centers)
            if evaluator.values(Pose(c[0], c[1], 0))[p.index] > 0.0
        ]
        if seeds:
            focus.append((p, _hop_buckets(seeds, free_set, 12)))
    memo: dict = {}
    rho_cap = max((p.funnel.rho_max for p in plans), default=1.0)
    penalty = -10.0 * max(rho_cap, 1.0)
    eps_start, eps_end, eps_decay = cfg.epsilon_schedule
    lr = cfg.learning_rate
    disc = cfg.discount
    values = q._values

    for ep in range(cfg.episodes):
        frac = min(1.0, ep / eps_decay) if eps_decay > 0 else 1.0
        eps = eps_start + (eps_end - eps_start) * frac
        draw = rng.random()
        if draw < 0.5:
            pose = scene.start
            t0 = 0
            mon = SpecMonitor(spec, scene, evaluator)
        elif draw < 0.75 or not focus:
            cx, cy = centers[int(rng.integers(0, len(centers)))]
            pose = Pose(cx, cy, int(rng.integers(0, scene.heading_count)))
            t0 = int(rng.integers(0, T))
            mon = SpecMonitor.resumed(
                spec, scene, t0, _draw_statuses(conjuncts, t0, rng), evaluator=evaluator
            )
        else:
            plan, buckets = focus[int(rng.integers(0, len(focus)))]
            lo, hi = plan.active
            t0 = int(rng.integers(max(0, lo - 10), min(hi, T - 1) + 1))
            bucket = buckets[int(rng.integers(0, len(buckets)))]
            ix, iy = bucket[int(rng.integers(0, len(bucket)))]
            cx, cy = scene.grid.cell_center(ix, iy)
            pose = Pose(cx, cy, int(rng.integers(0, scene.heading_count)))
            statuses = list(_draw_statuses(conjuncts, t0, rng))
            statuses[plan.index] = Verdict.INCONCLUSIVE
            mon = SpecMonitor.resumed(spec, scene, t0, statuses, evaluator=evaluator)
        mon.observe(pose)
        verdict = mon.verdict()

        transitions = []
        for t in range(t0, T):
            mask = mon.status_mask()
            key = q.pose_key(pose, t, mask)
            if rng.random() < eps:
                a = int(rng.integers(0, 4))
            else:
                a = _argmax(q.action_values(key))
            pose2 = cached_step(scene, pose, ACTIONS[a], memo)
            r = shaped_reward(pose2, t + 1, plans, mask, scene, evaluator)
            mon.observe(pose2)
            new_verdict = mon.verdict()
            if new_verdict is Verdict.VIOLATED and verdict is not Verdict.VIOLATED:
                r += penalty
            verdict = new_verdict
            # Satisfied is the only verdict worth cutting on: its reward-to-go
            # is exactly zero, while a violated episode must keep paying the
            # funnel drag of the still-open conjuncts or violation would look
            # like an escape from it.
            done = (t + 1 == T) or verdict is Verdict.SATISFIED
            key2 = None if done else q.pose_key(pose2, t + 1, mon.status_mask())
            transitions.append((key, a, r, key2))
            if done:
                break
            pose = pose2

        # Apply the updates newest-first so one episode carries its outcome
        # all the way back along the trajectory instead of one step per visit.
        for key, a, r, key2 in reversed(transitions):
            target = r if key2 is None else r + disc * max(q.action_values(key2))
            base = q._ensure(key) + a
            values[base] += lr * (target - values[base])
    return q


def greedy_rollout(
    scene: Scene,
    spec: Formula,
    q: QTable,
    evaluator: ConjunctEvaluator | None = None,
) -> Trace:
    """Run the greedy policy from the scene start for the full horizon."""
    T = horizon(spec)
    mon = SpecMonitor(spec, scene, evaluator)
    pose = scene.start
    mon.observe(pose)
    poses = [pose]
    memo: dict = {}
    for t in range(T):
        pose = cached_step(scene, pose, policy_action(q, pose, t, mon.status_mask()), memo)
        mon.observe(pose)
        poses.append(pose)
    return Trace(tuple(poses))


def synthesize_policy(
    scene: Scene,
    spec: Formula,
    cfg: SynthesisConfig | None = None,
    max_rounds: int = 3,
    t_star_choices: dict[int, int] | None = None,
) -> tuple[QTable, dict]:
    """Train until the greedy policy satisfies the specification.

    Each failed round doubles the episode budget. Raises SynthesisGateError
    when every round fails; the returned policy otherwise carries a
    satisfaction certificate in the report dict.
    """
    if cfg is None:
        cfg = SynthesisConfig()
    plans = build_plans(spec, scene, t_star_choices)
    evaluator = ConjunctEvaluator(spec, scene)
    episodes = cfg.episodes
    best_rho = -math.inf
    for round_no in range(1, max_rounds + 1):
        q = train_policy(scene, spec, replace(cfg, episodes=episodes), plans, evaluator)
        trace = greedy_rollout(scene, spec, q, evaluator)
        rho = robustness(trace, spec, 0, scene)
        best_rho = max(best_rho, rho)
        if rho > 0.0:
            report = {
                "gate_passed": True,
                "rounds": round_no,
                "episodes": episodes,
                "greedy_robustness": rho,
                "states": len(q),
            }
            return q, report
        episodes *= 2
    raise SynthesisGateError(
        f"greedy policy violates the specification after {max_rounds} rounds "
        f"(best robustness {best_rho})"
    )


_MAGIC = b"SQTB"
_VERSION = 1
_HEADER = struct.Struct("<4sB3x5IdQ")


def save_qtable(q: QTable, path: str | Path) -> None:
    """Write the table in a deterministic sorted binary layout."""
    keys = sorted(q._index)
    karr = np.array(keys, dtype="<u8")
    varr = np.empty((len(keys), 4), dtype="<f8")
    for row, k in enumerate(keys):
        base = q._index[k]
        varr[row] = q._values[base : base + 4]
    header = _HEADER.pack(
        _MAGIC,
        _VERSION,
        q.width,
        q.height,
        q.heading_count,
        q.horizon,
        q.n_conjuncts,
        q.resolution,
        len(keys),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(karr.tobytes())
        fh.write(varr.tobytes())


def load_qtable(path: str | Path) -> QTable:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError("policy file truncated")
    magic, version, width, height, headings, horizon_, n_conj, res, count = _HEADER.unpack_from(
        data
    )
    if magic != _MAGIC:
        raise ValueError("not a policy file")
    if version != _VERSION:
        raise ValueError(f"unsupported policy file version {version}")
    expected = _HEADER.size + count * 8 + count * 32
    if len(data) != expected:
        raise ValueError(f"policy file length {len(data)} != expected {expected}")
    keys = np.frombuffer(data, dtype="<u8", count=count, offset=_HEADER.size)
    vals = np.frombuffer(data, dtype="<f8", count=count * 4, offset=_HEADER.size + count * 8)
    q = QTable(width, height, headings, horizon_, n_conj, res)
    q._index = {int(k): 4 * i for i, k in enumerate(keys)}
    q._values = array("d", vals.tolist())
    return q
