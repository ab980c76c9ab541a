"""Temporal-constraint language: parsing, quantitative semantics, prefix monitoring.

The supported fragment keeps negation and disjunction below the temporal
operators, and allows conjunction of temporal terms only at the top level:

    top      := nontemp | top & top | F[a,b] nontemp | G[a,b] nontemp
              | F[a,c1]G[c2,b] nontemp
    nontemp  := name | !nontemp | nontemp & nontemp | nontemp | nontemp

Satisfaction is strict: a trace satisfies a formula exactly when its
robustness is greater than zero.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

from .world import Pose, Scene, signed_distance


class FormulaError(ValueError):
    """Base class for errors raised while reading a specification."""


class FormulaSyntaxError(FormulaError):
    """Malformed token or bracket structure."""


class GrammarError(FormulaError):
    """Well-formed tokens arranged outside the supported fragment."""


class IntervalError(FormulaError):
    """Temporal window with a negative bound or lo > hi."""


class TraceTooShort(ValueError):
    """Trace does not cover the window demanded by the formula."""


@dataclass(frozen=True)
class Interval:
    """Inclusive discrete time window [lo, hi] in steps."""

    lo: int
    hi: int

    def __post_init__(self) -> None:
        if self.lo < 0 or self.hi < 0:
            raise IntervalError(f"window bounds must be non-negative, got [{self.lo},{self.hi}]")
        if self.lo > self.hi:
            raise IntervalError(f"window must have lo <= hi, got [{self.lo},{self.hi}]")


@dataclass(frozen=True)
class Predicate:
    """Region membership test. The quantitative value is the signed distance
    to the region boundary, negated for polarity 'outside'."""

    region: str
    polarity: str = "inside"

    def __post_init__(self) -> None:
        if self.polarity not in ("inside", "outside"):
            raise FormulaError(f"polarity must be 'inside' or 'outside', got {self.polarity!r}")


@dataclass(frozen=True)
class Atom:
    pred: Predicate


@dataclass(frozen=True)
class Not:
    operand: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Eventually:
    window: Interval
    operand: "Formula"


@dataclass(frozen=True)
class Always:
    window: Interval
    operand: "Formula"


@dataclass(frozen=True)
class EventuallyAlways:
    """F over G composite: somewhere in the outer window, the operand holds
    throughout the inner window."""

    outer: Interval
    inner: Interval
    operand: "Formula"


Formula = Union[Atom, Not, And, Or, Eventually, Always, EventuallyAlways]

_TEMPORAL = (Eventually, Always, EventuallyAlways)


@dataclass(frozen=True)
class Trace:
    """Finite pose sequence indexed by discrete time starting at 0."""

    poses: tuple[Pose, ...]

    def __post_init__(self) -> None:
        if not self.poses:
            raise ValueError("trace must contain at least one pose")

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, t: int) -> Pose:
        return self.poses[t]

    def padded(self, length: int) -> "Trace":
        """Extend to ``length`` poses by repeating the final pose (the robot
        parks after its run ends)."""
        if len(self.poses) >= length:
            return self
        tail = (self.poses[-1],) * (length - len(self.poses))
        return Trace(self.poses + tail)


def is_nontemporal(f: Formula) -> bool:
    if isinstance(f, Atom):
        return True
    if isinstance(f, Not):
        return is_nontemporal(f.operand)
    if isinstance(f, (And, Or)):
        return is_nontemporal(f.left) and is_nontemporal(f.right)
    return False


# --- parsing ---------------------------------------------------------------

_TOKEN = re.compile(r"[A-Za-z_][A-Za-z0-9_]*|\d+|[&|!(),\[\]]")


def _tokenize(text: str) -> list[tuple[str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if m is None:
            raise FormulaSyntaxError(f"unexpected character {text[pos]!r} at position {pos}")
        tokens.append((m.group(), pos))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, tokens: list[tuple[str, int]]):
        self.tokens = tokens
        self.pos = 0

    def peek(self, offset: int = 0) -> str | None:
        i = self.pos + offset
        return self.tokens[i][0] if i < len(self.tokens) else None

    def take(self) -> str:
        if self.pos >= len(self.tokens):
            raise FormulaSyntaxError("unexpected end of specification")
        tok, _ = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, want: str) -> None:
        tok = self.take()
        if tok != want:
            raise FormulaSyntaxError(f"expected {want!r}, got {tok!r}")

    def parse(self) -> Formula:
        f = self._or()
        if self.pos < len(self.tokens):
            tok, at = self.tokens[self.pos]
            raise FormulaSyntaxError(f"unexpected token {tok!r} at position {at}")
        return f

    def _or(self) -> Formula:
        f = self._and()
        while self.peek() == "|":
            self.take()
            f = Or(f, self._and())
        return f

    def _and(self) -> Formula:
        f = self._unary()
        while self.peek() == "&":
            self.take()
            f = And(f, self._unary())
        return f

    def _unary(self) -> Formula:
        if self.peek() == "!":
            self.take()
            return Not(self._unary())
        return self._primary()

    def _primary(self) -> Formula:
        tok = self.take()
        if tok == "(":
            f = self._or()
            self.expect(")")
            return f
        if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", tok):
            if tok in ("F", "G") and self.peek() == "[":
                return self._temporal(tok)
            return Atom(Predicate(tok))
        raise FormulaSyntaxError(f"unexpected token {tok!r}")

    def _temporal(self, op: str) -> Formula:
        window = self._interval()
        if op == "F" and self.peek() == "G" and self.peek(1) == "[":
            self.take()
            inner = self._interval()
            return EventuallyAlways(window, inner, self._unary())
        operand = self._unary()
        return Eventually(window, operand) if op == "F" else Always(window, operand)

    def _interval(self) -> Interval:
        self.expect("[")
        lo = self.take()
        if not lo.isdigit():
            raise FormulaSyntaxError(f"expected integer window bound, got {lo!r}")
        self.expect(",")
        hi = self.take()
        if not hi.isdigit():
            raise FormulaSyntaxError(f"expected integer window bound, got {hi!r}")
        self.expect("]")
        return Interval(int(lo), int(hi))


def _validate_top(f: Formula) -> None:
    if isinstance(f, And):
        _validate_top(f.left)
        _validate_top(f.right)
        return
    if isinstance(f, (Eventually, Always)):
        if not is_nontemporal(f.operand):
            raise GrammarError("temporal operator applied to a temporal operand")
        return
    if isinstance(f, EventuallyAlways):
        if not is_nontemporal(f.operand):
            raise GrammarError("temporal operator applied to a temporal operand")
        return
    if not is_nontemporal(f):
        raise GrammarError("temporal operator may not appear under '!' or '|'")


def parse_spec(text: str) -> Formula:
    """Parse specification text into a formula.

    Raises FormulaSyntaxError for malformed tokens or brackets, GrammarError
    for structures outside the fragment, and IntervalError for bad windows.
    """
    f = _Parser(_tokenize(text)).parse()
    _validate_top(f)
    return f


def format_formula(f: Formula) -> str:
    """Render a formula as parseable text (inverse of ``parse_spec`` up to
    structural equality for formulas that came from the parser)."""

    def wrap(g: Formula) -> str:
        if isinstance(g, Atom) and g.pred.polarity == "inside":
            return g.pred.region
        return f"({format_formula(g)})"

    if isinstance(f, Atom):
        return f.pred.region if f.pred.polarity == "inside" else f"!{f.pred.region}"
    if isinstance(f, Not):
        return f"!{wrap(f.operand)}"
    if isinstance(f, And):
        return f"{wrap(f.left)} & {wrap(f.right)}"
    if isinstance(f, Or):
        return f"{wrap(f.left)} | {wrap(f.right)}"
    if isinstance(f, Eventually):
        return f"F[{f.window.lo},{f.window.hi}]{wrap(f.operand)}"
    if isinstance(f, Always):
        return f"G[{f.window.lo},{f.window.hi}]{wrap(f.operand)}"
    return f"F[{f.outer.lo},{f.outer.hi}]G[{f.inner.lo},{f.inner.hi}]{wrap(f.operand)}"


# --- quantitative semantics -------------------------------------------------


def horizon(f: Formula) -> int:
    """Number of steps beyond the evaluation instant the formula can see."""
    if isinstance(f, And):
        return max(horizon(f.left), horizon(f.right))
    if isinstance(f, (Eventually, Always)):
        return f.window.hi
    if isinstance(f, EventuallyAlways):
        return f.outer.hi + f.inner.hi
    return 0


def eval_nontemporal(state: Pose, g: Formula, scene: Scene) -> float:
    """Robustness of a non-temporal formula at a single state."""
    if isinstance(g, Atom):
        sd = signed_distance(state, scene.region(g.pred.region))
        return sd if g.pred.polarity == "inside" else -sd
    if isinstance(g, Not):
        return -eval_nontemporal(state, g.operand, scene)
    if isinstance(g, And):
        return min(eval_nontemporal(state, g.left, scene), eval_nontemporal(state, g.right, scene))
    if isinstance(g, Or):
        return max(eval_nontemporal(state, g.left, scene), eval_nontemporal(state, g.right, scene))
    raise ValueError(f"not a non-temporal formula: {type(g).__name__}")


def robustness(trace: Trace | Sequence[Pose], f: Formula, t: int, scene: Scene) -> float:
    """Quantitative satisfaction of ``f`` over ``trace`` evaluated at time ``t``.

    Raises TraceTooShort unless the trace covers t .. t + horizon(f).
    """
    need = t + horizon(f)
    if t < 0 or need >= len(trace):
        raise TraceTooShort(
            f"need trace indices {t}..{need}, trace has length {len(trace)}"
        )
    return _rho(trace, f, t, scene)


def _rho(trace, f: Formula, t: int, scene: Scene) -> float:
    if isinstance(f, Atom):
        return eval_nontemporal(trace[t], f, scene)
    if isinstance(f, Not):
        return -_rho(trace, f.operand, t, scene)
    if isinstance(f, And):
        return min(_rho(trace, f.left, t, scene), _rho(trace, f.right, t, scene))
    if isinstance(f, Or):
        return max(_rho(trace, f.left, t, scene), _rho(trace, f.right, t, scene))
    if isinstance(f, Eventually):
        return max(
            _rho(trace, f.operand, tp, scene)
            for tp in range(t + f.window.lo, t + f.window.hi + 1)
        )
    if isinstance(f, Always):
        return min(
            _rho(trace, f.operand, tp, scene)
            for tp in range(t + f.window.lo, t + f.window.hi + 1)
        )
    return max(
        min(
            _rho(trace, f.operand, tpp, scene)
            for tpp in range(tp + f.inner.lo, tp + f.inner.hi + 1)
        )
        for tp in range(t + f.outer.lo, t + f.outer.hi + 1)
    )


# --- prefix monitoring --------------------------------------------------------


class Verdict(Enum):
    SATISFIED = "satisfied"
    VIOLATED = "violated"
    INCONCLUSIVE = "inconclusive"


_VERDICT_CODE = {Verdict.INCONCLUSIVE: 0, Verdict.SATISFIED: 1, Verdict.VIOLATED: 2}
_CODE_VERDICT = {v: k for k, v in _VERDICT_CODE.items()}


def pack_statuses(statuses: Sequence[Verdict]) -> int:
    """Encode per-conjunct verdicts as 2 bits each, conjunct 0 in the low bits."""
    mask = 0
    for i, s in enumerate(statuses):
        mask |= _VERDICT_CODE[s] << (2 * i)
    return mask


def unpack_statuses(mask: int, n: int) -> tuple[Verdict, ...]:
    return tuple(_CODE_VERDICT[(mask >> (2 * i)) & 3] for i in range(n))


def top_conjuncts(f: Formula) -> tuple[Formula, ...]:
    """Top-level conjuncts in left-to-right order."""
    if isinstance(f, And):
        return top_conjuncts(f.left) + top_conjuncts(f.right)
    return (f,)


def nontemporal_operand(conjunct: Formula) -> Formula:
    """The state formula a conjunct tests: the operand of a temporal conjunct,
    or the conjunct itself when non-temporal."""
    if isinstance(conjunct, _TEMPORAL):
        return conjunct.operand
    return conjunct


class ConjunctEvaluator:
    """Memoized per-conjunct operand robustness for one scene.

    Headings never affect predicate values, so results are keyed by position;
    scenes whose motion stays on the cell lattice revisit keys constantly.
    """

    def __init__(self, spec: Formula, scene: Scene):
        self.scene = scene
        self.operands = tuple(nontemporal_operand(c) for c in top_conjuncts(spec))
        self._memo: dict[tuple[float, float], tuple[float, ...]] = {}

    def values(self, pose: Pose) -> tuple[float, ...]:
        key = (pose.x, pose.y)
        vals = self._memo.get(key)
        if vals is None:
            vals = tuple(eval_nontemporal(pose, g, self.scene) for g in self.operands)
            self._memo[key] = vals
        return vals


class _NonTemporalTracker:
    __slots__ = ("verdict",)

    def __init__(self):
        self.verdict = Verdict.INCONCLUSIVE

    def observe(self, t: int, value: float) -> None:
        if self.verdict is Verdict.INCONCLUSIVE and t == 0:
            self.verdict = Verdict.SATISFIED if value > 0.0 else Verdict.VIOLATED

    def clone(self):
        c = _NonTemporalTracker()
        c.verdict = self.verdict
        return c


class _EventuallyTracker:
    __slots__ = ("lo", "hi", "verdict")

    def __init__(self, lo: int, hi: int):
        self.lo = lo
        self.hi = hi
        self.verdict = Verdict.INCONCLUSIVE

    def observe(self, t: int, value: float) -> None:
        if self.verdict is not Verdict.INCONCLUSIVE or t < self.lo or t > self.hi:
            return
        if value > 0.0:
            self.verdict = Verdict.SATISFIED
        elif t == self.hi:
            self.verdict = Verdict.VIOLATED

    def clone(self):
        c = _EventuallyTracker(self.lo, self.hi)
        c.verdict = self.verdict
        return c


class _AlwaysTracker:
    __slots__ = ("lo", "hi", "verdict")

    def __init__(self, lo: int, hi: int):
        self.lo = lo
        self.hi = hi
        self.verdict = Verdict.INCONCLUSIVE

    def observe(self, t: int, value: float) -> None:
        if self.verdict is not Verdict.INCONCLUSIVE or t < self.lo or t > self.hi:
            return
        if value <= 0.0:
            self.verdict = Verdict.VIOLATED
        elif t == self.hi:
            self.verdict = Verdict.SATISFIED

    def clone(self):
        c = _AlwaysTracker(self.lo, self.hi)
        c.verdict = self.verdict
        return c


class _EventuallyAlwaysTracker:
    """Monitors F[a,c1]G[c2,b]: some inner window, starting between a+c2 and
    c1+c2 and lasting b-c2+1 steps, must be positive throughout.

    ``run`` is the length of the positive streak ending at the last observed
    step; a window is decided satisfied as soon as the streak covers it.
    """

    __slots__ = ("s_lo", "s_hi", "length", "run", "verdict")

    def __init__(self, s_lo: int, s_hi: int, length: int):
        self.s_lo = s_lo
        self.s_hi = s_hi
        self.length = length
        self.run = 0
        self.verdict = Verdict.INCONCLUSIVE

    def observe(self, t: int, value: float) -> None:
        if self.verdict is not Verdict.INCONCLUSIVE:
            return
        self.run = self.run + 1 if value > 0.0 else 0
        if max(self.s_lo, t - self.run + 1) <= min(self.s_hi, t - self.length + 1):
            self.verdict = Verdict.SATISFIED
        elif self.s_hi < t - self.run + 1:
            self.verdict = Verdict.VIOLATED

    def clone(self):
        c = _EventuallyAlwaysTracker(self.s_lo, self.s_hi, self.length)
        c.run = self.run
        c.verdict = self.verdict
        return c


def _make_tracker(conjunct: Formula):
    if isinstance(conjunct, Eventually):
        return _EventuallyTracker(conjunct.window.lo, conjunct.window.hi)
    if isinstance(conjunct, Always):
        return _AlwaysTracker(conjunct.window.lo, conjunct.window.hi)
    if isinstance(conjunct, EventuallyAlways):
        s_lo = conjunct.outer.lo + conjunct.inner.lo
        s_hi = conjunct.outer.hi + conjunct.inner.lo
        length = conjunct.inner.hi - conjunct.inner.lo + 1
        return _EventuallyAlwaysTracker(s_lo, s_hi, length)
    return _NonTemporalTracker()


class SpecMonitor:
    """Incremental three-valued monitor over the top-level conjuncts.

    Feed poses in time order with ``observe``; per-conjunct verdicts are
    irrevocable once Satisfied or Violated. The overall verdict is Violated if
    any conjunct is, Satisfied once every conjunct is, else Inconclusive.
    """

    def __init__(self, spec: Formula, scene: Scene, evaluator: ConjunctEvaluator | None = None):
        self.evaluator = evaluator if evaluator is not None else ConjunctEvaluator(spec, scene)
        self.conjuncts = top_conjuncts(spec)
        self.trackers = [_make_tracker(c) for c in self.conjuncts]
        self.next_t = 0

    @classmethod
    def resumed(
        cls,
        spec: Formula,
        scene: Scene,
        next_t: int,
        statuses: Sequence[Verdict],
        evaluator: ConjunctEvaluator | None = None,
        runs: Sequence[int] | None = None,
    ) -> "SpecMonitor":
        """Monitor whose first ``next_t`` observations are summarized by
        ``statuses`` (and, for F-over-G conjuncts, by the streak lengths in
        ``runs``). The caller vouches that the summary matches some prefix."""
        mon = cls(spec, scene, evaluator)
        mon.next_t = next_t
        for i, tracker in enumerate(mon.trackers):
            tracker.verdict = statuses[i]
            if runs is not None and isinstance(tracker, _EventuallyAlwaysTracker):
                tracker.run = runs[i]
        return mon

    def observe(self, pose: Pose) -> None:
        values = self.evaluator.values(pose)
        t = self.next_t
        for tracker, v in zip(self.trackers, values):
            tracker.observe(t, v)
        self.next_t += 1

    def statuses(self) -> tuple[Verdict, ...]:
        return tuple(tr.verdict for tr in self.trackers)

    def status_mask(self) -> int:
        return pack_statuses(self.statuses())

    def verdict(self) -> Verdict:
        saw_open = False
        for tr in self.trackers:
            if tr.verdict is Verdict.VIOLATED:
                return Verdict.VIOLATED
            if tr.verdict is Verdict.INCONCLUSIVE:
                saw_open = True
        return Verdict.INCONCLUSIVE if saw_open else Verdict.SATISFIED

    def clone(self) -> "SpecMonitor":
        mon = SpecMonitor.__new__(SpecMonitor)
        mon.evaluator = self.evaluator
        mon.conjuncts = self.conjuncts
        mon.trackers = [tr.clone() for tr in self.trackers]
        mon.next_t = self.next_t
        return mon


def prefix_verdict(prefix: Trace | Sequence[Pose], f: Formula, scene: Scene) -> Verdict:
    """Three-valued verdict of a trace prefix: Satisfied and Violated are
    irrevocable under any extension; otherwise Inconclusive."""
    mon = SpecMonitor(f, scene)
    for pose in prefix:
        mon.observe(pose)
    return mon.verdict()
