"""Signal temporal logic: formula AST, text parser, and robustness monitoring.

Formulas are immutable trees of predicates, Boolean connectives, and bounded
temporal operators.  Robustness is evaluated quantitatively over sampled
signals with linear interpolation between samples; temporal min/max run over
the sample grid restricted to the operator window, with the window endpoints
included by interpolation when they fall between samples.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Optional, Union

import numpy as np


class FormulaSyntaxError(ValueError):
    """Malformed formula text; carries the character position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class IntervalError(ValueError):
    """Temporal interval violating 0 <= start <= end."""


class UndefinedPredicateError(ValueError):
    """Formula references predicate names missing from the declaration table."""

    def __init__(self, names):
        self.names = sorted(names)
        super().__init__("undeclared predicate name(s): " + ", ".join(self.names))


# ---------------------------------------------------------------------------
# Predicate functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineHalfspace:
    """h(x) = weights . x + offset."""

    weights: tuple
    offset: float

    def value(self, states: np.ndarray) -> np.ndarray:
        return np.asarray(states) @ np.asarray(self.weights) + self.offset

    def lipschitz_2norm(self) -> float:
        return float(np.linalg.norm(self.weights))


@dataclass(frozen=True)
class BoxInfNorm:
    """h(x) = halfwidth - ||x - center||_inf (positive inside the cube)."""

    center: tuple
    halfwidth: float

    def value(self, states: np.ndarray) -> np.ndarray:
        d = np.abs(np.asarray(states) - np.asarray(self.center))
        return self.halfwidth - d.max(axis=-1)

    def lipschitz_2norm(self) -> float:
        # 1-Lipschitz in the inf-norm; reported in the 2-norm convention via
        # the sqrt(n) conversion factor (conservative upper bound).
        return math.sqrt(len(self.center))


@dataclass(frozen=True)
class BallNorm2:
    """h(x) = radius - ||x - center||_2 (positive inside the ball)."""

    center: tuple
    radius: float

    def value(self, states: np.ndarray) -> np.ndarray:
        d = np.asarray(states) - np.asarray(self.center)
        return self.radius - np.linalg.norm(d, axis=-1)

    def lipschitz_2norm(self) -> float:
        return 1.0


PredicateFn = Union[AffineHalfspace, BoxInfNorm, BallNorm2]


# ---------------------------------------------------------------------------
# Formula AST
# ---------------------------------------------------------------------------

class Formula:
    """Base class for formula nodes; nodes are immutable and hashable."""

    __slots__ = ()

    def __and__(self, other: "Formula") -> "Formula":
        return And(self, other)

    def __or__(self, other: "Formula") -> "Formula":
        return Or(self, other)

    def __invert__(self) -> "Formula":
        return Not(self)


@dataclass(frozen=True)
class TrueFormula(Formula):
    def __str__(self) -> str:
        return "true"


TRUE = TrueFormula()


@dataclass(frozen=True)
class Predicate(Formula):
    name: str
    fn: Optional[PredicateFn] = None

    def __str__(self) -> str:
        return self.name


def _check_interval(start: float, end: float) -> None:
    if not (0.0 <= start <= end < math.inf):
        raise IntervalError(f"interval [{start},{end}] violates 0 <= start <= end")


@dataclass(frozen=True)
class Not(Formula):
    child: Formula

    def __str__(self) -> str:
        return f"!{_paren(self.child)}"


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula

    def __str__(self) -> str:
        return f"{_paren(self.left)} & {_paren(self.right)}"


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula

    def __str__(self) -> str:
        return f"{_paren(self.left)} | {_paren(self.right)}"


@dataclass(frozen=True)
class Until(Formula):
    start: float
    end: float
    left: Formula
    right: Formula

    def __post_init__(self):
        _check_interval(self.start, self.end)

    def __str__(self) -> str:
        return f"{_paren(self.left)} U[{self.start:g},{self.end:g}] {_paren(self.right)}"


@dataclass(frozen=True)
class Eventually(Formula):
    start: float
    end: float
    child: Formula

    def __post_init__(self):
        _check_interval(self.start, self.end)

    def __str__(self) -> str:
        return f"F[{self.start:g},{self.end:g}] {_paren(self.child)}"


@dataclass(frozen=True)
class Always(Formula):
    start: float
    end: float
    child: Formula

    def __post_init__(self):
        _check_interval(self.start, self.end)

    def __str__(self) -> str:
        return f"G[{self.start:g},{self.end:g}] {_paren(self.child)}"


def _paren(f: Formula) -> str:
    if isinstance(f, (Predicate, TrueFormula, Not, Eventually, Always)):
        return str(f)
    return f"({f})"


def iter_predicates(f: Formula):
    """Yield every Predicate node of the formula (depth-first, with repeats)."""
    stack = [f]
    while stack:
        node = stack.pop()
        if isinstance(node, Predicate):
            yield node
        elif isinstance(node, Not):
            stack.append(node.child)
        elif isinstance(node, (And, Or)):
            stack.extend((node.left, node.right))
        elif isinstance(node, Until):
            stack.extend((node.left, node.right))
        elif isinstance(node, (Eventually, Always)):
            stack.append(node.child)


def bind_predicates(f: Formula, table: Mapping[str, PredicateFn]) -> Formula:
    """Return a copy of the formula with predicate handles attached by name.

    Raises UndefinedPredicateError listing every name missing from the table.
    """
    missing = {p.name for p in iter_predicates(f) if p.name not in table}
    if missing:
        raise UndefinedPredicateError(missing)

    def rebuild(node: Formula) -> Formula:
        if isinstance(node, Predicate):
            return Predicate(node.name, table[node.name])
        if isinstance(node, TrueFormula):
            return node
        if isinstance(node, Not):
            return Not(rebuild(node.child))
        if isinstance(node, And):
            return And(rebuild(node.left), rebuild(node.right))
        if isinstance(node, Or):
            return Or(rebuild(node.left), rebuild(node.right))
        if isinstance(node, Until):
            return Until(node.start, node.end, rebuild(node.left), rebuild(node.right))
        if isinstance(node, Eventually):
            return Eventually(node.start, node.end, rebuild(node.child))
        if isinstance(node, Always):
            return Always(node.start, node.end, rebuild(node.child))
        raise TypeError(f"unknown formula node {node!r}")

    return rebuild(f)


def horizon(f: Formula) -> float:
    """Largest lookahead needed to evaluate the formula from its anchor time."""
    if isinstance(f, (Predicate, TrueFormula)):
        return 0.0
    if isinstance(f, Not):
        return horizon(f.child)
    if isinstance(f, (And, Or)):
        return max(horizon(f.left), horizon(f.right))
    if isinstance(f, Until):
        return f.end + max(horizon(f.left), horizon(f.right))
    if isinstance(f, (Eventually, Always)):
        return f.end + horizon(f.child)
    raise TypeError(f"unknown formula node {f!r}")


def robustness_lipschitz(f: Formula) -> float:
    """Upper bound L such that |rho(x) - rho(y)| <= L * max_t ||x(t)-y(t)||_2.

    Min/max/negation compositions preserve Lipschitz constants, so the bound
    is the max over the formula's predicate constants.
    """
    best = 0.0
    for p in iter_predicates(f):
        if p.fn is None or not isinstance(p.fn, (AffineHalfspace, BoxInfNorm, BallNorm2)):
            raise ValueError(f"predicate {p.name!r} has no supported function handle")
        best = max(best, p.fn.lipschitz_2norm())
    return best


# ---------------------------------------------------------------------------
# Signals
# ---------------------------------------------------------------------------

_TIME_SLACK = 1e-9


@dataclass(frozen=True)
class Signal:
    """Finite sampled trajectory in R^n with linear interpolation semantics."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if times.ndim != 1 or states.ndim != 2 or len(times) != len(states):
            raise ValueError("times must be (T,), states (T, n) of matching length")
        if len(times) < 1:
            raise ValueError("signal needs at least one sample")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(states))):
            raise ValueError("signal contains non-finite values")
        times.setflags(write=False)
        states.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @property
    def dimension(self) -> int:
        return self.states.shape[1]

    @property
    def end_time(self) -> float:
        return float(self.times[-1])

    def at(self, t: float) -> np.ndarray:
        """State at time t by linear interpolation between bracketing samples."""
        times = self.times
        if t < times[0] - _TIME_SLACK or t > times[-1] + _TIME_SLACK:
            raise ValueError(f"time {t} outside signal range [{times[0]}, {times[-1]}]")
        t = min(max(t, times[0]), times[-1])
        j = int(np.searchsorted(times, t, side="right"))
        if j >= len(times):
            return self.states[-1].copy()
        i = max(j - 1, 0)
        if times[i] == t:
            return self.states[i].copy()
        w = (t - times[i]) / (times[j] - times[i])
        return (1.0 - w) * self.states[i] + w * self.states[j]


@dataclass(frozen=True)
class RobustnessReport:
    value: float
    satisfied: bool


# ---------------------------------------------------------------------------
# Robustness evaluation
# ---------------------------------------------------------------------------

class _Trace:
    """Shared-grid batch of trajectories with cached predicate values.

    states has shape (K, T, n); predicate values on the grid are computed
    lazily, one vectorized pass per predicate, and off-grid queries fall back
    to interpolating the state.
    """

    def __init__(self, times: np.ndarray, states: np.ndarray):
        self.times = np.asarray(times, dtype=float)
        states = np.asarray(states, dtype=float)
        if states.ndim == 2:
            states = states[:, :, None]
        self.states = states
        self.count = states.shape[0]
        self._pred_grid: dict[int, np.ndarray] = {}
        self._state_cache: dict[float, np.ndarray] = {}

    def _grid_index(self, t: float) -> int:
        j = int(np.searchsorted(self.times, t))
        if j < len(self.times) and self.times[j] == t:
            return j
        return -1

    def state_at(self, t: float) -> np.ndarray:
        cached = self._state_cache.get(t)
        if cached is not None:
            return cached
        times = self.times
        t_c = min(max(t, times[0]), times[-1])
        j = int(np.searchsorted(times, t_c, side="right"))
        if j >= len(times):
            out = self.states[:, -1, :]
        else:
            i = max(j - 1, 0)
            if times[i] == t_c:
                out = self.states[:, i, :]
            else:
                w = (t_c - times[i]) / (times[j] - times[i])
                out = (1.0 - w) * self.states[:, i, :] + w * self.states[:, j, :]
        self._state_cache[t] = out
        return out

    def predicate_at(self, node: Predicate, t: float) -> np.ndarray:
        if node.fn is None:
            raise ValueError(f"predicate {node.name!r} is unbound; no function handle")
        idx = self._grid_index(t)
        if idx >= 0:
            grid = self._pred_grid.get(id(node))
            if grid is None:
                grid = np.asarray(node.fn.value(self.states), dtype=float)
                self._pred_grid[id(node)] = grid
            return grid[:, idx]
        return np.asarray(node.fn.value(self.state_at(t)), dtype=float)

    def window(self, lo: float, hi: float) -> list[float]:
        """Window endpoints plus every grid time strictly inside (lo, hi)."""
        if hi < lo:
            raise ValueError("empty time window")
        if hi == lo:
            return [lo]
        i = int(np.searchsorted(self.times, lo, side="right"))
        j = int(np.searchsorted(self.times, hi, side="left"))
        return [lo, *self.times[i:j].tolist(), hi]


def _eval(node: Formula, tr: _Trace, t: float, memo: dict, convention: str) -> np.ndarray:
    if isinstance(node, TrueFormula):
        return np.full(tr.count, np.inf)
    if isinstance(node, Predicate):
        return tr.predicate_at(node, t)
    if isinstance(node, Not):
        return -_eval(node.child, tr, t, memo, convention)
    if isinstance(node, And):
        return np.minimum(_eval(node.left, tr, t, memo, convention),
                          _eval(node.right, tr, t, memo, convention))
    if isinstance(node, Or):
        return np.maximum(_eval(node.left, tr, t, memo, convention),
                          _eval(node.right, tr, t, memo, convention))

    key = (id(node), t)
    cached = memo.get(key)
    if cached is not None:
        return cached

    if isinstance(node, (Eventually, Always)):
        ts = tr.window(t + node.start, t + node.end)
        out = _eval(node.child, tr, ts[0], memo, convention).copy()
        combine = np.maximum if isinstance(node, Eventually) else np.minimum
        for u in ts[1:]:
            combine(out, _eval(node.child, tr, u, memo, convention), out=out)
    elif isinstance(node, Until):
        ts = tr.window(t + node.start, t + node.end)
        if convention == "paper":
            point, running = node.left, node.right
            run_min = _eval(running, tr, ts[0], memo, convention).copy()
        elif convention == "standard":
            point, running = node.right, node.left
            # the running clause starts at the evaluation time, not at t+start
            prefix = tr.window(t, t + node.start)
            run_min = _eval(running, tr, prefix[0], memo, convention).copy()
            for u in prefix[1:]:
                np.minimum(run_min, _eval(running, tr, u, memo, convention), out=run_min)
        else:
            raise ValueError(f"unknown until_convention {convention!r}")
        out = np.minimum(_eval(point, tr, ts[0], memo, convention), run_min)
        for u in ts[1:]:
            np.minimum(run_min, _eval(running, tr, u, memo, convention), out=run_min)
            np.maximum(out, np.minimum(_eval(point, tr, u, memo, convention), run_min), out=out)
    else:
        raise TypeError(f"unknown formula node {node!r}")

    memo[key] = out
    return out


def robustness_batch(f: Formula, times: np.ndarray, states: np.ndarray,
                     t: float = 0.0, *, until_convention: str = "paper") -> np.ndarray:
    """Robustness of K trajectories sharing one time grid; states is (K, T, n)."""
    times = np.asarray(times, dtype=float)
    if t + horizon(f) > times[-1] + _TIME_SLACK:
        raise ValueError(
            f"formula horizon {horizon(f)} from t={t} exceeds signal end {times[-1]}")
    if t < times[0] - _TIME_SLACK:
        raise ValueError(f"evaluation time {t} precedes signal start {times[0]}")
    tr = _Trace(times, states)
    return _eval(f, tr, t, {}, until_convention)


def robustness(f: Formula, x: Signal, t: float = 0.0, *,
               until_convention: str = "paper") -> RobustnessReport:
    """Quantitative satisfaction margin of the formula on the signal at time t.

    Positive robustness means the formula is satisfied (strict inequality).
    """
    val = float(robustness_batch(f, x.times, x.states[None, :, :], t,
                                 until_convention=until_convention)[0])
    return RobustnessReport(value=val, satisfied=val > 0.0)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_]\w*)
  | (?P<implies>=>)
  | (?P<sym>[&|!()\[\],])
  | (?P<ws>\s+)
""", re.VERBOSE)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise FormulaSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, table: Optional[Mapping[str, PredicateFn]]):
        self.tokens = _tokenize(text)
        self.i = 0
        self.table = table

    def peek(self, offset: int = 0):
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.next()
        if text != value:
            raise FormulaSyntaxError(f"expected {value!r}, found {text or 'end of input'!r}", pos)

    def parse(self) -> Formula:
        if self.peek()[0] == "end":
            raise FormulaSyntaxError("empty formula", 0)
        f = self.implies()
        kind, text, pos = self.peek()
        if kind != "end":
            raise FormulaSyntaxError(f"unexpected trailing input {text!r}", pos)
        return f

    def implies(self) -> Formula:
        lhs = self.disjunction()
        if self.peek()[0] == "implies":
            self.next()
            rhs = self.implies()
            return Or(Not(lhs), rhs)
        return lhs

    def disjunction(self) -> Formula:
        f = self.conjunction()
        while self.peek()[1] == "|":
            self.next()
            f = Or(f, self.conjunction())
        return f

    def conjunction(self) -> Formula:
        f = self.unary()
        while self.peek()[1] == "&":
            self.next()
            f = And(f, self.unary())
        return f

    def unary(self) -> Formula:
        kind, text, pos = self.peek()
        if text == "!":
            self.next()
            return Not(self.unary())
        if kind == "ident" and text in ("F", "G") and self.peek(1)[1] == "[":
            self.next()
            a, b = self.interval()
            child = self.unary()
            return Eventually(a, b, child) if text == "F" else Always(a, b, child)
        return self.postfix()

    def postfix(self) -> Formula:
        left = self.atom()
        kind, text, _ = self.peek()
        if kind == "ident" and text == "U" and self.peek(1)[1] == "[":
            self.next()
            a, b = self.interval()
            right = self.atom()
            return Until(a, b, left, right)
        return left

    def atom(self) -> Formula:
        kind, text, pos = self.next()
        if text == "(":
            f = self.implies()
            self.expect(")")
            return f
        if kind == "ident":
            if text == "true":
                return TRUE
            if self.table is not None:
                if text not in self.table:
                    raise UndefinedPredicateError({text})
                return Predicate(text, self.table[text])
            return Predicate(text)
        raise FormulaSyntaxError(f"expected atom, found {text or 'end of input'!r}", pos)

    def interval(self) -> tuple[float, float]:
        self.expect("[")
        a = self.number()
        self.expect(",")
        b = self.number()
        self.expect("]")
        _check_interval(a, b)
        return a, b

    def number(self) -> float:
        kind, text, pos = self.next()
        if kind != "num":
            raise FormulaSyntaxError(f"expected number, found {text or 'end of input'!r}", pos)
        return float(text)


def parse(text: str, predicates: Optional[Mapping[str, PredicateFn]] = None) -> Formula:
    """Parse formula text into an AST.

    Grammar (loosest to tightest): implies, or, and, unary (!, F[a,b], G[a,b]),
    atom-level Until, atoms.  `A => B` desugars to `!A | B`.  When a predicate
    table is supplied, identifiers are bound to their function handles and
    unknown names raise UndefinedPredicateError.
    """
    return _Parser(text, predicates).parse()
