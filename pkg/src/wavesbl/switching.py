"""Continuous-time Markov chains driving the switching coefficient.

Paths are piecewise constant and right-continuous: the value on
``[jump_times[i], jump_times[i+1])`` is ``values[i]``, and the last interval
is closed at the horizon.

Random paths are drawn with numpy's ``PCG64`` bit generator
(``numpy.random.default_rng(seed)``), so a seed pins a path exactly.
"""
from __future__ import annotations

import csv
import io
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    AbsorbingStateError,
    InvalidGeneratorError,
    InvalidPathError,
    OutOfHorizonError,
    ParseError,
    ReducibleChainError,
)

RNG_ALGORITHM = "PCG64"

Q1 = np.array([[-1.2, 0.7, 0.5],
               [0.3, -1.0, 0.7],
               [0.4, 0.6, -1.0]])
Q2 = np.array([[-1.4, 0.7, 0.7],
               [0.7, -1.4, 0.7],
               [0.7, 0.7, -1.4]])


def check_generator(q) -> np.ndarray:
    """Validate a generator (rate) matrix and return it as a float array."""
    q = np.array(q, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise InvalidGeneratorError(f"generator must be square, got shape {q.shape}")
    if q.shape[0] < 2:
        raise InvalidGeneratorError("generator needs at least two states")
    if not np.all(np.isfinite(q)):
        raise InvalidGeneratorError("generator has non-finite entries")
    off = q - np.diag(np.diag(q))
    if np.any(off < 0):
        raise InvalidGeneratorError("off-diagonal rates must be non-negative")
    if np.any(np.abs(q.sum(axis=1)) > 1e-12):
        raise InvalidGeneratorError("generator rows must sum to zero")
    return q


@dataclass(frozen=True)
class MarkovPath:
    """A realised path of the switching coefficient on ``[0, horizon]``.

    Attributes
    ----------
    jump_times : tuple of float
        Interval start times; the first one is 0.
    values : tuple of float
        Coefficient value on each interval.
    horizon : float
        Final time ``T``.
    states : tuple of int or None
        Chain state index per interval, when the path was sampled.
    """

    jump_times: tuple
    values: tuple
    horizon: float
    states: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        times = tuple(float(t) for t in self.jump_times)
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "jump_times", times)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "horizon", float(self.horizon))
        if not times or len(times) != len(vals):
            raise InvalidPathError("need one value per interval")
        if times[0] != 0.0:
            raise InvalidPathError("first jump time must be 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise InvalidPathError("jump times must be strictly increasing")
        if times[-1] >= self.horizon:
            raise InvalidPathError("last jump time must lie before the horizon")
        if any(a == b for a, b in zip(vals, vals[1:])):
            raise InvalidPathError("adjacent intervals must carry different values")
        if not all(np.isfinite(vals)):
            raise InvalidPathError("path values must be finite")

    @property
    def n_segments(self) -> int:
        return len(self.values)

    @property
    def boundaries(self) -> tuple:
        """Interior jump times (excluding 0 and the horizon)."""
        return self.jump_times[1:]

    def intervals(self):
        """List of ``(start, end)`` pairs, one per segment."""
        ends = self.jump_times[1:] + (self.horizon,)
        return list(zip(self.jump_times, ends))

    def occupation_times(self) -> dict:
        """Total time spent at each distinct value."""
        out: dict = {}
        for (a, b), v in zip(self.intervals(), self.values):
            out[v] = out.get(v, 0.0) + (b - a)
        return out

    def __call__(self, t):
        return value_at(self, t)

    def to_csv(self, dest=None) -> str:
        """Serialise as ``t_jump,value`` rows followed by a horizon row.

        The horizon row repeats the last interval's value.
        """
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_jump", "value"])
        for t, v in zip(self.jump_times, self.values):
            w.writerow([repr(t), repr(v)])
        w.writerow([repr(self.horizon), repr(self.values[-1])])
        text = buf.getvalue()
        if dest is not None:
            Path(dest).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "MarkovPath":
        """Read a path from a file name or from CSV text."""
        if isinstance(source, Path) or "\n" not in str(source):
            text = Path(source).read_text()
        else:
            text = str(source)
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0]] != ["t_jump", "value"]:
            raise ParseError("path CSV must start with header 't_jump,value'", line=1)
        body = [r for r in rows[1:] if r]
        if len(body) < 2:
            raise ParseError("path CSV needs at least one interval and a horizon row",
                             line=len(rows))
        times, vals = [], []
        for lineno, r in enumerate(body, start=2):
            if len(r) != 2:
                raise ParseError("expected two columns", line=lineno)
            try:
                times.append(float(r[0]))
                vals.append(float(r[1]))
            except ValueError:
                raise ParseError(f"non-numeric entry {r!r}", line=lineno) from None
        try:
            return cls(times[:-1], vals[:-1], times[-1])
        except InvalidPathError as exc:
            raise ParseError(str(exc)) from exc


def fixed_path(jump_times, values, T) -> MarkovPath:
    """Replay a given realisation verbatim."""
    return MarkovPath(tuple(jump_times), tuple(values), T)


def value_at(path: MarkovPath, t):
    """Right-continuous evaluation of ``path`` at time(s) ``t``.

    Accepts a scalar or an array; raises ``OutOfHorizonError`` outside
    ``[0, T]``.
    """
    ts = np.asarray(t, dtype=float)
    if np.any(ts < 0) or np.any(ts > path.horizon) or np.any(np.isnan(ts)):
        raise OutOfHorizonError(f"t must lie in [0, {path.horizon}]")
    if ts.ndim == 0:
        return path.values[bisect_right(path.jump_times, float(ts)) - 1]
    idx = np.searchsorted(np.asarray(path.jump_times), ts, side="right") - 1
    return np.asarray(path.values)[idx]


def sample_path(Q, state_values, T, seed=None, initial_state=None,
                allow_absorbing=False) -> MarkovPath:
    """Draw a path of the chain with generator ``Q`` on ``[0, T]``.

    Parameters
    ----------
    Q : array_like, shape (K, K)
        Generator matrix.
    state_values : sequence of float, length K
        Coefficient value attached to each state; must be distinct.
    T : float
        Horizon.
    seed : int, optional
        Seed for ``numpy.random.default_rng``.
    initial_state : int, optional
        Starting state; uniform over states when omitted.
    allow_absorbing : bool
        If False, reaching a state with zero exit rate raises
        ``AbsorbingStateError``; otherwise the path stays there until ``T``.
    """
    q = check_generator(Q)
    k = q.shape[0]
    vals = [float(v) for v in state_values]
    if len(vals) != k:
        raise InvalidGeneratorError(f"need {k} state values, got {len(vals)}")
    if len(set(vals)) != k:
        raise InvalidGeneratorError("state values must be distinct")
    if not T > 0:
        raise InvalidPathError("horizon must be positive")

    rng = np.random.default_rng(seed)
    state = int(rng.integers(k)) if initial_state is None else int(initial_state)
    if not 0 <= state < k:
        raise InvalidGeneratorError(f"initial state {state} out of range")

    times, states = [0.0], [state]
    t = 0.0
    while True:
        rate = -q[state, state]
        if rate <= 0:
            if not allow_absorbing:
                raise AbsorbingStateError(f"state {state} has zero exit rate")
            break
        t += rng.exponential(1.0 / rate)
        if t >= T:
            break
        probs = q[state].copy()
        probs[state] = 0.0
        state = int(rng.choice(k, p=probs / rate))
        times.append(t)
        states.append(state)
    return MarkovPath(tuple(times), tuple(vals[s] for s in states), T,
                      states=tuple(states))


def stationary_distribution(Q) -> np.ndarray:
    """Stationary law ``pi`` with ``pi Q = 0`` and ``sum(pi) = 1``."""
    q = check_generator(Q)
    k = q.shape[0]
    # irreducible iff every state reaches every other along positive rates
    reach = (q > 0) | np.eye(k, dtype=bool)
    closure = reach.copy()
    for _ in range(k):
        closure = closure | ((closure.astype(int) @ reach.astype(int)) > 0)
    if not closure.all():
        raise ReducibleChainError("generator is reducible")
    a = np.vstack([q.T, np.ones(k)])
    b = np.zeros(k + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    return pi
