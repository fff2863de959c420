"""Explicit finite-difference solvers for wave equations with a switching
coefficient.

Both solvers march ``u_tt = M(t) * lap(u) + f`` with second-order central
differences in space and time. Every segment of the Markov path gets its own
uniform time grid, so jump times are always grid nodes. A new segment is
started from the last two levels of the previous one using the
variable-step three-point formula

    u+ = u + r (u - u-) + dt' (dt' + dt) / 2 * a,   r = dt' / dt,

which is exact for quadratics in time and reduces to leapfrog when
``dt' == dt``. The very first step uses a second-order Taylor start from
the initial velocity.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import DivergenceError, StabilityError
from .switching import MarkovPath

_OVERFLOW = 1e150


# -- nonlinearities ---------------------------------------------------------

@dataclass(frozen=True)
class SineNonlinearity:
    """``f(u) = -alpha * sin(omega * u)``."""

    alpha: float = 1.0
    omega: float = 1.0

    def __call__(self, u):
        return -self.alpha * np.sin(self.omega * u)


@dataclass(frozen=True)
class CubicNonlinearity:
    """``f(u) = -linear * u - cubic * u**3``."""

    linear: float = 1.0
    cubic: float = 1.0

    def __call__(self, u):
        return -self.linear * u - self.cubic * u ** 3


def gaussian_profile(amplitude, center, width=1.0):
    """Return ``x -> amplitude * exp(-((x - center) / width)**2)``."""
    def g(x):
        return amplitude * np.exp(-((x - center) / width) ** 2)
    return g


def _zero(*args):
    return np.zeros_like(np.asarray(args[0], dtype=float))


# -- problem and grid descriptions ------------------------------------------

@dataclass(frozen=True)
class WaveProblem1D:
    """``u_tt = M(t) u_xx + f(u)`` on ``[0, length]`` with zero Dirichlet data."""

    length: float
    nonlinearity: Optional[Callable] = None
    initial_profile: Callable = _zero
    initial_velocity: Callable = _zero

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError("domain length must be positive")


@dataclass(frozen=True)
class WaveProblem2D:
    """``u_tt = M(t) lap(u) + forcing(x, y, t, M)`` on a square with zero
    Dirichlet data."""

    forcing: Optional[Callable] = None
    initial_profile: Callable = _zero
    initial_velocity: Callable = _zero
    length: float = np.pi


@dataclass(frozen=True)
class Grid:
    """Spatial steps plus the time-discretisation rule per segment.

    Give exactly one of ``steps_per_segment`` (each segment split into that
    many equal steps) or ``dt`` (each segment split into
    ``round(length / dt)`` equal steps).
    """

    dx: float
    dy: Optional[float] = None
    steps_per_segment: Optional[int] = None
    dt: Optional[float] = None

    def __post_init__(self):
        if (self.steps_per_segment is None) == (self.dt is None):
            raise ValueError("give exactly one of steps_per_segment or dt")
        if self.steps_per_segment is not None and self.steps_per_segment < 1:
            raise ValueError("steps_per_segment must be positive")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")

    def n_intervals(self, length, step) -> int:
        n = int(round(length / step))
        if n < 2 or abs(n * step - length) > 1e-9 * length:
            raise ValueError(f"step {step} does not divide length {length}")
        return n

    def segment_times(self, path: MarkovPath):
        """Uniform time nodes of each segment, endpoints included."""
        out = []
        for a, b in path.intervals():
            if self.steps_per_segment is not None:
                n = self.steps_per_segment
            else:
                n = max(1, int(round((b - a) / self.dt)))
            out.append(np.linspace(a, b, n + 1))
        return out


@dataclass(frozen=True)
class Snapshot:
    """Field values on a space-time grid.

    ``u`` has shape ``(len(x), len(t))`` in 1D and
    ``(len(x), len(y), len(t))`` in 2D. Segment ``k`` spans time levels
    ``segment_bounds[k] .. segment_bounds[k+1]`` inclusive; the level at a
    jump is shared by the two adjacent segments.
    """

    x: np.ndarray
    t: np.ndarray
    u: np.ndarray
    segment_bounds: tuple
    y: Optional[np.ndarray] = None
    tag: str = "u"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("x", "t", "u", "y"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.array(arr, dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "segment_bounds",
                           tuple(int(b) for b in self.segment_bounds))
        expected = (len(self.x),) + ((len(self.y),) if self.y is not None else ()) + (len(self.t),)
        if self.u.shape != expected:
            raise ValueError(f"u has shape {self.u.shape}, expected {expected}")
        b = self.segment_bounds
        if b[0] != 0 or b[-1] != len(self.t) - 1 or any(q <= p for p, q in zip(b, b[1:])):
            raise ValueError("segment bounds must increase from 0 to the last level")

    @property
    def ndim_space(self) -> int:
        return 1 if self.y is None else 2

    @property
    def shape(self):
        return self.u.shape

    @property
    def n_segments(self) -> int:
        return len(self.segment_bounds) - 1

    def segment_dt(self, k) -> float:
        a, b = self.segment_bounds[k], self.segment_bounds[k + 1]
        return (self.t[b] - self.t[a]) / (b - a)

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def dy(self) -> float:
        return float(self.y[1] - self.y[0])

    def replace(self, u, tag=None, **meta) -> "Snapshot":
        """Copy with new values (same axes and segments)."""
        return Snapshot(self.x, self.t, u, self.segment_bounds, y=self.y,
                        tag=self.tag if tag is None else tag,
                        meta={**self.meta, **meta})


# -- core march --------------------------------------------------------------

def _check_cfl(path, seg_times, inv_h2):
    for k, (ts, m) in enumerate(zip(seg_times, path.values)):
        dt = ts[1] - ts[0]
        number = np.sqrt(max(m, 0.0)) * dt * np.sqrt(inv_h2)
        if number > 1.0 + 1e-12:
            raise StabilityError(
                f"CFL number {number:.4f} > 1 on segment {k} "
                f"[{ts[0]:.4g}, {ts[-1]:.4g}) with coefficient {m}")


def cfl_numbers(path, grid: Grid, ndim=1):
    """CFL number of every segment, for reporting."""
    dy = grid.dy if grid.dy is not None else grid.dx
    inv_h2 = 1.0 / grid.dx ** 2 + (1.0 / dy ** 2 if ndim == 2 else 0.0)
    return [float(np.sqrt(max(m, 0.0)) * (ts[1] - ts[0]) * np.sqrt(inv_h2))
            for ts, m in zip(grid.segment_times(path), path.values)]


def _march(u0, v0, seg_times, rhs):
    """Time-march a zero-Dirichlet field.

    ``rhs(u, t, k)`` returns the acceleration on the interior of ``u`` at time
    ``t`` in segment ``k``. Returns the stacked levels along a trailing axis.
    """
    interior = (slice(1, -1),) * u0.ndim
    n_total = 1 + sum(len(ts) - 1 for ts in seg_times)
    out = np.zeros(u0.shape + (n_total,))
    out[..., 0] = u0
    prev = cur = None
    level = 0
    dt_prev = None
    for k, ts in enumerate(seg_times):
        dt = ts[1] - ts[0]
        for j in range(len(ts) - 1):
            t = ts[j]
            new = np.zeros_like(u0)
            if level == 0:
                cur = out[..., 0]
                acc = rhs(cur, t, k)
                new[interior] = cur[interior] + dt * v0[interior] + 0.5 * dt * dt * acc
            elif j == 0:
                r = dt / dt_prev
                acc = rhs(cur, t, k)
                new[interior] = (cur[interior] + r * (cur[interior] - prev[interior])
                                 + 0.5 * dt * (dt + dt_prev) * acc)
            else:
                acc = rhs(cur, t, k)
                new[interior] = 2.0 * cur[interior] - prev[interior] + dt * dt * acc
            level += 1
            if not np.all(np.isfinite(new)) or np.max(np.abs(new)) > _OVERFLOW:
                raise DivergenceError(
                    f"solution diverged at time level {level} (t={ts[j + 1]:.6g})",
                    time_index=level)
            out[..., level] = new
            prev, cur = cur, out[..., level]
        dt_prev = dt
    return out


def _concat_times(seg_times):
    t = [seg_times[0]]
    bounds = [0, len(seg_times[0]) - 1]
    for ts in seg_times[1:]:
        t.append(ts[1:])
        bounds.append(bounds[-1] + len(ts) - 1)
    return np.concatenate(t), tuple(bounds)


def solve_wave_1d(problem: WaveProblem1D, path: MarkovPath, grid: Grid) -> Snapshot:
    """Simulate ``u_tt = M(t) u_xx + f(u)`` along ``path``.

    Raises
    ------
    StabilityError
        If any segment violates ``sqrt(M) dt / dx <= 1``.
    DivergenceError
        If the march produces non-finite or overflowing values.
    """
    nx = grid.n_intervals(problem.length, grid.dx)
    x = np.linspace(0.0, problem.length, nx + 1)
    dx = x[1] - x[0]
    seg_times = grid.segment_times(path)
    _check_cfl(path, seg_times, 1.0 / dx ** 2)

    f = problem.nonlinearity
    coeffs = path.values

    def rhs(u, t, k):
        acc = coeffs[k] * (u[2:] - 2.0 * u[1:-1] + u[:-2]) / dx ** 2
        if f is not None:
            acc = acc + f(u[1:-1])
        return acc

    u0 = np.asarray(problem.initial_profile(x), dtype=float).copy()
    v0 = np.asarray(problem.initial_velocity(x), dtype=float).copy()
    u0[[0, -1]] = 0.0
    v0[[0, -1]] = 0.0
    u = _march(u0, v0, seg_times, rhs)
    t, bounds = _concat_times(seg_times)
    return Snapshot(x, t, u, bounds, meta={"coefficients": list(coeffs)})


def solve_wave_2d(problem: WaveProblem2D, path: MarkovPath, grid: Grid) -> Snapshot:
    """Simulate ``u_tt = M(t) lap(u) + forcing(x, y, t, M)`` along ``path``
    with the 5-point Laplacian."""
    dy_step = grid.dy if grid.dy is not None else grid.dx
    nx = grid.n_intervals(problem.length, grid.dx)
    ny = grid.n_intervals(problem.length, dy_step)
    x = np.linspace(0.0, problem.length, nx + 1)
    y = np.linspace(0.0, problem.length, ny + 1)
    dx, dy = x[1] - x[0], y[1] - y[0]
    seg_times = grid.segment_times(path)
    _check_cfl(path, seg_times, 1.0 / dx ** 2 + 1.0 / dy ** 2)

    xi, yi = np.meshgrid(x[1:-1], y[1:-1], indexing="ij")
    forcing = problem.forcing
    coeffs = path.values

    def rhs(u, t, k):
        lap = ((u[2:, 1:-1] - 2.0 * u[1:-1, 1:-1] + u[:-2, 1:-1]) / dx ** 2
               + (u[1:-1, 2:] - 2.0 * u[1:-1, 1:-1] + u[1:-1, :-2]) / dy ** 2)
        acc = coeffs[k] * lap
        if forcing is not None:
            acc = acc + forcing(xi, yi, t, coeffs[k])
        return acc

    X, Y = np.meshgrid(x, y, indexing="ij")
    u0 = np.asarray(problem.initial_profile(X, Y), dtype=float).copy()
    v0 = np.asarray(problem.initial_velocity(X, Y), dtype=float).copy()
    for arr in (u0, v0):
        arr[[0, -1], :] = 0.0
        arr[:, [0, -1]] = 0.0
    u = _march(u0, v0, seg_times, rhs)
    t, bounds = _concat_times(seg_times)
    return Snapshot(x, t, u, bounds, y=y, meta={"coefficients": list(coeffs)})


# -- manufactured 2D solution -------------------------------------------------

def manufactured_u(x, y, t):
    """``exp(-t) sin(x) sin(y)``."""
    return np.exp(-t) * np.sin(x) * np.sin(y)


def manufactured_forcing(x, y, t, m):
    """Forcing that makes ``manufactured_u`` solve the switching 2D equation."""
    return (1.0 + 2.0 * m) * np.exp(-t) * np.sin(x) * np.sin(y)


def manufactured_problem() -> WaveProblem2D:
    return WaveProblem2D(
        forcing=manufactured_forcing,
        initial_profile=lambda x, y: np.sin(x) * np.sin(y),
        initial_velocity=lambda x, y: -np.sin(x) * np.sin(y),
    )


def exact_solution_2d(grid: Grid, path: MarkovPath, length=np.pi) -> Snapshot:
    """Evaluate ``exp(-t) sin(x) sin(y)`` on the nodes the 2D solver would use."""
    dy_step = grid.dy if grid.dy is not None else grid.dx
    x = np.linspace(0.0, length, grid.n_intervals(length, grid.dx) + 1)
    y = np.linspace(0.0, length, grid.n_intervals(length, dy_step) + 1)
    t, bounds = _concat_times(grid.segment_times(path))
    u = manufactured_u(x[:, None, None], y[None, :, None], t[None, None, :])
    # sin(pi) is 1.2e-16, not 0
    u[[0, -1], :, :] = 0.0
    u[:, [0, -1], :] = 0.0
    return Snapshot(x, t, u, bounds, y=y, tag="exact")
