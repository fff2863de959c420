"""Observation noise and finite-difference derivative estimates.

Time differences never straddle a segment boundary: the level at a jump
belongs to both neighbouring segments but is never the centre of a stencil.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.ndimage import uniform_filter1d

from .exceptions import SegmentTooShortError
from .solver import Snapshot

NOISE_FLOOR = 1e-12

SPATIAL_KEYS = ("u_x", "u_xx", "u_y", "u_yy", "lap")


@dataclass(frozen=True)
class NoisySnapshot(Snapshot):
    """Snapshot of observations ``y = u + xi`` with ``xi ~ N(0, (eta |u|)^2)``."""

    eta: float = 0.0
    seed: Optional[int] = None


def add_noise(s: Snapshot, eta: float, seed=None) -> NoisySnapshot:
    """Add magnitude-proportional Gaussian noise.

    Points with ``|u| < 1e-12`` stay noise free, so Dirichlet rows remain
    exactly zero.
    """
    if eta < 0:
        raise ValueError("noise level must be non-negative")
    u = np.asarray(s.u)
    if eta == 0:
        y = u.copy()
    else:
        rng = np.random.default_rng(seed)
        scale = eta * np.abs(u)
        scale[np.abs(u) < NOISE_FLOOR] = 0.0
        y = u + scale * rng.standard_normal(u.shape)
    return NoisySnapshot(s.x, s.t, y, s.segment_bounds, y=s.y, tag="y",
                         meta=dict(s.meta), eta=float(eta), seed=seed)


def smooth(s: Snapshot, window: int) -> Snapshot:
    """Moving average along time, applied segment by segment.

    Spatial averaging is deliberately avoided: it biases the spatial
    stencils by O(window^2 dx^2) relative to ``u_tt`` and wrecks recovery.
    Levels near a segment end are averaged against padded values, so
    ``derivative_fields`` discards them (see ``edge_trim``).
    """
    if window is None or window <= 1:
        return s
    if window % 2 == 0:
        raise ValueError("smoothing window must be odd")
    u = np.array(s.u)
    out = np.empty_like(u)
    b = s.segment_bounds
    for k in range(s.n_segments):
        block = u[..., b[k]:b[k + 1] + 1]
        out[..., b[k]:b[k + 1] + 1] = uniform_filter1d(block, window, axis=-1, mode="nearest")
    # keep the Dirichlet rows exact
    out[0], out[-1] = u[0], u[-1]
    if s.y is not None:
        out[:, 0], out[:, -1] = u[:, 0], u[:, -1]
    return s.replace(out, smoothed=int(window))


def interior_time_indices(s: Snapshot):
    """Interior time levels and their segment ids.

    Raises ``SegmentTooShortError`` if a segment has fewer than three levels.
    """
    idx, seg = [], []
    b = s.segment_bounds
    for k in range(s.n_segments):
        if b[k + 1] - b[k] < 2:
            raise SegmentTooShortError(
                f"segment {k} [{s.t[b[k]]:.6g}, {s.t[b[k + 1]]:.6g}] has fewer "
                "than 3 time levels")
        rng = np.arange(b[k] + 1, b[k + 1])
        idx.append(rng)
        seg.append(np.full(len(rng), k))
    return np.concatenate(idx), np.concatenate(seg)


def second_time_derivative(s: Snapshot) -> np.ndarray:
    """Central second difference in time on interior time levels.

    Returns an array over the full spatial grid and the levels given by
    ``interior_time_indices(s)``.
    """
    idx, seg = interior_time_indices(s)
    u = np.asarray(s.u)
    dts = np.array([s.segment_dt(k) for k in range(s.n_segments)])[seg]
    return (u[..., idx + 1] - 2.0 * u[..., idx] + u[..., idx - 1]) / dts ** 2


@dataclass(frozen=True)
class DerivativeFields:
    """Derivative estimates on interior space points and interior time levels.

    Arrays have shape ``(nx - 2, len(t_index))`` in 1D and
    ``(nx - 2, ny - 2, len(t_index))`` in 2D.
    """

    arrays: dict
    x: np.ndarray
    t: np.ndarray
    t_index: np.ndarray
    segment: np.ndarray
    y: Optional[np.ndarray] = None
    segment_intervals: tuple = ()
    meta: dict = field(default_factory=dict, compare=False)

    def __getitem__(self, key):
        return self.arrays[key]

    def __contains__(self, key):
        return key in self.arrays

    @property
    def ndim_space(self) -> int:
        return 1 if self.y is None else 2

    @property
    def shape(self):
        return self.arrays["u"].shape

    def select_segment(self, k) -> "DerivativeFields":
        mask = self.segment == k
        return DerivativeFields(
            {key: a[..., mask] for key, a in self.arrays.items()},
            self.x, self.t[mask], self.t_index[mask], self.segment[mask],
            y=self.y, segment_intervals=self.segment_intervals, meta=self.meta)


def _spatial(u, dx, dy, which):
    out = {}
    if u.ndim == 2:
        if "u_x" in which:
            out["u_x"] = (u[2:] - u[:-2]) / (2.0 * dx)
        if "u_xx" in which or "lap" in which:
            uxx = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / dx ** 2
            if "u_xx" in which:
                out["u_xx"] = uxx
            if "lap" in which:
                out["lap"] = uxx
        return out
    inner = (slice(1, -1), slice(1, -1))
    if "u_x" in which:
        out["u_x"] = (u[2:, 1:-1] - u[:-2, 1:-1]) / (2.0 * dx)
    if "u_y" in which:
        out["u_y"] = (u[1:-1, 2:] - u[1:-1, :-2]) / (2.0 * dy)
    need_xx = "u_xx" in which or "lap" in which
    need_yy = "u_yy" in which or "lap" in which
    if need_xx:
        uxx = (u[2:, 1:-1] - 2.0 * u[inner] + u[:-2, 1:-1]) / dx ** 2
    if need_yy:
        uyy = (u[1:-1, 2:] - 2.0 * u[inner] + u[1:-1, :-2]) / dy ** 2
    if "u_xx" in which:
        out["u_xx"] = uxx
    if "u_yy" in which:
        out["u_yy"] = uyy
    if "lap" in which:
        out["lap"] = uxx + uyy
    return out


def spatial_derivatives(s: Snapshot, which=("u_x", "u_xx")) -> DerivativeFields:
    """Central spatial differences on interior points and interior time levels.

    ``which`` is any subset of ``{"u_x", "u_xx", "u_y", "u_yy", "lap"}``;
    ``"lap"`` is ``u_xx`` in 1D and ``u_xx + u_yy`` in 2D.
    """
    which = set(which)
    unknown = which - set(SPATIAL_KEYS)
    if unknown:
        raise ValueError(f"unknown derivative(s): {sorted(unknown)}")
    if s.ndim_space == 1 and which & {"u_y", "u_yy"}:
        raise ValueError("y-derivatives requested on 1D data")
    for n in s.u.shape[:-1]:
        if n < 3:
            raise SegmentTooShortError("need at least 3 points along every spatial axis")
    idx, seg = interior_time_indices(s)
    u = np.asarray(s.u)[..., idx]
    arrays = _spatial(u, s.dx, s.dy if s.y is not None else None, which)
    inner = (slice(1, -1),) * s.ndim_space
    arrays["u"] = u[inner]
    b = s.segment_bounds
    intervals = tuple((float(s.t[b[k]]), float(s.t[b[k + 1]])) for k in range(s.n_segments))
    return DerivativeFields(
        arrays, s.x[1:-1], s.t[idx], idx, seg,
        y=None if s.y is None else s.y[1:-1], segment_intervals=intervals,
        meta={"tag": s.tag})


def derivative_fields(s: Snapshot, which=("u_x", "u_xx"), smooth_window=None) -> DerivativeFields:
    """Spatial derivatives plus ``u_tt``, optionally after smoothing ``s``.

    With smoothing, the ``window // 2 + 1`` interior levels next to each
    segment end are dropped since their averages lean on padded values.
    """
    if smooth_window and smooth_window > 1:
        s = smooth(s, smooth_window)
    fields = spatial_derivatives(s, which)
    utt = second_time_derivative(s)
    inner = (slice(1, -1),) * s.ndim_space
    fields.arrays["u_tt"] = utt[inner]
    if not smooth_window or smooth_window <= 1:
        return fields
    trim = smooth_window // 2 + 1
    b = np.asarray(s.segment_bounds)
    j = fields.t_index
    keep = ((j - b[fields.segment]) > trim) & ((b[fields.segment + 1] - j) > trim)
    missing = set(range(s.n_segments)) - set(fields.segment[keep].tolist())
    if missing:
        raise SegmentTooShortError(
            f"segment(s) {sorted(missing)} too short for smoothing window {smooth_window}")
    return DerivativeFields(
        {key: a[..., keep] for key, a in fields.arrays.items()},
        fields.x, fields.t[keep], j[keep], fields.segment[keep], y=fields.y,
        segment_intervals=fields.segment_intervals,
        meta=dict(fields.meta, smooth_window=int(smooth_window)))
