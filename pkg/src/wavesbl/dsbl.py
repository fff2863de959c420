"""Segment-wise SBL over a Markov partition, the pooled single-model
baseline, error tables and the uniform error bound.

Every inter-jump interval of the path is fitted on its own. Jump times are
inputs; nothing here tries to detect them.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .dictionary import DesignSystem, TermLibrary, build_design
from .exceptions import (
    BoundUndefinedError,
    InvalidPathError,
    SegmentTooShortError,
    TruthAlignmentError,
    WaveSBLError,
)
from .sbl import SblConfig, SblResult, run_sbl
from .solver import _march
from .switching import MarkovPath
from .synth import DerivativeFields, _spatial

_TIME_MATCH = 1e-9


@dataclass
class SegmentData:
    """Design system of one inter-jump interval."""

    index: int
    interval: tuple
    value: Optional[float]
    design: DesignSystem

    @property
    def n_samples(self) -> int:
        return self.design.n_samples


def _forcing_on(fields: DerivativeFields, forcing, value):
    """Evaluate ``forcing`` on the sample grid of ``fields``.

    ``forcing`` is an array shaped like the fields or a callable
    ``f(x, t, m)`` in 1D and ``f(x, y, t, m)`` in 2D.
    """
    if forcing is None:
        return None
    if not callable(forcing):
        return np.asarray(forcing, dtype=float)
    t = fields.t
    if fields.ndim_space == 1:
        return forcing(fields.x[:, None], t[None, :], value)
    X, Y = np.meshgrid(fields.x, fields.y, indexing="ij")
    return forcing(X[..., None], Y[..., None], t[None, None, :], value)


def _check_alignment(fields: DerivativeFields, path: MarkovPath):
    data = fields.segment_intervals
    want = path.intervals()
    if data and len(data) != len(want):
        raise InvalidPathError(
            f"data has {len(data)} segments but the path has {len(want)}")
    for (a, b), (c, d) in zip(data, want):
        if abs(a - c) > _TIME_MATCH * max(1.0, abs(c)) or abs(b - d) > _TIME_MATCH * max(1.0, abs(d)):
            raise InvalidPathError(
                f"data segment [{a:.6g}, {b:.6g}] does not match path interval "
                f"[{c:.6g}, {d:.6g}]")


def segment_data(fields: DerivativeFields, path: MarkovPath, lib, forcing=None,
                 stride=1) -> list:
    """Split derivative fields at the path's jumps and build one design each.

    Parameters
    ----------
    fields : DerivativeFields
        Output of :func:`wavesbl.synth.derivative_fields`; its segment ids
        must follow ``path``.
    path : MarkovPath
    lib : TermLibrary or sequence of str
    forcing : callable or ndarray, optional
        Known source term subtracted from ``u_tt`` (see ``_forcing_on``).
        A callable receives the segment's path value as last argument.
    stride : int
        Row subsampling passed to :func:`build_design`.
    """
    if not isinstance(lib, TermLibrary):
        lib = TermLibrary(lib)
    _check_alignment(fields, path)
    out = []
    for k, ((a, b), value) in enumerate(zip(path.intervals(), path.values)):
        fk = fields.select_segment(k)
        if fk.t.size == 0:
            raise SegmentTooShortError(
                f"segment {k} [{a:.6g}, {b:.6g}) has no interior time levels")
        fk_forcing = forcing
        if forcing is not None and not callable(forcing):
            fk_forcing = np.asarray(forcing)[..., fields.segment == k]
        design = build_design(fk, lib, _forcing_on(fk, fk_forcing, value), stride=stride)
        design.meta.update(segment=k, interval=(a, b))
        out.append(SegmentData(k, (float(a), float(b)), float(value), design))
    return out


# -- reports -------------------------------------------------------------------

@dataclass
class SegmentReport:
    """Estimate for one interval, with errors when the truth is known.

    ``error_percent`` holds ``|est - true| / |true| * 100`` for terms whose
    truth is nonzero; ``spurious`` holds ``|est|`` for terms whose truth is
    zero.
    """

    index: int
    interval: tuple
    labels: list
    estimate: dict = field(default_factory=dict)
    truth: Optional[dict] = None
    error_percent: dict = field(default_factory=dict)
    spurious: dict = field(default_factory=dict)
    n_samples: int = 0
    value: Optional[float] = None
    bound: Optional[float] = None
    result: Optional[SblResult] = None
    failed: bool = False
    error: Optional[str] = None

    @property
    def max_error(self) -> float:
        return max(self.error_percent.values(), default=float("nan"))

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "interval": list(self.interval),
            "value": self.value,
            "n_samples": self.n_samples,
            "estimate": self.estimate,
            "truth": self.truth,
            "error_percent": self.error_percent,
            "spurious": self.spurious,
            "bound": self.bound,
            "failed": self.failed,
            "error": self.error,
            "sbl": None if self.result is None else self.result.to_dict(),
        }


def _resolve_truth(truth, labels):
    if truth is None:
        return None
    unknown = set(truth) - set(labels)
    if unknown:
        raise TruthAlignmentError(
            f"truth names term(s) {sorted(unknown)} missing from the library {labels}")
    return {lab: float(truth.get(lab, 0.0)) for lab in labels}


def _errors(estimate: dict, truth: Optional[dict]):
    if truth is None:
        return {}, {}
    err, spur = {}, {}
    for lab, t in truth.items():
        e = estimate[lab]
        if t != 0:
            err[lab] = abs(e - t) / abs(t) * 100.0
        else:
            spur[lab] = abs(e)
    return err, spur


def _report(index, interval, labels, result, n_samples, truth=None, value=None):
    est = result.coefficients()
    truth = _resolve_truth(truth, labels)
    err, spur = _errors(est, truth)
    return SegmentReport(index, tuple(interval), list(labels), est, truth, err, spur,
                         n_samples, value, result=result)


def _fit_one(seg: SegmentData, cfg, truth):
    try:
        res = run_sbl(seg.design, cfg)
    except WaveSBLError as exc:
        return SegmentReport(seg.index, seg.interval, list(seg.design.labels),
                             truth=_resolve_truth(truth, seg.design.labels),
                             n_samples=seg.n_samples, value=seg.value, failed=True,
                             error=f"{type(exc).__name__}: {exc}")
    return _report(seg.index, seg.interval, seg.design.labels, res, seg.n_samples,
                   truth, seg.value)


def run_dsbl(segments: Sequence[SegmentData], cfg: Optional[SblConfig] = None,
             truth=None, n_jobs: Optional[int] = None) -> list:
    """Fit every segment independently.

    Parameters
    ----------
    segments : sequence of SegmentData
    cfg : SblConfig, optional
    truth : sequence of dict, optional
        One ``{label: coefficient}`` mapping per segment; missing labels
        are taken as 0.
    n_jobs : int, optional
        Worker threads; ``None`` or 1 runs sequentially.

    Returns
    -------
    list of SegmentReport
        In interval order. A segment whose fit raises is reported with
        ``failed=True`` and the others still run.
    """
    segments = list(segments)
    if truth is not None and len(truth) != len(segments):
        raise TruthAlignmentError(
            f"got {len(truth)} truth entries for {len(segments)} segments")
    truths = list(truth) if truth is not None else [None] * len(segments)
    if n_jobs is None or n_jobs <= 1:
        reports = [_fit_one(s, cfg, t) for s, t in zip(segments, truths)]
    else:
        with ThreadPoolExecutor(max_workers=int(n_jobs)) as pool:
            reports = list(pool.map(lambda st: _fit_one(st[0], cfg, st[1]),
                                    zip(segments, truths)))
    return sorted(reports, key=lambda r: (r.interval[0], r.index))


def _stack(designs, labels):
    return DesignSystem(
        np.concatenate([d.y for d in designs]),
        np.vstack([d.D for d in designs]),
        list(labels),
        np.vstack([d.coords for d in designs]),
        sum(d.n_dropped for d in designs),
    )


def run_single_model(fields: DerivativeFields, lib, cfg: Optional[SblConfig] = None,
                     forcing=None, path: Optional[MarkovPath] = None,
                     truth=None) -> SegmentReport:
    """One SBL fit over every interior sample, ignoring the switching.

    A callable ``forcing`` depends on the path value, so ``path`` is then
    required; an array forcing is used as is.
    """
    if not isinstance(lib, TermLibrary):
        lib = TermLibrary(lib)
    if path is not None:
        design = _stack([s.design for s in segment_data(fields, path, lib, forcing)],
                        lib.labels)
        horizon = path.horizon
    else:
        if callable(forcing):
            raise ValueError("a callable forcing needs the path")
        design = build_design(fields, lib, forcing)
        ivs = fields.segment_intervals
        horizon = ivs[-1][1] if ivs else float(fields.t[-1])
    res = run_sbl(design, cfg)
    return _report(0, (0.0, float(horizon)), lib.labels, res, design.n_samples, truth)


# -- per-state view ------------------------------------------------------------

@dataclass
class StateReport:
    """Segments sharing one path value, merged by sample-count weights."""

    value: float
    segments: list
    estimate: dict
    truth: Optional[dict]
    error_percent: dict
    spurious: dict
    n_samples: int


def aggregate_by_state(reports: Sequence[SegmentReport]) -> list:
    """Group reports by path value; estimates are sample-weighted means.

    Failed segments are skipped. States come out in increasing value.
    """
    groups: dict = {}
    for r in reports:
        if r.failed or r.value is None:
            continue
        groups.setdefault(r.value, []).append(r)
    out = []
    for value in sorted(groups):
        rs = groups[value]
        w = np.array([r.n_samples for r in rs], dtype=float)
        labels = rs[0].labels
        est = {lab: float(np.dot(w, [r.estimate[lab] for r in rs]) / w.sum()) for lab in labels}
        truth = rs[0].truth
        err, spur = _errors(est, truth)
        out.append(StateReport(value, [r.index for r in rs], est, truth, err, spur,
                               int(w.sum())))
    return out


def single_model_state_errors(single: SegmentReport, states: Sequence[StateReport]) -> list:
    """Errors of one pooled estimate against every state's truth."""
    out = []
    for st in states:
        err, spur = _errors(single.estimate, st.truth)
        out.append(StateReport(st.value, st.segments, dict(single.estimate), st.truth,
                               err, spur, single.n_samples))
    return out


# -- error bound ---------------------------------------------------------------

@dataclass(frozen=True)
class BoundInputs:
    """Inputs of the uniform error bound.

    Attributes
    ----------
    d : int
        Parameters per equation.
    K : int
        Number of Markov states.
    theta_min : float
        Smallest nonzero true coefficient in absolute value.
    sigma : float
        Noise scale (standard deviation, not variance).
    """

    d: int
    K: int
    theta_min: float
    sigma: float

    def __post_init__(self):
        if self.d < 1 or self.K < 1:
            raise ValueError("d and K must be at least 1")
        if not self.theta_min > 0:
            raise ValueError("theta_min must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


def theoretical_error_bound(b: BoundInputs) -> float:
    """``sqrt(dK) (t^2 - 4 s t + 8 s^2) / (2 t - 4 s)`` with ``t = theta_min``.

    Raises ``BoundUndefinedError`` unless ``2 t - 4 s > 0``.

    >>> theoretical_error_bound(BoundInputs(1, 1, 1.0, 0.0))
    0.5
    """
    t, s = float(b.theta_min), float(b.sigma)
    den = 2.0 * t - 4.0 * s
    if not den > 0:
        raise BoundUndefinedError(
            f"bound needs 2*theta_min - 4*sigma > 0, got {den:.6g}")
    return math.sqrt(b.d * b.K) * (t * t - 4.0 * s * t + 8.0 * s * s) / den


# -- tables and serialisation ----------------------------------------------------

@dataclass
class ErrorSummary:
    rows: list
    max_error: float
    mean_error: float
    max_spurious: float
    bound_satisfied: Optional[list] = None

    def to_csv(self, dest=None) -> str:
        return _write_rows(self.rows, dest)


_TABLE_HEADER = ["t_start", "t_end", "segment", "value", "term", "estimate", "truth",
                 "error_percent"]


def _table_rows(reports):
    rows = []
    for r in reports:
        for lab in r.labels:
            est = r.estimate.get(lab, float("nan"))
            tru = None if r.truth is None else r.truth[lab]
            err = r.error_percent.get(lab)
            rows.append([r.interval[0], r.interval[1], r.index, r.value, lab, est, tru, err])
    return rows


def _write_rows(rows, dest=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_TABLE_HEADER)
    for row in rows:
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, float) else v)
                    for v in row])
    text = buf.getvalue()
    if dest is not None:
        Path(dest).write_text(text)
    return text


def error_report(reports: Sequence[SegmentReport], truth=None, bound=None) -> ErrorSummary:
    """Per-segment, per-term error table with summary statistics.

    Parameters
    ----------
    reports : sequence of SegmentReport
    truth : sequence of dict, optional
        Replaces the truth carried by the reports; labels must match.
    bound : float, optional
        When given, each report is flagged by whether its largest absolute
        error stays within it.
    """
    reports = list(reports)
    if truth is not None:
        if len(truth) != len(reports):
            raise TruthAlignmentError(
                f"got {len(truth)} truth entries for {len(reports)} reports")
        fixed = []
        for r, t in zip(reports, truth):
            tr = _resolve_truth(t, r.labels)
            err, spur = _errors(r.estimate, tr) if not r.failed else ({}, {})
            fixed.append(SegmentReport(r.index, r.interval, r.labels, r.estimate, tr, err,
                                       spur, r.n_samples, r.value, r.bound, r.result,
                                       r.failed, r.error))
        reports = fixed
    errs = [e for r in reports for e in r.error_percent.values()]
    spur = [e for r in reports for e in r.spurious.values()]
    flags = None
    if bound is not None:
        flags = []
        for r in reports:
            if r.truth is None or r.failed:
                flags.append(None)
                continue
            gap = max(abs(r.estimate[k] - r.truth[k]) for k in r.labels)
            flags.append(bool(gap <= bound))
    return ErrorSummary(
        _table_rows(reports),
        max(errs, default=float("nan")),
        float(np.mean(errs)) if errs else float("nan"),
        max(spur, default=0.0),
        flags,
    )


def reports_table_csv(reports: Sequence[SegmentReport], dest=None) -> str:
    """CSV mirroring the layout of a parameter-inference table."""
    return _write_rows(_table_rows(reports), dest)


def reports_to_json(reports: Sequence[SegmentReport], single: Optional[SegmentReport] = None,
                    dest=None, **extra) -> str:
    payload = {"segments": [r.to_dict() for r in reports]}
    states = aggregate_by_state(reports)
    if states:
        payload["states"] = [
            {"value": s.value, "segments": s.segments, "estimate": s.estimate,
             "truth": s.truth, "error_percent": s.error_percent, "n_samples": s.n_samples}
            for s in states]
    if single is not None:
        payload["single_model"] = single.to_dict()
        if states:
            payload["single_model_states"] = [
                {"value": s.value, "error_percent": s.error_percent}
                for s in single_model_state_errors(single, states)]
    payload.update(extra)
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default)
    if dest is not None:
        Path(dest).write_text(text)
    return text


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


# -- forward re-simulation of identified models ------------------------------------

def simulate_identified(snapshot, lib, coefficients: Sequence[dict], forcing=None,
                        initial_velocity=None) -> np.ndarray:
    """March the identified model on the snapshot's own grid.

    Parameters
    ----------
    snapshot : Snapshot
        Supplies the grid, the segment layout and the initial profile.
    lib : TermLibrary or sequence of str
    coefficients : sequence of dict
        ``{label: coefficient}`` per segment.
    forcing : callable, optional
        Same convention as the solvers: ``f(x, t, m)`` in 1D or
        ``f(x, y, t, m)`` in 2D, called with the segment's path value taken
        from ``snapshot.meta["coefficients"]``.
    initial_velocity : ndarray, optional
        Defaults to the forward difference of the first two levels.
    """
    if not isinstance(lib, TermLibrary):
        lib = TermLibrary(lib)
    if len(coefficients) != snapshot.n_segments:
        raise TruthAlignmentError("need one coefficient set per segment")
    u_all = np.asarray(snapshot.u)
    u0 = u_all[..., 0].copy()
    if initial_velocity is None:
        v0 = (u_all[..., 1] - u_all[..., 0]) / snapshot.segment_dt(0)
    else:
        v0 = np.asarray(initial_velocity, dtype=float)
    b = snapshot.segment_bounds
    t = np.asarray(snapshot.t)
    seg_times = [t[b[k]:b[k + 1] + 1] for k in range(snapshot.n_segments)]
    which = lib.required_derivatives()
    dy = snapshot.dy if snapshot.y is not None else None
    values = snapshot.meta.get("coefficients")
    weights = [np.array([c.get(lab, 0.0) for lab in lib.labels]) for c in coefficients]
    inner = (slice(1, -1),) * u0.ndim
    if snapshot.y is None:
        grid = (snapshot.x[1:-1],)
    else:
        grid = tuple(np.meshgrid(snapshot.x[1:-1], snapshot.y[1:-1], indexing="ij"))

    def rhs(u, tt, k):
        # _spatial expects a trailing time axis
        arrays = {key: a[..., 0] for key, a in _spatial(u[..., None], snapshot.dx, dy, which).items()}
        arrays["u"] = u[inner]
        acc = np.zeros_like(u[inner])
        for wj, term in zip(weights[k], lib):
            if wj != 0.0:
                acc = acc + wj * term.evaluate(arrays)
        if forcing is not None:
            acc = acc + forcing(*grid, tt, values[k])
        return acc

    return _march(u0, v0, seg_times, rhs)


def heatmap_csv(snapshot, inferred: np.ndarray, dest=None, stride=1) -> str:
    """Long-form CSV ``x[,y],t,u_numerical,u_inferred,abs_error``.

    ``stride`` thins every axis to keep files manageable.
    """
    u = np.asarray(snapshot.u)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    s = slice(None, None, max(1, int(stride)))
    x = np.asarray(snapshot.x)[s]
    t = np.asarray(snapshot.t)[s]
    if snapshot.y is None:
        w.writerow(["x", "t", "u_numerical", "u_inferred", "abs_error"])
        un, ui = u[s, s], inferred[s, s]
        for i, xv in enumerate(x):
            for j, tv in enumerate(t):
                w.writerow([repr(float(xv)), repr(float(tv)), repr(float(un[i, j])),
                            repr(float(ui[i, j])), repr(float(abs(un[i, j] - ui[i, j])))])
    else:
        y = np.asarray(snapshot.y)[s]
        w.writerow(["x", "y", "t", "u_numerical", "u_inferred", "abs_error"])
        un, ui = u[s, s, s], inferred[s, s, s]
        for i, xv in enumerate(x):
            for j, yv in enumerate(y):
                for k, tv in enumerate(t):
                    a, c = float(un[i, j, k]), float(ui[i, j, k])
                    w.writerow([repr(float(xv)), repr(float(yv)), repr(float(tv)),
                                repr(a), repr(c), repr(abs(a - c))])
    text = buf.getvalue()
    if dest is not None:
        Path(dest).write_text(text)
    return text
