"""Candidate-term libraries and the regression system ``y = D theta + eps``.

Term grammar: a product of factors joined by ``*``. Factors are

    1  u  u^N  sin(u)  u_x  u_xx  u_y  u_yy  lap(u)

with ``N`` a positive integer. Whitespace is ignored.
"""
from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DegenerateColumnError, EmptySegmentError, TermParseError

_FACTOR_RE = re.compile(r"sin\(u\)|lap\(u\)|u_xx|u_yy|u_x|u_y|u\^[1-9][0-9]*|u|1")

# factor -> derivative array it reads
_NEEDS = {"u_x": "u_x", "u_xx": "u_xx", "u_y": "u_y", "u_yy": "u_yy", "lap(u)": "lap"}


@dataclass(frozen=True)
class Term:
    """A product of factors, e.g. ``("u^2", "u_xx")``."""

    factors: tuple

    @property
    def label(self) -> str:
        return "*".join(self.factors)

    def __str__(self):
        return self.label

    @property
    def derivatives(self) -> set:
        return {_NEEDS[f] for f in self.factors if f in _NEEDS}

    def evaluate(self, fields) -> np.ndarray:
        u = fields["u"]
        out = np.ones_like(u)
        for f in self.factors:
            if f == "1":
                continue
            if f == "u":
                out = out * u
            elif f.startswith("u^"):
                out = out * u ** int(f[2:])
            elif f == "sin(u)":
                out = out * np.sin(u)
            else:
                key = _NEEDS[f]
                if key not in fields:
                    raise KeyError(f"term {self.label!r} needs {key!r}, which was not computed")
                out = out * fields[key]
        return out


def parse_term(spec: str) -> Term:
    """Parse a term from the grammar in the module docstring.

    >>> parse_term("u^2 * u_xx").label
    'u^2*u_xx'
    """
    if not isinstance(spec, str):
        raise TermParseError(f"term must be a string, got {type(spec).__name__}", 0)
    s = spec.replace(" ", "")
    if not s:
        raise TermParseError("empty term", 0)
    factors = []
    pos = 0
    while True:
        m = _FACTOR_RE.match(s, pos)
        # a factor must end at '*' or the end of the string
        if m is None or (m.end() < len(s) and s[m.end()] != "*"):
            raise TermParseError(f"unknown token in {spec!r}", pos)
        tok = m.group(0)
        if tok == "u^1":
            tok = "u"
        factors.append(tok)
        pos = m.end()
        if pos == len(s):
            break
        pos += 1
        if pos == len(s):
            raise TermParseError(f"dangling '*' in {spec!r}", pos)
    if len(factors) > 1:
        factors = [f for f in factors if f != "1"] or ["1"]
    return Term(tuple(factors))


class TermLibrary(tuple):
    """Ordered, label-unique collection of terms."""

    def __new__(cls, terms):
        terms = [t if isinstance(t, Term) else parse_term(t) for t in terms]
        labels = [t.label for t in terms]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate terms in library: {labels}")
        if not terms:
            raise ValueError("library is empty")
        return super().__new__(cls, terms)

    @property
    def labels(self):
        return [t.label for t in self]

    def required_derivatives(self) -> set:
        out = set()
        for t in self:
            out |= t.derivatives
        return out


@dataclass
class DesignSystem:
    """Regression target, dictionary matrix and row bookkeeping."""

    y: np.ndarray
    D: np.ndarray
    labels: list
    coords: np.ndarray
    n_dropped: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.D.shape[0]

    @property
    def n_terms(self) -> int:
        return self.D.shape[1]

    def to_csv(self, dest=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        idx_cols = [f"i{k}" for k in range(self.coords.shape[1] - 1)] + ["j"]
        w.writerow(idx_cols + ["y"] + list(self.labels))
        for c, yv, row in zip(self.coords, self.y, self.D):
            w.writerow([int(v) for v in c] + [repr(float(yv))] + [repr(float(v)) for v in row])
        text = buf.getvalue()
        if dest is not None:
            Path(dest).write_text(text)
        return text


def build_design(fields, lib, known_forcing=None, stride=1) -> DesignSystem:
    """Assemble one row per interior sample and one column per term.

    Parameters
    ----------
    fields : DerivativeFields
        Must contain ``u_tt`` plus every derivative the library reads.
    lib : TermLibrary or sequence of str
    known_forcing : ndarray, optional
        Same shape as the field arrays; subtracted from ``u_tt``.
    stride : int
        Keep every ``stride``-th sample (row-major over space then time).
    """
    if not isinstance(lib, TermLibrary):
        lib = TermLibrary(lib)
    utt = fields["u_tt"]
    if utt.size == 0:
        raise EmptySegmentError("no interior samples")
    target = utt if known_forcing is None else utt - np.asarray(known_forcing)
    y = target.reshape(-1)
    cols = [t.evaluate(fields).reshape(-1) for t in lib]
    D = np.column_stack(cols)

    grid_idx = np.indices(utt.shape).reshape(utt.ndim, -1).T
    # space indices refer to the full grid, which has a boundary node at 0
    coords = np.column_stack([grid_idx[:, :-1] + 1,
                              np.asarray(fields.t_index)[grid_idx[:, -1]]])
    if stride > 1:
        keep = slice(None, None, int(stride))
        y, D, coords = y[keep], D[keep], coords[keep]

    ok = np.isfinite(y) & np.all(np.isfinite(D), axis=1)
    n_dropped = int((~ok).sum())
    if n_dropped:
        y, D, coords = y[ok], D[ok], coords[ok]
    if len(y) == 0:
        raise EmptySegmentError("no finite samples left")
    for j, label in enumerate(lib.labels):
        if not np.any(D[:, j]):
            raise DegenerateColumnError(f"column for term {label!r} is identically zero",
                                        term=label)
    return DesignSystem(y, D, lib.labels, coords, n_dropped)


def column_normalize(sys: DesignSystem):
    """Scale every column to unit Euclidean norm.

    Returns the scaled system and the scales; a coefficient vector ``b`` of
    the scaled system maps back to ``b / scales``.
    """
    scales = np.linalg.norm(sys.D, axis=0)
    if np.any(scales == 0):
        raise DegenerateColumnError("cannot normalise a zero column")
    return (DesignSystem(sys.y, sys.D / scales, list(sys.labels), sys.coords,
                         sys.n_dropped, dict(sys.meta)),
            scales)
