"""Experiment configuration: a YAML file checked against a fixed schema.

A config may name a built-in preset with ``case: <name>``; its own sections
are then deep-merged over the preset (mappings merge, lists replace).
Unknown keys anywhere are rejected. Example::

    case: case1
    noise: {eta: 1.0e-5, seed: 7}
    sbl: {tol: 1.0e-10}

The preset files in ``wavesbl/presets`` are complete examples of the schema.
"""
from __future__ import annotations

import copy
from dataclasses import fields as dc_fields
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .dictionary import TermLibrary
from .exceptions import ConfigError, WaveSBLError
from .sbl import SblConfig
from .solver import (
    CubicNonlinearity,
    Grid,
    SineNonlinearity,
    WaveProblem1D,
    WaveProblem2D,
    gaussian_profile,
    manufactured_forcing,
)
from .switching import MarkovPath, fixed_path, sample_path

PRESETS = ("case1", "case2", "case3")
ALIASES = {"sg": "case1", "kg": "case2", "wave2d": "case3"}

# allowed keys per section; None marks a free-form leaf
_SCHEMA = {
    "name": None,
    "case": None,
    "problem": {
        "kind": None, "length": None, "nonlinearity": None, "initial_profile": None,
        "initial_velocity": None, "forcing": None,
    },
    "grid": {"dx": None, "dy": None, "steps_per_segment": None, "dt": None},
    "markov": {
        "generator": None, "states": None, "horizon": None, "seed": None,
        "initial_state": None,
        "fixed": {"jump_times": None, "values": None, "horizon": None},
    },
    "noise": {"eta": None, "seed": None, "smooth_window": None, "difference": None},
    "library": None,
    "sbl": {f.name: None for f in dc_fields(SblConfig)},
    "truth": None,
    "inference": {"single_model": None, "n_jobs": None, "stride": None,
                  "heatmap_stride": None},
    "reference": {"compare_abs": None, "segments": None, "states": None,
                  "single_model": None},
    "tolerances": {"max_error_percent": None, "max_spurious": None,
                   "single_model_min_worst_error_percent": None},
    "output": {"dir": None, "format": None},
}

_NONLIN_KEYS = {"sine": {"alpha", "omega"}, "cubic": {"linear", "cubic"}, "none": set()}
_PROFILE_KEYS = {"gaussian": {"amplitude", "center", "width"}, "manufactured": set(),
                 "zero": set()}


def _check_keys(data, schema, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping, got {type(data).__name__}")
    for key, value in data.items():
        if key not in schema:
            allowed = ", ".join(sorted(schema))
            raise ConfigError(f"unknown key '{where + '.' if where else ''}{key}' "
                              f"(allowed: {allowed})")
        sub = schema[key]
        if sub is not None and value is not None:
            _check_keys(value, sub, f"{where + '.' if where else ''}{key}")


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_case(name: str) -> str:
    key = ALIASES.get(str(name).lower(), str(name).lower())
    if key not in PRESETS:
        raise ConfigError(f"unknown case {name!r}; choose from "
                          f"{', '.join(PRESETS + tuple(ALIASES))}")
    return key


def preset_text(name: str) -> str:
    return (resources.files("wavesbl") / "presets" / f"{resolve_case(name)}.yaml").read_text()


def _load_yaml(text, origin):
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{origin}: invalid YAML ({exc})") from None
    return {} if data is None else data


def load_config(source=None, case: Optional[str] = None) -> "ExperimentConfig":
    """Load a config file, a preset, or a preset overridden by a file."""
    data = {}
    if source is not None:
        p = Path(source)
        if not p.exists():
            raise ConfigError(f"config file {str(p)!r} not found")
        data = _load_yaml(p.read_text(), str(p))
        _check_keys(data, _SCHEMA, "")
    preset = case or data.get("case")
    if preset is not None:
        base = _load_yaml(preset_text(preset), resolve_case(preset))
        data = _merge(base, {k: v for k, v in data.items() if k != "case"})
        data["case"] = resolve_case(preset)
    if not data:
        raise ConfigError("empty config: give a file or a case name")
    return ExperimentConfig(data)


def _num(section, key, value, positive=False, integer=False):
    try:
        out = int(value) if integer else float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key} must be a number, got {value!r}") from None
    if integer and float(value) != out:
        raise ConfigError(f"{section}.{key} must be an integer, got {value!r}")
    if positive and not out > 0:
        raise ConfigError(f"{section}.{key} must be positive, got {value!r}")
    return out


class ExperimentConfig:
    """Validated experiment description; builders turn it into module inputs.

    Every builder raises ``ConfigError`` with the offending key on bad input.
    """

    def __init__(self, data: dict):
        _check_keys(data, _SCHEMA, "")
        for key in ("problem", "grid", "markov", "library"):
            if key not in data:
                raise ConfigError(f"missing required section '{key}'")
        self.data = data
        # validate everything eagerly so errors surface before any work
        self.problem()
        self.grid()
        self.library()
        self.sbl_config()
        self.noise()
        self.inference()
        self.output_format()

    @property
    def name(self) -> str:
        return str(self.data.get("name") or self.data.get("case") or "custom")

    @property
    def ndim(self) -> int:
        return 2 if self.data["problem"].get("kind") == "wave2d" else 1

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True)

    # -- problem -------------------------------------------------------------

    def _profile(self, spec, where):
        if spec is None or spec == "zero":
            return None
        if spec == "manufactured":
            spec = {"kind": "manufactured"}
        if not isinstance(spec, dict) or spec.get("kind") not in _PROFILE_KEYS:
            raise ConfigError(f"{where} must be 'zero', 'manufactured' or a mapping with "
                              f"kind in {sorted(_PROFILE_KEYS)}")
        extra = set(spec) - {"kind"} - _PROFILE_KEYS[spec["kind"]]
        if extra:
            raise ConfigError(f"unknown key(s) {sorted(extra)} in {where}")
        kind = spec["kind"]
        if kind == "zero":
            return None
        if kind == "manufactured":
            return "manufactured"
        return gaussian_profile(
            _num(where, "amplitude", spec.get("amplitude", 1.0)),
            _num(where, "center", spec.get("center", 0.0)),
            _num(where, "width", spec.get("width", 1.0), positive=True))

    def problem(self):
        p = self.data["problem"]
        kind = p.get("kind")
        if kind not in ("wave1d", "wave2d"):
            raise ConfigError("problem.kind must be 'wave1d' or 'wave2d'")
        length = _num("problem", "length", p.get("length", np.pi), positive=True)
        profile = self._profile(p.get("initial_profile"), "problem.initial_profile")
        velocity = p.get("initial_velocity", "zero")
        if velocity not in ("zero", "manufactured", None):
            raise ConfigError("problem.initial_velocity must be 'zero' or 'manufactured'")
        if kind == "wave1d":
            if profile == "manufactured" or velocity == "manufactured":
                raise ConfigError("the manufactured solution is only defined for wave2d")
            if p.get("forcing") not in (None, "none"):
                raise ConfigError("problem.forcing is only supported for wave2d")
            nl = p.get("nonlinearity") or {"kind": "none"}
            if not isinstance(nl, dict) or nl.get("kind") not in _NONLIN_KEYS:
                raise ConfigError(f"problem.nonlinearity.kind must be one of {sorted(_NONLIN_KEYS)}")
            extra = set(nl) - {"kind"} - _NONLIN_KEYS[nl["kind"]]
            if extra:
                raise ConfigError(f"unknown key(s) {sorted(extra)} in problem.nonlinearity")
            if nl["kind"] == "sine":
                f = SineNonlinearity(_num("problem.nonlinearity", "alpha", nl.get("alpha", 1.0)),
                                     _num("problem.nonlinearity", "omega", nl.get("omega", 1.0)))
            elif nl["kind"] == "cubic":
                f = CubicNonlinearity(_num("problem.nonlinearity", "linear", nl.get("linear", 1.0)),
                                      _num("problem.nonlinearity", "cubic", nl.get("cubic", 1.0)))
            else:
                f = None
            kw = {} if profile is None else {"initial_profile": profile}
            return WaveProblem1D(length, f, **kw)
        if p.get("nonlinearity") not in (None, {"kind": "none"}):
            raise ConfigError("problem.nonlinearity is only supported for wave1d")
        forcing = p.get("forcing", "none")
        if forcing not in ("none", "manufactured", None):
            raise ConfigError("problem.forcing must be 'none' or 'manufactured'")
        kw = {"length": length}
        if forcing == "manufactured":
            kw["forcing"] = manufactured_forcing
        if profile == "manufactured":
            kw["initial_profile"] = lambda x, y: np.sin(x) * np.sin(y)
        elif profile is not None:
            g = profile
            kw["initial_profile"] = lambda x, y: g(x) * g(y)
        if velocity == "manufactured":
            kw["initial_velocity"] = lambda x, y: -np.sin(x) * np.sin(y)
        return WaveProblem2D(**kw)

    def forcing(self):
        """Known source term for the regression, or None."""
        if self.ndim == 2 and self.data["problem"].get("forcing") == "manufactured":
            return manufactured_forcing
        return None

    def grid(self) -> Grid:
        g = self.data["grid"]
        if "dx" not in g:
            raise ConfigError("grid.dx is required")
        try:
            return Grid(
                dx=_num("grid", "dx", g["dx"], positive=True),
                dy=None if g.get("dy") is None else _num("grid", "dy", g["dy"], positive=True),
                steps_per_segment=(None if g.get("steps_per_segment") is None else
                                   _num("grid", "steps_per_segment", g["steps_per_segment"],
                                        positive=True, integer=True)),
                dt=None if g.get("dt") is None else _num("grid", "dt", g["dt"], positive=True),
            )
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from None

    # -- Markov path -------------------------------------------------------------

    def path(self, seed=None) -> MarkovPath:
        """The fixed path if one is given, else a sample from the generator.

        ``seed`` overrides ``markov.seed`` for sampled paths.
        """
        m = self.data["markov"]
        try:
            if m.get("fixed") is not None:
                fx = m["fixed"]
                missing = {"jump_times", "values", "horizon"} - set(fx)
                if missing:
                    raise ConfigError(f"markov.fixed is missing {sorted(missing)}")
                return fixed_path(fx["jump_times"], fx["values"], fx["horizon"])
            for key in ("generator", "states", "horizon"):
                if key not in m:
                    raise ConfigError(f"markov.{key} is required without markov.fixed")
            return sample_path(m["generator"], m["states"], m["horizon"],
                               seed=m.get("seed") if seed is None else seed,
                               initial_state=m.get("initial_state"))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, WaveSBLError):
                raise
            raise ConfigError(f"markov: {exc}") from None

    # -- data and inference ------------------------------------------------------

    def noise(self) -> dict:
        n = dict(self.data.get("noise") or {})
        eta = _num("noise", "eta", n.get("eta", 0.01))
        if eta < 0:
            raise ConfigError("noise.eta must be non-negative")
        window = n.get("smooth_window")
        if window is not None:
            window = _num("noise", "smooth_window", window, positive=True, integer=True)
            if window % 2 == 0:
                raise ConfigError("noise.smooth_window must be odd")
        diff = n.get("difference", "observed")
        if diff not in ("observed", "clean"):
            raise ConfigError("noise.difference must be 'observed' or 'clean'")
        seed = n.get("seed")
        if seed is not None:
            seed = _num("noise", "seed", seed, integer=True)
        return {"eta": eta, "seed": seed, "smooth_window": window, "difference": diff}

    def library(self) -> TermLibrary:
        lib = self.data["library"]
        if not isinstance(lib, list) or not lib:
            raise ConfigError("library must be a non-empty list of term strings")
        try:
            out = TermLibrary([str(t) for t in lib])
        except ValueError as exc:
            raise ConfigError(f"library: {exc}") from None
        if self.ndim == 1 and out.required_derivatives() & {"u_y", "u_yy"}:
            raise ConfigError("library uses y-derivatives but the problem is 1D")
        return out

    def sbl_config(self) -> SblConfig:
        try:
            return SblConfig(**(self.data.get("sbl") or {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"sbl: {exc}") from None

    def inference(self) -> dict:
        inf = dict(self.data.get("inference") or {})
        out = {"single_model": bool(inf.get("single_model", False)),
               "n_jobs": _num("inference", "n_jobs", inf.get("n_jobs", 1), positive=True,
                              integer=True),
               "stride": _num("inference", "stride", inf.get("stride", 1), positive=True,
                              integer=True),
               "heatmap_stride": _num("inference", "heatmap_stride",
                                      inf.get("heatmap_stride", 0 if self.ndim == 1 else 4),
                                      integer=True)}
        return out

    def truth(self, path: MarkovPath) -> Optional[list]:
        """Per-segment truth; the string ``M`` stands for the path value."""
        t = self.data.get("truth")
        if t is None:
            return None
        if not isinstance(t, dict):
            raise ConfigError("truth must map term labels to numbers or 'M'")
        labels = set(self.library().labels)
        unknown = set(t) - labels
        if unknown:
            raise ConfigError(f"truth names term(s) {sorted(unknown)} not in the library")
        out = []
        for v in path.values:
            seg = {}
            for lab, val in t.items():
                if val == "M":
                    seg[lab] = float(v)
                else:
                    seg[lab] = _num("truth", lab, val)
            out.append(seg)
        return out

    def reference(self) -> dict:
        return dict(self.data.get("reference") or {})

    def tolerances(self) -> dict:
        return dict(self.data.get("tolerances") or {})

    def output_format(self) -> str:
        fmt = (self.data.get("output") or {}).get("format", "auto")
        if fmt not in ("auto", "csv", "bin"):
            raise ConfigError("output.format must be 'auto', 'csv' or 'bin'")
        if fmt == "auto":
            return "csv" if self.ndim == 1 else "bin"
        return fmt

    def output_dir(self) -> Optional[str]:
        return (self.data.get("output") or {}).get("dir")
