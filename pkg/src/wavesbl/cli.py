"""Command-line front end: ``simulate``, ``infer`` and ``reproduce``.

Exit codes
----------
0  success
1  unexpected internal error
2  usage or configuration error
3  Markov path error
4  forward solver error (CFL violation, divergence)
5  data preparation error (short segment, bad term, degenerate column)
6  inference error, or every segment failed
7  file parse error

Output directory precedence: ``--out``, then the ``WAVESBL_OUT``
environment variable, then ``output.dir`` in the config, then
``./wavesbl-out``. Report files carry no timestamps; those go to the
sidecar ``run.log`` only, so reruns produce identical reports.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ALIASES, PRESETS, ExperimentConfig, load_config
from .dsbl import (
    aggregate_by_state,
    error_report,
    heatmap_csv,
    reports_table_csv,
    reports_to_json,
    run_dsbl,
    run_single_model,
    segment_data,
    simulate_identified,
    single_model_state_errors,
)
from .exceptions import ConfigError, InferenceError, WaveSBLError
from .solver import cfl_numbers, solve_wave_1d, solve_wave_2d
from .storage import read_snapshot, write_snapshot
from .switching import MarkovPath
from .synth import add_noise, derivative_fields

ENV_OUT = "WAVESBL_OUT"
DEFAULT_OUT = "wavesbl-out"
_CSV_NODE_LIMIT = 500_000
_HEATMAP_ROWS = 100_000

log = logging.getLogger("wavesbl")


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = args.out or os.environ.get(ENV_OUT) or cfg.output_dir() or DEFAULT_OUT
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _attach_log(out: Path):
    handler = logging.FileHandler(out / "run.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    return handler


def _load(args) -> ExperimentConfig:
    if args.config is None and args.case is None:
        raise ConfigError("give --config PATH or --case NAME")
    cfg = load_config(args.config, case=args.case)
    data = cfg.data
    if getattr(args, "noise", None) is not None:
        data.setdefault("noise", {})["eta"] = args.noise
    if getattr(args, "seed", None) is not None:
        data.setdefault("noise", {})["seed"] = args.seed
        if data["markov"].get("fixed") is None:
            data["markov"]["seed"] = args.seed
    if getattr(args, "single_model", False):
        data.setdefault("inference", {})["single_model"] = True
    if getattr(args, "format", None):
        data.setdefault("output", {})["format"] = args.format
    return ExperimentConfig(data)


def _snapshot_format(cfg: ExperimentConfig, shape) -> str:
    fmt = cfg.output_format()
    explicit = (cfg.data.get("output") or {}).get("format", "auto") != "auto"
    if not explicit and int(np.prod(shape)) > _CSV_NODE_LIMIT:
        return "bin"
    return fmt


def _ext(fmt):
    return ".csv" if fmt == "csv" else ".bin"


# -- simulate ----------------------------------------------------------------------

def simulate(cfg: ExperimentConfig, out: Path, echo=print):
    """Solve the forward problem and write path, clean and noisy snapshots."""
    path = cfg.path()
    grid = cfg.grid()
    problem = cfg.problem()
    log.info("simulating %s: %d segments on [0, %g]", cfg.name, path.n_segments, path.horizon)
    if cfg.ndim == 1:
        snap = solve_wave_1d(problem, path, grid)
    else:
        snap = solve_wave_2d(problem, path, grid)
    noise = cfg.noise()
    noisy = add_noise(snap, noise["eta"], noise["seed"])
    fmt = _snapshot_format(cfg, snap.shape)
    path.to_csv(out / "path.csv")
    write_snapshot(snap, out / f"u{_ext(fmt)}", fmt)
    write_snapshot(noisy, out / f"y{_ext(fmt)}", fmt)
    (out / "config.yaml").write_text(cfg.to_yaml())
    cfl = cfl_numbers(path, grid, cfg.ndim)
    shape = "x".join(str(n) for n in snap.shape)
    echo(f"case {cfg.name}: grid {shape} nodes, {path.n_segments} segments, "
         f"max CFL {max(cfl):.4f}, noise eta={noise['eta']:g}")
    echo(f"wrote {out / 'path.csv'}, {out / ('u' + _ext(fmt))}, {out / ('y' + _ext(fmt))}")
    log.info("wrote snapshots (%s format, %s nodes)", fmt, shape)
    return path, snap, noisy


# -- infer -------------------------------------------------------------------------

def _heatmap_stride(cfg, snap):
    stride = cfg.inference()["heatmap_stride"]
    if stride and stride > 0:
        return stride
    n = int(np.prod(snap.shape))
    return max(1, math.ceil((n / _HEATMAP_ROWS) ** (1.0 / len(snap.shape))))


def _initial_velocity(problem, snap):
    if snap.y is None:
        return np.asarray(problem.initial_velocity(snap.x), dtype=float)
    X, Y = np.meshgrid(snap.x, snap.y, indexing="ij")
    return np.asarray(problem.initial_velocity(X, Y), dtype=float)


def infer(cfg: ExperimentConfig, out: Path, path: MarkovPath, observed, clean=None,
          echo=print):
    """Segment-wise inference plus optional single model; writes reports.

    Returns ``(reports, single)``. Raises ``InferenceError`` if every
    segment fails.
    """
    lib = cfg.library()
    noise = cfg.noise()
    inf = cfg.inference()
    source = observed
    if noise["difference"] == "clean":
        if clean is None:
            raise ConfigError("noise.difference is 'clean' but no clean snapshot is available")
        source = clean
    fields = derivative_fields(source, lib.required_derivatives(), noise["smooth_window"])
    forcing = cfg.forcing()
    segs = segment_data(fields, path, lib, forcing, stride=inf["stride"])
    truth = cfg.truth(path)
    sbl_cfg = cfg.sbl_config()
    log.info("running segment-wise SBL on %d segments", len(segs))
    reports = run_dsbl(segs, sbl_cfg, truth=truth, n_jobs=inf["n_jobs"])
    failed = [r for r in reports if r.failed]
    for r in failed:
        log.warning("segment %d failed: %s", r.index, r.error)
        echo(f"segment {r.index} [{r.interval[0]:g}, {r.interval[1]:g}) failed: {r.error}")
    if len(failed) == len(reports):
        raise InferenceError("inference failed on every segment")

    single = None
    if inf["single_model"]:
        log.info("running single-model baseline")
        single = run_single_model(fields, lib, sbl_cfg, forcing=forcing, path=path)

    reports_to_json(reports, single, dest=out / "report.json", case=cfg.name,
                    library=lib.labels)
    reports_table_csv(reports + ([single] if single is not None else []),
                      dest=out / "table.csv")

    reference = clean if clean is not None else observed
    problem = cfg.problem()
    ok = [r for r in reports if not r.failed]
    if len(ok) == len(reports):
        v0 = _initial_velocity(problem, reference)
        stride = _heatmap_stride(cfg, reference)
        coeffs = [r.estimate for r in reports]
        inferred = simulate_identified(reference, lib, coeffs, forcing, v0)
        heatmap_csv(reference, inferred, dest=out / "heatmap.csv", stride=stride)
        if single is not None:
            inferred_single = simulate_identified(reference, lib, [single.estimate] * len(reports),
                                                  forcing, v0)
            heatmap_csv(reference, inferred_single, dest=out / "heatmap_single.csv",
                        stride=stride)

    summary = error_report(reports)
    for r in reports:
        if r.failed:
            continue
        terms = ", ".join(f"{k}={v:.6g}" for k, v in r.estimate.items() if v != 0.0)
        echo(f"[{r.interval[0]:g}, {r.interval[1]:g})  {terms}")
    if not math.isnan(summary.max_error):
        echo(f"max error {summary.max_error:.4f}%  mean {summary.mean_error:.4f}%  "
             f"largest spurious coefficient {summary.max_spurious:.3g}")
    if single is not None:
        terms = ", ".join(f"{k}={v:.6g}" for k, v in single.estimate.items() if v != 0.0)
        echo(f"single model: {terms}")
    log.info("wrote report.json and table.csv to %s", out)
    return reports, single


def _infer_inputs(args, cfg, out):
    data = Path(args.data) if args.data else None
    if data is None:
        for ext in (".csv", ".bin"):
            if (out / f"y{ext}").exists():
                data = out / f"y{ext}"
                break
    if data is None:
        raise ConfigError(f"no data file given and none found in {out}")
    path_file = Path(args.path) if args.path else out / "path.csv"
    if not path_file.exists():
        raise ConfigError(f"path file {str(path_file)!r} not found")
    path = MarkovPath.from_csv(path_file)
    observed = read_snapshot(data, path)
    clean = None
    clean_file = Path(args.clean) if args.clean else data.with_name("u" + data.suffix)
    if clean_file.exists() and clean_file != data:
        clean = read_snapshot(clean_file, path)
    return path, observed, clean


# -- reproduce ------------------------------------------------------------------------

def _reference_error(ref_value, truth, compare_abs):
    if truth == 0:
        return None
    if compare_abs:
        return abs(abs(ref_value) - abs(truth)) / abs(truth) * 100.0
    return abs(ref_value - truth) / abs(truth) * 100.0


def comparison_rows(cfg: ExperimentConfig, reports, single=None):
    """Rows ``scope, term, reference, estimate, truth, error, reference_error``."""
    ref = cfg.reference()
    compare_abs = bool(ref.get("compare_abs", False))
    rows = []
    for entry, r in zip(ref.get("segments") or [], reports):
        a, b = entry["interval"]
        for term, ref_value in entry["estimate"].items():
            tru = r.truth[term] if r.truth else None
            rows.append([f"[{a:g}, {b:g})", term, ref_value, r.estimate.get(term),
                         tru, r.error_percent.get(term),
                         None if tru is None else _reference_error(ref_value, tru, compare_abs)])
    states = aggregate_by_state(reports)
    by_value = {s.value: s for s in states}
    for entry in ref.get("states") or []:
        st = by_value.get(float(entry["value"]))
        if st is None:
            continue
        for term, ref_value in entry["estimate"].items():
            tru = st.truth[term] if st.truth else None
            rows.append([f"state {st.value:g}", term, ref_value, st.estimate.get(term), tru,
                         st.error_percent.get(term),
                         None if tru is None else _reference_error(ref_value, tru, compare_abs)])
    if single is not None and ref.get("single_model"):
        for st in single_model_state_errors(single, states):
            for term, ref_value in ref["single_model"].items():
                tru = st.truth[term] if st.truth else None
                rows.append([f"single vs state {st.value:g}", term, ref_value,
                             single.estimate.get(term), tru, st.error_percent.get(term),
                             None if tru is None else _reference_error(ref_value, tru, compare_abs)])
    return rows


def _write_comparison(rows, dest):
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scope", "term", "reference", "estimate", "truth", "error_percent",
                    "reference_error_percent"])
        for row in rows:
            w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for v in row])


def _fmt(v, spec):
    return "-" if v is None else format(v, spec)


# -- argument parsing ------------------------------------------------------------------

def _common(p, infer_flags=False):
    p.add_argument("--config", metavar="PATH", help="experiment config (YAML)")
    p.add_argument("--case", metavar="NAME",
                   help=f"built-in preset: {', '.join(PRESETS + tuple(ALIASES))}")
    p.add_argument("--seed", type=int, metavar="N", help="noise seed (and Markov seed when sampled)")
    p.add_argument("--noise", type=float, metavar="ETA", help="relative noise level")
    p.add_argument("--out", metavar="DIR", help=f"output directory (default ${ENV_OUT} or ./{DEFAULT_OUT})")
    p.add_argument("--format", choices=("csv", "bin"), help="snapshot file format")
    if infer_flags:
        p.add_argument("--single-model", action="store_true",
                       help="also fit one model over the whole horizon")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wavesbl",
        description="Simulate wave equations with Markov-switching coefficients and "
                    "recover the coefficients segment by segment.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="solve the forward problem and write snapshots")
    _common(p)

    p = sub.add_parser("infer", help="recover coefficients from a snapshot")
    _common(p, infer_flags=True)
    p.add_argument("--data", metavar="FILE", help="observed snapshot (default: OUT/y.csv or y.bin)")
    p.add_argument("--path", metavar="FILE", help="Markov path CSV (default: OUT/path.csv)")
    p.add_argument("--clean", metavar="FILE", help="clean snapshot for heat maps (default: OUT/u.*)")

    p = sub.add_parser("reproduce", help="simulate and infer a built-in case end to end")
    p.add_argument("case_name", metavar="CASE", choices=PRESETS + tuple(ALIASES),
                   help="one of " + ", ".join(PRESETS + tuple(ALIASES)))
    _common(p, infer_flags=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = None
    try:
        if args.command == "reproduce":
            if args.case is not None and args.case != args.case_name:
                raise ConfigError("give the case either positionally or with --case, not both")
            args.case = args.case_name
        cfg = _load(args)
        out = _out_dir(args, cfg)
        if args.command == "reproduce" and not args.out and not os.environ.get(ENV_OUT):
            out = out / cfg.name
            out.mkdir(parents=True, exist_ok=True)
        handler = _attach_log(out)
        log.info("wavesbl %s %s", __version__, args.command)

        if args.command == "simulate":
            simulate(cfg, out)
        elif args.command == "infer":
            path, observed, clean = _infer_inputs(args, cfg, out)
            infer(cfg, out, path, observed, clean)
        else:
            path, clean, noisy = simulate(cfg, out)
            reports, single = infer(cfg, out, path, noisy, clean)
            rows = comparison_rows(cfg, reports, single)
            _write_comparison(rows, out / "comparison.csv")
            if rows:
                print(f"{'scope':<22}{'term':<9}{'reference':>11}{'estimate':>12}"
                      f"{'err %':>10}{'ref err %':>11}")
                for scope, term, ref_value, est, _, err, perr in rows:
                    print(f"{scope:<22}{term:<9}{ref_value:>11.4f}{_fmt(est, '.4f'):>12}"
                          f"{_fmt(err, '.3f'):>10}{_fmt(perr, '.3f'):>11}")
            print(f"wrote {out / 'comparison.csv'}")
        log.info("done")
        return 0
    except WaveSBLError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    finally:
        if handler is not None:
            log.removeHandler(handler)
            handler.close()


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
