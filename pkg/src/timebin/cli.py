"""Command-line entry point: ``timebin <command> [options]``.

Every command writes its primary outputs into ``--out-dir`` (default from the
``TIMEBIN_OUT_DIR`` environment variable, else the working directory) and a
``<output>.manifest.json`` sidecar next to each of them.  Primary outputs are
byte-identical for identical inputs and seed; only the manifest timestamp
changes between runs.

Exit codes: 0 success, 1 bad input or I/O failure, 2 configuration error,
3 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import warnings
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .coincidence import (
    SETTINGS,
    CoincidenceHistogram2D,
    assemble_projections,
    build_histogram,
    extract_peaks,
    records_from_json,
    records_to_json,
)
from .metrics import compute_metrics
from .photonics import (
    Gaussian,
    LossBudget,
    ModeField,
    load_brw_mode,
    loss_db,
    overlap,
    per_from_spectra,
    polyboard_mode,
    rate_budget,
    read_spectrum_csv,
    scan_displacement,
    suppression_from_spectra,
)
from .qcore import (
    DensityMatrix,
    InvalidStateError,
    eig_hermitian,
    matrix_from_json,
    matrix_to_json,
    nearest_physical,
)
from .simulator import (
    Channel,
    ConfigError,
    ExperimentConfig,
    config_for_setting,
    fringe_scan,
    load_config,
    read_stream,
    simulate_stream,
    write_stream,
)
from .tomography import MLEOptions, run_tomography

log = logging.getLogger("timebin")

OUT_DIR_ENV = "TIMEBIN_OUT_DIR"

# Rounding-level tolerance for --physical auto: a printed matrix with a few
# decimals can miss unit trace or positivity by about this much.
ROUNDING_TOL = 1e-3


class CliError(Exception):
    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


# --- Manifest and output helpers --------------------------------------------


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    inputs: list
    outputs: list
    seed: int | None
    version: str = __version__
    timestamp: str = ""
    parameters: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _dumps(doc) -> str:
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


class Run:
    """Collects outputs of one command and writes their manifests at the end."""

    def __init__(self, args, command: str, inputs=()):
        self.args = args
        self.command = command
        self.inputs = [str(p) for p in inputs]
        self.outputs: list[Path] = []
        self.parameters: dict = {}
        self.out_dir = Path(args.out_dir or os.environ.get(OUT_DIR_ENV) or ".")
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text)
        self.outputs.append(p)
        return p

    def write_json(self, name: str, doc) -> Path:
        return self.write_text(name, _dumps(doc))

    def add(self, p: Path) -> Path:
        self.outputs.append(p)
        return p

    def finish(self, seed=None) -> RunManifest:
        manifest = RunManifest(
            command=self.command,
            config_path=getattr(self.args, "config", None),
            inputs=self.inputs,
            outputs=[str(p) for p in self.outputs],
            seed=seed,
            timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
            parameters=self.parameters,
        )
        text = _dumps(manifest.to_json())
        for p in self.outputs:
            p.with_name(p.name + ".manifest.json").write_text(text)
        return manifest


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x: float) -> str:
    return repr(float(x))


# --- Config ------------------------------------------------------------------


def default_config_path():
    return resources.files("timebin.data").joinpath("default_config.json")


def _load_cfg(args) -> ExperimentConfig:
    src = args.config or default_config_path()
    try:
        cfg = load_config(src)
    except ConfigError:
        raise
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read config {src}: {exc}") from exc
    changes = {}
    if args.seed is not None:
        changes["rng_seed"] = args.seed
    if getattr(args, "integration_time", None) is not None:
        changes["integration_time"] = args.integration_time
    return cfg.replace(**changes) if changes else cfg


# --- simulate ------------------------------------------------------------------


def _stream_name(setting: str | None, fmt: str) -> str:
    ext = "csv" if fmt == "csv" else "tbt"
    return f"stream_{setting}.{ext}" if setting else f"stream.{ext}"


def _simulate_one(run: Run, cfg: ExperimentConfig, setting: str | None, fmt: str) -> np.ndarray:
    if setting:
        cfg = config_for_setting(cfg, setting)
    events = simulate_stream(cfg)
    p = run.path(_stream_name(setting, fmt))
    write_stream(events, p, fmt=fmt)
    run.add(p)
    counts = {ch.name.lower(): int(np.count_nonzero(events["channel"] == ch)) for ch in Channel}
    label = setting or "stream"
    print(f"{label}: " + ", ".join(f"{k}={v}" for k, v in counts.items()) + f" -> {p}")
    return events


def cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    run = Run(args, "simulate")
    if cfg.integration_time == 0:
        warnings.warn("integration_time is 0: writing an empty stream", stacklevel=1)
    fmt = "csv" if args.format == "csv" else "binary"
    settings = SETTINGS if args.all_settings else ([args.setting] if args.setting else [None])
    # independent seeds per setting, as in ``reproduce``
    for i, s in enumerate(settings):
        _simulate_one(run, cfg.replace(rng_seed=cfg.rng_seed + i), s, fmt)
    run.parameters = {"config": cfg.to_dict(), "settings": [s for s in settings if s]}
    run.finish(seed=cfg.rng_seed)
    return 0


# --- histogram / tomo ------------------------------------------------------------


def _is_histogram_csv(path: Path) -> bool:
    try:
        with open(path, "rb") as fh:
            return fh.read(12) == b"bin_width_ps"
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc


def _histogram_from(path: Path, args, cfg: ExperimentConfig) -> CoincidenceHistogram2D:
    try:
        if _is_histogram_csv(path):
            return CoincidenceHistogram2D.read_csv(path)
        events = read_stream(path)
    except CliError:
        raise
    except (OSError, ValueError) as exc:
        raise CliError(f"malformed input {path}: {exc}") from exc
    window = cfg.trigger_offset + 3 * cfg.bin_delay
    return build_histogram(events, bin_width=args.bin_width_ps * 1e-12, window=window,
                           integration_time=cfg.integration_time)


def _peaks(h: CoincidenceHistogram2D, args, cfg: ExperimentConfig):
    return extract_peaks(h, cfg.bin_delay, args.cell_halfwidth_ps * 1e-12)


def cmd_histogram(args) -> int:
    cfg = _load_cfg(args)
    path = Path(args.input)
    run = Run(args, "histogram", [path])
    h = _histogram_from(path, args, cfg)
    p = run.path(f"{path.stem}_hist.csv")
    h.write_csv(p)
    run.add(p)
    pk = _peaks(h, args, cfg)
    doc = {"total": h.total, "peaks": list(pk.peaks), "cells": np.asarray(pk.cells).tolist()}
    run.write_json(f"{path.stem}_peaks.json", doc)
    print(f"triples={h.total} peaks={pk.peaks}")
    run.finish()
    return 0


def _parse_inputs(items) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise CliError(f"input {item!r} is not of the form SETTING=PATH")
        key, path = item.split("=", 1)
        if key not in SETTINGS:
            raise CliError(f"unknown setting {key!r}; expected one of {', '.join(SETTINGS)}")
        if key in out:
            raise CliError(f"setting {key} given twice")
        out[key] = Path(path)
    missing = [s for s in SETTINGS if s not in out]
    if missing:
        raise CliError(f"missing setting(s): {', '.join(missing)}")
    return out


def _bar_chart_rows(m: np.ndarray):
    labels = ("11", "12", "21", "22")
    for i, a in enumerate(labels):
        for j, b in enumerate(labels):
            yield [a, b, _fmt(m[i, j].real), _fmt(m[i, j].imag)]


def _tomography(run: Run, args, records, seed: int) -> dict:
    opts = MLEOptions(seed=seed, cost=args.cost, chsh_settings=args.chsh)
    res = run_tomography(records, mc_samples=args.mc_samples, seed=seed, opts=opts,
                         workers=args.workers)
    doc = res.to_json()
    run.write_json("tomography.json", doc)
    run.write_text("rho_mle_bars.csv", _csv_text(["row", "col", "re", "im"], _bar_chart_rows(res.rho_mle.m)))
    if args.save_samples and res.mc is not None:
        run.write_json("mc_samples.json", {k: v for k, v in res.mc.samples.items()})
    run.parameters.update({"mc_samples": args.mc_samples, "cost": args.cost, "chsh": args.chsh,
                           "interval_level": 0.68})
    m = res.metrics
    for name in ("concurrence", "fidelity_phi_plus", "chsh_s", "purity"):
        iv = res.intervals.get(name)
        extra = f" [{iv[0]:.4f}, {iv[1]:.4f}]" if iv else ""
        print(f"{name:18s} {getattr(m, name):.4f}{extra}")
    return doc


def cmd_tomo(args) -> int:
    cfg = _load_cfg(args)
    seed = cfg.rng_seed
    if args.records:
        path = Path(args.records)
        run = Run(args, "tomo", [path])
        try:
            records = records_from_json(json.loads(path.read_text()))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise CliError(f"malformed records file {path}: {exc}") from exc
    else:
        inputs = _parse_inputs(args.inputs)
        run = Run(args, "tomo", inputs.values())
        peaks = {s: _peaks(_histogram_from(p, args, cfg), args, cfg) for s, p in inputs.items()}
        records = assemble_projections(peaks, include_forbidden=not args.no_forbidden)
        run.write_json("records.json", records_to_json(records))
    _tomography(run, args, records, seed)
    run.finish(seed=seed)
    return 0


def cmd_reproduce(args) -> int:
    """Simulate the four settings, histogram, reconstruct and report."""
    cfg = _load_cfg(args)
    run = Run(args, "reproduce")
    peaks = {}
    for s in SETTINGS:
        events = _simulate_one(run, cfg.replace(rng_seed=cfg.rng_seed + SETTINGS.index(s)), s, "binary")
        h = build_histogram(events, bin_width=args.bin_width_ps * 1e-12,
                            window=cfg.trigger_offset + 3 * cfg.bin_delay,
                            integration_time=cfg.integration_time)
        p = run.path(f"hist_{s}.csv")
        h.write_csv(p)
        run.add(p)
        peaks[s] = _peaks(h, args, cfg)
    records = assemble_projections(peaks)
    run.write_json("records.json", records_to_json(records))
    _tomography(run, args, records, cfg.rng_seed)
    run.parameters["config"] = cfg.to_dict()
    run.finish(seed=cfg.rng_seed)
    return 0


def cmd_fringe(args) -> int:
    cfg = _load_cfg(args)
    run = Run(args, "fringe")
    phases = np.linspace(0, 2 * np.pi, args.points)
    res = fringe_scan(cfg, phases, mode=args.mode, arm=args.arm,
                      cell_halfwidth=args.cell_halfwidth_ps * 1e-12)
    run.write_text("fringe.csv", _csv_text(["phase_rad", "value"],
                                           ([_fmt(a), _fmt(b)] for a, b in zip(res.phases, res.rates))))
    run.write_json("fringe.json", {"visibility": res.visibility, "visibility_err": res.visibility_err,
                                   "amplitude": res.amplitude, "phase_offset": res.phase_offset,
                                   "mode": args.mode, "arm": args.arm})
    print(f"visibility = {res.visibility:.4f} +- {res.visibility_err:.4f}")
    run.finish(seed=cfg.rng_seed)
    return 0


# --- metrics -----------------------------------------------------------------------


def _read_matrix(path: Path) -> np.ndarray:
    try:
        doc = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read matrix file {path}: {exc}") from exc
    if isinstance(doc, dict):
        for key in ("rho", "rho_mle"):
            if key in doc and isinstance(doc[key], dict):
                doc = doc[key]
                break
    try:
        m = matrix_from_json(doc)
    except ValueError as exc:
        raise CliError(f"malformed matrix file {path}: {exc}") from exc
    if m.shape != (4, 4):
        raise InvalidStateError("shape", f"expected a 4x4 matrix, got {m.shape}")
    return m


def _physical(m: np.ndarray, mode: str) -> tuple[DensityMatrix, bool]:
    """Validate or project ``m``; returns the state and whether it was projected."""
    if mode == "project":
        return nearest_physical(m), True
    try:
        return DensityMatrix.reconstructed(m), False
    except InvalidStateError as exc:
        if mode == "strict" or exc.invariant not in ("unit_trace", "positive_semidefinite"):
            raise
        h = (m + m.conj().T) / 2
        trace_err = abs(np.trace(h).real - 1.0)
        min_ev = eig_hermitian(h).min()
        if trace_err > ROUNDING_TOL or min_ev < -ROUNDING_TOL:
            raise
        return nearest_physical(m), True


def cmd_metrics(args) -> int:
    path = Path(args.input)
    run = Run(args, "metrics", [path])
    m = _read_matrix(path)
    state, projected = _physical(m, args.physical)
    if projected:
        log.warning("input projected onto the nearest physical state (--physical %s)", args.physical)
    rep = compute_metrics(state, chsh_settings=args.chsh)
    doc = rep.to_json()
    doc["projected"] = projected
    doc["eigenvalues_input"] = eig_hermitian((m + m.conj().T) / 2)
    if args.format == "csv":
        rows = [[k, _fmt(v)] for k, v in rep.to_json().items() if k != "intervals"]
        run.write_text(f"{path.stem}_metrics.csv", _csv_text(["metric", "value"], rows))
    else:
        run.write_json(f"{path.stem}_metrics.json", doc)
    for k in ("concurrence", "fidelity_phi_plus", "chsh_s", "purity"):
        print(f"{k:18s} {getattr(rep, k):.4f}")
    run.parameters = {"physical": args.physical, "chsh": args.chsh, "projected": projected}
    run.finish()
    return 0


# --- photonics ----------------------------------------------------------------------


def _mode(spec: str):
    """``brw``, ``polyboard``, ``gaussian:<d_1e2 um>`` or a ModeField CSV path."""
    if spec == "brw":
        return load_brw_mode()
    if spec == "polyboard":
        return polyboard_mode()
    if spec.startswith("gaussian:"):
        try:
            return Gaussian(float(spec.split(":", 1)[1]))
        except ValueError as exc:
            raise CliError(f"bad Gaussian diameter in {spec!r}") from exc
    p = Path(spec)
    if not p.exists():
        raise CliError(f"mode {spec!r} is neither a known model nor a file")
    try:
        return ModeField.read_csv(p)
    except (OSError, ValueError) as exc:
        raise CliError(f"malformed mode file {p}: {exc}") from exc


def cmd_overlap(args) -> int:
    run = Run(args, "overlap")
    a, b = _mode(args.a), _mode(args.b)
    eta = overlap(a, b, args.dx, args.dy, step=args.grid_step)
    doc = {"a": args.a, "b": args.b, "dx_um": args.dx, "dy_um": args.dy, "eta": eta, "loss_db": loss_db(eta)}
    run.write_json("overlap.json", doc)
    print(f"eta = {eta:.6f}  loss = {loss_db(eta):.4f} dB")
    run.finish()
    return 0


def cmd_scan(args) -> int:
    run = Run(args, "scan")
    a, b = _mode(args.a), _mode(args.b)
    res = scan_displacement(a, b, tuple(args.x_range), tuple(args.y_range), step=args.step,
                            grid_step=args.grid_step)
    run.write_json("scan.json", res.to_json())
    p = run.path("scan_map.csv")
    res.write_csv(p)
    run.add(p)
    print(f"minimum loss {res.min_loss:.3f} dB at {res.optimum}")
    for lvl, hw in res.half_widths.items():
        print(f"{lvl} half-widths: x {hw['x']:.3f} um, y {hw['y']:.3f} um")
    run.finish()
    return 0


def cmd_budget(args) -> int:
    run = Run(args, "budget")
    losses = None
    if args.losses:
        try:
            losses = LossBudget.from_json(json.loads(Path(args.losses).read_text()))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise CliError(f"malformed loss budget {args.losses}: {exc}") from exc
        run.inputs.append(args.losses)
    rows = []
    for t in args.transmission:
        rb = rate_budget(args.measured, (t, t), losses, det_efficiency=tuple(args.det_efficiency))
        rows.append(rb.to_json())
        print(f"T = {t:.3f}: corrected {rb.corrected:.1f}")
    doc = {"measured": args.measured, "budgets": rows}
    if losses is not None:
        doc["losses"] = losses.to_json()
    if args.format == "csv":
        run.write_text("budget.csv", _csv_text(["transmission", "measured", "corrected", "source", "predicted"],
                                               ([_fmt(r["transmissions"][0]), _fmt(r["measured"]),
                                                 _fmt(r["corrected"]), _fmt(r["source"]),
                                                 _fmt(r["predicted"])] for r in rows)))
    else:
        run.write_json("budget.json", doc)
    run.finish()
    return 0


def cmd_spectra(args) -> int:
    run = Run(args, "spectra", [args.first, args.second])
    try:
        s1, s2 = read_spectrum_csv(args.first), read_spectrum_csv(args.second)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read spectrum: {exc}") from exc
    fn = per_from_spectra if args.kind == "per" else suppression_from_spectra
    res = fn(s1, s2)
    doc = res.to_json()
    if args.band:
        doc["band"] = list(args.band)
        doc["band_minimum_db"] = res.band_minimum(*args.band)
    run.write_json(f"{args.kind}.json", doc)
    run.write_text(f"{args.kind}.csv", _csv_text(["wavelength_nm", "db"],
                                                 ([_fmt(a), _fmt(b)] for a, b in zip(res.wavelength, res.values))))
    print(f"{args.kind}: min {res.minimum:.2f} dB, max {res.maximum:.2f} dB")
    run.finish()
    return 0


# --- Parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON or TOML); default: packaged config")
    common.add_argument("--seed", type=int, help="override rng_seed")
    common.add_argument("--out-dir", help=f"output directory (default ${OUT_DIR_ENV} or .)")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("-v", "--verbose", action="store_true")

    analysis = argparse.ArgumentParser(add_help=False)
    analysis.add_argument("--bin-width-ps", type=float, default=200.0)
    analysis.add_argument("--cell-halfwidth-ps", type=float, default=500.0)

    tomo_opts = argparse.ArgumentParser(add_help=False)
    tomo_opts.add_argument("--mc-samples", type=int, default=1000,
                           help="Monte Carlo resamples (0 disables; 10000 for the long run)")
    tomo_opts.add_argument("--workers", type=int, default=1)
    tomo_opts.add_argument("--cost", choices=("gaussian", "poisson"), default="gaussian")
    tomo_opts.add_argument("--chsh", choices=("equatorial", "full"), default="equatorial")
    tomo_opts.add_argument("--save-samples", action="store_true")

    p = argparse.ArgumentParser(prog="timebin", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate a time-tag stream")
    s.add_argument("--setting", choices=SETTINGS)
    s.add_argument("--all-settings", action="store_true", help="one stream per measurement setting")
    s.add_argument("--integration-time", type=float)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("histogram", parents=[common, analysis], help="triple-coincidence histogram of a stream")
    s.add_argument("input")
    s.set_defaults(func=cmd_histogram)

    s = sub.add_parser("tomo", parents=[common, analysis, tomo_opts], help="state tomography")
    s.add_argument("inputs", nargs="*", metavar="SETTING=PATH", help="stream or histogram CSV per setting")
    s.add_argument("--records", help="projection records JSON instead of four inputs")
    s.add_argument("--no-forbidden", action="store_true", help="drop the |12>/|21> records")
    s.set_defaults(func=cmd_tomo)

    s = sub.add_parser("reproduce", parents=[common, analysis, tomo_opts], help="full pipeline from the config")
    s.add_argument("--integration-time", type=float)
    s.set_defaults(func=cmd_reproduce)

    s = sub.add_parser("fringe", parents=[common, analysis], help="central-cell fringe scan")
    s.add_argument("--mode", choices=("analytic", "sampled"), default="analytic")
    s.add_argument("--arm", choices=("alice", "bob"), default="alice")
    s.add_argument("--points", type=int, default=13)
    s.add_argument("--integration-time", type=float)
    s.set_defaults(func=cmd_fringe)

    s = sub.add_parser("metrics", parents=[common], help="metrics of a density matrix JSON")
    s.add_argument("input")
    s.add_argument("--physical", choices=("auto", "strict", "project"), default="auto",
                   help="auto projects rounding-level violations, strict rejects them")
    s.add_argument("--chsh", choices=("equatorial", "full"), default="equatorial")
    s.set_defaults(func=cmd_metrics)

    modes = argparse.ArgumentParser(add_help=False)
    modes.add_argument("--a", default="brw", help="brw, polyboard, gaussian:<d_um> or ModeField CSV")
    modes.add_argument("--b", default="polyboard")
    modes.add_argument("--grid-step", type=float, default=0.05)

    s = sub.add_parser("overlap", parents=[common, modes], help="mode overlap at one displacement")
    s.add_argument("--dx", type=float, default=0.0)
    s.add_argument("--dy", type=float, default=0.0)
    s.set_defaults(func=cmd_overlap)

    s = sub.add_parser("scan", parents=[common, modes], help="coupling loss versus displacement")
    s.add_argument("--x-range", type=float, nargs=2, default=(-3.0, 3.0))
    s.add_argument("--y-range", type=float, nargs=2, default=(-3.0, 3.0))
    s.add_argument("--step", type=float, default=0.1)
    s.set_defaults(func=cmd_scan)

    s = sub.add_parser("budget", parents=[common], help="interferometer-corrected rate budget")
    s.add_argument("--measured", type=float, default=1.4, help="measured coincidence rate (Hz/mW)")
    s.add_argument("--transmission", type=float, nargs="+", default=[0.05, 0.07])
    s.add_argument("--losses", help="LossBudget JSON")
    s.add_argument("--det-efficiency", type=float, nargs=2, default=(1.0, 1.0))
    s.set_defaults(func=cmd_budget)

    s = sub.add_parser("spectra", parents=[common], help="PER or filter suppression from two spectra")
    s.add_argument("kind", choices=("per", "suppression"))
    s.add_argument("first", help="favored (per) or reference (suppression) CSV")
    s.add_argument("second", help="orthogonal (per) or filtered (suppression) CSV")
    s.add_argument("--band", type=float, nargs=2, metavar=("LO_NM", "HI_NM"))
    s.set_defaults(func=cmd_spectra)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    logging.captureWarnings(True)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: config field {exc}", file=sys.stderr)
        return 2
    except InvalidStateError as exc:
        print(f"error: invariant violated: {exc}", file=sys.stderr)
        return 3
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
