"""Model of the time-bin apparatus: expected coincidence rates and time-tag streams.

A pulse pair (early bin ``1``, late bin ``2``, separated by ``bin_delay``)
pumps the pair source.  Each photon then passes an unbalanced analysis
interferometer with the same delay, so it is detected in one of three time
slots relative to the trigger, ``t_-1``, ``t_0`` and ``t_+1``.  Slots are
indexed ``-1, 0, +1`` throughout.

Each analysis interferometer has two output ports, only port 0 carries a
detector.  With amplitude 1/2 per pass and port the full model is unitary;
rates quoted for the monitored port are normalized so that a photon whose
phase-averaged detection probability is one contributes with amplitude
``1/sqrt(2)`` per pass, and every further loss enters through
``interferometer_transmission`` and ``det_efficiency``.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .qcore import DensityMatrix

__all__ = [
    "Channel",
    "ConfigError",
    "ExperimentConfig",
    "SETTING_PHASES",
    "source_state",
    "detection_bras",
    "port_cell_probabilities",
    "expected_cell_rates",
    "config_for_setting",
    "simulate_stream",
    "dead_time_filter",
    "FringeResult",
    "fit_fringe",
    "fringe_scan",
    "EVENT_DTYPE",
    "write_stream",
    "read_stream",
    "load_config",
    "save_config",
]

SLOTS = (-1, 0, 1)
MAX_TRIGGERS = 200_000_000
SETTING_PHASES = {"+": 0.0, "L": math.pi / 2}


class Channel(IntEnum):
    TRIGGER = 0
    ALICE = 1
    BOB = 2


EVENT_DTYPE = np.dtype([("channel", "<u1"), ("timestamp", "<u8")])


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class ExperimentConfig:
    """Physical parameters of the simulated apparatus (SI units, phases in rad).

    ``det_efficiency`` and ``interferometer_transmission`` are (Alice, Bob)
    pairs.  The transmission is the phase-averaged transmission of an analysis
    interferometer into its monitored port, so a lossless device has 0.5.

    ``trigger_mode="all"`` emits one trigger per pump cycle (every
    ``trigger_decimation``-th cycle); ``"conditional"`` keeps only triggers of
    cycles that contain an Alice or Bob event, like the conditional filter of
    a time tagger, which keeps long runs at realistic rates tractable.
    """

    rep_rate: float = 76e6
    bin_delay: float = 3e-9
    pair_prob: float = 1e-3
    pump_phase: float = 0.0
    alice_phase: float = 0.0
    bob_phase: float = 0.0
    visibility: float = 1.0
    detector_jitter_sigma: float = 40e-12
    tagger_jitter_rms: float = 10e-12
    dead_time: float = 2e-9
    det_efficiency: tuple = (1.0, 1.0)
    interferometer_transmission: tuple = (0.5, 0.5)
    background_rate: float = 0.0
    integration_time: float = 1e-3
    rng_seed: int = 0
    trigger_offset: float = 2e-9
    trigger_decimation: int = 1
    trigger_mode: str = "all"
    folded: bool = False
    common_phase: float = 0.0
    double_pairs: bool = False

    def __post_init__(self):
        for name in ("det_efficiency", "interferometer_transmission"):
            val = getattr(self, name)
            if np.isscalar(val):
                val = (val, val)
            object.__setattr__(self, name, tuple(float(v) for v in val))
        self.validate()

    def validate(self):
        if self.rep_rate <= 0:
            raise ConfigError("rep_rate", "must be positive")
        if not 0.0 <= self.pair_prob <= 1.0:
            raise ConfigError("pair_prob", "must be a probability in [0, 1]")
        if not 0.0 <= self.visibility <= 1.0:
            raise ConfigError("visibility", "must lie in [0, 1]")
        for name in ("det_efficiency", "interferometer_transmission"):
            val = getattr(self, name)
            if len(val) != 2:
                raise ConfigError(name, "expected an (Alice, Bob) pair")
            if any(not 0.0 <= v <= 1.0 for v in val):
                raise ConfigError(name, "must lie in [0, 1]")
        if any(t > 0.5 for t in self.interferometer_transmission):
            raise ConfigError(
                "interferometer_transmission", "cannot exceed 0.5 (half the light leaves the second port)"
            )
        for name in ("detector_jitter_sigma", "tagger_jitter_rms", "dead_time", "background_rate",
                     "integration_time", "trigger_offset"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be non-negative")
        if self.bin_delay <= 3 * self.detector_jitter_sigma:
            raise ConfigError("bin_delay", "must exceed three detector jitter sigmas")
        if self.trigger_offset + 2 * self.bin_delay + 5 * self.jitter_sigma >= 1.0 / self.rep_rate:
            raise ConfigError("trigger_offset", "latest time slot runs into the next pump cycle")
        if int(self.trigger_decimation) != self.trigger_decimation or self.trigger_decimation < 1:
            raise ConfigError("trigger_decimation", "must be a positive integer")
        if self.trigger_mode not in ("all", "conditional"):
            raise ConfigError("trigger_mode", "must be 'all' or 'conditional'")
        if self.trigger_mode == "all" and self.integration_time * self.rep_rate / self.trigger_decimation > MAX_TRIGGERS:
            raise ConfigError(
                "integration_time", "too many trigger events; raise trigger_decimation or use trigger_mode='conditional'"
            )

    @property
    def jitter_sigma(self) -> float:
        return math.hypot(self.detector_jitter_sigma, self.tagger_jitter_rms)

    @property
    def effective_phases(self) -> tuple[float, float, float]:
        """(pump, alice, bob) phases including the shared-interferometer drift.

        In folded mode the pump and both analysis passes share one physical
        interferometer, so ``common_phase`` enters the pump phase twice (half
        the wavelength) and cancels in ``alice + bob - pump``.  Unfolded, the
        drift only affects the two analysis interferometers.
        """
        c = self.common_phase
        pump = self.pump_phase + (2 * c if self.folded else 0.0)
        return pump, self.alice_phase + c, self.bob_phase + c

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        for name in ("det_efficiency", "interferometer_transmission"):
            doc[name] = list(doc[name])
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown configuration field")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError("config", str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    """Read a JSON or TOML key-value document into an :class:`ExperimentConfig`."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        doc = tomllib.loads(raw.decode())
    else:
        doc = json.loads(raw)
    return ExperimentConfig.from_dict(doc)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")


def config_for_setting(cfg: ExperimentConfig, setting: str) -> ExperimentConfig:
    """Analysis phases for a measurement setting such as ``'+L'``."""
    if len(setting) != 2 or any(s not in SETTING_PHASES for s in setting):
        raise ValueError(f"setting must be two of {sorted(SETTING_PHASES)}, got {setting!r}")
    return cfg.replace(alice_phase=SETTING_PHASES[setting[0]], bob_phase=SETTING_PHASES[setting[1]])


# --- Analytic model -------------------------------------------------------


def source_state(visibility: float = 1.0, pump_phase: float = 0.0) -> np.ndarray:
    """Post-selected pair state with a phenomenological coherence ``visibility``.

    ``V = 1`` gives the pure state (|11> + e^{i phi}|22>)/sqrt(2).
    """
    rho = np.zeros((4, 4), dtype=complex)
    rho[0, 0] = rho[3, 3] = 0.5
    rho[3, 0] = 0.5 * visibility * np.exp(1j * pump_phase)
    rho[0, 3] = np.conj(rho[3, 0])
    return rho


def detection_bras(phase: float, port: int = 0) -> np.ndarray:
    """Rows are the bras <1|, <2| amplitudes for slots -1, 0, +1 at one output port.

    Unitary normalization: amplitude 1/2 per pass, the second port picks up
    a minus sign on the long-arm amplitude.  Slot +1 is reached by one path
    only, so its phase is unobservable and dropped; this keeps the corner
    cells bit-identical across phase settings.
    """
    e = np.exp(1j * phase)
    sign = 1.0 if port == 0 else -1.0
    return 0.5 * np.array([[1.0, 0.0], [sign * e, 1.0], [0.0, 1.0]], dtype=complex)


def port_cell_probabilities(rho, alice_phase: float, bob_phase: float) -> np.ndarray:
    """Joint outcome probabilities, shape (port_A, port_B, slot_A, slot_B) = (2, 2, 3, 3).

    Sums to ``tr(rho)`` for any phases.
    """
    m = np.asarray(rho.m if isinstance(rho, DensityMatrix) else rho, dtype=complex)
    out = np.empty((2, 2, 3, 3))
    for pa in (0, 1):
        ba = detection_bras(alice_phase, pa)
        for pb in (0, 1):
            bb = detection_bras(bob_phase, pb)
            # bra for each (slot_A, slot_B) in the |11>,|12>,|21>,|22> basis
            bras = np.einsum("ia,jb->ijab", ba, bb).reshape(3, 3, 4)
            out[pa, pb] = np.real(np.einsum("ijk,kl,ijl->ij", bras, m, bras.conj()))
    return out


def _state_for(cfg: ExperimentConfig, rho=None) -> np.ndarray:
    pump, _, _ = cfg.effective_phases
    if rho is None:
        return source_state(cfg.visibility, pump)
    return np.asarray(rho.m if isinstance(rho, DensityMatrix) else rho, dtype=complex)


def _photon_survival(cfg: ExperimentConfig) -> tuple[float, float]:
    # 2 T: the factor 1/2 of the port split is already in the amplitudes
    return tuple(2.0 * t * e for t, e in zip(cfg.interferometer_transmission, cfg.det_efficiency))


def expected_cell_rates(cfg: ExperimentConfig, rho=None) -> np.ndarray:
    """Coincidence rates (Hz) per (slot_A, slot_B) cell at the monitored ports.

    Returns a 3x3 array indexed ``[slot_A + 1, slot_B + 1]``.  ``rho``
    overrides the source state built from ``visibility`` and ``pump_phase``.
    """
    _, alpha, beta = cfg.effective_phases
    probs = port_cell_probabilities(_state_for(cfg, rho), alpha, beta)[0, 0]
    qa, qb = _photon_survival(cfg)
    return cfg.pair_prob * cfg.rep_rate * qa * qb * probs


# --- Time-tag streams ------------------------------------------------------


def dead_time_filter(timestamps: np.ndarray, dead_time_ps: int) -> np.ndarray:
    """Non-paralyzable dead time on a sorted timestamp array; returns a keep mask."""
    t = np.asarray(timestamps, dtype=np.int64)
    keep = np.ones(t.size, dtype=bool)
    if t.size < 2 or dead_time_ps <= 0:
        return keep
    if np.all(np.diff(t) >= dead_time_ps):
        return keep
    keep[:] = False
    i = 0
    n = t.size
    while i < n:
        keep[i] = True
        nxt = i + 1
        if nxt < n and t[nxt] - t[i] >= dead_time_ps:
            i = nxt
            continue
        i = int(np.searchsorted(t, t[i] + dead_time_ps, side="left"))
    return keep


def _trigger_times_ps(cycles: np.ndarray, rep_rate: float) -> np.ndarray:
    period_ps = 1e12 / rep_rate
    return np.rint(cycles * period_ps).astype(np.int64)


def _cycle_of(t_ps: np.ndarray, rep_rate: float) -> np.ndarray:
    # index of the last trigger at or before each timestamp
    k = np.floor(t_ps / (1e12 / rep_rate)).astype(np.int64)
    k -= _trigger_times_ps(k, rep_rate) > t_ps
    k += _trigger_times_ps(k + 1, rep_rate) <= t_ps
    return k


def simulate_stream(cfg: ExperimentConfig, rho=None) -> np.ndarray:
    """Sampled time-tag stream for ``cfg.integration_time`` seconds.

    Returns a structured array with fields ``channel`` (see :class:`Channel`)
    and ``timestamp`` (integer picoseconds), ordered by timestamp.  The result
    depends only on ``cfg`` (and ``rho``), in particular on ``rng_seed``.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    n_cycles = int(math.floor(cfg.integration_time * cfg.rep_rate))
    if n_cycles <= 0:
        return np.zeros(0, dtype=EVENT_DTYPE)

    # pair emissions
    if cfg.double_pairs:
        n_pairs = rng.poisson(cfg.pair_prob * n_cycles)
        pair_cycles = rng.integers(0, n_cycles, size=n_pairs)
    else:
        n_pairs = rng.binomial(n_cycles, cfg.pair_prob)
        pair_cycles = rng.choice(n_cycles, size=n_pairs, replace=False)
    _, alpha, beta = cfg.effective_phases
    probs = port_cell_probabilities(_state_for(cfg, rho), alpha, beta)
    flat = probs.ravel()
    outcome = rng.choice(flat.size, size=n_pairs, p=flat / flat.sum())
    port_a, port_b, slot_a, slot_b = np.unravel_index(outcome, probs.shape)
    qa, qb = _photon_survival(cfg)
    det_a = (port_a == 0) & (rng.random(n_pairs) < qa)
    det_b = (port_b == 0) & (rng.random(n_pairs) < qb)

    t0 = _trigger_times_ps(pair_cycles, cfg.rep_rate)
    offset_ps = cfg.trigger_offset * 1e12
    delay_ps = cfg.bin_delay * 1e12
    sigma_ps = cfg.jitter_sigma * 1e12
    total_ps = int(round(cfg.integration_time * 1e12))

    def photon_times(mask, slots):
        base = t0[mask] + offset_ps + slots[mask] * delay_ps
        return np.rint(base + rng.normal(0.0, sigma_ps, size=base.size)).astype(np.int64)

    channels = {}
    for ch, mask, slots in ((Channel.ALICE, det_a, slot_a), (Channel.BOB, det_b, slot_b)):
        t = photon_times(mask, slots)
        n_bg = rng.poisson(cfg.background_rate * cfg.integration_time)
        bg = rng.integers(0, max(total_ps, 1), size=n_bg, dtype=np.int64)
        t = np.sort(np.concatenate([t, bg]))
        t = t[t >= 0]
        channels[ch] = t

    if cfg.trigger_mode == "conditional":
        photons = np.concatenate([channels[Channel.ALICE], channels[Channel.BOB]])
        trig_cycles = np.unique(_cycle_of(photons, cfg.rep_rate))
        trig_cycles = trig_cycles[trig_cycles < n_cycles]
    else:
        trig_cycles = np.arange(0, n_cycles, cfg.trigger_decimation, dtype=np.int64)
    channels[Channel.TRIGGER] = _trigger_times_ps(trig_cycles, cfg.rep_rate)

    dead_ps = int(round(cfg.dead_time * 1e12))
    parts = []
    for ch in Channel:
        t = channels[ch]
        t = t[dead_time_filter(t, dead_ps)]
        rec = np.empty(t.size, dtype=EVENT_DTYPE)
        rec["channel"] = int(ch)
        rec["timestamp"] = t.astype(np.uint64)
        parts.append(rec)
    events = np.concatenate(parts)
    order = np.lexsort((events["channel"], events["timestamp"]))
    return events[order]


# --- Stream files ----------------------------------------------------------

STREAM_MAGIC = b"TBTAGS\x00\x00"
STREAM_VERSION = 1
_HEADER = struct.Struct("<8sII")  # magic, version, reserved


def write_stream(events: np.ndarray, path, fmt: str = "binary") -> None:
    """Write events as little-endian binary records or as ``channel,timestamp_ps`` CSV."""
    events = np.asarray(events, dtype=EVENT_DTYPE)
    path = Path(path)
    if fmt == "binary":
        with path.open("wb") as fh:
            fh.write(_HEADER.pack(STREAM_MAGIC, STREAM_VERSION, 0))
            fh.write(events.tobytes())
    elif fmt == "csv":
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["channel", "timestamp_ps"])
            w.writerows(zip(events["channel"].tolist(), events["timestamp"].tolist()))
    else:
        raise ValueError(f"unknown stream format {fmt!r}")


def read_stream(path) -> np.ndarray:
    """Read a stream file written by :func:`write_stream` (format auto-detected)."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] == STREAM_MAGIC:
        if len(raw) < _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        _, version, _ = _HEADER.unpack_from(raw)
        if version != STREAM_VERSION:
            raise ValueError(f"{path}: unsupported stream version {version}")
        body = raw[_HEADER.size :]
        if len(body) % EVENT_DTYPE.itemsize:
            raise ValueError(f"{path}: truncated record")
        return np.frombuffer(body, dtype=EVENT_DTYPE).copy()
    lines = raw.decode().splitlines()
    if not lines or lines[0].strip() != "channel,timestamp_ps":
        raise ValueError(f"{path}: not a time-tag stream file")
    rows = [ln.split(",") for ln in lines[1:] if ln.strip()]
    events = np.empty(len(rows), dtype=EVENT_DTYPE)
    try:
        events["channel"] = [int(r[0]) for r in rows]
        events["timestamp"] = [int(r[1]) for r in rows]
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: malformed CSV record") from exc
    return events


# --- Fringe scans ----------------------------------------------------------


@dataclass
class FringeResult:
    phases: np.ndarray
    rates: np.ndarray
    visibility: float
    visibility_err: float
    amplitude: float
    phase_offset: float


def fit_fringe(phases, values, sigma=None) -> FringeResult:
    """Least-squares fit of ``A (1 + V cos(phi - phi0))``.

    Solved linearly as ``a + b cos(phi) + c sin(phi)``; the standard error of
    V follows from the parameter covariance by first-order propagation.  With
    ``sigma`` the fit is weighted and the covariance taken as is, otherwise it
    is scaled by the residual variance.
    """
    phi = np.asarray(phases, dtype=float)
    y = np.asarray(values, dtype=float)
    if phi.size < 5:
        raise ValueError("need at least 5 phase points")
    if np.ptp(phi) < 2 * np.pi - 1e-9:
        raise ValueError("phase points must span at least 2 pi")
    design = np.column_stack([np.ones_like(phi), np.cos(phi), np.sin(phi)])
    w = np.ones_like(y) if sigma is None else 1.0 / np.asarray(sigma, dtype=float)
    dw = design * w[:, None]
    coef, _, rank, _ = np.linalg.lstsq(dw, y * w, rcond=None)
    a, b, c = coef
    if rank < 3 or a <= 0:
        raise ValueError("degenerate fringe data")
    cov = np.linalg.inv(dw.T @ dw)
    if sigma is None:
        dof = phi.size - 3
        resid = y - design @ coef
        cov = cov * (resid @ resid / dof if dof > 0 else 0.0)
    amp = math.hypot(b, c)
    vis = amp / a
    if amp > 0:
        grad = np.array([-amp / a**2, b / (amp * a), c / (amp * a)])
    else:
        grad = np.array([0.0, 1.0 / a, 1.0 / a])
    err = float(np.sqrt(max(grad @ cov @ grad, 0.0)))
    return FringeResult(phi, y, float(vis), err, float(a), float(math.atan2(c, b)))


def fringe_scan(cfg: ExperimentConfig, phases, mode: str = "analytic", arm: str = "alice",
                rho=None, cell_halfwidth: float = 0.5e-9) -> FringeResult:
    """Central-cell interference fringe while scanning one analysis phase.

    ``mode="analytic"`` uses :func:`expected_cell_rates`; ``mode="sampled"``
    simulates a stream per phase point (seed ``rng_seed + index``) and
    histograms it, returning counts instead of rates.
    """
    if arm not in ("alice", "bob"):
        raise ValueError("arm must be 'alice' or 'bob'")
    phases = np.asarray(phases, dtype=float)
    key = f"{arm}_phase"
    values = []
    for i, ph in enumerate(phases):
        c = cfg.replace(**{key: float(ph)})
        if mode == "analytic":
            values.append(expected_cell_rates(c, rho)[1, 1])
        elif mode == "sampled":
            from .coincidence import build_histogram, extract_peaks

            c = c.replace(rng_seed=cfg.rng_seed + i)
            events = simulate_stream(c, rho)
            hist = build_histogram(events, window=c.trigger_offset + 3 * c.bin_delay)
            peaks = extract_peaks(hist, c.bin_delay, cell_halfwidth, t_first=c.trigger_offset)
            values.append(peaks.cell(0, 0))
        else:
            raise ValueError(f"unknown mode {mode!r}")
    values = np.asarray(values, dtype=float)
    if mode == "sampled":
        return fit_fringe(phases, values, sigma=np.sqrt(np.maximum(values, 1.0)))
    return fit_fringe(phases, values)
