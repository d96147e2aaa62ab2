"""Waveguide mode overlap, facet-displacement loss maps and scalar loss budgets.

Lengths are in micrometers, losses and transmissions in dB, wavelengths in nm.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import brentq, least_squares, minimize

__all__ = [
    "ModeField",
    "Gaussian",
    "TwoLobe",
    "loss_db",
    "overlap",
    "ScanResult",
    "scan_displacement",
    "gaussian_overlap_analytic",
    "calibrate_two_lobe",
    "load_brw_mode",
    "polyboard_mode",
    "SpectrumComparison",
    "read_spectrum_csv",
    "per_from_spectra",
    "suppression_from_spectra",
    "LossBudget",
    "RateBudget",
    "rate_budget",
]



def loss_db(eta: float) -> float:
    """Coupling loss -10 log10(eta); infinite for eta = 0."""
    if eta <= 0:
        return math.inf
    return -10.0 * math.log10(eta) + 0.0


# --- Fields and models ----------------------------------------------------


def _trapz_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    if n > 1:
        w[0] = w[-1] = 0.5
    return w


@dataclass
class ModeField:
    """Sampled complex field on a regular grid centered at the origin.

    ``amplitudes[iy, ix]`` is the field at ``(x[ix], y[iy])``.
    """

    amplitudes: np.ndarray
    dx: float
    dy: float

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.ndim != 2:
            raise ValueError("amplitudes must be a 2D grid")
        if self.power() <= 0:
            raise ValueError("field has zero power")

    @property
    def shape(self):
        return self.amplitudes.shape

    @property
    def x(self) -> np.ndarray:
        n = self.shape[1]
        return (np.arange(n) - (n - 1) / 2) * self.dx

    @property
    def y(self) -> np.ndarray:
        n = self.shape[0]
        return (np.arange(n) - (n - 1) / 2) * self.dy

    @property
    def extent(self) -> tuple[float, float]:
        return ((self.shape[1] - 1) * self.dx, (self.shape[0] - 1) * self.dy)

    def power(self) -> float:
        w = np.outer(_trapz_weights(self.shape[0]), _trapz_weights(self.shape[1]))
        return float(np.sum(w * np.abs(self.amplitudes) ** 2) * self.dx * self.dy)

    def width(self) -> float:
        """Smaller of the two 1/e^2 intensity radii (twice the rms width of |E|^2)."""
        inten = np.abs(self.amplitudes) ** 2
        tot = inten.sum()
        x, y = self.x, self.y
        cx = np.sum(inten.sum(axis=0) * x) / tot
        cy = np.sum(inten.sum(axis=1) * y) / tot
        sx = np.sqrt(np.sum(inten.sum(axis=0) * (x - cx) ** 2) / tot)
        sy = np.sqrt(np.sum(inten.sum(axis=1) * (y - cy) ** 2) / tot)
        return float(2 * min(sx, sy))

    def __call__(self, xx, yy) -> np.ndarray:
        pts = np.stack([np.ravel(yy), np.ravel(xx)], axis=-1)
        re = RegularGridInterpolator((self.y, self.x), self.amplitudes.real, bounds_error=False, fill_value=0.0)
        im = RegularGridInterpolator((self.y, self.x), self.amplitudes.imag, bounds_error=False, fill_value=0.0)
        return (re(pts) + 1j * im(pts)).reshape(np.shape(xx))

    def write_csv(self, path) -> None:
        """Header ``nx,ny,dx_um,dy_um``, then one ``re,im`` line per sample, row-major."""
        ny, nx = self.shape
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["nx", "ny", "dx_um", "dy_um"])
            w.writerow([nx, ny, repr(self.dx), repr(self.dy)])
            flat = self.amplitudes.ravel()
            w.writerows(zip(flat.real.tolist(), flat.imag.tolist()))

    @classmethod
    def read_csv(cls, path) -> "ModeField":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2 or [c.strip() for c in rows[0]] != ["nx", "ny", "dx_um", "dy_um"]:
            raise ValueError(f"{path}: not a mode-field CSV file")
        nx, ny = int(rows[1][0]), int(rows[1][1])
        dx, dy = float(rows[1][2]), float(rows[1][3])
        body = np.array(rows[2:], dtype=float)
        if body.shape != (nx * ny, 2):
            raise ValueError(f"{path}: expected {nx * ny} re,im pairs")
        return cls((body[:, 0] + 1j * body[:, 1]).reshape(ny, nx), dx, dy)


@dataclass(frozen=True)
class Gaussian:
    """Circular Gaussian mode with 1/e^2 intensity diameter ``d_1e2``."""

    d_1e2: float
    polarization: str = "TE"
    n_eff: float | None = None

    @property
    def w(self) -> float:
        return self.d_1e2 / 2

    def lobes(self):
        return [(1.0, 0.0, 0.0, self.w, self.w)]

    def __call__(self, xx, yy):
        return np.exp(-(xx**2 + yy**2) / self.w**2)

    def half_extent(self) -> float:
        return 4.0 * self.w

    def width(self) -> float:
        return self.w

    def to_field(self, step: float = 0.05, half_extent: float | None = None) -> ModeField:
        return _sample(self, step, half_extent)


@dataclass(frozen=True)
class TwoLobe:
    """Two vertically stacked elliptical Gaussian lobes (same sign).

    Lobe centers at ``y = +- separation / 2``; field 1/e radii ``wx`` and
    ``wy``; ``weights`` scale the upper and lower lobe amplitudes.
    """

    separation: float
    wx: float
    wy: float
    weights: tuple = (1.0, 1.0)
    polarization: str = "TE"
    n_eff: float | None = None

    def lobes(self):
        s = self.separation / 2
        return [(self.weights[0], 0.0, s, self.wx, self.wy), (self.weights[1], 0.0, -s, self.wx, self.wy)]

    def __call__(self, xx, yy):
        out = 0.0
        for a, x0, y0, wx, wy in self.lobes():
            out = out + a * np.exp(-((xx - x0) ** 2) / wx**2 - (yy - y0) ** 2 / wy**2)
        return out

    def half_extent(self) -> float:
        return max(4.0 * self.wx, self.separation / 2 + 4.0 * self.wy)

    def width(self) -> float:
        return self.to_field(step=min(self.wx, self.wy) / 10).width()

    def to_field(self, step: float = 0.05, half_extent: float | None = None) -> ModeField:
        return _sample(self, step, half_extent)


def _sample(model, step, half_extent) -> ModeField:
    h = model.half_extent() if half_extent is None else half_extent
    n = 2 * int(math.ceil(h / step)) + 1
    c = (np.arange(n) - (n - 1) / 2) * step
    xx, yy = np.meshgrid(c, c)
    return ModeField(model(xx, yy), step, step)


def polyboard_mode() -> Gaussian:
    """Near-Gaussian polymer waveguide mode, 3.9 um 1/e^2 diameter."""
    return Gaussian(3.9, n_eff=1.463)


def load_brw_mode(polarization: str = "TE") -> TwoLobe:
    """Calibrated two-lobe model of the Bragg-reflection waveguide mode."""
    doc = json.loads(resources.files("timebin.data").joinpath("brw_mode.json").read_text())
    p = doc["parameters"]
    return TwoLobe(p["separation"], p["wx"], p["wy"], tuple(p.get("weights", (1.0, 1.0))), polarization)


# --- Overlap ---------------------------------------------------------------


def _is_model(m) -> bool:
    return hasattr(m, "lobes") and callable(m)


def _grid_for(a, b, dx, dy, step):
    def spec(m):
        if _is_model(m):
            h = m.half_extent()
            return step, step, h, h
        ex, ey = m.extent
        return m.dx, m.dy, ex / 2, ey / 2

    sa, sb = spec(a), spec(b)
    hx_step = min(sa[0], sb[0])
    hy_step = min(sa[1], sb[1])
    hx = max(sa[2], sb[2]) + abs(dx) / 2
    hy = max(sa[3], sb[3]) + abs(dy) / 2
    nx = 2 * int(math.ceil(hx / hx_step)) + 1
    ny = 2 * int(math.ceil(hy / hy_step)) + 1
    x = (np.arange(nx) - (nx - 1) / 2) * hx_step
    y = (np.arange(ny) - (ny - 1) / 2) * hy_step
    return x, y, hx_step, hy_step


def overlap(a, b, dx: float = 0.0, dy: float = 0.0, step: float = 0.05) -> float:
    """Power coupling efficiency between two modes with ``b`` displaced by (dx, dy).

    ``eta = |int a*(x, y) b(x - dx, y - dy) dA|^2 / (int |a|^2 dA  int |b|^2 dA)``,
    evaluated by trapezoidal quadrature on a common grid.  ``a`` and ``b`` may
    be analytic models (evaluated exactly, grid spacing ``step``) or sampled
    :class:`ModeField` objects (bilinearly resampled, zero outside their grid).
    The shift is split symmetrically between the two fields, so
    ``overlap(a, b, d) == overlap(b, a, -d)``.
    """
    x, y, hx, hy = _grid_for(a, b, dx, dy, step)
    xx, yy = np.meshgrid(x, y)
    fa = a(xx + dx / 2, yy + dy / 2)
    fb = b(xx - dx / 2, yy - dy / 2)
    w = np.outer(_trapz_weights(y.size), _trapz_weights(x.size))
    num = abs(np.sum(w * np.conj(fa) * fb)) ** 2
    den = np.sum(w * np.abs(fa) ** 2) * np.sum(w * np.abs(fb) ** 2)
    if num <= 1e-300 * max(den, 1e-300) or den == 0:
        warnings.warn("mode supports do not overlap", RuntimeWarning, stacklevel=2)
        return 0.0
    return float(num / den)


def gaussian_overlap_analytic(a, b, dx: float = 0.0, dy: float = 0.0) -> float:
    """Closed-form overlap for models built from real Gaussian lobes."""

    def g1(w1, w2, mu):
        s = w1**2 + w2**2
        return math.sqrt(math.pi * w1**2 * w2**2 / s) * math.exp(-(mu**2) / s)

    def inner(la, lb, sx, sy):
        tot = 0.0
        for a1, x1, y1, wx1, wy1 in la:
            for a2, x2, y2, wx2, wy2 in lb:
                tot += a1 * a2 * g1(wx1, wx2, x2 + sx - x1) * g1(wy1, wy2, y2 + sy - y1)
        return tot

    la, lb = a.lobes(), b.lobes()
    return inner(la, lb, dx, dy) ** 2 / (inner(la, la, 0, 0) * inner(lb, lb, 0, 0))


# --- Displacement scans ---------------------------------------------------


@dataclass
class ScanResult:
    xs: np.ndarray
    ys: np.ndarray
    loss_map: np.ndarray  # [iy, ix], dB
    min_loss: float
    optimum: tuple
    half_widths: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "min_loss_db": self.min_loss,
            "optimum_um": list(self.optimum),
            "half_widths_um": self.half_widths,
            "xs_um": self.xs.tolist(),
            "ys_um": self.ys.tolist(),
            "loss_db": self.loss_map.tolist(),
        }

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y_um\\x_um"] + [repr(float(v)) for v in self.xs])
            for yv, row in zip(self.ys, self.loss_map):
                w.writerow([repr(float(yv))] + [repr(float(v)) for v in row])


def _axis_crossing(f, start: float, direction: float, target: float, limit: float) -> float:
    # distance along one direction where f reaches target (f(start) < target)
    s_hi = 0.05
    while f(start + direction * s_hi) < target:
        s_hi *= 1.5
        if s_hi > limit:
            return math.nan
    return brentq(lambda s: f(start + direction * s) - target, 0.0, s_hi, xtol=1e-6)


def _correlation_map(a, b, xs, ys, h):
    """eta on the (xs, ys) displacement grid via one FFT cross-correlation.

    Both fields are sampled once on a grid of spacing ``h`` (xs, ys are
    multiples of h) that is large enough to hold ``b`` at every shift.
    """
    from scipy.signal import fftconvolve

    def half(m):
        return m.half_extent() if _is_model(m) else max(m.extent) / 2

    hx = max(half(a), half(b)) + max(abs(xs[0]), abs(xs[-1]))
    hy = max(half(a), half(b)) + max(abs(ys[0]), abs(ys[-1]))
    nx, ny = int(math.ceil(hx / h)), int(math.ceil(hy / h))
    x = np.arange(-nx, nx + 1) * h
    y = np.arange(-ny, ny + 1) * h
    xx, yy = np.meshgrid(x, y)
    fa, fb = a(xx, yy), b(xx, yy)
    # corr[s] = sum_x conj(fa(x)) fb(x - s)
    corr = fftconvolve(np.conj(fa), fb[::-1, ::-1], mode="full")
    pa = np.sum(np.abs(fa) ** 2)
    pb = np.sum(np.abs(fb) ** 2)
    ix = np.rint(xs / h).astype(int) + 2 * nx
    iy = np.rint(ys / h).astype(int) + 2 * ny
    return np.abs(corr[np.ix_(iy, ix)]) ** 2 / (pa * pb)


def scan_displacement(a, b, x_range=(-3.0, 3.0), y_range=(-3.0, 3.0), step: float = 0.1,
                      grid_step: float = 0.05, levels=(1.0, 3.0)) -> ScanResult:
    """Coupling-loss map over facet displacements plus contour half-widths.

    The map (``loss_map[iy, ix]`` for ``b`` displaced by ``(xs[ix], ys[iy])``)
    comes from a single FFT cross-correlation.  Its optimum is then refined by
    a local minimization of :func:`overlap`, and the half-widths are the
    displacements along x and along y, measured from the optimum and averaged
    over both directions, at which the loss has grown by each of ``levels``.
    """
    if step > min(a.width(), b.width()) / 4:
        raise ValueError(f"scan step {step} exceeds a quarter of the smallest mode width")
    h = step / math.ceil(step / grid_step - 1e-9)
    xs = h * np.rint(np.arange(x_range[0], x_range[1] + step / 2, step) / h)
    ys = h * np.rint(np.arange(y_range[0], y_range[1] + step / 2, step) / h)
    eta = _correlation_map(a, b, xs, ys, h)
    with np.errstate(divide="ignore"):
        lmap = -10.0 * np.log10(eta)
    iy, ix = np.unravel_index(np.argmin(lmap), lmap.shape)

    def loss_at(dx, dy):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return loss_db(overlap(a, b, dx, dy, step=grid_step))

    res = minimize(lambda p: loss_at(p[0], p[1]), [xs[ix], ys[iy]], method="Nelder-Mead",
                   options={"xatol": 1e-4, "fatol": 1e-8})
    ox, oy, lmin = float(res.x[0]), float(res.x[1]), float(res.fun)
    if not lmin <= loss_at(xs[ix], ys[iy]):
        ox, oy, lmin = float(xs[ix]), float(ys[iy]), loss_at(xs[ix], ys[iy])
    limit = 4 * max(np.ptp(xs), np.ptp(ys), 1.0)
    halves = {}
    for lvl in levels:
        hx = [_axis_crossing(lambda s: loss_at(s, oy), ox, d, lmin + lvl, limit) for d in (1, -1)]
        hy = [_axis_crossing(lambda s: loss_at(ox, s), oy, d, lmin + lvl, limit) for d in (1, -1)]
        halves[f"+{lvl:g}dB"] = {"x": float(np.mean(hx)), "y": float(np.mean(hy))}
    return ScanResult(xs, ys, lmap, lmin, (ox, oy), halves)


def calibrate_two_lobe(target_eta: float = 0.55, tol_1db=(1.1, 0.7), tol_3db=(1.8, 1.3),
                       reference: Gaussian | None = None, x0=(3.0, 2.5, 1.0)) -> TwoLobe:
    """Fit a :class:`TwoLobe` mode to an on-axis overlap and displacement tolerances.

    Free parameters are the lobe separation and the two lobe radii; the
    targets are ``target_eta`` and the +1 dB / +3 dB half-widths (x, y)
    against ``reference`` (the polymer Gaussian by default).  Uses the
    closed-form Gaussian overlap so the fit is fast; check the result with
    :func:`scan_displacement`.
    """
    ref = reference or polyboard_mode()

    def model(p):
        sep, wx, wy = p
        return TwoLobe(abs(sep), abs(wx), abs(wy))

    def half_width(m, eta0, lvl, axis):
        def f(s):
            d = (s, 0.0) if axis == 0 else (0.0, s)
            return loss_db(gaussian_overlap_analytic(ref, m, *d)) - loss_db(eta0) - lvl

        hi = 0.1
        while f(hi) < 0:
            hi *= 1.5
            if hi > 50:
                return 50.0
        return brentq(f, 0.0, hi, xtol=1e-9)

    def resid(p):
        m = model(p)
        eta0 = gaussian_overlap_analytic(ref, m)
        r = [10 * (loss_db(eta0) - loss_db(target_eta))]
        for lvl, tol in ((1.0, tol_1db), (3.0, tol_3db)):
            for axis in (0, 1):
                r.append(half_width(m, eta0, lvl, axis) - tol[axis])
        return r

    fit = least_squares(resid, x0, bounds=([0.0, 0.3, 0.3], [10.0, 10.0, 10.0]))
    return model(fit.x)


# --- Spectra ---------------------------------------------------------------


@dataclass
class SpectrumComparison:
    wavelength: np.ndarray
    values: np.ndarray  # dB

    @property
    def minimum(self) -> float:
        return float(self.values.min())

    @property
    def maximum(self) -> float:
        return float(self.values.max())

    @property
    def argmax(self) -> float:
        return float(self.wavelength[np.argmax(self.values)])

    @property
    def argmin(self) -> float:
        return float(self.wavelength[np.argmin(self.values)])

    def band_minimum(self, lo: float, hi: float) -> float:
        sel = (self.wavelength >= lo) & (self.wavelength <= hi)
        if not sel.any():
            raise ValueError(f"no samples in band [{lo}, {hi}] nm")
        return float(self.values[sel].min())

    def to_json(self) -> dict:
        return {
            "wavelength_nm": self.wavelength.tolist(),
            "db": self.values.tolist(),
            "min_db": self.minimum,
            "max_db": self.maximum,
            "argmax_nm": self.argmax,
        }


def read_spectrum_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Two-column CSV (wavelength_nm, transmission_dB); a header line is optional."""
    rows = []
    with Path(path).open(newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except ValueError:
                if rows:
                    raise ValueError(f"{path}: malformed row {row}") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    arr = np.array(rows)
    order = np.argsort(arr[:, 0])
    return arr[order, 0], arr[order, 1]


def _common_grid(s1, s2):
    l1, v1 = (np.asarray(s, dtype=float) for s in s1)
    l2, v2 = (np.asarray(s, dtype=float) for s in s2)
    o1, o2 = np.argsort(l1), np.argsort(l2)
    l1, v1, l2, v2 = l1[o1], v1[o1], l2[o2], v2[o2]
    lo, hi = max(l1[0], l2[0]), min(l1[-1], l2[-1])
    if lo > hi:
        raise ValueError("wavelength ranges are disjoint")
    grid = np.union1d(l1[(l1 >= lo) & (l1 <= hi)], l2[(l2 >= lo) & (l2 <= hi)])
    return grid, np.interp(grid, l1, v1), np.interp(grid, l2, v2)


def per_from_spectra(favored, orthogonal) -> SpectrumComparison:
    """Polarization extinction ratio: favored minus orthogonal transmission (dB)."""
    grid, f, o = _common_grid(favored, orthogonal)
    return SpectrumComparison(grid, f - o)


def suppression_from_spectra(reference, filtered) -> SpectrumComparison:
    """Filter suppression: reference minus filtered transmission (dB)."""
    grid, r, f = _common_grid(reference, filtered)
    return SpectrumComparison(grid, r - f)


# --- Budgets ---------------------------------------------------------------


@dataclass
class LossBudget:
    """Named losses (dB) per optical path, e.g. ``{"TE": [("filter", 0.9), ...]}``."""

    paths: dict

    def total(self, path: str) -> float:
        return float(sum(db for _, db in self.paths[path]))

    def transmission(self, path: str) -> float:
        return 10 ** (-self.total(path) / 10)

    def to_json(self) -> dict:
        return {
            "paths": {p: [{"name": n, "loss_db": db} for n, db in e] for p, e in self.paths.items()},
            "totals_db": {p: self.total(p) for p in self.paths},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "LossBudget":
        paths = doc.get("paths", doc)
        return cls({p: [(e["name"], float(e["loss_db"])) for e in entries] for p, entries in paths.items()})


@dataclass
class RateBudget:
    measured: float
    corrected: float
    source: float
    predicted: float
    transmissions: tuple

    def to_json(self) -> dict:
        return asdict(self)


def rate_budget(measured_rate: float, transmissions=(1.0, 1.0), losses: LossBudget | None = None,
                paths=("TE", "TM"), det_efficiency=(1.0, 1.0)) -> RateBudget:
    """Coincidence rate corrected for the two analysis interferometers, and back.

    ``corrected = measured / (T_A T_B)``.  With a loss budget and detector
    efficiencies, ``source`` additionally removes the per-photon path losses,
    and ``predicted`` multiplies all efficiencies back onto ``source`` (which
    reproduces ``measured``).
    """
    ta, tb = transmissions
    if ta <= 0 or tb <= 0:
        raise ValueError("transmissions must be positive")
    if ta > 1 or tb > 1:
        raise ValueError("transmissions cannot exceed 1")
    corrected = measured_rate / (ta * tb)
    eff = det_efficiency[0] * det_efficiency[1]
    if losses is not None:
        eff *= losses.transmission(paths[0]) * losses.transmission(paths[1])
    if eff <= 0:
        raise ValueError("zero overall efficiency")
    source = corrected / eff
    predicted = source * eff * ta * tb
    return RateBudget(measured_rate, corrected, source, predicted, (ta, tb))
