"""Triple-coincidence histograms, cell/peak extraction and projection records."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .qcore import matrix_from_json, two_photon_ket
from .simulator import EVENT_DTYPE, Channel

__all__ = [
    "CoincidenceHistogram2D",
    "PeakCounts",
    "ProjectionRecord",
    "SETTINGS",
    "build_histogram",
    "extract_peaks",
    "locate_first_slot",
    "assemble_projections",
    "cell_label",
    "synthetic_histogram",
    "background_estimate",
    "records_to_json",
    "records_from_json",
]

SETTINGS = ("++", "+L", "L+", "LL")
SLOTS = (-1, 0, 1)
# relative detection weight of a time slot: the outer slots see one path, t_0 two
_SLOT_WEIGHT = {-1: 0.5, 0: 1.0, 1: 0.5}


@dataclass
class CoincidenceHistogram2D:
    """Counts on a (t_A, t_B) grid relative to the trigger.

    ``counts[i, j]`` covers ``t_A`` in ``origin + [i, i+1) * bin_width`` and
    likewise ``t_B`` with ``j``.  Times in seconds.
    """

    bin_width: float
    origin: float
    counts: np.ndarray
    integration_time: float = 0.0

    @property
    def centers(self) -> np.ndarray:
        n = self.counts.shape[0]
        return self.origin + (np.arange(n) + 0.5) * self.bin_width

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "CoincidenceHistogram2D") -> "CoincidenceHistogram2D":
        if (other.bin_width, other.origin, other.counts.shape) != (self.bin_width, self.origin, self.counts.shape):
            raise ValueError("histograms have different grids")
        return CoincidenceHistogram2D(
            self.bin_width, self.origin, self.counts + other.counts, self.integration_time + other.integration_time
        )

    def to_json(self) -> dict:
        return {
            "bin_width_ps": self.bin_width * 1e12,
            "origin_ps": self.origin * 1e12,
            "integration_time": self.integration_time,
            "counts": self.counts.tolist(),
        }

    def write_csv(self, path) -> None:
        nx, ny = self.counts.shape
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_width_ps", "origin_ps", "nx", "ny"])
            w.writerow([_fmt(self.bin_width * 1e12), _fmt(self.origin * 1e12), nx, ny])
            w.writerows(self.counts.tolist())

    @classmethod
    def read_csv(cls, path) -> "CoincidenceHistogram2D":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2 or rows[0] != ["bin_width_ps", "origin_ps", "nx", "ny"]:
            raise ValueError(f"{path}: not a histogram CSV file")
        bw, origin, nx, ny = rows[1]
        nx, ny = int(nx), int(ny)
        body = rows[2:]
        if len(body) != nx or any(len(r) != ny for r in body):
            raise ValueError(f"{path}: expected {nx} rows of {ny} counts")
        counts = np.array(body, dtype=np.int64)
        return cls(float(bw) * 1e-12, float(origin) * 1e-12, counts)


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def _channel_times(events, ch: Channel) -> np.ndarray:
    t = events["timestamp"][events["channel"] == int(ch)].astype(np.int64)
    if t.size > 1 and np.any(np.diff(t) < 0):
        raise ValueError(f"unordered stream: {ch.name} timestamps decrease")
    return t


def _first_after(trig: np.ndarray, t: np.ndarray, window_ps: int):
    idx = np.searchsorted(t, trig, side="left")
    ok = idx < t.size
    dt = np.full(trig.size, -1, dtype=np.int64)
    dt[ok] = t[idx[ok]] - trig[ok]
    ok &= dt < window_ps
    return ok, dt


def build_histogram(events, bin_width: float = 200e-12, window: float = 11e-9,
                    integration_time: float | None = None) -> CoincidenceHistogram2D:
    """Histogram trigger-referenced (t_A, t_B) of triple coincidences.

    For every trigger the first Alice event and the first Bob event at or
    after it and within ``window`` form a triple.  A later event in the same
    window only enters the histogram through a later trigger.
    """
    events = np.asarray(events)
    if events.dtype != EVENT_DTYPE:
        events = events.astype(EVENT_DTYPE)
    bw_ps = bin_width * 1e12
    window_ps = int(round(window * 1e12))
    nbins = int(math.ceil(window_ps / bw_ps))
    counts = np.zeros((nbins, nbins), dtype=np.int64)
    if integration_time is None:
        integration_time = 0.0
        if events.size:
            integration_time = float(events["timestamp"].max() - events["timestamp"].min()) * 1e-12
    hist = CoincidenceHistogram2D(bin_width, 0.0, counts, integration_time)
    if events.size == 0:
        return hist
    trig = _channel_times(events, Channel.TRIGGER)
    ta = _channel_times(events, Channel.ALICE)
    tb = _channel_times(events, Channel.BOB)
    if trig.size == 0:
        return hist
    ok_a, da = _first_after(trig, ta, window_ps)
    ok_b, db = _first_after(trig, tb, window_ps)
    ok = ok_a & ok_b
    ia = np.floor(da[ok] / bw_ps).astype(np.int64)
    ib = np.floor(db[ok] / bw_ps).astype(np.int64)
    np.add.at(counts, (ia, ib), 1)
    return hist


@dataclass
class PeakCounts:
    """Counts in the nine (slot_A, slot_B) cells; ``cells[a + 1, b + 1]``."""

    cells: np.ndarray

    def cell(self, a: int, b: int) -> int:
        return int(self.cells[a + 1, b + 1])

    @property
    def peaks(self) -> tuple[int, ...]:
        """Antidiagonal sums, peak 1 (both early) through peak 5 (both late)."""
        return tuple(
            int(sum(self.cells[a + 1, b + 1] for a in SLOTS for b in SLOTS if a + b == k - 3))
            for k in range(1, 6)
        )

    def peak(self, k: int) -> int:
        return self.peaks[k - 1]


def _window_sum_profile(marginal: np.ndarray, centers: np.ndarray, delay: float, hw: float,
                        bw: float) -> float:
    """Matched filter of three windows on a marginal, refined by the centroid."""
    tol = hw + 1e-6 * bw

    def windows(c):
        return [np.abs(centers - (c + k * delay)) <= tol for k in range(3)]

    best, best_score = centers[0], -1.0
    for c in centers:
        score = sum(marginal[sel].sum() for sel in windows(c))
        if score > best_score:
            best, best_score = c, score
    # the score is flat while the windows slide over empty bins; the centroid
    # of the captured counts, folded back onto slot -1, sits on the peaks
    num = den = 0.0
    for k, sel in enumerate(windows(best)):
        num += np.sum(marginal[sel] * (centers[sel] - k * delay))
        den += marginal[sel].sum()
    return float(num / den) if den > 0 else float(best)


def locate_first_slot(h: CoincidenceHistogram2D, bin_delay: float,
                      cell_halfwidth: float = 0.5e-9) -> tuple[float, float]:
    """Estimate the t_-1 position on each axis by matching three windows to the marginals."""
    centers = h.centers
    return (
        _window_sum_profile(h.counts.sum(axis=1), centers, bin_delay, cell_halfwidth, h.bin_width),
        _window_sum_profile(h.counts.sum(axis=0), centers, bin_delay, cell_halfwidth, h.bin_width),
    )


def extract_peaks(h: CoincidenceHistogram2D, bin_delay: float, cell_halfwidth: float = 0.5e-9,
                  t_first=None) -> PeakCounts:
    """Sum counts in square windows around the nine cell centers.

    Cell centers sit at ``t_first + {0, 1, 2} * bin_delay`` on each axis;
    ``t_first`` is a scalar, an (Alice, Bob) pair, or ``None`` to locate it
    from the data.
    """
    if bin_delay / h.bin_width < 5:
        raise ValueError("bin_delay must span at least 5 histogram bins")
    if cell_halfwidth >= bin_delay / 2:
        raise ValueError("cell windows overlap: cell_halfwidth must be below bin_delay / 2")
    if t_first is None:
        if h.total == 0:
            return PeakCounts(np.zeros((3, 3), dtype=np.int64))
        t_first = locate_first_slot(h, bin_delay, cell_halfwidth)
    ta0, tb0 = (t_first, t_first) if np.isscalar(t_first) else t_first
    centers = h.centers
    tol = cell_halfwidth + 1e-6 * h.bin_width
    cells = np.zeros((3, 3), dtype=np.int64)
    for a in SLOTS:
        sa = np.abs(centers - (ta0 + (a + 1) * bin_delay)) <= tol
        for b in SLOTS:
            sb = np.abs(centers - (tb0 + (b + 1) * bin_delay)) <= tol
            cells[a + 1, b + 1] = h.counts[np.ix_(sa, sb)].sum()
    return PeakCounts(cells)


def background_estimate(h: CoincidenceHistogram2D, bin_delay: float, cell_halfwidth: float = 0.5e-9,
                        t_first=None) -> float:
    """Mean accidental counts per cell window, from bins outside every cell.

    Diagnostic only; nothing downstream subtracts it.
    """
    if t_first is None:
        t_first = locate_first_slot(h, bin_delay, cell_halfwidth)
    ta0, tb0 = (t_first, t_first) if np.isscalar(t_first) else t_first
    c = h.centers
    tol = cell_halfwidth + 1e-6 * h.bin_width
    in_a = np.zeros(c.size, dtype=bool)
    in_b = np.zeros(c.size, dtype=bool)
    for k in range(3):
        in_a |= np.abs(c - (ta0 + k * bin_delay)) <= tol
        in_b |= np.abs(c - (tb0 + k * bin_delay)) <= tol
    off = ~in_a[:, None] & ~in_b[None, :]
    if not off.any():
        return 0.0
    per_bin = h.counts[off].mean()
    per_axis = int(np.sum(np.abs(c - c[c.size // 2]) <= tol))
    return float(per_bin * per_axis**2)


def synthetic_histogram(cells, bin_delay: float = 3e-9, bin_width: float = 200e-12,
                        t_first: float = 2e-9, window: float | None = None) -> CoincidenceHistogram2D:
    """Histogram with each cell's counts placed in the bin holding the cell center."""
    cells = np.asarray(cells)
    if window is None:
        window = t_first + 3 * bin_delay
    n = int(math.ceil(window / bin_width - 1e-9))
    counts = np.zeros((n, n), dtype=np.int64)
    for a in SLOTS:
        ia = int((t_first + (a + 1) * bin_delay) // bin_width)
        for b in SLOTS:
            ib = int((t_first + (b + 1) * bin_delay) // bin_width)
            counts[ia, ib] += cells[a + 1, b + 1]
    return CoincidenceHistogram2D(bin_width, 0.0, counts)


# --- Projection records ----------------------------------------------------


@dataclass
class ProjectionRecord:
    """One projective measurement: ket, raw count and where it came from.

    ``weight`` is the relative detection efficiency of the cell (1 for the
    central cell, 1/2 for side cells, 1/4 for corner cells).
    """

    label: str
    projector: np.ndarray
    count: int
    weight: float
    setting: str = ""
    peak: int = 0
    cell: tuple = (0, 0)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "projector": {"re": np.real(self.projector).tolist(), "im": np.imag(self.projector).tolist()},
            "count": int(self.count),
            "weight": self.weight,
            "setting": self.setting,
            "source": {"peak": self.peak, "cell": list(self.cell)},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ProjectionRecord":
        vec = matrix_from_json({"re": [doc["projector"]["re"]], "im": [doc["projector"]["im"]]})[0]
        if vec.shape != (4,):
            raise ValueError("projector must have 4 amplitudes")
        count = int(doc["count"])
        if count < 0:
            raise ValueError("negative count")
        src = doc.get("source", {})
        return cls(doc.get("label", ""), vec / np.linalg.norm(vec), count, float(doc.get("weight", 1.0)),
                   doc.get("setting", ""), int(src.get("peak", 0)), tuple(src.get("cell", (0, 0))))


def records_to_json(records) -> list:
    return [r.to_json() for r in records]


def records_from_json(doc) -> list:
    return [ProjectionRecord.from_json(d) for d in doc]


def cell_label(setting: str, a: int, b: int) -> str:
    """Two-photon label of cell (a, b) for a setting: slot -1 is 1, +1 is 2, 0 the setting ket."""
    names = {-1: "1", 1: "2"}
    return names.get(a, setting[0]) + names.get(b, setting[1])


def assemble_projections(peaks_by_setting: dict, include_forbidden: bool = True) -> list:
    """Projection records from the cell counts of the four measurement settings.

    Each setting contributes its seven populated cells.  With
    ``include_forbidden`` the two cells (-1, +1) and (+1, -1), which project
    onto |12> and |21>, are added as well; the source never populates them,
    but their (zero) counts complete an informationally complete set of 16
    distinct projectors.  Repeated projectors (|11>, |22>, side cells) are kept
    as separate records.
    """
    missing = [s for s in SETTINGS if s not in peaks_by_setting]
    if missing:
        raise ValueError(f"missing setting(s): {', '.join(missing)}")
    extra = set(peaks_by_setting) - set(SETTINGS)
    if extra:
        raise ValueError(f"unknown setting(s): {', '.join(sorted(extra))}")
    records = []
    for setting in SETTINGS:
        pk = peaks_by_setting[setting]
        cells = np.asarray(pk.cells if isinstance(pk, PeakCounts) else pk)
        if np.any(cells < 0):
            raise ValueError(f"negative counts for setting {setting}")
        for a in SLOTS:
            for b in SLOTS:
                forbidden = a * b == -1
                if forbidden and not include_forbidden:
                    continue
                label = cell_label(setting, a, b)
                records.append(
                    ProjectionRecord(
                        label=label,
                        projector=two_photon_ket(label),
                        count=int(cells[a + 1, b + 1]),
                        weight=_SLOT_WEIGHT[a] * _SLOT_WEIGHT[b],
                        setting=setting,
                        peak=a + b + 3,
                        cell=(a, b),
                    )
                )
    return records

