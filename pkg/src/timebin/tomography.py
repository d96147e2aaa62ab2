"""Two-qubit density-matrix reconstruction from projection records.

Linear inversion, maximum-likelihood estimation over a lower-triangular
(Cholesky-style) parametrization ``rho = T^dagger T / tr(T^dagger T)``, and
Poisson Monte Carlo resampling for asymmetric uncertainty intervals.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .metrics import METRIC_NAMES, MetricsReport, compute_metrics
from .qcore import (
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    DensityMatrix,
    eig_hermitian,
    matrix_to_json,
    nearest_physical,
)

__all__ = [
    "RankDeficiencyWarning",
    "MLEParams",
    "MLEOptions",
    "OptimizerReport",
    "MLEResult",
    "MonteCarloResult",
    "TomographyResult",
    "linear_reconstruct",
    "mle_cost",
    "mle_reconstruct",
    "monte_carlo",
    "run_tomography",
]


class RankDeficiencyWarning(UserWarning):
    pass


_TRIL = [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)]
_PAULI4 = (np.eye(2, dtype=complex), SIGMA_X, SIGMA_Y, SIGMA_Z)
_HERMITIAN_BASIS = np.array([np.kron(a, b) / 2.0 for a in _PAULI4 for b in _PAULI4])


def _arrays(records):
    """(kets, weights, counts) from ProjectionRecords or a (kets, weights, counts) tuple."""
    if isinstance(records, tuple) and len(records) == 3:
        kets, w, n = records
    else:
        records = list(records)
        kets = [r.projector for r in records]
        w = [r.weight for r in records]
        n = [r.count for r in records]
    kets = np.asarray(kets, dtype=complex).reshape(-1, 4)
    w = np.asarray(w, dtype=float)
    n = np.asarray(n, dtype=float)
    if np.any(n < 0):
        raise ValueError("negative counts")
    return kets, w, n


# --- Linear inversion ------------------------------------------------------


def linear_reconstruct(records, rcond: float = 1e-10) -> np.ndarray:
    """Least-squares solution of ``n_v = N w_v <psi_v|rho|psi_v>``.

    Solves for the unnormalized ``N rho`` in the Pauli basis, symmetrizes, and
    divides by the trace.  The result is Hermitian with unit trace but not
    necessarily positive.  Emits :class:`RankDeficiencyWarning` (and returns
    the minimum-norm solution) when the projectors do not span all 16
    operator directions; all-zero counts give the zero matrix.
    """
    kets, w, n = _arrays(records)
    # A[v, k] = w_v <psi_v| G_k |psi_v>
    a = w[:, None] * np.real(np.einsum("vi,kij,vj->vk", kets.conj(), _HERMITIAN_BASIS, kets))
    coef, _, rank, _ = np.linalg.lstsq(a, n, rcond=rcond)
    if rank < 16:
        warnings.warn(f"projector set has rank {rank} < 16; returning minimum-norm solution",
                      RankDeficiencyWarning, stacklevel=2)
    x = np.einsum("k,kij->ij", coef, _HERMITIAN_BASIS)
    x = 0.5 * (x + x.conj().T)
    tr = np.real(np.trace(x))
    if not np.any(n) or abs(tr) < 1e-300:
        if np.any(n):
            warnings.warn("linear estimate has zero trace", RankDeficiencyWarning, stacklevel=2)
        else:
            warnings.warn("all counts are zero", RankDeficiencyWarning, stacklevel=2)
        return np.zeros((4, 4), dtype=complex)
    return x / tr


# --- Parametrization -------------------------------------------------------


@dataclass
class MLEParams:
    """16 reals: the real diagonal of T, then (re, im) of the six entries below it."""

    t: np.ndarray

    @property
    def T(self) -> np.ndarray:
        return params_to_t(self.t)

    @property
    def rho(self) -> np.ndarray:
        tm = self.T
        m = tm.conj().T @ tm
        return m / np.real(np.trace(m))

    @property
    def scale(self) -> float:
        """Overall count scale N = tr(T^dagger T)."""
        return float(np.sum(np.abs(self.T) ** 2))

    @classmethod
    def from_rho(cls, rho, scale: float = 1.0, floor: float = 1e-6) -> "MLEParams":
        """Parameters reproducing ``scale * rho`` (regularized by ``floor * I`` if singular)."""
        m = np.asarray(rho.m if isinstance(rho, DensityMatrix) else rho, dtype=complex)
        m = 0.5 * (m + m.conj().T)
        m = (1 - floor) * m + floor * np.eye(4) / 4
        j = np.eye(4)[::-1]
        low = np.linalg.cholesky(j @ m @ j)
        tm = (j @ low @ j).conj().T
        return cls(t_to_params(tm * np.sqrt(scale)))


def params_to_t(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    tm = np.zeros((4, 4), dtype=complex)
    tm[np.diag_indices(4)] = t[:4]
    for k, (i, j) in enumerate(_TRIL):
        tm[i, j] = t[4 + 2 * k] + 1j * t[5 + 2 * k]
    return tm


def t_to_params(tm) -> np.ndarray:
    t = np.empty(16)
    t[:4] = np.real(np.diag(tm))
    for k, (i, j) in enumerate(_TRIL):
        t[4 + 2 * k] = tm[i, j].real
        t[5 + 2 * k] = tm[i, j].imag
    return t


def _grad_to_params(g: np.ndarray) -> np.ndarray:
    out = np.empty(16)
    out[:4] = np.real(np.diag(g))
    for k, (i, j) in enumerate(_TRIL):
        out[4 + 2 * k] = g[i, j].real
        out[5 + 2 * k] = g[i, j].imag
    return out


# --- Cost ------------------------------------------------------------------


def mle_cost(t, kets, w, n, kind: str = "gaussian", eps: float = 0.5, grad: bool = False):
    """Cost of parameters ``t`` against counts ``n``; optionally with its gradient.

    The expected count of record ``v`` is ``mu_v = w_v ||T psi_v||^2``, which
    equals ``N w_v <psi_v|rho|psi_v>`` with ``N = tr(T^dagger T)``.

    ``kind="gaussian"``: ``sum (mu - n)^2 / (2 max(mu, eps))``.
    ``kind="poisson"``: negative Poisson log-likelihood ``sum mu - n log mu``
    (``mu`` floored at ``eps``), up to a constant.
    """
    tm = params_to_t(t)
    tpsi = kets @ tm.T
    mu = w * np.sum(np.abs(tpsi) ** 2, axis=1)
    if kind == "gaussian":
        den = np.maximum(mu, eps)
        cost = float(np.sum((mu - n) ** 2 / (2 * den)))
        if not grad:
            return cost
        dmu = np.where(mu > eps, (mu**2 - n**2) / (2 * den**2), (mu - n) / eps)
    elif kind == "poisson":
        mf = np.maximum(mu, eps)
        cost = float(np.sum(mf - n * np.log(mf)))
        if not grad:
            return cost
        dmu = np.where(mu > eps, 1.0 - n / mf, 0.0)
    else:
        raise ValueError(f"unknown cost kind {kind!r}")
    g = 2.0 * np.einsum("v,vi,vj->ij", dmu * w, tpsi, kets.conj())
    return cost, _grad_to_params(g)


# --- MLE -------------------------------------------------------------------


@dataclass
class MLEOptions:
    cost: str = "gaussian"
    eps: float = 0.5
    n_random_starts: int = 2
    seed: int = 0
    max_iter: int = 5000
    ftol: float = 1e-10
    chsh_settings: str = "equatorial"


@dataclass
class OptimizerReport:
    iterations: int
    final_cost: float
    converged: bool
    starts: int = 1
    message: str = ""

    def to_json(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_cost": self.final_cost,
            "converged": self.converged,
            "starts": self.starts,
            "message": self.message,
        }


@dataclass
class MLEResult:
    rho: DensityMatrix
    params: MLEParams
    report: OptimizerReport

    @property
    def scale(self) -> float:
        return self.params.scale


def _initial_points(kets, w, n, opts: MLEOptions, rng) -> list:
    total = n.sum()

    def scaled(rho):
        pred = np.sum(w * np.real(np.einsum("vi,ij,vj->v", kets.conj(), rho, kets)))
        return MLEParams.from_rho(rho, scale=max(total, 1.0) / max(pred, 1e-12)).t

    starts = [scaled(np.eye(4) / 4)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        lin = linear_reconstruct((kets, w, n))
    if np.any(lin):
        try:
            phys = nearest_physical(lin).m
            starts.append(scaled(0.95 * phys + 0.05 * np.eye(4) / 4))
        except ValueError:
            pass
    for _ in range(opts.n_random_starts):
        g = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        rho = g.conj().T @ g
        starts.append(scaled(rho / np.trace(rho).real))
    return starts


def _optimize(x0, kets, w, n, opts: MLEOptions):
    return minimize(
        mle_cost,
        x0,
        args=(kets, w, n, opts.cost, opts.eps, True),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": opts.max_iter, "ftol": opts.ftol, "gtol": 1e-12, "maxcor": 30},
    )


def mle_reconstruct(records, opts: MLEOptions | None = None, x0=None) -> MLEResult:
    """Maximum-likelihood density matrix (physical by construction).

    Runs the quasi-Newton optimizer from several starting points (maximally
    mixed, the physical projection of the linear estimate, and
    ``opts.n_random_starts`` random states) and keeps the lowest cost.
    Passing ``x0`` (16 parameters) runs a single start from there instead.
    A non-converged optimum is returned with ``report.converged = False``.
    """
    opts = opts or MLEOptions()
    kets, w, n = _arrays(records)
    if not np.any(n):
        raise ValueError("at least one nonzero count is required")
    rng = np.random.default_rng(opts.seed)
    starts = [np.asarray(x0, dtype=float)] if x0 is not None else _initial_points(kets, w, n, opts, rng)
    best = None
    iterations = 0
    for x in starts:
        res = _optimize(x, kets, w, n, opts)
        iterations += res.nit
        if best is None or res.fun < best.fun:
            best = res
    params = MLEParams(best.x)
    rho = DensityMatrix.reconstructed(params.rho)
    report = OptimizerReport(
        iterations=iterations,
        final_cost=float(best.fun),
        converged=bool(best.success),
        starts=len(starts),
        message=str(best.message),
    )
    if not best.success:
        warnings.warn(f"MLE did not converge: {best.message}", RuntimeWarning, stacklevel=2)
    return MLEResult(rho, params, report)


# --- Monte Carlo -----------------------------------------------------------


@dataclass
class MonteCarloResult:
    intervals: dict
    samples: dict
    n_samples: int
    seed: int
    level: float = 0.68
    failures: int = 0


def _mc_worker(args):
    kets, w, n, x0, opts, seed, indices = args
    out = np.empty((len(indices), len(METRIC_NAMES)))
    fails = 0
    for row, i in enumerate(indices):
        rng = np.random.default_rng([seed, i])
        ni = rng.poisson(n).astype(float)
        if not np.any(ni):
            out[row] = np.nan
            fails += 1
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            fit = mle_reconstruct((kets, w, ni), opts, x0=x0)
        m = compute_metrics(fit.rho, chsh_settings=opts.chsh_settings)
        out[row] = [getattr(m, k) for k in METRIC_NAMES]
    return out, fails


def monte_carlo(records, n_samples: int = 1000, seed: int = 0, opts: MLEOptions | None = None,
                point: MLEResult | None = None, level: float = 0.68, workers: int = 1) -> MonteCarloResult:
    """Poisson-resampled MLE metrics and their central percentile intervals.

    Every sample redraws each count from a Poisson distribution with the
    measured count as mean, using an RNG seeded by ``(seed, sample index)``,
    so results do not depend on ``workers`` and a shorter run is a prefix of
    a longer one.  Each resample is fitted from the point estimate's
    parameters.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    opts = opts or MLEOptions()
    kets, w, n = _arrays(records)
    if point is None:
        point = mle_reconstruct((kets, w, n), opts)
    x0 = point.params.t
    idx = np.arange(n_samples)
    if workers > 1:
        chunks = [c for c in np.array_split(idx, workers * 4) if c.size]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_mc_worker, [(kets, w, n, x0, opts, seed, c) for c in chunks]))
    else:
        parts = [_mc_worker((kets, w, n, x0, opts, seed, idx))]
    values = np.concatenate([p[0] for p in parts])
    fails = sum(p[1] for p in parts)
    lo_q, hi_q = 50 * (1 - level), 50 * (1 + level)
    samples, intervals = {}, {}
    for k, name in enumerate(METRIC_NAMES):
        col = values[:, k]
        col = col[np.isfinite(col)]
        samples[name] = col
        intervals[name] = (float(np.percentile(col, lo_q)), float(np.percentile(col, hi_q)))
    return MonteCarloResult(intervals, samples, n_samples, seed, level, fails)


# --- Full reconstruction ---------------------------------------------------


@dataclass
class TomographyResult:
    rho_mle: DensityMatrix
    rho_linear: np.ndarray
    metrics: MetricsReport
    intervals: dict
    mc_samples: int
    optimizer_report: OptimizerReport
    seed: int = 0
    mc: MonteCarloResult | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        linear_evals = eig_hermitian(self.rho_linear)
        return {
            "rho_mle": matrix_to_json(self.rho_mle.m),
            "rho_linear": matrix_to_json(self.rho_linear),
            "rho_linear_min_eigenvalue": float(linear_evals.min()),
            "metrics": self.metrics.to_json(),
            "intervals": {k: list(v) for k, v in self.intervals.items()},
            "mc_samples": self.mc_samples,
            "seed": self.seed,
            "optimizer": self.optimizer_report.to_json(),
        }


def run_tomography(records, mc_samples: int = 1000, seed: int = 0, opts: MLEOptions | None = None,
                   workers: int = 1) -> TomographyResult:
    """Linear estimate, MLE point estimate, metrics and Monte Carlo intervals.

    Intervals are the central 68% of the Monte Carlo samples, widened where
    necessary so that they contain the point estimate (bounded metrics such as
    a concurrence near 1 can put the estimate outside the sample quantiles).
    ``mc_samples = 0`` skips the Monte Carlo step.
    """
    opts = opts or MLEOptions(seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        lin = linear_reconstruct(records)
    fit = mle_reconstruct(records, opts)
    metrics = compute_metrics(fit.rho, chsh_settings=opts.chsh_settings)
    intervals, mc = {}, None
    if mc_samples:
        mc = monte_carlo(records, mc_samples, seed=seed, opts=opts, point=fit, workers=workers)
        for name, (lo, hi) in mc.intervals.items():
            val = getattr(metrics, name)
            intervals[name] = (min(lo, val), max(hi, val))
        metrics.intervals = {k: list(v) for k, v in intervals.items()}
    return TomographyResult(fit.rho, lin, metrics, intervals, mc_samples, fit.report, seed, mc)
