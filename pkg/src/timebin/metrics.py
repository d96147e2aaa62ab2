"""Entanglement and nonlocality figures of merit for two-qubit states."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .qcore import (
    PHI_PLUS,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    DensityMatrix,
    InvalidStateError,
    eig_general,
    eig_hermitian,
    eigh_jacobi,
    fidelity_pure,
)

__all__ = [
    "MetricsReport",
    "concurrence",
    "spin_flip_eigenvalues",
    "chsh_s",
    "correlation_matrix",
    "purity",
    "compute_metrics",
    "METRIC_NAMES",
]

METRIC_NAMES = ("concurrence", "fidelity_phi_plus", "chsh_s", "purity")

_YY = np.kron(SIGMA_Y, SIGMA_Y)
_PAULIS = (SIGMA_X, SIGMA_Y, SIGMA_Z)
_CLAMP_TOL = 1e-8


def _matrix(rho) -> np.ndarray:
    if isinstance(rho, DensityMatrix):
        return rho.m
    return DensityMatrix.reconstructed(rho).m


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    vals, vecs = eigh_jacobi(m)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.conj().T


def concurrence(rho) -> float:
    """Wootters concurrence max(0, s1 - s2 - s3 - s4).

    The s_i are the square roots of the eigenvalues of rho (sy x sy) rho* (sy x sy).
    They are obtained as the singular values of B = sqrt(rho) (sy x sy) sqrt(rho)*,
    since B B^dagger = sqrt(rho) rho~ sqrt(rho) shares that spectrum; taking
    square roots of near-zero eigenvalues would amplify rounding from 1e-16 to
    1e-8 for rank-deficient states.  The singular values come from the Jacobi
    eigenvalues of the Hermitian dilation [[0, B], [B^dagger, 0]].
    """
    m = _matrix(rho)
    root = _sqrtm_psd(m)
    b = root @ _YY @ root.conj()
    dil = np.block([[np.zeros((4, 4)), b], [b.conj().T, np.zeros((4, 4))]])
    s = eig_hermitian(dil)[:4]
    return float(max(0.0, s[0] - s[1] - s[2] - s[3]))


def spin_flip_eigenvalues(rho) -> np.ndarray:
    """Eigenvalues of rho (sy x sy) rho* (sy x sy) from the general QR solver."""
    m = _matrix(rho)
    lam = np.real(eig_general(m @ _YY @ m.conj() @ _YY))
    if lam.min() < -_CLAMP_TOL:
        raise InvalidStateError(
            "positive_semidefinite", f"spin-flip product has eigenvalue {lam.min():.3e}"
        )
    return np.sort(np.clip(lam, 0.0, None))[::-1]


def correlation_matrix(rho) -> np.ndarray:
    """T_ij = tr(rho sigma_i x sigma_j) for i, j in (x, y, z)."""
    m = _matrix(rho)
    return np.array(
        [[np.real(np.trace(m @ np.kron(a, b))) for b in _PAULIS] for a in _PAULIS]
    )


def chsh_s(rho, settings: str = "equatorial") -> float:
    """Maximal CHSH value S = 2 sqrt(m1 + m2).

    ``m1, m2`` are the two largest eigenvalues of T^T T, with T the correlation
    matrix.  With ``settings="full"`` T is the full 3x3 matrix (Horodecki
    criterion, optimum over all projective settings).  The default
    ``"equatorial"`` restricts T to its x-y block: time-bin analyzers set
    their basis with an interferometer phase, so every measurement lies on the
    equator of the Bloch sphere.
    """
    t = correlation_matrix(rho)
    if settings == "equatorial":
        t = t[:2, :2]
    elif settings != "full":
        raise ValueError(f"settings must be 'equatorial' or 'full', got {settings!r}")
    w = eig_hermitian(t.T @ t)
    return float(2.0 * np.sqrt(max(w[0] + w[1], 0.0)))


def purity(rho) -> float:
    m = _matrix(rho)
    return float(np.real(np.trace(m @ m)))


@dataclass
class MetricsReport:
    concurrence: float
    fidelity_phi_plus: float
    chsh_s: float
    purity: float
    intervals: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        doc = asdict(self)
        if not self.intervals:
            doc.pop("intervals")
        return doc


def compute_metrics(rho, chsh_settings: str = "equatorial") -> MetricsReport:
    m = _matrix(rho)
    return MetricsReport(
        concurrence=concurrence(m),
        fidelity_phi_plus=fidelity_pure(m, PHI_PLUS),
        chsh_s=chsh_s(m, settings=chsh_settings),
        purity=purity(m),
    )
