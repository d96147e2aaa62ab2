"""Two-qubit linear algebra on the time-bin basis.

All kets and operators are plain numpy arrays in the fixed basis order
``|11>, |12>, |21>, |22>`` (first label: Alice, second label: Bob; ``1`` is the
early and ``2`` the late time bin).  The eigensolvers are written for the tiny
fixed problem sizes used here (2x2 and 4x4) and do not rely on LAPACK.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

__all__ = [
    "BASIS_LABELS",
    "KET_1",
    "KET_2",
    "KET_PLUS",
    "KET_L",
    "PHI_PLUS",
    "SIGMA_X",
    "SIGMA_Y",
    "SIGMA_Z",
    "ConvergenceError",
    "InvalidStateError",
    "DensityMatrix",
    "ket",
    "two_photon_ket",
    "tensor",
    "projector",
    "fidelity_pure",
    "eig_hermitian",
    "eigh_jacobi",
    "eig_general",
    "hessenberg",
    "nearest_physical",
    "werner_state",
    "matrix_to_json",
    "matrix_from_json",
    "load_reference_matrix",
    "reference_eigenvalues",
    "reference_state",
]

BASIS_LABELS = ("11", "12", "21", "22")

_S = 1.0 / np.sqrt(2.0)
KET_1 = np.array([1.0, 0.0], dtype=complex)
KET_2 = np.array([0.0, 1.0], dtype=complex)
KET_PLUS = np.array([_S, _S], dtype=complex)
KET_L = np.array([_S, 1j * _S], dtype=complex)
PHI_PLUS = np.array([_S, 0.0, 0.0, _S], dtype=complex)

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)

_SINGLE_KETS = {"1": KET_1, "2": KET_2, "+": KET_PLUS, "L": KET_L}

HERMITIAN_TOL_EXACT = 1e-10
HERMITIAN_TOL_RECONSTRUCTED = 1e-8


class InvalidStateError(ValueError):
    """Raised when a matrix violates a density-matrix invariant.

    ``invariant`` names the violated property (``"hermitian"``,
    ``"unit_trace"``, ``"positive_semidefinite"``, ``"shape"`` or ``"finite"``).
    """

    def __init__(self, invariant: str, message: str):
        super().__init__(f"{invariant}: {message}")
        self.invariant = invariant


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, iterations: int):
        super().__init__(f"{message} (after {iterations} iterations)")
        self.iterations = iterations


def ket(label: str) -> np.ndarray:
    """Single-photon ket for ``'1'``, ``'2'``, ``'+'`` or ``'L'``."""
    try:
        return _SINGLE_KETS[label].copy()
    except KeyError:
        raise ValueError(f"unknown single-photon label {label!r}") from None


def tensor(a, b) -> np.ndarray:
    """Kronecker product of two normalized single-photon kets."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != (2,) or b.shape != (2,):
        raise ValueError("tensor expects two 2-component kets")
    return np.kron(a, b)


def two_photon_ket(label: str) -> np.ndarray:
    """Two-photon ket from a two-character label, e.g. ``'+L'`` or ``'12'``."""
    if len(label) != 2:
        raise ValueError(f"two-photon label must have two characters, got {label!r}")
    return tensor(ket(label[0]), ket(label[1]))


def projector(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def _as_matrix(m) -> np.ndarray:
    if isinstance(m, DensityMatrix):
        return m.m
    return np.asarray(m, dtype=complex)


def _check_hermitian(m: np.ndarray, tol: float) -> None:
    dev = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
    if not dev <= tol:
        raise InvalidStateError("hermitian", f"max |M - M^dagger| = {dev:.3e} exceeds {tol:.1e}")


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Validated 4x4 two-qubit density matrix.

    The wrapped array is copied and made read-only.  ``herm_tol`` defaults to
    the exact-arithmetic tolerance; pass ``HERMITIAN_TOL_RECONSTRUCTED`` (or
    use :meth:`reconstructed`) for optimizer output.
    """

    m: np.ndarray
    herm_tol: float = HERMITIAN_TOL_EXACT
    trace_tol: float = 1e-10
    psd_tol: float = 1e-8
    eigenvalues: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        m = np.array(self.m, dtype=complex)
        if m.shape != (4, 4):
            raise InvalidStateError("shape", f"expected 4x4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvalidStateError("finite", "matrix has non-finite entries")
        _check_hermitian(m, self.herm_tol)
        tr = np.trace(m)
        if abs(tr - 1.0) > self.trace_tol:
            raise InvalidStateError("unit_trace", f"trace = {tr:.12g}")
        m = 0.5 * (m + m.conj().T)
        evals = eig_hermitian(m)
        if evals[-1] < -self.psd_tol:
            raise InvalidStateError(
                "positive_semidefinite", f"minimum eigenvalue {evals[-1]:.3e} < {-self.psd_tol:.1e}"
            )
        m.setflags(write=False)
        evals.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "eigenvalues", evals)

    @classmethod
    def reconstructed(cls, m) -> "DensityMatrix":
        return cls(m, herm_tol=HERMITIAN_TOL_RECONSTRUCTED, trace_tol=1e-8)

    @classmethod
    def from_ket(cls, psi) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(projector(psi))

    def __array__(self, dtype=None, copy=None):
        return self.m if dtype is None else self.m.astype(dtype)

    def to_json(self) -> dict:
        return matrix_to_json(self.m)


def fidelity_pure(rho, psi) -> float:
    """Overlap <psi|rho|psi> of a state with a pure target."""
    m = _as_matrix(rho)
    _check_hermitian(m, HERMITIAN_TOL_RECONSTRUCTED)
    psi = np.asarray(psi, dtype=complex)
    return float(np.real(psi.conj() @ m @ psi))


# --- Hermitian eigenproblem: cyclic complex Jacobi -------------------------


def eigh_jacobi(m, tol: float = HERMITIAN_TOL_RECONSTRUCTED, max_sweeps: int = 50):
    """Eigen-decomposition of a small Hermitian matrix by cyclic Jacobi rotations.

    Returns
    -------
    values : ndarray of float, descending
    vectors : ndarray, columns are the matching orthonormal eigenvectors
    """
    a = np.array(_as_matrix(m), dtype=complex)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("square matrix required")
    _check_hermitian(a, tol)
    a = 0.5 * (a + a.conj().T)
    v = np.eye(n, dtype=complex)
    scale = max(np.max(np.abs(a)), np.finfo(float).tiny)

    for sweep in range(max_sweeps):
        off = np.sqrt(np.sum(np.abs(a - np.diag(np.diag(a))) ** 2))
        if off <= 1e-15 * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                mag = abs(apq)
                if mag <= 1e-300:
                    continue
                phase = apq / mag
                app = a[p, p].real
                aqq = a[q, q].real
                tau = (aqq - app) / (2.0 * mag)
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                # columns p, q of the unitary rotation
                g_pp, g_pq = c, s * phase
                g_qp, g_qq = -s * np.conj(phase), c
                cp = a[:, p].copy()
                cq = a[:, q].copy()
                a[:, p] = cp * g_pp + cq * g_qp
                a[:, q] = cp * g_pq + cq * g_qq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = np.conj(g_pp) * rp + np.conj(g_qp) * rq
                a[q, :] = np.conj(g_pq) * rp + np.conj(g_qq) * rq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = vp * g_pp + vq * g_qp
                v[:, q] = vp * g_pq + vq * g_qq
    else:
        raise ConvergenceError("Jacobi iteration did not converge", max_sweeps)

    w = np.real(np.diag(a))
    order = np.argsort(w)[::-1]
    return w[order], v[:, order]


def eig_hermitian(m, tol: float = HERMITIAN_TOL_RECONSTRUCTED) -> np.ndarray:
    """Real eigenvalues of a Hermitian matrix in descending order."""
    return eigh_jacobi(m, tol=tol)[0]


# --- General eigenproblem: Hessenberg + shifted complex QR -----------------


def hessenberg(m) -> np.ndarray:
    """Householder reduction to upper Hessenberg form (similarity transform)."""
    h = np.array(m, dtype=complex)
    n = h.shape[0]
    for k in range(n - 2):
        x = h[k + 1 :, k].copy()
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        phase = x[0] / abs(x[0]) if x[0] != 0 else 1.0
        u = x.copy()
        u[0] += phase * alpha
        u /= np.linalg.norm(u)
        h[k + 1 :, :] -= 2.0 * np.outer(u, u.conj() @ h[k + 1 :, :])
        h[:, k + 1 :] -= 2.0 * np.outer(h[:, k + 1 :] @ u, u.conj())
        h[k + 2 :, k] = 0.0
    return h


def _wilkinson_shift(a, b, c, d):
    # eigenvalue of [[a, b], [c, d]] closer to d
    tr = a + d
    det = a * d - b * c
    disc = np.sqrt(tr * tr / 4.0 - det)
    l1 = tr / 2.0 + disc
    l2 = tr / 2.0 - disc
    return l1 if abs(l1 - d) < abs(l2 - d) else l2


def eig_general(m, max_iter: int = 500) -> np.ndarray:
    """Eigenvalues of a small general complex matrix.

    Upper Hessenberg reduction followed by single-shift complex QR with
    Wilkinson shifts and deflation.  Raises :class:`ConvergenceError` with the
    iteration count if the active block does not deflate within ``max_iter``
    QR steps.
    """
    a = np.asarray(_as_matrix(m), dtype=complex)
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    n = a.shape[0]
    h = hessenberg(a)
    eps = np.finfo(float).eps
    norm = max(np.max(np.abs(h)), np.finfo(float).tiny)
    out = []
    hi = n - 1
    iters = 0
    since_deflation = 0
    while hi >= 0:
        if hi == 0:
            out.append(h[0, 0])
            break
        l = hi
        while l > 0:
            scale = abs(h[l - 1, l - 1]) + abs(h[l, l])
            if abs(h[l, l - 1]) <= eps * (scale if scale > 0 else norm) or abs(h[l, l - 1]) < 1e-300:
                h[l, l - 1] = 0.0
                break
            l -= 1
        if l == hi:
            out.append(h[hi, hi])
            hi -= 1
            since_deflation = 0
            continue
        if iters >= max_iter:
            raise ConvergenceError("QR iteration did not converge", iters)
        if since_deflation and since_deflation % 11 == 0:
            mu = h[hi, hi] + abs(h[hi, hi - 1]) * (0.75 + 0.5j)
        else:
            mu = _wilkinson_shift(h[hi - 1, hi - 1], h[hi - 1, hi], h[hi, hi - 1], h[hi, hi])
        blk = h[l : hi + 1, l : hi + 1] - mu * np.eye(hi - l + 1)
        k = hi - l + 1
        rots = []
        for j in range(k - 1):
            x, y = blk[j, j], blk[j + 1, j]
            r = np.hypot(abs(x), abs(y))
            if r == 0.0:
                c, s = 1.0, 0.0
            else:
                c, s = x / r, y / r
            g = np.array([[np.conj(c), np.conj(s)], [-s, c]])
            blk[j : j + 2, :] = g @ blk[j : j + 2, :]
            rots.append(g)
        for j, g in enumerate(rots):
            blk[:, j : j + 2] = blk[:, j : j + 2] @ g.conj().T
        h[l : hi + 1, l : hi + 1] = blk + mu * np.eye(k)
        iters += 1
        since_deflation += 1
    return np.array(out[::-1], dtype=complex)


# --- State helpers ---------------------------------------------------------


def nearest_physical(m) -> DensityMatrix:
    """Closest valid density matrix to a Hermitian estimate.

    Eigenvalues are renormalized to unit sum and projected onto the
    probability simplex in the way of Smolin, Gambetta and Smith
    (Phys. Rev. Lett. 108, 070502): the most negative eigenvalue is zeroed and
    its weight spread evenly over the rest until all are non-negative.
    Eigenvectors are kept.
    """
    a = _as_matrix(m)
    vals, vecs = eigh_jacobi(a, tol=HERMITIAN_TOL_RECONSTRUCTED)
    tr = float(np.sum(vals))
    if tr <= 0:
        raise InvalidStateError("unit_trace", f"cannot normalize a matrix with trace {tr:.3e}")
    lam = vals / tr
    n = lam.size
    out = lam.copy()
    acc = 0.0
    i = n - 1
    while i >= 0 and out[i] + acc / (i + 1) < 0:
        acc += out[i]
        out[i] = 0.0
        i -= 1
    out[: i + 1] += acc / (i + 1)
    rho = (vecs * out) @ vecs.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix(rho / np.trace(rho).real, herm_tol=1e-9)


def werner_state(p: float) -> np.ndarray:
    return p * projector(PHI_PLUS) + (1.0 - p) * np.eye(4) / 4.0


# --- Serialization ---------------------------------------------------------


def matrix_to_json(m) -> dict:
    a = _as_matrix(m)
    return {"re": np.real(a).tolist(), "im": np.imag(a).tolist()}


def matrix_from_json(doc) -> np.ndarray:
    """Parse ``{"re": [[..]], "im": [[..]]}`` (a dict or a JSON string)."""
    if isinstance(doc, (str, bytes)):
        doc = json.loads(doc)
    try:
        re = np.array(doc["re"], dtype=float)
        im = np.array(doc["im"], dtype=float)
    except (KeyError, TypeError) as exc:
        raise ValueError("matrix JSON needs 're' and 'im' arrays") from exc
    if re.shape != im.shape or re.ndim != 2:
        raise ValueError(f"inconsistent matrix shapes {re.shape} / {im.shape}")
    return re + 1j * im


def _reference_doc() -> dict:
    text = resources.files("timebin.data").joinpath("reference_rho.json").read_text()
    return json.loads(text)


def load_reference_matrix() -> np.ndarray:
    """Published MLE density matrix, exactly as printed (4 decimals)."""
    return matrix_from_json(_reference_doc())


def reference_eigenvalues() -> np.ndarray:
    """Eigenvalues published together with the reference matrix."""
    return np.array(_reference_doc()["eigenvalues"], dtype=float)


def reference_state() -> DensityMatrix:
    """Physical state recovered from the printed reference matrix.

    The printed entries are rounded to four decimals, which leaves spurious
    eigenvalues of order 1e-4 (some negative).  Projecting onto the nearest
    physical state removes that rounding noise.
    """
    return nearest_physical(load_reference_matrix())
