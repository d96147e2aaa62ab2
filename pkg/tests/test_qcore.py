import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timebin.qcore import (
    KET_1,
    KET_2,
    KET_L,
    KET_PLUS,
    PHI_PLUS,
    DensityMatrix,
    InvalidStateError,
    eig_general,
    eig_hermitian,
    eigh_jacobi,
    fidelity_pure,
    hessenberg,
    load_reference_matrix,
    matrix_from_json,
    matrix_to_json,
    nearest_physical,
    reference_eigenvalues,
    reference_state,
    tensor,
    two_photon_ket,
    werner_state,
)


def charpoly_roots(m):
    """Eigenvalue oracle independent of the QR/Jacobi code: Faddeev-LeVerrier
    characteristic polynomial, then companion-matrix roots."""
    n = m.shape[0]
    coeffs = [1.0 + 0j]
    mk = np.zeros_like(m)
    for k in range(1, n + 1):
        mk = m @ mk + coeffs[-1] * np.eye(n)
        coeffs.append(-np.trace(m @ mk) / k)
    return np.roots(coeffs)


def random_complex(rng, n=4):
    return rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))


def random_state(rng, rank=4):
    a = rng.normal(size=(4, rank)) + 1j * rng.normal(size=(4, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def match_sorted(a, b):
    """Greedy matching of two eigenvalue lists, returns max distance."""
    b = list(b)
    worst = 0.0
    for x in a:
        j = int(np.argmin([abs(x - y) for y in b]))
        worst = max(worst, abs(x - b.pop(j)))
    return worst


# --- kets ---


def test_tensor_basis_case():
    assert np.allclose(tensor(KET_1, KET_1), [1, 0, 0, 0])
    assert np.allclose(tensor(KET_1, KET_2), [0, 1, 0, 0])
    assert np.allclose(tensor(KET_2, KET_1), [0, 0, 1, 0])


def test_tensor_plus_plus():
    assert np.allclose(tensor(KET_PLUS, KET_PLUS), 0.5 * np.ones(4))


def test_tensor_plus_l():
    assert np.allclose(tensor(KET_PLUS, KET_L), 0.5 * np.array([1, 1j, 1, 1j]))


def test_two_photon_labels():
    assert np.allclose(two_photon_ket("+L"), tensor(KET_PLUS, KET_L))
    for lab in ("11", "12", "21", "22", "++", "LL", "1+", "L2"):
        assert abs(np.linalg.norm(two_photon_ket(lab)) - 1) < 1e-12
    with pytest.raises(ValueError):
        two_photon_ket("+x")


@given(st.lists(st.floats(-1, 1), min_size=8, max_size=8), st.floats(-3, 3))
def test_tensor_bilinear(v, c):
    a = np.array(v[0:2]) + 1j * np.array(v[2:4])
    b = np.array(v[4:6]) + 1j * np.array(v[6:8])
    assert np.allclose(tensor(c * a, b), c * tensor(a, b))
    assert np.allclose(tensor(a, c * b), c * tensor(a, b))
    assert np.allclose(tensor(a + b, b), tensor(a, b) + tensor(b, b))


# --- density matrix validation ---


def test_density_matrix_invariants():
    DensityMatrix.from_ket(PHI_PLUS)
    with pytest.raises(InvalidStateError) as e:
        DensityMatrix(np.eye(4) / 2)
    assert e.value.invariant == "unit_trace"
    m = np.eye(4, dtype=complex) / 4
    m[0, 1] = 0.1
    with pytest.raises(InvalidStateError) as e:
        DensityMatrix(m)
    assert e.value.invariant == "hermitian"
    with pytest.raises(InvalidStateError) as e:
        DensityMatrix(np.diag([1.1, -0.1, 0, 0]))
    assert e.value.invariant == "positive_semidefinite"
    with pytest.raises(InvalidStateError) as e:
        DensityMatrix(np.eye(3) / 3)
    assert e.value.invariant == "shape"


def test_density_matrix_read_only():
    rho = DensityMatrix(np.eye(4) / 4)
    with pytest.raises(ValueError):
        rho.m[0, 0] = 1


def test_fidelity_pure():
    assert abs(fidelity_pure(DensityMatrix.from_ket(PHI_PLUS), PHI_PLUS) - 1) < 1e-12
    assert abs(fidelity_pure(np.eye(4) / 4, PHI_PLUS) - 0.25) < 1e-12
    assert abs(fidelity_pure(werner_state(0.5), PHI_PLUS) - (3 * 0.5 + 1) / 4) < 1e-12
    bad = np.eye(4, dtype=complex) / 4
    bad[0, 3] = 0.2
    with pytest.raises(InvalidStateError):
        fidelity_pure(bad, PHI_PLUS)


# --- eigensolvers ---


def test_jacobi_against_charpoly():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a = random_complex(rng)
        h = a + a.conj().T
        vals, vecs = eigh_jacobi(h)
        ref = np.sort(charpoly_roots(h).real)[::-1]
        assert np.allclose(vals, ref, atol=1e-8)
        assert np.allclose(h @ vecs, vecs * vals, atol=1e-9)
        assert np.allclose(vecs.conj().T @ vecs, np.eye(4), atol=1e-12)


def test_qr_against_charpoly():
    rng = np.random.default_rng(2)
    for _ in range(50):
        a = random_complex(rng)
        assert match_sorted(eig_general(a), charpoly_roots(a)) < 1e-7


def test_eigen_trace_and_det():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a = random_complex(rng)
        w = eig_general(a)
        assert abs(w.sum() - np.trace(a)) < 1e-9
        assert abs(np.prod(w) - np.linalg.det(a)) < 1e-8 * max(1, abs(np.linalg.det(a)))


def test_eig_general_special_cases():
    nil = np.diag([1.0, 1.0, 1.0], k=1).astype(complex)
    assert np.allclose(eig_general(nil), 0, atol=1e-12)
    d = np.diag([3, 1j, -2, 0.5])
    assert match_sorted(eig_general(d), [3, 1j, -2, 0.5]) < 1e-12
    # real matrix with complex pair
    rot = np.array([[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 2, 0], [0, 0, 0, 5]], dtype=complex)
    assert match_sorted(eig_general(rot), [1j, -1j, 2, 5]) < 1e-12


def test_hessenberg_similarity():
    rng = np.random.default_rng(4)
    a = random_complex(rng)
    h = hessenberg(a)
    assert np.allclose(np.tril(h, -2), 0, atol=1e-14)
    assert abs(np.trace(h) - np.trace(a)) < 1e-10
    assert match_sorted(eig_general(h), charpoly_roots(a)) < 1e-7


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_hermitian_eigs_real_and_sorted(seed):
    rng = np.random.default_rng(seed)
    rho = random_state(rng, rank=int(rng.integers(1, 5)))
    w = eig_hermitian(rho)
    assert np.all(np.diff(w) <= 1e-15)
    assert abs(w.sum() - 1) < 1e-10
    assert w.min() > -1e-10


# --- projection and reference data ---


def test_nearest_physical_keeps_valid_states():
    rng = np.random.default_rng(5)
    rho = random_state(rng)
    assert np.allclose(nearest_physical(rho).m, rho, atol=1e-10)


def test_nearest_physical_removes_negative_weight():
    # worked by hand: -0.05 zeroed, the 0 eigenvalue then drops below zero
    # and is zeroed too, the remaining -0.05 is split over the top two
    out = nearest_physical(np.diag([0.7, 0.35, 0.0, -0.05]).astype(complex))
    assert np.allclose(np.diag(out.m).real, [0.675, 0.325, 0.0, 0.0], atol=1e-12)


def test_reference_matrix_raw_properties():
    m = load_reference_matrix()
    assert m.shape == (4, 4)
    assert np.allclose(m, m.conj().T)
    # printed entries carry 4 decimals: trace and spectrum are off at that level
    assert abs(np.trace(m).real - 1) < 5e-4
    assert eig_hermitian(m).min() > -5e-4


def test_reference_state_matches_printed_eigenvalues():
    w = reference_state().eigenvalues
    assert np.allclose(w, reference_eigenvalues(), atol=1e-6)


def test_matrix_json_round_trip(tmp_path):
    m = load_reference_matrix()
    p = tmp_path / "rho.json"
    p.write_text(json.dumps(matrix_to_json(m)))
    back = matrix_from_json(p.read_text())
    assert np.array_equal(back, m)
    with pytest.raises(ValueError):
        matrix_from_json({"re": [[1]]})
