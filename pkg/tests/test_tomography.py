import warnings

import numpy as np
import pytest
from scipy.optimize import approx_fprime

from timebin.coincidence import SETTINGS, PeakCounts, assemble_projections
from timebin.metrics import concurrence
from timebin.qcore import PHI_PLUS, DensityMatrix, eig_hermitian, fidelity_pure, projector
from timebin.simulator import ExperimentConfig, config_for_setting, expected_cell_rates, source_state
from timebin.tomography import (
    MLEOptions,
    MLEParams,
    RankDeficiencyWarning,
    linear_reconstruct,
    mle_cost,
    mle_reconstruct,
    monte_carlo,
    params_to_t,
    run_tomography,
    t_to_params,
)


def ideal_records(rho=None, scale=1e4, visibility=1.0, include_forbidden=True):
    cfg = ExperimentConfig(pair_prob=1e-3, visibility=visibility)
    rates = {s: expected_cell_rates(config_for_setting(cfg, s), rho) for s in SETTINGS}
    top = max(r.max() for r in rates.values())
    peaks = {s: PeakCounts(np.rint(r / top * scale).astype(np.int64)) for s, r in rates.items()}
    return assemble_projections(peaks, include_forbidden=include_forbidden)


def noisy(records, rng):
    out = []
    for r in records:
        r2 = type(r)(**{**r.__dict__, "count": int(rng.poisson(r.count))})
        out.append(r2)
    return out


def near_pure_records(rng, scale=300):
    return noisy(ideal_records(visibility=0.97, scale=scale), rng)


# --- parametrization ---


def test_params_round_trip():
    rng = np.random.default_rng(0)
    t = rng.normal(size=16)
    assert np.allclose(t_to_params(params_to_t(t)), t)
    tm = params_to_t(t)
    assert np.allclose(np.triu(tm, 1), 0)
    assert np.allclose(np.imag(np.diag(tm)), 0)


def test_random_params_give_valid_states():
    rng = np.random.default_rng(1)
    for t in rng.normal(size=(10_000, 16)) * rng.uniform(0.01, 100, size=(10_000, 1)):
        rho = MLEParams(t).rho
        assert abs(np.trace(rho) - 1) < 1e-12
        assert np.max(np.abs(rho - rho.conj().T)) < 1e-14
        w = np.linalg.eigvalsh(rho)
        assert w.min() > -1e-12


def test_random_params_pass_density_matrix_checks():
    rng = np.random.default_rng(2)
    for t in rng.normal(size=(200, 16)):
        DensityMatrix.reconstructed(MLEParams(t).rho)


def test_from_rho_reproduces_state():
    rng = np.random.default_rng(3)
    g = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    rho = g @ g.conj().T
    rho /= np.trace(rho)
    p = MLEParams.from_rho(rho, scale=50.0, floor=0.0)
    assert np.allclose(p.rho, rho)
    assert p.scale == pytest.approx(50.0)


@pytest.mark.parametrize("kind", ["gaussian", "poisson"])
def test_cost_gradient(kind):
    rng = np.random.default_rng(4)
    recs = near_pure_records(rng)
    kets = np.array([r.projector for r in recs])
    w = np.array([r.weight for r in recs])
    n = np.array([r.count for r in recs], dtype=float)
    t = MLEParams.from_rho(np.eye(4) / 4 + 0.1 * projector(PHI_PLUS), scale=n.sum() / 4).t + rng.normal(0, 0.3, 16)
    _, g = mle_cost(t, kets, w, n, kind, 0.5, True)
    fd = approx_fprime(t, lambda x: mle_cost(x, kets, w, n, kind, 0.5, False), 1e-6)
    assert np.linalg.norm(g - fd) < 1e-4 * np.linalg.norm(g)


# --- linear inversion ---


def test_linear_exact_recovery():
    rng = np.random.default_rng(5)
    g = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    rho = g @ g.conj().T
    rho /= np.trace(rho)
    recs = ideal_records(rho, scale=1.0)
    kets = np.array([r.projector for r in recs])
    w = np.array([r.weight for r in recs])
    n = 37.0 * w * np.real(np.einsum("vi,ij,vj->v", kets.conj(), rho, kets))
    assert np.allclose(linear_reconstruct((kets, w, n)), rho, atol=1e-10)


def test_linear_rank_warning():
    recs = ideal_records(include_forbidden=False)
    with pytest.warns(RankDeficiencyWarning):
        linear_reconstruct(recs)


def test_linear_all_zero_counts():
    recs = ideal_records(scale=0.0)
    with pytest.warns(RankDeficiencyWarning):
        out = linear_reconstruct(recs)
    assert np.all(out == 0)


def test_linear_goes_negative_on_noisy_near_pure_data():
    negatives = 0
    for seed in range(30):
        lin = linear_reconstruct(near_pure_records(np.random.default_rng(seed)))
        assert abs(np.trace(lin) - 1) < 1e-10
        negatives += eig_hermitian(lin).min() < 0
    assert negatives > 15


# --- MLE ---


def test_mle_noiseless_phi_plus():
    fit = mle_reconstruct(ideal_records())
    assert fidelity_pure(fit.rho, PHI_PLUS) > 0.9999
    assert fit.report.converged


def test_mle_requires_counts():
    with pytest.raises(ValueError):
        mle_reconstruct(ideal_records(scale=0.0))


def test_mle_visibility_state_concurrence():
    # rho with off-diagonal V/2 has concurrence V
    fit = mle_reconstruct(ideal_records(visibility=0.91, scale=1e6))
    assert concurrence(fit.rho) == pytest.approx(0.91, abs=1e-3)
    assert np.allclose(fit.rho.m, source_state(0.91), atol=2e-3)


def test_mle_output_always_physical():
    for seed in range(10):
        fit = mle_reconstruct(near_pure_records(np.random.default_rng(100 + seed)))
        DensityMatrix.reconstructed(fit.rho.m)
        assert fit.rho.eigenvalues.min() >= -1e-8


def test_mle_beats_projected_linear_estimate():
    from timebin.qcore import nearest_physical

    rng = np.random.default_rng(6)
    recs = near_pure_records(rng)
    kets = np.array([r.projector for r in recs])
    w = np.array([r.weight for r in recs])
    n = np.array([r.count for r in recs], dtype=float)
    fit = mle_reconstruct(recs)
    lin = nearest_physical(linear_reconstruct(recs)).m
    pred = np.sum(w * np.real(np.einsum("vi,ij,vj->v", kets.conj(), lin, kets)))
    x_lin = MLEParams.from_rho(lin, scale=n.sum() / pred).t
    assert fit.report.final_cost <= mle_cost(x_lin, kets, w, n) + 1e-9


def test_mle_scale_invariance():
    # the cost is homogeneous in (mu, n) only while the eps floor is inactive;
    # the forbidden-cell records have zero counts, where a fixed eps = 0.5
    # does not scale with the data, so the invariance is checked with eps ~ 0
    rng = np.random.default_rng(7)
    recs = near_pure_records(rng)
    opts = MLEOptions(eps=1e-9)
    a = mle_reconstruct(recs, opts).rho.m
    scaled = [type(r)(**{**r.__dict__, "count": r.count * 10}) for r in recs]
    b = mle_reconstruct(scaled, opts).rho.m
    assert np.max(np.abs(a - b)) < 1e-6


def test_mle_scale_invariance_without_zero_counts():
    # all counts well above the floor: the default options are scale invariant
    rho = 0.8 * source_state(0.9) + 0.2 * np.eye(4) / 4
    recs = noisy(ideal_records(rho, scale=400), np.random.default_rng(12))
    assert min(r.count for r in recs) > 1
    a = mle_reconstruct(recs).rho.m
    b = mle_reconstruct([type(r)(**{**r.__dict__, "count": r.count * 7}) for r in recs]).rho.m
    assert np.max(np.abs(a - b)) < 1e-6


def test_mle_permutation_equivariance():
    rng = np.random.default_rng(8)
    recs = near_pure_records(rng)
    a = mle_reconstruct(recs).rho.m
    perm = rng.permutation(len(recs))
    b = mle_reconstruct([recs[i] for i in perm]).rho.m
    assert np.max(np.abs(a - b)) < 1e-9


def test_poisson_cost_option():
    fit = mle_reconstruct(ideal_records(), MLEOptions(cost="poisson"))
    assert fidelity_pure(fit.rho, PHI_PLUS) > 0.9999


# --- Monte Carlo ---


def test_monte_carlo_minimum_samples():
    with pytest.raises(ValueError):
        monte_carlo(ideal_records(), n_samples=50)


def test_monte_carlo_deterministic_and_prefix_stable():
    recs = near_pure_records(np.random.default_rng(9))
    a = monte_carlo(recs, n_samples=100, seed=3)
    b = monte_carlo(recs, n_samples=100, seed=3)
    assert a.intervals == b.intervals
    c = monte_carlo(recs, n_samples=120, seed=3)
    assert np.array_equal(c.samples["concurrence"][:100], a.samples["concurrence"])


def test_monte_carlo_large_counts_shrink_interval():
    recs = ideal_records(visibility=0.9, scale=1e8)
    mc = monte_carlo(recs, n_samples=100, seed=0)
    lo, hi = mc.intervals["concurrence"]
    assert (hi - lo) / 0.9 < 1e-3


def test_monte_carlo_workers_agree():
    recs = near_pure_records(np.random.default_rng(10))
    a = monte_carlo(recs, n_samples=100, seed=1)
    b = monte_carlo(recs, n_samples=100, seed=1, workers=2)
    for k in a.samples:
        assert np.allclose(a.samples[k], b.samples[k])


def test_run_tomography_result():
    recs = near_pure_records(np.random.default_rng(11))
    res = run_tomography(recs, mc_samples=100, seed=2)
    for name, (lo, hi) in res.intervals.items():
        assert lo <= getattr(res.metrics, name) <= hi
    doc = res.to_json()
    assert doc["mc_samples"] == 100 and doc["seed"] == 2
    assert set(doc["intervals"]) == {"concurrence", "fidelity_phi_plus", "chsh_s", "purity"}
    assert doc["optimizer"]["converged"] in (True, False)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        res0 = run_tomography(ideal_records(), mc_samples=0)
    assert res0.intervals == {}
