import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timebin.photonics import (
    Gaussian,
    LossBudget,
    ModeField,
    TwoLobe,
    calibrate_two_lobe,
    gaussian_overlap_analytic,
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

W = 1.95
G = Gaussian(2 * W)


def test_loss_db():
    assert loss_db(1.0) == 0.0
    assert loss_db(0.55) == pytest.approx(2.596, abs=5e-4)
    assert round(loss_db(0.55), 2) == 2.60
    assert loss_db(0.0) == math.inf
    assert loss_db(math.exp(-1)) == pytest.approx(4.343, abs=1e-3)


def test_identical_gaussians():
    assert overlap(G, G) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("d", [0.5, 1.0, 1.95, 3.0])
def test_displaced_gaussian_closed_form(d):
    for dx, dy in ((d, 0.0), (0.0, d), (d / math.sqrt(2), d / math.sqrt(2))):
        assert overlap(G, G, dx, dy) == pytest.approx(math.exp(-(d**2) / W**2), abs=1e-6)


def test_different_widths_closed_form():
    # two centred Gaussians: eta = (2 w1 w2 / (w1^2 + w2^2))^2
    a, b = Gaussian(3.0), Gaussian(5.0)
    w1, w2 = 1.5, 2.5
    assert overlap(a, b) == pytest.approx((2 * w1 * w2 / (w1**2 + w2**2)) ** 2, abs=1e-8)
    assert gaussian_overlap_analytic(a, b) == pytest.approx((2 * w1 * w2 / (w1**2 + w2**2)) ** 2, abs=1e-12)


def test_grid_refinement_convergence():
    brw = load_brw_mode()
    for a, b in ((G, G), (brw, polyboard_mode())):
        e1 = overlap(a, b, 0.7, 0.3, step=0.1)
        e2 = overlap(a, b, 0.7, 0.3, step=0.05)
        assert abs(e1 - e2) < 1e-4
        assert abs(e2 - gaussian_overlap_analytic(a, b, 0.7, 0.3)) < 1e-4


def test_sampled_field_matches_model():
    brw = load_brw_mode()
    field = brw.to_field(step=0.05)
    for d in ((0.0, 0.0), (0.6, -0.4)):
        assert overlap(field, polyboard_mode(), *d) == pytest.approx(
            gaussian_overlap_analytic(brw, polyboard_mode(), *d), abs=1e-4)


@settings(max_examples=25, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_overlap_symmetry(dx, dy):
    a, b = load_brw_mode(), polyboard_mode()
    assert abs(overlap(a, b, dx, dy) - overlap(b, a, -dx, -dy)) < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_cauchy_schwarz(dx, dy):
    eta = overlap(load_brw_mode(), Gaussian(3.0), dx, dy, step=0.1)
    assert 0.0 <= eta <= 1 + 1e-12


def test_phase_and_amplitude_invariance():
    f = load_brw_mode().to_field(step=0.1)
    g = ModeField(f.amplitudes * 3.7 * np.exp(1.1j), f.dx, f.dy)
    ref = overlap(f, polyboard_mode(), 0.3, 0.2, step=0.1)
    assert overlap(g, polyboard_mode(), 0.3, 0.2, step=0.1) == pytest.approx(ref, abs=1e-12)


def test_non_overlapping_supports_warn():
    f = G.to_field(step=0.1, half_extent=3.0)
    with pytest.warns(RuntimeWarning):
        assert overlap(f, f, 10.0, 0.0, step=0.1) == 0.0


def test_two_lobe_reduces_to_gaussian():
    t = TwoLobe(0.0, W, W, weights=(0.5, 0.5))
    assert overlap(t, G) == pytest.approx(1.0, abs=1e-12)


def test_mode_field_csv_round_trip(tmp_path):
    f = load_brw_mode().to_field(step=0.2)
    g = ModeField(f.amplitudes * np.exp(0.3j), f.dx, f.dy)
    p = tmp_path / "mode.csv"
    g.write_csv(p)
    assert p.read_text().splitlines()[0] == "nx,ny,dx_um,dy_um"
    back = ModeField.read_csv(p)
    assert np.array_equal(back.amplitudes, g.amplitudes)
    assert (back.dx, back.dy) == (g.dx, g.dy)


def test_mode_field_validation():
    with pytest.raises(ValueError):
        ModeField(np.zeros((5, 5)), 0.1, 0.1)


# --- scans ---


def test_identical_gaussian_scan():
    res = scan_displacement(G, G, (-3, 3), (-3, 3), step=0.1)
    assert res.min_loss == pytest.approx(0.0, abs=1e-8)
    k = math.sqrt(3 / (10 * math.log10(math.e)))
    assert k == pytest.approx(0.831, abs=1e-3)
    hx, hy = res.half_widths["+3dB"]["x"], res.half_widths["+3dB"]["y"]
    assert hx == pytest.approx(W * k, abs=1e-4) and hy == pytest.approx(W * k, abs=1e-4)
    # radially symmetric map
    assert np.allclose(res.loss_map, res.loss_map.T, atol=1e-9)
    assert np.allclose(res.loss_map, res.loss_map[::-1, ::-1], atol=1e-9)


def test_scan_map_matches_direct_overlap():
    a, b = load_brw_mode(), polyboard_mode()
    res = scan_displacement(a, b, (-1, 1), (-1, 1), step=0.1)
    for iy in (0, 7, 20):
        for ix in (3, 10, 18):
            direct = loss_db(overlap(a, b, res.xs[ix], res.ys[iy]))
            assert res.loss_map[iy, ix] == pytest.approx(direct, abs=1e-6)


def test_scan_optimum_consistent_with_map():
    a, b = load_brw_mode(), polyboard_mode()
    res = scan_displacement(a, b, (-2, 2), (-2, 2), step=0.1)
    iy, ix = np.unravel_index(np.argmin(res.loss_map), res.loss_map.shape)
    assert abs(res.xs[ix] - res.optimum[0]) <= 0.1 + 1e-9
    assert abs(res.ys[iy] - res.optimum[1]) <= 0.1 + 1e-9
    assert res.min_loss <= res.loss_map.min() + 1e-12


def test_scan_step_limit():
    with pytest.raises(ValueError):
        scan_displacement(load_brw_mode(), polyboard_mode(), step=0.5)


def test_scan_outputs(tmp_path):
    res = scan_displacement(G, G, (-1, 1), (-1, 1), step=0.2)
    doc = json.loads(json.dumps(res.to_json()))
    assert set(doc) >= {"min_loss_db", "optimum_um", "half_widths_um", "loss_db"}
    res.write_csv(tmp_path / "m.csv")
    rows = (tmp_path / "m.csv").read_text().splitlines()
    assert len(rows) == 1 + res.ys.size


def test_calibration_reproduces_stored_parameters():
    m = calibrate_two_lobe()
    stored = load_brw_mode()
    assert m.separation == pytest.approx(stored.separation, rel=1e-3)
    assert m.wx == pytest.approx(stored.wx, rel=1e-3)
    assert m.wy == pytest.approx(stored.wy, rel=1e-3)
    assert gaussian_overlap_analytic(m, polyboard_mode()) == pytest.approx(0.55, abs=1e-6)


# --- spectra and budgets ---


def test_per_flat():
    lam = np.linspace(1500, 1600, 11)
    res = per_from_spectra((lam, np.full(11, -6.54)), (lam, np.full(11, -36.54)))
    assert np.allclose(res.values, 30.0)
    same = per_from_spectra((lam, np.full(11, -6.54)), (lam, np.full(11, -6.54)))
    assert np.allclose(same.values, 0.0)


def test_per_on_mismatched_grids():
    fav = (np.array([1500.0, 1550.0, 1600.0]), np.array([-6.0, -6.5, -7.0]))
    orth = (np.array([1520.0, 1580.0, 1640.0]), np.array([-40.0, -35.0, -30.0]))
    res = per_from_spectra(fav, orth)
    assert res.wavelength[0] == 1520.0 and res.wavelength[-1] == 1600.0
    assert res.minimum > 25.0
    with pytest.raises(ValueError):
        per_from_spectra(fav, (np.array([1700.0, 1800.0]), np.array([0.0, 0.0])))


def test_suppression_step():
    lam = np.linspace(780, 790, 1001)
    ref = np.zeros_like(lam)
    filt = np.where(np.abs(lam - 785.05) < 0.2, -68.0, -45.0)
    res = suppression_from_spectra((lam, ref), (lam, filt))
    assert res.maximum == pytest.approx(68.0)
    assert abs(res.argmax - 785.05) < 0.2
    assert suppression_from_spectra((lam, ref), (lam, ref)).maximum == 0.0


def test_suppression_band_minimum():
    lam = np.linspace(650, 900, 251)
    filt = np.where((lam >= 700) & (lam <= 850), -40.0 - 10 * np.sin(lam / 20) ** 2, -5.0)
    res = suppression_from_spectra((lam, np.zeros_like(lam)), (lam, filt))
    assert res.band_minimum(700, 850) >= 40.0
    with pytest.raises(ValueError):
        res.band_minimum(100, 200)


def test_read_spectrum_csv(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("wavelength_nm,transmission_db\n1550,-6.5\n1500,-6.0\n")
    lam, db = read_spectrum_csv(p)
    assert list(lam) == [1500.0, 1550.0] and list(db) == [-6.0, -6.5]
    (tmp_path / "bad.csv").write_text("1500,-6\n1510,x\n")
    with pytest.raises(ValueError):
        read_spectrum_csv(tmp_path / "bad.csv")


def test_rate_budget_examples():
    assert rate_budget(1.4, (0.05, 0.05)).corrected == pytest.approx(560.0)
    assert rate_budget(1.4, (0.07, 0.07)).corrected == pytest.approx(285.714, abs=1e-3)
    assert rate_budget(1.4, (1.0, 1.0)).corrected == 1.4
    with pytest.raises(ValueError):
        rate_budget(1.4, (0.0, 0.5))


def test_rate_budget_round_trip():
    losses = LossBudget({"TE": [("facet", 2.6), ("chip", 3.94)], "TM": [("facet", 2.6), ("chip", 6.5)]})
    rb = rate_budget(1.4, (0.06, 0.06), losses, det_efficiency=(0.7, 0.7))
    assert rb.predicted == pytest.approx(1.4)
    assert rb.source == pytest.approx(rb.corrected / (0.49 * losses.transmission("TE") * losses.transmission("TM")))


def test_loss_budget_totals():
    lb = LossBudget({"TE": [("a", 1.0), ("b", 5.54)], "TM": [("a", 1.0), ("b", 8.1)]})
    assert abs(lb.total("TE") - 6.54) < 1e-9 and abs(lb.total("TM") - 9.1) < 1e-9
    back = LossBudget.from_json(json.loads(json.dumps(lb.to_json())))
    assert back.total("TM") == lb.total("TM")
