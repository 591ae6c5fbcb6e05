import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from botdasvr import spectra
from botdasvr.spectra import (
    FrequencyGrid,
    GainSpectrum,
    LorentzianParams,
    TemperatureCalibration,
)

CAL = TemperatureCalibration()


# -- grid ---------------------------------------------------------------------


def test_default_grid_has_220_points():
    g = FrequencyGrid()
    assert g.count == 220
    assert g.frequencies()[0] == 10.78
    assert g.end == pytest.approx(10.78 + 219e-3)


@pytest.mark.parametrize("kw", [dict(step=0.0), dict(step=-1.0), dict(count=1)])
def test_grid_rejects_bad_fields(kw):
    with pytest.raises(ValueError):
        FrequencyGrid(**kw)


def test_grid_cap_enforced():
    with pytest.raises(ValueError):
        FrequencyGrid(max_end=10.9)
    FrequencyGrid(max_end=11.0)


# -- Lorentzian -----------------------------------------------------------------


def test_gain_at_centre_is_peak():
    p = LorentzianParams(0.7, 10.9, 40.0)
    assert spectra.lorentzian_gain(10.9, p) == 0.7


def test_gain_at_half_width_is_half_peak():
    p = LorentzianParams(1.0, 10.9, 40.0)
    assert spectra.lorentzian_gain(10.9 + 0.02, p) == pytest.approx(0.5, rel=1e-9)
    assert spectra.lorentzian_gain(10.9 - 0.02, p) == pytest.approx(0.5, rel=1e-9)


def test_gain_hand_value():
    p = LorentzianParams(1.0, 10.89, 50.0)
    assert spectra.lorentzian_gain(10.94, p) == pytest.approx(0.2, rel=1e-9)


@given(st.integers(0, 200), st.floats(10.0, 200.0))
def test_gain_symmetric(k, width):
    # dyadic centre and offset make v - v_B exact on both sides
    p = LorentzianParams(1.0, 10.875, width)
    d = k / 1024.0
    assert spectra.lorentzian_gain(10.875 + d, p) == spectra.lorentzian_gain(10.875 - d, p)


@given(st.floats(1.0, 200.0))
def test_gain_decreases_away_from_centre(width):
    p = LorentzianParams(1.0, 10.9, width)
    v = 10.9 + np.linspace(0.0, 0.1, 50)
    g = spectra.lorentzian_gain(v, p)
    assert np.all(np.diff(g) <= 0)
    v2 = 10.9 - np.linspace(0.0, 0.1, 50)
    assert np.all(np.diff(spectra.lorentzian_gain(v2, p)) <= 0)


@pytest.mark.parametrize("kw", [dict(g_B=0.0), dict(dv_B=0.0), dict(g_B=-1.0)])
def test_lorentzian_params_invariants(kw):
    base = dict(g_B=1.0, v_B=10.9, dv_B=50.0)
    with pytest.raises(ValueError):
        LorentzianParams(**{**base, **kw})


def test_params_within_grid_span():
    g = FrequencyGrid()
    assert LorentzianParams(1, 10.9, 50).within(g)
    assert LorentzianParams(1, g.start - 0.9 * g.span, 50).within(g)
    assert not LorentzianParams(1, g.end + 1.1 * g.span, 50).within(g)


# -- calibration ----------------------------------------------------------------


def test_temp_to_bfs_values():
    assert spectra.temp_to_bfs(0.0) == 10.855
    assert spectra.temp_to_bfs(70.0) == pytest.approx(10.925, abs=1e-12)
    assert spectra.bfs_to_temp(10.855) == 0.0


@pytest.mark.parametrize("t", [0.0, 35.25, 70.0])
def test_temperature_round_trip(t):
    assert abs(spectra.bfs_to_temp(spectra.temp_to_bfs(t)) - t) <= 1e-9


@given(st.floats(-50.0, 150.0))
def test_temperature_round_trip_property(t):
    assert abs(spectra.bfs_to_temp(spectra.temp_to_bfs(t, CAL), CAL) - t) <= 1e-9


def test_calibration_rejects_nonpositive_coefficient():
    with pytest.raises(spectra.InvalidCalibrationError):
        TemperatureCalibration(coeff=0.0)
    with pytest.raises(spectra.InvalidCalibrationError):
        TemperatureCalibration(coeff=-1.0)


# -- training set ---------------------------------------------------------------


def test_training_set_shape_and_order(training_set):
    ts = training_set
    assert ts.samples.shape == (141 * 36, 220)
    assert len(ts) == 5076
    # temperature-major: first 36 rows share the first temperature
    assert np.all(ts.labels[:36] == 0.0)
    assert ts.labels[36] == 0.5
    np.testing.assert_array_equal(ts.linewidths[:36], np.arange(30.0, 101.0, 2.0))


def test_single_row_training_set():
    ts = spectra.generate_training_set(t_range=(0, 0, 0.5), lw_range=(50, 50, 2))
    assert ts.samples.shape == (1, 220)
    freqs = ts.grid.frequencies()
    nearest = int(np.argmin(np.abs(freqs - spectra.temp_to_bfs(0.0))))
    assert int(np.argmax(ts.samples[0])) == nearest


def test_training_rows_peak_at_most_one(training_set):
    ts = training_set
    peaks = ts.samples.max(axis=1)
    assert np.all(peaks <= 1.0)
    freqs = ts.grid.frequencies()
    bfs = spectra.temp_to_bfs(ts.labels)
    on_grid = np.isclose(((bfs - freqs[0]) * 1e3) % 1.0, 0.0, atol=1e-6) | np.isclose(
        ((bfs - freqs[0]) * 1e3) % 1.0, 1.0, atol=1e-6
    )
    assert np.allclose(peaks[on_grid], 1.0, atol=1e-12)
    assert np.all(peaks[~on_grid] < 1.0)


@given(
    st.integers(1, 8), st.integers(1, 5), st.floats(0.25, 5.0), st.floats(1.0, 10.0)
)
def test_training_row_count(nt, nl, t_step, l_step):
    ts = spectra.generate_training_set(
        t_range=(10.0, 10.0 + (nt - 1) * t_step, t_step),
        lw_range=(40.0, 40.0 + (nl - 1) * l_step, l_step),
    )
    assert len(ts) == nt * nl


def test_out_of_grid_bfs_warns():
    with pytest.warns(spectra.GridRangeWarning):
        spectra.generate_training_set(t_range=(0, 200, 50), lw_range=(50, 50, 1))


def test_in_grid_training_does_not_warn():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        spectra.generate_training_set(t_range=(0, 70, 35), lw_range=(50, 50, 1))


# -- normalization and noise ----------------------------------------------------


@given(st.integers(0, 10_000), st.floats(-5.0, 20.0))
def test_normalize_invariants(seed, snr):
    g = FrequencyGrid()
    clean = spectra.lorentzian_gain(g.frequencies(), LorentzianParams(1.0, 10.9, 60.0))
    noisy = spectra.add_noise(GainSpectrum(g, clean), snr, seed).amplitudes
    n = spectra.normalize(noisy)
    assert abs(n.max() - 1.0) <= 1e-9
    assert n.min() >= -1.0


def test_noise_sigma_convention():
    assert spectra.noise_sigma(12.0) == pytest.approx(10 ** -1.2)
    assert spectra.noise_sigma(12.0) == pytest.approx(0.0631, abs=1e-4)


def test_infinite_snr_is_identity():
    g = FrequencyGrid()
    s = GainSpectrum(g, spectra.lorentzian_gain(g.frequencies(), LorentzianParams(1, 10.9, 50)))
    out = spectra.add_noise(s, spectra.NOISELESS, 3)
    np.testing.assert_array_equal(out.amplitudes, s.amplitudes)


def test_add_noise_deterministic():
    g = FrequencyGrid()
    s = GainSpectrum(g, spectra.lorentzian_gain(g.frequencies(), LorentzianParams(1, 10.9, 50)))
    a = spectra.add_noise(s, 8.0, 42).amplitudes
    b = spectra.add_noise(s, 8.0, 42).amplitudes
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != spectra.add_noise(s, 8.0, 43).amplitudes.tobytes()


def _replicas(snr, n, seed0=0, peak=1.0):
    g = FrequencyGrid()
    s = GainSpectrum(g, spectra.lorentzian_gain(g.frequencies(), LorentzianParams(peak, 10.9, 50)))
    return [spectra.add_noise(s, snr, seed0 + k) for k in range(n)]


def test_estimate_snr_recovers_requested_value():
    est = spectra.estimate_snr(_replicas(8.0, 100))
    assert abs(est - 8.0) <= 0.5


def test_estimate_snr_noiseless_is_infinite():
    g = FrequencyGrid()
    s = GainSpectrum(g, spectra.lorentzian_gain(g.frequencies(), LorentzianParams(1, 10.9, 50)))
    assert spectra.estimate_snr([s, s, s]) == math.inf


def test_estimate_snr_needs_two_replicas():
    with pytest.raises(spectra.InsufficientDataError):
        spectra.estimate_snr(_replicas(8.0, 1))


def test_doubling_sigma_lowers_estimate_by_3db():
    # same seeds, so the noise draws are scaled copies; only the noisy peak
    # mean keeps the shift from being exact
    a = _replicas(10.0, 1000)
    b = _replicas(10.0 - 10 * math.log10(2), 1000)
    d = spectra.estimate_snr(a) - spectra.estimate_snr(b)
    assert d == pytest.approx(10 * math.log10(2), abs=0.1)


def test_averaging_32_copies_gains_7_53_db():
    g = FrequencyGrid()
    clean = spectra.lorentzian_gain(g.frequencies(), LorentzianParams(1, 10.9, 50))
    rng = np.random.default_rng(7)
    sigma = spectra.noise_sigma(4.5)
    n_trials = 1000
    single = clean + rng.normal(0, sigma, (n_trials, g.count))
    avg = clean + rng.normal(0, sigma, (n_trials, 32, g.count)).mean(axis=1)
    k = int(np.argmax(clean))
    snr1 = 10 * np.log10(single[:, k].mean() / single[:, k].std(ddof=1))
    snr32 = 10 * np.log10(avg[:, k].mean() / avg[:, k].std(ddof=1))
    assert snr32 - snr1 == pytest.approx(10 * math.log10(math.sqrt(32)), abs=0.2)


# -- persistence ----------------------------------------------------------------


@pytest.mark.parametrize("suffix", [".csv", ".npz"])
def test_training_set_round_trip(tmp_path, suffix):
    ts = spectra.generate_training_set(t_range=(0, 10, 2.5), lw_range=(30, 40, 5))
    path = spectra.save_training_set(ts, tmp_path / f"ts{suffix}")
    back = spectra.load_training_set(path)
    np.testing.assert_array_equal(back.samples, ts.samples)
    np.testing.assert_array_equal(back.labels, ts.labels)
    np.testing.assert_array_equal(back.linewidths, ts.linewidths)
    assert back.grid.count == ts.grid.count
    assert back.grid.start == pytest.approx(ts.grid.start)
    assert back.grid.step == pytest.approx(ts.grid.step)


def test_csv_header_layout(tmp_path):
    ts = spectra.generate_training_set(t_range=(0, 1, 1), lw_range=(30, 30, 1))
    path = spectra.save_training_set(ts, tmp_path / "ts.csv")
    header = path.read_text().splitlines()[0].split(",")
    assert header[:2] == ["label_degC", "linewidth_MHz"]
    assert float(header[2]) == 10.78
    assert len(header) == 2 + 220
