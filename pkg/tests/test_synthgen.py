import numpy as np
import pytest

from ropesat.preprocess import preprocess_dataset
from ropesat.spectra import FINGERPRINT_GRID, Dataset, SpectraError, Spectrum
from ropesat.synthgen import (
    ClassProfile,
    Peak,
    default_profiles,
    gaussian_peaks,
    generate_cohort,
    load_profiles,
    planted_band_profiles,
    render,
    save_profiles,
)


def test_noise_free_single_peak():
    prof = ClassProfile("p", (Peak(1650.0, 20.0, 1.0, 0.0),))
    ds = generate_cohort([prof], 4, seed=3)
    X = ds.X
    assert np.array_equal(X, np.broadcast_to(X[0], X.shape))
    assert np.argmax(X[0]) == FINGERPRINT_GRID.nearest_index(1650.0)
    w = FINGERPRINT_GRID.values
    analytic = np.array([np.exp(-0.5 * ((wj - 1650.0) / 20.0) ** 2) for wj in w])
    np.testing.assert_allclose(X[0], analytic, rtol=0, atol=1e-12)


def test_counts_and_determinism():
    ds = generate_cohort(default_profiles(), 50, seed=7)
    assert len(ds) == 150
    assert [ds.labels.count(c) for c in ds.class_names] == [50, 50, 50]
    again = generate_cohort(default_profiles(), 50, seed=7)
    assert np.array_equal(ds.X, again.X)
    other = generate_cohort(default_profiles(), 50, seed=8)
    assert not np.array_equal(ds.X, other.X)


def test_single_band_difference_is_localized():
    base = [Peak(1650, 15, 1.0, 0.05), Peak(1540, 14, 0.6, 0.03), Peak(1235, 12, 0.3, 0.0)]
    up = list(base)
    up[2] = Peak(1235, 12, 0.6, 0.0)
    ds = generate_cohort([ClassProfile("a", tuple(base), noise_sd=0.001),
                          ClassProfile("b", tuple(up), noise_sd=0.001)], 200, seed=1)
    y = np.array(ds.labels)
    diff = np.abs(ds.X[y == "b"].mean(0) - ds.X[y == "a"].mean(0))
    band = ds.grid.index_mask(1260, 1210)
    assert diff[band].max() > 5 * diff[~band].max()


def test_scatter_and_offset_removed_by_preprocessing():
    prof = default_profiles()[0]
    amps = [p.amplitude_mean for p in prof.peak_specs]
    rng = np.random.default_rng(0)
    spectra = []
    for i in range(6):
        y = render(prof, FINGERPRINT_GRID, amps, scatter=float(np.exp(0.3 * rng.normal())),
                   offset=float(rng.normal()))
        spectra.append(Spectrum(str(i), prof.label, "", y))
    out = preprocess_dataset(Dataset(FINGERPRINT_GRID, spectra, (prof.label,))).X
    assert np.max(np.linalg.norm(out - out[0], axis=1)) <= 1e-6


def test_linear_slope_is_not_exactly_removed():
    # SNV divides by an sd that depends on the slope, so only its shape is removed
    prof = default_profiles()[0]
    amps = [p.amplitude_mean for p in prof.peak_specs]
    ys = [render(prof, FINGERPRINT_GRID, amps, slope=s) for s in (0.0, 0.5)]
    spectra = [Spectrum(str(i), prof.label, "", y) for i, y in enumerate(ys)]
    out = preprocess_dataset(Dataset(FINGERPRINT_GRID, spectra, (prof.label,))).X
    ratio = out[1] / np.where(out[0] == 0, 1, out[0])
    assert np.linalg.norm(out[1] - out[0]) > 1e-6
    np.testing.assert_allclose(ratio[np.abs(out[0]) > 1e-6], ratio[np.argmax(np.abs(out[0]))],
                               rtol=1e-8)


def test_profile_validation_and_round_trip(tmp_path):
    with pytest.raises(SpectraError):
        ClassProfile("x", (Peak(1650, 0.0, 1.0),))
    with pytest.raises(SpectraError):
        ClassProfile("x", (Peak(1650, 10, 1.0, -1.0),))
    with pytest.raises(SpectraError, match="outside the grid"):
        generate_cohort([ClassProfile("x", (Peak(3000, 10, 1.0),))], 2)
    with pytest.raises(SpectraError):
        generate_cohort([], 2)
    p = tmp_path / "profiles.json"
    profs = planted_band_profiles()
    save_profiles(profs, p)
    assert load_profiles(p) == profs


def test_planted_profiles_differ_in_one_peak():
    profs = planted_band_profiles()
    means = np.array([[p.amplitude_mean for p in prof.peak_specs] for prof in profs])
    for row in means:
        assert np.sum(row != np.median(means, axis=0)) == 1


def test_gaussian_peaks_sum():
    w = np.array([1000.0, 1010.0])
    peaks = [Peak(1000, 10, 2.0), Peak(1010, 5, 1.0)]
    expected = [2.0 + np.exp(-2.0), 2.0 * np.exp(-0.5) + 1.0]
    np.testing.assert_allclose(gaussian_peaks(w, peaks), expected, rtol=1e-15)
