import json

import numpy as np
import pytest

from cxtalk.crosstalk import (CoincidenceSpectrum, SpectrumFormatError, correlate_numeric, crosstalk_spectrum,
                              default_grid, dip_depth, load_spectrum_csv, loss_multiplier, loss_multiplier_curve,
                              measure_fwhm, peak_fwhm, save_spectrum_csv, spectrum_no_crosstalk,
                              spectrum_with_crosstalk, write_sidecar)
from cxtalk.source import SourceParams, TemporalModel, peak_counts
from cxtalk.waveform import make_pair

SRC, TM = SourceParams(), TemporalModel()
F_A, F_B = 0.033, 0.024


@pytest.fixture(scope="module")
def grid():
    return default_grid(TM, SRC.tau0)


def test_grid_covers_peaks(grid):
    assert grid[-1] >= 3 * 11.8 + 5 * 1.41 * np.sqrt(2)
    assert np.any(grid == 0.0)
    with pytest.raises(ValueError, match="span"):
        spectrum_no_crosstalk(SRC, TM, np.arange(-20, 20.01, 0.1))


def test_fwhm_closed_form_and_numeric():
    assert peak_fwhm(TM) == pytest.approx(2 * np.sqrt(2 * np.log(2)) * 1.41 * np.sqrt(2), rel=1e-15)
    assert peak_fwhm(TM) == pytest.approx(4.696, abs=1e-3)
    assert abs(measure_fwhm(SRC, TM) - peak_fwhm(TM)) < 1e-6


def test_numeric_correlation_matches(grid):
    base = spectrum_no_crosstalk(SRC, TM, grid)
    taus = np.random.default_rng(1).uniform(-40, 40, 100)
    num = correlate_numeric(SRC, TM, taus)
    w = np.array(base.metadata["peak_weights"])
    s = TM.sigma * np.sqrt(2)
    closed = sum(wi * np.exp(-0.5 * ((taus - i * SRC.tau0) / s) ** 2) / (s * np.sqrt(2 * np.pi))
                 for i, wi in zip(base.metadata["peak_indices"], w))
    sel = closed > 1e-12 * closed.max()
    assert sel.sum() > 50
    assert np.max(np.abs(num[sel] / closed[sel] - 1)) <= 1e-6
    # spectrum values are the same density integrated over one bin (midpoint rule)
    on_grid = correlate_numeric(SRC, TM, grid[::37]) * base.bin_width
    big = on_grid > 1e-9
    assert np.allclose(base.values[::37][big], on_grid[big], rtol=1e-6, atol=0)


def test_continuous_is_flat(grid):
    c = spectrum_no_crosstalk(SRC, TM, grid, mode="continuous")
    assert np.all(c.values == c.values[0])


def test_pulsed_side_peaks_follow_peak_counts(grid):
    src = SourceParams(lam=0.3)
    base = spectrum_no_crosstalk(src, TM, grid)
    spec = crosstalk_spectrum(base, short_pair(0.012), short_pair(0.013), F_A, F_B)
    for s in (base, spec):
        for n in (1, 2):
            j1 = int(np.argmin(np.abs(s.tau - n * src.tau0)))
            j2 = int(np.argmin(np.abs(s.tau - (n + 1) * src.tau0)))
            want = peak_counts(src, n) / peak_counts(src, n + 1)
            assert s.values[j1] / s.values[j2] == pytest.approx(want, rel=1e-6)


def short_pair(k):
    # pulse confined to [0, 10] ns, so multipliers are exactly 1 beyond |tau| = 10 ns
    return make_pair(k=k, t0=-1.0, n=221)


def test_anchored_multiplier_anchors(pairs):
    pa, pb = pairs
    assert loss_multiplier(pa, pb, F_A, tau=0.0) == pytest.approx(1 - F_A, abs=1e-12)
    lm = loss_multiplier_curve(pa, pb, F_A, np.array([0.0, 500.0, -500.0]))
    assert lm.ms_inf == pa.signal.vmin
    assert lm.values[1] == 1.0 and lm.values[2] == 1.0
    at_star = loss_multiplier(pa, pb, F_A, tau=lm.tau_star)
    assert at_star == pytest.approx(1 - F_A, abs=1e-12)


@pytest.mark.parametrize("variant", ["anchored", "literal"])
def test_zero_coupling_multiplier(variant, grid):
    z = make_pair(k=0.0)
    lm = loss_multiplier_curve(z, z, 0.02, grid, variant)
    assert np.all(lm.values == 1.0)
    base = spectrum_no_crosstalk(SRC, TM, grid)
    assert np.array_equal(crosstalk_spectrum(base, z, z, 0.0, 0.0, variant).values, base.values)


def test_multiplier_rejects_bad_f(pairs):
    with pytest.raises(ValueError):
        loss_multiplier(*pairs, 1.0)


def test_dip_identity(grid, pairs):
    base = spectrum_no_crosstalk(SRC, TM, grid, mode="continuous")
    spec = crosstalk_spectrum(base, *pairs, F_A, F_B)
    assert abs(dip_depth(spec) - (1 - (1 - F_A) * (1 - F_B))) < 1e-9
    assert dip_depth(spec) == pytest.approx(0.05621, abs=1e-5)
    assert np.all(spec.values <= base.values)
    short = crosstalk_spectrum(base, short_pair(0.012), short_pair(0.013), F_A, F_B)
    assert np.all(short.values <= base.values)
    far = np.abs(grid) > 11.1
    assert np.array_equal(short.values[far], base.values[far])
    assert np.all(short.values[np.abs(grid) < 1] < base.values[np.abs(grid) < 1])
    assert abs(dip_depth(base)) < 1e-12


def test_dip_identity_general_overlap(grid):
    # shifted extremum: w(0) < 1 and the identity must still hold exactly
    pa = make_pair(k=0.012, rise=1.0, fall=2.0)
    pb = make_pair(k=0.013, rise=0.5, fall=6.0)
    base = spectrum_no_crosstalk(SRC, TM, grid, mode="continuous")
    ma = loss_multiplier_curve(pa, pb, F_A, grid, "anchored", "A")
    mb = loss_multiplier_curve(pb, pa, F_B, grid, "anchored", "B")
    j = int(np.argmin(np.abs(grid)))
    spec = spectrum_with_crosstalk(base, ma, mb)
    want = 1 - (1 - F_A * ma.overlap[j]) * (1 - F_B * mb.overlap[j])
    # the 6 ns tail still touches the outer background, so compare against C itself
    assert abs((1 - spec.values[j] / base.values[j]) - want) < 1e-12
    assert abs(dip_depth(spec) - want) < 1e-4


def test_pulsed_depth_matches_continuous(grid, pairs):
    cont = dip_depth(crosstalk_spectrum(spectrum_no_crosstalk(SRC, TM, grid, mode="continuous"), *pairs, F_A, F_B))
    # at lam -> 0 the crosstalk-free peaks are equal and the pulsed depth is the continuous one
    src = SourceParams(lam=1e-4)
    base = spectrum_no_crosstalk(src, TM, grid)
    puls = dip_depth(crosstalk_spectrum(base, *pairs, F_A, F_B))
    assert abs(puls - cont) < 1e-3
    # at finite lam the central/side imbalance of the bare source multiplies in
    base = spectrum_no_crosstalk(SRC, TM, grid)
    puls = dip_depth(crosstalk_spectrum(base, *pairs, F_A, F_B))
    rel = 1 - (1 - puls) / (1 - dip_depth(base))
    assert abs(rel - cont) < 1e-3


def test_literal_variant_is_tiny(grid, pairs):
    base = spectrum_no_crosstalk(SRC, TM, grid, mode="continuous")
    d = dip_depth(crosstalk_spectrum(base, *pairs, F_A, F_B, "literal"))
    assert 0 < d < 2e-3


def test_symmetry(grid):
    p = make_pair(k=0.012)
    base = spectrum_no_crosstalk(SRC, TM, grid)
    spec = crosstalk_spectrum(base, p, p, F_A, F_A)
    v = spec.values
    assert np.allclose(v, v[::-1], rtol=1e-9, atol=0)


def test_dip_width_tracks_waveform_not_sigma(grid):
    base = spectrum_no_crosstalk(SRC, TM, grid, mode="continuous")

    def width(fall, sigma):
        tm = TemporalModel(sigma)
        b = spectrum_no_crosstalk(SRC, tm, grid, mode="continuous")
        p = make_pair(k=0.012, fall=fall)
        loss = 1 - crosstalk_spectrum(b, p, p, F_A, F_A).values / b.values
        return np.ptp(grid[loss > 0.5 * loss.max()])

    assert base.values.size == grid.size
    assert width(4.0, 1.41) > 1.5 * width(1.5, 1.41)
    assert width(2.0, 0.5) == pytest.approx(width(2.0, 3.0), abs=1e-12)


def test_k_to_zero_limit(grid):
    base = spectrum_no_crosstalk(SRC, TM, grid)
    prev = None
    for k in (0.05, 0.01, 0.001, 1e-5):
        p = make_pair(k=k)
        f = 3 * k  # F scales linearly with k for smooth PHDs
        gap = np.max(np.abs(crosstalk_spectrum(base, p, p, f, f).values - base.values))
        if prev is not None:
            assert gap < prev
        prev = gap
    assert prev < 1e-4 * base.values.max()


def test_grid_mismatch(grid, pairs):
    base = spectrum_no_crosstalk(SRC, TM, grid)
    ma = loss_multiplier_curve(*pairs, F_A, grid[:-1])
    mb = loss_multiplier_curve(pairs[1], pairs[0], F_B, grid, detector="B")
    with pytest.raises(ValueError, match="grid"):
        spectrum_with_crosstalk(base, ma, mb)


def test_dip_depth_errors():
    s = CoincidenceSpectrum(np.arange(-1, 1.01, 0.5), np.ones(5), metadata={"mode": "pulsed"})
    with pytest.raises(ValueError):
        dip_depth(s)


def test_csv_round_trip(tmp_path, grid, pairs):
    spec = crosstalk_spectrum(spectrum_no_crosstalk(SRC, TM, grid), *pairs, F_A, F_B)
    path = tmp_path / "s.csv"
    save_spectrum_csv(spec, path, "hello")
    write_sidecar(path, {"metadata": spec.metadata})
    back = load_spectrum_csv(path)
    assert np.allclose(back.values, spec.values, rtol=1e-8, atol=0)
    assert back.metadata["mode"] == "pulsed"
    assert json.loads((tmp_path / "s.csv.json").read_text())["metadata"]["tau0"] == SRC.tau0


def test_csv_errors_carry_row(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("tau_ns,value\n-0.1,1\n0.0,oops\n0.1,1\n")
    with pytest.raises(SpectrumFormatError) as exc:
        load_spectrum_csv(p)
    assert exc.value.row == 3
    p.write_text("")
    with pytest.raises(SpectrumFormatError):
        load_spectrum_csv(p)
