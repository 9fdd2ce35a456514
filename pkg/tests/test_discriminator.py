import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cxtalk.discriminator import (DiscriminatorConfig, PulseHeightDistribution as PHD, accepted_fraction,
                                  accepted_fraction_with_crosstalk, adaptive_trapezoid, load_phd_csv,
                                  loss_fraction_F, save_phd_csv, threshold_sweep)

U = PHD.uniform(0.0, 1.0)


def notched():
    edges = [0.0, 0.05, 0.10, 0.14, 0.17, 0.25, 0.5, 0.75, 1.0]
    counts = [5, 20, 30, 0, 40, 60, 40, 10]
    return PHD.empirical(edges, counts)


def test_accepted_fraction_uniform():
    assert accepted_fraction(U, 0.15) == pytest.approx(0.85, rel=1e-12)
    assert accepted_fraction(U, 0.0) == 1.0
    with pytest.warns(RuntimeWarning):
        assert accepted_fraction(U, 1.5) == 0.0


def test_accepted_fraction_monotone():
    g = PHD.gamma(2.0, 0.07)
    vals = [accepted_fraction(g, v) for v in np.linspace(0, 0.8, 40)]
    assert np.all(np.diff(vals) <= 0)


def test_point_mass_partner():
    delta = PHD.delta(1.0)
    p_ct = accepted_fraction_with_crosstalk(U, delta, 0.012, 0.15)
    assert p_ct == pytest.approx(0.838, rel=1e-6)
    assert loss_fraction_F(U, delta, 0.012, 0.15) == pytest.approx(0.012 / 0.85, rel=1e-6)
    assert loss_fraction_F(U, delta, 0.012, 0.15) == pytest.approx(0.01412, abs=1e-5)


def test_zero_coupling():
    g = PHD.gamma(2.0, 0.07)
    assert accepted_fraction_with_crosstalk(g, U, 0.0, 0.15) == accepted_fraction(g, 0.15)
    assert loss_fraction_F(g, U, 0.0, 0.15) == 0.0


def test_uniform_pair_matches_analytic():
    # lost mass is k*V for V >= v_th; averaged over V_other uniform on [v_th, 1]
    for k in (0.012, 0.013, 0.05):
        want = k * 0.5 * (1 + 0.15) / 0.85
        assert loss_fraction_F(U, U, k, 0.15) == pytest.approx(want, rel=1e-6)


def test_loss_fraction_errors():
    with pytest.raises(ValueError):
        loss_fraction_F(U, U, 0.01, 1.5)
    with pytest.raises(ValueError):
        loss_fraction_F(U, U, -0.01, 0.15)


def test_default_gamma_targets():
    a, b = PHD.gamma(2.0, 0.068), PHD.gamma(2.0, 0.078)
    assert loss_fraction_F(a, b, 0.013, 0.15) == pytest.approx(0.033, abs=5e-4)
    assert loss_fraction_F(b, a, 0.012, 0.15) == pytest.approx(0.024, abs=5e-4)


@pytest.mark.parametrize("self_phd,other_phd", [(PHD.gamma(2.0, 0.068), PHD.gamma(2.0, 0.078)),
                                                (PHD.truncnorm(0.4, 0.2), PHD.uniform(0.0, 1.2))])
def test_first_order_slope(self_phd, other_phd):
    v_th, k = 0.15, 1e-4
    f = loss_fraction_F(self_phd, other_phd, k, v_th)
    mean_other = other_phd.expect(lambda v: v, lower=v_th) / other_phd.expect(np.ones_like, lower=v_th)
    slope = float(self_phd.pdf(v_th)) * mean_other / accepted_fraction(self_phd, v_th)
    assert f / k == pytest.approx(slope, rel=0.05)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 0.2), st.floats(0.0, 0.2), st.floats(0.05, 0.4))
def test_F_monotone_in_k(k1, k2, v_th):
    lo, hi = sorted((k1, k2))
    g, h = PHD.gamma(2.0, 0.1), PHD.gamma(3.0, 0.1)
    assert loss_fraction_F(g, h, lo, v_th) <= loss_fraction_F(g, h, hi, v_th) + 1e-9


def test_sweep_flat_positive():
    rows = threshold_sweep(U, U, 0.012, (0.05, 0.9), 18)
    assert [r[0] for r in rows] == sorted(r[0] for r in rows)
    assert min(r[1] for r in rows) > 0


def test_sweep_notch_zero():
    phd = notched()
    rows = threshold_sweep(phd, phd, 0.013, (0.15, 0.15), 1)
    assert rows[0][1] == 0.0
    assert loss_fraction_F(phd, phd, 0.013, 0.30) > 0


def test_sweep_zero_k():
    assert all(f == 0.0 for _, f in threshold_sweep(U, U, 0.0, (0.1, 0.8), 8))


def test_sweep_outside_support():
    with pytest.raises(ValueError):
        threshold_sweep(U, U, 0.01, (0.1, 1.2), 5)


def test_empirical_partial_bins():
    e = PHD.empirical([0.0, 0.5, 1.0], [1, 3])
    assert accepted_fraction(e, 0.25) == pytest.approx(0.125 + 0.75)
    assert e.mass_between(0.5, 0.75) == pytest.approx(0.375)


def test_phd_csv_round_trip(tmp_path):
    phd = notched()
    save_phd_csv(phd, tmp_path / "p.csv")
    back = load_phd_csv(tmp_path / "p.csv")
    assert np.allclose(back.edges, phd.edges)
    assert np.allclose(back.density, phd.density)


def test_phd_csv_errors(tmp_path):
    bad = tmp_path / "neg.csv"
    bad.write_text("bin_left_V,bin_right_V,counts\n0,0.5,3\n0.5,1,-1\n")
    with pytest.raises(ValueError, match="negative"):
        load_phd_csv(bad)
    over = tmp_path / "over.csv"
    over.write_text("bin_left_V,bin_right_V,counts\n0,0.5,3\n0.4,1,1\n")
    with pytest.raises(ValueError):
        load_phd_csv(over)
    dec = tmp_path / "dec.csv"
    dec.write_text("bin_left_V,bin_right_V,counts\n0.5,1,3\n0,0.5,1\n")
    with pytest.raises(ValueError):
        load_phd_csv(dec)
    one = tmp_path / "one.csv"
    one.write_text("bin_left_V,bin_right_V,counts\n0.99,1.01,7\n")
    p = load_phd_csv(one)
    assert accepted_fraction(p, 0.15) == 1.0
    assert loss_fraction_F(U, p, 0.012, 0.15) == pytest.approx(0.012 / 0.85, rel=1e-3)


def test_sampling_matches_cdf():
    rng = np.random.default_rng(7)
    for phd in (PHD.gamma(2.0, 0.07), U, notched(), PHD.truncnorm(0.4, 0.2)):
        x = phd.sample(rng, 200_000)
        for v in (0.1, 0.2, 0.4):
            assert np.mean(x >= v) == pytest.approx(float(phd.sf(v)), abs=4e-3)


def test_adaptive_trapezoid():
    val = adaptive_trapezoid(lambda x, seg: np.sin(x), np.array([0.0, np.pi / 2, np.pi]))
    assert val == pytest.approx(2.0, rel=1e-6)


def test_config_validation():
    with pytest.raises(ValueError):
        DiscriminatorConfig(v_th=-0.1)
    with pytest.raises(ValueError):
        DiscriminatorConfig(k_a=0.6)
