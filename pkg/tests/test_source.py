import numpy as np
import pytest
from scipy import integrate, stats

from cxtalk.source import (SourceParams, TemporalModel, central_peak_counts, peak_counts, peak_weights,
                           poisson_pmf, trigger_density)


def test_poisson_pmf_examples():
    assert poisson_pmf(1.0, 0) == pytest.approx(np.exp(-1.0), rel=1e-15)
    assert poisson_pmf(0.0, 0) == 1.0
    assert poisson_pmf(0.0, 3) == 0.0
    assert abs(sum(poisson_pmf(5.0, m) for m in range(201)) - 1.0) < 1e-12


@pytest.mark.parametrize("lam,m", [(3.0, 25), (40.0, 35), (100.0, 150), (0.5, 2)])
def test_poisson_pmf_matches_scipy(lam, m):
    assert poisson_pmf(lam, m) == pytest.approx(stats.poisson.pmf(m, lam), rel=1e-11)


def test_poisson_pmf_rejects_negative():
    with pytest.raises(ValueError):
        poisson_pmf(-1.0, 0)
    with pytest.raises(ValueError):
        poisson_pmf(1.0, -1)


def test_peak_counts_example():
    p = SourceParams(lam=0.01, eps_a=0.1, eps_b=0.1, n_pulses=10**6)
    want = 0.01 * (1 - np.exp(-0.01)) ** 2 * (10**6 - 1)
    assert peak_counts(p, 1) == pytest.approx(want, rel=1e-13)
    assert peak_counts(p, 1) == pytest.approx(0.99005, abs=1e-5)
    assert central_peak_counts(p) == pytest.approx(1.0, rel=1e-13)


def test_peak_counts_ratio_identity():
    p = SourceParams(lam=0.3, eps_b=0.2, n_pulses=1000)
    for n in (1, 2, 7, 100):
        ratio = peak_counts(p, n) / peak_counts(p, n + 1)
        assert ratio == pytest.approx(np.exp(p.eps_b * p.lam) * (p.n_pulses - n) / (p.n_pulses - n - 1), rel=1e-13)


def test_zero_lambda():
    p = SourceParams(lam=0.0)
    assert all(peak_counts(p, n) == 0 for n in (1, 2, 3))
    assert central_peak_counts(p) == 0


def test_peak_counts_errors():
    p = SourceParams(n_pulses=10)
    with pytest.raises(ValueError):
        peak_counts(p, 10)
    with pytest.raises(ValueError):
        peak_counts(p, 0)


def test_saturation_and_monotonicity():
    p = SourceParams(lam=60.0, n_pulses=10**4)
    assert peak_counts(p, 1) == pytest.approx(p.eps_a * p.eps_b * (p.n_pulses - 1), rel=1e-12)
    q = SourceParams(lam=0.5)
    vals = [peak_counts(q, n) for n in range(1, 30)]
    assert np.all(np.diff(vals) < 0)


def test_peak_weights_mirror():
    p = SourceParams(lam=0.1)
    w = peak_weights(p, range(-3, 4))
    assert np.allclose(w, w[::-1], rtol=0, atol=0)
    assert w[3] == central_peak_counts(p)


def test_param_validation():
    with pytest.raises(ValueError):
        SourceParams(lam=-1)
    with pytest.raises(ValueError):
        SourceParams(eps_a=0.0)
    with pytest.raises(ValueError):
        SourceParams(tau0=0)
    with pytest.raises(ValueError):
        TemporalModel(sigma=0)


def test_trigger_density():
    m = TemporalModel(1.41)
    assert trigger_density(m, "A", 0.0) == pytest.approx(1 / (1.41 * np.sqrt(2 * np.pi)), rel=1e-12)
    assert trigger_density(m, "A", 0.0) == pytest.approx(0.282938, abs=1e-6)
    t = np.linspace(-60, 60, 240001)
    assert integrate.trapezoid(trigger_density(m, "B", t), t) == pytest.approx(7.0, rel=1e-9)
    c = trigger_density(m, "A", np.array([-5.0, 0.3, 17.0]), mode="continuous")
    assert np.all(c == c[0])
    with pytest.raises(ValueError):
        trigger_density(m, "A", 0.0, mode="bursty")
