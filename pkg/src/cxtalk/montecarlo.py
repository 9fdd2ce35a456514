"""Event-level Monte Carlo of the start/stop coincidence chain.

Each event is one start trigger.  Stop pulses around it are drawn from the
source model, pulse heights from the PHDs, and each pulse height is reduced
by the partner's crosstalk scaled with the unit overlap profile of the
waveforms.  Surviving start/stop pairs are histogrammed like a TAC/MCA.

Random numbers come from a Philox generator keyed by ``(seed, chunk)``;
chunks have a fixed size, so results do not depend on the worker count.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .crosstalk import CoincidenceSpectrum, loss_multiplier_curve
from .discriminator import (DiscriminatorConfig, PulseHeightDistribution, accepted_fraction,
                            loss_fraction_F)
from .source import SourceParams, TemporalModel
from .waveform import WaveformPair, _sample_shifted, make_pair

THREADS_ENV = "CXTALK_THREADS"
CHUNK = 1 << 16

_TOTAL_KEYS = ("starts", "starts_above_threshold", "stops", "stops_in_window",
               "accepted_pairs", "vetoed_pairs", "coincidences")


def default_phd_a():
    return PulseHeightDistribution.gamma(2.0, 0.068)


def default_phd_b():
    return PulseHeightDistribution.gamma(2.0, 0.078)


@dataclass
class McConfig:
    seed: int = 20240901
    n_events: int = 10**6
    mode: str = "continuous"
    source: SourceParams = field(default_factory=SourceParams)
    temporal: TemporalModel = field(default_factory=TemporalModel)
    pair_a: WaveformPair = field(default_factory=lambda: make_pair(k=0.012))
    pair_b: WaveformPair = field(default_factory=lambda: make_pair(k=0.013))
    phd_a: PulseHeightDistribution = field(default_factory=default_phd_a)
    phd_b: PulseHeightDistribution = field(default_factory=default_phd_b)
    disc: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    bin_width: float = 0.1
    tac_window: float = 42.0
    pair_mode: str = "first-hit"
    waveform_sum: bool = False
    chunk_size: int = CHUNK
    workers: int | None = None

    def validate(self):
        if self.n_events < 1:
            raise ValueError("n_events must be >= 1")
        if self.bin_width <= 0:
            raise ValueError("bin_width must be positive")
        if self.mode not in ("continuous", "pulsed"):
            raise ValueError(f"unknown source mode {self.mode!r}")
        if self.pair_mode not in ("first-hit", "all-pairs"):
            raise ValueError(f"unknown pair mode {self.pair_mode!r}")
        if self.mode == "pulsed":
            reach = max(abs(i) for i in self.temporal.stop_peak_indices) * self.source.tau0
            if self.tac_window < reach:
                raise ValueError(f"TAC window +-{self.tac_window} ns does not cover the stop peaks at +-{reach:.2f} ns")
        th = self.disc.v_th
        for name, phd in (("phd_a", self.phd_a), ("phd_b", self.phd_b)):
            if phd.support[1] < th or (phd.kind == "parametric" and phd.family != "delta" and phd.sf(th) <= 0):
                raise ValueError(f"{name} has no pulses above the {th} V threshold; no coincidences possible")


@dataclass
class McResult:
    spectrum: CoincidenceSpectrum
    totals: dict

    @property
    def errors(self):
        return self.spectrum.errors


def _n_workers(cfg):
    if cfg.workers is not None:
        return max(1, int(cfg.workers))
    return max(1, int(os.environ.get(THREADS_ENV, "1")))


def _rng(seed, chunk):
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, chunk], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class _Profiles:
    """Tabulated unit overlap profiles for the start and stop channels."""

    def __init__(self, cfg: McConfig):
        step = cfg.pair_a.signal.dt
        reach = cfg.tac_window + cfg.bin_width + 5 * cfg.temporal.sigma
        m = int(np.ceil(reach / step))
        self.grid = step * np.arange(-m, m + 1)
        self.chi_a = loss_multiplier_curve(cfg.pair_a, cfg.pair_b, 0.0, self.grid, detector="A").overlap
        self.chi_b = loss_multiplier_curve(cfg.pair_b, cfg.pair_a, 0.0, self.grid, detector="B").overlap

    def a(self, dt):
        return np.interp(dt, self.grid, self.chi_a, left=0.0, right=0.0)

    def b(self, dt):
        return np.interp(dt, self.grid, self.chi_b, left=0.0, right=0.0)


def _unit_shapes(cfg):
    """Signals scaled to unit height and crosstalk per unit partner height."""
    out = {}
    for name, pair, k in (("a", cfg.pair_a, cfg.disc.k_a), ("b", cfg.pair_b, cfg.disc.k_b)):
        height = abs(pair.signal.vmin)
        sig = pair.signal.scaled(1.0 / height)
        if k > 0 and pair.coupling_ratio <= 0:
            raise ValueError("waveform-sum mode needs a crosstalk trace shape for a non-zero coupling")
        scale = 0.0 if k == 0 else k / pair.coupling_ratio / height
        out[name] = (sig, pair.crosstalk.scaled(scale))
    return out


def _draw_stops(cfg, rng, n, half):
    """Stop pulses of ``n`` start events: event index and delay (stop - start)."""
    if cfg.mode == "continuous":
        # one uniformly placed stop per start plus Poisson accidentals
        mu = cfg.source.rate * 1e-9 * 2 * half
        extra = rng.poisson(mu, n)
        per_event = 1 + extra
        ev = np.repeat(np.arange(n), per_event)
        dt = rng.uniform(-half, half, ev.size)
        return ev, dt
    s, tm = cfg.source, cfg.temporal
    t_start = rng.normal(0.0, tm.sigma, n)
    mu = s.eps_b * s.lam
    idx = np.array(tm.stop_peak_indices)
    counts = rng.poisson(mu, (n, idx.size))
    ev = np.repeat(np.repeat(np.arange(n), idx.size), counts.ravel())
    peak = np.repeat(np.tile(idx, n), counts.ravel())
    t_stop = peak * s.tau0 + rng.normal(0.0, tm.sigma, ev.size)
    return ev, t_stop - t_start[ev]


def _run_chunk(cfg: McConfig, prof: _Profiles, shapes, chunk: int, n: int):
    rng = _rng(cfg.seed, chunk)
    th, k_a, k_b = cfg.disc.v_th, cfg.disc.k_a, cfg.disc.k_b
    m = int(round(cfg.tac_window / cfg.bin_width))
    half = (m + 0.5) * cfg.bin_width
    v_a = cfg.phd_a.sample(rng, n)
    ev, dt = _draw_stops(cfg, rng, n, half)
    v_b = cfg.phd_b.sample(rng, ev.size)

    if shapes is None:
        red_a = np.bincount(ev, weights=k_b * v_b * prof.a(dt), minlength=n)
        eff_a = v_a - red_a
        eff_b = v_b - k_a * v_a[ev] * prof.b(dt)
    else:
        eff_a, eff_b = _waveform_sum_heights(shapes, v_a, ev, dt, v_b)

    in_win = np.abs(dt) < half
    cand = (eff_a >= th)[ev] & (eff_b >= th) & in_win
    clean = (v_a >= th)[ev] & (v_b >= th) & in_win
    ev_c, dt_c = ev[cand], dt[cand]
    if cfg.pair_mode == "first-hit" and ev_c.size:
        order = np.lexsort((dt_c, ev_c))
        ev_s, dt_s = ev_c[order], dt_c[order]
        first = np.ones(ev_s.size, dtype=bool)
        first[1:] = ev_s[1:] != ev_s[:-1]
        dt_c = dt_s[first]
    j = np.floor((dt_c + half) / cfg.bin_width).astype(np.int64)
    j = np.clip(j, 0, 2 * m)
    hist = np.bincount(j, minlength=2 * m + 1).astype(np.int64)
    totals = {
        "starts": n,
        "starts_above_threshold": int(np.count_nonzero(v_a >= th)),
        "stops": int(ev.size),
        "stops_in_window": int(np.count_nonzero(in_win)),
        "accepted_pairs": int(np.count_nonzero(cand)),
        "vetoed_pairs": int(np.count_nonzero(clean & ~cand)),
        "coincidences": int(hist.sum()),
    }
    return hist, totals


def _waveform_sum_heights(shapes, v_a, ev, dt, v_b):
    # Slow reference path: superpose the full traces pair by pair.
    sig_a, ct_a = shapes["a"]
    sig_b, ct_b = shapes["b"]
    ta, tb = sig_a.times, sig_b.times
    eff_a = v_a.copy()
    eff_b = np.empty_like(v_b)
    starts = np.unique(ev)
    for e in starts:
        sel = np.flatnonzero(ev == e)
        total = v_a[e] * sig_a.samples
        for s in sel:
            total = total + v_b[s] * _sample_shifted(ct_b, ta + dt[s])
            trace_b = v_b[s] * sig_b.samples + v_a[e] * _sample_shifted(ct_a, tb - dt[s])
            eff_b[s] = -trace_b.min()
        eff_a[e] = -total.min()
    return eff_a, eff_b


def run(cfg: McConfig) -> McResult:
    """Simulate ``cfg.n_events`` start triggers and histogram the delays."""
    cfg.validate()
    prof = _Profiles(cfg)
    shapes = _unit_shapes(cfg) if cfg.waveform_sum else None
    sizes = [min(cfg.chunk_size, cfg.n_events - s) for s in range(0, cfg.n_events, cfg.chunk_size)]
    jobs = list(enumerate(sizes))
    workers = _n_workers(cfg)
    if workers == 1 or len(jobs) == 1:
        parts = [_run_chunk(cfg, prof, shapes, c, n) for c, n in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda job: _run_chunk(cfg, prof, shapes, *job), jobs))
    hist = np.sum([p[0] for p in parts], axis=0)
    totals = {k: int(sum(p[1][k] for p in parts)) for k in _TOTAL_KEYS}
    m = int(round(cfg.tac_window / cfg.bin_width))
    tau = cfg.bin_width * np.arange(-m, m + 1)
    meta = {"mode": cfg.mode, "source": "montecarlo", "seed": int(cfg.seed), "n_events": int(cfg.n_events),
            "pair_mode": cfg.pair_mode, "tau0": cfg.source.tau0,
            "peak_indices": list(cfg.temporal.stop_peak_indices)}
    spec = CoincidenceSpectrum(tau, hist.astype(float), np.sqrt(hist.astype(float)), meta)
    return McResult(spec, totals)


# -- analytic comparison helpers ---------------------------------------------

def analytic_loss_fractions(cfg: McConfig):
    """(F_A, F_B) from the pulse-height integrals for this configuration."""
    d = cfg.disc
    return (loss_fraction_F(cfg.phd_a, cfg.phd_b, d.k_b, d.v_th),
            loss_fraction_F(cfg.phd_b, cfg.phd_a, d.k_a, d.v_th))


def dip_profile(cfg: McConfig, tau, f_a=None, f_b=None):
    """Predicted relative coincidence loss 1 - (1 - F_A chi_A)(1 - F_B chi_B)."""
    if f_a is None or f_b is None:
        f_a, f_b = analytic_loss_fractions(cfg)
    prof = _Profiles(cfg)
    return 1.0 - (1.0 - f_a * prof.a(tau)) * (1.0 - f_b * prof.b(tau))


def matched_dip(spec: CoincidenceSpectrum, shape, sel=None):
    """Least-squares fit of ``counts = B (1 - d * shape)``; returns (d, sigma_d).

    ``shape`` is the predicted loss profile normalised to 1 at tau = 0, so
    ``d`` estimates the zero-delay dip from every bin the dip touches.
    """
    y = spec.values if sel is None else spec.values[sel]
    g = np.asarray(shape if sel is None else np.asarray(shape)[sel], dtype=float)
    X = np.column_stack([np.ones_like(g), -g])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    a, b = coef
    var = max(a, 1.0)  # Poisson variance per bin
    cov = var * np.linalg.inv(X.T @ X)
    d = b / a
    grad = np.array([-b / a**2, 1.0 / a])
    return float(d), float(np.sqrt(grad @ cov @ grad))


def central_bin_dip(spec: CoincidenceSpectrum, background_from=None):
    """(dip, sigma) from the single tau = 0 bin against the outer background."""
    reach = min(-spec.tau[0], spec.tau[-1])
    cut = 0.5 * reach if background_from is None else background_from
    bg = spec.values[np.abs(spec.tau) >= cut]
    c0 = spec.values[int(np.argmin(np.abs(spec.tau)))]
    b = bg.mean()
    r = c0 / b
    sig = r * np.sqrt(1.0 / max(c0, 1.0) + 1.0 / max(bg.sum(), 1.0))
    return float(1.0 - r), float(sig)


def joint_loss_check(cfg: McConfig, n=10**6, seed=None):
    """Compare the joint survival of fully overlapping pairs with the product
    of the single-channel survivals.  Returns a dict of both estimates."""
    rng = _rng(cfg.seed if seed is None else seed, 2**32 + 1)
    d = cfg.disc
    v_a = cfg.phd_a.sample(rng, n)
    v_b = cfg.phd_b.sample(rng, n)
    both = (v_a >= d.v_th) & (v_b >= d.v_th)
    ok_a = v_a - d.k_b * v_b >= d.v_th
    ok_b = v_b - d.k_a * v_a >= d.v_th
    nb = both.sum()
    joint = np.count_nonzero(ok_a & ok_b & both) / nb
    marg_a = np.count_nonzero(ok_a & both) / nb
    marg_b = np.count_nonzero(ok_b & both) / nb
    f_a, f_b = analytic_loss_fractions(cfg)
    return {"joint_survival": float(joint), "product_of_marginals": float(marg_a * marg_b),
            "analytic_product": float((1 - f_a) * (1 - f_b)),
            "discrepancy": float(abs(joint - marg_a * marg_b)), "pairs": int(nb)}


# -- emission statistics -----------------------------------------------------

@dataclass
class EmissionEstimate:
    """Coincidence tallies per peak index from the emission oracle."""

    peak_index: np.ndarray
    counts: np.ndarray
    errors: np.ndarray
    n_pulses: int
    counting: str

    def count(self, n):
        return float(self.counts[list(self.peak_index).index(n)])

    def error(self, n):
        return float(self.errors[list(self.peak_index).index(n)])


def emission_oracle(source: SourceParams, n_pulses_sim: int, seed: int, max_peak: int = 5,
                    counting: str = "first-hit") -> EmissionEstimate:
    """Pulse-by-pulse emission and detection without waveforms.

    Each pulse emits Poisson(lam) electrons; each electron independently
    reaches detector A (eps_a), detector B (eps_b) or neither.
    ``first-hit`` tallies, for every pulse with an A detection, the delay
    (in pulses) to the first later-or-same pulse with a B detection, like a
    start/stop TAC.  ``pairs`` tallies every A-B electron pair instead.
    """
    if n_pulses_sim < 10**4:
        raise ValueError("emission oracle needs at least 1e4 pulses")
    if source.eps_a + source.eps_b > 1:
        raise ValueError("eps_a + eps_b must not exceed 1 (each electron reaches one detector)")
    rng = _rng(seed, 2**33)
    m = rng.poisson(source.lam, n_pulses_sim)
    n_a = rng.binomial(m, source.eps_a)
    rest = m - n_a
    p_b = source.eps_b / (1.0 - source.eps_a) if source.eps_a < 1 else 0.0
    n_b = rng.binomial(rest, p_b)
    peaks = np.arange(max_peak + 1)
    counts = np.zeros(peaks.size)
    if counting == "first-hit":
        big = np.iinfo(np.int64).max
        pos = np.where(n_b > 0, np.arange(n_pulses_sim), big)
        nxt = np.minimum.accumulate(pos[::-1])[::-1]
        starts = np.flatnonzero(n_a > 0)
        gap = nxt[starts]
        gap = gap[gap != big] - starts[gap != big]
        counts = np.bincount(gap[gap <= max_peak], minlength=max_peak + 1)[:max_peak + 1].astype(float)
    elif counting == "pairs":
        for n in peaks:
            counts[n] = float(np.dot(n_a[:n_pulses_sim - n], n_b[n:]))
    else:
        raise ValueError(f"unknown counting mode {counting!r}")
    return EmissionEstimate(peaks, counts, np.sqrt(counts), int(n_pulses_sim), counting)
