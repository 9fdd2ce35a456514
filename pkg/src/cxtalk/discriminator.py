"""Pulse-height distributions, threshold acceptance and crosstalk loss fractions.

Heights are stored as positive magnitudes of the negative-going pulses.
A coincident crosstalk pulse of height ``k * V_other`` subtracts from the
magnitude, so a pulse of height V survives the threshold only if
``V - k * V_other >= v_th``.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

V_TH = 0.15  # V
K_A = 0.012
K_B = 0.013

_TAIL = 1e-14  # survival probability used to cut unbounded parametric supports


@dataclass(frozen=True)
class DiscriminatorConfig:
    v_th: float = V_TH
    k_a: float = K_A
    k_b: float = K_B

    def __post_init__(self):
        if self.v_th < 0:
            raise ValueError("v_th must be >= 0")
        for name in ("k_a", "k_b"):
            k = getattr(self, name)
            if not 0 <= k <= 0.5:
                raise ValueError(f"{name} must lie in [0, 0.5], got {k}")


class PulseHeightDistribution:
    """Unit-normalised density of pulse heights.

    Build with one of the constructors: :meth:`empirical`, :meth:`uniform`,
    :meth:`gamma`, :meth:`truncnorm` or :meth:`delta`.
    """

    def __init__(self, kind, *, edges=None, counts=None, family=None, params=None):
        self.kind = kind
        if kind == "empirical":
            edges = np.asarray(edges, dtype=float)
            counts = np.asarray(counts, dtype=float)
            if edges.ndim != 1 or edges.size != counts.size + 1 or counts.size == 0:
                raise ValueError("empirical PHD needs len(edges) == len(counts) + 1 >= 2")
            if np.any(np.diff(edges) <= 0):
                raise ValueError("bin edges must be strictly increasing")
            if np.any(counts < 0):
                raise ValueError("bin counts must be non-negative")
            if counts.sum() <= 0:
                raise ValueError("PHD has no counts")
            self.edges = edges
            self.counts = counts
            self.density = counts / counts.sum() / np.diff(edges)
            self._cum = np.concatenate(([0.0], np.cumsum(counts) / counts.sum()))
            self.support = (float(edges[0]), float(edges[-1]))
        elif kind == "parametric":
            self.family = family
            self.params = dict(params)
            self._dist, self.support = _frozen(family, self.params)
        else:
            raise ValueError(f"unknown PHD kind {kind!r}")

    # -- constructors -------------------------------------------------
    @classmethod
    def empirical(cls, edges, counts):
        return cls("empirical", edges=edges, counts=counts)

    @classmethod
    def from_bins(cls, lefts, rights, counts):
        """Bins given as (left, right) pairs; gaps become zero-count bins."""
        lefts, rights, counts = (np.asarray(a, dtype=float) for a in (lefts, rights, counts))
        if lefts.size == 0:
            raise ValueError("PHD needs at least one bin")
        if np.any(rights <= lefts):
            raise ValueError("each bin needs left < right")
        if np.any(lefts[1:] < rights[:-1] - 1e-12):
            raise ValueError("bins overlap or are not increasing")
        edges, cnt = [lefts[0]], []
        for i in range(lefts.size):
            if i and lefts[i] > edges[-1] + 1e-12:
                edges.append(lefts[i])
                cnt.append(0.0)
            edges.append(rights[i])
            cnt.append(counts[i])
        return cls.empirical(edges, cnt)

    @classmethod
    def uniform(cls, lo=0.0, hi=1.0):
        return cls("parametric", family="uniform", params={"lo": lo, "hi": hi})

    @classmethod
    def gamma(cls, shape, scale):
        return cls("parametric", family="gamma", params={"shape": shape, "scale": scale})

    @classmethod
    def truncnorm(cls, mean, sd, lo=0.0, hi=np.inf):
        return cls("parametric", family="truncnorm", params={"mean": mean, "sd": sd, "lo": lo, "hi": hi})

    @classmethod
    def delta(cls, v0):
        return cls("parametric", family="delta", params={"v0": v0})

    @classmethod
    def from_spec(cls, spec: dict):
        """Build from a config mapping such as ``{"family": "gamma", "shape": 2, "scale": 0.1}``."""
        spec = dict(spec)
        family = spec.pop("family")
        if family == "empirical":
            return load_phd_csv(spec["path"])
        return cls("parametric", family=family, params=spec)

    def describe(self) -> dict:
        if self.kind == "empirical":
            return {"kind": "empirical", "bins": int(self.counts.size), "support": list(self.support)}
        return {"kind": "parametric", "family": self.family, **self.params}

    # -- density functions ----------------------------------------------
    def pdf(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "empirical":
            j = np.searchsorted(self.edges, v, side="right") - 1
            inside = (j >= 0) & (j < self.counts.size)
            return np.where(inside, self.density[np.clip(j, 0, self.counts.size - 1)], 0.0)
        if self.family == "delta":
            raise ValueError("a point-mass PHD has no density")
        return self._dist.pdf(v)

    def cdf(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "empirical":
            j = np.clip(np.searchsorted(self.edges, v, side="right") - 1, 0, self.counts.size - 1)
            c = self._cum[j] + self.density[j] * (v - self.edges[j])
            return np.clip(np.where(v < self.edges[0], 0.0, np.where(v >= self.edges[-1], 1.0, c)), 0.0, 1.0)
        if self.family == "delta":
            return np.where(v >= self.params["v0"], 1.0, 0.0)
        return self._dist.cdf(v)

    def sf(self, v):
        """Probability of a height >= v."""
        v = np.asarray(v, dtype=float)
        if self.kind == "parametric" and self.family == "delta":
            return np.where(v <= self.params["v0"], 1.0, 0.0)
        if self.kind == "parametric":
            return self._dist.sf(v)
        return 1.0 - self.cdf(v)

    def mass_between(self, a, b):
        """Probability of a height in [a, b); exactly zero across empty bins."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self.kind == "empirical":
            lo = np.clip(a[..., None], self.edges[:-1], self.edges[1:])
            hi = np.clip(b[..., None], self.edges[:-1], self.edges[1:])
            return np.sum(self.density * np.clip(hi - lo, 0.0, None), axis=-1)
        if self.family == "delta":
            v0 = self.params["v0"]
            return np.where((a <= v0) & (v0 < b), 1.0, 0.0)
        return np.clip(self._dist.cdf(b) - self._dist.cdf(a), 0.0, None)

    def breakpoints(self):
        if self.kind == "empirical":
            return self.edges
        if self.family == "uniform":
            return np.array(self.support)
        return np.array([])

    def expect(self, func, lower=-np.inf, extra_breaks=(), rtol=1e-6):
        """Integral of pdf(v) * func(v) over v >= lower."""
        if self.kind == "parametric" and self.family == "delta":
            v0 = self.params["v0"]
            return float(func(np.array([v0]))[0]) if v0 >= lower else 0.0
        lo = max(lower, self.support[0])
        hi = self.support[1]
        if self.kind == "parametric" and not np.isfinite(hi):
            hi = float(self._dist.isf(_TAIL))
        if lo >= hi:
            return 0.0
        nodes = np.concatenate(([lo, hi], self.breakpoints(), np.asarray(extra_breaks, dtype=float)))
        nodes = np.unique(nodes[(nodes >= lo) & (nodes <= hi)])
        if self.kind == "empirical":
            mid = 0.5 * (nodes[:-1] + nodes[1:])
            seg_density = self.pdf(mid)
            return adaptive_trapezoid(lambda x, s: seg_density[s] * func(x), nodes, rtol=rtol)
        return adaptive_trapezoid(lambda x, s: self._dist.pdf(x) * func(x), nodes, rtol=rtol)

    def sample(self, rng, size):
        if self.kind == "parametric" and self.family == "gamma":
            return rng.gamma(self.params["shape"], self.params["scale"], size)
        if self.kind == "parametric" and self.family == "uniform":
            return rng.uniform(self.support[0], self.support[1], size)
        u = rng.random(size)
        if self.kind == "empirical":
            j = np.clip(np.searchsorted(self._cum, u, side="right") - 1, 0, self.counts.size - 1)
            # skip zero-width CDF steps left by empty bins
            dens = self.density[j]
            frac = np.where(dens > 0, (u - self._cum[j]) / np.where(dens > 0, dens, 1.0), 0.0)
            return self.edges[j] + np.clip(frac, 0.0, np.diff(self.edges)[j])
        if self.family == "delta":
            return np.full(size, float(self.params["v0"]))
        return self._dist.ppf(u)


def _frozen(family, p):
    if family == "uniform":
        lo, hi = float(p["lo"]), float(p["hi"])
        if not hi > lo:
            raise ValueError("uniform PHD needs hi > lo")
        return stats.uniform(loc=lo, scale=hi - lo), (lo, hi)
    if family == "gamma":
        shape, scale = float(p["shape"]), float(p["scale"])
        if shape <= 0 or scale <= 0:
            raise ValueError("gamma PHD needs positive shape and scale")
        return stats.gamma(shape, scale=scale), (0.0, np.inf)
    if family == "truncnorm":
        mean, sd = float(p["mean"]), float(p["sd"])
        lo, hi = float(p.get("lo", 0.0)), float(p.get("hi", np.inf))
        if sd <= 0 or not hi > lo:
            raise ValueError("truncnorm PHD needs sd > 0 and hi > lo")
        return stats.truncnorm((lo - mean) / sd, (hi - mean) / sd, loc=mean, scale=sd), (lo, hi)
    if family == "delta":
        v0 = float(p["v0"])
        if v0 < 0:
            raise ValueError("point-mass height must be >= 0")
        return None, (v0, v0)
    raise ValueError(f"unknown PHD family {family!r}")


def adaptive_trapezoid(g, nodes, rtol=1e-6, atol=1e-15, max_level=16):
    """Trapezoid rule on each [nodes[i], nodes[i+1]], halving the step until
    successive estimates agree to ``rtol``.  ``g(x, seg)`` receives the
    sample points and the segment index of each point."""
    nodes = np.asarray(nodes, dtype=float)
    a, b = nodes[:-1], nodes[1:]
    seg = np.arange(a.size)[:, None]
    prev = None
    for level in range(2, max_level + 1):
        u = np.linspace(0.0, 1.0, 2**level + 1)
        x = a[:, None] + (b - a)[:, None] * u[None, :]
        y = g(x, np.broadcast_to(seg, x.shape))
        est = float(np.sum(np.trapezoid(y, x, axis=1)))
        if prev is not None and abs(est - prev) <= rtol * abs(est) + atol:
            return est
        prev = est
    return est


def accepted_fraction(phd: PulseHeightDistribution, v_th: float) -> float:
    """Fraction of pulses with height >= v_th."""
    if v_th > phd.support[1]:
        warnings.warn(f"threshold {v_th} V lies above the PHD support {phd.support}", RuntimeWarning, stacklevel=2)
        return 0.0
    if v_th <= phd.support[0] and not (phd.kind == "parametric" and phd.family == "delta"):
        return 1.0
    return float(phd.sf(v_th))


def _lost_and_norm(phd_self, phd_other, k_other, v_th, rtol):
    # Integrand: self-mass pushed below threshold by a partner pulse of height V.
    def lost(v):
        return phd_self.mass_between(np.full_like(v, v_th), v_th + k_other * v)

    breaks = ()
    if k_other > 0:
        sb = phd_self.breakpoints()
        breaks = (sb - v_th) / k_other
    num = phd_other.expect(lost, lower=v_th, extra_breaks=breaks, rtol=rtol)
    norm = phd_other.expect(lambda v: np.ones_like(v), lower=v_th, rtol=rtol)
    return num, norm


def accepted_fraction_with_crosstalk(phd_self, phd_other, k_other, v_th, rtol=1e-6) -> float:
    """Accepted fraction of self pulses when each coincides with an
    above-threshold partner pulse, averaged over the partner's PHD."""
    base = accepted_fraction(phd_self, v_th)
    if k_other == 0 or base == 0:
        return base
    num, norm = _lost_and_norm(phd_self, phd_other, k_other, v_th, rtol)
    if norm <= 0:
        warnings.warn("partner PHD has no pulses above threshold", RuntimeWarning, stacklevel=2)
        return 0.0
    return base - num / norm


def loss_fraction_F(phd_self, phd_other, k_other, v_th, rtol=1e-6) -> float:
    """Fraction of accepted self pulses lost at full signal/crosstalk overlap."""
    if k_other < 0:
        raise ValueError("coupling ratio must be >= 0")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        base = accepted_fraction(phd_self, v_th)
    if base <= 0:
        raise ValueError(f"threshold {v_th} V rejects every pulse; loss fraction undefined")
    if k_other == 0:
        return 0.0
    num, norm = _lost_and_norm(phd_self, phd_other, k_other, v_th, rtol)
    if norm <= 0:
        raise ValueError(f"threshold {v_th} V rejects every partner pulse; loss fraction undefined")
    return float(min(max(num / norm / base, 0.0), 1.0))


def threshold_sweep(phd_self, phd_other, k_other, v_range, steps):
    """Loss fraction on ``steps`` evenly spaced thresholds; list of (v_th, F)."""
    lo, hi = sorted(v_range)
    for phd in (phd_self, phd_other):
        s_lo, s_hi = phd.support
        if lo < min(s_lo, 0.0) or hi >= s_hi:
            raise ValueError(f"threshold range [{lo}, {hi}] V leaves the PHD support {phd.support}")
    grid = np.linspace(lo, hi, int(steps))
    return [(float(v), loss_fraction_F(phd_self, phd_other, k_other, v)) for v in grid]


def load_phd_csv(path) -> PulseHeightDistribution:
    """Read ``bin_left_V,bin_right_V,counts`` rows."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise ValueError(f"{path}: empty PHD file")
    if [h.strip() for h in rows[0]] != ["bin_left_V", "bin_right_V", "counts"]:
        raise ValueError(f"{path}: expected header 'bin_left_V,bin_right_V,counts'")
    body = rows[1:]
    if not body:
        raise ValueError(f"{path}: no bins")
    vals = []
    for n, row in enumerate(body, start=2):
        try:
            l, r, c = (float(x) for x in row)
        except ValueError:
            raise ValueError(f"{path}: malformed row {n}") from None
        if c < 0:
            raise ValueError(f"{path}: negative count in row {n}")
        vals.append((l, r, c))
    arr = np.array(vals)
    return PulseHeightDistribution.from_bins(arr[:, 0], arr[:, 1], arr[:, 2])


def save_phd_csv(phd: PulseHeightDistribution, path) -> None:
    if phd.kind != "empirical":
        raise ValueError("only empirical PHDs can be written as histograms")
    with Path(path).open("w", newline="") as fh:
        fh.write("bin_left_V,bin_right_V,counts\n")
        for l, r, c in zip(phd.edges[:-1], phd.edges[1:], phd.counts):
            fh.write(f"{l:.9g},{r:.9g},{c:.9g}\n")


def save_sweep_csv(rows, path, header_comment=None) -> None:
    """Write (v_th, F, ...) rows; the first two columns are ``v_th_V,F``."""
    with Path(path).open("w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        width = len(rows[0]) if rows else 2
        cols = ["v_th_V", "F"] if width == 2 else ["v_th_V", "F_A", "F_B", "predicted_dip"][:width]
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(f"{x:.9g}" for x in r) + "\n")
