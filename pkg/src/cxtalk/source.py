"""Emission statistics and trigger-time densities.

Pulsed photoemission: the number of electrons per laser pulse is Poisson
with mean ``lam``; coincidence peak heights follow from the per-detector
efficiencies.  A continuous (thermal) source has a flat trigger density.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

TAU0 = 11.8  # ns, laser pulse period
SIGMA = 1.41  # ns, per-detector trigger jitter
CONTINUOUS_RATE = 1e5  # 1/s


@dataclass(frozen=True)
class SourceParams:
    lam: float = 0.01
    tau0: float = TAU0
    eps_a: float = 0.1
    eps_b: float = 0.1
    n_pulses: int = 10**6
    rate: float = CONTINUOUS_RATE

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.tau0 <= 0:
            raise ValueError("tau0 must be positive")
        for name in ("eps_a", "eps_b"):
            e = getattr(self, name)
            if not 0 < e <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {e}")
        if self.n_pulses < 1:
            raise ValueError("n_pulses must be >= 1")
        if self.rate <= 0:
            raise ValueError("rate must be positive")


@dataclass(frozen=True)
class TemporalModel:
    sigma: float = SIGMA
    stop_peak_indices: tuple = field(default=tuple(range(-3, 4)))

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "stop_peak_indices", tuple(int(i) for i in self.stop_peak_indices))
        if not self.stop_peak_indices:
            raise ValueError("need at least one stop peak index")


def poisson_pmf(lam, m):
    """P(m; lam) = lam**m exp(-lam) / m!."""
    if lam < 0 or m < 0:
        raise ValueError("poisson_pmf needs lam >= 0 and m >= 0")
    m = int(m)
    if lam == 0:
        return 1.0 if m == 0 else 0.0
    if m <= 20:
        return lam**m * np.exp(-lam) / float(np.prod(np.arange(1, m + 1), dtype=float))
    return float(np.exp(m * np.log(lam) - lam - gammaln(m + 1)))


def peak_counts(p: SourceParams, n: int) -> float:
    """Expected coincidences in the peak at delay n*tau0, n >= 1."""
    if n < 1:
        raise ValueError("peak_counts is defined for n >= 1; use central_peak_counts for n = 0")
    if n >= p.n_pulses:
        raise ValueError(f"peak index {n} must be below the number of pulses {p.n_pulses}")
    return (p.eps_a * p.eps_b * (-np.expm1(-p.lam)) ** 2
            * np.exp(-(n - 1) * p.eps_b * p.lam) * (p.n_pulses - n))


def central_peak_counts(p: SourceParams) -> float:
    """Expected zero-delay coincidences, from pairs within one pulse."""
    return p.eps_a * p.eps_b * p.lam**2 * p.n_pulses


def peak_weights(p: SourceParams, indices) -> np.ndarray:
    """Expected counts for each stop peak index; negative indices mirror positive ones."""
    return np.array([central_peak_counts(p) if i == 0 else peak_counts(p, abs(i)) for i in indices])


def _gauss(t, mu, sigma):
    return np.exp(-0.5 * ((t - mu) / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))


def trigger_density(model: TemporalModel, detector: str, t, tau0: float = TAU0,
                    mode: str = "pulsed", weights=None):
    """Trigger-time density of detector ``"A"`` or ``"B"`` (1/ns).

    In continuous mode both densities are identically one.  ``weights``
    optionally scales the stop-detector components (one per peak index).
    """
    t = np.asarray(t, dtype=float)
    if mode == "continuous":
        return np.ones_like(t)
    if mode != "pulsed":
        raise ValueError(f"unknown source mode {mode!r}")
    if detector == "A":
        return _gauss(t, 0.0, model.sigma)
    if detector == "B":
        idx = model.stop_peak_indices
        w = np.ones(len(idx)) if weights is None else np.asarray(weights, dtype=float)
        out = np.zeros_like(t)
        for i, wi in zip(idx, w):
            out = out + wi * _gauss(t, i * tau0, model.sigma)
        return out
    raise ValueError(f"detector must be 'A' or 'B', got {detector!r}")
