"""Analytic coincidence spectra with and without crosstalk.

The crosstalk-free spectrum is the cross-correlation of the start and stop
trigger densities.  Crosstalk multiplies it by one loss factor per
detector, each built from the modified pulse extremum as a function of
the start-stop delay.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .source import SourceParams, TemporalModel, peak_weights, trigger_density
from .waveform import WaveformPair, modified_extremum_curve, overlap_span

BIN_WIDTH = 0.1  # ns
MIN_HALF_SPAN = 42.0  # ns
FWHM_PER_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))


@dataclass
class CoincidenceSpectrum:
    """Coincidence counts (or expected counts) per delay bin."""

    tau: np.ndarray
    values: np.ndarray
    errors: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.errors is not None:
            self.errors = np.asarray(self.errors, dtype=float)
        if self.tau.shape != self.values.shape or self.tau.ndim != 1 or self.tau.size < 2:
            raise ValueError("spectrum needs matching 1-D tau and value arrays with >= 2 bins")
        d = np.diff(self.tau)
        if np.any(d <= 0) or np.ptp(d) > 1e-6 * d.mean():
            raise ValueError("spectrum delay grid must be uniform and increasing")

    @property
    def bin_width(self) -> float:
        return float((self.tau[-1] - self.tau[0]) / (self.tau.size - 1))

    def copy(self, values=None, errors=None, **meta):
        md = dict(self.metadata)
        md.update(meta)
        return CoincidenceSpectrum(self.tau.copy(),
                                   self.values.copy() if values is None else values,
                                   (None if self.errors is None else self.errors.copy()) if errors is None else errors,
                                   md)


@dataclass
class LossMultiplier:
    """Fractional count survival of one detector versus start-stop delay."""

    f: float
    taus: np.ndarray
    ms_curve: np.ndarray
    ms_inf: float
    ms_star: float
    tau_star: float
    variant: str
    detector: str

    @property
    def overlap(self) -> np.ndarray:
        """Unit-normalised overlap profile w(tau); 1 at full overlap, 0 far away."""
        span = self.ms_star - self.ms_inf
        if span <= 0:
            return np.zeros_like(self.ms_curve)
        return (self.ms_curve - self.ms_inf) / span

    @property
    def values(self) -> np.ndarray:
        if self.variant == "anchored":
            return 1.0 - self.f * self.overlap
        if self.variant == "literal":
            if self.ms_star - self.ms_inf <= 0:
                return np.ones_like(self.ms_curve)
            return (self.ms_curve / self.ms_inf - 1.0) * self.f + 1.0
        raise ValueError(f"unknown loss-multiplier variant {self.variant!r}")


def default_grid(temporal: TemporalModel | None = None, tau0: float | None = None,
                 bin_width: float = BIN_WIDTH, min_half_span: float = MIN_HALF_SPAN) -> np.ndarray:
    """Symmetric bin-centre grid including tau = 0.

    The half span is at least ``min_half_span`` and is widened so that the
    outermost stop peak keeps five correlation widths of margin.
    """
    half = min_half_span
    if temporal is not None and tau0 is not None:
        half = max(half, _required_half_span(temporal, tau0))
    m = int(np.ceil(half / bin_width - 1e-9))
    return bin_width * np.arange(-m, m + 1)


def _required_half_span(temporal, tau0):
    reach = max(abs(i) for i in temporal.stop_peak_indices) * tau0
    return reach + 5.0 * temporal.sigma * np.sqrt(2.0)


def correlation_sigma(temporal: TemporalModel) -> float:
    return temporal.sigma * np.sqrt(2.0)


def peak_fwhm(temporal: TemporalModel) -> float:
    """Closed-form FWHM of each coincidence peak."""
    return FWHM_PER_SIGMA * correlation_sigma(temporal)


def spectrum_no_crosstalk(source: SourceParams, temporal: TemporalModel, grid=None,
                          mode: str = "pulsed", background: float = 1.0) -> CoincidenceSpectrum:
    """Crosstalk-free spectrum in expected counts per bin.

    Pulsed mode sums one Gaussian of width sigma*sqrt(2) per stop peak,
    weighted by the expected peak counts; continuous mode is flat at
    ``background`` counts per bin.
    """
    tau = default_grid(temporal, source.tau0) if grid is None else np.asarray(grid, dtype=float)
    meta = {"mode": mode, "tau0": source.tau0, "sigma": temporal.sigma,
            "peak_indices": list(temporal.stop_peak_indices)}
    if mode == "continuous":
        return CoincidenceSpectrum(tau, np.full(tau.shape, float(background)), metadata=meta)
    if mode != "pulsed":
        raise ValueError(f"unknown source mode {mode!r}")
    idx = temporal.stop_peak_indices
    need_lo = min(idx) * source.tau0 - 5 * correlation_sigma(temporal)
    need_hi = max(idx) * source.tau0 + 5 * correlation_sigma(temporal)
    if tau[0] > need_lo + 1e-9 or tau[-1] < need_hi - 1e-9:
        raise ValueError(f"delay grid [{tau[0]:.3f}, {tau[-1]:.3f}] ns is too small; "
                         f"it must span [{need_lo:.3f}, {need_hi:.3f}] ns")
    bw = (tau[-1] - tau[0]) / (tau.size - 1)
    w = peak_weights(source, idx)
    s = correlation_sigma(temporal)
    dens = np.zeros_like(tau)
    for i, wi in zip(idx, w):
        dens += wi * np.exp(-0.5 * ((tau - i * source.tau0) / s) ** 2) / (s * np.sqrt(2 * np.pi))
    meta["peak_weights"] = [float(x) for x in w]
    return CoincidenceSpectrum(tau, dens * bw, metadata=meta)


def correlate_numeric(source: SourceParams, temporal: TemporalModel, taus, dt: float = 0.01,
                      indices=None) -> np.ndarray:
    """Trapezoid-rule cross-correlation of the pulsed trigger densities (1/ns)."""
    idx = temporal.stop_peak_indices if indices is None else tuple(indices)
    model = TemporalModel(temporal.sigma, idx)
    w = peak_weights(source, idx)
    half = 10.0 * temporal.sigma
    t = np.arange(-half, half + dt / 2, dt)
    ga = trigger_density(model, "A", t, source.tau0)
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    out = np.empty(taus.shape)
    for j, tau in enumerate(taus):
        gb = trigger_density(model, "B", t + tau, source.tau0, weights=w)
        out[j] = np.trapezoid(ga * gb, t)
    return out


def measure_fwhm(source: SourceParams, temporal: TemporalModel, index: int = 0) -> float:
    """FWHM of one isolated peak of the numerically integrated correlation."""
    centre = index * source.tau0
    s = correlation_sigma(temporal)

    def f(tau):
        return correlate_numeric(source, temporal, [tau], indices=(index,))[0]

    half = 0.5 * f(centre)
    if half <= 0:
        raise ValueError(f"peak {index} is empty")
    xtol = 1e-12
    right = brentq(lambda x: f(x) - half, centre, centre + 5 * s, xtol=xtol)
    left = brentq(lambda x: f(x) - half, centre - 5 * s, centre, xtol=xtol)
    return right - left


def _ms_of(pair_self: WaveformPair, pair_other: WaveformPair, detector: str):
    sign = {"A": 1.0, "B": -1.0}[detector]
    sig, ct = pair_self.signal, pair_other.crosstalk
    return lambda taus: modified_extremum_curve(sig, ct, sign * np.asarray(taus, dtype=float))


def loss_multiplier_curve(pair_self: WaveformPair, pair_other: WaveformPair, f: float, taus,
                          variant: str = "anchored", detector: str = "A") -> LossMultiplier:
    """Tabulate a detector's loss multiplier on ``taus``.

    ``pair_self`` supplies the detector's signal, ``pair_other`` the
    crosstalk it receives.  Delay is stop time minus start time, so the
    stop detector (``detector="B"``) sees the start crosstalk at -tau.
    """
    if not 0 <= f < 1:
        raise ValueError(f"loss fraction must lie in [0, 1), got {f}")
    if variant not in ("anchored", "literal"):
        raise ValueError(f"unknown loss-multiplier variant {variant!r}")
    if detector not in ("A", "B"):
        raise ValueError("detector must be 'A' or 'B'")
    ms = _ms_of(pair_self, pair_other, detector)
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    ms_inf = pair_self.signal.vmin
    span = overlap_span(pair_self.signal, pair_other.crosstalk)
    step = pair_self.signal.dt
    m = int(np.ceil(span / step))
    search = step * np.arange(-m, m + 1)
    curve_s = ms(search)
    j = int(np.argmax(curve_s))
    tau_star, ms_star = float(search[j]), float(curve_s[j])
    if ms_star > ms_inf:
        res = minimize_scalar(lambda x: -ms([x])[0], bounds=(tau_star - step, tau_star + step),
                              method="bounded", options={"xatol": 1e-9})
        if -res.fun > ms_star:
            tau_star, ms_star = float(res.x), float(-res.fun)
    return LossMultiplier(float(f), taus, ms(taus), ms_inf, ms_star, tau_star, variant, detector)


def loss_multiplier(pair_self, pair_other, f, variant="anchored", tau=0.0, detector="A"):
    """Loss multiplier evaluated at ``tau`` (scalar or array)."""
    lm = loss_multiplier_curve(pair_self, pair_other, f, tau, variant, detector)
    v = lm.values
    return float(v[0]) if np.ndim(tau) == 0 else v


def spectrum_with_crosstalk(base: CoincidenceSpectrum, m_a: LossMultiplier,
                            m_b: LossMultiplier) -> CoincidenceSpectrum:
    """Pointwise product of the base spectrum and both loss multipliers."""
    for m in (m_a, m_b):
        if m.taus.shape != base.tau.shape or not np.allclose(m.taus, base.tau, rtol=0, atol=1e-9):
            raise ValueError("loss multiplier and spectrum are tabulated on different delay grids")
    factor = m_a.values * m_b.values
    errors = None if base.errors is None else base.errors * factor
    return base.copy(values=base.values * factor, errors=errors, variant=m_a.variant,
                     f_a=m_a.f, f_b=m_b.f)


def crosstalk_spectrum(base: CoincidenceSpectrum, pair_a: WaveformPair, pair_b: WaveformPair,
                       f_a: float, f_b: float, variant: str = "anchored") -> CoincidenceSpectrum:
    """Convenience wrapper: build both multipliers on the base grid and apply them."""
    m_a = loss_multiplier_curve(pair_a, pair_b, f_a, base.tau, variant, "A")
    m_b = loss_multiplier_curve(pair_b, pair_a, f_b, base.tau, variant, "B")
    return spectrum_with_crosstalk(base, m_a, m_b)


def _zero_bin(spec):
    j = int(np.argmin(np.abs(spec.tau)))
    if abs(spec.tau[j]) > 0.5 * spec.bin_width + 1e-12:
        raise ValueError("delay grid does not contain tau = 0")
    return j


def peak_maxima(spec: CoincidenceSpectrum, tau0: float, indices) -> dict:
    """Maximum value within +-tau0/2 of each i*tau0."""
    out = {}
    for i in indices:
        sel = np.abs(spec.tau - i * tau0) <= 0.5 * tau0
        if np.any(sel):
            out[int(i)] = float(spec.values[sel].max())
    return out


def dip_depth(spec: CoincidenceSpectrum, mode: str | None = None, tau0: float | None = None,
              indices=None, background_from: float | None = None) -> float:
    """Relative reduction of the zero-delay coincidences.

    Continuous: 1 - C(0) / mean background, the background being all bins
    with |tau| >= ``background_from`` (default: the outer tenth of the grid).
    Pulsed: 1 - central peak maximum / mean non-central peak maximum.
    """
    md = spec.metadata
    mode = mode or md.get("mode", "continuous")
    if mode == "continuous":
        reach = min(-spec.tau[0], spec.tau[-1])
        cut = 0.9 * reach if background_from is None else background_from
        bg = spec.values[np.abs(spec.tau) >= cut]
        if bg.size == 0:
            raise ValueError("spectrum has no background region")
        return float(1.0 - spec.values[_zero_bin(spec)] / bg.mean())
    tau0 = tau0 if tau0 is not None else md.get("tau0")
    indices = indices if indices is not None else md.get("peak_indices")
    if tau0 is None or indices is None:
        raise ValueError("pulsed dip depth needs tau0 and the peak indices")
    peaks = peak_maxima(spec, tau0, indices)
    side = [v for i, v in peaks.items() if i != 0]
    if 0 not in peaks or not side:
        raise ValueError("pulsed spectrum needs a central and at least one non-central peak")
    return float(1.0 - peaks[0] / np.mean(side))


# -- file formats ------------------------------------------------------------

def save_spectrum_csv(spec: CoincidenceSpectrum, path, header_comment: str | None = None) -> None:
    """``tau_ns,value`` CSV (plus an ``error`` column when errors are known)."""
    with Path(path).open("w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        if spec.errors is None:
            fh.write("tau_ns,value\n")
            for t, v in zip(spec.tau, spec.values):
                fh.write(f"{t:.9g},{v:.12g}\n")
        else:
            fh.write("tau_ns,value,error\n")
            for t, v, e in zip(spec.tau, spec.values, spec.errors):
                fh.write(f"{t:.9g},{v:.12g},{e:.12g}\n")


class SpectrumFormatError(ValueError):
    """Malformed spectrum CSV; ``row`` is the 1-based file line."""

    def __init__(self, msg, row=None):
        super().__init__(msg if row is None else f"row {row}: {msg}")
        self.row = row


def load_spectrum_csv(path, metadata: dict | None = None) -> CoincidenceSpectrum:
    path = Path(path)
    lines = path.read_text().splitlines()
    rows = [(n, line) for n, line in enumerate(lines, start=1) if line.strip() and not line.lstrip().startswith("#")]
    if not rows:
        raise SpectrumFormatError(f"{path}: empty spectrum file")
    header = [h.strip() for h in rows[0][1].split(",")]
    if header not in (["tau_ns", "value"], ["tau_ns", "value", "error"]):
        raise SpectrumFormatError(f"expected header 'tau_ns,value[,error]', got {rows[0][1]!r}", rows[0][0])
    data = []
    for n, line in rows[1:]:
        parts = next(csv.reader([line]))
        if len(parts) != len(header):
            raise SpectrumFormatError(f"expected {len(header)} columns, got {len(parts)}", n)
        try:
            data.append([float(p) for p in parts])
        except ValueError:
            raise SpectrumFormatError(f"non-numeric value in {line!r}", n) from None
    if len(data) < 2:
        raise SpectrumFormatError(f"{path}: need at least two bins")
    arr = np.array(data)
    meta = dict(metadata or {})
    sidecar = Path(str(path) + ".json")
    if not meta and sidecar.exists():
        meta = json.loads(sidecar.read_text()).get("metadata", {})
    try:
        return CoincidenceSpectrum(arr[:, 0], arr[:, 1], arr[:, 2] if arr.shape[1] == 3 else None, meta)
    except ValueError as exc:
        raise SpectrumFormatError(f"{path}: {exc}") from None


def write_sidecar(path, payload: dict) -> None:
    """JSON metadata next to an output file (``<file>.json``)."""
    Path(str(path) + ".json").write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")
