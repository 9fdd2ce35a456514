"""Detector pulse and crosstalk traces on a uniform time grid.

Signals are negative-going (CEM convention).  Crosstalk induced by a
signal on the partner wire is positive where the signal is negative, so
adding it to a coincident partner signal reduces that partner's height.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_DT = 0.05  # ns
DEFAULT_T0 = -50.0  # ns
DEFAULT_N = 2001  # covers [-50, +50] ns


@dataclass(frozen=True)
class Trace:
    """Uniformly sampled voltage trace.

    Parameters
    ----------
    t0 : float
        Time of the first sample (ns).
    dt : float
        Sample spacing (ns).
    samples : array_like
        Voltages (V).
    """

    t0: float
    dt: float
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.ndim != 1 or s.size == 0:
            raise ValueError("trace needs a non-empty 1-D sample array")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.samples.size)

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * (self.samples.size - 1)

    @property
    def vmin(self) -> float:
        return float(self.samples.min())

    @property
    def vmax(self) -> float:
        return float(self.samples.max())

    @property
    def t_min(self) -> float:
        """Time of the most negative sample."""
        return float(self.t0 + self.dt * np.argmin(self.samples))

    def scaled(self, factor: float) -> "Trace":
        return Trace(self.t0, self.dt, self.samples * factor)

    def reversed(self) -> "Trace":
        """Time-reversed copy, t -> -t."""
        return Trace(-self.t_end, self.dt, self.samples[::-1])

    def at(self, t) -> np.ndarray:
        """Linearly interpolated value at times ``t``; zero outside the support."""
        return _sample_shifted(self, np.asarray(t, dtype=float))


@dataclass(frozen=True)
class WaveformPair:
    """A detector's own signal together with the crosstalk it induces on the
    partner channel; ``coupling_ratio`` is max(CT) / |min(S)|."""

    signal: Trace
    crosstalk: Trace
    coupling_ratio: float

    def __post_init__(self):
        if not 0.0 <= self.coupling_ratio <= 0.5:
            raise ValueError(f"coupling ratio must lie in [0, 0.5], got {self.coupling_ratio}")


def synth_signal(amplitude, rise, fall, t0=DEFAULT_T0, dt=DEFAULT_DT, n=DEFAULT_N) -> Trace:
    """Negative-going pulse -A (1 - exp(-t/rise)) exp(-t/fall) for t >= 0.

    The pulse is rescaled so its sampled minimum is exactly ``-amplitude``.
    """
    if amplitude <= 0 or rise <= 0 or fall <= 0:
        raise ValueError("amplitude, rise and fall must all be positive")
    if dt > rise / 4:
        raise ValueError(
            f"grid too coarse: dt={dt} ns cannot resolve a {rise} ns rise (need dt <= {rise / 4} ns)"
        )
    if n < 2:
        raise ValueError("grid needs at least two samples")
    t = t0 + dt * np.arange(n)
    tp = np.clip(t, 0.0, None)
    raw = np.where(t >= 0, -(1.0 - np.exp(-tp / rise)) * np.exp(-tp / fall), 0.0)
    peak = -raw.min()
    if peak == 0:
        raise ValueError("grid does not cover the pulse (t >= 0 region missing)")
    return Trace(t0, dt, amplitude * (raw / peak))


def signal_extremum_time(rise, fall):
    """Analytic argmin of the unnormalised pulse shape."""
    return rise * np.log1p(fall / rise)


def synth_crosstalk(signal: Trace, k: float, mode: str = "inverted-copy") -> Trace:
    """Crosstalk induced by ``signal`` with peak ``k * |min(signal)|``.

    ``inverted-copy`` mirrors the signal; ``derivative`` is proportional to
    dS/dt (capacitive pickup), scaled to the same peak height.
    """
    if k < 0:
        raise ValueError(f"coupling ratio must be >= 0, got {k}")
    s = signal.samples
    if k == 0:
        return Trace(signal.t0, signal.dt, np.zeros_like(s))
    if mode == "inverted-copy":
        ct = -k * s
    elif mode == "derivative":
        ds = np.gradient(s, signal.dt)
        top = ds.max()
        if top <= 0:
            raise ValueError("signal has no rising edge to differentiate")
        ct = ds * (k * abs(s.min()) / top)
    else:
        raise ValueError(f"unknown crosstalk mode {mode!r}")
    return Trace(signal.t0, signal.dt, ct)


def make_pair(amplitude=1.0, rise=1.0, fall=2.0, k=0.012, mode="inverted-copy",
              t0=DEFAULT_T0, dt=DEFAULT_DT, n=DEFAULT_N) -> WaveformPair:
    sig = synth_signal(amplitude, rise, fall, t0=t0, dt=dt, n=n)
    return WaveformPair(sig, synth_crosstalk(sig, k, mode), k)


def _sample_shifted(trace: Trace, t: np.ndarray) -> np.ndarray:
    # Interpolate in index space so integer-sample shifts hit grid points exactly.
    pos = (t - trace.t0) / trace.dt
    near = np.rint(pos)
    pos = np.where(np.abs(pos - near) < 1e-9, near, pos)
    lo = np.floor(pos)
    frac = pos - lo
    lo = lo.astype(np.int64)
    padded = np.concatenate(([0.0], trace.samples, [0.0, 0.0]))
    # padded index = trace index + 1; clip everything outside to a zero slot
    i0 = np.clip(lo + 1, 0, trace.samples.size + 1)
    i1 = np.clip(lo + 2, 0, trace.samples.size + 1)
    out_left = lo < -1
    out_right = lo > trace.samples.size - 1
    v = (1.0 - frac) * padded[i0] + frac * padded[i1]
    return np.where(out_left | out_right, 0.0, v)


def modified_extremum(signal: Trace, crosstalk: Trace, tau: float) -> float:
    """min_t [signal(t) + crosstalk(t + tau)], evaluated on the signal grid."""
    ct = _sample_shifted(crosstalk, signal.times + tau)
    return float(np.min(signal.samples + ct))


def modified_extremum_curve(signal: Trace, crosstalk: Trace, taus) -> np.ndarray:
    """Vectorised :func:`modified_extremum` over an array of shifts."""
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    out = np.empty(taus.shape)
    t = signal.times
    # chunk to bound the (n_tau, n_t) temporary
    step = max(1, 2_000_000 // max(t.size, 1))
    if abs(signal.dt - crosstalk.dt) <= 1e-12 * signal.dt:
        pos = (signal.t0 + taus - crosstalk.t0) / crosstalk.dt
        shift = np.rint(pos)
        if np.all(np.abs(pos - shift) < 1e-9):
            # whole-sample shifts: plain index arithmetic, no interpolation
            n = t.size
            shift = shift.astype(np.int64)
            pad = int(np.abs(shift).max()) + n + 1
            padded = np.zeros(crosstalk.samples.size + 2 * pad)
            padded[pad:pad + crosstalk.samples.size] = crosstalk.samples
            windows = np.lib.stride_tricks.sliding_window_view(padded, n)
            for i in range(0, taus.size, step):
                out[i:i + step] = np.min(signal.samples + windows[shift[i:i + step] + pad], axis=1)
            return out
    for i in range(0, taus.size, step):
        blk = taus[i:i + step]
        ct = _sample_shifted(crosstalk, t[None, :] + blk[:, None])
        out[i:i + step] = np.min(signal.samples[None, :] + ct, axis=1)
    return out


def overlap_span(signal: Trace, crosstalk: Trace) -> float:
    """Largest |tau| at which the two supports can still overlap."""
    return max(abs(signal.t_end - crosstalk.t0), abs(crosstalk.t_end - signal.t0)) + signal.dt


def save_trace_csv(trace: Trace, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write("time_ns,voltage_V\n")
        for t, v in zip(trace.times, trace.samples):
            fh.write(f"{t:.9g},{v:.9g}\n")


def load_trace_csv(path, tol=1e-6) -> Trace:
    """Read a two-column ``time_ns,voltage_V`` CSV into a :class:`Trace`."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise ValueError(f"{path}: empty trace file")
    header, body = rows[0], rows[1:]
    if [h.strip() for h in header] != ["time_ns", "voltage_V"]:
        raise ValueError(f"{path}: expected header 'time_ns,voltage_V', got {','.join(header)!r}")
    if not body:
        raise ValueError(f"{path}: no samples")
    try:
        data = np.array([[float(a), float(b)] for a, b in body])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed row ({exc})") from None
    t, v = data[:, 0], data[:, 1]
    if t.size == 1:
        raise ValueError(f"{path}: need at least two samples to infer dt")
    if np.any(np.diff(t) <= 0):
        bad = int(np.argmax(np.diff(t) <= 0)) + 3  # 1-based row incl. header
        raise ValueError(f"{path}: time column not increasing at row {bad}")
    dt = (t[-1] - t[0]) / (t.size - 1)
    dev = np.abs(t - (t[0] + dt * np.arange(t.size)))
    if dev.max() > tol:
        raise ValueError(f"{path}: time column is not uniform (deviation {dev.max():.3g} ns)")
    return Trace(float(t[0]), float(dt), v)
