"""Gaussian dip/peak fitting and the continuous-reference crosstalk correction.

A continuous (non-interacting) source shows the crosstalk dip alone.  Its
fitted, background-normalised profile is divided out of a pulsed-source
spectrum recorded with the same detectors.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .crosstalk import CoincidenceSpectrum

_NAMES = ("amplitude", "center", "sigma", "background")
HWHM_PER_SIGMA = np.sqrt(2.0 * np.log(2.0))  # 1.1774


@dataclass
class FitResult:
    kind: str
    params: dict
    errors: dict
    residual_rms: float
    converged: bool
    iterations: int
    no_dip: bool = False
    covariance: np.ndarray | None = field(default=None, repr=False)

    @property
    def depth(self) -> float:
        """amplitude / background (the relative dip or peak contrast)."""
        b = self.params["background"]
        return self.params["amplitude"] / b if b else float("nan")

    @property
    def depth_error(self) -> float:
        if self.covariance is None:
            return 0.0
        a, b = self.params["amplitude"], self.params["background"]
        grad = np.array([1.0 / b, 0.0, 0.0, -a / b**2])
        return float(np.sqrt(max(grad @ self.covariance @ grad, 0.0)))

    @property
    def height(self) -> float:
        """Fitted curve value at the centre."""
        sign = -1.0 if self.kind == "dip" else 1.0
        return self.params["background"] + sign * self.params["amplitude"]

    @property
    def height_error(self) -> float:
        if self.covariance is None:
            return 0.0
        sign = -1.0 if self.kind == "dip" else 1.0
        grad = np.array([sign, 0.0, 0.0, 1.0])
        return float(np.sqrt(max(grad @ self.covariance @ grad, 0.0)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "errors": dict(self.errors),
                "depth": self.depth, "depth_error": self.depth_error, "height": self.height,
                "height_error": self.height_error, "residual_rms": self.residual_rms,
                "converged": self.converged, "iterations": self.iterations, "no_dip": self.no_dip}

    def to_text(self) -> str:
        lines = [f"kind: {self.kind}"]
        for k in _NAMES:
            lines.append(f"{k}: {self.params[k]:.9g} +- {self.errors[k]:.3g}")
        lines += [f"depth: {self.depth:.6g} +- {self.depth_error:.3g}",
                  f"residual_rms: {self.residual_rms:.6g}",
                  f"converged: {self.converged}", f"iterations: {self.iterations}"]
        if self.no_dip:
            lines.append("no_dip: True")
        return "\n".join(lines) + "\n"


def _gauss_model(p, x, sign):
    a, c, s, b = p
    e = np.exp(-0.5 * ((x - c) / s) ** 2)
    y = b + sign * a * e
    jac = np.empty((x.size, 4))
    jac[:, 0] = sign * e
    jac[:, 1] = sign * a * e * (x - c) / s**2
    jac[:, 2] = sign * a * e * (x - c) ** 2 / s**3
    jac[:, 3] = 1.0
    return y, jac


def levenberg_marquardt(p0, x, y, sign, weights=None, max_iter=200, rtol=1e-8, y_errors=None):
    """Damped Gauss-Newton for the Gaussian-on-flat-background model.

    Returns (params, covariance, rss, converged, iterations).  The covariance
    is the inverse normal matrix scaled by RSS/dof, except for unweighted
    fits with known per-point errors, where the sandwich form
    ``(J'J)^-1 J' diag(err^2) J (J'J)^-1`` is used instead: counting data
    are not homoscedastic and the RSS scaling would misstate peak errors.
    """
    p = np.asarray(p0, dtype=float).copy()
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    lam = 1e-3
    f, J = _gauss_model(p, x, sign)
    cost = np.sum(w * (y - f) ** 2)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        A = J.T @ (w[:, None] * J)
        g = J.T @ (w * (y - f))
        while True:
            try:
                step = np.linalg.solve(A + lam * np.diag(np.diag(A)), g)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(A + lam * np.diag(np.diag(A)), g, rcond=None)[0]
            trial = p + step
            if trial[2] <= 0:
                trial[2] = 0.5 * p[2]
            f_t, J_t = _gauss_model(trial, x, sign)
            cost_t = np.sum(w * (y - f_t) ** 2)
            if cost_t <= cost:
                lam = max(lam / 10.0, 1e-12)
                break
            lam *= 10.0
            if lam > 1e16:
                break
        if lam > 1e16:
            converged = True  # no downhill step left at machine precision
            break
        scale = np.array([abs(p[0]), abs(p[2]), abs(p[2]), abs(p[3])]) + 1e-300
        rel = np.max(np.abs(trial - p) / scale)
        p, f, J, cost = trial, f_t, J_t, cost_t
        if rel < rtol:
            converged = True
            break
    if converged:
        # a few undamped steps pin the optimum to rounding level
        for _ in range(5):
            A = J.T @ (w[:, None] * J)
            try:
                step = np.linalg.solve(A, J.T @ (w * (y - f)))
            except np.linalg.LinAlgError:
                break
            scale = np.array([abs(p[0]), abs(p[2]), abs(p[2]), abs(p[3])]) + 1e-300
            rel = np.max(np.abs(step) / scale)
            # the cost cannot resolve steps this small, so trust the local quadratic model
            if not rel < 1e-6:
                break
            p = p + step
            f, J = _gauss_model(p, x, sign)
            cost = np.sum(w * (y - f) ** 2)
            if rel < 1e-15:
                break
    dof = max(x.size - 4, 1)
    A = J.T @ (w[:, None] * J)
    try:
        inv = np.linalg.inv(A)
    except np.linalg.LinAlgError:
        return p, np.full((4, 4), np.nan), cost, converged, it
    if weights is None and y_errors is not None:
        meat = J.T @ (np.asarray(y_errors, dtype=float)[:, None] ** 2 * J)
        cov = inv @ meat @ inv
    else:
        cov = inv * (cost / dof)
    return p, cov, cost, converged, it


def _smooth(y, n=5):
    if y.size < n:
        return y
    k = np.ones(n) / n
    return np.convolve(np.pad(y, n // 2, mode="edge"), k, mode="valid")


def _half_width(x, ys, j, level, below):
    hit = ys <= level if below else ys >= level
    lo = j
    while lo > 0 and hit[lo - 1]:
        lo -= 1
    hi = j
    while hi < x.size - 1 and hit[hi + 1]:
        hi += 1
    return max(0.5 * (x[hi] - x[lo]), x[1] - x[0])


def _result(kind, p, cov, rss, n, converged, it, no_dip=False):
    errs = np.sqrt(np.clip(np.diag(cov), 0, None)) if np.all(np.isfinite(cov)) else np.full(4, np.nan)
    return FitResult(kind, dict(zip(_NAMES, map(float, p))), dict(zip(_NAMES, map(float, errs))),
                     float(np.sqrt(rss / n)), bool(converged), int(it), no_dip, cov)


def _weights(spec, sel, weighted):
    if not weighted:
        return None
    err = spec.errors[sel] if spec.errors is not None else np.sqrt(np.clip(spec.values[sel], 1.0, None))
    return 1.0 / np.clip(err, 1e-12, None) ** 2


def fit_gaussian_dip(spec: CoincidenceSpectrum, weighted: bool = False) -> FitResult:
    """Fit ``B - A exp(-(tau - c)^2 / 2 s^2)`` to a spectrum with flat wings.

    Starting points come from the minimum of the spectrum smoothed at a few
    scales; the fit with the lowest residual wins.  This keeps a single noisy
    bin from capturing a shallow, wide dip at low statistics.  The data are
    divided by the initial background before fitting, so the fitted depth
    does not depend on the overall count scale.
    """
    x = spec.tau
    n = x.size
    q = max(n // 4, 1)
    b_raw = float(np.median(np.concatenate([spec.values[:q], spec.values[-q:]])))
    scale = b_raw if b_raw > 0 else float(np.max(np.abs(spec.values))) or 1.0
    y = spec.values / scale
    b0 = b_raw / scale
    w = _weights(spec, slice(None), weighted)
    if w is not None:
        w = w * scale**2
    err = None if spec.errors is None else spec.errors / scale
    starts = []
    for width in (5, 11, 21, 41):
        if width > n // 4 and starts:
            break
        ys = _smooth(y, width)
        j = int(np.argmin(ys))
        a0 = b0 - float(ys[j])
        if a0 <= 1e-12 * abs(b0):
            continue
        s0 = _half_width(x, ys, j, b0 - a0 / 2, below=True) / HWHM_PER_SIGMA
        starts.append((a0, float(x[j]), s0))
    if not starts:
        p = np.array([0.0, float(x[n // 2]), float(x[1] - x[0]), b_raw])
        return _result("dip", p, np.zeros((4, 4)), float(np.sum((spec.values - b_raw) ** 2)), n, True, 0,
                       no_dip=True)
    best = None
    for a0, c0, s0 in starts:
        fit = levenberg_marquardt([a0, c0, s0, b0], x, y, -1.0, w, y_errors=err)
        if best is None or fit[2] < best[2]:
            best = fit
    p, cov, rss, ok, it = best
    p[2] = abs(p[2])
    unscale = np.array([scale, 1.0, 1.0, scale])
    p = p * unscale
    cov = cov * np.outer(unscale, unscale)
    rss = rss * scale**2
    if p[0] <= 0:
        # no dip: report a flat line at the fitted background
        p[0] = 0.0
        return _result("dip", p, cov, rss, n, ok, it, no_dip=True)
    return _result("dip", p, cov, rss, n, ok, it)


def fit_gaussian_peak(x, y, weights=None, y_errors=None) -> FitResult:
    """Fit ``B + A exp(-(tau - c)^2 / 2 s^2)`` to one window."""
    j = int(np.argmax(_smooth(y)))
    b0 = float(min(y[0], y[-1]))
    a0 = float(_smooth(y)[j]) - b0
    s0 = _half_width(x, _smooth(y), j, b0 + a0 / 2, below=False) / HWHM_PER_SIGMA
    p, cov, rss, ok, it = levenberg_marquardt([a0, x[j], s0, b0], x, y, 1.0, weights, y_errors=y_errors)
    p[2] = abs(p[2])
    return _result("peak", p, cov, rss, x.size, ok, it)


def fit_peaks(spec: CoincidenceSpectrum, expected_centers, half_window=None, weighted=False):
    """Independent Gaussian-plus-background fit around each expected centre."""
    centers = np.sort(np.asarray(expected_centers, dtype=float))
    if centers.size == 0:
        raise ValueError("no peak centres given")
    spacing = np.min(np.diff(centers)) if centers.size > 1 else np.inf
    if half_window is None:
        half_window = 0.5 * spacing
        if not np.isfinite(half_window):
            raise ValueError("a single peak needs an explicit half_window")
    if half_window > 0.5 * spacing + 1e-9:
        raise ValueError(f"fit windows of +-{half_window} ns overlap (peak spacing {spacing} ns)")
    out = []
    for c in centers:
        sel = np.abs(spec.tau - c) <= half_window
        if np.count_nonzero(sel) < 5:
            raise ValueError(f"fit window around {c} ns holds too few bins")
        if not np.any(spec.values[sel] > 0):
            raise ValueError(f"fit window around {c} ns is empty")
        err = None if spec.errors is None else spec.errors[sel]
        out.append(fit_gaussian_peak(spec.tau[sel], spec.values[sel], _weights(spec, sel, weighted), err))
    return out


def central_peak_ratio(fits, centers):
    """Central peak height over the mean non-central height, with 1-sigma error."""
    centers = np.asarray(centers, dtype=float)
    j0 = int(np.argmin(np.abs(centers)))
    side = [f for i, f in enumerate(fits) if i != j0]
    if not side:
        raise ValueError("need at least one non-central peak")
    h0, e0 = fits[j0].height, fits[j0].height_error
    hs = np.array([f.height for f in side])
    es = np.array([f.height_error for f in side])
    m = hs.mean()
    em = np.sqrt(np.sum(es**2)) / hs.size
    r = h0 / m
    return float(r), float(r * np.hypot(e0 / h0, em / m))


@dataclass
class CorrectionReference:
    """Normalised dip profile, 1 far from the dip and <= 1 at its centre."""

    depth: float = 0.0
    center: float = 0.0
    sigma: float = 1.0
    tau: np.ndarray | None = None
    profile: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)
    fit: FitResult | None = field(default=None, repr=False)

    def __call__(self, tau):
        tau = np.asarray(tau, dtype=float)
        if self.profile is not None:
            return np.interp(tau, self.tau, self.profile, left=1.0, right=1.0)
        return 1.0 - self.depth * np.exp(-0.5 * ((tau - self.center) / self.sigma) ** 2)

    def error(self, tau):
        """1-sigma uncertainty of the profile, propagated from the fit covariance.

        Tabulated references and references without a covariance return 0.
        """
        tau = np.asarray(tau, dtype=float)
        if self.fit is None or self.fit.covariance is None or self.fit.no_dip:
            return np.zeros_like(tau)
        a, c, s, b = (self.fit.params[k] for k in _NAMES)
        e = np.exp(-0.5 * ((tau - c) / s) ** 2)
        # D = 1 - (a/b) e(tau; c, s)
        grad = np.stack([-e / b,
                         -(a / b) * e * (tau - c) / s**2,
                         -(a / b) * e * (tau - c) ** 2 / s**3,
                         a * e / b**2], axis=-1)
        var = np.einsum("...i,ij,...j->...", grad, self.fit.covariance, grad)
        return np.sqrt(np.clip(var, 0.0, None))


def build_reference(dip_fit: FitResult) -> CorrectionReference:
    """Reference profile from a Gaussian dip fit of a continuous-source spectrum."""
    meta = {"source": "gaussian-fit", **dip_fit.to_dict()}
    if dip_fit.no_dip:
        return CorrectionReference(0.0, dip_fit.params["center"], max(dip_fit.params["sigma"], 1e-12), metadata=meta)
    return CorrectionReference(dip_fit.depth, dip_fit.params["center"], dip_fit.params["sigma"], metadata=meta,
                               fit=dip_fit)


def corrected_ratio_error(ratio, ratio_error, ref: CorrectionReference, center=0.0) -> float:
    """Total error of a corrected central/side ratio including the reference uncertainty.

    Only the central peak sits inside the dip, so the reference enters as a
    relative error ``sigma_D / D`` at the central position.
    """
    d = float(ref(center))
    ed = float(ref.error(center))
    return float(np.hypot(ratio_error, ratio * ed / d))


def reference_from_spectrum(spec: CoincidenceSpectrum, background_from=None) -> CorrectionReference:
    """Tabulated reference: a continuous-source spectrum over its mean background."""
    reach = min(-spec.tau[0], spec.tau[-1])
    cut = 0.9 * reach if background_from is None else background_from
    bg = spec.values[np.abs(spec.tau) >= cut]
    if bg.size == 0 or bg.mean() <= 0:
        raise ValueError("reference spectrum has no usable background region")
    return CorrectionReference(tau=spec.tau.copy(), profile=spec.values / bg.mean(),
                               metadata={"source": "tabulated", "background": float(bg.mean())})


def apply_correction(spec: CoincidenceSpectrum, ref: CorrectionReference) -> CoincidenceSpectrum:
    """Divide the spectrum by the reference profile."""
    d = ref(spec.tau)
    if np.any(d <= 0):
        raise ValueError("reference profile is not positive on the spectrum grid")
    errors = None if spec.errors is None else spec.errors / d
    return spec.copy(values=spec.values / d, errors=errors, corrected=True,
                     reference=ref.metadata.get("source", "custom"))
