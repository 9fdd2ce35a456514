"""Continuous-reference correction of a pulsed measurement.

1. Measure a continuous (non-interacting) source: its zero-delay dip is pure crosstalk.
2. Fit the dip with a Gaussian on a flat background; normalise it.
3. Divide a pulsed-source spectrum by that profile.
4. The central peak should then match the side peaks.
"""
from cxtalk.analysis import (apply_correction, build_reference, central_peak_ratio, corrected_ratio_error,
                             fit_gaussian_dip, fit_peaks)
from cxtalk.montecarlo import McConfig, run
from cxtalk.source import SourceParams

N = 10**7
cont = run(McConfig(seed=1, n_events=N, mode="continuous")).spectrum
puls_cfg = McConfig(seed=2, n_events=N, mode="pulsed", source=SourceParams(lam=0.1))
puls = run(puls_cfg).spectrum

fit = fit_gaussian_dip(cont)
print(fit.to_text())
ref = build_reference(fit)

centers = [i * puls_cfg.source.tau0 for i in puls_cfg.temporal.stop_peak_indices]
before, eb = central_peak_ratio(fit_peaks(puls, centers), centers)
after, ea = central_peak_ratio(fit_peaks(apply_correction(puls, ref), centers), centers)
ea = corrected_ratio_error(after, ea, ref)
print(f"central/side peak ratio before correction: {before:.4f} +- {eb:.4f}")
print(f"central/side peak ratio after correction : {after:.4f} +- {ea:.4f}")
# The overlap profile is cusped, so the Gaussian reads the dip roughly 8%
# shallow; the corrected ratio keeps a residual of about half a percent.
