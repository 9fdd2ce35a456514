"""Analytic coincidence spectra with and without crosstalk.

Continuous source: flat spectrum, crosstalk carves a dip at zero delay.
Pulsed source: peaks every tau0; the central peak is reduced by the same dip.
"""
import numpy as np

from cxtalk.crosstalk import (crosstalk_spectrum, default_grid, dip_depth, measure_fwhm, peak_fwhm,
                              spectrum_no_crosstalk)
from cxtalk.source import SourceParams, TemporalModel, central_peak_counts, peak_counts
from cxtalk.waveform import make_pair

src, tm = SourceParams(), TemporalModel()
grid = default_grid(tm, src.tau0)
pa, pb = make_pair(k=0.012), make_pair(k=0.013)
F_A, F_B = 0.033, 0.024

print("peak FWHM closed form:", peak_fwhm(tm), "ns   numeric:", measure_fwhm(src, tm), "ns")
print("central / first side peak counts:", central_peak_counts(src), "/", peak_counts(src, 1))

cont = spectrum_no_crosstalk(src, tm, grid, mode="continuous")
cont_ct = crosstalk_spectrum(cont, pa, pb, F_A, F_B)
print("\ncontinuous dip, anchored     :", round(dip_depth(cont_ct), 6), " identity:", 1 - (1 - F_A) * (1 - F_B))
print("continuous dip, literal form :", round(dip_depth(crosstalk_spectrum(cont, pa, pb, F_A, F_B, "literal")), 6))

j = np.abs(grid) <= 4
print("\ntau (ns)  C_CT / C")
for t, r in zip(grid[j][::5], (cont_ct.values / cont.values)[j][::5]):
    print(f"{t:6.2f}   {r:.5f}")

puls = spectrum_no_crosstalk(src, tm, grid)
puls_ct = crosstalk_spectrum(puls, pa, pb, F_A, F_B)
print("\npulsed: central/side ratio without crosstalk", round(1 - dip_depth(puls), 5),
      " with crosstalk", round(1 - dip_depth(puls_ct), 5))
