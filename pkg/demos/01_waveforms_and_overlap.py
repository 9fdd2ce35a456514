"""Signal pulses, crosstalk and the modified pulse extremum.

A negative-going detector pulse picks up a small positive crosstalk copy of
the partner channel's pulse.  When the two overlap, the extremum of the sum
is less negative, so the pulse looks smaller to the discriminator.
"""
import numpy as np

from cxtalk.waveform import make_pair, modified_extremum_curve, signal_extremum_time
from cxtalk.crosstalk import loss_multiplier_curve

pa = make_pair(k=0.012)   # start detector
pb = make_pair(k=0.013)   # stop detector

print("signal minimum      :", pa.signal.vmin, "V at", round(pa.signal.t_min, 3), "ns")
print("analytic extremum t*:", round(signal_extremum_time(1.0, 2.0), 3), "ns")
print("crosstalk maximum   :", pb.crosstalk.vmax, "V")

taus = np.array([-6, -3, -1, -0.5, 0, 0.5, 1, 3, 6, 11.8, 60.0])
ms = modified_extremum_curve(pa.signal, pb.crosstalk, taus)
print("\ntau (ns)   M_s (V)     shift (mV)")
for t, m in zip(taus, ms):
    print(f"{t:7.2f}  {m:10.6f}  {1e3 * (m - pa.signal.vmin):8.3f}")

# normalised overlap profile: 1 at full overlap, 0 once the pulses separate
lm = loss_multiplier_curve(pa, pb, 0.033, taus)
print("\ntau*  =", lm.tau_star, "ns   M_s(tau*) =", lm.ms_star, "V   M_s(inf) =", lm.ms_inf, "V")
print("w(tau):", np.round(lm.overlap, 4))

# the derivative coupling mode changes the profile shape, not its height
pd = make_pair(k=0.013, mode="derivative")
lmd = loss_multiplier_curve(pa, pd, 0.033, taus)
print("derivative-mode w(tau):", np.round(lmd.overlap, 4))
