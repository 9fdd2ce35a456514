"""Loss fraction F from pulse-height distributions, and the threshold trade-off.

F is the fraction of accepted pulses that crosstalk from a fully overlapping,
above-threshold partner pushes below threshold.  It is set by how much PHD
mass sits just above the threshold.
"""
import numpy as np

from cxtalk.discriminator import PulseHeightDistribution as PHD, accepted_fraction, loss_fraction_F, threshold_sweep

v_th = 0.15
u = PHD.uniform(0.0, 1.0)
print("uniform PHD, point-mass partner at 1 V, k = 0.012")
print("  accepted fraction:", accepted_fraction(u, v_th))
print("  F                :", loss_fraction_F(u, PHD.delta(1.0), 0.012, v_th), " (analytic 0.012/0.85 =", 0.012 / 0.85, ")")

# CEM-like gamma PHDs, tuned so the two channels lose about 3.3% and 2.4%
pa, pb = PHD.gamma(2.0, 0.068), PHD.gamma(2.0, 0.078)
f_a = loss_fraction_F(pa, pb, 0.013, v_th)
f_b = loss_fraction_F(pb, pa, 0.012, v_th)
print(f"\ngamma PHDs: F_A = {f_a:.4f}, F_B = {f_b:.4f}, predicted dip = {1 - (1 - f_a) * (1 - f_b):.4f}")

print("\nthreshold sweep (gamma PHDs)")
print("  v_th     F_A      F_B      dip")
for v in np.linspace(0.05, 0.4, 8):
    fa = loss_fraction_F(pa, pb, 0.013, v)
    fb = loss_fraction_F(pb, pa, 0.012, v)
    print(f"  {v:.3f}  {fa:.4f}  {fb:.4f}  {1 - (1 - fa) * (1 - fb):.4f}")

# raising the threshold does not remove the dip for a flat PHD...
print("\nflat PHD, min F over sweep:", min(f for _, f in threshold_sweep(u, u, 0.013, (0.05, 0.9), 18)))
# ...only a gap in the PHD right above the threshold does
notch = PHD.empirical([0.0, 0.1, 0.14, 0.17, 0.5, 1.0], [20, 30, 0, 80, 40])
print("notched PHD, F with v_th inside the notch:", loss_fraction_F(notch, notch, 0.013, 0.15))
