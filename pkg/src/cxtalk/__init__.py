"""Crosstalk-induced false antibunching in start-stop coincidence measurements.

Modules: waveform (pulse and crosstalk traces), source (photon statistics),
discriminator (threshold losses), crosstalk (analytic spectra), montecarlo
(event-level oracle), analysis (fits and correction), cli.
"""
__version__ = "0.1.0"

from .waveform import Trace, WaveformPair, make_pair, modified_extremum, modified_extremum_curve, synth_signal
from .source import SourceParams, TemporalModel, peak_counts, central_peak_counts
from .discriminator import DiscriminatorConfig, PulseHeightDistribution, loss_fraction_F, threshold_sweep
from .crosstalk import (CoincidenceSpectrum, LossMultiplier, crosstalk_spectrum, dip_depth, loss_multiplier,
                        spectrum_no_crosstalk)
from .montecarlo import McConfig, McResult, run, emission_oracle
from .analysis import FitResult, CorrectionReference, fit_gaussian_dip, fit_peaks, build_reference, apply_correction

__all__ = [n for n in dir() if not n.startswith("_")]
