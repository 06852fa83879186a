"""Ultrasonic indices for monitoring carbonation of cement pastes."""

from .energy_metrics import coefficient_of_variation, cumulative_energy, delta_t, fit_mu, scaled_energy, signal_energy
from .errors import CarbosoundError
from .harmonic_metrics import beta, beta_full, classify_harmonics, detect_peaks, gamma, nonlinearity_series
from .phase_metrics import phase_slope, phase_slope_series, travel_time
from .pipeline import AnalysisConfig, analyze_specimen_day, build_report
from .regression import FitResult, ModelFamily, fit, linear_fit, r_squared
from .signal_model import DatasetManifest, SpecimenRecord, Waveform, load_manifest, load_waveform, save_waveform
from .spectral import dft, phase_spectrum, power_spectral_density
from .synth_oracle import PaperProfile, PulseSpec, synth_dataset, synth_pulse

__version__ = "0.1.0"
