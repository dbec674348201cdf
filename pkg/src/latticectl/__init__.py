"""Vibrational-state control of atoms in a shaken 1-D optical lattice."""

__version__ = "0.1.0"

from .units import LatticeConfig, experiment_config  # noqa: E402
from .bands import compute_band_structure, transition_data, wannier_states  # noqa: E402
from .pulses import PulseSpec, Variant, Waveform, chirp_spec, synthesize  # noqa: E402
from .propagator import Frame, SpatialGrid, WaveFunction, propagate, propagate_batch  # noqa: E402
from .observables import Populations, renormalize  # noqa: E402

__all__ = [
    "Frame",
    "LatticeConfig",
    "Populations",
    "PulseSpec",
    "SpatialGrid",
    "Variant",
    "WaveFunction",
    "Waveform",
    "chirp_spec",
    "compute_band_structure",
    "experiment_config",
    "propagate",
    "propagate_batch",
    "renormalize",
    "synthesize",
    "transition_data",
    "wannier_states",
]
