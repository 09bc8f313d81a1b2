"""CTF estimation: multitaper spectra, LP background, steerable denoising, defocus fits."""

from .ctf_model import DefocusParams, MicroscopeParams, ctf_eval, electron_wavelength, zero_radii
from .fit_correlation import SearchConfig
from .pipeline import PipelineConfig, run_pipeline
from .synth import SynthSpec, synth_micrograph, synth_movie

__version__ = "0.1.0"

__all__ = [
    "DefocusParams",
    "MicroscopeParams",
    "PipelineConfig",
    "SearchConfig",
    "SynthSpec",
    "ctf_eval",
    "electron_wavelength",
    "run_pipeline",
    "synth_micrograph",
    "synth_movie",
    "zero_radii",
]
