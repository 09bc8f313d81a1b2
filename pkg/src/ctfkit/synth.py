"""Synthetic micrographs and movies with a known CTF.

The image is ``y = sqrt(snr) * (h * x) + e`` where ``x`` and ``e`` are
stationary Gaussian fields with radial power spectra ``signal_shape`` and
``background_shape``. Both are generated in the frequency domain by shaping
the DFT of white noise, so the expected periodogram of ``y`` is exactly
``snr * |H|^2 * S_x + S_e`` on the image grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.fft

from .ctf_model import DefocusParams, MicroscopeParams, ctf_polar, polar_grid


def default_signal_shape(r):
    return np.exp(-r / 0.05) + 0.1


def default_background_shape(r):
    return 1.0 / (1.0 + 20.0 * r)


@dataclass(frozen=True)
class SynthSpec:
    mic: MicroscopeParams
    defocus: DefocusParams
    size: int = 1024
    snr: float = 1.0
    seed: int = 0
    signal_shape: Callable = field(default=default_signal_shape)
    background_shape: Callable = field(default=default_background_shape)


def expected_spectrum(spec, size=None, snr=None):
    """Analytic power spectrum snr*|H|^2*S_x + S_e on a centered grid."""
    size = spec.size if size is None else size
    snr = spec.snr if snr is None else snr
    r, alpha = polar_grid(size)
    h = ctf_polar(spec.mic, spec.defocus, r, alpha)
    return snr * h**2 * spec.signal_shape(r) + spec.background_shape(r)


def _filters(spec):
    r, alpha = polar_grid(spec.size)
    h = ctf_polar(spec.mic, spec.defocus, r, alpha)
    signal = np.fft.ifftshift(h * np.sqrt(spec.signal_shape(r)))
    noise = np.fft.ifftshift(np.sqrt(spec.background_shape(r)))
    return signal, noise


def _shaped(rng, filt, size):
    white = rng.standard_normal((size, size))
    return scipy.fft.ifft2(scipy.fft.fft2(white) * filt).real


def _streams(spec, count):
    children = np.random.SeedSequence(spec.seed).spawn(count)
    return [np.random.default_rng(c) for c in children]


def synth_micrograph(spec):
    """One synthetic micrograph (float64, ``size`` x ``size``)."""
    return synth_movie(spec, frames=1, per_frame_snr=spec.snr)[0]


def synth_movie(spec, frames, per_frame_snr=None):
    """``frames`` images sharing one filtered specimen, with independent noise."""
    if frames < 1:
        raise ValueError("frames must be >= 1")
    snr = spec.snr if per_frame_snr is None else per_frame_snr
    signal_filter, noise_filter = _filters(spec)
    rngs = _streams(spec, frames + 1)
    clean = _shaped(rngs[0], signal_filter, spec.size) * np.sqrt(snr)
    return [clean + _shaped(rngs[1 + f], noise_filter, spec.size) for f in range(frames)]
