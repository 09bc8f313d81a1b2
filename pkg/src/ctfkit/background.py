"""Radial profile, convex LP background and background subtraction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ctf_model import polar_grid
from .lp import simplex_max
from .steerable import build_basis


@dataclass(frozen=True)
class RadialProfile:
    """Samples at radii 0, 1/K, ..., m/K (cycles/pixel)."""

    values: np.ndarray
    size: int  # K

    @property
    def cutoff_index(self):
        return len(self.values) - 1

    @property
    def radii(self):
        return np.arange(len(self.values)) / self.size


@dataclass(frozen=True)
class BackgroundProfile(RadialProfile):
    pass


def cutoff_index(size, cutoff):
    return int(np.floor(cutoff * size + 1e-9))


def radial_average(spectrum, cutoff=3 / 8, basis=None):
    """Radial profile by projection onto the k = 0 steerable functions.

    The profile is sampled at integer pixel radii up to ``cutoff * K`` and
    clipped at zero (projection ringing can dip slightly negative).
    """
    spectrum = np.asarray(spectrum, dtype=float)
    size = spectrum.shape[0]
    if not 0 < cutoff <= 0.5:
        raise ValueError(f"cutoff must lie in (0, 1/2], got {cutoff}")
    if basis is None or basis._coupling is not None:
        basis = build_basis(size, (0,), cutoff)
    m = cutoff_index(size, cutoff)
    values = basis.radial_profile(spectrum, np.arange(m + 1))
    return RadialProfile(values=np.clip(values, 0, None), size=size)


def lp_background(profile):
    """Largest non-negative convex sequence lying below the profile.

    Solves: maximize sum(e) subject to e <= S, e[i-1] + e[i+1] >= 2 e[i] for
    interior i, e >= 0, which is the same optimum as minimizing the l1 norm of
    the background-subtracted profile.
    """
    values = np.asarray(profile.values, dtype=float)
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        raise ValueError("profile must be finite and non-negative")
    n = len(values)
    scale = values.max()
    if scale == 0 or n == 1:
        return BackgroundProfile(values=values.copy(), size=profile.size)
    upper = values / scale
    rows = max(n - 2, 0)
    A = np.zeros((rows, n))
    for i in range(rows):
        A[i, i : i + 3] = (-1.0, 2.0, -1.0)
    if rows:
        result = simplex_max(np.ones(n), A, np.zeros(rows), upper=upper).x
    else:
        result = upper.copy()
    bg = np.clip(result, 0, upper) * scale
    return BackgroundProfile(values=bg, size=profile.size)


def background_grid(background, size):
    """Radial background expanded to the 2D grid by linear interpolation in r."""
    r, _ = polar_grid(size)
    return np.interp(r, background.radii, background.values, right=0.0)


def subtract_background(spectrum, background):
    """Background-subtracted spectrum, clamped at 0 and zeroed beyond the cutoff."""
    spectrum = np.asarray(spectrum, dtype=float)
    size = spectrum.shape[0]
    if background.size != size:
        raise ValueError(f"background sampled for K={background.size}, spectrum is K={size}")
    r, _ = polar_grid(size)
    r_cut = background.radii[-1]
    out = spectrum - background_grid(background, size)
    out[r > r_cut + 1e-12] = 0.0
    return np.clip(out, 0, None)
