"""CTF model: aberration phase, astigmatic defocus and analytic zero rings.

Units: lengths in angstrom, spatial frequencies in cycles/pixel, angles in
radians measured counterclockwise from the positive x-axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MicroscopeParams:
    """Fixed optics of the microscope.

    ``cs`` is stored in angstrom; use :meth:`from_settings` to build from the
    usual (kV, mm, amplitude-contrast fraction) triple.
    """

    wavelength: float
    cs: float
    w: float
    pixel_size: float

    def __post_init__(self):
        if not self.wavelength > 0:
            raise ValueError(f"wavelength must be positive, got {self.wavelength}")
        if self.cs < 0:
            raise ValueError(f"cs must be non-negative, got {self.cs}")
        if not 0 <= self.w < math.pi / 2:
            raise ValueError(f"phase offset must lie in [0, pi/2), got {self.w}")
        if not self.pixel_size > 0:
            raise ValueError(f"pixel_size must be positive, got {self.pixel_size}")

    @classmethod
    def from_settings(cls, voltage, cs_mm, amplitude_contrast, pixel_size):
        return cls(
            wavelength=electron_wavelength(voltage),
            cs=cs_mm * 1e7,
            w=amplitude_contrast_to_phase(amplitude_contrast),
            pixel_size=pixel_size,
        )


@dataclass(frozen=True)
class DefocusParams:
    """Defocus vector (df1, df2, alpha_f), canonicalized so df1 >= df2."""

    df1: float
    df2: float
    alpha_f: float = 0.0

    def __post_init__(self):
        df1, df2, alpha = float(self.df1), float(self.df2), float(self.alpha_f)
        if df1 < df2:
            df1, df2 = df2, df1
            alpha += math.pi / 2
        alpha = math.fmod(alpha, math.pi)
        if alpha < 0:
            alpha += math.pi
        # fmod can land exactly on pi after the shift for tiny negatives
        if alpha >= math.pi:
            alpha = 0.0
        object.__setattr__(self, "df1", df1)
        object.__setattr__(self, "df2", df2)
        object.__setattr__(self, "alpha_f", alpha)

    @property
    def mean_defocus(self):
        return 0.5 * (self.df1 + self.df2)

    @property
    def astigmatism(self):
        return self.df1 - self.df2

    @property
    def astigmatism_ratio(self):
        return (self.df1 - self.df2) / (self.df1 + self.df2)


@dataclass(frozen=True)
class FrequencyCoord:
    g1: float
    g2: float

    @property
    def r(self):
        return math.hypot(self.g1, self.g2)

    @property
    def alpha(self):
        return math.atan2(self.g2, self.g1)


def electron_wavelength(voltage):
    """Relativistic electron wavelength in angstrom for an accelerating voltage in kV."""
    if not voltage > 0:
        raise ValueError(f"voltage must be positive, got {voltage}")
    v = voltage * 1e3
    return 12.2639 / math.sqrt(v + 0.97845e-6 * v * v)


def amplitude_contrast_to_phase(fraction):
    """Phase offset w for an amplitude-contrast fraction A, w = atan(A / sqrt(1 - A^2))."""
    if not 0 <= fraction < 1:
        raise ValueError(f"amplitude contrast must lie in [0, 1), got {fraction}")
    return math.atan2(fraction, math.sqrt(1.0 - fraction * fraction))


def astigmatic_defocus(defocus, alpha):
    return (
        defocus.df1
        + defocus.df2
        + (defocus.df1 - defocus.df2) * np.cos(2 * (alpha - defocus.alpha_f))
    )


def ctf_phase_polar(mic, defocus, r, alpha):
    """Aberration phase chi at polar frequency coordinates (array friendly)."""
    r2 = np.square(r)
    p2 = mic.pixel_size**2
    lam = mic.wavelength
    return (
        np.pi * lam * r2 * astigmatic_defocus(defocus, alpha) / (2 * p2)
        - np.pi * lam**3 * r2 * r2 * mic.cs / (2 * p2 * p2)
        + mic.w
    )


def ctf_phase(mic, defocus, coord):
    return ctf_phase_polar(mic, defocus, coord.r, coord.alpha)


def ctf_eval(mic, defocus, coord):
    return -math.sin(ctf_phase(mic, defocus, coord))


def ctf_polar(mic, defocus, r, alpha):
    return -np.sin(ctf_phase_polar(mic, defocus, r, alpha))


def frequency_grid(size):
    """Centered frequency grid of a ``size`` x ``size`` spectrum.

    Returns ``(g1, g2)`` in cycles/pixel with DC at index ``(size//2, size//2)``.
    Axis 0 of the arrays is y (g2), axis 1 is x (g1).
    """
    f = (np.arange(size) - size // 2) / size
    g2, g1 = np.meshgrid(f, f, indexing="ij")
    return g1, g2


def polar_grid(size):
    g1, g2 = frequency_grid(size)
    return np.hypot(g1, g2), np.arctan2(g2, g1)


def ctf_grid(mic, defocus, size):
    """CTF sampled on the centered ``size`` x ``size`` frequency grid."""
    r, alpha = polar_grid(size)
    return ctf_polar(mic, defocus, r, alpha)


class NoZeroError(ValueError):
    """Raised when a requested zero ring does not exist below Nyquist."""


def _turnover_radius(mic, defocus, alpha):
    # chi as a function of u = r^2 is a*u - b*u^2 + w, maximal at u = a / 2b
    p2 = mic.pixel_size**2
    a = np.pi * mic.wavelength * float(astigmatic_defocus(defocus, alpha)) / (2 * p2)
    b = np.pi * mic.wavelength**3 * mic.cs / (2 * p2 * p2)
    if b == 0:
        return math.inf
    return math.sqrt(a / (2 * b))


def zero_radii(mic, defocus, alpha, ell_max, strict=False):
    """Radii (cycles/pixel) where chi(r, alpha) = pi * ell for ell = 1..ell_max.

    Roots are bracketed on the monotone branch of chi below the spherical
    aberration turnover and refined by bisection. Orders without a root in
    (0, 1/2] are omitted, or raise :class:`NoZeroError` when ``strict``.
    """
    if ell_max < 1:
        raise ValueError("ell_max must be >= 1")
    r_hi = min(0.5, _turnover_radius(mic, defocus, alpha))

    def chi(r):
        return float(ctf_phase_polar(mic, defocus, r, alpha))

    chi_hi = chi(r_hi)
    radii = []
    for ell in range(1, ell_max + 1):
        target = np.pi * ell
        if target <= mic.w or target > chi_hi:
            if strict:
                raise NoZeroError(f"no zero of order {ell} inside (0, 1/2] at alpha={alpha}")
            continue
        lo, hi = 0.0, r_hi
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if chi(mid) < target:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-17:
                break
        radii.append(0.5 * (lo + hi))
    return radii
