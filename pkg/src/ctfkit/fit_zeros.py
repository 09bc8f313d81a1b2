"""Defocus estimation from zero-crossing rings of the denoised spectrum."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.ndimage
import scipy.optimize

from .ctf_model import DefocusParams, ctf_phase_polar, frequency_grid

ANGULAR_BINS = 64
MIN_COVERAGE = 0.95
MAX_FIT_RMS = 2.0  # pixels
MAX_CENTER_OFFSET = 3.0  # pixels
MIN_RINGS = 3


class ZeroFitError(RuntimeError):
    """The zero-crossing fit could not produce an estimate."""


@dataclass(frozen=True)
class Ellipse:
    center: tuple
    semi_major: float
    semi_minor: float
    angle: float  # direction of the major semi-axis, radians in [0, pi)
    rms: float  # radial residual of the centered fit, pixels


@dataclass(frozen=True)
class ZeroRing:
    """Pixels of one zero ring, in cycles/pixel, with fitted ellipse (pixel units)."""

    g1: np.ndarray
    g2: np.ndarray
    ellipse: Ellipse
    mean_radius: float  # pixels
    order: int = 0

    @property
    def size(self):
        return self.g1.size


@dataclass
class ZeroFit:
    defocus: DefocusParams
    rms: float  # radians
    rings: list
    astigmatism_identifiable: bool
    stationarity: float


def detect_minima(spectrum):
    """Pixels smaller than at least six of their eight neighbours (border excluded)."""
    s = np.asarray(spectrum, dtype=float)
    if s.ndim != 2:
        raise ValueError("spectrum must be 2D")
    mask = np.zeros(s.shape, dtype=bool)
    if min(s.shape) < 3:
        return mask
    centre = s[1:-1, 1:-1]
    count = np.zeros(centre.shape, dtype=np.int8)
    rows, cols = s.shape
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            nb = s[1 + dy : rows - 1 + dy, 1 + dx : cols - 1 + dx]
            count += centre < nb
    mask[1:-1, 1:-1] = count >= 6
    return mask


def fit_centered_ellipse(x, y):
    """Least-squares conic A x^2 + B xy + C y^2 = 1 through points (pixel units)."""
    design = np.column_stack([x * x, x * y, y * y])
    coef, *_ = np.linalg.lstsq(design, np.ones_like(x), rcond=None)
    a, b, c = coef
    quad = np.array([[a, b / 2], [b / 2, c]])
    evals, evecs = np.linalg.eigh(quad)
    if np.any(evals <= 0):
        return None
    # smaller eigenvalue -> longer axis
    semi_major = 1 / math.sqrt(evals[0])
    semi_minor = 1 / math.sqrt(evals[1])
    vec = evecs[:, 0]
    angle = math.atan2(vec[1], vec[0]) % math.pi
    theta = np.arctan2(y, x)
    denom = a * np.cos(theta) ** 2 + b * np.cos(theta) * np.sin(theta) + c * np.sin(theta) ** 2
    r_fit = 1 / np.sqrt(np.clip(denom, 1e-300, None))
    rms = float(np.sqrt(np.mean((np.hypot(x, y) - r_fit) ** 2)))
    return Ellipse((0.0, 0.0), semi_major, semi_minor, angle, rms)


def conic_center(x, y):
    """Center of the general conic a x^2 + b xy + c y^2 + d x + e y = 1."""
    design = np.column_stack([x * x, x * y, y * y, x, y])
    coef, *_ = np.linalg.lstsq(design, np.ones_like(x), rcond=None)
    a, b, c, d, e = coef
    mat = np.array([[2 * a, b], [b, 2 * c]])
    try:
        return tuple(np.linalg.solve(mat, [-d, -e]))
    except np.linalg.LinAlgError:
        return (math.inf, math.inf)


def _as_ring(x, y, size, min_radius, max_radius):
    if x.size < ANGULAR_BINS * MIN_COVERAGE:
        return None
    rad = np.hypot(x, y)
    if rad.min() < min_radius or rad.max() > max_radius:
        return None
    theta = np.arctan2(y, x)
    bins = np.floor((theta + math.pi) / (2 * math.pi) * ANGULAR_BINS).astype(int) % ANGULAR_BINS
    if np.unique(bins).size < MIN_COVERAGE * ANGULAR_BINS:
        return None
    ellipse = fit_centered_ellipse(x, y)
    if ellipse is None or ellipse.rms > MAX_FIT_RMS:
        return None
    center = conic_center(x, y)
    if math.hypot(*center) > MAX_CENTER_OFFSET:
        return None
    return ZeroRing(g1=x / size, g2=y / size, ellipse=replace(ellipse, center=center),
                    mean_radius=float(rad.mean()))


def _components(mask, structure):
    labels, count = scipy.ndimage.label(mask, structure=structure)
    for lab, sl in enumerate(scipy.ndimage.find_objects(labels), start=1):
        if sl is not None:
            yield sl, labels[sl] == lab


def extract_rings(mask, spectrum=None, min_radius=2.0, max_radius=None):
    """Connected mask components that form closed, origin-centred ellipses.

    Components are kept when they occupy at least 95% of 64 angular bins, the
    centred ellipse fit has RMS residual <= 2 px and the free-centre fit lies
    within 3 px of the origin. Components reaching past ``max_radius`` (pixels)
    are dropped since the cutoff edge distorts them. Pixels left over from
    the 8-connected pass are regrouped once on a dilated copy of the mask,
    which bridges the one-pixel gaps the neighbour rule leaves on small
    rings. Rings come back sorted by mean radius.
    """
    mask = np.asarray(mask, dtype=bool)
    size = mask.shape[0]
    if max_radius is None:
        max_radius = math.inf
    g1, g2 = frequency_grid(size)
    x_all, y_all = g1 * size, g2 * size
    eight = np.ones((3, 3), dtype=bool)
    rings = []
    leftover = mask.copy()
    for sl, comp in _components(mask, eight):
        ring = _as_ring(x_all[sl][comp], y_all[sl][comp], size, min_radius, max_radius)
        if ring is not None:
            rings.append(ring)
            leftover[sl][comp] = False
    if leftover.any():
        grown = scipy.ndimage.binary_dilation(leftover, structure=eight)
        for sl, comp in _components(grown, eight):
            comp = comp & leftover[sl]
            ring = _as_ring(x_all[sl][comp], y_all[sl][comp], size, min_radius, max_radius)
            if ring is not None:
                rings.append(ring)
    rings.sort(key=lambda ring: ring.mean_radius)
    return rings


def _design(mic, g1, g2):
    """Linear model chi = M @ (sum, c, s) + offset with sum = df1 + df2."""
    p2 = mic.pixel_size**2
    a = math.pi * mic.wavelength / (2 * p2)
    b = math.pi * mic.wavelength**3 * mic.cs / (2 * p2 * p2)
    r2 = g1 * g1 + g2 * g2
    alpha = np.arctan2(g2, g1)
    mat = a * np.column_stack([r2, r2 * np.cos(2 * alpha), r2 * np.sin(2 * alpha)])
    offset = mic.w - b * r2 * r2
    return mat, offset


def _linear_solve(mic, g1, g2, orders):
    mat, offset = _design(mic, g1, g2)
    target = math.pi * orders - offset
    coef, _, rank, sv = np.linalg.lstsq(mat, target, rcond=None)
    if rank < 3 or sv[-1] < 1e-10 * sv[0]:
        raise ZeroFitError("rank-deficient zero-crossing system (not enough angular diversity)")
    residual = mat @ coef - target
    return coef, float(np.sqrt(np.mean(residual**2)))


def _from_sum_form(coef):
    total, c, s = coef
    delta = math.hypot(c, s)
    return DefocusParams(0.5 * (total + delta), 0.5 * (total - delta), 0.5 * math.atan2(s, c))


def _stack(rings):
    g1 = np.concatenate([r.g1 for r in rings])
    g2 = np.concatenate([r.g2 for r in rings])
    orders = np.concatenate([np.full(r.size, r.order, dtype=float) for r in rings])
    return g1, g2, orders


def _extend_orders(rings, mic, coef):
    """Orders for every ring from the phase predicted by a partial solve.

    Rings whose predicted order does not increase strictly are dropped.
    """
    out = []
    for ring in rings:
        mat, offset = _design(mic, ring.g1, ring.g2)
        ell = int(round(float(np.median(mat @ coef + offset)) / math.pi))
        if ell >= 1 and (not out or ell > out[-1].order):
            out.append(replace(ring, order=ell))
    return out


def assign_orders(rings, mic, df_hint=None, max_offset=5, max_rms=math.pi / 8, seed_rings=3):
    """Attach orders to rings sorted by radius.

    The innermost ``seed_rings`` rings get consecutive orders l0, l0+1, ...
    and the rest are read off the phase predicted by that partial solve, so a
    ring missed further out does not shift every later order. The offset l0
    comes from ``df_hint`` when given, otherwise it is the one in
    1..``max_offset`` with the smallest residual over all rings.
    """
    if not rings:
        raise ZeroFitError("no rings to assign")
    if df_hint is not None:
        hint = df_hint if isinstance(df_hint, DefocusParams) else DefocusParams(df_hint, df_hint, 0.0)
        first = rings[0]
        chi = ctf_phase_polar(mic, hint, np.hypot(first.g1, first.g2), np.arctan2(first.g2, first.g1))
        candidates = [max(1, int(round(float(np.median(chi)) / math.pi)))]
    else:
        candidates = range(1, max_offset + 1)
    best = None
    for ell0 in candidates:
        trial = [replace(r, order=ell0 + i) for i, r in enumerate(rings)]
        if len(trial) > seed_rings:
            try:
                coef, _ = _linear_solve(mic, *_stack(trial[:seed_rings]))
            except ZeroFitError:
                continue
            trial = _extend_orders(trial, mic, coef)
        try:
            _, rms = _linear_solve(mic, *_stack(trial))
        except ZeroFitError:
            if df_hint is None:
                continue
            rms = 0.0  # too few rings to solve, trust the hint
        if best is None or rms < best[1]:
            best = (trial, rms)
    if best is None or best[1] > max_rms:
        raise ZeroFitError("no order offset gives a consistent zero-crossing fit")
    return best[0]


def solve_defocus(rings, mic):
    """Least-squares solution of chi(g) = pi * l over all ring pixels.

    Initialized in closed form (the phase is linear in (df1 + df2,
    (df1 - df2) cos 2a, (df1 - df2) sin 2a) once C_s and w are fixed), then
    polished with Levenberg-Marquardt in (df1, df2, alpha_f) with an analytic
    Jacobian.
    """
    g1, g2, orders = _stack(rings)
    if len(set(orders.tolist())) < 2 and len(rings) < 3:
        raise ZeroFitError("need at least 3 rings or 2 distinct orders")
    coef, _ = _linear_solve(mic, g1, g2, orders)
    start = _from_sum_form(coef)
    mat, offset = _design(mic, g1, g2)
    r2, r2c, r2s = mat.T
    scale = 1e4

    def residual(p):
        df1, df2, ang = p[0] * scale, p[1] * scale, p[2]
        cos2, sin2 = math.cos(2 * ang), math.sin(2 * ang)
        chi = r2 * (df1 + df2) + (df1 - df2) * (r2c * cos2 + r2s * sin2) + offset
        return chi - math.pi * orders

    def jacobian(p):
        df1, df2, ang = p[0] * scale, p[1] * scale, p[2]
        cos2, sin2 = math.cos(2 * ang), math.sin(2 * ang)
        proj = r2c * cos2 + r2s * sin2
        d_ang = 2 * (df1 - df2) * (-r2c * sin2 + r2s * cos2)
        return np.column_stack([(r2 + proj) * scale, (r2 - proj) * scale, d_ang])

    p0 = np.array([start.df1 / scale, start.df2 / scale, start.alpha_f])
    sol = scipy.optimize.least_squares(residual, p0, jac=jacobian, method="lm",
                                       xtol=1e-15, ftol=1e-15, gtol=1e-15)
    res = residual(sol.x)
    jac = jacobian(sol.x)
    defocus = DefocusParams(sol.x[0] * scale, sol.x[1] * scale, sol.x[2])
    identifiable = abs(defocus.df1 - defocus.df2) > 1e-6 * defocus.mean_defocus
    return ZeroFit(
        defocus=defocus,
        rms=float(np.sqrt(np.mean(res**2))),
        rings=list(rings),
        astigmatism_identifiable=identifiable,
        stationarity=float(np.max(np.abs(jac.T @ res)) / max(1.0, res.size)),
    )


def fit_zeros(spectrum, mic, df_hint=None, cutoff=3 / 8, min_rings=MIN_RINGS, min_radius=2.0,
              edge_margin=2.0):
    """Detect rings on a denoised spectrum, assign orders and solve for defocus."""
    spectrum = np.asarray(spectrum, dtype=float)
    mask = detect_minima(spectrum)
    max_radius = cutoff * spectrum.shape[0] - edge_margin
    rings = extract_rings(mask, spectrum, min_radius=min_radius, max_radius=max_radius)
    if len(rings) < min_rings:
        raise ZeroFitError(f"found {len(rings)} zero rings, need {min_rings}")
    rings = assign_orders(rings, mic, df_hint=df_hint)
    fit = solve_defocus(rings, mic)
    if fit.rms > math.pi / 8:
        raise ZeroFitError(f"zero-crossing residual {fit.rms:.3f} rad exceeds pi/8")
    return fit
