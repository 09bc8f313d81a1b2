"""Defocus estimation by maximizing the correlation of |H| with sqrt(S_z).

Stages: a 1D grid search over non-astigmatic defocus along the radial
profile, a second-moment initialization of the astigmatism, and multi-seed
quasi-Newton ascent over the full annulus.

Refinement works in the coordinates ``(mean, half_astig * cos 2a,
half_astig * sin 2a)`` (angstrom, scaled by 1e4). The phase is linear in
these, which keeps the problem well conditioned and avoids the angle
singularity at zero astigmatism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .background import radial_average
from .ctf_model import DefocusParams, polar_grid

DEFOCUS_SCALE = 1e4


@dataclass(frozen=True)
class SearchConfig:
    df_min: float = 5000.0
    df_max: float = 50000.0
    df_step: float = 100.0
    min_res: float = 30.0  # low-frequency cutoff, angstrom
    max_res: float = 5.0  # high-frequency cutoff, angstrom
    seed_offset: float = math.pi / 12
    cutoff: float = 3 / 8
    fd_step: float = 10.0  # angstrom, central differences
    max_iter: int = 200
    grad_tol: float = 1e-6
    step_tol: float = 0.01  # angstrom, smallest line-search step tried
    centered: bool = False  # mean-centered correlation instead of the normalized inner product

    def __post_init__(self):
        if not 0 < self.df_min < self.df_max:
            raise ValueError("need 0 < df_min < df_max")
        if not self.df_step > 0:
            raise ValueError("df_step must be positive")
        if not self.min_res > self.max_res > 0:
            raise ValueError("need min_res > max_res > 0 (angstrom)")

    def band(self, pixel_size):
        """(low, high) radii in cycles/pixel of the resolution annulus."""
        low = pixel_size / self.min_res
        high = min(pixel_size / self.max_res, self.cutoff)
        if not low < high:
            raise ValueError(
                f"resolution band {self.min_res}-{self.max_res} A is empty at pixel size {pixel_size} A"
            )
        return low, high


@dataclass(frozen=True)
class FrequencyRegion:
    """Sample points (r, alpha) and, for 2D regions, their flat grid indices."""

    r: np.ndarray
    alpha: np.ndarray
    index: np.ndarray | None = None

    def __post_init__(self):
        if self.r.size == 0:
            raise ValueError("frequency region is empty")
        if np.any(self.r <= 0):
            raise ValueError("frequency region must exclude DC")

    @classmethod
    def annulus(cls, size, low, high):
        r, alpha = polar_grid(size)
        sel = np.flatnonzero(((r >= low) & (r <= high)).ravel())
        return cls(r=r.ravel()[sel], alpha=alpha.ravel()[sel], index=sel)

    def values(self, field):
        field = np.asarray(field, dtype=float)
        if field.ndim == 2:
            if self.index is None:
                raise ValueError("1D region cannot index a 2D field")
            return field.ravel()[self.index]
        return field


@dataclass(frozen=True)
class MomentInit:
    matrix: np.ndarray
    mu1: float
    mu2: float
    df_star: float
    df1: float
    df2: float


@dataclass
class RefineResult:
    defocus: DefocusParams
    score: float
    converged: bool
    reason: str
    iterations: int
    seed_scores: list = field(default_factory=list)
    initial_scores: list = field(default_factory=list)


class _PhaseModel:
    """Phase chi on a fixed point set, linear in (mean, c, s) defocus coordinates."""

    def __init__(self, mic, r, alpha):
        p2 = mic.pixel_size**2
        self.a = math.pi * mic.wavelength / (2 * p2)
        b = math.pi * mic.wavelength**3 * mic.cs / (2 * p2 * p2)
        r2 = r * r
        self.r2 = r2
        self.r2c = r2 * np.cos(2 * alpha)
        self.r2s = r2 * np.sin(2 * alpha)
        self.offset = mic.w - b * r2 * r2

    def abs_ctf(self, mean, c, s):
        # defocus sum = 2*mean, astigmatic part 2*(c cos + s sin)
        chi = (2 * self.a) * (mean * self.r2 + c * self.r2c + s * self.r2s) + self.offset
        return np.abs(np.sin(chi))


def _correlate(h, v, centered=False):
    if centered:
        h = h - h.mean(axis=-1, keepdims=True)
        v = v - v.mean()
    num = h @ v
    den = np.sqrt(np.sum(h * h, axis=-1) * (v @ v))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / den, 0.0)


def to_linear(defocus):
    half = 0.5 * (defocus.df1 - defocus.df2)
    return np.array([
        defocus.mean_defocus,
        half * math.cos(2 * defocus.alpha_f),
        half * math.sin(2 * defocus.alpha_f),
    ])


def from_linear(x):
    mean, c, s = (float(v) for v in x)
    half = math.hypot(c, s)
    alpha = 0.5 * math.atan2(s, c)
    return DefocusParams(mean + half, mean - half, alpha)


def pearson_cc(spectrum_sqrt, defocus, mic, region, centered=False):
    """Normalized inner product of |H_phi| and sqrt(S_z) over ``region``."""
    v = region.values(spectrum_sqrt)
    if np.any(v < 0):
        raise ValueError("spectrum root must be non-negative")
    if not np.any(v > 0):
        raise ValueError("correlation undefined: spectrum is zero on the region")
    model = _PhaseModel(mic, region.r, region.alpha)
    x = to_linear(defocus)
    return float(_correlate(model.abs_ctf(*x), v, centered))


def first_radial_maximum(values):
    """Index of the first sample exceeding both neighbours, or 1 if none."""
    v = np.asarray(values, dtype=float)
    if v.size < 3:
        raise ValueError("profile needs at least 3 samples")
    peaks = np.flatnonzero((v[1:-1] > v[:-2]) & (v[1:-1] > v[2:]))
    return int(peaks[0]) + 1 if peaks.size else 1


def defocus_grid(config):
    n = int(math.floor((config.df_max - config.df_min) / config.df_step + 1e-9)) + 1
    return config.df_min + config.df_step * np.arange(n)


def radial_region(profile_size, start_index, high):
    idx = np.arange(start_index, int(math.floor(high * profile_size + 1e-9)) + 1)
    if idx.size == 0:
        raise ValueError("radial search segment is empty")
    r = idx / profile_size
    return idx, FrequencyRegion(r=r, alpha=np.zeros_like(r))


def grid_search(spectrum_sqrt, mic, config, m1_index=None, return_scores=False):
    """Best non-astigmatic defocus on the 1D grid (ties go to the smaller value).

    The correlation runs along the radial profile of ``spectrum_sqrt`` from
    the first profile maximum (or the low-resolution cutoff, if larger) to
    the high-resolution cutoff.
    """
    spectrum_sqrt = np.asarray(spectrum_sqrt, dtype=float)
    size = spectrum_sqrt.shape[0]
    profile = radial_average(spectrum_sqrt, config.cutoff).values
    low, high = config.band(mic.pixel_size)
    if m1_index is None:
        m1_index = first_radial_maximum(profile)
    start = max(m1_index, int(math.ceil(low * size - 1e-9)))
    idx, region = radial_region(size, start, high)
    values = profile[idx]
    if not np.any(values > 0):
        raise ValueError("correlation undefined: radial profile is zero on the search segment")
    model = _PhaseModel(mic, region.r, region.alpha)
    grid = defocus_grid(config)
    h = model.abs_ctf(grid[:, None], 0.0, 0.0)
    scores = _correlate(h, values, config.centered)
    best = int(np.argmax(scores))
    if return_scores:
        return float(grid[best]), grid, scores
    return float(grid[best])


def moment_init(spectrum_sqrt, df_star):
    """Astigmatism initialization from the second moments of sqrt(S_z)."""
    field_ = np.asarray(spectrum_sqrt, dtype=float)
    if np.any(field_ < 0):
        raise ValueError("spectrum root must be non-negative")
    total = field_.sum()
    if not total > 0:
        raise ValueError("spectrum has zero total mass")
    size = field_.shape[0]
    f = (np.arange(size) - size // 2) / size
    g2, g1 = np.meshgrid(f, f, indexing="ij")
    m11 = np.sum(g1 * g1 * field_)
    m12 = np.sum(g1 * g2 * field_)
    m22 = np.sum(g2 * g2 * field_)
    mat = np.array([[m11, m12], [m12, m22]])
    mu2, mu1 = np.linalg.eigvalsh(mat)
    df1 = 2 * mu1 * df_star / (mu1 + mu2)
    # df2 from the sum so df1 + df2 = 2 df_star holds exactly
    df2 = 2 * df_star - df1
    return MomentInit(matrix=mat, mu1=float(mu1), mu2=float(mu2), df_star=float(df_star),
                      df1=float(df1), df2=float(df2))


def seed_angles(offset=math.pi / 12):
    return [offset, offset + math.pi / 6, offset - math.pi / 6,
            offset + math.pi / 3, offset - math.pi / 3, offset - math.pi / 2]


def _ascend(objective, x0, config):
    """Quasi-Newton (BFGS) ascent with Armijo backtracking by halving.

    Gradients are central differences. The first step is scaled to move
    about 100 angstrom; every accepted step increases the objective. Stops
    on the gradient tolerance, when the line search finds no ascent step
    longer than ``step_tol`` angstrom, or at the iteration cap.
    """
    h = config.fd_step / DEFOCUS_SCALE
    step_tol = config.step_tol / DEFOCUS_SCALE
    x = np.asarray(x0, dtype=float) / DEFOCUS_SCALE
    fx = objective(x)
    eye = np.eye(3)

    def grad(x):
        return np.array([(objective(x + h * e) - objective(x - h * e)) / (2 * h) for e in eye])

    g = grad(x)
    inv_hess = None
    for it in range(1, config.max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= config.grad_tol:
            return x * DEFOCUS_SCALE, fx, True, "gradient tolerance", it - 1
        if inv_hess is None:
            inv_hess = eye * (100.0 / DEFOCUS_SCALE / gnorm)
        direction = inv_hess @ g
        slope = float(g @ direction)
        if slope <= 0:
            # lost positive definiteness; restart from a scaled gradient step
            inv_hess = eye * (100.0 / DEFOCUS_SCALE / gnorm)
            direction = inv_hess @ g
            slope = float(g @ direction)
        t = 1.0
        accepted = False
        step_norm = float(np.linalg.norm(direction))
        while t * step_norm > step_tol:
            cand = x + t * direction
            fc = objective(cand)
            if fc >= fx + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # no ascent step longer than step_tol exists along the search direction
            return x * DEFOCUS_SCALE, fx, True, "step tolerance", it
        g_new = grad(cand)
        s_vec = cand - x
        # maximizing f == minimizing -f: curvature pair (s, -(g_new - g))
        y_vec = g - g_new
        sy = float(s_vec @ y_vec)
        if sy > 1e-16:
            rho = 1.0 / sy
            v = eye - rho * np.outer(s_vec, y_vec)
            inv_hess = v @ inv_hess @ v.T + rho * np.outer(s_vec, s_vec)
        x, fx, g = cand, fc, g_new
    return x * DEFOCUS_SCALE, fx, False, "iteration cap", config.max_iter


def refine(spectrum_sqrt, mic, init, config, extra_starts=()):
    """Multi-seed ascent of the correlation over the resolution annulus.

    Seeds are the moment-init defoci at each angle of ``seed_angles``, plus
    any ``extra_starts`` (DefocusParams) appended after them.
    """
    spectrum_sqrt = np.asarray(spectrum_sqrt, dtype=float)
    size = spectrum_sqrt.shape[0]
    low, high = config.band(mic.pixel_size)
    region = FrequencyRegion.annulus(size, low, high)
    values = region.values(spectrum_sqrt)
    if not np.any(values > 0):
        raise ValueError("correlation undefined: spectrum is zero on the annulus")
    model = _PhaseModel(mic, region.r, region.alpha)

    def objective(xs):
        x = xs * DEFOCUS_SCALE
        return float(_correlate(model.abs_ctf(*x), values, config.centered))

    best = None
    seed_scores, initial_scores = [], []
    starts = [DefocusParams(init.df1, init.df2, a) for a in seed_angles(config.seed_offset)]
    for start in [*starts, *extra_starts]:
        x0 = to_linear(start)
        initial_scores.append(objective(x0 / DEFOCUS_SCALE))
        x, fx, ok, reason, its = _ascend(objective, x0, config)
        seed_scores.append(fx)
        if best is None or fx > best[1] or (fx == best[1] and x[0] < best[0][0]):
            best = (x, fx, ok, reason, its)
    x, fx, ok, reason, its = best
    return RefineResult(defocus=from_linear(x), score=fx, converged=ok, reason=reason,
                        iterations=its, seed_scores=seed_scores, initial_scores=initial_scores)


@dataclass
class CorrelationFit:
    defocus: DefocusParams
    score: float
    df_star: float
    grid_score: float
    init: MomentInit
    refine: RefineResult


def fit_correlation(spectrum, mic, config, m1_index=None, refine_spectrum=None, extra_starts=()):
    """Full correlation fit on a denoised, background-subtracted spectrum S_z.

    Grid search and moment init always use ``spectrum``. Refinement uses
    ``refine_spectrum`` when given (typically the background-subtracted
    spectrum before projection, which keeps the astigmatism unbiased). The
    grid-search point is added as a seventh start so the returned score is
    never below it. ``extra_starts`` (for example a zero-crossing estimate)
    are refined as further seeds.
    """
    root = np.sqrt(np.clip(np.asarray(spectrum, dtype=float), 0, None))
    df_star = grid_search(root, mic, config, m1_index=m1_index)
    init = moment_init(root, df_star)
    if refine_spectrum is not None:
        root = np.sqrt(np.clip(np.asarray(refine_spectrum, dtype=float), 0, None))
    grid_point = DefocusParams(df_star, df_star, 0.0)
    result = refine(root, mic, init, config, extra_starts=(grid_point, *extra_starts))
    low, high = config.band(mic.pixel_size)
    region = FrequencyRegion.annulus(root.shape[0], low, high)
    grid_score = pearson_cc(root, grid_point, mic, region, config.centered)
    return CorrelationFit(defocus=result.defocus, score=result.score, df_star=df_star,
                          grid_score=grid_score, init=init, refine=result)
