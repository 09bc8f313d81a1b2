"""End-to-end CTF estimation over a batch of micrographs or movies.

Per input and block size K: multitaper spectrum (frame-averaged for
movies), radial profile, LP background, subtraction, steerable projection,
then a correlation and/or zero-crossing fit. The block size whose fit
correlates best with a Welch background-subtracted estimate at the same K
is kept.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import repeat
from pathlib import Path

import numpy as np

from .background import lp_background, radial_average, subtract_background
from .ctf_model import MicroscopeParams
from .fit_correlation import (
    FrequencyRegion,
    SearchConfig,
    fit_correlation,
    first_radial_maximum,
    pearson_cc,
)
from .fit_zeros import ZeroFitError, detect_minima, fit_zeros
from .mrc import read_mrc
from .report import CtfReport, render_diagnostics
from .spectral import classic_estimate, movie_spectrum, multitaper_estimate, plan_blocks
from .steerable import build_basis, denoise_spectrum
from .tapers import multitapers

METHODS = ("corr", "zeros", "auto")


@dataclass(frozen=True)
class PipelineConfig:
    pixel_size: float  # angstrom
    voltage: float = 300.0  # kV
    cs_mm: float = 2.7
    amplitude_contrast: float = 0.1
    block_sizes: tuple = (512, 1024)
    tapers: tuple = (4, 16)
    cutoff: float = 3 / 8
    search: SearchConfig = field(default_factory=SearchConfig)
    method: str = "corr"
    movie: bool = False
    drop_first_frame: bool = True
    select_per_dataset: bool = False
    refine_on: str = "subtracted"  # subtracted | projected
    diagnostics: bool = False
    out_dir: str | None = None
    workers: int = 1
    record_timing: bool = True

    def __post_init__(self):
        if not self.block_sizes:
            raise ValueError("need at least one block size")
        if len(self.tapers) != len(self.block_sizes):
            raise ValueError("tapers must list one count per block size")
        for count in self.tapers:
            if not 1 <= count <= 64:
                raise ValueError(f"taper count {count} outside 1..64")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.refine_on not in ("subtracted", "projected"):
            raise ValueError("refine_on must be 'subtracted' or 'projected'")
        if not 0 < self.cutoff <= 0.5:
            raise ValueError("cutoff must lie in (0, 1/2]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.search.cutoff != self.cutoff:
            object.__setattr__(self, "search", replace(self.search, cutoff=self.cutoff))
        if self.diagnostics and self.out_dir is None:
            raise ValueError("diagnostics need an out_dir")

    @property
    def mic(self):
        return MicroscopeParams.from_settings(self.voltage, self.cs_mm, self.amplitude_contrast,
                                              self.pixel_size)


@dataclass
class SpectrumStages:
    raw: np.ndarray
    subtracted: np.ndarray
    projected: np.ndarray
    mask: np.ndarray


@dataclass
class BlockEstimate:
    block_size: int
    defocus: object
    fit_method: str
    score: float  # selection correlation against the Welch reference
    fit_score: float | None = None  # correlation at the returned defocus
    grid_score: float | None = None  # same correlation at the grid-search point
    zero_rings: int | None = None
    zero_residual: float | None = None
    warnings: list = field(default_factory=list)
    stages: SpectrumStages | None = None


def _subtracted(spectrum, cutoff, basis):
    profile = radial_average(spectrum, cutoff, basis)
    return subtract_background(spectrum, lp_background(profile))


def selection_score(frames, plan, defocus, mic, config, basis):
    """Correlation of |H| with a Welch background-subtracted spectrum at the same K."""
    welch = np.mean([classic_estimate(f, plan, method="welch") for f in frames], axis=0)
    reference = np.sqrt(_subtracted(welch, config.cutoff, basis))
    low, high = config.search.band(mic.pixel_size)
    region = FrequencyRegion.annulus(plan.block_size, low, high)
    return pearson_cc(reference, defocus, mic, region, config.search.centered)


def estimate_block(frames, block_size, taper_count, config, keep_stages=False):
    """Spectrum, denoising and fit for one block size."""
    mic = config.mic
    plan = plan_blocks(frames[0].shape, block_size)
    tapers = multitapers(block_size, taper_count)
    if len(frames) == 1:
        raw = multitaper_estimate(frames[0], plan, tapers)
    else:
        raw = movie_spectrum(frames, plan, tapers)
    basis = build_basis(block_size, (-2, 0, 2), config.cutoff)
    sub = _subtracted(raw, config.cutoff, basis)
    proj = denoise_spectrum(sub, basis)
    m1 = first_radial_maximum(radial_average(sub, config.cutoff, basis).values)
    refine_spectrum = sub if config.refine_on == "subtracted" else None

    warnings = []
    zero = None
    if config.method in ("zeros", "auto"):
        try:
            zero = fit_zeros(proj, mic, cutoff=config.cutoff)
        except (ZeroFitError, ValueError) as exc:
            warnings.append(f"K={block_size}: zero-crossing fit failed ({exc}); using correlation")

    if config.method == "zeros" and zero is not None:
        defocus, method, fit_score, grid_score = zero.defocus, "zeros", None, None
    else:
        extra = (zero.defocus,) if zero is not None else ()
        fit = fit_correlation(proj, mic, config.search, m1_index=m1,
                              refine_spectrum=refine_spectrum, extra_starts=extra)
        defocus, fit_score, grid_score = fit.defocus, fit.score, fit.grid_score
        method = "auto" if (config.method == "auto" and zero is not None) else "corr"
        if fit.refine.reason == "iteration cap":
            warnings.append(f"K={block_size}: refinement stopped ({fit.refine.reason})")

    score = selection_score(frames, plan, defocus, mic, config, basis)
    stages = None
    if keep_stages:
        stages = SpectrumStages(raw=raw, subtracted=sub, projected=proj, mask=detect_minima(proj))
    return BlockEstimate(
        block_size=block_size, defocus=defocus, fit_method=method, score=score,
        fit_score=fit_score, grid_score=grid_score,
        zero_rings=None if zero is None else len(zero.rings),
        zero_residual=None if zero is None else zero.rms,
        warnings=warnings, stages=stages,
    )


def load_frames(source, config):
    """Frames to analyse from a path or an in-memory array.

    Stacks are averaged per frame in movie mode (optionally without the
    first frame) and summed into one micrograph otherwise.
    """
    data = read_mrc(source)[0] if isinstance(source, (str, os.PathLike)) else np.asarray(source, float)
    if not np.all(np.isfinite(data)):
        raise ValueError("input contains non-finite values")
    if data.ndim == 2:
        return [data]
    if data.ndim != 3:
        raise ValueError(f"expected a 2D image or 3D stack, got {data.ndim}D")
    if config.movie:
        if config.drop_first_frame and data.shape[0] > 1:
            data = data[1:]
        return list(data)
    return [data.sum(axis=0)]


def _source_id(source, index):
    if isinstance(source, tuple):
        return str(source[0])
    if isinstance(source, (str, os.PathLike)):
        return Path(source).name
    return f"input_{index}"


def _diagnostic_path(config, file_id, block_size):
    stem = Path(file_id).stem
    return Path(config.out_dir) / f"{stem}_ctf_K{block_size}.png"


def process_one(item, config):
    """Run every configured block size on one input; never raises.

    Returns ``(report, estimates)`` where ``estimates`` maps block size to
    its BlockEstimate (without retained stages).
    """
    index, source = item
    file_id = _source_id(source, index)
    payload = source[1] if isinstance(source, tuple) else source
    start = time.perf_counter()
    try:
        frames = load_frames(payload, config)
        warnings = []
        estimates = {}
        for block_size, count in zip(config.block_sizes, config.tapers):
            if min(frames[0].shape) < block_size:
                warnings.append(f"K={block_size}: image {frames[0].shape} smaller than block, skipped")
                continue
            est = estimate_block(frames, block_size, count, config, keep_stages=config.diagnostics)
            if config.diagnostics:
                render_diagnostics(est.stages, _diagnostic_path(config, file_id, block_size))
                est.stages = None
            warnings.extend(est.warnings)
            estimates[block_size] = est
        if not estimates:
            raise ValueError("no configured block size fits inside the image")
        best = choose_block(estimates)
        report = _report(file_id, estimates, best, warnings)
    except Exception as exc:  # per-file isolation
        report = CtfReport(file_id=file_id, status="error", error=f"{type(exc).__name__}: {exc}")
        estimates = {}
    if config.record_timing:
        report.timing_s = time.perf_counter() - start
    return report, estimates


def choose_block(estimates, preferred=None):
    """Block size with the highest selection score; ties go to the smaller K."""
    if preferred is not None and preferred in estimates:
        return preferred
    return max(sorted(estimates), key=lambda k: (estimates[k].score, -k))


def _report(file_id, estimates, chosen, warnings):
    est = estimates[chosen]
    return CtfReport.from_defocus(
        file_id, est.defocus, block_size=chosen,
        scores={str(k): e.score for k, e in sorted(estimates.items())},
        fit_method=est.fit_method, zero_rings=est.zero_rings, zero_residual=est.zero_residual,
        warnings=list(warnings),
    )


def select_dataset_block(results):
    """Block size with the highest mean selection score across the batch."""
    totals = {}
    for _, estimates in results:
        for k, est in estimates.items():
            totals.setdefault(k, []).append(est.score)
    if not totals:
        return None
    means = {k: math.fsum(v) / len(v) for k, v in totals.items()}
    return max(sorted(means), key=lambda k: (means[k], -k))


def run_pipeline(config, inputs):
    """Process ``inputs`` (paths, arrays or ``(name, array)`` pairs) in order."""
    items = list(enumerate(inputs))
    if not items:
        return []
    if config.out_dir is not None:
        Path(config.out_dir).mkdir(parents=True, exist_ok=True)
    if config.workers == 1 or len(items) == 1:
        results = [process_one(item, config) for item in items]
    else:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(process_one, items, repeat(config)))
    if config.select_per_dataset:
        chosen = select_dataset_block(results)
        reports = []
        for report, estimates in results:
            if report.status == "ok":
                k = choose_block(estimates, preferred=chosen)
                timing = report.timing_s
                report = _report(report.file_id, estimates, k, report.warnings)
                report.timing_s = timing
            reports.append(report)
        return reports
    return [report for report, _ in results]
