"""2D power spectrum estimators: periodogram, Bartlett, Welch and multitaper.

Spectra are ``K x K`` arrays on the centered grid of
:func:`ctfkit.ctf_model.frequency_grid` (DC at index ``(K//2, K//2)``).
A tapered periodogram is normalized by the taper energy,
``|DFT(y * w)|^2 / sum(w^2)``, so that an all-ones taper reproduces the plain
periodogram and every estimator is unbiased for white noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft

from .tapers import TaperSet2D, dpss_1d, tapers_2d

# blocks transformed per FFT batch; bounds peak memory for K = 1024
_BATCH = 8


@dataclass(frozen=True)
class BlockPlan:
    block_size: int
    overlap: float
    origins: tuple  # ((row, col), ...)

    @property
    def count(self):
        return len(self.origins)

    @property
    def stride(self):
        return _stride(self.block_size, self.overlap)


def _stride(block_size, overlap):
    if overlap == 0:
        return block_size
    if overlap == 0.5:
        if block_size % 2:
            raise ValueError("half overlap needs an even block size")
        return block_size // 2
    raise ValueError(f"overlap must be 0 or 0.5, got {overlap}")


def _axis_origins(length, block_size, stride):
    n = (length - block_size) // stride + 1
    margin = length - (block_size + (n - 1) * stride)
    start = margin // 2
    return [start + i * stride for i in range(n)]


def plan_blocks(shape, block_size, overlap=0.5):
    """Maximal tiling of an image of ``shape`` by ``block_size`` blocks.

    Leftover margins are split between both sides of each axis.
    """
    height, width = shape[-2:]
    if height < block_size or width < block_size:
        raise ValueError(f"image {height}x{width} is smaller than block size {block_size}")
    stride = _stride(block_size, overlap)
    rows = _axis_origins(height, block_size, stride)
    cols = _axis_origins(width, block_size, stride)
    origins = tuple((r, c) for r in rows for c in cols)
    return BlockPlan(block_size=block_size, overlap=overlap, origins=origins)


def periodogram(block):
    """|DFT(block)|^2 / K^2 on the centered K x K grid."""
    block = np.asarray(block, dtype=float)
    if block.ndim != 2 or block.shape[0] != block.shape[1]:
        raise ValueError(f"periodogram needs a square block, got shape {block.shape}")
    k = block.shape[0]
    spec = np.abs(scipy.fft.fft2(block)) ** 2 / (k * k)
    return np.fft.fftshift(spec)


def _full_from_half(half, size):
    """Expand an rfft2 power array (K, K//2+1) to the full (K, K) array, unshifted."""
    full = np.empty((size, size))
    ncol = half.shape[1]
    full[:, :ncol] = half
    # P[ky, kx] = P[-ky, -kx] for the missing kx > K/2
    rows = (-np.arange(size)) % size
    cols = size - np.arange(ncol, size)
    full[:, ncol:] = half[rows][:, cols]
    return full


def _blocks(image, plan):
    k = plan.block_size
    for r, c in plan.origins:
        yield image[r : r + k, c : c + k]


def _tapered_average(image, plan, tapers, demean=True):
    """Mean over blocks and tapers of the energy-normalized tapered periodograms."""
    image = np.asarray(image, dtype=float)
    k = plan.block_size
    if tapers.shape[-1] != k or tapers.shape[-2] != k:
        raise ValueError(f"taper size {tapers.shape[-2:]} does not match block size {k}")
    if image.shape[0] < k or image.shape[1] < k:
        raise ValueError(f"image {image.shape} is smaller than block size {k}")
    energy = np.sum(tapers**2, axis=(-1, -2))
    weights = 1.0 / energy
    acc = np.zeros((k, k // 2 + 1))
    batch = []

    def flush():
        stack = np.stack(batch)
        if demean:
            stack = stack - stack.mean(axis=(-1, -2), keepdims=True)
        for taper, wt in zip(tapers, weights):
            coeffs = scipy.fft.rfft2(stack * taper)
            power = coeffs.real**2 + coeffs.imag**2
            acc[...] += wt * power.sum(axis=0)
        batch.clear()

    for block in _blocks(image, plan):
        batch.append(block)
        if len(batch) == _BATCH:
            flush()
    if batch:
        flush()
    acc /= plan.count * len(tapers)
    return np.fft.fftshift(_full_from_half(acc, k))


def classic_estimate(image, plan, method="bartlett", taper=None, demean=True):
    """Bartlett (plain) or Welch (single taper) averaged periodogram.

    For ``method="welch"`` the taper defaults to the zeroth-order 2D DPSS.
    """
    k = plan.block_size
    if method == "bartlett":
        tapers = np.ones((1, k, k))
    elif method == "welch":
        if taper is None:
            taper = tapers_2d(dpss_1d(k, 1), 1).tapers[0]
        taper = np.asarray(taper, dtype=float)
        if taper.ndim == 3:
            if taper.shape[0] != 1:
                raise ValueError("Welch estimation takes a single taper")
            taper = taper[0]
        tapers = taper[None]
    else:
        raise ValueError(f"unknown method {method!r}")
    return _tapered_average(image, plan, tapers, demean=demean)


def multitaper_estimate(image, plan, tapers, demean=True):
    """Average of L*B tapered periodograms over the blocks of ``plan``."""
    arr = tapers.tapers if isinstance(tapers, TaperSet2D) else np.asarray(tapers, dtype=float)
    return _tapered_average(image, plan, arr, demean=demean)


def movie_spectrum(frames, plan, tapers, demean=True):
    """Mean of per-frame multitaper estimates.

    ``frames`` may be any iterable, so frames can be streamed from disk or a
    generator without holding the whole movie in memory.
    """
    acc = np.zeros((plan.block_size, plan.block_size))
    shape = None
    count = 0
    for i, f in enumerate(frames):
        f = np.asarray(f, dtype=float)
        if shape is None:
            shape = f.shape
        elif f.shape != shape:
            raise ValueError(f"frame {i} has shape {f.shape}, expected {shape}")
        acc += multitaper_estimate(f, plan, tapers, demean=demean)
        count += 1
    if count == 0:
        raise ValueError("movie has no frames")
    return acc / count
