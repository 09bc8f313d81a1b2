"""Discrete prolate spheroidal sequence (DPSS) tapers and their 2D products."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class TaperSet1D:
    length: int
    vectors: np.ndarray  # (d, K), rows orthonormal
    eigenvalues: np.ndarray  # (d,), descending
    bandwidth: float  # R = 2d/K

    @property
    def count(self):
        return self.vectors.shape[0]


@dataclass(frozen=True)
class TaperSet2D:
    size: int
    tapers: np.ndarray  # (L, K, K), tapers[d*q + p] = outer(t_p, t_q)

    @property
    def count(self):
        return self.tapers.shape[0]


def tapers_per_axis(count):
    """Smallest d with (d - 1)^2 < count <= d^2."""
    if count < 1:
        raise ValueError("taper count must be >= 1")
    d = math.isqrt(count)
    return d if d * d == count else d + 1


def sinc_kernel(length, bandwidth):
    """K x K matrix sin(pi R (k - m)) / (pi (k - m)) with diagonal R."""
    idx = np.arange(length)
    diff = (idx[:, None] - idx[None, :]).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        mat = np.sin(np.pi * bandwidth * diff) / (np.pi * diff)
    np.fill_diagonal(mat, bandwidth)
    return mat


@lru_cache(maxsize=8)
def _dpss_cached(length, count):
    d = tapers_per_axis(count)
    bandwidth = 2.0 * d / length
    mat = sinc_kernel(length, bandwidth)
    try:
        evals, evecs = np.linalg.eigh(mat)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigen-decomposition failed for K={length}") from exc
    order = np.argsort(evals)[::-1][:d]
    vectors = evecs[:, order].T.copy()
    for row in vectors:
        # sign convention: first entry that is not negligibly small is positive
        nz = np.flatnonzero(np.abs(row) > 1e-12 * np.abs(row).max())[0]
        if row[nz] < 0:
            row *= -1
    vectors.setflags(write=False)
    evals = evals[order].copy()
    evals.setflags(write=False)
    return TaperSet1D(length=length, vectors=vectors, eigenvalues=evals, bandwidth=bandwidth)


def dpss_1d(length, count):
    """Leading ``d = ceil(sqrt(count))`` Slepian sequences for blocks of ``length``.

    Parameters
    ----------
    length : int
        Block size K (>= 8).
    count : int
        Number of 2D tapers L that will be formed (1..64).
    """
    if length < 8:
        raise ValueError(f"block size must be >= 8, got {length}")
    if not 1 <= count <= 64:
        raise ValueError(f"taper count must lie in [1, 64], got {count}")
    return _dpss_cached(int(length), int(count))


def tapers_2d(taper_set, count):
    """Separable 2D tapers w[d*q + p][k1, k2] = t_p[k1] * t_q[k2], first ``count`` of them."""
    d = taper_set.count
    if count > d * d:
        raise ValueError(f"cannot form {count} tapers from {d} sequences")
    t = taper_set.vectors
    out = np.empty((count, taper_set.length, taper_set.length))
    for idx in range(count):
        q, p = divmod(idx, d)
        np.multiply.outer(t[p], t[q], out=out[idx])
    return TaperSet2D(size=taper_set.length, tapers=out)


def multitapers(length, count):
    return tapers_2d(dpss_1d(length, count), count)
