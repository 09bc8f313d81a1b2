"""Steerable Fourier-Bessel basis on the centered spectrum grid.

The basis functions are ``u_{k,q}(r) cos(k alpha)`` and ``u_{k,q}(r) sin(k alpha)``
restricted to the disk ``r <= cutoff``. Radial parts start from Bessel
functions ``J_k(z_{k,q} r / r_max)`` where ``z_{k,q}`` are the zeros of ``J_k'``
(plus ``z = 0`` for ``k = 0`` so constants are representable), kept while
``z_{k,q} <= pi * r_max`` in pixel units, and are then re-orthonormalized
on the sampled grid separately for each angular factor.

Because the pixel disk is invariant under the dihedral group of the square,
blocks for angular factors whose harmonics differ by a non-multiple of 4
are exactly orthogonal. Remaining couplings (e.g. ``k = 0`` with ``k = 4``)
are handled through the full Gram matrix in :meth:`SteerableBasis.expand`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg
import scipy.special

from .ctf_model import polar_grid


@dataclass
class _AngularBlock:
    k: int
    trig: str  # "cos" or "sin"
    zeros: np.ndarray  # Bessel arguments z_{k,q}
    transform: np.ndarray  # lower-triangular map raw Bessel -> orthonormal radial
    radial: np.ndarray  # (p, n_unique_radii) orthonormal radial values
    angular: np.ndarray  # (n_pixels,) trig(k alpha) on the disk pixels


@dataclass
class SteerableCoeffs:
    """Complex coefficients a[k][q] for each angular frequency k of the basis."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, k):
        return self.values[k]

    def max_abs(self):
        return max((np.max(np.abs(v)) for v in self.values.values() if v.size), default=0.0)


class SteerableBasis:
    """Sampled steerable basis on a ``size`` x ``size`` centered grid."""

    def __init__(self, size, k_set=(-2, 0, 2), cutoff=3 / 8):
        if size < 8:
            raise ValueError(f"grid size must be >= 8, got {size}")
        ks = sorted(set(int(k) for k in k_set))
        if sorted(-k for k in ks) != ks:
            raise ValueError(f"k_set must be symmetric about 0, got {k_set}")
        if not 0 < cutoff <= 0.5:
            raise ValueError(f"cutoff must lie in (0, 1/2], got {cutoff}")
        self.size = size
        self.k_set = tuple(ks)
        self.cutoff = cutoff
        self.r_max = cutoff * size  # disk radius in pixels

        r, alpha = polar_grid(size)
        r_pix = r * size
        self.mask = r_pix <= self.r_max + 1e-9
        rp = r_pix[self.mask]
        al = alpha[self.mask]
        # pixels sharing n1^2 + n2^2 share every radial function value
        sq = np.rint(rp**2).astype(np.int64)
        uniq, self._inverse = np.unique(sq, return_inverse=True)
        self.radii = np.sqrt(uniq.astype(float))
        self._n_unique = len(uniq)

        self.blocks = []
        for k in (k for k in ks if k >= 0):
            for trig in ("cos",) if k == 0 else ("cos", "sin"):
                block = self._build_block(k, trig, al)
                if block is not None:
                    self.blocks.append(block)
        if not self.blocks:
            raise ValueError("cutoff too small: the basis is empty")
        self._coupling = self._cross_gram()

    def _build_block(self, k, trig, alpha):
        zeros = _neumann_zeros(k, self.r_max)
        if zeros.size == 0:
            return None
        if k == 0:
            ang = np.ones_like(alpha)
        elif trig == "cos":
            ang = np.cos(k * alpha)
        else:
            ang = np.sin(k * alpha)
        raw = scipy.special.jv(k, np.outer(zeros, self.radii / self.r_max))
        weight = np.bincount(self._inverse, ang**2, minlength=self._n_unique)
        gram = (raw * weight) @ raw.T
        chol = np.linalg.cholesky(gram)
        transform = scipy.linalg.solve_triangular(chol, np.eye(len(zeros)), lower=True)
        return _AngularBlock(
            k=k, trig=trig, zeros=zeros, transform=transform,
            radial=transform @ raw, angular=ang,
        )

    def _cross_gram(self):
        """Full Gram matrix if any two blocks are coupled on the grid, else None."""
        sizes = [b.radial.shape[0] for b in self.blocks]
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        gram = np.eye(offsets[-1])
        coupled = False
        for i, bi in enumerate(self.blocks):
            for j in range(i + 1, len(self.blocks)):
                bj = self.blocks[j]
                if bi.trig != bj.trig:
                    continue
                if (bi.k - bj.k) % 4 and (bi.k + bj.k) % 4:
                    continue
                w = np.bincount(self._inverse, bi.angular * bj.angular, minlength=self._n_unique)
                block = (bi.radial * w) @ bj.radial.T
                gram[offsets[i] : offsets[i + 1], offsets[j] : offsets[j + 1]] = block
                gram[offsets[j] : offsets[j + 1], offsets[i] : offsets[i + 1]] = block.T
                coupled = True
        return scipy.linalg.cho_factor(gram) if coupled else None

    @property
    def counts(self):
        """Number of radial functions p_k per non-negative k."""
        out = {}
        for b in self.blocks:
            out[b.k] = b.radial.shape[0]
        return out

    @property
    def num_functions(self):
        return sum(b.radial.shape[0] for b in self.blocks)

    def _real_coeffs(self, field):
        field = np.asarray(field, dtype=float)
        if field.shape != (self.size, self.size):
            raise ValueError(f"field shape {field.shape} does not match grid {self.size}")
        values = field[self.mask]
        parts = []
        for b in self.blocks:
            moments = np.bincount(self._inverse, values * b.angular, minlength=self._n_unique)
            parts.append(b.radial @ moments)
        flat = np.concatenate(parts)
        if self._coupling is not None:
            flat = scipy.linalg.cho_solve(self._coupling, flat)
        return flat

    def _split(self, flat):
        out, start = [], 0
        for b in self.blocks:
            n = b.radial.shape[0]
            out.append(flat[start : start + n])
            start += n
        return out

    def expand(self, field):
        """Coefficients of the least-squares projection of a real field.

        With an orthonormal basis these are the grid inner products
        ``sum_g field(g) u_{k,q}(r) e^{-jk alpha}``, folded so that
        ``a[-k] = conj(a[k])``.
        """
        parts = self._split(self._real_coeffs(field))
        by_key = {(b.k, b.trig): c for b, c in zip(self.blocks, parts)}
        coeffs = {}
        for k in self.k_set:
            kk = abs(k)
            if kk == 0:
                coeffs[0] = by_key[(0, "cos")].astype(complex)
                continue
            c = by_key[(kk, "cos")]
            s = by_key[(kk, "sin")]
            a = 0.5 * (c - 1j * s)
            coeffs[k] = a if k > 0 else np.conj(a)
        return SteerableCoeffs(coeffs)

    def synthesize(self, coeffs):
        """Evaluate the truncated expansion on the grid (zero outside the disk)."""
        if isinstance(coeffs, SteerableCoeffs):
            coeffs = coeffs.values
        values = np.zeros(self.mask.sum())
        for b in self.blocks:
            if b.k == 0:
                c = np.real(coeffs[0])
            elif b.trig == "cos":
                c = 2 * np.real(coeffs[b.k])
            else:
                c = -2 * np.imag(coeffs[b.k])
            values += (c @ b.radial)[self._inverse] * b.angular
        out = np.zeros((self.size, self.size))
        out[self.mask] = values
        return out

    def project(self, field):
        """Orthogonal projection of ``field`` onto the span of the basis."""
        flat = self._real_coeffs(field)
        values = np.zeros(self.mask.sum())
        for b, c in zip(self.blocks, self._split(flat)):
            values += (c @ b.radial)[self._inverse] * b.angular
        out = np.zeros((self.size, self.size))
        out[self.mask] = values
        return out

    def radial_block(self):
        for b in self.blocks:
            if b.k == 0:
                return b
        raise ValueError("basis has no k = 0 component")

    def radial_profile(self, field, radii):
        """k = 0 component of ``field`` evaluated at ``radii`` (pixel units)."""
        b = self.radial_block()
        moments = np.bincount(self._inverse, np.asarray(field, float)[self.mask], minlength=self._n_unique)
        c = b.radial @ moments
        raw = scipy.special.jv(0, np.outer(b.zeros, np.asarray(radii, float) / self.r_max))
        return c @ (b.transform @ raw)

    def functions(self):
        """Dense real basis functions, shape (num_functions, size, size). Small grids only."""
        out = []
        for b in self.blocks:
            for row in b.radial:
                f = np.zeros((self.size, self.size))
                f[self.mask] = row[self._inverse] * b.angular
                out.append(f)
        return np.stack(out)


def _neumann_zeros(k, r_max):
    limit = np.pi * r_max
    # J_k' has roughly one zero per pi beyond k
    n = int(limit / np.pi) + k + 4
    z = scipy.special.jnp_zeros(k, n)
    if k == 0:
        z = np.concatenate([[0.0], z])
    return z[z <= limit]


@lru_cache(maxsize=8)
def build_basis(size, k_set=(-2, 0, 2), cutoff=3 / 8):
    """Cached :class:`SteerableBasis` (construction is the expensive part)."""
    return SteerableBasis(size, tuple(k_set), cutoff)


def denoise_spectrum(subtracted, basis):
    """Square of the steerable projection of the square root of a spectrum."""
    root = np.sqrt(np.clip(np.asarray(subtracted, float), 0, None))
    return np.square(basis.project(root))
