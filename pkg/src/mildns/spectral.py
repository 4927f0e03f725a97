"""Torus grid, Fourier transforms, multipliers and quadrature norms on T^2 = R^2/Z^2.

Conventions used throughout the package:

* basis functions ``exp(2*pi*i k.x)`` with ``k`` on the integer lattice, so the
  Laplacian multiplier is ``-4 pi^2 |k|^2``;
* the forward transform carries the ``1/n^2`` factor, so coefficients are
  Fourier-series coefficients (a constant field ``c`` maps to ``c`` at ``k = 0``);
* physical arrays are indexed ``[i1, i2]`` with ``x = (i1/n, i2/n)``;
* the Nyquist row/column (``k1`` or ``k2`` equal to ``-n/2``) is zeroed by every
  odd derivative and by the Leray projector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
import scipy.fft

CONVENTION = {
    "torus": "R^2/Z^2, unit measure",
    "fourier_basis": "exp(2 pi i k.x), k in Z^2",
    "laplacian_multiplier": "-4 pi^2 |k|^2",
    "forward_normalization": "1/n^2 on the forward transform",
    "nyquist": "zeroed in derivative and projection multipliers",
    "tensor_norm": "pointwise Frobenius magnitude",
    "vector_norm": "pointwise Euclidean magnitude",
}

DIVFREE_RTOL = 1e-12


@dataclass(frozen=True)
class TorusGrid:
    """Uniform ``n x n`` grid on the unit torus with its integer frequency lattice."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 4 or self.n % 2:
            raise ValueError(f"grid size must be an even integer >= 4, got {self.n!r}")

    @property
    def cell_measure(self) -> float:
        return 1.0 / self.n**2

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @cached_property
    def freqs(self) -> np.ndarray:
        """Integer frequencies along one axis in FFT order, ``{-n/2, ..., n/2 - 1}``."""
        return np.fft.fftfreq(self.n, 1.0 / self.n)

    @cached_property
    def wavevector(self) -> np.ndarray:
        """Array of shape ``(2, n, n)`` holding ``(k1, k2)`` at every lattice index."""
        k1, k2 = np.meshgrid(self.freqs, self.freqs, indexing="ij")
        return np.stack([k1, k2])

    @cached_property
    def ksq(self) -> np.ndarray:
        return self.wavevector[0] ** 2 + self.wavevector[1] ** 2

    @cached_property
    def nyquist(self) -> np.ndarray:
        k = self.wavevector
        return (k[0] == -self.n // 2) | (k[1] == -self.n // 2)

    @cached_property
    def odd_wavevector(self) -> np.ndarray:
        """Wavevector with the Nyquist row and column set to zero."""
        k = self.wavevector.copy()
        k[:, self.nyquist] = 0.0
        return k

    @cached_property
    def inv_ksq(self) -> np.ndarray:
        """``1/|k|^2`` with the mean mode mapped to zero."""
        out = np.zeros_like(self.ksq)
        np.divide(1.0, self.ksq, out=out, where=self.ksq > 0)
        return out

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask: keep ``|k1|, |k2| < n/3``."""
        k = self.wavevector
        cut = self.n / 3.0
        return (np.abs(k[0]) < cut) & (np.abs(k[1]) < cut)

    @cached_property
    def points(self) -> np.ndarray:
        """Physical coordinates, shape ``(2, n, n)``."""
        x = np.arange(self.n) / self.n
        return np.stack(np.meshgrid(x, x, indexing="ij"))


@lru_cache(maxsize=None)
def torus_grid(n: int) -> TorusGrid:
    """Shared grid instance for resolution ``n`` (keeps cached multipliers alive)."""
    return TorusGrid(n)


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite entries")


@dataclass(frozen=True)
class PhysicalVectorField:
    grid: TorusGrid
    components: np.ndarray = field(repr=False)

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=float)
        if comps.shape != (2, *self.grid.shape):
            raise ValueError(f"expected components of shape (2, {self.grid.n}, {self.grid.n}), got {comps.shape}")
        _check_finite(comps, "vector field")
        comps.flags.writeable = False
        object.__setattr__(self, "components", comps)


@dataclass(frozen=True)
class PhysicalTensorField:
    grid: TorusGrid
    components: np.ndarray = field(repr=False)

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=float)
        if comps.shape != (2, 2, *self.grid.shape):
            raise ValueError(f"expected components of shape (2, 2, {self.grid.n}, {self.grid.n}), got {comps.shape}")
        _check_finite(comps, "tensor field")
        comps.flags.writeable = False
        object.__setattr__(self, "components", comps)

    @classmethod
    def outer(cls, a: PhysicalVectorField, b: PhysicalVectorField) -> "PhysicalTensorField":
        """Pointwise ``a (x) b`` with entries ``a_i b_j``."""
        return cls(a.grid, a.components[:, None] * b.components[None, :])


@dataclass(frozen=True)
class SpectralVectorField:
    """Fourier coefficients of a real vector field, shape ``(2, n, n)`` in FFT order.

    ``divfree=True`` certifies membership in the range of the Leray projector and
    is checked on construction.
    """

    grid: TorusGrid
    coeffs: np.ndarray = field(repr=False)
    divfree: bool = False

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != (2, *self.grid.shape):
            raise ValueError(f"expected coeffs of shape (2, {self.grid.n}, {self.grid.n}), got {c.shape}")
        _check_finite(c, "spectral field")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)
        if self.divfree:
            res = divergence_residual(self)
            if res > DIVFREE_RTOL:
                raise ValueError(f"field tagged divergence-free has relative residual {res:.3e}")

    @classmethod
    def _combination(cls, grid, coeffs, divfree):
        # linear combinations of certified fields stay certified; skip the
        # relative residual test, which cancellation would defeat
        out = cls(grid, coeffs)
        object.__setattr__(out, "divfree", divfree)
        return out

    def __add__(self, other: "SpectralVectorField") -> "SpectralVectorField":
        return self._combination(self.grid, self.coeffs + other.coeffs, self.divfree and other.divfree)

    def __sub__(self, other: "SpectralVectorField") -> "SpectralVectorField":
        return self._combination(self.grid, self.coeffs - other.coeffs, self.divfree and other.divfree)

    def scaled(self, factor: float) -> "SpectralVectorField":
        return self._combination(self.grid, factor * self.coeffs, self.divfree)

    @classmethod
    def zeros(cls, grid: TorusGrid) -> "SpectralVectorField":
        return cls(grid, np.zeros((2, *grid.shape), dtype=complex), divfree=True)


def divergence_residual(v: SpectralVectorField) -> float:
    """``max_k |k . v(k)| / max_k |k| |v(k)|`` (zero for the zero field)."""
    k = v.grid.wavevector
    div = np.abs(k[0] * v.coeffs[0] + k[1] * v.coeffs[1])
    scale = np.max(np.sqrt(v.grid.ksq) * np.sqrt(np.abs(v.coeffs[0]) ** 2 + np.abs(v.coeffs[1]) ** 2))
    if scale == 0.0:
        return 0.0
    return float(np.max(div) / scale)


def hermitian_defect(coeffs: np.ndarray) -> float:
    """Largest ``|c(-k) - conj(c(k))|`` over the lattice, for arrays in FFT order."""
    c = np.asarray(coeffs)
    flipped = np.roll(np.flip(c, axis=(-2, -1)), 1, axis=(-2, -1))
    return float(np.max(np.abs(flipped - np.conj(c)), initial=0.0))


def forward(arr: np.ndarray) -> np.ndarray:
    """Fourier-series coefficients of real grid data over the last two axes."""
    n = arr.shape[-1]
    return scipy.fft.fft2(arr, axes=(-2, -1)) / n**2


def inverse(coeffs: np.ndarray) -> np.ndarray:
    """Real grid values from Fourier-series coefficients over the last two axes."""
    n = coeffs.shape[-1]
    return scipy.fft.ifft2(coeffs * n**2, axes=(-2, -1)).real


def to_spectral(f: PhysicalVectorField) -> SpectralVectorField:
    return SpectralVectorField(f.grid, forward(f.components))


def to_physical(fh: SpectralVectorField) -> PhysicalVectorField:
    return PhysicalVectorField(fh.grid, inverse(fh.coeffs))


def leray_project(v: SpectralVectorField) -> SpectralVectorField:
    """Apply ``I - k k^T/|k|^2`` mode by mode; the mean mode is left untouched.

    Fields already certified divergence-free are returned as they are, which makes
    the projector exactly idempotent.
    """
    if v.divfree:
        return v
    g = v.grid
    k = g.odd_wavevector
    kdotv = (k[0] * v.coeffs[0] + k[1] * v.coeffs[1]) * g.inv_ksq
    out = v.coeffs - k * kdotv
    out[:, g.nyquist] = 0.0
    # divergence-free by construction; the relative residual test is meaningless
    # when the projection removes almost everything (e.g. a pure gradient)
    return SpectralVectorField._combination(g, out, True)


def heat_multiplier(grid: TorusGrid, t: float) -> np.ndarray:
    return np.exp(-4.0 * np.pi**2 * grid.ksq * t)


def heat_semigroup(t: float, v: SpectralVectorField) -> SpectralVectorField:
    """``e^{t Delta}``: multiply every coefficient by ``exp(-4 pi^2 |k|^2 t)``."""
    if not t >= 0:
        raise ValueError(f"heat semigroup needs t >= 0, got {t!r}")
    if t == 0:
        return v
    return SpectralVectorField(v.grid, heat_multiplier(v.grid, t) * v.coeffs, v.divfree)


def divergence_of_tensor(F: PhysicalTensorField) -> SpectralVectorField:
    """Coefficients of ``(div F)_m = sum_l d_l F_ml``."""
    g = F.grid
    Fh = forward(F.components)
    k = g.odd_wavevector
    out = 2j * np.pi * (k[0] * Fh[:, 0] + k[1] * Fh[:, 1])
    return SpectralVectorField(g, out)


def _as_array(f) -> np.ndarray:
    if isinstance(f, (PhysicalVectorField, PhysicalTensorField)):
        return f.components
    return np.asarray(f, dtype=float)


def magnitude(f) -> np.ndarray:
    """Pointwise Euclidean (vector) or Frobenius (tensor) magnitude of a grid field."""
    arr = _as_array(f)
    if arr.ndim == 2:
        return np.abs(arr)
    sq = arr.reshape(-1, *arr.shape[-2:]) ** 2
    return np.sqrt(sq.sum(axis=0))


def l1_norm(f) -> float:
    return float(magnitude(f).mean())


def l2_norm(f) -> float:
    arr = _as_array(f)
    return float(np.sqrt(np.mean((arr.reshape(-1, *arr.shape[-2:]) ** 2).sum(axis=0))))


def linf_norm(f) -> float:
    return float(magnitude(f).max())


def spectral_l2_norm(v: SpectralVectorField) -> float:
    """``(sum_k |v(k)|^2)^{1/2}``, equal to the physical L2 norm by Parseval."""
    return float(np.sqrt(np.sum(np.abs(v.coeffs) ** 2)))


def heat_smoothing_ratio(f: SpectralVectorField, t: float) -> float:
    """``sqrt(t) ||e^{t Delta} f||_inf / ||f||_2`` on the grid."""
    num = linf_norm(to_physical(heat_semigroup(t, f)))
    return np.sqrt(t) * num / spectral_l2_norm(f)


def heat_lattice_bound(grid: TorusGrid, t: float) -> float:
    """Cauchy-Schwarz bound ``sqrt(t) (sum_k exp(-8 pi^2 |k|^2 t))^{1/2}`` on the ratio above."""
    return float(np.sqrt(t * np.sum(np.exp(-8.0 * np.pi**2 * grid.ksq * t))))


def heat_smoothing_constant(fields, times) -> float:
    """Empirical smoothing constant: max of :func:`heat_smoothing_ratio` over fields and times."""
    return max(heat_smoothing_ratio(f, t) for f in fields for t in times)
