"""Periodic Oseen kernel of ``e^{t Delta} P div`` synthesized from its Fourier multiplier.

The multiplier of slice ``(m, j, l)`` is

    exp(-4 pi^2 |k|^2 t) (delta_mj - k_m k_j / |k|^2) (2 pi i k_l),

set to zero at ``k = 0`` and on the Nyquist row/column. Norms of the tensor
kernel use the pointwise Frobenius magnitude over all eight slices.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.optimize

from .spectral import (
    PhysicalTensorField,
    SpectralVectorField,
    TorusGrid,
    forward,
    torus_grid,
)

log = logging.getLogger(__name__)

SLICES = [(m, j, l) for m in range(2) for j in range(2) for l in range(2)]
CONVERGENCE_RTOL = 1e-6
# multiplier entries below this fraction of the peak are dropped in pointwise evaluation
_MODE_CUTOFF = 1e-18


class KernelTruncationWarning(UserWarning):
    pass


class KernelConvergenceError(RuntimeError):
    pass


def _check_time(t):
    if not t > 0:
        raise ValueError(f"kernel time must be positive, got {t!r}")


def _multiplier(kvec: np.ndarray, ksq: np.ndarray, t: float, m: int, j: int, l: int) -> np.ndarray:
    inv = np.zeros_like(ksq)
    np.divide(1.0, ksq, out=inv, where=ksq > 0)
    proj = (1.0 if m == j else 0.0) - kvec[m] * kvec[j] * inv
    return np.exp(-4.0 * np.pi**2 * ksq * t) * proj * (2j * np.pi * kvec[l])


def oseen_multiplier(grid: TorusGrid, t: float) -> np.ndarray:
    """Full multiplier array of shape ``(2, 2, 2, n, n)`` indexed ``[m, j, l]``."""
    _check_time(t)
    k = grid.odd_wavevector
    out = np.empty((2, 2, 2, *grid.shape), dtype=complex)
    for m, j, l in SLICES:
        out[m, j, l] = _multiplier(k, grid.ksq, t, m, j, l)
    out[..., 0, 0] = 0.0
    return out


def truncation_level(grid: TorusGrid, t: float) -> float:
    """Heat factor at the edge of the lattice, ``exp(-4 pi^2 (n/2)^2 t)``."""
    return math.exp(-4.0 * math.pi**2 * (grid.n / 2) ** 2 * t)


@dataclass(frozen=True)
class OseenKernel:
    """Physical-space samples of ``K_per(t, .)``; ``slices[m, j, l]`` is an ``n x n`` array."""

    t: float
    grid: TorusGrid
    slices: np.ndarray = field(repr=False)
    truncated: bool = False

    @property
    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.slices.reshape(8, *self.grid.shape) ** 2, axis=0))

    def l1_grid(self) -> float:
        """Rectangle-rule mean of the magnitude; only third order because of its conical zeros."""
        return float(self.magnitude.mean())

    def l1_norm(self) -> float:
        return kernel_l1_norm(self.t, self.grid)

    def linf_grid(self) -> float:
        return float(self.magnitude.max())


def _rfft_lattice(n_out: int):
    k1 = np.broadcast_to(np.fft.fftfreq(n_out, 1.0 / n_out)[:, None], (n_out, n_out // 2 + 1))
    k2 = np.broadcast_to(np.fft.rfftfreq(n_out, 1.0 / n_out)[None, :], k1.shape)
    return np.stack([k1, k2]).astype(float)


def _synthesize(t: float, n_band: int, n_out: int):
    """Yield ``((m, j, l), slice)`` of the kernel with modes of the ``n_band`` grid, sampled on ``n_out``.

    For ``n_out > n_band`` this is exact trigonometric interpolation (zero padding).
    """
    kvec = _rfft_lattice(n_out)
    ksq = kvec[0] ** 2 + kvec[1] ** 2
    band = (np.abs(kvec[0]) < n_band // 2) & (kvec[1] < n_band // 2)
    band[0, 0] = False
    for m, j, l in SLICES:
        mult = _multiplier(kvec, ksq, t, m, j, l)
        mult[~band] = 0.0
        yield (m, j, l), scipy.fft.irfft2(mult * n_out**2, s=(n_out, n_out))


def assemble_oseen_kernel(t: float, grid: TorusGrid) -> OseenKernel:
    _check_time(t)
    truncated = truncation_level(grid, t) >= 1e-16
    if truncated:
        warnings.warn(
            f"n={grid.n} does not resolve the kernel at t={t:g} (edge heat factor "
            f"{truncation_level(grid, t):.1e})",
            KernelTruncationWarning,
            stacklevel=2,
        )
    n = grid.n
    slices = np.empty((2, 2, 2, n, n))
    # half-spectrum synthesis: the multiplier is Hermitian, the kernel real
    for idx, sl in _synthesize(t, n, n):
        slices[idx] = sl
    return OseenKernel(t, grid, slices, truncated)


def _half_modes(grid: TorusGrid, t: float):
    """Non-negligible modes in a half lattice, with real weights ``b`` of shape ``(8, M)``.

    The multiplier is ``i beta(k)`` with ``beta`` real and odd, so every slice is
    ``K(x) = sum_k b(k) sin(2 pi k.x)`` over the half lattice with ``b = -2 beta``.
    """
    k = grid.odd_wavevector.reshape(2, -1)
    ksq = grid.ksq.reshape(-1)
    half = (k[0] > 0) | ((k[0] == 0) & (k[1] > 0))
    size = np.exp(-4.0 * np.pi**2 * ksq * t) * np.sqrt(ksq)
    keep = half & (size > _MODE_CUTOFF * size[half].max())
    k = k[:, keep]
    ksq = k[0] ** 2 + k[1] ** 2
    b = np.stack([-2.0 * _multiplier(k, ksq, t, m, j, l).imag for m, j, l in SLICES])
    return k, b


def _evaluate(modes, x: np.ndarray, chunk: int = 2048) -> np.ndarray:
    k, b = modes
    x = np.asarray(x, dtype=float).reshape(2, -1)
    out = np.empty((8, x.shape[1]))
    for s in range(0, x.shape[1], chunk):
        out[:, s : s + chunk] = b @ np.sin(2.0 * np.pi * (k.T @ x[:, s : s + chunk]))
    return out


def kernel_pointwise(t: float, grid: TorusGrid, x: np.ndarray) -> np.ndarray:
    """Evaluate the Fourier series of all eight slices (modes of ``grid``) at points ``x`` of shape ``(2, P)``."""
    _check_time(t)
    return _evaluate(_half_modes(grid, t), x)


# points where all eight slices vanish: K is odd and 1-periodic, hence odd about each half-period
_CONE_POINTS = np.array([[0.0, 0.0], [0.5, 0.0], [0.0, 0.5], [0.5, 0.5]])
_RADIAL_NODES = 48
_ANGULAR_NODES = 64


def _bump_edge(x):
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def _flat_top(r: np.ndarray, R: float) -> np.ndarray:
    """Smooth cutoff equal to 1 for ``r <= R/2`` and 0 for ``r >= R``."""
    u = np.clip((r - R / 2) / (R / 2), 0.0, 1.0)
    return _bump_edge(1.0 - u) / (_bump_edge(1.0 - u) + _bump_edge(u))


def quadrature_resolution(t: float, n: int) -> int:
    """Grid used to integrate ``|K|``: at least ``n``, 512 and ``16/sqrt(t)``, rounded up to a power of two."""
    target = max(n, 512, 16.0 / math.sqrt(t))
    return 1 << math.ceil(math.log2(target))


def kernel_l1_norm(t: float, grid: TorusGrid) -> float:
    """``||K_per(t)||_1`` of the kernel carried by the modes of ``grid``.

    ``|K|`` is smooth except for conical zeros at the four half-period points,
    where the rectangle rule degrades to third order. A smooth partition of
    unity isolates those points: the remainder is integrated on an oversampled
    grid (spectrally accurate), and the discs around the cones in polar
    coordinates, where ``r |K|`` is smooth, from exact point evaluations.
    """
    _check_time(t)
    n_q = quadrature_resolution(t, grid.n)
    sq = np.zeros((n_q, n_q))
    for _, sl in _synthesize(t, grid.n, n_q):
        sq += sl**2
    mag = np.sqrt(sq)
    R = min(0.24, max(24.0 / n_q, 8.0 * math.sqrt(t)))
    x = torus_grid(n_q).points
    chi = np.zeros((n_q, n_q))
    for p in _CONE_POINTS:
        d = (x - p[:, None, None] + 0.5) % 1.0 - 0.5
        chi += _flat_top(np.hypot(d[0], d[1]), R)
    coarse = float(np.mean(mag * (1.0 - chi)))

    xg, wg = np.polynomial.legendre.leggauss(_RADIAL_NODES)
    r = np.r_[(xg + 1) * R / 4, R / 2 + (xg + 1) * R / 4]
    wr = np.r_[wg, wg] * (R / 4) * r * _flat_top(r, R)
    theta = 2.0 * np.pi * np.arange(_ANGULAR_NODES) / _ANGULAR_NODES
    ring = np.stack([np.outer(r, np.cos(theta)), np.outer(r, np.sin(theta))])
    modes = _half_modes(grid, t)
    local = 0.0
    for p in _CONE_POINTS:
        vals = _evaluate(modes, (p[:, None, None] + ring).reshape(2, -1))
        m = np.sqrt(np.sum(vals**2, axis=0)).reshape(r.size, _ANGULAR_NODES)
        local += float(np.sum(wr[:, None] * m)) * (2.0 * np.pi / _ANGULAR_NODES)
    return coarse + local


def kernel_sup_norm(kernel: OseenKernel) -> float:
    """Sup of the Frobenius magnitude, refined off-grid from the best grid point.

    The grid maximum alone only converges at second order in the mesh width.
    """
    mag = kernel.magnitude
    i1, i2 = np.unravel_index(np.argmax(mag), mag.shape)
    n = kernel.grid.n
    x0 = np.array([i1, i2], dtype=float) / n
    modes = _half_modes(kernel.grid, kernel.t)

    def neg_sq(x):
        return -float(np.sum(_evaluate(modes, x) ** 2))

    res = scipy.optimize.minimize(
        neg_sq, x0, method="Nelder-Mead",
        options={"xatol": 1e-3 / n, "fatol": 1e-15 * mag[i1, i2] ** 2, "maxiter": 400},
    )
    return float(max(math.sqrt(-res.fun), mag[i1, i2]))


def apply_oseen(t: float, F: PhysicalTensorField) -> SpectralVectorField:
    """``K_per(t) * F`` computed as a spectral multiplier on ``F``."""
    mult = oseen_multiplier(F.grid, t)
    Fh = forward(F.components)
    out = np.einsum("mjlab,jlab->mab", mult, Fh)
    return SpectralVectorField(F.grid, out)


@dataclass(frozen=True)
class KernelNormEntry:
    t: float
    n: int
    l1: float
    linf: float
    converged: bool

    @property
    def sqrt_t_l1(self) -> float:
        return math.sqrt(self.t) * self.l1

    @property
    def t32_linf(self) -> float:
        return self.t**1.5 * self.linf


@dataclass(frozen=True)
class KernelNormProfile:
    entries: tuple[KernelNormEntry, ...]
    resolutions: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        ts = [e.t for e in self.entries]
        if any(not t > 0 for t in ts) or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("profile times must be positive and strictly increasing")

    @property
    def converged(self) -> list[KernelNormEntry]:
        return [e for e in self.entries if e.converged]

    @property
    def all_converged(self) -> bool:
        return all(e.converged for e in self.entries)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "n", "l1", "linf", "sqrt_t_l1", "t32_linf", "converged"])
        for e in self.entries:
            w.writerow([repr(e.t), e.n, repr(e.l1), repr(e.linf), repr(e.sqrt_t_l1), repr(e.t32_linf), int(e.converged)])
        return buf.getvalue()


def starting_resolution(t: float, n_min: int = 16) -> int:
    """Smallest power of two ``>= max(n_min, 8/sqrt(t))``."""
    target = max(n_min, 8.0 / math.sqrt(t))
    return 1 << math.ceil(math.log2(target))


def kernel_norms(t: float, n_max: int = 2048, rtol: float = CONVERGENCE_RTOL, n_min: int = 16):
    """Refine dyadically until ``||K||_1`` and ``||K||_inf`` agree to ``rtol`` between successive grids.

    Returns ``(entry, resolutions_tried)``.
    """
    _check_time(t)
    n = starting_resolution(t, n_min)
    tried = []
    prev = None
    while n <= n_max:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", KernelTruncationWarning)
            K = assemble_oseen_kernel(t, torus_grid(n))
        cur = (K.l1_norm(), kernel_sup_norm(K))
        tried.append(n)
        if prev is not None:
            ok = all(abs(c - p) <= rtol * abs(c) for c, p in zip(cur, prev))
            if ok:
                return KernelNormEntry(t, n, cur[0], cur[1], True), tuple(tried)
        prev = cur
        n *= 2
    log.warning("kernel norms at t=%g not converged up to n=%d", t, n_max)
    n_last = tried[-1] if tried else 0
    l1, linf = prev if prev is not None else (math.nan, math.nan)
    return KernelNormEntry(t, n_last, l1, linf, False), tuple(tried)


def kernel_norm_profile(t_list, n_max: int = 2048, rtol: float = CONVERGENCE_RTOL, executor=None) -> KernelNormProfile:
    """Norm profile over ``t_list``; non-converged entries are kept and flagged.

    ``executor`` may be any ``concurrent.futures`` executor; results are ordered by ``t``.
    """
    ts = sorted(float(t) for t in t_list)
    for t in ts:
        _check_time(t)
    if executor is None:
        results = [kernel_norms(t, n_max, rtol) for t in ts]
    else:
        results = list(executor.map(lambda t: kernel_norms(t, n_max, rtol), ts))
    return KernelNormProfile(tuple(r[0] for r in results), tuple(r[1] for r in results))


def estimate_kernel_constant(profile: KernelNormProfile) -> float:
    """``max sqrt(t) ||K(t)||_1`` over the converged entries of ``profile``."""
    good = profile.converged
    if not good:
        raise KernelConvergenceError("no grid-converged kernel entry to estimate the constant from")
    return max(e.sqrt_t_l1 for e in good)


def log_time_grid(t_lo: float, t_hi: float, count: int) -> np.ndarray:
    return np.geomspace(t_lo, t_hi, count)
