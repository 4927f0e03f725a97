"""Time integration of the mild (Duhamel) form of 2D periodic Navier-Stokes.

The state obeys ``v' = Delta v - N(v)`` with ``N(v) = P div(v (x) v)``. Over one
step of size ``h`` starting from ``u0``,

    v(c h) = e^{c h Delta} u0 - int_0^{c h} e^{(c h - s) Delta} N(v(s)) ds.

``picard-exponential`` replaces ``N(v(s))`` by its quadratic interpolant at the
Lobatto nodes ``c = 0, 1/2, 1``, integrates the exponential exactly (phi-function
weights) and iterates on the node values to a fixed point. ``etdrk2`` is the
two-stage Cox-Matthews scheme.
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal

import numpy as np

from .spectral import (
    SpectralVectorField,
    TorusGrid,
    forward,
    inverse,
    leray_project,
    linf_norm,
    spectral_l2_norm,
    to_physical,
    torus_grid,
)

Scheme = Literal["picard-exponential", "etdrk2"]

SCHEME_ORDER = {"picard-exponential": 4, "etdrk2": 2}
LOBATTO_NODES = (0.0, 0.5, 1.0)


class PicardConvergenceError(RuntimeError):
    def __init__(self, residual, iterations, time=None):
        self.residual = residual
        self.iterations = iterations
        self.time = time
        where = "" if time is None else f" at t={time!r}"
        super().__init__(f"Picard iteration did not converge{where}: residual {residual:.3e} after {iterations} iterations")


@dataclass(frozen=True)
class SolverConfig:
    n: int
    dt: float
    scheme: Scheme = "picard-exponential"
    picard_tol: float = 1e-12
    picard_max_iters: int = 50
    dealias: bool = True
    linear_only: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if not self.picard_tol > 0:
            raise ValueError(f"picard_tol must be positive, got {self.picard_tol!r}")
        if self.scheme not in SCHEME_ORDER:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.picard_max_iters < 1:
            raise ValueError("picard_max_iters must be >= 1")
        TorusGrid(self.n)

    @property
    def grid(self) -> TorusGrid:
        return torus_grid(self.n)

    @property
    def order(self) -> int:
        return SCHEME_ORDER[self.scheme]


def phi_functions(z: np.ndarray, kmax: int) -> list[np.ndarray]:
    """``[phi_0(z), ..., phi_kmax(z)]`` with ``phi_0 = exp`` and ``phi_{k+1}(z) = (phi_k(z) - 1/k!)/z``.

    Uses the Taylor series for ``|z| < 1`` where the recurrence cancels.
    """
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1.0
    zs = np.where(small, z, 0.0)
    zb = np.where(small, 1.0, z)
    out = [np.exp(z)]
    for k in range(1, kmax + 1):
        series = sum(zs**m / math.factorial(m + k) for m in range(25))
        rec = (out[-1] - 1.0 / math.factorial(k - 1)) / zb
        out.append(np.where(small, series, rec))
    return out


def _lagrange_monomials(nodes):
    """Coefficients ``a[j, p]`` with ``l_j(tau) = sum_p a[j, p] tau^p``."""
    V = np.vander(np.asarray(nodes), increasing=True)
    return np.linalg.inv(V).T


@lru_cache(maxsize=32)
def _collocation_weights(n: int, h: float):
    """Exponentials and weights ``W[i][j]`` (arrays over the lattice) for the Lobatto scheme."""
    grid = torus_grid(n)
    lam = -4.0 * np.pi**2 * grid.ksq
    a = _lagrange_monomials(LOBATTO_NODES)
    degree = len(LOBATTO_NODES) - 1
    exps, weights = [], []
    for c in LOBATTO_NODES:
        if c == 0.0:
            exps.append(None)
            weights.append(None)
            continue
        phis = phi_functions(c * h * lam, degree + 1)
        exps.append(phis[0])
        row = []
        for j in range(len(LOBATTO_NODES)):
            w = sum(a[j, p] * c ** (p + 1) * math.factorial(p) * phis[p + 1] for p in range(degree + 1))
            row.append(h * w)
        weights.append(row)
    return exps, weights


@lru_cache(maxsize=32)
def _etd2_weights(n: int, h: float):
    grid = torus_grid(n)
    phis = phi_functions(-4.0 * np.pi**2 * grid.ksq * h, 2)
    return phis[0], h * phis[1], h * phis[2]


def _nonlinear_coeffs(c: np.ndarray, grid: TorusGrid, dealias: bool) -> np.ndarray:
    if dealias:
        c = c * grid.dealias_mask
    u = inverse(c)
    # symmetric tensor: products (11, 12, 22)
    prod = forward(np.stack([u[0] * u[0], u[0] * u[1], u[1] * u[1]]))
    if dealias:
        prod = prod * grid.dealias_mask
    k = grid.odd_wavevector
    div = 2j * np.pi * np.stack([k[0] * prod[0] + k[1] * prod[1], k[0] * prod[1] + k[1] * prod[2]])
    kdotv = (k[0] * div[0] + k[1] * div[1]) * grid.inv_ksq
    out = div - k * kdotv
    out[:, grid.nyquist] = 0.0
    return out


def nonlinear_term(v: SpectralVectorField, dealias: bool = True) -> SpectralVectorField:
    """``P div(v (x) v)``: physical product (2/3-rule dealiased), divergence, projection."""
    return SpectralVectorField(v.grid, _nonlinear_coeffs(v.coeffs, v.grid, dealias), divfree=True)


def _rel_change(new, old):
    scale = np.sqrt(np.sum(np.abs(new) ** 2))
    diff = np.sqrt(np.sum(np.abs(new - old) ** 2))
    return diff / scale if scale > 0 else diff


def _N(coeffs, grid, config):
    if config.linear_only:
        return np.zeros_like(coeffs)
    return _nonlinear_coeffs(coeffs, grid, config.dealias)


def step(v: SpectralVectorField, h: float, config: SolverConfig) -> SpectralVectorField:
    """Advance ``v`` by ``h`` with the configured scheme."""
    if not v.divfree:
        raise ValueError("solver state must be tagged divergence-free")
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h!r}")
    g = v.grid
    u0 = v.coeffs
    if config.scheme == "etdrk2":
        E, w1, w2 = _etd2_weights(g.n, h)
        N0 = _N(u0, g, config)
        a = E * u0 - w1 * N0
        Na = _N(a, g, config)
        out = a - w2 * (Na - N0)
        return SpectralVectorField(g, out, divfree=True)

    exps, W = _collocation_weights(g.n, h)
    m = len(LOBATTO_NODES)
    N = [_N(u0, g, config)] + [None] * (m - 1)
    free = [E * u0 for E in exps[1:]]
    stages = list(free)
    for i in range(1, m):
        N[i] = N[0]
    if config.linear_only:
        return SpectralVectorField(g, free[-1], divfree=True)
    residual = math.inf
    for it in range(1, config.picard_max_iters + 1):
        new = [free[i - 1] - sum(W[i][j] * N[j] for j in range(m)) for i in range(1, m)]
        residual = max(_rel_change(a, b) for a, b in zip(new, stages))
        stages = new
        if residual <= config.picard_tol:
            return SpectralVectorField(g, stages[-1], divfree=True)
        for i in range(1, m):
            N[i] = _N(stages[i - 1], g, config)
    raise PicardConvergenceError(residual, config.picard_max_iters)


@dataclass(frozen=True)
class Trajectory:
    """Solver states at increasing sample times, with cached norms."""

    times: np.ndarray
    states: tuple[SpectralVectorField, ...] = field(repr=False)
    config: SolverConfig
    l2: np.ndarray = field(repr=False)
    linf: np.ndarray = field(repr=False)
    uniform: bool = True

    @property
    def energy(self) -> np.ndarray:
        return self.l2**2

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def index_of(self, t: float) -> int:
        hits = np.flatnonzero(self.times == t)
        if hits.size == 0:
            raise ValueError(f"t={t!r} is not a sample time of the trajectory")
        return int(hits[0])

    def state_at(self, t: float) -> SpectralVectorField:
        return self.states[self.index_of(t)]

    def window(self, start: float, stop: float) -> "Trajectory":
        """Samples with ``start <= t <= stop``; ``start`` must be a sample time."""
        i = self.index_of(start)
        j = int(np.searchsorted(self.times, stop, side="right"))
        return Trajectory(self.times[i:j], self.states[i:j], self.config, self.l2[i:j], self.linf[i:j], self.uniform)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "l2", "linf", "energy"])
        for t, a, b, e in zip(self.times, self.l2, self.linf, self.energy):
            w.writerow([repr(float(t)), repr(float(a)), repr(float(b)), repr(float(e))])
        return buf.getvalue()


def _diagnose(v):
    return spectral_l2_norm(v), linf_norm(to_physical(v))


def _uniform_times(t0, t_end, dt):
    count = int(math.floor((t_end - t0) / dt * (1 + 1e-12)))
    times = t0 + dt * np.arange(count + 1)
    return times


def evolve(
    v0: SpectralVectorField,
    t_end: float,
    config: SolverConfig,
    t0: float = 0.0,
    sample_times=None,
) -> Trajectory:
    """Integrate from ``t0`` to ``t_end``.

    Without ``sample_times`` the trajectory is sampled after every step of size
    ``config.dt`` (the last sample is the largest multiple of ``dt`` not beyond
    ``t_end``). With ``sample_times`` (increasing, starting at ``t0``) each gap is
    covered by equal substeps no longer than ``dt``; step sizes depend only on the
    gaps, so restarting from any sample reproduces the tail exactly.
    """
    if v0.grid.n != config.n:
        raise ValueError(f"initial data on n={v0.grid.n} but config has n={config.n}")
    if not v0.divfree:
        raise ValueError("initial data must be tagged divergence-free")
    if sample_times is None:
        if not t_end > t0:
            raise ValueError(f"t_end must exceed t0, got t0={t0!r}, t_end={t_end!r}")
        times = _uniform_times(t0, t_end, config.dt)
        plan = [(config.dt, 1)] * (times.size - 1)
    else:
        times = np.asarray(sample_times, dtype=float)
        if times[0] != t0 or np.any(np.diff(times) <= 0):
            raise ValueError("sample_times must start at t0 and increase strictly")
        plan = []
        for gap in np.diff(times):
            sub = max(1, math.ceil(gap / config.dt * (1 - 1e-12)))
            plan.append((gap / sub, sub))
    states = [v0]
    l2, linf = [None] * times.size, [None] * times.size
    l2[0], linf[0] = _diagnose(v0)
    v = v0
    for i, (h, sub) in enumerate(plan):
        for _ in range(sub):
            try:
                v = step(v, h, config)
            except PicardConvergenceError as err:
                raise PicardConvergenceError(err.residual, err.iterations, time=float(times[i])) from None
        states.append(v)
        l2[i + 1], linf[i + 1] = _diagnose(v)
    return Trajectory(times, tuple(states), config, np.array(l2), np.array(linf), sample_times is None)


def restart_consistency(traj: Trajectory, T0: float) -> float:
    """Max relative L2 deviation between ``traj`` and a fresh run restarted at ``T0``."""
    i = traj.index_of(T0)
    if i == traj.times.size - 1:
        return 0.0
    if traj.uniform:
        remaining = traj.times.size - 1 - i
        t_start = float(traj.times[i])
        rerun = evolve(traj.states[i], t_start + traj.config.dt * (remaining + 0.5), traj.config, t0=t_start)
    else:
        rerun = evolve(traj.states[i], traj.t_end, traj.config, t0=float(traj.times[i]), sample_times=traj.times[i:])
    worst = 0.0
    for a, b in zip(traj.states[i:], rerun.states):
        ref = spectral_l2_norm(a)
        diff = spectral_l2_norm(a - b)
        worst = max(worst, diff / ref if ref > 0 else diff)
    return worst


def taylor_green(amplitude: float = 1.0, n: int = 64) -> SpectralVectorField:
    """``A (cos 2 pi x1 sin 2 pi x2, -sin 2 pi x1 cos 2 pi x2)`` built from its four modes."""
    if not math.isfinite(amplitude):
        raise ValueError("amplitude must be finite")
    g = torus_grid(n)
    c = np.zeros((2, n, n), dtype=complex)
    q = amplitude / 4.0
    # cos(a) sin(b) = (1/4i)(e^{i(a+b)} - e^{i(a-b)} + e^{-i(a-b)} - e^{-i(a+b)})
    for s1 in (1, -1):
        for s2 in (1, -1):
            c[0, s1, s2] = -1j * q * s2
            c[1, s1, s2] = 1j * q * s1
    return SpectralVectorField(g, c, divfree=True)


def taylor_green_exact(amplitude: float, n: int, t: float, mean=(0.0, 0.0)) -> SpectralVectorField:
    """Exact solution ``U + e^{-8 pi^2 t} TG(x - U t)`` for a uniform mean flow ``U``."""
    tg = taylor_green(amplitude, n)
    g = tg.grid
    U = np.asarray(mean, dtype=float)
    shift = np.exp(-2j * np.pi * t * (g.wavevector[0] * U[0] + g.wavevector[1] * U[1]))
    c = math.exp(-8.0 * math.pi**2 * t) * tg.coeffs * shift
    return with_mean_flow(SpectralVectorField(g, c, divfree=True), U)


def with_mean_flow(v: SpectralVectorField, mean) -> SpectralVectorField:
    """Replace the ``k = 0`` coefficient by the uniform flow ``mean``."""
    c = v.coeffs.copy()
    c[:, 0, 0] = np.asarray(mean, dtype=float)
    return SpectralVectorField(v.grid, c, divfree=v.divfree)


def random_divfree(seed: int, spectral_decay: float = 3.0, n: int = 64, l2: float = 1.0) -> SpectralVectorField:
    """Seeded mean-free divergence-free field with ``|v(k)| ~ |k|^{-spectral_decay}``, scaled to ``||v||_2 = l2``."""
    if not spectral_decay > 1:
        raise ValueError(f"spectral decay must exceed 1, got {spectral_decay!r}")
    g = torus_grid(n)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((2, n, n))
    c = forward(noise)
    amp = np.zeros_like(g.ksq)
    np.power(g.ksq, -spectral_decay / 2.0, out=amp, where=g.ksq > 0)
    c = c * amp
    c[:, 0, 0] = 0.0
    v = leray_project(SpectralVectorField(g, c))
    norm = spectral_l2_norm(v)
    return v.scaled(l2 / norm) if norm > 0 else v


STATE_MAGIC = b"MILDNS01"
_HEADER = struct.Struct("<8sQd")


def dump_state(v: SpectralVectorField, time: float) -> bytes:
    """Binary state: magic, ``n`` (u64), ``time`` (f64), then two complex planes as ``4 n^2`` LE f64."""
    body = np.ascontiguousarray(v.coeffs, dtype="<c16").tobytes()
    return _HEADER.pack(STATE_MAGIC, v.grid.n, float(time)) + body


def load_state(blob: bytes) -> tuple[SpectralVectorField, float]:
    magic, n, time = _HEADER.unpack_from(blob)
    if magic != STATE_MAGIC:
        raise ValueError(f"bad state magic {magic!r}")
    expected = _HEADER.size + 4 * n * n * 8
    if len(blob) != expected:
        raise ValueError(f"state dump has {len(blob)} bytes, expected {expected}")
    coeffs = np.frombuffer(blob, dtype="<c16", offset=_HEADER.size).reshape(2, n, n).astype(complex)
    return SpectralVectorField(torus_grid(n), coeffs, divfree=True), time
