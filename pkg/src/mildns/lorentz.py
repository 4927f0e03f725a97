"""Decreasing rearrangement and Lorentz quasi-norms of grid functions on the unit torus.

A grid function is a simple function whose atoms have measure ``1/n^2``, so its
rearrangement is a step function and every Lorentz integral is evaluated
segment by segment in closed form.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .spectral import magnitude


@dataclass(frozen=True)
class RearrangementProfile:
    """Step function ``f*``: value ``values[i]`` on ``(cumulative[i-1], cumulative[i])``."""

    values: np.ndarray = field(repr=False)
    measures: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        mu = np.asarray(self.measures, dtype=float)
        if v.shape != mu.shape or v.ndim != 1 or v.size == 0:
            raise ValueError("values and measures must be matching non-empty 1-d arrays")
        if np.any(np.diff(v) > 0) or np.any(v < 0):
            raise ValueError("rearrangement values must be non-negative and non-increasing")
        if np.any(mu <= 0):
            raise ValueError("segment measures must be positive")
        if abs(mu.sum() - 1.0) > 1e-12:
            raise ValueError(f"segment measures sum to {mu.sum()!r}, expected 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "measures", mu)

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.measures)

    def __len__(self):
        return self.values.size


def decreasing_rearrangement(f) -> RearrangementProfile:
    """Rearrangement of ``|f|`` (pointwise magnitude for vector or tensor fields).

    Equal values are merged into a single segment.
    """
    mag = magnitude(f).ravel()
    cell = 1.0 / mag.size
    vals = np.sort(mag)[::-1]
    uniq, counts = _run_lengths(vals)
    return RearrangementProfile(uniq, counts * cell)


def _run_lengths(sorted_vals):
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    counts = np.diff(np.r_[starts, sorted_vals.size])
    return sorted_vals[starts], counts.astype(float)


def two_step_profile(v1: float, v2: float, t1: float) -> RearrangementProfile:
    """``f* = v1`` on ``(0, t1)`` and ``v2`` on ``(t1, 1)``."""
    if t1 >= 1.0:
        return RearrangementProfile(np.array([v1]), np.array([1.0]))
    return RearrangementProfile(np.array([v1, v2]), np.array([t1, 1.0 - t1]))


def _profile(f) -> RearrangementProfile:
    return f if isinstance(f, RearrangementProfile) else decreasing_rearrangement(f)


def lorentz_norm(f, p: float, r: float) -> float:
    """``||f||_{L^{p,r}}`` for a grid function or a :class:`RearrangementProfile`.

    For ``r < inf`` this is ``(sum_i v_i^r (p/r)(t_i^{r/p} - t_{i-1}^{r/p}))^{1/r}``,
    the exact integral of ``(t^{1/p} f*(t))^r dt/t``; for ``r = inf`` it is
    ``max_i t_i^{1/p} v_i``.
    """
    if not p >= 1:
        raise ValueError(f"Lorentz exponent p must be >= 1, got {p!r}")
    if not r >= 1:
        raise ValueError(f"Lorentz exponent r must be >= 1, got {r!r}")
    prof = _profile(f)
    t = prof.cumulative
    t[-1] = 1.0
    if np.isinf(r):
        return float(np.max(t ** (1.0 / p) * prof.values))
    powers = t ** (r / p)
    seg = np.diff(np.r_[0.0, powers])
    return float(np.sum(prof.values**r * seg * (p / r)) ** (1.0 / r))


def monotonicity_bound(r1: float, r2: float, p: float = 2.0) -> float:
    """Constant in ``||f||_{p,r2} <= C ||f||_{p,r1}`` for ``r1 <= r2``.

    From ``||f||_{p,inf} <= (r1/p)^{1/r1} ||f||_{p,r1}`` and splitting the
    ``r2``-integral as ``sup^{r2-r1}`` times the ``r1``-integral.
    """
    if r1 > r2:
        raise ValueError("need r1 <= r2")
    if np.isinf(r2):
        return (r1 / p) ** (1.0 / r1)
    return (r1 / p) ** ((1.0 / r1) * (1.0 - r1 / r2))


def embedding_bound(q: float) -> float:
    """``(q/2)^{(1/q)(1 - q/2)}``, the constant of ``||f||_2 <= C ||f||_{2,q}``."""
    return monotonicity_bound(q, 2.0)


@dataclass(frozen=True)
class EmbeddingCheck:
    ratio: float
    bound: float
    passed: bool


def embedding_ratio_check(f, q: float) -> EmbeddingCheck:
    if not 1 < q < 2:
        raise ValueError(f"q must lie in (1, 2), got {q!r}")
    prof = _profile(f)
    denom = lorentz_norm(prof, 2.0, q)
    ratio = lorentz_norm(prof, 2.0, 2.0) / denom if denom > 0 else 0.0
    bound = embedding_bound(q)
    return EmbeddingCheck(ratio, bound, ratio <= bound * (1 + 1e-10))


def brute_force_two_step_ratio(q: float, points: int = 50) -> float:
    """Max of ``||f||_{2,2}/||f||_{2,q}`` over two-step profiles on a ``points^3`` grid.

    Parameters ``v1 >= v2`` and ``t1`` are sampled in ``(0, 1]``; the ratio is
    scale invariant so this also covers every other amplitude.
    """
    grid = np.linspace(0.0, 1.0, points + 1)[1:]
    v1, v2, t1 = np.meshgrid(grid, grid, grid, indexing="ij")
    v2 = np.minimum(v1, v2)
    t0 = np.minimum(t1, 1.0)

    def norm_r(r):
        return (v1**r * t0 ** (r / 2) + v2**r * (1.0 - t0 ** (r / 2))) * (2.0 / r)

    ratio = np.sqrt(norm_r(2.0)) / norm_r(q) ** (1.0 / q)
    return float(ratio.max())


@dataclass(frozen=True)
class ProductCheck:
    lhs: float
    rhs_factor: float
    ratio: float
    linf_l2_lhs: float
    linf_l2_rhs: float
    linf_l2_holds: bool


def product_l1_check(w, z) -> ProductCheck:
    """``||wz||_1`` against ``||w||_{2,1} ||z||_{2,inf}``, plus the exact ``L^inf x L^2`` estimate.

    The second estimate is checked in squared form with identical summation order
    on both sides, so floating-point rounding cannot produce a false violation.
    """
    wm = magnitude(w)
    zm = magnitude(z)
    lhs = float(np.mean(wm * zm))
    rhs = lorentz_norm(wm, 2.0, 1.0) * lorentz_norm(zm, 2.0, np.inf)
    ratio = lhs / rhs if rhs > 0 else 0.0
    wsq = wm * wm
    zsq = zm * zm
    prod_sq = float(np.mean(wsq * zsq))
    bound_sq = float(np.mean(wsq.max() * zsq))
    return ProductCheck(lhs, rhs, ratio, prod_sq, bound_sq, prod_sq <= bound_sq)


@dataclass(frozen=True)
class SweepRow:
    field_id: int
    p: float
    r: float
    norm: float
    ratio: float
    bound: float
    passed: bool


def embedding_sweep(fields, q_list) -> list[SweepRow]:
    """Embedding check of every field against every ``q``, in input order."""
    rows = []
    for i, f in enumerate(fields):
        prof = _profile(f)
        for q in q_list:
            chk = embedding_ratio_check(prof, q)
            rows.append(SweepRow(i, 2.0, q, lorentz_norm(prof, 2.0, q), chk.ratio, chk.bound, chk.passed))
    return rows


def sweep_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["field_id", "p", "r", "norm", "ratio", "bound", "pass"])
    for row in rows:
        w.writerow([row.field_id, repr(row.p), repr(row.r), repr(row.norm), repr(row.ratio), repr(row.bound), int(row.passed)])
    return buf.getvalue()


CORPUS_KINDS = ("gaussian", "smooth", "indicator", "peaked")


def corpus_field(seed: int, index: int, n: int = 64) -> np.ndarray:
    """Scalar test field number ``index`` of the corpus drawn from ``seed``.

    The kinds cycle through white Gaussian noise, a band-limited random field,
    the indicator of a random set, and a power-law peak ``|x - c|^{-a}`` with
    ``a < 1`` (in every ``L^{2,q}`` but with a heavy rearrangement head).
    """
    rng = np.random.default_rng([seed, index])
    kind = CORPUS_KINDS[index % len(CORPUS_KINDS)]
    if kind == "gaussian":
        return rng.standard_normal((n, n))
    x = (np.arange(n) + 0.5) / n
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    if kind == "smooth":
        out = np.zeros((n, n))
        for _ in range(6):
            k1, k2 = rng.integers(-4, 5, size=2)
            out += rng.standard_normal() * np.cos(2 * np.pi * (k1 * X1 + k2 * X2) + rng.uniform(0, 2 * np.pi))
        return out
    if kind == "indicator":
        return (rng.random((n, n)) < rng.uniform(0.05, 0.95)).astype(float)
    c = rng.random(2)
    d1 = (X1 - c[0] + 0.5) % 1.0 - 0.5
    d2 = (X2 - c[1] + 0.5) % 1.0 - 0.5
    return np.hypot(d1, d2) ** -rng.uniform(0.1, 0.9)


def scalar_corpus(seed: int, count: int, n: int = 64) -> list[np.ndarray]:
    return [corpus_field(seed, i, n) for i in range(count)]
