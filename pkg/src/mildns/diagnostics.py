"""Restart smoothing functional, singular time integrals and the short-time L2 stability experiment."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .solver import SolverConfig, Trajectory, evolve, random_divfree
from .spectral import CONVENTION, SpectralVectorField, spectral_l2_norm

KAPPA_TARGET = 0.5
BOUND_RTOL = 1e-8
VOLTERRA_RTOL = 1e-6


class DeltaUnderflowError(RuntimeError):
    """Smoothing never became small enough: no admissible window length was found."""


def geometric_sample_times(T0: float, delta: float, dt: float, levels: int = 20) -> np.ndarray:
    """``T0``, the geometric points ``T0 + delta 2^-j`` (``j < levels``), and a uniform grid of spacing ``<= dt``."""
    uniform = max(1, math.ceil(delta / dt * (1 - 1e-12)))
    offsets = np.r_[delta * 2.0 ** -np.arange(levels), delta * np.arange(1, uniform + 1) / uniform]
    offsets = np.unique(offsets)
    return np.r_[T0, T0 + offsets]


def _window(traj: Trajectory, T0: float, delta: float):
    sel = (traj.times > T0) & (traj.times <= T0 + delta * (1 + 1e-12))
    return sel


def smoothing_functional(traj: Trajectory, T0: float, delta: float, partner: Trajectory | None = None) -> float:
    """Discrete ``M(delta) = sup sqrt(s - T0) (||v1(s)||_inf + ||v2(s)||_inf)`` over samples in ``(T0, T0 + delta]``.

    With ``partner=None`` this is the single-path restart smoothing functional.
    """
    if not T0 >= traj.t0 or not T0 + delta <= traj.t_end * (1 + 1e-12):
        raise ValueError(f"window ({T0}, {T0 + delta}] outside the trajectory range [{traj.t0}, {traj.t_end}]")
    sel = _window(traj, T0, delta)
    if not sel.any():
        raise ValueError(f"no sample times in ({T0}, {T0 + delta}]")
    linf = traj.linf[sel]
    if partner is not None:
        if not np.array_equal(partner.times, traj.times):
            raise ValueError("paired trajectories must share their sample times")
        linf = linf + partner.linf[sel]
    return float(np.max(np.sqrt(traj.times[sel] - T0) * linf))


@dataclass(frozen=True)
class SmoothingProfile:
    T0: float
    times: np.ndarray = field(repr=False)
    linf: np.ndarray = field(repr=False)
    weighted: np.ndarray = field(repr=False)
    deltas: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.M) < 0):
            raise ValueError("M(delta) must be non-decreasing in delta")

    def loglog_slope(self) -> float:
        return loglog_slope(self.deltas, self.M)


def smoothing_profile(traj: Trajectory, T0: float, deltas, partner: Trajectory | None = None) -> SmoothingProfile:
    deltas = np.sort(np.asarray(deltas, dtype=float))
    Ms = np.array([smoothing_functional(traj, T0, d, partner) for d in deltas])
    sel = _window(traj, T0, deltas[-1])
    linf = traj.linf[sel] + (partner.linf[sel] if partner is not None else 0.0)
    return SmoothingProfile(T0, traj.times[sel], linf, np.sqrt(traj.times[sel] - T0) * linf, deltas, Ms)


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def substituted_beta_integrand(T0: float, t: float, theta) -> np.ndarray:
    """``(t - s)^{-1/2} (s - T0)^{-1/2} ds/dtheta`` at ``s = T0 + (t - T0) sin^2 theta``; identically 2."""
    a = t - T0
    sn, cs = np.sin(theta), np.cos(theta)
    # t - s = a cos^2 and s - T0 = a sin^2 exactly; forming s first would cancel
    return (2.0 * a * sn * cs) / (np.sqrt(a * cs**2) * np.sqrt(a * sn**2))


def beta_quadrature(T0: float, t: float, rule: str = "substitution-exact", nodes: int = 16) -> float:
    """``int_{T0}^t (t - s)^{-1/2} (s - T0)^{-1/2} ds`` (exactly ``B(1/2, 1/2) = pi``).

    ``substitution-exact`` integrates the constant substituted integrand with
    Gauss-Legendre on ``[0, pi/2]``; ``midpoint-n`` applies the ``nodes``-cell
    midpoint rule to the raw singular integrand.
    """
    if not t > T0:
        raise ValueError(f"need t > T0, got T0={T0!r}, t={t!r}")
    if rule == "substitution-exact":
        x, w = np.polynomial.legendre.leggauss(nodes)
        theta = (x + 1.0) * (np.pi / 4.0)
        return float(np.sum(w * substituted_beta_integrand(T0, t, theta)) * (np.pi / 4.0))
    if rule == "midpoint-n":
        h = (t - T0) / nodes
        s = T0 + h * (np.arange(nodes) + 0.5)
        return float(h * np.sum((t - s) ** -0.5 * (s - T0) ** -0.5))
    raise ValueError(f"unknown rule {rule!r}")


def singular_convolution(times, values, t: float) -> float:
    """``int_{times[0]}^t (t - s)^{-1/2} g(s) ds`` for ``g`` piecewise linear through ``(times, values)``.

    Each sub-interval is mapped by ``s = t - u^2``, which turns the integrand into
    the polynomial ``2 g(t - u^2)`` in ``u``; two-point Gauss-Legendre is exact for it.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    stop = np.searchsorted(times, t, side="right")
    if stop < 1 or times[stop - 1] != t:
        raise ValueError(f"t={t!r} must be one of the sample times")
    x, w = np.polynomial.legendre.leggauss(2)
    total = 0.0
    for a, b, ga, gb in zip(times[: stop - 1], times[1:stop], values[: stop - 1], values[1:stop]):
        ua, ub = math.sqrt(t - a), math.sqrt(t - b)
        u = 0.5 * (ua + ub) + 0.5 * (ua - ub) * x
        s = t - u**2
        g = ga + (gb - ga) * (s - a) / (b - a)
        total += 0.5 * (ua - ub) * float(np.sum(w * 2.0 * g))
    return total


@dataclass(frozen=True)
class VolterraRow:
    t: float
    lhs: float
    rhs: float
    passed: bool


def difference_norms(traj1: Trajectory, traj2: Trajectory) -> np.ndarray:
    return np.array([spectral_l2_norm(a - b) for a, b in zip(traj1.states, traj2.states)])


def volterra_check(traj1: Trajectory, traj2: Trajectory, T0: float, C_hat: float, t_samples=None) -> list[VolterraRow]:
    """Check ``||w(t)||_2 <= ||w(T0)||_2 + C int_{T0}^t (t-s)^{-1/2} (||v1||_inf + ||v2||_inf) ||w||_2 ds``."""
    if not np.array_equal(traj1.times, traj2.times):
        raise ValueError("trajectories must share their sample times")
    i0 = traj1.index_of(T0)
    times = traj1.times[i0:]
    wn = difference_norms(traj1, traj2)[i0:]
    g = (traj1.linf[i0:] + traj2.linf[i0:]) * wn
    if t_samples is None:
        t_samples = times[1:]
    rows = []
    for t in t_samples:
        lhs = float(wn[np.flatnonzero(times == t)[0]])
        rhs = float(wn[0] + C_hat * singular_convolution(times, g, t))
        rows.append(VolterraRow(float(t), lhs, rhs, lhs <= rhs * (1 + VOLTERRA_RTOL)))
    return rows


def kappa(C_hat: float, m: float) -> float:
    """Contraction factor ``C pi m``."""
    if C_hat < 0 or m < 0:
        raise ValueError("kappa needs non-negative C and m")
    return C_hat * math.pi * m


@dataclass(frozen=True)
class StabilityReport:
    seed: int
    T0: float
    delta: float
    eps: float
    C_hat: float
    C_source: str
    M_delta: float
    kappa: float
    w0_norm: float
    sup_w: float
    bound: float
    margin: float
    volterra_pass: bool
    verdict: str

    CSV_COLUMNS = ("seed", "T0", "delta", "eps", "C_hat", "M_delta", "kappa", "w0", "sup_w", "bound", "margin", "pass")

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def csv_row(self) -> list:
        return [self.seed, repr(self.T0), repr(self.delta), repr(self.eps), repr(self.C_hat), repr(self.M_delta),
                repr(self.kappa), repr(self.w0_norm), repr(self.sup_w), repr(self.bound), repr(self.margin),
                int(self.passed)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        w.writerow(self.csv_row())
        return buf.getvalue()

    def to_json(self) -> str:
        record = asdict(self)
        record["convention"] = dict(CONVENTION)
        return json.dumps(record, indent=2, sort_keys=True)


def campaign_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(StabilityReport.CSV_COLUMNS)
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


@dataclass(frozen=True)
class StabilityRun:
    report: StabilityReport
    traj1: Trajectory = field(repr=False)
    traj2: Trajectory = field(repr=False)
    volterra: tuple[VolterraRow, ...] = field(repr=False)


def _advance_to(v: SpectralVectorField, T0: float, config: SolverConfig) -> SpectralVectorField:
    if T0 == 0:
        return v
    return evolve(v, T0, config, sample_times=[0.0, T0]).states[-1]


def stability_experiment(
    v_base: SpectralVectorField,
    T0: float,
    delta: float,
    eps: float,
    seed: int,
    config: SolverConfig,
    C_hat: float,
    C_source: str = "estimate_kernel_constant",
    perturbation_decay: float = 3.0,
    delta_min: float = 1e-10,
    levels: int = 20,
) -> StabilityRun:
    """Perturb the flow at ``T0`` by ``eps`` times a seeded unit-L2 field and test the stability bound.

    ``delta`` is halved until ``kappa <= 1/2``; running out of room below
    ``delta_min`` raises :class:`DeltaUnderflowError`.
    """
    v1_T0 = _advance_to(v_base, T0, config)
    pert = random_divfree(seed, perturbation_decay, config.n, l2=1.0)
    v2_T0 = v1_T0 + pert.scaled(eps)

    times = geometric_sample_times(T0, delta, config.dt, levels)
    full1 = evolve(v1_T0, times[-1], config, t0=T0, sample_times=times)
    full2 = evolve(v2_T0, times[-1], config, t0=T0, sample_times=times)
    # halving keeps delta on the geometric sample points, so each shorter window
    # is a restriction of the one already computed
    while True:
        if delta < delta_min:
            raise DeltaUnderflowError(f"window length fell below {delta_min:g} before kappa <= {KAPPA_TARGET}")
        M = smoothing_functional(full1, T0, delta, full2)
        k = kappa(C_hat, M)
        if k <= KAPPA_TARGET:
            break
        delta *= 0.5
    traj1 = full1.window(T0, T0 + delta)
    traj2 = full2.window(T0, T0 + delta)

    wn = difference_norms(traj1, traj2)
    w0 = float(wn[0])
    sup_w = float(wn.max())
    bound = w0 / (1.0 - k)
    volterra = tuple(volterra_check(traj1, traj2, T0, C_hat))
    ok = k < 1 and sup_w <= bound * (1 + BOUND_RTOL)
    report = StabilityReport(
        seed=seed, T0=T0, delta=delta, eps=eps, C_hat=C_hat, C_source=C_source, M_delta=M, kappa=k,
        w0_norm=w0, sup_w=sup_w, bound=bound, margin=bound - sup_w,
        volterra_pass=all(r.passed for r in volterra), verdict="pass" if ok else "fail",
    )
    return StabilityRun(report, traj1, traj2, volterra)


def run_campaign(seeds, base_factory, T0, delta, eps, config, C_hat, C_source="estimate_kernel_constant", executor=None):
    """Independent stability experiments, one per seed, returned in seed order.

    ``base_factory(seed)`` supplies the unperturbed initial data for each trial.
    """
    def one(seed):
        return stability_experiment(base_factory(seed), T0, delta, eps, seed, config, C_hat, C_source).report

    seeds = list(seeds)
    if executor is None:
        return [one(s) for s in seeds]
    return list(executor.map(one, seeds))
