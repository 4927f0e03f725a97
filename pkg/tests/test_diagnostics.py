import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mildns.diagnostics import (
    DeltaUnderflowError,
    SmoothingProfile,
    StabilityReport,
    beta_quadrature,
    campaign_csv,
    geometric_sample_times,
    kappa,
    loglog_slope,
    singular_convolution,
    smoothing_functional,
    smoothing_profile,
    stability_experiment,
    substituted_beta_integrand,
    volterra_check,
)
from mildns.solver import SolverConfig, evolve, random_divfree, taylor_green, taylor_green_exact, with_mean_flow
from mildns.spectral import SpectralVectorField, torus_grid

C_HAT = 1.6294316182204938


class TestSmoothingFunctional:
    def test_zero_trajectory(self):
        traj = evolve(SpectralVectorField.zeros(torus_grid(16)), 0.01, SolverConfig(n=16, dt=1e-3))
        assert smoothing_functional(traj, 0.0, 0.01) == 0.0

    def test_constant_linf(self):
        v = with_mean_flow(SpectralVectorField.zeros(torus_grid(16)), (0.6, 0.8))
        traj = evolve(v, 0.02, SolverConfig(n=16, dt=1e-3, linear_only=True))
        for delta in (0.004, 0.01, 0.02):
            assert smoothing_functional(traj, 0.0, delta) == pytest.approx(math.sqrt(delta), rel=1e-12)

    def test_pair_adds_sup_norms(self):
        traj = evolve(taylor_green(1.0, 16), 0.01, SolverConfig(n=16, dt=1e-3))
        single = smoothing_functional(traj, 0.0, 0.01)
        assert smoothing_functional(traj, 0.0, 0.01, partner=traj) == pytest.approx(2 * single, rel=1e-15)

    def test_window_errors(self):
        traj = evolve(taylor_green(1.0, 16), 0.01, SolverConfig(n=16, dt=1e-3))
        with pytest.raises(ValueError):
            smoothing_functional(traj, 0.0, 0.5)
        with pytest.raises(ValueError):
            smoothing_functional(traj, 0.0, 1e-5)

    def test_boosted_taylor_green_slope(self):
        U = (8.0, 6.0)
        deltas = np.geomspace(1e-3, 1e-1, 9)
        times = np.unique(np.r_[geometric_sample_times(0.0, 0.1, 1e-3), deltas])
        traj = evolve(taylor_green_exact(1.0, 32, 0.0, U), times[-1], SolverConfig(n=32, dt=1e-3), sample_times=times)
        prof = smoothing_profile(traj, 0.0, deltas)
        assert np.all(np.diff(prof.M) >= 0)
        assert abs(prof.loglog_slope() - 0.5) <= 0.05

    def test_unboosted_taylor_green_slope_is_flatter(self):
        # inside [1e-3, 1e-1] the sup norm decays like exp(-8 pi^2 t), which bends the curve
        deltas = np.geomspace(1e-3, 1e-1, 9)
        times = np.unique(np.r_[geometric_sample_times(0.0, 0.1, 1e-3), deltas])
        traj = evolve(taylor_green(1.0, 32), times[-1], SolverConfig(n=32, dt=1e-3), sample_times=times)
        assert smoothing_profile(traj, 0.0, deltas).loglog_slope() < 0.2

    def test_profile_requires_monotone(self):
        with pytest.raises(ValueError):
            SmoothingProfile(0.0, np.zeros(2), np.zeros(2), np.zeros(2), np.array([1.0, 2.0]), np.array([2.0, 1.0]))

    def test_smooth_trajectory_vanishes_at_zero(self):
        v = random_divfree(3, n=32)
        times = geometric_sample_times(0.0, 0.01, 1e-3, levels=24)
        traj = evolve(v, times[-1], SolverConfig(n=32, dt=1e-3), sample_times=times)
        assert smoothing_functional(traj, 0.0, times[1]) < 1e-3 * smoothing_functional(traj, 0.0, 0.01)

    def test_geometric_sample_times(self):
        times = geometric_sample_times(1.0, 0.5, 0.1, levels=4)
        assert times[0] == 1.0
        assert np.all(np.diff(times) > 0)
        assert {1.0 + 0.5 / 8, 1.0 + 0.5 / 4, 1.5}.issubset(set(times.tolist()))
        assert np.diff(times).max() <= 0.1 + 1e-15

    def test_loglog_slope(self):
        x = np.geomspace(1, 100, 5)
        assert loglog_slope(x, 3 * x**0.5) == pytest.approx(0.5)


class TestBeta:
    @given(st.floats(-10, 10), st.floats(1e-6, 10))
    def test_substitution_exact_is_pi(self, T0, length):
        assert abs(beta_quadrature(T0, T0 + length) - math.pi) <= 1e-12

    def test_integrand_is_two(self):
        theta = np.linspace(0.01, np.pi / 2 - 0.01, 50)
        np.testing.assert_allclose(substituted_beta_integrand(0.3, 2.0, theta), 2.0, rtol=1e-12)

    def test_midpoint_rate(self):
        nodes = np.array([64, 256, 1024, 4096])
        errors = [abs(beta_quadrature(0.0, 1.0, "midpoint-n", int(n)) - math.pi) for n in nodes]
        assert abs(loglog_slope(nodes, errors) + 0.5) <= 0.1

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            beta_quadrature(1.0, 1.0)
        with pytest.raises(ValueError):
            beta_quadrature(0.0, 1.0, rule="trapezoid")


class TestSingularConvolution:
    def test_constant_integrand(self):
        times = np.linspace(0.0, 1.0, 7)
        assert singular_convolution(times, np.ones(7), 1.0) == pytest.approx(2.0, rel=1e-14)

    def test_linear_integrand_is_exact(self):
        # int_0^t (t-s)^{-1/2} s ds = (4/3) t^{3/2}
        times = np.array([0.0, 0.1, 0.35, 0.5])
        for t in times[1:]:
            assert singular_convolution(times, times, t) == pytest.approx(4 / 3 * t**1.5, rel=1e-13)

    def test_requires_sample_time(self):
        with pytest.raises(ValueError):
            singular_convolution([0.0, 1.0], [1.0, 1.0], 0.5)


def _pair(v1, v2, T0, delta, cfg):
    times = geometric_sample_times(T0, delta, cfg.dt)
    a = evolve(v1, times[-1], cfg, t0=T0, sample_times=times)
    b = evolve(v2, times[-1], cfg, t0=T0, sample_times=times)
    return a, b


class TestVolterra:
    def test_identical_trajectories(self):
        cfg = SolverConfig(n=16, dt=1e-3)
        a, b = _pair(taylor_green(1.0, 16), taylor_green(1.0, 16), 0.0, 0.01, cfg)
        rows = volterra_check(a, b, 0.0, C_HAT)
        assert all(r.lhs == 0.0 and r.passed for r in rows)

    def test_heat_only_pair(self):
        cfg = SolverConfig(n=16, dt=1e-3, linear_only=True)
        a, b = _pair(random_divfree(1, n=16), random_divfree(2, n=16), 0.0, 0.01, cfg)
        rows = volterra_check(a, b, 0.0, 0.0)
        w0 = rows[0].rhs
        assert all(r.lhs <= w0 and r.rhs == w0 for r in rows)

    def test_perturbed_taylor_green(self):
        cfg = SolverConfig(n=32, dt=1e-3)
        v1 = taylor_green(1.0, 32)
        v2 = v1 + random_divfree(5, n=32).scaled(1e-3)
        a, b = _pair(v1, v2, 0.0, 0.02, cfg)
        assert all(r.passed for r in volterra_check(a, b, 0.0, C_HAT))

    def test_mismatched_grids(self):
        cfg = SolverConfig(n=16, dt=1e-3)
        a = evolve(taylor_green(1.0, 16), 0.01, cfg)
        b = evolve(taylor_green(1.0, 16), 0.02, cfg)
        with pytest.raises(ValueError):
            volterra_check(a, b, 0.0, 1.0)


class TestKappa:
    def test_examples(self):
        assert kappa(2.0, 0.0) == 0.0
        assert kappa(1.0, 1 / math.pi) == pytest.approx(1.0, rel=1e-15)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            kappa(-1.0, 0.1)


@pytest.fixture(scope="module")
def tg_run():
    cfg = SolverConfig(n=32, dt=1e-4)
    return stability_experiment(taylor_green(1.0, 32), 0.05, 0.01, 1e-3, 7, cfg, C_HAT, "user-supplied")


class TestStability:
    def test_taylor_green_passes_with_margin(self, tg_run):
        rep = tg_run.report
        assert rep.passed and rep.margin > 0 and rep.volterra_pass
        assert rep.kappa <= 0.5

    def test_report_consistency(self, tg_run):
        rep = tg_run.report
        assert rep.bound * (1 - rep.kappa) == pytest.approx(rep.w0_norm, rel=1e-12)
        assert rep.kappa == kappa(rep.C_hat, rep.M_delta)
        assert rep.w0_norm == pytest.approx(1e-3, rel=1e-12)
        assert rep.M_delta == smoothing_functional(tg_run.traj1, rep.T0, rep.delta, tg_run.traj2)

    def test_zero_perturbation(self):
        cfg = SolverConfig(n=16, dt=1e-3)
        rep = stability_experiment(taylor_green(1.0, 16), 0.01, 0.01, 0.0, 0, cfg, C_HAT).report
        assert rep.sup_w == 0.0 and rep.w0_norm == 0.0 and rep.passed

    def test_auto_shrink(self):
        cfg = SolverConfig(n=32, dt=1e-3)
        rep = stability_experiment(random_divfree(4, n=32, l2=3.0), 0.0, 0.05, 1e-3, 1, cfg, C_HAT).report
        assert rep.delta < 0.05
        assert rep.kappa <= 0.5
        assert math.log2(0.05 / rep.delta) == pytest.approx(round(math.log2(0.05 / rep.delta)))

    def test_delta_underflow(self):
        cfg = SolverConfig(n=16, dt=1e-3)
        with pytest.raises(DeltaUnderflowError):
            stability_experiment(taylor_green(1.0, 16), 0.0, 0.01, 1e-3, 0, cfg, 1e12, delta_min=1e-4)

    def test_serialization(self, tg_run):
        rep = tg_run.report
        rec = json.loads(rep.to_json())
        assert set(rec) >= {"T0", "delta", "eps", "C_hat", "C_source", "M_delta", "kappa", "w0_norm", "sup_w",
                            "bound", "margin", "verdict", "convention"}
        assert rec["C_source"] == "user-supplied"
        assert rec["kappa"] == rep.kappa
        lines = rep.to_csv().splitlines()
        assert lines[0] == ",".join(StabilityReport.CSV_COLUMNS)
        assert float(lines[1].split(",")[6]) == rep.kappa
        assert campaign_csv([rep, rep]).count("\n") == 3
