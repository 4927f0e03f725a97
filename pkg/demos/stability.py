"""Short-time stability of two nearby solutions.

Two trajectories starting eps apart at T0 stay within
||w(T0)||_2 / (1 - kappa) on [T0, T0 + delta], with kappa = C_hat pi M(delta).
The window shrinks until kappa <= 1/2. The Volterra form of the estimate is
also checked at every sampled time.
"""

from mildns.diagnostics import stability_experiment
from mildns.oseen import estimate_kernel_constant, kernel_norm_profile, log_time_grid
from mildns.solver import SolverConfig, random_divfree

C_hat = estimate_kernel_constant(kernel_norm_profile(log_time_grid(1e-3, 1.0, 16)))
print(f"C_hat = {C_hat:.6f}")

base = random_divfree(11, n=32)
cfg = SolverConfig(n=32, dt=1e-4)
for seed in range(3):
    run = stability_experiment(base, 0.005, 0.002, 1e-3, seed, cfg, C_hat)
    r = run.report
    print(
        f"trial {seed}: delta={r.delta:.2e} kappa={r.kappa:.3f} sup|w|={r.sup_w:.4e} "
        f"bound={r.bound:.4e} margin={r.margin:.2e} volterra={'ok' if r.volterra_pass else 'FAIL'}"
    )
