"""Taylor-Green decay: a nonlinear solution that the solver must reproduce exactly.

The Taylor-Green vortex has a gradient nonlinearity, which the Leray projection
removes. The flow therefore decays like the heat equation, exp(-8 pi^2 t), and
any error in the mild integrator shows up directly against the closed form.
"""

from mildns.solver import SolverConfig, evolve, nonlinear_term, taylor_green, taylor_green_exact
from mildns.spectral import spectral_l2_norm

v0 = taylor_green(1.0, 64)
print(f"projected nonlinearity on Taylor-Green: {abs(nonlinear_term(v0).coeffs).max():.1e}")

traj = evolve(v0, 0.1, SolverConfig(n=64, dt=1e-3))
for i in range(0, len(traj.times), 20):
    t = traj.times[i]
    exact = taylor_green_exact(1.0, 64, t)
    err = spectral_l2_norm(traj.states[i] - exact) / spectral_l2_norm(exact)
    print(f"t={t:.3f}  ||v||_2={spectral_l2_norm(traj.states[i]):.8f}  relative error {err:.1e}")
