"""How big is the Oseen kernel on the torus, and how does it scale in time?

The heat-Leray-divergence composite acts on a tensor by convolution with a
periodic kernel K(t). Its L1 norm controls the Young-type estimate used in the
stability argument, so sqrt(t)||K(t)||_1 is the constant that matters. This
script tabulates both scalings and the resulting constant C_hat.
"""

from mildns.oseen import estimate_kernel_constant, kernel_norm_profile, log_time_grid

profile = kernel_norm_profile(log_time_grid(1e-3, 1.0, 7))

print(f"{'t':>9} {'n':>5} {'sqrt(t)|K|_1':>13} {'t^1.5|K|_inf':>13}")
for e in profile.entries:
    print(f"{e.t:9.2e} {e.n:5d} {e.sqrt_t_l1:13.6f} {e.t32_linf:13.6f}")

print(f"\nC_hat = {estimate_kernel_constant(profile):.10f}")
print("sqrt(t)|K|_1 keeps growing as t shrinks: the finite torus truncates the")
print("|x|^-3 tail, and the small-time plateau (about 1.845) is reached only like sqrt(t).")
