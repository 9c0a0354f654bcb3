"""
Particles approaching the vorticity equation
============================================

N point vortices move under the regularized Biot-Savart kernel and the
shared noise.  Their mollified empirical measure is compared with the PDE
solution; the distance falls as N grows.  This is a scaled-down sweep
(short horizon, four replicas); the acceptance suite runs the full one.
"""

from moderate_ips.diagnostics import SweepConfig, convergence_sweep, epsilon_schedule
from moderate_ips.fields import GridSpec

# the regularization radius follows N through the schedule; here zeta_N = N^(-1/2)
for N in (64, 256, 1024, 4096):
    print(f"N = {N:5d}: eps(N) = {epsilon_schedule(N, N ** -0.5, 4.0, 2):.3f}")

cfg = SweepConfig(Ns=(64, 256, 1024), replicas=4, T=0.1, dt=0.005, snapshot_every=0.05,
                  grid=GridSpec(2, 8.0, 64), M=64, z_every=2)
rep = convergence_sweep(cfg)

print("\n    N   eps     median distance   IQR      median |Z|")
for r in rep.rows:
    print(f" {r.N:5d}  {r.epsilon:.3f}   {r.median:.4f}            {r.iqr:.4f}   {r.median_z:.4f}")
print(f"\nfitted decay exponent of the distance: {rep.fitted_exponent:.3f}")
print(f"fitted decay exponent of the stochastic convolution: {rep.z_exponent:.3f}")
