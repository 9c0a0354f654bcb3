"""
Shared environmental noise
==========================

All particles feel the same random velocity field u(x).  Its covariance
Q(z) = E[u(x + z) u(x)^T] equals 2 nu I at z = 0 and decays with |z|; the
cutoff n_scale removes large scales, which decorrelates distant particles.
"""

import math

import numpy as np

from moderate_ips.noise import (build_noise, covariance_quadrature, empirical_covariance, nu_theoretical,
                                qn_lr_norm, sample_shared_increments, velocity_increment)

d, alpha = 2, 4.0
nu = nu_theoretical(d, alpha)
print(f"nu = {nu:.6f} (pi/8 = {math.pi / 8:.6f})")

# one synthesized field: a sum of random Fourier modes, divergence free
noise = build_noise(d, alpha, n_scale=0.0, M=256, seed=0)
rng = np.random.default_rng(1)
x = rng.uniform(-2, 2, size=(5, d))
du = velocity_increment(noise, sample_shared_increments(noise, 0.01, rng), x)
print("velocity increments over dt = 0.01 at five points:")
print(np.round(du, 4))

# covariance by quadrature against a Monte Carlo estimate
z = np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 1.0], [3.0, 0.0]])
exact = covariance_quadrature(d, alpha, 0.0, z)
est = empirical_covariance(d, alpha, 0.0, 256, z, replicas=400, seed=0)
print("\n   z           Q_11 exact   Q_11 MC   (stderr)")
for zi, q, m, s in zip(z, exact, est.mean, est.stderr):
    print(f"  {zi}   {q[0, 0]:10.4f} {m[0, 0]:9.4f}   ({s[0, 0]:.4f})")

# raising the cutoff shrinks the long-range part of Q like e^{-n d / 2}
print("\n n_scale   ||Q_N||_L2 outside r = 2")
for n in (0.0, 0.5, 1.0, 1.5):
    print(f"  {n:4.1f}     {qn_lr_norm(d, alpha, n, 2.0, box=4e4):.4f}")
