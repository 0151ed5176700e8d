"""The elliptic observable: a P1 finite element solve per parameter vector.

Run with ``python3 demos/pde_observable.py``. Takes about ten seconds.
"""
import numpy as np

from dlhoqmc import make_target
from dlhoqmc.fem import manufactured_l2_errors
from dlhoqmc.targets import eigenmode_decay_error

# Discretization checks first.
errs, rates = manufactured_l2_errors((16, 32, 64))
print("manufactured solution L2 errors", errs, "rates", rates)
print(f"heat equation eigenmode deviation at T=0.05: {eigenmode_decay_error():.2%}")

# Parameters live in [0,1)^d; the target shifts them to [-1/2, 1/2) before
# building the diffusion coefficient.
target = make_target("elliptic", 8, n=32)
print("target metadata:", target.meta)
print("decay sequence beta:", np.round(target.beta, 5))

y = np.random.default_rng(0).random((5, 8))
print("observable at 5 random parameters:", target(y))

# The observable is smooth in y: a straight line through parameter space.
t = np.linspace(0, 1, 6)[:, None]
print("along a segment:", target(t * np.full(8, 0.9)))
