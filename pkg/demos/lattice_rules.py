"""Polynomial lattice rules, interlacing and extrapolation on a smooth integrand.

Run with ``python3 demos/lattice_rules.py``. Takes a few seconds.
"""
import numpy as np

from dlhoqmc import epl_rule, fit_rate, ipl_rule, plain_rule, qmc_integrate
from dlhoqmc.targets import rational_g

d = 4

# A first-order rule: 2^m points, generating vector found by CBC search.
rule = plain_rule(6, d)
print("modulus p =", rule.p)
print("generating vector q =", [str(q) for q in rule.q])
print("first points:\n", rule.points()[:4])

# Every coordinate is a multiple of 2^-m and the first point is the origin.
X = rule.points() * 2**rule.m
assert np.all(X == np.round(X)) and np.all(rule.points()[0] == 0)

# Reference value from a tensor Gauss-Legendre rule (30 nodes per axis).
x, w = np.polynomial.legendre.leggauss(30)
x, w = (x + 1) / 2, w / 2
grid = np.stack(np.meshgrid(*[x] * d, indexing="ij"), -1).reshape(-1, d)
weights = np.prod(np.stack(np.meshgrid(*[w] * d, indexing="ij"), -1).reshape(-1, d), axis=1)
ref = weights @ rational_g(grid)
print(f"reference integral {ref:.12f}")

ms = np.arange(6, 13)
for name, make in [("plain", plain_rule), ("ipl", lambda m, d: ipl_rule(m, d, 2)), ("epl", epl_rule)]:
    errs = [abs(qmc_integrate(rational_g, make(int(m), d)) - ref) for m in ms]
    print(f"{name:6s} errors", " ".join(f"{e:.1e}" for e in errs),
          f" rate {fit_rate(2.0**ms, errs):.2f}")

# EPL combines the 2^m and 2^(m-1) point rules with weights 2 and -1, which
# makes it exact for affine integrands.
epl = epl_rule(8, d)
c = np.array([1.0, -2.0, 0.5, 3.0])
print("affine integrand:", qmc_integrate(lambda y: y @ c, epl), "exact:", c.sum() / 2)
