"""Independent reference implementations used by the tests.

Everything here is written the slow, obvious way and shares no code with
the package.
"""
from itertools import combinations
from math import prod

import numpy as np


def long_division_digits(num: int, den: int, m: int) -> list[int]:
    """First m binary Laurent digits of num/den by schoolbook division."""
    dd = den.bit_length() - 1
    r = num
    # reduce num modulo den
    while r and r.bit_length() - 1 >= dd:
        r ^= den << (r.bit_length() - 1 - dd)
    digits = []
    for _ in range(m):
        r <<= 1
        if r.bit_length() - 1 >= dd:
            digits.append(1)
            r ^= den
        else:
            digits.append(0)
    return digits


def laurent_value(num: int, den: int, m: int) -> float:
    return sum(b / 2 ** (i + 1) for i, b in enumerate(long_division_digits(num, den, m)))


def poly_mul(a: int, b: int) -> int:
    out = 0
    i = 0
    while b >> i:
        if b >> i & 1:
            out ^= a << i
        i += 1
    return out


def lattice_points(m: int, p: int, q: list[int]) -> np.ndarray:
    """Point n is v_m(n(x) q_j(x) / p(x)) with n(x) the binary expansion of n."""
    return np.array([[laurent_value(poly_mul(n, qj), p, m) for qj in q]
                     for n in range(2**m)])


def interlace_digits(xs, alpha: int, digits: int) -> float:
    """Interlace by writing out binary digit strings."""
    strs = []
    for x in xs:
        s = ""
        for _ in range(digits):
            x *= 2
            b = int(x >= 1)
            s += str(b)
            x -= b
        strs.append(s)
    out = "".join(strs[t][i] for i in range(digits) for t in range(alpha))
    return sum(int(c) / 2 ** (k + 1) for k, c in enumerate(out))


def walsh(k: int, x: float, m: int) -> int:
    """Walsh function wal_k at a dyadic x with m digits."""
    X = int(round(x * 2**m))
    s = 0
    for i in range(m):
        s += (k >> i & 1) * (X >> (m - 1 - i) & 1)
    return -1 if s % 2 else 1


def mu(k: int, order: int) -> int:
    pos = [i + 1 for i in range(k.bit_length()) if k >> i & 1]
    return sum(sorted(pos, reverse=True)[:order])


def kernel(x: float, m: int, order: int) -> float:
    return sum(2.0 ** -mu(k, order) * walsh(k, x, m) for k in range(1, 2**m))


def product_criterion(points, beta, m, order) -> float:
    return float(np.mean([prod(1 + b * kernel(y, m, order) for y, b in zip(row, beta))
                          for row in points]) - 1)


def subset_criterion(points, gamma, m, order) -> float:
    """``(1/N) sum_n sum_{u != {}} gamma(u) prod_{j in u} omega(y_nj)``."""
    d = points.shape[1]
    total = 0.0
    for row in points:
        om = [kernel(y, m, order) for y in row]
        for r in range(1, d + 1):
            for u in combinations(range(1, d + 1), r):
                total += gamma(u) * prod(om[j - 1] for j in u)
    return total / len(points)


def gauss_tensor(f, d: int, n: int = 30) -> float:
    """Tensor Gauss-Legendre rule on [0,1]^d."""
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = (x + 1) / 2, w / 2
    grids = np.meshgrid(*([x] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wts = np.ones(1)
    for _ in range(d):
        wts = np.outer(wts, w).ravel()
    return float(wts @ f(pts))


def central_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Gradient of a scalar function by central differences, one coordinate at a time."""
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2 * h)
    return out
