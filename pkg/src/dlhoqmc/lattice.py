"""Base-2 polynomial lattice rules and their higher-order variants.

Polynomials over GF(2) are stored as Python ints (bit ``i`` is the
coefficient of ``x**i``); :class:`F2Poly` is a thin immutable wrapper for
the public API.  Point coordinates are produced as exact dyadic integers
``X`` with ``y = X / 2**m`` and converted to floats only at the end, so
digit interlacing stays exact.

Three rule kinds are provided:

* :class:`LatticeRule` -- a plain polynomial lattice rule with ``2**m`` points,
* :class:`InterlacedRule` -- digit interlacing of an ``alpha * d`` dimensional
  lattice down to ``d`` dimensions,
* :class:`ExtrapolatedRule` -- a Richardson combination of nested-size
  lattice rules (sizes ``2**m, 2**(m-1), ...``).

Generating vectors come from a greedy component-by-component search
(:func:`cbc_construct`) over a Walsh-space worst-case error criterion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import product
from typing import Callable, Iterable, Sequence

import numpy as np

MAX_M = 32

# Smallest irreducible polynomial of each degree (as bitmasks).
IRREDUCIBLE_POLYS = {
    2: 0x7, 3: 0xB, 4: 0x13, 5: 0x25, 6: 0x43, 7: 0x83, 8: 0x11B,
    9: 0x203, 10: 0x409, 11: 0x805, 12: 0x1009, 13: 0x201B, 14: 0x4021,
    15: 0x8003, 16: 0x1002B, 17: 0x20009, 18: 0x40009, 19: 0x80027,
    20: 0x100009, 21: 0x200005, 22: 0x400003, 23: 0x800021,
    24: 0x100001B, 25: 0x2000009, 26: 0x400001B, 27: 0x8000027,
    28: 0x10000003, 29: 0x20000005, 30: 0x40000003, 31: 0x80000009,
    32: 0x10000008D,
}


# ---------------------------------------------------------------------------
# GF(2)[x] arithmetic on ints
# ---------------------------------------------------------------------------

def _deg(a: int) -> int:
    return a.bit_length() - 1


def clmul(a: int, b: int) -> int:
    """Carry-less product of two bit polynomials."""
    r = 0
    while b:
        if b & 1:
            r ^= a
        a <<= 1
        b >>= 1
    return r


def poly_divmod(a: int, b: int) -> tuple[int, int]:
    if b == 0:
        raise ZeroDivisionError("polynomial division by zero")
    db = _deg(b)
    q = 0
    while a and _deg(a) >= db:
        s = _deg(a) - db
        q |= 1 << s
        a ^= b << s
    return q, a


def poly_mod(a: int, b: int) -> int:
    return poly_divmod(a, b)[1]


def poly_gcd(a: int, b: int) -> int:
    while b:
        a, b = b, poly_mod(a, b)
    return a


def _prime_factors(n: int) -> list[int]:
    out, f = [], 2
    while f * f <= n:
        if n % f == 0:
            out.append(f)
            while n % f == 0:
                n //= f
        f += 1
    if n > 1:
        out.append(n)
    return out


def is_irreducible(p: int) -> bool:
    """Rabin's irreducibility test over GF(2)."""
    m = _deg(p)
    if m < 1:
        return False
    if m == 1:
        return True

    def x_pow_2k(k: int) -> int:
        r = 2
        for _ in range(k):
            r = poly_mod(clmul(r, r), p)
        return r

    x = poly_mod(2, p)
    if x_pow_2k(m) != x:
        return False
    return all(poly_gcd(x_pow_2k(m // r) ^ x, p) == 1 for r in _prime_factors(m))


def _validate_table() -> None:
    for m, p in IRREDUCIBLE_POLYS.items():
        if _deg(p) != m or not is_irreducible(p):
            raise RuntimeError(f"modulus table entry for m={m} is not irreducible")


_validate_table()


@dataclass(frozen=True, order=True)
class F2Poly:
    """Polynomial over the two-element field.

    ``bits`` holds the coefficients, least significant bit = constant term.
    The zero polynomial reports ``degree == -1`` (standing in for minus
    infinity) and ``is_zero == True``.
    """

    bits: int = 0

    def __post_init__(self):
        if self.bits < 0:
            raise ValueError("coefficient bits must be non-negative")

    @classmethod
    def from_coeffs(cls, coeffs: Iterable[int]) -> "F2Poly":
        bits = 0
        for i, c in enumerate(coeffs):
            if c & 1:
                bits |= 1 << i
        return cls(bits)

    @property
    def is_zero(self) -> bool:
        return self.bits == 0

    @property
    def degree(self) -> int:
        return _deg(self.bits)

    def __add__(self, other: "F2Poly") -> "F2Poly":
        return F2Poly(self.bits ^ other.bits)

    __sub__ = __add__

    def __mul__(self, other: "F2Poly") -> "F2Poly":
        return F2Poly(clmul(self.bits, other.bits))

    def __mod__(self, other: "F2Poly") -> "F2Poly":
        return F2Poly(poly_mod(self.bits, other.bits))

    def __int__(self) -> int:
        return self.bits

    def __repr__(self) -> str:
        if self.bits == 0:
            return "F2Poly(0)"
        terms = []
        for i in range(self.degree, -1, -1):
            if self.bits >> i & 1:
                terms.append("1" if i == 0 else "x" if i == 1 else f"x^{i}")
        return "F2Poly(" + " + ".join(terms) + ")"


def _bits(a) -> int:
    return a.bits if isinstance(a, F2Poly) else int(a)


def f2_mulmod(a, b, p) -> F2Poly:
    """Return ``a * b mod p`` over GF(2)."""
    pb = _bits(p)
    if pb == 0:
        raise ZeroDivisionError("modulus polynomial is zero")
    return F2Poly(poly_mod(clmul(_bits(a), _bits(b)), pb))


def v_m_int(num, den, m: int) -> int:
    """Numerator ``X`` of ``v_m(num/den) = X / 2**m``.

    Requires ``deg(den) == m``. The first ``m`` Laurent digits of
    ``num/den`` (after reducing ``num`` modulo ``den``; the polynomial part
    is discarded by ``v_m``) are the quotient of ``num * x**m`` by ``den``.
    """
    nb, db = _bits(num), _bits(den)
    if db == 0:
        raise ZeroDivisionError("denominator polynomial is zero")
    if _deg(db) != m:
        raise ValueError(f"deg(den)={_deg(db)} does not match m={m}")
    r = poly_mod(nb, db)
    q, _ = poly_divmod(r << m, db)
    return q


def v_m(num, den, m: int) -> float:
    """Truncated Laurent map: first ``m`` binary digits of ``num/den``."""
    return v_m_int(num, den, m) / float(1 << m)


# ---------------------------------------------------------------------------
# Vectorised helpers (uint64 arrays)
# ---------------------------------------------------------------------------

def _mulx_mod(a: np.ndarray, p: int, m: int) -> np.ndarray:
    a = a << np.uint64(1)
    top = (a >> np.uint64(m)) & np.uint64(1)
    return a ^ (top * np.uint64(p))


def _digits_of_residue(r: np.ndarray, p: int, m: int) -> np.ndarray:
    """Vectorised v_m numerators for residues ``r`` (deg r < m)."""
    rem = r.astype(np.uint64) << np.uint64(m)
    quot = np.zeros_like(rem)
    pm = np.uint64(p)
    for s in range(m - 1, -1, -1):
        bit = (rem >> np.uint64(s + m)) & np.uint64(1)
        quot |= bit << np.uint64(s)
        rem ^= bit * (pm << np.uint64(s))
    return quot


def _basis_images(q: np.ndarray, p: int, m: int) -> np.ndarray:
    """Digit numerators of ``x**i * q mod p`` for i < m; shape (len(q), m)."""
    out = np.empty((q.size, m), dtype=np.uint64)
    r = q.astype(np.uint64)
    for i in range(m):
        out[:, i] = _digits_of_residue(r, p, m)
        r = _mulx_mod(r, p, m)
    return out


def _expand_linear(images: np.ndarray, m: int) -> np.ndarray:
    """All 2**m XOR-combinations of the basis images, indexed by n."""
    k = images.shape[0]
    vals = np.zeros((k, 1 << m), dtype=np.uint64)
    for i in range(m):
        h = 1 << i
        vals[:, h:2 * h] = vals[:, :h] ^ images[:, i:i + 1]
    return vals


# ---------------------------------------------------------------------------
# Rules
# ---------------------------------------------------------------------------

def default_modulus(m: int) -> F2Poly:
    if not 2 <= m <= MAX_M:
        raise ValueError(f"m must lie in [2, {MAX_M}], got {m}")
    return F2Poly(IRREDUCIBLE_POLYS[m])


@dataclass(frozen=True)
class LatticeRule:
    """Polynomial lattice rule with modulus ``p`` (deg m) and vector ``q``."""

    m: int
    p: F2Poly
    q: tuple[F2Poly, ...]

    def __post_init__(self):
        if not 2 <= self.m <= MAX_M:
            raise ValueError(f"m must lie in [2, {MAX_M}], got {self.m}")
        if self.p.degree != self.m:
            raise ValueError("deg(p) must equal m")
        object.__setattr__(self, "q", tuple(F2Poly(_bits(qj)) for qj in self.q))
        for qj in self.q:
            if qj.degree >= self.m:
                raise ValueError("generating polynomials need deg(q_j) < m")

    @property
    def d(self) -> int:
        return len(self.q)

    @property
    def n_points(self) -> int:
        return 1 << self.m

    def numerators(self) -> np.ndarray:
        """Exact integer coordinates, shape ``(2**m, d)``; point = X / 2**m."""
        if self.d == 0:
            return np.zeros((self.n_points, 0), dtype=np.uint64)
        q = np.array([qj.bits for qj in self.q], dtype=np.uint64)
        imgs = _basis_images(q, self.p.bits, self.m)
        return np.ascontiguousarray(_expand_linear(imgs, self.m).T)

    def points(self) -> np.ndarray:
        return self.numerators().astype(np.float64) / float(1 << self.m)


def gen_points(rule: LatticeRule) -> np.ndarray:
    """Point set of a polynomial lattice rule as a ``(2**m, d)`` float array."""
    return rule.points()


def interlace_int(x: np.ndarray, alpha: int, m: int) -> np.ndarray:
    """Digit-interlace integer numerators.

    ``x`` has shape ``(..., alpha*d)`` with entries ``< 2**m``; the result has
    shape ``(..., d)`` with entries ``< 2**(alpha*m)`` (scale ``2**-(alpha*m)``).
    Digit ``i`` of block-coordinate ``tau`` lands on digit ``alpha*(i-1)+tau``.
    """
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    if alpha * m > 64:
        raise ValueError("alpha*m must not exceed 64 bits")
    x = np.asarray(x, dtype=np.uint64)
    if x.shape[-1] % alpha:
        raise ValueError("last axis length must be a multiple of alpha")
    blocks = x.reshape(x.shape[:-1] + (x.shape[-1] // alpha, alpha))
    out = np.zeros(blocks.shape[:-1], dtype=np.uint64)
    total = alpha * m
    for tau in range(alpha):
        comp = blocks[..., tau]
        for i in range(1, m + 1):
            digit = (comp >> np.uint64(m - i)) & np.uint64(1)
            out |= digit << np.uint64(total - (alpha * (i - 1) + tau + 1))
    return out


def interlace(x, alpha: int, digits: int = 52) -> np.ndarray:
    """Digit interlacing of float coordinates (the map D_alpha).

    Inputs are read to ``digits`` binary places, which is exact for the
    dyadic coordinates produced by :func:`gen_points` when ``digits >= m``.
    """
    if alpha == 1:
        return np.asarray(x, dtype=np.float64).copy()
    digits = min(digits, 64 // alpha)
    xi = np.floor(np.asarray(x, dtype=np.float64) * 2.0**digits).astype(np.uint64)
    return interlace_int(xi, alpha, digits).astype(np.float64) / 2.0 ** (alpha * digits)


@dataclass(frozen=True)
class InterlacedRule:
    """Interlaced polynomial lattice rule of order ``alpha`` in ``d`` dimensions."""

    base: LatticeRule
    alpha: int

    def __post_init__(self):
        if self.base.d % self.alpha:
            raise ValueError("base dimension must be alpha * d")
        if self.alpha * self.base.m > 64:
            raise ValueError("alpha*m must not exceed 64 bits")

    @property
    def d(self) -> int:
        return self.base.d // self.alpha

    @property
    def m(self) -> int:
        return self.base.m

    @property
    def n_points(self) -> int:
        return self.base.n_points

    def points(self) -> np.ndarray:
        z = interlace_int(self.base.numerators(), self.alpha, self.base.m)
        return z.astype(np.float64) / 2.0 ** (self.alpha * self.base.m)


@dataclass(frozen=True)
class ExtrapolatedRule:
    """Richardson combination ``sum_tau a_tau Q_{2**(m-tau+1)}``."""

    rules: tuple[LatticeRule, ...]
    coeffs: tuple[Fraction, ...]

    def __post_init__(self):
        if len(self.rules) != len(self.coeffs) or not self.rules:
            raise ValueError("need one coefficient per component rule")
        m0 = self.rules[0].m
        for tau, r in enumerate(self.rules):
            if r.m != m0 - tau:
                raise ValueError("component rules must have sizes 2**m, 2**(m-1), ...")
            if r.d != self.rules[0].d:
                raise ValueError("component rules must share the dimension")
        if sum(self.coeffs) != 1:
            raise ValueError("extrapolation coefficients must sum to one")

    @property
    def alpha(self) -> int:
        return len(self.rules)

    @property
    def m(self) -> int:
        return self.rules[0].m

    @property
    def d(self) -> int:
        return self.rules[0].d

    @property
    def n_points(self) -> int:
        return sum(r.n_points for r in self.rules)

    def point_sets(self) -> list[np.ndarray]:
        return [r.points() for r in self.rules]


def epl_coeffs(alpha: int, coeffs: Sequence | None = None) -> tuple[Fraction, ...]:
    """Richardson coefficients of the extrapolated rule.

    Only ``alpha`` in {1, 2} is built in; larger orders need ``coeffs``.
    """
    if coeffs is not None:
        out = tuple(Fraction(c) for c in coeffs)
        if len(out) != alpha:
            raise ValueError("need exactly alpha coefficients")
        if sum(out) != 1:
            raise ValueError("extrapolation coefficients must sum to one")
        return out
    if alpha == 1:
        return (Fraction(1),)
    if alpha == 2:
        return (Fraction(2), Fraction(-1))
    raise NotImplementedError(
        f"extrapolation coefficients for alpha={alpha} must be supplied by the caller")


def read_coeffs_file(path) -> tuple[Fraction, ...]:
    """One rational per line (e.g. ``8/3``); blank lines and ``#`` ignored."""
    vals = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                vals.append(Fraction(line))
    return tuple(vals)


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpodWeights:
    """SPOD weights ``gamma_u`` of order ``alpha`` built from ``beta``.

    With ``head > 0`` the first ``head`` coordinates use the inflated value
    ``2**(alpha+2) * ||beta||_1 / epsilon`` instead of ``beta_j``.
    """

    alpha: int
    beta: tuple[float, ...]
    head: int = 0
    epsilon: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if any(not b > 0 for b in self.beta):
            raise ValueError("beta_j must be positive")
        if self.head and (self.epsilon is None or self.epsilon <= 0):
            raise ValueError("head inflation needs epsilon > 0")

    @property
    def d(self) -> int:
        return len(self.beta)

    @property
    def effective_beta(self) -> np.ndarray:
        b = np.array(self.beta)
        if self.head:
            b[: self.head] = 2.0 ** (self.alpha + 2) * b.sum() / self.epsilon
        return b

    @classmethod
    def power_decay(cls, d: int, alpha: int, scale: float = 0.5,
                    exponent: float = 2.5) -> "SpodWeights":
        """``beta_j = scale * j**(-exponent)``."""
        return cls(alpha, tuple(scale * j ** -exponent for j in range(1, d + 1)))


MAX_SPOD_SET = 20


def spod_weight(u: Iterable[int], w: SpodWeights) -> float:
    """Weight of the (1-based) coordinate subset ``u`` by direct summation."""
    u = sorted(set(u))
    if len(u) > MAX_SPOD_SET or w.alpha ** len(u) > 2**22:
        raise ValueError(f"subset of size {len(u)} is too large to enumerate")
    if any(not 1 <= j <= w.d for j in u):
        raise ValueError("subset index out of range")
    beta = w.effective_beta
    total = 0.0
    for nu in product(range(1, w.alpha + 1), repeat=len(u)):
        term = float(math.factorial(sum(nu)))
        for j, nj in zip(u, nu):
            term *= (2.0 if nj == w.alpha else 1.0) * beta[j - 1] ** nj
        total += term
    return total


# ---------------------------------------------------------------------------
# Worst-case error criterion
# ---------------------------------------------------------------------------

def _fwht(a: np.ndarray) -> np.ndarray:
    a = a.astype(np.float64).copy()
    n = a.size
    h = 1
    while h < n:
        a = a.reshape(-1, 2, h)
        a = np.stack((a[:, 0] + a[:, 1], a[:, 0] - a[:, 1]), axis=1)
        h *= 2
    return a.reshape(n)


def _bit_reverse(m: int) -> np.ndarray:
    idx = np.arange(1 << m, dtype=np.int64)
    rev = np.zeros_like(idx)
    for i in range(m):
        rev |= ((idx >> i) & 1) << (m - 1 - i)
    return rev


@lru_cache(maxsize=None)
def walsh_kernel(m: int, order: int) -> np.ndarray:
    """Kernel ``omega(X/2**m) = sum_{0<k<2**m} 2**(-mu(k)) wal_k(X/2**m)``.

    ``mu(k)`` sums the 1-based positions of the ``order`` most significant
    set bits of ``k``.  Returned as a read-only array indexed by ``X``.
    """
    n = 1 << m
    k = np.arange(n, dtype=np.int64)
    mu = np.zeros(n, dtype=np.int64)
    rest = k.copy()
    for _ in range(order):
        pos = np.frexp(rest.astype(np.float64))[1].astype(np.int64)  # bit_length
        mu += pos
        rest = np.where(pos > 0, rest - (1 << np.maximum(pos - 1, 0)), 0)
    r = np.where(k > 0, 2.0 ** (-mu.astype(np.float64)), 0.0)
    omega = _fwht(r)[_bit_reverse(m)]
    omega.setflags(write=False)
    return omega


class Criterion:
    """Worst-case error ``(1/N) sum_n sum_{u != {}} gamma_u prod_{j in u} omega(y_nj)``.

    Subclasses fix the weight structure. CBC only needs three hooks: a fresh
    per-point state, the per-point multiplier of ``omega`` for the next
    coordinate, and the state update once that coordinate is chosen.
    """

    order: int = 1

    def start(self, n_points: int):
        raise NotImplementedError

    def multiplier(self, state, j: int) -> np.ndarray:
        raise NotImplementedError

    def update(self, state, j: int, omega_vals: np.ndarray):
        raise NotImplementedError

    def total(self, state) -> float:
        raise NotImplementedError

    def value(self, numerators: np.ndarray, m: int) -> float:
        """Direct evaluation for a full point set (integer coordinates)."""
        omega = walsh_kernel(m, self.order)
        x = np.asarray(numerators)
        state = self.start(x.shape[0])
        for j in range(x.shape[1]):
            state = self.update(state, j, omega[x[:, j].astype(np.int64)])
        return self.total(state)


@dataclass
class ProductCriterion(Criterion):
    """Product weights ``gamma_u = prod_{j in u} w_j``."""

    w: np.ndarray
    order: int = 1

    def start(self, n_points):
        return np.ones(n_points)

    def multiplier(self, state, j):
        return self.w[j] * state

    def update(self, state, j, omega_vals):
        return state * (1.0 + self.w[j] * omega_vals)

    def total(self, state):
        return float(state.mean() - 1.0)


@dataclass
class SpodCriterion(Criterion):
    """SPOD weights evaluated exactly through the order-dependent recursion.

    The state ``U[n, l]`` accumulates sums over ``(u, nu)`` with ``|nu| = l``
    of ``prod_j 2**delta(nu_j, alpha) beta_j**nu_j omega(y_nj)``.
    """

    beta: np.ndarray
    alpha: int
    order: int = 1

    def _c(self, j):
        nus = np.arange(1, self.alpha + 1)
        c = self.beta[j] ** nus
        c[-1] *= 2.0
        return c

    def start(self, n_points):
        u = np.zeros((n_points, self.alpha * len(self.beta) + 1))
        u[:, 0] = 1.0
        return u

    def _shifted(self, state, j):
        c = self._c(j)
        acc = np.zeros_like(state)
        for nu in range(1, self.alpha + 1):
            acc[:, nu:] += c[nu - 1] * state[:, :-nu]
        return acc

    def _fact(self, width):
        return np.array([float(math.factorial(l)) for l in range(width)])

    def multiplier(self, state, j):
        return self._shifted(state, j) @ self._fact(state.shape[1])

    def update(self, state, j, omega_vals):
        return state + omega_vals[:, None] * self._shifted(state, j)

    def total(self, state):
        return float((state @ self._fact(state.shape[1])).mean() - 1.0)


def make_criterion(weights: SpodWeights, kind: str = "product", order: int | None = None,
                   repeat: int = 1) -> Criterion:
    """Build a criterion from SPOD weights.

    ``kind="product"`` keeps only the per-coordinate ``beta`` terms as product
    weights; ``kind="spod"`` uses the full order-dependent weights.  ``repeat``
    duplicates every coordinate weight (used for the interlaced base lattice).
    """
    beta = np.repeat(weights.effective_beta, repeat)
    order = weights.alpha if order is None else order
    if kind == "product":
        return ProductCriterion(beta, order)
    if kind == "spod":
        return SpodCriterion(beta, weights.alpha, order)
    raise ValueError(f"unknown criterion kind {kind!r}")


# ---------------------------------------------------------------------------
# Component-by-component construction
# ---------------------------------------------------------------------------

_CHUNK_ENTRIES = 1 << 21


def _first_minimum(scores: np.ndarray, scale: float, rtol: float = 1e-12) -> int:
    """Index of the first score within rounding noise (``rtol * scale``) of the minimum."""
    lo = scores.min()
    return int(np.flatnonzero(scores <= lo + rtol * scale)[0])


def cbc_construct(m: int, d: int, criterion: Criterion, p=None) -> LatticeRule:
    """Greedy CBC search for a generating vector of a ``d``-dim lattice.

    For each coordinate every nonzero candidate ``q`` with ``deg q < m`` is
    scored with the earlier coordinates fixed; the smallest criterion value
    wins, ties (equal up to rounding) going to the numerically smallest ``q``.
    """
    p = default_modulus(m) if p is None else F2Poly(_bits(p))
    if p.degree != m:
        raise ValueError("deg(p) must equal m")
    n = 1 << m
    if n - 1 < 1:
        raise ValueError("no candidate generating polynomials")
    omega = walsh_kernel(m, criterion.order)
    cands = np.arange(1, n, dtype=np.uint64)
    state = criterion.start(n)
    chosen: list[int] = []
    chunk = max(1, _CHUNK_ENTRIES // n)
    for j in range(d):
        mult = criterion.multiplier(state, j)
        scores = np.empty(cands.size)
        for s in range(0, cands.size, chunk):
            block = cands[s:s + chunk]
            x = _expand_linear(_basis_images(block, p.bits, m), m)
            scores[s:s + block.size] = np.take(omega, x.view(np.int64)) @ mult
        best = _first_minimum(scores, float(np.abs(omega).max() * np.abs(mult).sum()))
        qbest = int(cands[best])
        chosen.append(qbest)
        xcol = _expand_linear(_basis_images(np.array([qbest], dtype=np.uint64), p.bits, m), m)[0]
        state = criterion.update(state, j, np.take(omega, xcol.view(np.int64)))
    return LatticeRule(m, p, tuple(F2Poly(q) for q in chosen))


def cbc_scores(m: int, prefix: Sequence[int], criterion: Criterion, p=None) -> np.ndarray:
    """Criterion values of every candidate for coordinate ``len(prefix)``.

    Entry ``i`` belongs to ``q = i + 1``. Computed by direct evaluation of
    the full criterion, independently of the incremental CBC path.
    """
    p = default_modulus(m) if p is None else F2Poly(_bits(p))
    out = np.empty((1 << m) - 1)
    for i in range(out.size):
        rule = LatticeRule(m, p, tuple(F2Poly(q) for q in prefix) + (F2Poly(i + 1),))
        out[i] = criterion.value(rule.numerators(), m)
    return out


def default_weights(d: int, alpha: int) -> SpodWeights:
    """``beta_j = 0.5 * j**-2.5``, matching the decay of the bundled targets."""
    return SpodWeights.power_decay(d, alpha)


@lru_cache(maxsize=256)
def _cached_cbc(m, d, beta, alpha, kind, order, repeat, pbits):
    w = SpodWeights(alpha, beta)
    crit = make_criterion(w, kind, order=order, repeat=repeat)
    return cbc_construct(m, d * repeat, crit, pbits)


def plain_rule(m: int, d: int, weights: SpodWeights | None = None,
               kind: str = "product", p=None) -> LatticeRule:
    """CBC lattice rule of order ``weights.alpha`` (first order by default)."""
    weights = weights or default_weights(d, 1)
    pbits = _bits(p) if p is not None else IRREDUCIBLE_POLYS[m]
    return _cached_cbc(m, d, tuple(weights.effective_beta[:d]), weights.alpha, kind,
                       weights.alpha, 1, pbits)


def ipl_rule(m: int, d: int, alpha: int, weights: SpodWeights | None = None,
             kind: str = "product", p=None) -> InterlacedRule:
    """Interlaced rule: CBC in dimension ``alpha*d`` then interlace."""
    weights = weights or default_weights(d, alpha)
    pbits = _bits(p) if p is not None else IRREDUCIBLE_POLYS[m]
    base = _cached_cbc(m, d, tuple(weights.effective_beta[:d]), weights.alpha, kind,
                       1, alpha, pbits)
    return InterlacedRule(base, alpha)


def epl_rule(m: int, d: int, alpha: int = 2, weights: SpodWeights | None = None,
             kind: str = "product", coeffs: Sequence | None = None) -> ExtrapolatedRule:
    """Extrapolated rule built from CBC lattices with 2**m, ..., 2**(m-alpha+1) points."""
    a = epl_coeffs(alpha, coeffs)
    if m - alpha + 1 < 2:
        raise ValueError("m - alpha + 1 must be at least 2")
    weights = weights or default_weights(d, alpha)
    beta = tuple(weights.effective_beta[:d])
    rules = tuple(_cached_cbc(m - t, d, beta, weights.alpha, kind, weights.alpha, 1,
                              IRREDUCIBLE_POLYS[m - t]) for t in range(alpha))
    return ExtrapolatedRule(rules, a)


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

Rule = LatticeRule | InterlacedRule | ExtrapolatedRule


def rule_point_sets(rule) -> list[tuple[float, np.ndarray]]:
    """``(coefficient, points)`` pairs whose weighted equal-weight averages form the rule."""
    if isinstance(rule, ExtrapolatedRule):
        return [(float(a), pts) for a, pts in zip(rule.coeffs, rule.point_sets())]
    return [(1.0, rule.points())]


def qmc_integrate(f: Callable[[np.ndarray], np.ndarray], rule, d: int | None = None) -> float:
    """Apply a rule to ``f``, which maps an ``(n, d)`` array to ``n`` values."""
    if d is not None and d != rule.d:
        raise ValueError(f"integrand dimension {d} does not match rule dimension {rule.d}")
    total = 0.0
    for a, pts in rule_point_sets(rule):
        vals = np.asarray(f(pts), dtype=np.float64)
        if vals.shape[0] != pts.shape[0]:
            raise ValueError("integrand must return one value per point")
        total += a * float(vals.mean())
    return total


# ---------------------------------------------------------------------------
# Generating-vector files
# ---------------------------------------------------------------------------

def write_generating_vector(path, rule: LatticeRule) -> None:
    """Line 1: hex of p; then one hex line per q_j."""
    with open(path, "w") as fh:
        fh.write(f"{rule.p.bits:x}\n")
        for qj in rule.q:
            fh.write(f"{qj.bits:x}\n")


def read_generating_vector(path) -> LatticeRule:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError("empty generating-vector file")
    p = F2Poly(int(lines[0], 16))
    q = tuple(F2Poly(int(s, 16)) for s in lines[1:])
    return LatticeRule(p.degree, p, q)
