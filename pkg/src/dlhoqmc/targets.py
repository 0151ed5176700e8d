"""Ground-truth data-to-observable maps.

* :func:`rational_g` -- closed-form rational function on ``[0,1]^d``.
* :class:`EllipticObservable` -- mean over (0,1/2)^2 of the P1 solution of
  ``-div(a grad u) = 10 x1`` with an affine-parametric coefficient.
* :class:`ParabolicObservable` -- same mean at time ``T`` for the heat
  equation with a moving source and parametric initial datum.

The PDE maps take parameters in ``[-1/2, 1/2]^d``.  :func:`make_target`
wraps them so that they accept QMC points in ``[0,1)^d`` (shift by -1/2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .fem import FemError, StructuredMesh, pcg, subdomain_mean

RATIONAL_SCALE = 0.5
RATIONAL_DECAY = 2.5


def rational_g(y) -> np.ndarray:
    """``1 / (1 + 0.5 * sum_j y_j j**-2.5)`` for a point or an ``(n, d)`` batch."""
    y = np.asarray(y, dtype=np.float64)
    j = np.arange(1, y.shape[-1] + 1, dtype=np.float64)
    return 1.0 / (1.0 + RATIONAL_SCALE * (y * j**-RATIONAL_DECAY).sum(axis=-1))


def modes(d: int) -> list[tuple[int, int]]:
    """First ``d`` pairs ``(k1, k2)`` ordered by ``k1**2 + k2**2``, ties lexicographic."""
    if d < 1:
        raise ValueError("d must be positive")
    kmax = 1
    while kmax * kmax < d:
        kmax += 1
    # every pair with k1^2+k2^2 <= 2*kmax^2 is enumerated, which covers the first d
    lim = int(math.isqrt(2 * kmax * kmax)) + 1
    pairs = [(a, b) for a in range(1, lim + 1) for b in range(1, lim + 1)]
    pairs.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2, k))
    return pairs[:d]


@dataclass(frozen=True)
class AffineDiffusion:
    """``a(x, y) = 1 + sum_j y_j (k1^2+k2^2)^-eta sin(k1 pi x1) sin(k2 pi x2)``."""

    d: int
    eta: float = 2.5

    @cached_property
    def mode_list(self) -> np.ndarray:
        return np.array(modes(self.d), dtype=np.float64)

    @cached_property
    def amplitudes(self) -> np.ndarray:
        k = self.mode_list
        return (k[:, 0] ** 2 + k[:, 1] ** 2) ** -self.eta

    @property
    def beta(self) -> np.ndarray:
        """``||psi_j||_inf / (2 essinf abar)`` with ``abar = 1``."""
        return self.amplitudes / 2.0

    def psi(self, x1, x2) -> np.ndarray:
        """All ``psi_j`` at the given points; trailing axis indexes j."""
        x1 = np.asarray(x1, dtype=np.float64)[..., None]
        x2 = np.asarray(x2, dtype=np.float64)[..., None]
        k = self.mode_list
        return self.amplitudes * np.sin(k[:, 0] * np.pi * x1) * np.sin(k[:, 1] * np.pi * x2)

    def __call__(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return 1.0 + self.psi(x[..., 0], x[..., 1]) @ np.asarray(y, dtype=np.float64)


def diffusion_eval(field: AffineDiffusion, x, y) -> float:
    return float(field(np.asarray(x), y))


def _check_box(y: np.ndarray, d: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != d:
        raise ValueError(f"expected {d} parameters, got {y.shape[-1]}")
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite parameter")
    return y


@dataclass(frozen=True)
class FemSolution:
    u: np.ndarray  # interior nodal values
    mesh: StructuredMesh
    y: np.ndarray


class EllipticObservable:
    """Solver for ``-div(a(., y) grad u) = f`` with homogeneous Dirichlet data.

    Stiffness data is affine in ``y``; the per-coordinate pieces are
    assembled once so each parameter costs one sparse mat-vec plus a CG solve.
    """

    def __init__(self, field: AffineDiffusion, mesh: StructuredMesh, source=None,
                 rtol: float = 1e-10, taylor_guess: bool = True):
        self.field = field
        self.mesh = mesh
        self.rtol = rtol
        src = source if source is not None else (lambda x1, x2: 10.0 * x1)
        mid = mesh.midpoints
        self.rhs = mesh.load(src(mid[..., 0], mid[..., 1]))
        psi_mid = field.psi(mid[..., 0], mid[..., 1])  # (E, 3, d)
        self._psi_mid = psi_mid.reshape(-1, field.d)
        scatter = mesh.scatter_matrix()
        self._data0 = scatter @ np.ones(mesh.n_elements)
        self._data_y = scatter @ psi_mid.mean(axis=1)  # (nnz, d)
        keep, inv, self._indices, self._indptr, _ = mesh._pattern
        self._n = mesh.interior.size
        self.taylor_guess = taylor_guess

    @cached_property
    def _taylor(self):
        """Nominal solution and its first derivatives in y (CG start vector)."""
        zero = np.zeros(self.field.d)
        A0 = self.matrix(zero)
        u0 = pcg(A0, self.rhs, rtol=1e-12)
        du = np.empty((self._n, self.field.d))
        for j in range(self.field.d):
            Aj = sp.csr_matrix((self._data_y[:, j], self._indices, self._indptr),
                               shape=(self._n, self._n))
            du[:, j] = pcg(A0, -(Aj @ u0), rtol=1e-12)
        return u0, du

    def matrix(self, y) -> sp.csr_matrix:
        y = _check_box(y, self.field.d)
        amin = 1.0 + (self._psi_mid @ y).min()
        if amin <= 0.0:
            raise FemError(f"diffusion coefficient not positive (min {amin:.3g})")
        data = self._data0 + self._data_y @ y
        return sp.csr_matrix((data, self._indices, self._indptr), shape=(self._n, self._n))

    def solve(self, y, rhs=None) -> FemSolution:
        y = np.asarray(y, dtype=np.float64)
        A = self.matrix(y)
        x0 = None
        if rhs is None and self.taylor_guess:
            u0, du = self._taylor
            x0 = u0 + du @ y
        u = pcg(A, self.rhs if rhs is None else rhs, rtol=self.rtol, x0=x0)
        return FemSolution(u, self.mesh, y)

    def __call__(self, y) -> np.ndarray:
        """Observable for one parameter or a batch ``(n, d)`` in ``[-1/2,1/2]^d``."""
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            return np.float64(observable_elliptic(self.solve(y)))
        return np.array([observable_elliptic(self.solve(row)) for row in y])


def solve_elliptic(field: AffineDiffusion, y, mesh: StructuredMesh, source=None) -> FemSolution:
    return EllipticObservable(field, mesh, source).solve(y)


def observable_elliptic(sol: FemSolution) -> float:
    """Mean of ``u_h`` over (0, 1/2)^2; needs an even number of cells per axis."""
    if sol.mesh.n % 2:
        raise ValueError("observable needs an even mesh size n")
    return subdomain_mean(sol.mesh, sol.u, 0.5)


class ParabolicObservable:
    """Backward-Euler P1 solver for ``u_t - lap u = f(x, t)`` on (0,1)^2.

    Initial datum ``exp(100 sum_j y_j psi_j) - 1`` is interpolated at the
    nodes; the observable is the mean over (0,1/2)^2 at time ``T``.
    """

    def __init__(self, field: AffineDiffusion, mesh: StructuredMesh, dt: float = 5e-3,
                 T: float = 0.5, source="moving", rtol: float = 1e-10):
        steps = T / dt
        if dt <= 0 or abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError("dt must be positive and divide T")
        self.field, self.mesh, self.dt, self.T = field, mesh, dt, T
        self.steps = int(round(steps))
        self.rtol = rtol
        self.M = mesh.assemble(mesh.local_mass())
        self.K = mesh.assemble(mesh.local_stiffness())
        self.A = (self.M + dt * self.K).tocsr()
        if source == "moving":
            src = lambda x1, x2, t: 100.0 * np.exp(-20.0 * (x1 - t) ** 2 - 20.0 * (x2 - t) ** 2)
        else:
            src = source
        self._source = src
        mid = mesh.midpoints
        if src is None:
            self._loads = None
        else:
            self._loads = np.array([
                mesh.load(src(mid[..., 0], mid[..., 1], (k + 1) * dt))
                for k in range(self.steps)])
        xi = mesh.nodes[mesh.interior]
        self._psi_nodes = field.psi(xi[:, 0], xi[:, 1])

    def initial(self, y) -> np.ndarray:
        y = _check_box(y, self.field.d)
        return np.expm1(100.0 * (self._psi_nodes @ y))

    def evolve(self, u0: np.ndarray) -> np.ndarray:
        u = u0.copy()
        for k in range(self.steps):
            rhs = self.M @ u
            if self._loads is not None:
                rhs = rhs + self.dt * self._loads[k]
            u = pcg(self.A, rhs, rtol=self.rtol, x0=u)
        return u

    def solve(self, y) -> FemSolution:
        y = np.asarray(y, dtype=np.float64)
        return FemSolution(self.evolve(self.initial(y)), self.mesh, y)

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            return np.float64(subdomain_mean(self.mesh, self.solve(y).u))
        return np.array([subdomain_mean(self.mesh, self.solve(row).u) for row in y])


def eigenmode_decay_error(n: int = 64, dt: float = 1e-3, T: float = 0.05) -> float:
    """Max nodal relative deviation from ``exp(-2 pi^2 T) sin(pi x1) sin(pi x2)``.

    Source-free heat flow of the first Dirichlet eigenmode; backward Euler
    contributes roughly ``T (2 pi^2)^2 dt / 2`` of relative error.
    """
    mesh = StructuredMesh(n)
    solver = ParabolicObservable(AffineDiffusion(1), mesh, dt=dt, T=T, source=None, rtol=1e-12)
    u0 = mesh.interpolate(lambda x1, x2: np.sin(np.pi * x1) * np.sin(np.pi * x2))
    uT = solver.evolve(u0)
    ref = math.exp(-2.0 * np.pi**2 * T) * u0
    return float(np.max(np.abs(uT - ref)) / np.max(np.abs(ref)))


def solve_parabolic(field: AffineDiffusion, y, mesh: StructuredMesh, dt: float, T: float,
                    source="moving") -> float:
    if mesh.n % 2:
        raise ValueError("observable needs an even mesh size n")
    return float(ParabolicObservable(field, mesh, dt, T, source)(np.asarray(y)))


@dataclass
class Target:
    """Observable on the unit cube with a description for data-file headers."""

    name: str
    d: int
    fn: object
    shift: float = 0.0
    meta: dict = field(default_factory=dict)

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        if pts.shape[-1] != self.d:
            raise ValueError(f"target expects dimension {self.d}, got {pts.shape[-1]}")
        return np.asarray(self.fn(pts + self.shift), dtype=np.float64)

    @property
    def beta(self) -> np.ndarray:
        """Coordinate decay used for CBC weights and layer-1 clamping."""
        if self.name == "rational":
            j = np.arange(1, self.d + 1, dtype=np.float64)
            return RATIONAL_SCALE * j**-RATIONAL_DECAY
        return AffineDiffusion(self.d, self.meta.get("eta", 2.5)).beta


def make_target(name: str, d: int, n: int = 64, dt: float = 5e-3, T: float = 0.5,
                eta: float = 2.5) -> Target:
    """Target on ``[0,1)^d``; PDE targets shift inputs to ``[-1/2,1/2)^d``."""
    if name == "rational":
        return Target(name, d, rational_g, 0.0, {})
    field = AffineDiffusion(d, eta)
    mesh = StructuredMesh(n)
    if name == "elliptic":
        return Target(name, d, EllipticObservable(field, mesh), -0.5,
                      {"mesh": n, "eta": eta, "shift": -0.5})
    if name == "parabolic":
        return Target(name, d, ParabolicObservable(field, mesh, dt, T), -0.5,
                      {"mesh": n, "eta": eta, "dt": dt, "T": T, "shift": -0.5})
    raise ValueError(f"unknown target {name!r}")
