"""P1 finite elements on a structured triangulation of the unit square.

Assembly uses the three edge midpoints of each triangle as quadrature
points, which is exact for quadratic integrands.  Systems are solved with
Jacobi-preconditioned conjugate gradients.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class FemError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class StructuredMesh:
    """``n x n`` squares on (0,1)^2, each split along the (0,0)-(1,1) diagonal."""

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one cell per axis")

    @cached_property
    def nodes(self) -> np.ndarray:
        t = np.linspace(0.0, 1.0, self.n + 1)
        xx, yy = np.meshgrid(t, t, indexing="xy")
        return np.column_stack((xx.ravel(), yy.ravel()))

    @cached_property
    def triangles(self) -> np.ndarray:
        n = self.n
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
        v00 = (j * (n + 1) + i).ravel()
        v10, v01 = v00 + 1, v00 + n + 1
        v11 = v01 + 1
        lower = np.column_stack((v00, v10, v11))
        upper = np.column_stack((v00, v11, v01))
        return np.vstack((lower, upper))

    @property
    def n_elements(self) -> int:
        return 2 * self.n * self.n

    @cached_property
    def boundary(self) -> np.ndarray:
        x, y = self.nodes.T
        return (x == 0.0) | (x == 1.0) | (y == 0.0) | (y == 1.0)

    @cached_property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def midpoints(self) -> np.ndarray:
        """Edge midpoints, shape (n_elements, 3, 2); midpoint k lies opposite vertex k."""
        p = self.nodes[self.triangles]
        return 0.5 * np.stack((p[:, 1] + p[:, 2], p[:, 2] + p[:, 0], p[:, 0] + p[:, 1]), axis=1)

    @cached_property
    def gradients(self) -> np.ndarray:
        """Gradients of the three barycentric basis functions, shape (n_elements, 3, 2)."""
        p = self.nodes[self.triangles]
        x, y = p[..., 0], p[..., 1]
        two_area = 2.0 * self.areas[:, None]
        gx = np.stack((y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]), axis=1)
        gy = np.stack((x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]), axis=1)
        return np.stack((gx, gy), axis=-1) / two_area[..., None]

    @cached_property
    def _pattern(self):
        """CSR pattern of interior-interior couplings plus scatter indices."""
        full_to_int = -np.ones(len(self.nodes), dtype=np.int64)
        full_to_int[self.interior] = np.arange(self.interior.size)
        t = full_to_int[self.triangles]
        rows = np.repeat(t, 3, axis=1)
        cols = np.tile(t, (1, 3))
        keep = (rows >= 0) & (cols >= 0)
        nint = self.interior.size
        key = rows * nint + cols
        uniq, inv = np.unique(key[keep], return_inverse=True)
        indptr = np.searchsorted(uniq // nint, np.arange(nint + 1))
        return keep, inv, uniq % nint, indptr, full_to_int

    def local_stiffness(self) -> np.ndarray:
        """Per-element ``area * grad phi_i . grad phi_k``, shape (n_elements, 3, 3)."""
        g = self.gradients
        return self.areas[:, None, None] * np.einsum("eid,ekd->eik", g, g)

    def local_mass(self) -> np.ndarray:
        base = (np.ones((3, 3)) + np.eye(3)) / 12.0
        return self.areas[:, None, None] * base

    def assemble(self, local: np.ndarray) -> sp.csr_matrix:
        """Sum per-element 3x3 blocks into the interior-node matrix."""
        keep, inv, indices, indptr, _ = self._pattern
        data = np.bincount(inv, weights=local.reshape(len(local), 9)[keep],
                           minlength=indices.size)
        nint = self.interior.size
        return sp.csr_matrix((data, indices, indptr), shape=(nint, nint))

    def scatter_matrix(self) -> sp.csr_matrix:
        """Sparse map from per-element coefficient to interior matrix data."""
        keep, inv, indices, _, _ = self._pattern
        k = self.local_stiffness().reshape(self.n_elements, 9)
        elem = np.repeat(np.arange(self.n_elements), 9).reshape(-1, 9)
        return sp.csr_matrix((k[keep], (inv, elem[keep])), shape=(indices.size, self.n_elements))

    def load(self, f_mid: np.ndarray) -> np.ndarray:
        """Load vector from ``f`` at the edge midpoints, shape (n_elements, 3)."""
        # phi_i is 1/2 at the two midpoints adjacent to vertex i, 0 opposite
        phi = 0.5 * (np.ones((3, 3)) - np.eye(3))
        local = (self.areas[:, None] / 3.0) * (f_mid @ phi)
        _, _, _, _, full_to_int = self._pattern
        idx = full_to_int[self.triangles]
        keep = idx >= 0
        return np.bincount(idx[keep], weights=local[keep], minlength=self.interior.size)

    def interpolate(self, fn) -> np.ndarray:
        """Nodal interpolant on interior nodes."""
        x, y = self.nodes[self.interior].T
        return fn(x, y)

    def full_vector(self, u_int: np.ndarray) -> np.ndarray:
        u = np.zeros(len(self.nodes))
        u[self.interior] = u_int
        return u


def pcg(A: sp.csr_matrix, b: np.ndarray, rtol: float = 1e-10, maxiter: int | None = None,
        x0: np.ndarray | None = None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients; relative residual ``<= rtol``."""
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    with np.errstate(divide="ignore"):
        dinv = 1.0 / A.diagonal()
    if np.any(~np.isfinite(dinv)) or np.any(dinv <= 0):
        raise FemError("matrix diagonal is not positive")
    maxiter = maxiter or 10 * A.shape[0]
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    tol = rtol * bnorm
    for _ in range(maxiter):
        if np.linalg.norm(r) <= tol:
            return x
        ap = A @ p
        step = rz / (p @ ap)
        x += step * p
        r -= step * ap
        z = dinv * r
        rz_new = r @ z
        p *= rz_new / rz
        p += z
        rz = rz_new
    if np.linalg.norm(r) <= tol:
        return x
    raise FemError(f"CG did not reach rtol={rtol} in {maxiter} iterations")


def l2_error(mesh: StructuredMesh, u_int: np.ndarray, exact) -> float:
    """L2 error against ``exact(x, y)`` with the edge-midpoint rule."""
    u = mesh.full_vector(u_int)[mesh.triangles]
    phi = 0.5 * (np.ones((3, 3)) - np.eye(3))
    uh_mid = u @ phi
    mid = mesh.midpoints
    ex = exact(mid[..., 0], mid[..., 1])
    return float(np.sqrt(np.sum(mesh.areas[:, None] / 3.0 * (uh_mid - ex) ** 2)))


def subdomain_mean(mesh: StructuredMesh, u_int: np.ndarray, corner: float = 0.5) -> float:
    """Mean of the P1 function over (0, corner)^2, exact for aligned meshes.

    ``u_int`` holds interior values (boundary taken as zero) or all nodal values.
    """
    k = mesh.n * corner
    if abs(k - round(k)) > 1e-12:
        raise ValueError(f"mesh with n={mesh.n} does not resolve the subdomain boundary")
    full = u_int if u_int.size == len(mesh.nodes) else mesh.full_vector(u_int)
    u = full[mesh.triangles]
    cent = mesh.nodes[mesh.triangles].mean(axis=1)
    inside = (cent[:, 0] < corner) & (cent[:, 1] < corner)
    integral = np.sum(mesh.areas[inside] * u[inside].mean(axis=1))
    return float(integral / corner**2)


def solve_dirichlet(mesh: StructuredMesh, coef, source, rtol: float = 1e-10) -> np.ndarray:
    """Interior nodal solution of ``-div(a grad u) = f`` with ``u = 0`` on the boundary.

    ``coef`` and ``source`` are callables ``(x1, x2) -> values``.
    """
    mid = mesh.midpoints
    a_mid = coef(mid[..., 0], mid[..., 1])
    keep, inv, indices, indptr, _ = mesh._pattern
    data = mesh.scatter_matrix() @ a_mid.mean(axis=1)
    nint = mesh.interior.size
    A = sp.csr_matrix((data, indices, indptr), shape=(nint, nint))
    return pcg(A, mesh.load(source(mid[..., 0], mid[..., 1])), rtol=rtol)


def manufactured_l2_errors(ns=(16, 32, 64), variable: bool = False
                           ) -> tuple[np.ndarray, np.ndarray]:
    """L2 errors for ``u = sin(pi x1) sin(pi x2)``.

    The coefficient is ``a = 1``, or ``a = 1 + x1 x2 / 2`` with ``variable``.
    Returns the errors and the observed rates between consecutive meshes.
    """
    pi = np.pi
    c = 0.5 if variable else 0.0

    def exact(x1, x2):
        return np.sin(pi * x1) * np.sin(pi * x2)

    def coef(x1, x2):
        return 1.0 + c * x1 * x2

    def source(x1, x2):
        ux = pi * np.cos(pi * x1) * np.sin(pi * x2)
        uy = pi * np.sin(pi * x1) * np.cos(pi * x2)
        return coef(x1, x2) * 2 * pi**2 * exact(x1, x2) - c * (x2 * ux + x1 * uy)

    errs = []
    for n in ns:
        mesh = StructuredMesh(n)
        errs.append(l2_error(mesh, solve_dirichlet(mesh, coef, source, rtol=1e-12), exact))
    errs = np.array(errs)
    ns = np.asarray(ns, dtype=np.float64)
    rates = -np.diff(np.log(errs)) / np.diff(np.log(ns))
    return errs, rates
