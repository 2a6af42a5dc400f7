"""Continuous Lagrange elements (P1/P2, scalar or 3-vector) on tet meshes.

Degrees of freedom are nodal: vertex values for P1, vertex plus edge-midpoint
values for P2.  Vector dofs interleave components (global index =
3*scalar_dof + component).  Quadrature rules are collapsed-coordinate
Gauss-Jacobi products, exact for any requested polynomial degree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, cKDTree
from scipy.interpolate import LinearNDInterpolator

from .errors import ValidationError
from .meshing import Mesh, TET_EDGES

_P1_GRADS = np.array(
    [[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
)


def tabulate_basis(order: int, points):
    """Reference-element basis values, gradients and Hessians at given points.

    points: (n, 3) reference coordinates.  Returns (phi, grad, hess) with
    shapes (n, nb), (n, nb, 3), (n, nb, 3, 3).
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = len(points)
    lam = np.empty((n, 4))
    lam[:, 1:] = points
    lam[:, 0] = 1.0 - points.sum(axis=1)

    if order == 1:
        phi = lam.copy()
        grad = np.broadcast_to(_P1_GRADS, (n, 4, 3)).copy()
        hess = np.zeros((n, 4, 3, 3))
        return phi, grad, hess

    if order != 2:
        raise ValidationError(f"unsupported element order {order}")

    nb = 10
    phi = np.empty((n, nb))
    grad = np.empty((n, nb, 3))
    hess = np.empty((n, nb, 3, 3))
    for i in range(4):
        gi = _P1_GRADS[i]
        phi[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        grad[:, i] = (4.0 * lam[:, i] - 1.0)[:, None] * gi
        hess[:, i] = 4.0 * np.outer(gi, gi)
    for e, (i, j) in enumerate(TET_EDGES):
        k = 4 + e
        gi, gj = _P1_GRADS[i], _P1_GRADS[j]
        phi[:, k] = 4.0 * lam[:, i] * lam[:, j]
        grad[:, k] = 4.0 * (
            lam[:, i][:, None] * gj + lam[:, j][:, None] * gi
        )
        hess[:, k] = 4.0 * (np.outer(gi, gj) + np.outer(gj, gi))
    return phi, grad, hess


def _gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _jacobi01(n, alpha):
    from scipy.special import roots_jacobi

    x, w = roots_jacobi(n, alpha, 0.0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1)


@dataclass(frozen=True)
class QuadratureRule:
    """Points (reference coords) and weights; weights sum to the cell measure."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self):
        return len(self.weights)


def tet_quadrature(degree: int) -> QuadratureRule:
    """Collapsed Gauss-Jacobi product rule on the reference tetrahedron."""
    if degree < 0:
        raise ValidationError("quadrature degree must be non-negative")
    n = max(1, math.ceil((degree + 1) / 2))
    xi, wi = _jacobi01(n, 2.0)
    eta, we = _jacobi01(n, 1.0)
    zeta, wz = _gauss01(n)
    pts = np.empty((n, n, n, 3))
    pts[..., 0] = xi[:, None, None]
    pts[..., 1] = eta[None, :, None] * (1.0 - xi[:, None, None])
    pts[..., 2] = (
        zeta[None, None, :] * (1.0 - xi[:, None, None]) * (1.0 - eta[None, :, None])
    )
    w = wi[:, None, None] * we[None, :, None] * wz[None, None, :]
    return QuadratureRule(pts.reshape(-1, 3), w.ravel(), degree)


def tri_quadrature(degree: int) -> QuadratureRule:
    """Collapsed rule on the reference triangle (points are (x, y))."""
    if degree < 0:
        raise ValidationError("quadrature degree must be non-negative")
    n = max(1, math.ceil((degree + 1) / 2))
    xi, wi = _jacobi01(n, 1.0)
    eta, we = _gauss01(n)
    pts = np.empty((n, n, 2))
    pts[..., 0] = xi[:, None]
    pts[..., 1] = eta[None, :] * (1.0 - xi[:, None])
    w = wi[:, None] * we[None, :]
    return QuadratureRule(pts.reshape(-1, 2), w.ravel(), degree)


class FESpace:
    """Lagrange space of given order (1 or 2) and component count (1 or 3)."""

    def __init__(self, mesh: Mesh, order: int, components: int = 1):
        if order not in (1, 2):
            raise ValidationError(f"unsupported element order {order}")
        if components not in (1, 3):
            raise ValidationError("components must be 1 or 3")
        self.mesh = mesh
        self.order = order
        self.components = components
        if order == 1:
            self.scalar_dof_map = mesh.tets.copy()
            self.n_scalar = mesh.n_vertices
        else:
            self.scalar_dof_map = np.hstack(
                [mesh.tets, mesh.n_vertices + mesh.tet_edge_ids]
            )
            self.n_scalar = mesh.n_vertices + len(mesh.edges)
        self.n_local = self.scalar_dof_map.shape[1]
        self._coords = None
        self._edge_key = None

    @property
    def n_dofs(self) -> int:
        return self.components * self.n_scalar

    def dof_coords(self) -> np.ndarray:
        """Coordinates of the scalar dofs (vertices, then edge midpoints)."""
        if self._coords is None:
            v = self.mesh.vertices
            if self.order == 1:
                self._coords = v.copy()
            else:
                e = self.mesh.edges
                self._coords = np.vstack([v, 0.5 * (v[e[:, 0]] + v[e[:, 1]])])
        return self._coords

    def _edge_lookup(self):
        if self._edge_key is None:
            e = self.mesh.edges
            nv = self.mesh.n_vertices
            self._edge_key = dict(
                zip((e[:, 0] * nv + e[:, 1]).tolist(), range(len(e)))
            )
        return self._edge_key

    def boundary_scalar_dofs(self, kind: str, index: int = 0) -> np.ndarray:
        """Scalar dofs lying on the faces of one boundary patch."""
        faces = self.mesh.boundary_faces[self.mesh.faces_of(kind, index)]
        dofs = set(faces.ravel().tolist())
        if self.order == 2:
            nv = self.mesh.n_vertices
            lut = self._edge_lookup()
            for tri in faces:
                for a, b in ((0, 1), (0, 2), (1, 2)):
                    i, j = sorted((int(tri[a]), int(tri[b])))
                    dofs.add(nv + lut[i * nv + j])
        return np.asarray(sorted(dofs), dtype=np.int64)

    def vector_dofs(self, scalar_dofs) -> np.ndarray:
        """Expand scalar dof ids to all interleaved component dofs."""
        s = np.asarray(scalar_dofs, dtype=np.int64)
        return (s[:, None] * self.components + np.arange(self.components)).ravel()

    def interpolate(self, fn) -> "FEFunction":
        """Nodal interpolation of a callable fn(points (n,3)) -> (n,) or (n,3)."""
        x = self.dof_coords()
        vals = np.asarray(fn(x), dtype=np.float64)
        if self.components == 1:
            if vals.shape != (self.n_scalar,):
                vals = vals.reshape(self.n_scalar)
            return FEFunction(self, vals.copy())
        if vals.shape != (self.n_scalar, 3):
            raise ValidationError("vector interpolant must return (n, 3) values")
        return FEFunction(self, vals.reshape(-1).copy())


class FEFunction:
    """Coefficient vector bound to a space; callable field via evaluate()."""

    def __init__(self, space: FESpace, coefficients=None):
        self.space = space
        if coefficients is None:
            coefficients = np.zeros(space.n_dofs)
        self.coefficients = np.asarray(coefficients, dtype=np.float64)
        if self.coefficients.shape != (space.n_dofs,):
            raise ValidationError("coefficient length does not match space")

    def nodal(self) -> np.ndarray:
        """(n_scalar, components) view of the coefficients."""
        return self.coefficients.reshape(self.space.n_scalar, self.space.components)

    def copy(self) -> "FEFunction":
        return FEFunction(self.space, self.coefficients.copy())


def evaluate(f: FEFunction, cell: int, point, derivatives: bool = True):
    """Value (and physical gradient / second derivatives) at a reference point.

    Returns (value, grad, hess): for scalar spaces value is a float, grad is
    (3,), hess (3, 3); for vector spaces (3,), (3, 3) with grad[i, j] =
    d u_i / d x_j, and hess (3, 3, 3).
    """
    out = evaluate_many(
        f, np.asarray([cell]), np.asarray([point], dtype=np.float64), derivatives
    )
    if not derivatives:
        return out[0]
    vals, grads, hesses = out
    return vals[0], grads[0], hesses[0]


def evaluate_many(f: FEFunction, cells, points, derivatives: bool = True):
    """Vectorized evaluation at (cell, reference-point) pairs."""
    space = f.space
    cells = np.asarray(cells, dtype=np.int64)
    phi, gref, href = tabulate_basis(space.order, points)
    dofs = space.scalar_dof_map[cells]                       # (n, nb)
    coef = f.nodal()[dofs]                                   # (n, nb, comps)
    vals = np.einsum("nb,nbc->nc", phi, coef)
    if space.components == 1:
        vals = vals[:, 0]
    if not derivatives:
        return vals

    _, Jinv, _, _, _ = space.mesh.geometry_arrays()
    Ji = Jinv[cells]                                         # (n, 3, 3)
    gphys = np.einsum("nkj,nbk->nbj", Ji, gref)              # (n, nb, 3)
    hphys = np.einsum("nki,nbkl,nlj->nbij", Ji, href, Ji)
    grads = np.einsum("nbj,nbc->ncj", gphys, coef)
    hesses = np.einsum("nbij,nbc->ncij", hphys, coef)
    if space.components == 1:
        grads = grads[:, 0]
        hesses = hesses[:, 0]
    return vals, grads, hesses


# -- inlet velocity profiles ----------------------------------------------------

@dataclass
class InletProfile:
    """Scattered velocity samples on (or near) the inlet plane."""

    points: np.ndarray        # (m, 3)
    velocities: np.ndarray    # (m, 3)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        self.velocities = np.atleast_2d(np.asarray(self.velocities, dtype=np.float64))
        if self.points.shape[0] != self.velocities.shape[0]:
            raise ValidationError("profile points and velocities must pair up")
        if self.points.shape[0] < 3:
            raise ValidationError("inlet profile needs at least 3 samples")


def load_inlet_profile(path) -> InletProfile:
    """Read 'x y z vx vy vz' sample lines (SI units, '#' comments allowed)."""
    pts, vels = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for num, raw in enumerate(fh, start=1):
            body = raw.split("#", 1)[0].strip()
            if not body:
                continue
            cols = body.split()
            if len(cols) != 6:
                raise ValidationError(f"line {num}: expected 6 fields, got {len(cols)}")
            try:
                vals = [float(c) for c in cols]
            except ValueError:
                raise ValidationError(f"line {num}: bad number in {body!r}") from None
            pts.append(vals[:3])
            vels.append(vals[3:])
    return InletProfile(np.asarray(pts), np.asarray(vels))


def interpolate_inlet_profile(profile: InletProfile, space: FESpace):
    """Map scattered samples onto the inlet dofs of a vector space.

    Linear interpolation over the triangulated samples (in the sample plane),
    nearest-sample fallback outside the convex hull.  Returns (scalar_dofs,
    values (len, 3)).
    """
    if space.components != 3:
        raise ValidationError("inlet profiles apply to vector spaces")
    pts = profile.points
    center = pts.mean(axis=0)
    centered = pts - center
    _, sv, vt = np.linalg.svd(centered, full_matrices=False)
    if len(sv) < 2 or sv[1] <= 1e-12 * max(sv[0], 1e-300):
        raise ValidationError("inlet samples are collinear; plane is undefined")
    t1, t2 = vt[0], vt[1]
    uv = centered @ np.stack([t1, t2], axis=1)

    try:
        tri = Delaunay(uv)
    except Exception as exc:  # qhull degeneracies
        raise ValidationError(f"inlet sample triangulation failed: {exc}") from None

    dofs = space.boundary_scalar_dofs("inlet")
    target = space.dof_coords()[dofs]
    tuv = (target - center) @ np.stack([t1, t2], axis=1)

    values = np.empty((len(dofs), 3))
    interp = LinearNDInterpolator(tri, profile.velocities)
    values[:] = interp(tuv)
    missing = np.isnan(values).any(axis=1)
    if missing.any():
        tree = cKDTree(uv)
        _, nearest = tree.query(tuv[missing])
        values[missing] = profile.velocities[nearest]
    return dofs, values
