"""Incompressible Navier-Stokes solver on labeled tet meshes.

Implicit Euler / two-step backward differentiation in time, Picard-linearized
convection, resistive outlet conditions with a directional backflow penalty,
and pluggable closures (eddy-viscosity models or residual-based multiscale
stabilization).  Velocity and pressure live in continuous Lagrange spaces
(P2/P1 inf-sup pair, or P1/P1 with the multiscale stabilization); all fields
are in solver units (velocities m/s, kinematic pressure p/rho).

The weak form moved entirely to the left-hand side reads

    (du/dt, v) + 2 nu (D(u), D(v)) + ((uh.grad) u, v)
      - (p, div v) + (div u, q)
      + sum_k [ R_k Q_k(uh) (n, v) - beta/2 ((uh.n)_- u, v) ]_outlet_k = (f, v)

with D the symmetric gradient, uh the frozen Picard iterate, Q_k the outlet
flux of uh and (x)_- the negative part.  Eddy viscosity enters as
2 (nu_t D(u), D(v)); the multiscale terms add element-interior residual
couplings including a pressure-pressure block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicSpline

from . import turbulence as turb
from .errors import ConfigError, NumericalError, ValidationError
from .fem import (
    FEFunction,
    FESpace,
    tabulate_basis,
    tet_quadrature,
    tri_quadrature,
)
from .meshing import TET_FACES, Mesh


# -- physical scaling ------------------------------------------------------------

@dataclass(frozen=True)
class PhysicalParams:
    """Fluid constants and the reference scales of the solver units."""

    density: float = 1060.0             # kg/m^3
    dynamic_viscosity: float = 3.5e-3   # Pa s
    length_scale: float = 1.0           # m
    velocity_scale: float = 1.0         # m/s

    def __post_init__(self):
        for name in ("density", "dynamic_viscosity", "length_scale", "velocity_scale"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")

    @property
    def kinematic_viscosity(self) -> float:
        """Dimensionless viscosity mu / (rho L U)."""
        return self.dynamic_viscosity / (
            self.density * self.length_scale * self.velocity_scale
        )

    def resistance_to_solver(self, r_si: float) -> float:
        """Pa s / m^3  ->  solver units (pressure is kinematic)."""
        return (
            r_si
            * self.length_scale**2
            / (self.density * self.velocity_scale)
        )

    def resistance_to_si(self, r: float) -> float:
        return r * self.density * self.velocity_scale / self.length_scale**2

    def pressure_to_pa(self, p: float):
        return np.asarray(p) * self.density * self.velocity_scale**2


def reynolds_number(params: PhysicalParams, length: float, velocity: float) -> float:
    """rho L U / mu for a characteristic length/velocity pair."""
    return params.density * length * velocity / params.dynamic_viscosity


# -- inflow waveforms --------------------------------------------------------------

def smootherstep(x):
    """Quintic ramp: 0 at 0 and 1 at 1 with zero first derivatives at both ends."""
    x = np.clip(x, 0.0, 1.0)
    return x**3 * (x * (6.0 * x - 15.0) + 10.0)


def two_peak_waveform(period: float = 1.0, n: int = 41):
    """Synthetic systole/diastole amplitude table on [0, period], zero at both ends."""
    s = np.arange(n) / (n - 1)
    w = np.where(s < 0.4, np.sin(np.pi * np.clip(s, 0, 0.4) / 0.4) ** 2, 0.0)
    mask = (s >= 0.45) & (s <= 0.75)
    w = w + np.where(mask, 0.2 * np.sin(np.pi * (s - 0.45) / 0.3) ** 2, 0.0)
    return s * period, w


class PulseProfile:
    """Inflow amplitude a(t).

    mode="periodic": a smooth start over ramp_time multiplying a periodic
    cubic spline through the waveform table (values must close the period).
    mode="ramp": the smooth step alone, holding 1 from ramp_time on.  An
    optional cut_time forces the amplitude to zero from that instant (used to
    study decaying flow).  a(0) = 0 and da/dt(0) = 0 in both modes.
    """

    def __init__(self, mode="periodic", ramp_time=0.01, period=1.0,
                 times=None, values=None, cut_time=None):
        if mode not in ("periodic", "ramp"):
            raise ConfigError(f"unknown pulse mode {mode!r}")
        if ramp_time <= 0 or period <= 0:
            raise ConfigError("ramp_time and period must be positive")
        self.mode = mode
        self.ramp_time = float(ramp_time)
        self.period = float(period)
        self.cut_time = cut_time
        self._spline = None
        if mode == "periodic":
            if times is None:
                times, values = two_peak_waveform(period)
            times = np.asarray(times, dtype=np.float64)
            values = np.asarray(values, dtype=np.float64)
            if abs(times[0]) > 1e-12 or abs(times[-1] - period) > 1e-9 * period:
                raise ConfigError("waveform table must span [0, period]")
            if abs(values[0] - values[-1]) > 1e-12:
                raise ConfigError("waveform endpoints must match for periodicity")
            self._spline = CubicSpline(times, values, bc_type="periodic")

    def amplitude(self, t: float) -> float:
        t = float(t)
        if self.cut_time is not None and t >= self.cut_time:
            return 0.0
        if t <= 0.0:
            return 0.0
        ramp = float(smootherstep(t / self.ramp_time))
        if self.mode == "ramp":
            return ramp
        return ramp * float(self._spline(math.fmod(t, self.period)))


# -- boundary conditions -------------------------------------------------------------

@dataclass
class DirichletPatch:
    """Essential velocity condition on one labeled patch.

    provider(coords, t) -> (n, 3) values at the patch dofs; None pins zero.
    Patches are applied in order, later ones winning on shared dofs (walls are
    appended last so rim dofs stay no-slip).
    """

    kind: str
    index: int = 0
    provider: object = None


def parabolic_inlet_values(space: FESpace):
    """Unit-peak paraboloid over the inlet patch, directed into the domain.

    Returns (scalar_dofs, values): values vanish on the patch rim (radius
    estimated from the dof footprint) and are clipped non-negative.
    """
    mesh = space.mesh
    faces = mesh.faces_of("inlet")
    normals, areas = mesh.boundary_normals_areas()
    n = normals[faces]
    a = areas[faces]
    mean_n = (n * a[:, None]).sum(axis=0)
    mean_n /= np.linalg.norm(mean_n)

    dofs = space.boundary_scalar_dofs("inlet")
    coords = space.dof_coords()[dofs]
    center = coords.mean(axis=0)
    inplane = coords - center
    inplane -= np.outer(inplane @ mean_n, mean_n)
    r2 = (inplane**2).sum(axis=1)
    radius2 = r2.max()
    shape = np.clip(1.0 - r2 / radius2, 0.0, None)
    values = -mean_n[None, :] * shape[:, None]
    return dofs, values


def plug_inlet_values(space: FESpace):
    """Unit plug profile over the inlet, directed into the domain.

    Rim dofs shared with the wall keep no-slip because wall conditions are
    applied after the inlet's.
    """
    mesh = space.mesh
    faces = mesh.faces_of("inlet")
    normals, areas = mesh.boundary_normals_areas()
    mean_n = (normals[faces] * areas[faces][:, None]).sum(axis=0)
    mean_n /= np.linalg.norm(mean_n)
    dofs = space.boundary_scalar_dofs("inlet")
    values = np.tile(-mean_n, (len(dofs), 1))
    return dofs, values


def nominal_influx(assembler, base) -> float:
    """Inflow rate of a unit-amplitude inlet profile extended by zero.

    This is the discrete Q_in the solver realizes at amplitude one; targets
    and conductance updates should be scaled against it rather than against
    a nominal analytic flow.
    """
    dofs, values = base
    u = np.zeros(assembler.n_vel)
    u.reshape(-1, 3)[np.asarray(dofs)] = values
    # rim dofs shared with the wall are no-slip in the realized condition
    wall = assembler.V.boundary_scalar_dofs("wall")
    u.reshape(-1, 3)[wall] = 0.0
    return -assembler.patch_flux(u, "inlet", 0)


def pulsed_inflow(space: FESpace, pulse: PulseProfile, base=None, peak=1.0):
    """DirichletPatch for the inlet: base spatial profile scaled by a(t)·peak.

    base: (scalar_dofs, values) pair; defaults to the parabolic profile.
    """
    if base is None:
        base = parabolic_inlet_values(space)
    dofs, values = base
    values = np.asarray(values, dtype=np.float64) * peak
    # the assembler queries patch dofs in sorted order; reorder values to match
    values_sorted = values[np.argsort(dofs)]

    def provider_sorted(coords, t):
        return values_sorted * pulse.amplitude(t)

    return DirichletPatch("inlet", 0, provider_sorted)


# -- assembled system ------------------------------------------------------------------

@dataclass
class SparseSystem:
    """One linearized saddle-point system with boundary conditions applied."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    n_vel: int
    n_pressure: int
    dirichlet_mask: np.ndarray
    meta: dict

    def pressure_block(self) -> sp.csr_matrix:
        return self.matrix[self.n_vel:, self.n_vel:].tocsr()


def solve_linear(system: SparseSystem, method="direct", tol=1e-10, maxiter=2000,
                 restart=200) -> np.ndarray:
    """Solve the assembled system; direct sparse LU by default.

    method="iterative" is a restarted GMRES with a diagonal (point)
    preconditioner, available for the fully coupled stabilized systems whose
    pressure block is non-empty.  method="block_amg" is GMRES with a block
    upper-triangular preconditioner (multigrid V-cycles on the velocity
    block, pressure mass over viscosity as Schur surrogate) for saddle-point
    systems too large to factorize directly.  Raises NumericalError on
    breakdown or non-convergence; the relative residual is checked always.
    """
    A = system.matrix
    b = system.rhs
    if not np.isfinite(b).all():
        raise NumericalError("non-finite right-hand side")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)

    if method == "direct":
        try:
            lu = spla.splu(A.tocsc())
            x = lu.solve(b)
        except RuntimeError as exc:
            raise NumericalError(f"sparse factorization failed: {exc}") from None
    elif method == "iterative":
        diag = A.diagonal()
        diag = np.where(np.abs(diag) > 1e-300, diag, 1.0)
        M = spla.LinearOperator(A.shape, matvec=lambda v: v / diag)
        x, info = spla.gmres(A, b, rtol=tol, atol=0.0, restart=restart,
                             maxiter=maxiter, M=M)
        if info > 0:
            raise NumericalError(f"iterative solve stalled after {info} iterations")
        if info < 0:
            raise NumericalError("iterative solver breakdown")
    elif method == "block_amg":
        M = _block_triangular_preconditioner(system)
        x, info = spla.gmres(A, b, rtol=tol, atol=0.0, restart=restart,
                             maxiter=maxiter, M=M)
        if info > 0:
            raise NumericalError(f"block solve stalled after {info} iterations")
        if info < 0:
            raise NumericalError("block solver breakdown")
    else:
        raise ConfigError(f"unknown linear solver {method!r}")

    if not np.isfinite(x).all():
        raise NumericalError("linear solve produced non-finite values")
    rel = np.linalg.norm(b - A @ x) / bnorm
    if rel > max(tol, 1e-9):
        raise NumericalError(f"linear solve residual {rel:.3e} above tolerance")
    return x


def _block_triangular_preconditioner(system: SparseSystem):
    """Approximate inverse of [[A_uu, A_up], [0, S]] as a LinearOperator.

    S is the pressure mass matrix divided by the viscosity (the classical
    Schur-complement surrogate for viscosity-dominated flow); the velocity
    block is applied through a fixed number of smoothed-aggregation
    multigrid V-cycles, so the operator stays linear and plain GMRES
    applies.  Pinned pressure dofs keep their identity rows.
    """
    import pyamg

    A = system.matrix.tocsr()
    nv = system.n_vel
    if system.n_pressure == 0 or "pressure_mass" not in system.meta:
        raise NumericalError("block solver needs an assembled saddle-point system")
    A_uu = A[:nv, :nv].tocsr()
    A_up = A[:nv, nv:].tocsr()

    S = (system.meta["pressure_mass"] * (1.0 / system.meta["viscosity"])).tocsr()
    mask_p = system.dirichlet_mask[nv:]
    if mask_p.any():
        keep = sp.diags((~mask_p).astype(np.float64))
        S = keep @ S @ keep + sp.diags(mask_p.astype(np.float64))
    s_lu = spla.splu(S.tocsc())

    near_null = np.zeros((nv, 3))
    for c in range(3):
        near_null[c::3, c] = 1.0
    ml = pyamg.smoothed_aggregation_solver(A_uu, B=near_null, max_coarse=500)

    def apply(r):
        zp = s_lu.solve(r[nv:])
        zu = ml.solve(r[:nv] - A_up @ zp, tol=1e-300, maxiter=2, cycle="V",
                      accel=None)
        return np.concatenate([zu, zp])

    return spla.LinearOperator(A.shape, matvec=apply)


# -- the assembler ----------------------------------------------------------------------

_E3 = np.eye(3)


class Assembler:
    """Precomputes geometry/basis data for one mesh + discretization and
    assembles the linearized systems of each nonlinear sweep."""

    def __init__(self, mesh: Mesh, pair="p2p1", params: PhysicalParams | None = None,
                 model=None, resistances=None, beta=1.0, convective=True,
                 body_force=None, tau_override=None, dirichlet=None,
                 pin_pressure=False, quad_degree=None):
        if pair not in ("p2p1", "p1p1"):
            raise ValidationError(f"unknown element pair {pair!r}")
        self.mesh = mesh
        self.pair = pair
        self.params = params or PhysicalParams()
        self.model = model
        self.beta = float(beta)
        self.convective = bool(convective)
        self.body_force = body_force
        self.tau_override = tau_override
        self.pin_pressure = bool(pin_pressure)
        self._check_pair_model()

        order_v = 2 if pair == "p2p1" else 1
        self.V = FESpace(mesh, order_v, components=3)
        self.Q = FESpace(mesh, 1, components=1)
        self.n_vel = self.V.n_dofs
        self.n_pressure = self.Q.n_dofs
        self.n_total = self.n_vel + self.n_pressure

        if resistances is None:
            resistances = np.zeros(mesh.n_outlets)
        self.resistances = np.asarray(resistances, dtype=np.float64)
        if len(self.resistances) != mesh.n_outlets:
            raise ValidationError("one resistance per outlet required")

        if quad_degree is None:
            quad_degree = 4 if pair == "p2p1" else 2
        self._setup_volume(quad_degree)
        self._setup_boundary(quad_degree)
        self._setup_constant_matrices()

        if dirichlet is None:
            dirichlet = []
        patches = list(dirichlet)
        if not any(p.kind == "wall" for p in patches):
            patches.append(DirichletPatch("wall"))
        self._setup_dirichlet(patches)

    # -- configuration checks ----------------------------------------------------

    def _check_pair_model(self):
        m = self.model
        if self.pair == "p1p1":
            if not isinstance(m, turb.RBVMS) or not isinstance(m.pair_mode, turb.EqualOrder):
                raise ValidationError(
                    "equal-order P1/P1 requires the residual-based multiscale "
                    "model with equal-order stabilization"
                )
        else:
            if isinstance(m, turb.RBVMS) and not isinstance(m.pair_mode, turb.InfSup):
                raise ValidationError(
                    "P2/P1 with the multiscale model requires inf-sup stabilization"
                )
            if m is not None and not isinstance(m, turb.LES_MODELS + (turb.RBVMS,)):
                raise ValidationError(f"unknown closure model {m!r}")

    # -- precomputation -----------------------------------------------------------

    def _setup_volume(self, degree):
        mesh = self.mesh
        rule = tet_quadrature(degree)
        self.rule = rule
        nq = len(rule)
        J, Jinv, vol, h_short, widths = mesh.geometry_arrays()
        self.h_short = h_short
        self.widths = widths
        self.cell_metric = np.einsum("cki,ckj->cij", Jinv, Jinv)
        self.cell_g = Jinv.sum(axis=1)

        det = 6.0 * vol
        self.wdet = rule.weights[None, :] * det[:, None]            # (nt, nq)

        phi_v, gref_v, href_v = tabulate_basis(self.V.order, rule.points)
        phi_p, gref_p, _ = tabulate_basis(1, rule.points)
        self.phi_v = phi_v                                          # (nq, nbv)
        self.phi_p = phi_p
        # physical gradients per cell/point/basis
        self.gv = np.einsum("ckj,qbk->cqbj", Jinv, gref_v)
        self.gp = np.einsum("ckj,qbk->cqbj", Jinv, gref_p)
        # physical Laplacian of velocity basis (constant per cell for P2)
        href = href_v[0]                                            # (nbv, 3, 3)
        self.lap_v = np.einsum("cki,bkl,cli->cb", Jinv, href, Jinv)
        # physical quadrature points (for body forces)
        v0 = mesh.vertices[mesh.tets[:, 0]]
        self.xq = v0[:, None, :] + np.einsum("cij,qj->cqi", J, rule.points)

        self.dofs_v = self.V.scalar_dof_map
        self.dofs_p = self.Q.scalar_dof_map
        nbv, nbp = self.dofs_v.shape[1], self.dofs_p.shape[1]
        self._idx_vv = (
            np.broadcast_to(self.dofs_v[:, :, None], (mesh.n_tets, nbv, nbv)).ravel(),
            np.broadcast_to(self.dofs_v[:, None, :], (mesh.n_tets, nbv, nbv)).ravel(),
        )
        self._idx_vp = (
            np.broadcast_to(self.dofs_v[:, :, None], (mesh.n_tets, nbv, nbp)).ravel(),
            np.broadcast_to(self.dofs_p[:, None, :], (mesh.n_tets, nbv, nbp)).ravel(),
        )
        self._idx_pv = (
            np.broadcast_to(self.dofs_p[:, :, None], (mesh.n_tets, nbp, nbv)).ravel(),
            np.broadcast_to(self.dofs_v[:, None, :], (mesh.n_tets, nbp, nbv)).ravel(),
        )
        self._idx_pp = (
            np.broadcast_to(self.dofs_p[:, :, None], (mesh.n_tets, nbp, nbp)).ravel(),
            np.broadcast_to(self.dofs_p[:, None, :], (mesh.n_tets, nbp, nbp)).ravel(),
        )

    def _setup_boundary(self, degree):
        """Per-patch face quadrature: trace basis, weights, normals."""
        mesh = self.mesh
        frule = tri_quadrature(degree)
        x, y = frule.points[:, 0], frule.points[:, 1]
        bary_f = np.stack([1.0 - x - y, x, y], axis=1)              # (nqf, 3)

        # reference points inside the cell for each of the 4 local faces
        trace_phi = []
        for lf in range(4):
            bary_cell = np.zeros((len(frule), 4))
            for loc, vert in enumerate(TET_FACES[lf]):
                bary_cell[:, vert] = bary_f[:, loc]
            phi, _, _ = tabulate_basis(self.V.order, bary_cell[:, 1:])
            trace_phi.append(phi)
        trace_phi = np.stack(trace_phi)                             # (4, nqf, nbv)

        normals, areas = mesh.boundary_normals_areas()
        parents = mesh.face_parent

        self.patches = {}
        patch_keys = [("inlet", 0)] + [("outlet", k) for k in range(1, mesh.n_outlets + 1)]
        for kind, index in patch_keys:
            rows = mesh.faces_of(kind, index)
            if len(rows) == 0:
                continue
            cells = parents[rows, 0]
            lf = parents[rows, 1]
            phi = trace_phi[lf]                                     # (nf, nqf, nbv)
            w = frule.weights[None, :] * (2.0 * areas[rows])[:, None]
            self.patches[(kind, index)] = {
                "cells": cells,
                "phi": phi,
                "w": w,
                "normals": normals[rows],
            }

    def _coo(self, local, idx, shape):
        m = sp.coo_matrix((local.ravel(), idx), shape=shape)
        return m.tocsr()

    def _setup_constant_matrices(self):
        nsv, nsp = self.V.n_scalar, self.Q.n_scalar
        w = self.wdet
        gv, gp, phi_v = self.gv, self.gp, self.phi_v
        nu = self.params.kinematic_viscosity

        # scalar mass
        m_loc = np.einsum("cq,qi,qj->cij", w, phi_v, phi_v)
        self.M_s = self._coo(m_loc, self._idx_vv, (nsv, nsv))

        # pressure mass (Schur-complement surrogate for the block solver)
        mp_loc = np.einsum("cq,qm,qn->cmn", w, self.phi_p, self.phi_p)
        self.M_p = self._coo(mp_loc, self._idx_pp, (nsp, nsp))

        # constant viscous part: nu [ delta_ab grad.grad + outer ]
        k_loc = np.einsum("cq,cqid,cqjd->cij", w * nu, gv, gv)
        K0 = self._coo(k_loc, self._idx_vv, (nsv, nsv))
        A = sp.kron(K0, _E3, format="csr")
        o_loc = np.einsum("cq,cqja,cqib->cijab", w * nu, gv, gv)
        A = A + self._kron_blocks_vv(o_loc)
        self.A_visc = A.tocsr()

        # pressure couplings: D_a[i,m] = int d_a(phi_i) psi_m
        d_loc = np.einsum("cq,cqia,qm->cima", w, gv, self.phi_p)
        B_vp = self._kron_vp(-d_loc)
        B_pv = self._kron_pv(np.transpose(d_loc, (0, 2, 1, 3)))     # (c, m, i, a)
        self.B_vp = B_vp.tocsr()
        self.B_pv = B_pv.tocsr()

    # kron-style scatter helpers -------------------------------------------------

    def _kron_blocks_vv(self, local):
        """(c, i, j, 3, 3) -> (3 nsv, 3 nsv) with entries at (3 r + a, 3 c + b)."""
        nsv = self.V.n_scalar
        r, c = self._idx_vv
        n = local.shape[0] * local.shape[1] * local.shape[2]
        flat = local.reshape(n, 3, 3)
        rows = (3 * r)[:, None, None] + np.arange(3)[None, :, None]
        cols = (3 * c)[:, None, None] + np.arange(3)[None, None, :]
        rows = np.broadcast_to(rows, (n, 3, 3)).ravel()
        cols = np.broadcast_to(cols, (n, 3, 3)).ravel()
        return sp.coo_matrix((flat.ravel(), (rows, cols)), shape=(3 * nsv, 3 * nsv)).tocsr()

    def _kron_vp(self, local):
        """(c, i, m, 3) -> (3 nsv, nsp) with entries at (3 r + a, m)."""
        nsv, nsp = self.V.n_scalar, self.Q.n_scalar
        r, c = self._idx_vp
        n = len(r)
        flat = local.reshape(n, 3)
        rows = (3 * r)[:, None] + np.arange(3)[None, :]
        cols = np.broadcast_to(c[:, None], (n, 3))
        return sp.coo_matrix((flat.ravel(), (rows.ravel(), cols.ravel())),
                             shape=(3 * nsv, nsp)).tocsr()

    def _kron_pv(self, local):
        """(c, m, j, 3) -> (nsp, 3 nsv) with entries at (m, 3 c + b)."""
        nsv, nsp = self.V.n_scalar, self.Q.n_scalar
        r, c = self._idx_pv
        n = len(r)
        flat = local.reshape(n, 3)
        cols = (3 * c)[:, None] + np.arange(3)[None, :]
        rows = np.broadcast_to(r[:, None], (n, 3))
        return sp.coo_matrix((flat.ravel(), (rows.ravel(), cols.ravel())),
                             shape=(nsp, 3 * nsv)).tocsr()

    # Dirichlet ---------------------------------------------------------------------

    def _setup_dirichlet(self, patches):
        entries = []
        for p in patches:
            sdofs = self.V.boundary_scalar_dofs(p.kind, p.index)
            coords = self.V.dof_coords()[sdofs]
            vdofs = self.V.vector_dofs(sdofs)
            entries.append((vdofs, coords, p.provider))
        self._dirichlet = entries

    def dirichlet_values(self, t: float):
        """Essential values at time t: (mask, values) over the full vector."""
        g = np.zeros(self.n_total)
        mask = np.zeros(self.n_total, dtype=bool)
        for vdofs, coords, provider in self._dirichlet:
            if provider is None:
                vals = np.zeros((len(coords), 3))
            else:
                vals = np.asarray(provider(coords, t), dtype=np.float64)
                if vals.shape != (len(coords), 3):
                    raise ValidationError("Dirichlet provider returned a bad shape")
            g[vdofs] = vals.ravel()
            mask[vdofs] = True
        if self.pin_pressure:
            mask[self.n_vel] = True
            g[self.n_vel] = 0.0
        return mask, g

    # field evaluation at quadrature points -------------------------------------------

    def _vel_at_qp(self, coefs, gradients=False):
        cd = coefs.reshape(-1, 3)[self.dofs_v]                     # (nt, nbv, 3)
        vals = np.einsum("qb,cbk->cqk", self.phi_v, cd)
        if not gradients:
            return vals
        grads = np.einsum("cqbj,cbk->cqkj", self.gv, cd)
        return vals, grads

    def _pres_grad_at_qp(self, coefs):
        cd = coefs[self.dofs_p]                                    # (nt, nbp)
        return np.einsum("cqbj,cb->cqj", self.gp, cd)

    def _scalar_at_qp(self, nodal):
        cd = nodal[self.dofs_v]                                    # (nt, nbv, 3)
        return np.einsum("qb,cbk->cqk", self.phi_v, cd)

    # boundary integrals ----------------------------------------------------------------

    def patch_flux(self, coefs, kind, index=0) -> float:
        """Signed flux of the velocity field through one patch (outward > 0)."""
        data = self.patches.get((kind, index))
        if data is None:
            raise ValidationError(f"no faces on patch {kind}:{index}")
        cd = coefs.reshape(-1, 3)[self.dofs_v[data["cells"]]]      # (nf, nbv, 3)
        u = np.einsum("fqb,fbk->fqk", data["phi"], cd)
        un = np.einsum("fqk,fk->fq", u, data["normals"])
        return float((data["w"] * un).sum())

    def outflows(self, coefs) -> np.ndarray:
        """Per-outlet fluxes Q_k (outward positive)."""
        return np.array(
            [self.patch_flux(coefs, "outlet", k) for k in range(1, self.mesh.n_outlets + 1)]
        )

    def influx(self, coefs) -> float:
        """Inlet flow rate (positive into the domain)."""
        return -self.patch_flux(coefs, "inlet", 0)

    # main assembly -----------------------------------------------------------------------

    def assemble(self, x_hat, dt=None, scheme="steady", history=None, t=0.0,
                 resistances=None) -> SparseSystem:
        """Assemble the linearized system frozen at the iterate x_hat.

        x_hat: full coefficient vector (velocity then pressure).  scheme is
        'steady', 'euler' or 'bdf2'; transient schemes need dt and history =
        (u_n,) or (u_n, u_nm1).  resistances overrides the stored per-outlet
        values (used by the estimation loop).
        """
        if scheme not in ("steady", "euler", "bdf2"):
            raise ConfigError(f"unknown scheme {scheme!r}")
        transient = scheme != "steady"
        if transient and (dt is None or dt <= 0):
            raise ConfigError("transient schemes need dt > 0")
        if scheme == "euler":
            alpha = 1.0
            H = history[0].copy()
        elif scheme == "bdf2":
            if history is None or len(history) < 2 or history[1] is None:
                raise ConfigError("bdf2 needs two history states")
            alpha = 1.5
            H = 2.0 * history[0] - 0.5 * history[1]
        else:
            alpha, H = 0.0, None

        if resistances is None:
            resistances = self.resistances
        resistances = np.asarray(resistances, dtype=np.float64)

        nsv, nsp = self.V.n_scalar, self.Q.n_scalar
        nu = self.params.kinematic_viscosity
        w = self.wdet
        u_hat = x_hat[: self.n_vel]
        p_hat = x_hat[self.n_vel :]

        uq, gq = self._vel_at_qp(u_hat, gradients=True)            # (nt,nq,3), (nt,nq,3,3)

        rhs = np.zeros(self.n_total)
        rhs_v_nodal = np.zeros((nsv, 3))
        rhs_p = np.zeros(nsp)

        # scalar (component-diagonal) velocity operator: mass + convection
        S_loc = 0.0
        if transient:
            S_loc = S_loc + (alpha / dt) * np.einsum("cq,qi,qj->cij", w, self.phi_v, self.phi_v)
        adv = np.einsum("cqk,cqbk->cqb", uq, self.gv) if self.convective else None
        if self.convective:
            S_loc = S_loc + np.einsum("cq,qi,cqj->cij", w, self.phi_v, adv)
        S_scalar = (
            self._coo(S_loc, self._idx_vv, (nsv, nsv))
            if np.ndim(S_loc)
            else sp.csr_matrix((nsv, nsv))
        )

        # backflow penalty and outlet loads
        q_out = np.zeros(self.mesh.n_outlets)
        for k in range(1, self.mesh.n_outlets + 1):
            data = self.patches[("outlet", k)]
            cells = data["cells"]
            cd = u_hat.reshape(-1, 3)[self.dofs_v[cells]]
            uf = np.einsum("fqb,fbk->fqk", data["phi"], cd)
            un = np.einsum("fqk,fk->fq", uf, data["normals"])
            q_out[k - 1] = float((data["w"] * un).sum())

            if self.beta != 0.0:
                wneg = -0.5 * self.beta * np.minimum(un, 0.0) * data["w"]
                bf_loc = np.einsum("fq,fqi,fqj->fij", wneg, data["phi"], data["phi"])
                dof_f = self.dofs_v[cells]
                nb = dof_f.shape[1]
                rows = np.broadcast_to(dof_f[:, :, None], bf_loc.shape).ravel()
                cols = np.broadcast_to(dof_f[:, None, :], bf_loc.shape).ravel()
                S_scalar = S_scalar + sp.coo_matrix(
                    (bf_loc.ravel(), (rows, cols)), shape=(nsv, nsv)
                ).tocsr()

            # resistive load: rhs -= R_k Q_k int n_a phi_i
            load = np.einsum("fq,fqi,fa->fia", data["w"], data["phi"], data["normals"])
            contrib = -resistances[k - 1] * q_out[k - 1] * load
            np.add.at(rhs_v_nodal, self.dofs_v[cells].ravel(),
                      contrib.reshape(-1, 3))

        A_vv = self.A_visc + sp.kron(S_scalar, _E3, format="csr")
        A_vp = self.B_vp
        A_pv = self.B_pv
        A_pp = None

        # eddy viscosity (factor-2 strain form, like the molecular term)
        if isinstance(self.model, turb.LES_MODELS):
            sample = turb.GradientSample(
                grad=gq,
                h_shortest=self.h_short[:, None],
                widths=self.widths[:, None, :],
            )
            nut = turb.eddy_viscosity(self.model, sample)          # (nt, nq)
            wt = w * nut
            k_loc = np.einsum("cq,cqid,cqjd->cij", wt, self.gv, self.gv)
            A_vv = A_vv + sp.kron(
                self._coo(k_loc, self._idx_vv, (nsv, nsv)), _E3, format="csr"
            )
            o_loc = np.einsum("cq,cqja,cqib->cijab", wt, self.gv, self.gv)
            A_vv = A_vv + self._kron_blocks_vv(o_loc)

        # mass history and body force loads
        Hq = None
        if transient:
            Hn = H.reshape(-1, 3)
            rhs_v_nodal += (self.M_s @ Hn) / dt
        fq = None
        if self.body_force is not None:
            fq = np.asarray(
                self.body_force(self.xq.reshape(-1, 3), t), dtype=np.float64
            ).reshape(self.mesh.n_tets, len(self.rule), 3)
            floc = np.einsum("cq,qi,cqk->cik", w, self.phi_v, fq)
            np.add.at(rhs_v_nodal, self.dofs_v.ravel(), floc.reshape(-1, 3))

        # residual-based multiscale terms
        if isinstance(self.model, turb.RBVMS):
            dt_eff = dt if transient else np.inf
            if self.tau_override is not None:
                tau_m = np.broadcast_to(
                    np.float64(self.tau_override[0]), w.shape
                )
                tau_c = np.broadcast_to(np.float64(self.tau_override[1]), w.shape)
            elif isinstance(self.model.pair_mode, turb.InfSup):
                geom = _GeomBundle(None, None, self.h_short)
                tm, tc = turb.rbvms_tau(self.model, None, geom, dt_eff, nu)
                tau_m = np.broadcast_to(tm[:, None], w.shape)
                tau_c = np.broadcast_to(tc[:, None], w.shape)
            else:
                geom = _GeomBundle(
                    self.cell_metric[:, None, :, :], self.cell_g[:, None, :], None
                )
                tau_m, tau_c = turb.rbvms_tau(self.model, uq, geom, dt_eff, nu)

            wtm = w * tau_m
            # stuff_j: implicit momentum-residual action on a trial function
            stuff = np.zeros((self.mesh.n_tets, len(self.rule), self.phi_v.shape[1]))
            if transient:
                stuff += (alpha / dt) * self.phi_v[None, :, :]
            if self.convective:
                stuff += adv
            stuff -= nu * self.lap_v[:, None, :]

            # explicit residual part (history + body force), and the frozen
            # residual of the iterate itself
            expl = 0.0
            if transient:
                Hq = self._scalar_at_qp(H.reshape(-1, 3))
                expl = Hq / dt
            if fq is not None:
                expl = expl + fq

            r_hat = np.einsum("cqkj,cqj->cqk", gq, uq) if self.convective else 0.0
            r_hat = r_hat + self._pres_grad_at_qp(p_hat)
            lap_u = np.einsum("cb,cbk->ck", self.lap_v, u_hat.reshape(-1, 3)[self.dofs_v])
            r_hat = r_hat - nu * lap_u[:, None, :]
            if transient:
                un_q = self._scalar_at_qp(history[0].reshape(-1, 3))
                r_hat = r_hat + (uq - un_q) / dt
            if fq is not None:
                r_hat = r_hat - fq

            # T1: tau_m (r_m, (uhat.grad) v)
            if self.convective:
                t1 = np.einsum("cq,cqi,cqj->cij", wtm, adv, stuff)
                A_vv = A_vv + sp.kron(
                    self._coo(t1, self._idx_vv, (nsv, nsv)), _E3, format="csr"
                )
                g1 = np.einsum("cq,cqi,cqma->cima", wtm, adv, self.gp)
                A_vp = A_vp + self._kron_vp(g1)
                if np.ndim(expl):
                    np.add.at(
                        rhs_v_nodal,
                        self.dofs_v.ravel(),
                        np.einsum("cq,cqi,cqa->cia", wtm, adv, expl).reshape(-1, 3),
                    )

            # T2: tau_m (r_m, grad q)
            h_b = np.einsum("cq,cqnb,cqj->cnjb", wtm, self.gp, stuff)
            A_pv = A_pv + self._kron_pv(h_b)
            pp = np.einsum("cq,cqnd,cqmd->cnm", wtm, self.gp, self.gp)
            A_pp = self._coo(pp, self._idx_pp, (nsp, nsp))
            if np.ndim(expl):
                np.add.at(
                    rhs_p,
                    self.dofs_p.ravel(),
                    np.einsum("cq,cqnd,cqd->cn", wtm, self.gp, expl).ravel(),
                )

            # grad-div: tau_c (div u, div v)
            gd = np.einsum("cq,cqia,cqjb->cijab", w * tau_c, self.gv, self.gv)
            A_vv = A_vv + self._kron_blocks_vv(gd)

            # T4 + T5: tau_m (r_m, (grad v)^T uhat) - tau_m^2 (rhat x r_m, grad v)
            wvec = tau_m[..., None] * (uq - tau_m[..., None] * r_hat)
            w45 = np.einsum("cq,cqa,cqib,cqj->cijab", w, wvec, self.gv, stuff)
            A_vv = A_vv + self._kron_blocks_vv(w45)
            v45 = np.einsum("cq,cqa,cqid,cqmd->cima", w, wvec, self.gv, self.gp)
            A_vp = A_vp + self._kron_vp(v45)
            if np.ndim(expl):
                np.add.at(
                    rhs_v_nodal,
                    self.dofs_v.ravel(),
                    np.einsum("cq,cqa,cqid,cqd->cia", w, wvec, self.gv, expl).reshape(-1, 3),
                )

        rhs[: self.n_vel] = rhs_v_nodal.ravel()
        rhs[self.n_vel :] = rhs_p

        if A_pp is None:
            A_pp = sp.csr_matrix((nsp, nsp))
        A = sp.bmat([[A_vv, A_vp], [A_pv, A_pp]], format="csr")

        pp_final = A_pp.copy()
        pp_final.eliminate_zeros()
        meta = {
            "scheme": scheme,
            "q_out_frozen": q_out,
            "pp_nnz": int(pp_final.nnz),
            "pressure_mass": self.M_p,
            "viscosity": nu,
        }

        mask, g = self.dirichlet_values(t)
        A, rhs = _eliminate_dirichlet(A, rhs, mask, g)
        return SparseSystem(A, rhs, self.n_vel, self.n_pressure, mask, meta)


@dataclass
class _GeomBundle:
    metric: object
    g: object
    h_shortest: object


def _eliminate_dirichlet(A, rhs, mask, g):
    """Row/column elimination with symmetric right-hand-side correction."""
    rhs = rhs - A @ g
    keep = (~mask).astype(np.float64)
    Dk = sp.diags(keep)
    A = Dk @ A @ Dk + sp.diags(mask.astype(np.float64))
    rhs = rhs * keep + g
    return A.tocsr(), rhs


# -- nonlinear and time loops ----------------------------------------------------------

@dataclass
class PicardResult:
    x: np.ndarray
    iterations: int
    residual: float


def picard_solve(assemble_fn, x0, tol=1e-10, max_iter=25, linear=None) -> PicardResult:
    """Fixed-point sweep: assemble at the iterate, solve, repeat.

    Convergence is declared on the Euclidean norm of the nonlinear residual
    b(x) - A(x) x.  The count reports linear solves performed.
    """
    linear = dict(linear or {})
    x = np.asarray(x0, dtype=np.float64).copy()
    for it in range(max_iter + 1):
        system = assemble_fn(x)
        resid = float(np.linalg.norm(system.rhs - system.matrix @ x))
        if not math.isfinite(resid):
            raise NumericalError("non-finite nonlinear residual")
        if resid <= tol:
            return PicardResult(x, it, resid)
        if it == max_iter:
            break
        x = solve_linear(system, **linear)
    raise NumericalError(
        f"nonlinear iteration did not reach tol={tol:g} in {max_iter} solves "
        f"(last residual {resid:.3e})"
    )


@dataclass
class FlowState:
    """Solver state after a step: coefficient vectors and history."""

    u: np.ndarray
    p: np.ndarray
    u_prev: np.ndarray | None
    t: float
    step: int

    def x(self):
        return np.concatenate([self.u, self.p])


@dataclass
class TransientResult:
    state: FlowState
    times: np.ndarray
    picard_iterations: list


def steady_solve(assembler: Assembler, t=0.0, picard_tol=1e-10, picard_max=50,
                 linear=None, x0=None) -> PicardResult:
    """Stationary solution with the same linearization as a time step."""

    def assemble_fn(x):
        return assembler.assemble(x, scheme="steady", t=t)

    if x0 is None:
        x0 = np.zeros(assembler.n_total)
    return picard_solve(assemble_fn, x0, tol=picard_tol, max_iter=picard_max,
                        linear=linear)


def run_transient(assembler: Assembler, dt, n_steps, *, t0=0.0, initial=None,
                  picard_tol=1e-10, picard_max=25, linear=None,
                  observers=(), observe_every=1, controller=None,
                  checkpoint_path=None, checkpoint_every=None,
                  resume_from=None) -> TransientResult:
    """March n_steps of size dt; first step implicit Euler, then BDF-2.

    controller (optional) supplies per-step outlet resistances and receives
    measured fluxes after each step (the estimation loop hooks in here).
    observers are callables (assembler, state) invoked every observe_every
    steps and at the final step.
    """
    if dt <= 0 or n_steps < 1:
        raise ConfigError("need dt > 0 and n_steps >= 1")

    if resume_from is not None:
        state, saved_resist = load_checkpoint(resume_from, assembler, dt)
        if saved_resist is not None and controller is None:
            assembler.resistances = saved_resist
    elif initial is not None:
        state = initial
    else:
        mask, g = assembler.dirichlet_values(t0)
        u0 = np.zeros(assembler.n_vel)
        u0[mask[: assembler.n_vel]] = g[: assembler.n_vel][mask[: assembler.n_vel]]
        state = FlowState(u0, np.zeros(assembler.n_pressure), None, t0, 0)

    times = []
    iterations = []
    for k in range(n_steps):
        t_new = state.t + dt
        if state.u_prev is None:
            scheme, history = "euler", (state.u,)
        else:
            scheme, history = "bdf2", (state.u, state.u_prev)
        resist = controller.resistances() if controller is not None else None

        def assemble_fn(x):
            return assembler.assemble(
                x, dt=dt, scheme=scheme, history=history, t=t_new,
                resistances=resist,
            )

        res = picard_solve(assemble_fn, state.x(), tol=picard_tol,
                           max_iter=picard_max, linear=linear)
        u_new = res.x[: assembler.n_vel]
        p_new = res.x[assembler.n_vel :]
        state = FlowState(u_new, p_new, state.u, t_new, state.step + 1)
        times.append(t_new)
        iterations.append(res.iterations)

        if controller is not None:
            controller.after_step(
                t_new, dt, assembler.outflows(u_new), assembler.influx(u_new)
            )
        last = k == n_steps - 1
        if observers and (state.step % observe_every == 0 or last):
            for obs in observers:
                obs(assembler, state)
        if checkpoint_path and checkpoint_every and (
            state.step % checkpoint_every == 0 or last
        ):
            save_checkpoint(
                checkpoint_path, assembler, state, dt,
                resistances=resist if resist is not None else assembler.resistances,
            )

    return TransientResult(state, np.asarray(times), iterations)


# -- checkpoints -------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, assembler: Assembler, state: FlowState, dt,
                    resistances=None):
    """Self-describing binary container with solver state and history."""
    np.savez(
        path,
        version=CHECKPOINT_VERSION,
        mesh_hash=assembler.mesh.content_hash(),
        pair=assembler.pair,
        dt=float(dt),
        t=state.t,
        step=state.step,
        u=state.u,
        p=state.p,
        has_prev=state.u_prev is not None,
        u_prev=state.u_prev if state.u_prev is not None else np.zeros(0),
        resistances=(
            resistances if resistances is not None else assembler.resistances
        ),
    )


def load_checkpoint(path, assembler: Assembler, dt=None):
    """Restore a FlowState; verifies mesh identity, element pair and step size."""
    with np.load(path, allow_pickle=False) as data:
        if int(data["version"]) != CHECKPOINT_VERSION:
            raise ValidationError("unsupported checkpoint version")
        if str(data["mesh_hash"]) != assembler.mesh.content_hash():
            raise ValidationError("checkpoint belongs to a different mesh")
        if str(data["pair"]) != assembler.pair:
            raise ValidationError("checkpoint element pair mismatch")
        if dt is not None and abs(float(data["dt"]) - dt) > 1e-15 * max(dt, 1.0):
            raise ValidationError("checkpoint step size mismatch")
        u_prev = data["u_prev"] if bool(data["has_prev"]) else None
        state = FlowState(
            u=data["u"].copy(),
            p=data["p"].copy(),
            u_prev=u_prev.copy() if u_prev is not None else None,
            t=float(data["t"]),
            step=int(data["step"]),
        )
        resist = data["resistances"].copy()
    return state, resist
