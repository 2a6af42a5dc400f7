"""Subgrid closure kernels and stabilization parameters.

All kernels are pure functions of local velocity-gradient data and cell
geometry; they accept batched arrays (leading dimensions broadcast) so the
assembler can evaluate them at every quadrature point at once.  The gradient
convention is grad[i, j] = d u_i / d x_j.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .fem import FEFunction, evaluate

GRAD_NORM_FLOOR = 1e-12


# -- model configuration types ---------------------------------------------------

@dataclass(frozen=True)
class Smagorinsky:
    """Eddy viscosity from the strain-rate magnitude; c around 0.01 or 0.005."""

    c: float = 0.01

    def __post_init__(self):
        if self.c <= 0:
            raise ValidationError("Smagorinsky constant must be positive")


@dataclass(frozen=True)
class Vreman:
    """Gradient-based eddy viscosity that vanishes on rank-one gradients."""

    c: float = 0.07

    def __post_init__(self):
        if self.c <= 0:
            raise ValidationError("Vreman constant must be positive")


@dataclass(frozen=True)
class SigmaModel:
    """Singular-value eddy viscosity; switches off in 2D/axisymmetric states."""

    c: float = 1.35

    def __post_init__(self):
        if self.c <= 0:
            raise ValidationError("sigma-model constant must be positive")


@dataclass(frozen=True)
class EqualOrder:
    """Stabilization for equal-order velocity/pressure pairs."""

    c_i: float = 1.0

    def __post_init__(self):
        if self.c_i <= 0:
            raise ValidationError("c_i must be positive")


@dataclass(frozen=True)
class InfSup:
    """Stabilization for inf-sup stable pairs."""

    delta0: float = 1.0
    delta1: float = 0.25

    def __post_init__(self):
        if self.delta0 <= 0:
            raise ValidationError("delta0 must be positive")
        if self.delta1 < 0:
            raise ValidationError("delta1 must be non-negative")


@dataclass(frozen=True)
class RBVMS:
    """Residual-based variational multiscale stabilization/closure."""

    pair_mode: object = field(default_factory=EqualOrder)

    def __post_init__(self):
        if not isinstance(self.pair_mode, (EqualOrder, InfSup)):
            raise ValidationError("pair_mode must be EqualOrder or InfSup")


LES_MODELS = (Smagorinsky, Vreman, SigmaModel)


@dataclass
class GradientSample:
    """Velocity gradient plus the local geometry a closure needs.

    grad: (..., 3, 3); h_shortest: (...,); widths: (..., 3).
    """

    grad: np.ndarray
    h_shortest: np.ndarray
    widths: np.ndarray


# -- kernels ----------------------------------------------------------------------

def frobenius(a) -> np.ndarray:
    return np.sqrt(np.einsum("...ij,...ij->...", a, a))


def singular_values_3x3(a) -> np.ndarray:
    """Singular values of (batched) 3x3 matrices, descending."""
    a = np.asarray(a, dtype=np.float64)
    return np.linalg.svd(a, compute_uv=False)


def smagorinsky_nu_t(sample: GradientSample, c: float = 0.01) -> np.ndarray:
    """nu_t = c (2 h)^2 ||sym(grad)||_F with filter width twice the shortest edge."""
    g = np.asarray(sample.grad, dtype=np.float64)
    d = 0.5 * (g + np.swapaxes(g, -1, -2))
    delta = 2.0 * np.asarray(sample.h_shortest, dtype=np.float64)
    return c * delta**2 * frobenius(d)


def vreman_nu_t(sample: GradientSample, c: float = 0.07) -> np.ndarray:
    """nu_t = c sqrt(B_beta) / ||grad||_F, zero where the gradient (or the
    second invariant B_beta) vanishes.

    beta_ij = sum_k widths_k^2 (d u_i/d x_k)(d u_j/d x_k); B_beta is the sum
    of its 2x2 principal minors, clipped at zero against roundoff.
    """
    g = np.asarray(sample.grad, dtype=np.float64)
    w2 = np.asarray(sample.widths, dtype=np.float64) ** 2
    beta = np.einsum("...ik,...k,...jk->...ij", g, w2, g)
    bb = (
        beta[..., 0, 0] * beta[..., 1, 1]
        - beta[..., 0, 1] ** 2
        + beta[..., 0, 0] * beta[..., 2, 2]
        - beta[..., 0, 2] ** 2
        + beta[..., 1, 1] * beta[..., 2, 2]
        - beta[..., 1, 2] ** 2
    )
    bb = np.maximum(bb, 0.0)
    norm = frobenius(g)
    safe = np.maximum(norm, GRAD_NORM_FLOOR)
    out = c * np.sqrt(bb) / safe
    return np.where(norm < GRAD_NORM_FLOOR, 0.0, out)


def sigma_invariant(grad) -> np.ndarray:
    """D_sigma = sigma3 (sigma1 - sigma2)(sigma2 - sigma3) / sigma1^2, with
    the zero-gradient guard; non-negative and at most sigma1 by construction."""
    s = singular_values_3x3(grad)
    s1, s2, s3 = s[..., 0], s[..., 1], s[..., 2]
    safe = np.maximum(s1, GRAD_NORM_FLOOR)
    out = s3 * (s1 - s2) * (s2 - s3) / safe**2
    return np.where(s1 < GRAD_NORM_FLOOR, 0.0, out)


def sigma_nu_t(sample: GradientSample, c: float = 1.35) -> np.ndarray:
    """nu_t = (c delta)^2 D_sigma with delta twice the shortest edge."""
    delta = 2.0 * np.asarray(sample.h_shortest, dtype=np.float64)
    return (c * delta) ** 2 * sigma_invariant(sample.grad)


def eddy_viscosity(model, sample: GradientSample) -> np.ndarray:
    """Dispatch to the configured closure kernel."""
    if isinstance(model, Smagorinsky):
        return smagorinsky_nu_t(sample, model.c)
    if isinstance(model, Vreman):
        return vreman_nu_t(sample, model.c)
    if isinstance(model, SigmaModel):
        return sigma_nu_t(sample, model.c)
    raise ValidationError(f"no eddy-viscosity kernel for model {model!r}")


def rbvms_tau(model: RBVMS, u, geom, dt, nu):
    """Stabilization pair (tau_m, tau_c).

    Equal-order: tau_m = (4/dt^2 + u.G u + c_i nu^2 G:G)^(-1/2) pointwise,
    tau_c = 1/(tau_m |g|^2).  Inf-sup: tau_m = max(delta0 h^2, dt/2) per cell,
    tau_c = delta1.  ``geom`` provides metric/g/h_shortest (batched arrays
    allowed); ``u`` broadcasts against tau_m's shape; dt=inf drops the
    transient term.
    """
    mode = model.pair_mode
    if isinstance(mode, InfSup):
        h = np.asarray(geom.h_shortest, dtype=np.float64)
        dt_term = 0.0 if np.isinf(dt) else 0.5 * dt
        tau_m = np.maximum(mode.delta0 * h**2, dt_term)
        tau_c = np.broadcast_to(np.float64(mode.delta1), tau_m.shape).copy()
        return tau_m, tau_c

    G = np.asarray(geom.metric, dtype=np.float64)
    g = np.asarray(geom.g, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    ugu = np.einsum("...i,...ij,...j->...", u, G, u)
    gg = np.einsum("...ij,...ij->...", G, G)
    spatial = ugu + mode.c_i * nu**2 * gg
    if np.isinf(dt):
        tau_m = 1.0 / np.sqrt(spatial)
    else:
        # factored form: exact tau_m = dt/2 when the spatial part vanishes
        half = 0.5 * dt
        tau_m = half / np.sqrt(1.0 + half**2 * spatial)
    g2 = np.einsum("...i,...i->...", g, g)
    tau_c = 1.0 / (tau_m * g2)
    return tau_m, tau_c


def momentum_residual(
    u_h: FEFunction,
    p_h: FEFunction,
    u_prev: FEFunction,
    u_hat: FEFunction,
    nu: float,
    dt: float,
    cell: int,
    point,
) -> np.ndarray:
    """Pointwise linearized momentum residual.

    r = (u - u_prev)/dt + (u_hat . grad) u + grad p - nu lap u, evaluated at a
    reference point of one cell.  The caller encodes its time-stepping weights
    in u_prev/dt (stationary problems pass u_prev = u_h).
    """
    uv, ug, uh = evaluate(u_h, cell, point)
    pv, pg, _ = evaluate(p_h, cell, point)
    upv = evaluate(u_prev, cell, point, derivatives=False)
    uhat = evaluate(u_hat, cell, point, derivatives=False)
    lap = np.einsum("ijj->i", uh)
    return (uv - upv) / dt + ug @ uhat + pg - nu * lap
