"""Hemodynamic quantities of interest computed from flow snapshots.

Cross-sections carry a planar Cartesian quadrature grid (spacing ``res``,
equal weights res^2) clipped to the vessel lumen; their area, perimeter and
hydraulic radius come from the polygon where the plane cuts the boundary
surface.  On these sections we evaluate mean pressures, maximum velocities,
the secondary flow degree (SFD, in-plane to through-plane flow ratio) and the
normal flow displacement (NFD, offset of the flow centroid in hydraulic
radii).  Wall patches provide shear-stress vectors split into forward and
lateral components plus the oscillatory shear index (OSI).  Time-averaging
conventions: SFD averages as the ratio of cumulative integrals, NFD weighted
by the through-plane flow, OSI from trapezoidal integrals of the stress
vector; samples with vanishing through-flow are flagged undefined (NaN) and
excluded from averages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .fem import FEFunction, evaluate_many, tabulate_basis, tet_quadrature
from .meshing import CellLocator, Mesh, TET_FACES

MMHG_TO_PA = 133.322
SEVERE_NARROWING_MMHG = 20.0      # reference line for pressure-drop reports

FLOW_EPS_FACTOR = 1e-12           # undefined-flow threshold: factor * (U A)


# -- planar sections ----------------------------------------------------------------

@dataclass
class CrossSection:
    """Planar quadrature grid plus the polygon metrics of the cut."""

    origin: np.ndarray            # point on the plane (user input)
    normal: np.ndarray            # unit normal
    res: float
    points: np.ndarray            # (m, 3) grid points inside the lumen
    weights: np.ndarray           # (m,) equal weights res^2
    area: float                   # polygon area
    perimeter: float
    r_hydraulic: float
    x_s: np.ndarray               # geometric center of the cut
    cells: np.ndarray | None      # containing cell per grid point
    ref_points: np.ndarray | None
    loop: np.ndarray | None = None  # intersection polygon (k, 3)

    @property
    def n_points(self) -> int:
        return len(self.points)

    def located(self) -> bool:
        return self.cells is not None

    def flow_threshold(self) -> float:
        """Below this, through-plane flow integrals count as undefined."""
        return FLOW_EPS_FACTOR * float(self.weights.sum())


def _plane_basis(normal):
    n = np.asarray(normal, dtype=np.float64)
    norm = np.linalg.norm(n)
    if norm == 0:
        raise ValidationError("section normal must be nonzero")
    n = n / norm
    axis = np.argmin(np.abs(n))
    a = np.zeros(3)
    a[axis] = 1.0
    e1 = a - (a @ n) * n
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return n, e1, e2


def _plane_segments(mesh: Mesh, d):
    """Intersection segments of the plane with the boundary triangles.

    Crossing points are interpolated on canonically ordered edges (and snapped
    to vertices when the parameter is exactly 0 or 1) so shared endpoints are
    bitwise identical across neighboring faces, which lets the loop chaining
    match them without tolerances.
    """
    verts = mesh.vertices
    segments = []
    for tri in mesh.boundary_faces:
        pts = []
        for i in range(3):
            a, b = int(tri[i]), int(tri[(i + 1) % 3])
            if a > b:
                a, b = b, a
            da, db = d[a], d[b]
            if (da >= 0.0) == (db >= 0.0):
                continue
            t = da / (da - db)
            if t == 0.0:
                p = verts[a].copy()
            elif t == 1.0:
                p = verts[b].copy()
            else:
                p = verts[a] + t * (verts[b] - verts[a])
            pts.append(p)
        if len(pts) == 2:
            segments.append((pts[0], pts[1]))
    return segments


def _chain_loops(segments):
    """Assemble closed loops from unordered segments (bitwise endpoint keys)."""
    by_end = {}
    for idx, (p0, p1) in enumerate(segments):
        by_end.setdefault(p0.tobytes(), []).append(idx)
        by_end.setdefault(p1.tobytes(), []).append(idx)

    used = np.zeros(len(segments), dtype=bool)
    loops = []
    for start in range(len(segments)):
        if used[start]:
            continue
        used[start] = True
        loop = [segments[start][0], segments[start][1]]
        closed = False
        while True:
            key = loop[-1].tobytes()
            nxt = [i for i in by_end.get(key, []) if not used[i]]
            if not nxt:
                closed = loop[-1].tobytes() == loop[0].tobytes()
                break
            i = nxt[0]
            used[i] = True
            p0, p1 = segments[i]
            loop.append(p1 if p0.tobytes() == key else p0)
        if closed and len(loop) > 3:
            loops.append(np.asarray(loop[:-1]))
    if not loops:
        raise ValidationError("section plane does not intersect the boundary")
    return loops


def _polygon_metrics(poly2):
    x, y = poly2[:, 0], poly2[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area2 = cross.sum()
    if area2 == 0.0:
        raise ValidationError("degenerate section polygon")
    area = 0.5 * area2
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    perim = float(np.sqrt((xn - x) ** 2 + (yn - y) ** 2).sum())
    return abs(area), perim, np.array([cx, cy])


def _points_in_polygon(pts2, poly2):
    """Even-odd crossing-number membership test, vectorized over points."""
    x = pts2[:, 0][:, None]
    y = pts2[:, 1][:, None]
    x0, y0 = poly2[None, :, 0], poly2[None, :, 1]
    x1 = np.roll(poly2[:, 0], -1)[None, :]
    y1 = np.roll(poly2[:, 1], -1)[None, :]
    straddle = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xs = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    hits = straddle & (x < xs)
    return hits.sum(axis=1) % 2 == 1


def build_cross_section(mesh: Mesh, origin, normal, res: float = 1e-3) -> CrossSection:
    """Cut the mesh with a plane and build the section's quadrature grid.

    The grid is centered at the cut polygon's centroid with spacing res;
    points are kept when a point-in-tet query locates them in the mesh.  The
    loop enclosing the (projected) origin is the one measured, so the origin
    must lie inside the vessel of interest.
    """
    if res <= 0:
        raise ValidationError("grid resolution must be positive")
    origin = np.asarray(origin, dtype=np.float64)
    n, e1, e2 = _plane_basis(normal)

    d = (mesh.vertices - origin) @ n
    loops = _chain_loops(_plane_segments(mesh, d))

    chosen = None
    for loop in loops:
        rel = loop - origin
        poly2 = np.stack([rel @ e1, rel @ e2], axis=1)
        if _points_in_polygon(np.zeros((1, 2)), poly2)[0]:
            chosen = (loop, poly2)
            break
    if chosen is None:
        raise ValidationError(
            "no intersection loop encloses the section origin; move the origin "
            "inside the vessel"
        )
    loop3, poly2 = chosen
    area, perim, c2 = _polygon_metrics(poly2)
    x_s = origin + c2[0] * e1 + c2[1] * e2

    lo = poly2.min(axis=0)
    hi = poly2.max(axis=0)
    i0 = math.ceil((lo[0] - c2[0]) / res)
    i1 = math.floor((hi[0] - c2[0]) / res)
    j0 = math.ceil((lo[1] - c2[1]) / res)
    j1 = math.floor((hi[1] - c2[1]) / res)
    ii, jj = np.meshgrid(
        np.arange(i0, i1 + 1), np.arange(j0, j1 + 1), indexing="ij"
    )
    uv = np.stack(
        [c2[0] + ii.ravel() * res, c2[1] + jj.ravel() * res], axis=1
    )
    pts3 = origin + uv[:, 0, None] * e1 + uv[:, 1, None] * e2

    cells, bary = CellLocator(mesh).locate(pts3)
    keep = cells >= 0
    if not keep.any():
        raise ValidationError("empty section: no grid point lies inside the mesh")
    pts3 = pts3[keep]
    cells = cells[keep]
    ref = bary[keep][:, 1:]

    return CrossSection(
        origin=origin, normal=n, res=res,
        points=pts3, weights=np.full(len(pts3), res * res),
        area=area, perimeter=perim, r_hydraulic=area / perim,
        x_s=x_s, cells=cells, ref_points=ref, loop=loop3,
    )


def circular_section(origin, normal, radius, res: float = 1e-3,
                     mesh: Mesh | None = None) -> CrossSection:
    """Analytic disc section: exact area pi r^2, perimeter 2 pi r, r_H = r/2.

    Useful as an oracle and for meshes whose faceted wall underestimates the
    true radius.  With a mesh given, grid points are located for evaluation
    (points falling outside the faceted boundary are dropped).
    """
    if radius <= 0 or res <= 0:
        raise ValidationError("radius and resolution must be positive")
    origin = np.asarray(origin, dtype=np.float64)
    n, e1, e2 = _plane_basis(normal)
    k = math.floor(radius / res)
    ii, jj = np.meshgrid(np.arange(-k, k + 1), np.arange(-k, k + 1), indexing="ij")
    uv = np.stack([ii.ravel() * res, jj.ravel() * res], axis=1)
    uv = uv[(uv**2).sum(axis=1) <= radius * radius]
    pts3 = origin + uv[:, 0, None] * e1 + uv[:, 1, None] * e2

    cells = ref = None
    if mesh is not None:
        located, bary = CellLocator(mesh).locate(pts3)
        keep = located >= 0
        if not keep.any():
            raise ValidationError("empty section: no grid point inside the mesh")
        pts3 = pts3[keep]
        cells = located[keep]
        ref = bary[keep][:, 1:]

    return CrossSection(
        origin=origin, normal=n, res=res,
        points=pts3, weights=np.full(len(pts3), res * res),
        area=math.pi * radius**2, perimeter=2.0 * math.pi * radius,
        r_hydraulic=radius / 2.0, x_s=origin, cells=cells, ref_points=ref,
    )


def _require_located(section: CrossSection):
    if not section.located():
        raise ValidationError(
            "section has no located grid points; build it with a mesh"
        )


def section_values(f: FEFunction, section: CrossSection):
    """Evaluate a finite-element field at the section's grid points."""
    _require_located(section)
    return evaluate_many(f, section.cells, section.ref_points, derivatives=False)


# -- scalar section quantities -------------------------------------------------------

def mean_pressure(p_h: FEFunction, section: CrossSection) -> float:
    """Grid-quadrature average of the pressure over the section."""
    vals = section_values(p_h, section)
    w = section.weights
    return float((w * vals).sum() / w.sum())


def pressure_difference(p_h: FEFunction, downstream: CrossSection,
                        upstream: CrossSection) -> float:
    """P_downstream - P_upstream of the section-averaged pressures."""
    return mean_pressure(p_h, downstream) - mean_pressure(p_h, upstream)


# -- velocity-based section quantities -------------------------------------------------

@dataclass
class SFDSample:
    """Secondary flow degree with its two flow integrals (NaN when undefined)."""

    value: float
    tangential: float      # int |u - (u.n) n| dmu
    normal: float          # int |u.n| dmu


@dataclass
class NFDSample:
    """Normal flow displacement with its flow weight (NaN when undefined)."""

    value: float
    weight: float          # int |u.n| dmu, the time-average weight


def sfd(u_h: FEFunction, section: CrossSection, detail: bool = False):
    """Ratio of in-plane to through-plane mean velocity magnitude."""
    u = section_values(u_h, section)
    w = section.weights
    un = u @ section.normal
    tang = u - un[:, None] * section.normal[None, :]
    num = float((w * np.linalg.norm(tang, axis=1)).sum())
    den = float((w * np.abs(un)).sum())
    value = num / den if den > section.flow_threshold() else math.nan
    if detail:
        return SFDSample(value, num, den)
    return value


def nfd(u_h: FEFunction, section: CrossSection, detail: bool = False):
    """Offset of the |through-flow|-weighted centroid, in hydraulic radii."""
    u = section_values(u_h, section)
    w = section.weights * np.abs(u @ section.normal)
    total = float(w.sum())
    if total > section.flow_threshold():
        x_n = (w[:, None] * section.points).sum(axis=0) / total
        value = float(np.linalg.norm(x_n - section.x_s) / section.r_hydraulic)
    else:
        value = math.nan
    if detail:
        return NFDSample(value, total)
    return value


def max_velocity(u_h: FEFunction, region) -> float:
    """Largest |u| over a section grid or a wedge's nodes+quadrature samples."""
    if isinstance(region, CrossSection):
        u = section_values(u_h, region)
        return float(np.linalg.norm(u, axis=1).max())
    if isinstance(region, WedgeRegion):
        cells = region.cells
        if len(cells) == 0:
            raise ValidationError("empty wedge region")
        space = u_h.space
        sdofs = np.unique(space.scalar_dof_map[cells])
        best = float(np.linalg.norm(u_h.nodal()[sdofs], axis=1).max())
        rule = tet_quadrature(2)
        rep = np.repeat(cells, len(rule))
        pts = np.tile(rule.points, (len(cells), 1))
        vals = evaluate_many(u_h, rep, pts, derivatives=False)
        return max(best, float(np.linalg.norm(vals, axis=1).max()))
    raise ValidationError(f"unsupported region {type(region).__name__}")


# -- wedges -------------------------------------------------------------------------

@dataclass
class WedgeRegion:
    """Cells whose centroids lie between two section planes."""

    cells: np.ndarray
    lower: tuple
    upper: tuple


def wedge_between(mesh: Mesh, lower: CrossSection, upper: CrossSection) -> WedgeRegion:
    """Cells between two sections; both normals must point downstream."""
    cent = mesh.vertices[mesh.tets].mean(axis=1)
    d_lo = (cent - lower.origin) @ lower.normal
    d_hi = (cent - upper.origin) @ upper.normal
    cells = np.nonzero((d_lo >= 0.0) & (d_hi < 0.0))[0]
    return WedgeRegion(cells, (lower.origin, lower.normal),
                       (upper.origin, upper.normal))


# -- wall shear stress ----------------------------------------------------------------

@dataclass
class WSSPatch:
    """Wall faces with a constant forward direction for stress decomposition."""

    faces: np.ndarray
    forward: np.ndarray
    centroids: np.ndarray
    areas: np.ndarray
    normals: np.ndarray
    cells: np.ndarray
    ref_points: np.ndarray


def wall_patch(mesh: Mesh, forward, predicate=None) -> WSSPatch:
    """Collect wall faces (optionally filtered by a centroid predicate)."""
    v = np.asarray(forward, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValidationError("forward vector must be nonzero")
    v = v / norm

    rows = mesh.faces_of("wall")
    if len(rows) == 0:
        raise ValidationError("mesh has no wall faces")
    tri = mesh.boundary_faces[rows]
    centroids = mesh.vertices[tri].mean(axis=1)
    if predicate is not None:
        keep = np.asarray([bool(predicate(c)) for c in centroids])
        rows, tri, centroids = rows[keep], tri[keep], centroids[keep]
        if len(rows) == 0:
            raise ValidationError("patch predicate selected no wall faces")

    normals, areas = mesh.boundary_normals_areas()
    parents = mesh.face_parent[rows]

    ref_by_local = np.zeros((4, 3))
    for lf in range(4):
        bary = np.zeros(4)
        bary[list(TET_FACES[lf])] = 1.0 / 3.0
        ref_by_local[lf] = bary[1:]

    return WSSPatch(
        faces=rows, forward=v, centroids=centroids,
        areas=areas[rows], normals=normals[rows],
        cells=parents[:, 0], ref_points=ref_by_local[parents[:, 1]],
    )


@dataclass
class WSSResult:
    """Per-face shear vectors and their area-weighted patch averages."""

    tau: np.ndarray            # (nf, 3)
    magnitude: np.ndarray      # |tau| per face
    forward: np.ndarray        # tau . v per face
    lateral: np.ndarray        # |tau . (n x v)/|n x v|| per face
    mean_magnitude: float
    mean_forward: float
    mean_lateral: float


def wall_shear_stress(u_h: FEFunction, patch: WSSPatch, mu: float) -> WSSResult:
    """tau_w = mu * d(u_tangential)/dn at face centroids, one-sided gradient.

    The velocity gradient comes from the single cell adjacent to each face;
    the stress vector is the tangential projection of mu (grad u) n.
    """
    _, grads, _ = evaluate_many(u_h, patch.cells, patch.ref_points)
    n = patch.normals
    dn = np.einsum("fij,fj->fi", grads, n)
    tau = mu * (dn - np.einsum("fi,fi->f", dn, n)[:, None] * n)

    mag = np.linalg.norm(tau, axis=1)
    fwd = tau @ patch.forward
    w_dir = np.cross(n, patch.forward[None, :])
    w_len = np.linalg.norm(w_dir, axis=1)
    safe = w_len > 1e-12
    lat = np.zeros(len(tau))
    lat[safe] = np.abs(
        np.einsum("fi,fi->f", tau[safe], w_dir[safe] / w_len[safe, None])
    )

    a = patch.areas
    total = a.sum()
    return WSSResult(
        tau=tau, magnitude=mag, forward=fwd, lateral=lat,
        mean_magnitude=float((a * mag).sum() / total),
        mean_forward=float((a * fwd).sum() / total),
        mean_lateral=float((a * lat).sum() / total),
    )


def oscillatory_shear_index(times, tau_series) -> np.ndarray:
    """OSI = (1 - |int tau dt| / int |tau| dt) / 2 per face, in [0, 1/2].

    tau_series: (n_times, n_faces, 3).  Faces with (numerically) zero
    cumulative stress get OSI = 0.
    """
    times = np.asarray(times, dtype=np.float64)
    tau = np.asarray(tau_series, dtype=np.float64)
    if tau.ndim != 3 or len(times) != len(tau) or len(times) < 2:
        raise ValidationError("need a (n_times, n_faces, 3) series, n_times >= 2")
    if np.any(np.diff(times) <= 0):
        raise ValidationError("time stamps must be strictly increasing")
    mean_vec = np.trapezoid(tau, times, axis=0)
    mean_abs = np.trapezoid(np.linalg.norm(tau, axis=2), times, axis=0)
    osi = np.zeros(tau.shape[1])
    act = mean_abs > 0.0
    osi[act] = 0.5 * (1.0 - np.linalg.norm(mean_vec[act], axis=1) / mean_abs[act])
    # round-off guard only; the integral inequality bounds OSI in [0, 1/2]
    return np.clip(osi, 0.0, 0.5)


# -- global quantities ---------------------------------------------------------------

def _volume_samples(u_h: FEFunction, degree: int):
    space = u_h.space
    rule = tet_quadrature(degree)
    _, _, vol, _, _ = space.mesh.geometry_arrays()
    wdet = rule.weights[None, :] * (6.0 * vol)[:, None]
    phi, _, _ = tabulate_basis(space.order, rule.points)
    uq = np.einsum("qb,cbk->cqk", phi, u_h.nodal()[space.scalar_dof_map])
    return wdet, uq


def kinetic_energy(u_h: FEFunction, degree: int | None = None) -> float:
    """E = 1/2 int |u|^2 dx (exact quadrature for the element order)."""
    if degree is None:
        degree = 2 * u_h.space.order
    wdet, uq = _volume_samples(u_h, degree)
    return float(0.5 * (wdet * (uq**2).sum(axis=2)).sum())


def mean_velocity_magnitude(u_h: FEFunction, degree: int = 6) -> float:
    """(1/|Omega|) int |u| dx; |u| is not polynomial, hence the high degree."""
    wdet, uq = _volume_samples(u_h, degree)
    return float((wdet * np.linalg.norm(uq, axis=2)).sum() / wdet.sum())


# -- time series ---------------------------------------------------------------------

class QoITimeSeries:
    """Append-only store of per-step QoI samples with monotone time stamps."""

    def __init__(self):
        self.times = []
        self._data = {}

    def append(self, t: float, values: dict):
        if self.times and t <= self.times[-1]:
            raise ValidationError("time stamps must be strictly increasing")
        if self._data and set(values) != set(self._data):
            raise ValidationError("inconsistent QoI names across samples")
        self.times.append(float(t))
        for name, v in values.items():
            self._data.setdefault(name, []).append(v)

    @property
    def names(self):
        return sorted(self._data)

    def times_array(self) -> np.ndarray:
        return np.asarray(self.times)

    def array(self, name: str) -> np.ndarray:
        if name not in self._data:
            raise ValidationError(f"unknown QoI series {name!r}")
        return np.asarray(self._data[name])


def time_average(times, values) -> float:
    """Plain trapezoidal mean over the sampled interval."""
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if len(times) < 2:
        raise ValidationError("need at least two samples")
    return float(np.trapezoid(values, times) / (times[-1] - times[0]))


def sfd_time_average(times, tangential, normal) -> float:
    """Cumulative tangential flow over cumulative through-plane flow.

    This is the ratio of time-integrated numerators/denominators, not the
    mean of instantaneous ratios; undefined samples (NaN) are dropped.
    """
    times = np.asarray(times, dtype=np.float64)
    num = np.asarray(tangential, dtype=np.float64)
    den = np.asarray(normal, dtype=np.float64)
    ok = np.isfinite(num) & np.isfinite(den)
    if ok.sum() < 2:
        return math.nan
    total_den = np.trapezoid(den[ok], times[ok])
    if total_den <= 0:
        return math.nan
    return float(np.trapezoid(num[ok], times[ok]) / total_den)


def nfd_time_average(times, values, weights) -> float:
    """Through-flow-weighted trapezoidal mean of NFD samples."""
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    ok = np.isfinite(values) & np.isfinite(weights)
    if ok.sum() < 2:
        return math.nan
    wsum = np.trapezoid(weights[ok], times[ok])
    if wsum <= 0:
        return math.nan
    return float(np.trapezoid(values[ok] * weights[ok], times[ok]) / wsum)
