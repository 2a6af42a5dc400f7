"""Deterministic test geometries: channels, pipes, stenosed pipes, bifurcations.

All generators return validated meshes with inlet/wall/outlet labels derived
from face positions.  Conformity of the hex/prism subdivisions follows from
index-based diagonal rules, so neighboring cells always agree on shared
faces.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .meshing import Mesh, PatchLabel, TET_FACES

# Path tetrahedra of the unit cube along the (0,0,0)-(1,1,1) diagonal; each row
# is a corner sequence in (dx, dy, dz) offsets.
_CUBE_TETS = np.array(
    [
        [(0, 0, 0), (1, 0, 0), (1, 1, 0), (1, 1, 1)],
        [(0, 0, 0), (1, 0, 0), (1, 0, 1), (1, 1, 1)],
        [(0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 1, 1)],
        [(0, 0, 0), (0, 1, 0), (0, 1, 1), (1, 1, 1)],
        [(0, 0, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1)],
        [(0, 0, 0), (0, 0, 1), (0, 1, 1), (1, 1, 1)],
    ],
    dtype=np.int64,
)


def _mesh_from_cells(vertices, tets, classify):
    """Build a labeled Mesh: boundary faces are derived by counting and
    labeled through classify(centroid, outward_normal) -> PatchLabel."""
    vertices = np.asarray(vertices, dtype=np.float64)
    tets = np.asarray(tets, dtype=np.int64)

    # Orient positively first so TET_FACES triples face outward.
    e = vertices[tets[:, 1:]] - vertices[tets[:, :1]]
    neg = np.linalg.det(e) < 0
    tets = tets.copy()
    tets[neg] = tets[neg][:, [0, 1, 3, 2]]

    tris = tets[:, TET_FACES].reshape(-1, 3)
    keys = np.sort(tris, axis=1)
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    boundary = counts[inv] == 1
    btris = tris[boundary]

    p = vertices[btris]
    centroid = p.mean(axis=1)
    cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    normal = cr / np.linalg.norm(cr, axis=1)[:, None]
    labels = [classify(centroid[i], normal[i]) for i in range(len(btris))]
    return Mesh(vertices, tets, btris, labels)


def box_channel(nx=5, ny=5, nz=20, size=(0.01, 0.01, 0.04), origin=(0.0, 0.0, 0.0)):
    """Structured rectangular channel, 6 tets per hex cell, flow along z.

    Inlet at z = origin_z, outlet:1 at the far end, walls elsewhere.
    """
    nx, ny, nz = int(nx), int(ny), int(nz)
    lx, ly, lz = size
    ox, oy, oz = origin
    xs = ox + lx * np.arange(nx + 1) / nx
    ys = oy + ly * np.arange(ny + 1) / ny
    zs = oz + lz * np.arange(nz + 1) / nz
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    cells = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                for corners in _CUBE_TETS:
                    cells.append([vid(i + dx, j + dy, k + dz) for dx, dy, dz in corners])

    tol = 1e-9 * max(lx, ly, lz)

    def classify(c, n):
        if abs(c[2] - oz) < tol:
            return PatchLabel("inlet")
        if abs(c[2] - (oz + lz)) < tol:
            return PatchLabel("outlet", 1)
        return PatchLabel("wall")

    return _mesh_from_cells(verts, np.asarray(cells), classify)


def _disc_points_triangles(n_rings):
    """Unit-disc triangulation: ring j at radius j/n_rings with 8j points."""
    pts = [(0.0, 0.0)]
    ring_start = [0]
    for j in range(1, n_rings + 1):
        ring_start.append(len(pts))
        m = 8 * j
        ang = 2.0 * np.pi * np.arange(m) / m
        r = j / n_rings
        pts.extend(zip(r * np.cos(ang), r * np.sin(ang)))
    pts = np.asarray(pts)

    tris = []
    # center fan
    first = ring_start[1]
    for i in range(8):
        tris.append((0, first + i, first + (i + 1) % 8))
    # annuli: merge the two rings by angle
    for j in range(1, n_rings):
        na, nb = 8 * j, 8 * (j + 1)
        sa, sb = ring_start[j], ring_start[j + 1]
        i = k = 0
        while i < na or k < nb:
            a_next = 2.0 * np.pi * (i + 1) / na
            b_next = 2.0 * np.pi * (k + 1) / nb
            take_b = k < nb and (i >= na or b_next <= a_next)
            if take_b:
                tris.append((sa + i % na, sb + k % nb, sb + (k + 1) % nb))
                k += 1
            else:
                tris.append((sa + i % na, sb + k % nb, sa + (i + 1) % na))
                i += 1
    return pts, np.asarray(tris, dtype=np.int64)


def _split_prism(bot, top):
    """Three tets from a prism; diagonal choices depend only on global vertex
    ids, so adjacent prisms subdivide shared quads identically."""
    ids = list(bot) + list(top)
    m = int(np.argmin(ids))
    if m >= 3:
        bot, top = top, bot
        m -= 3
    if m == 1:
        bot = (bot[1], bot[2], bot[0])
        top = (top[1], top[2], top[0])
    elif m == 2:
        bot = (bot[2], bot[0], bot[1])
        top = (top[2], top[0], top[1])
    v0, v1, v2 = bot
    v3, v4, v5 = top
    if min(v1, v5) < min(v2, v4):
        return [(v0, v1, v2, v5), (v0, v1, v5, v4), (v0, v4, v5, v3)]
    return [(v0, v1, v2, v4), (v0, v4, v2, v5), (v0, v4, v5, v3)]


def pipe(radius=0.005, length=0.05, n_rings=3, n_layers=10, radius_profile=None):
    """Straight (or radially profiled) circular pipe along z.

    Rim vertices lie exactly on the circle.  ``radius_profile(z) -> scale``
    multiplies the cross-section radius, enabling stenosed variants.  Inlet at
    z = 0, outlet:1 at z = length.
    """
    n_rings, n_layers = int(n_rings), int(n_layers)
    if n_rings < 1 or n_layers < 1:
        raise ValidationError("pipe needs n_rings >= 1 and n_layers >= 1")
    disc, tris = _disc_points_triangles(n_rings)
    n_disc = len(disc)
    zs = length * np.arange(n_layers + 1) / n_layers

    verts = np.empty(((n_layers + 1) * n_disc, 3))
    for k, z in enumerate(zs):
        s = radius * (radius_profile(z) if radius_profile is not None else 1.0)
        verts[k * n_disc : (k + 1) * n_disc, 0:2] = disc * s
        verts[k * n_disc : (k + 1) * n_disc, 2] = z

    cells = []
    for k in range(n_layers):
        lo, hi = k * n_disc, (k + 1) * n_disc
        for a, b, c in tris:
            cells.extend(_split_prism((lo + a, lo + b, lo + c), (hi + a, hi + b, hi + c)))

    tol = 1e-9 * max(radius, length)

    def classify(c, n):
        if abs(c[2]) < tol:
            return PatchLabel("inlet")
        if abs(c[2] - length) < tol:
            return PatchLabel("outlet", 1)
        return PatchLabel("wall")

    return _mesh_from_cells(verts, np.asarray(cells), classify)


def stenosis(radius=0.005, length=0.05, n_rings=3, n_layers=16, depth=0.4,
             center=None, width=None):
    """Pipe with a smooth Gaussian constriction of relative ``depth`` at
    ``center`` (default mid-length); ``width`` is the Gaussian scale."""
    if not 0.0 < depth < 1.0:
        raise ValidationError("stenosis depth must lie in (0, 1)")
    z0 = 0.5 * length if center is None else center
    w = 0.12 * length if width is None else width

    def profile(z):
        return 1.0 - depth * float(np.exp(-(((z - z0) / w) ** 2)))

    return pipe(radius, length, n_rings, n_layers, radius_profile=profile)


def bifurcation(n_outlets=3, cell=0.004, n_sub=3, trunk_len=3, arm_len=2, ext_len=2):
    """Box-section manifold: a straight trunk meeting a perpendicular cross
    arm (outlet:1 at +y, outlet:2 at -y) and, for three outlets, a trunk
    extension beyond the junction (outlet:3 at +x).

    Built from unit cubes of edge ``cell`` subdivided ``n_sub`` times per
    edge, 6 tets per hex.  The two arms are symmetric about the trunk axis
    plane, which makes the two-outlet variant suitable for symmetry checks.
    """
    if n_outlets not in (2, 3):
        raise ValidationError("bifurcation supports 2 or 3 outlets")
    n = int(n_sub)
    h = cell / n

    boxes = [(0, trunk_len, 0, 1, 0, 1)]                       # trunk
    boxes.append((trunk_len, trunk_len + 1, -arm_len, 1 + arm_len, 0, 1))  # cross arm
    if n_outlets == 3:
        boxes.append((trunk_len + 1, trunk_len + 1 + ext_len, 0, 1, 0, 1))

    included = set()
    for x0, x1, y0, y1, z0, z1 in boxes:
        for i in range(x0 * n, x1 * n):
            for j in range(y0 * n, y1 * n):
                for k in range(z0 * n, z1 * n):
                    included.add((i, j, k))

    vid = {}
    verts = []

    def vertex(i, j, k):
        key = (i, j, k)
        if key not in vid:
            vid[key] = len(verts)
            verts.append((i * h, j * h, k * h))
        return vid[key]

    cells = []
    for (i, j, k) in sorted(included):
        for corners in _CUBE_TETS:
            cells.append([vertex(i + dx, j + dy, k + dz) for dx, dy, dz in corners])

    x_in = 0.0
    y_hi = (1 + arm_len) * cell
    y_lo = -arm_len * cell
    x_far = (trunk_len + 1 + ext_len) * cell
    tol = 1e-9 * cell

    def classify(c, nrm):
        if abs(c[0] - x_in) < tol:
            return PatchLabel("inlet")
        if abs(c[1] - y_hi) < tol:
            return PatchLabel("outlet", 1)
        if abs(c[1] - y_lo) < tol:
            return PatchLabel("outlet", 2)
        if n_outlets == 3 and abs(c[0] - x_far) < tol:
            return PatchLabel("outlet", 3)
        return PatchLabel("wall")

    return _mesh_from_cells(np.asarray(verts), np.asarray(cells), classify)


FIXTURE_KINDS = {
    "box-channel": box_channel,
    "pipe": pipe,
    "stenosis": stenosis,
    "bifurcation": bifurcation,
}


def make_fixture(kind: str, **params) -> Mesh:
    """Dispatch by fixture kind; unknown kinds or parameters raise ValidationError."""
    try:
        builder = FIXTURE_KINDS[kind]
    except KeyError:
        raise ValidationError(
            f"unknown fixture kind {kind!r}; choose from {sorted(FIXTURE_KINDS)}"
        ) from None
    try:
        return builder(**params)
    except TypeError as exc:
        raise ValidationError(f"bad fixture parameters for {kind!r}: {exc}") from None
