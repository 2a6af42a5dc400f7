"""Labeled tetrahedral meshes: text I/O, validation, refinement and cell geometry.

The on-disk format is line oriented::

    tetmesh 1
    # comment
    vertices <N>
    x y z                 (N lines, meters)
    tets <M>
    v0 v1 v2 v3           (M lines, 0-based vertex indices)
    faces <B>
    a b c <label>         (B lines, label one of inlet | wall | outlet:<k>)

Every boundary triangle must be listed exactly once with a label; interior
faces must not be listed.  Outlet indices are 1-based and contiguous.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateCellError,
    MeshFormatError,
    MeshLabelError,
    MeshTopologyError,
)

# Local edges of the reference tetrahedron (lexicographic pairs).
TET_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)], dtype=np.int64)

# Local face opposite each vertex, ordered so the normal points outward on a
# positively oriented tet.
TET_FACES = np.array([(1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1)], dtype=np.int64)

_VOLUME_REL_TOL = 1e-12


@dataclass(frozen=True)
class PatchLabel:
    """Boundary patch identifier: kind in {inlet, wall, outlet}, 1-based outlet index."""

    kind: str
    index: int = 0

    def __post_init__(self):
        if self.kind not in ("inlet", "wall", "outlet"):
            raise MeshLabelError(f"unknown patch kind {self.kind!r}")
        if self.kind == "outlet" and self.index < 1:
            raise MeshLabelError("outlet index must be >= 1")
        if self.kind != "outlet" and self.index != 0:
            raise MeshLabelError(f"{self.kind} patch takes no index")

    @staticmethod
    def parse(text: str) -> "PatchLabel":
        text = text.strip()
        if text == "inlet":
            return PatchLabel("inlet")
        if text == "wall":
            return PatchLabel("wall")
        if text.startswith("outlet:"):
            try:
                idx = int(text.split(":", 1)[1])
            except ValueError:
                raise MeshLabelError(f"bad outlet index in label {text!r}") from None
            return PatchLabel("outlet", idx)
        raise MeshLabelError(f"unknown boundary label {text!r}")

    def __str__(self):
        if self.kind == "outlet":
            return f"outlet:{self.index}"
        return self.kind


@dataclass
class MeshStats:
    """Aggregate mesh quality/size figures."""

    n_vertices: int
    n_tets: int
    n_boundary_faces: int
    volume_total: float
    volume_max: float
    volume_mean: float
    boundary_height_max: float       # tallest tet over any boundary face
    boundary_height_mean: float      # area-weighted mean of those heights
    patch_face_counts: dict = field(default_factory=dict)
    patch_areas: dict = field(default_factory=dict)


@dataclass
class ElementGeometry:
    """Affine geometry of one tetrahedron.

    ``jacobian`` maps reference to physical coordinates (columns are edge
    vectors from vertex 0); ``metric`` is the inverse-map Gram matrix
    J^{-T} J^{-1} restricted as G_ij = sum_k Jinv[k,i] Jinv[k,j]; ``g`` its
    row-sum vector.  ``h_shortest`` is the shortest edge, ``widths`` the
    coordinate-direction extents.
    """

    cell: int
    jacobian: np.ndarray
    jacobian_inv: np.ndarray
    volume: float
    metric: np.ndarray
    g: np.ndarray
    h_shortest: float
    widths: np.ndarray


class Mesh:
    """Validated tetrahedral mesh with labeled boundary patches."""

    def __init__(self, vertices, tets, boundary_faces, face_labels):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.tets = np.ascontiguousarray(tets, dtype=np.int64)
        self.boundary_faces = np.ascontiguousarray(boundary_faces, dtype=np.int64)
        if len(face_labels) != len(self.boundary_faces):
            raise MeshLabelError("one label per boundary face required")
        self.face_labels = list(face_labels)
        self._edges = None
        self._tet_edge_ids = None
        self._face_parent = None
        self._geom = None
        self._validate()

    # -- basic properties ---------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def n_outlets(self) -> int:
        idx = [lb.index for lb in self.face_labels if lb.kind == "outlet"]
        return max(idx) if idx else 0

    def faces_of(self, kind: str, index: int = 0) -> np.ndarray:
        """Boundary-face row indices whose label matches kind (and outlet index)."""
        sel = [
            i
            for i, lb in enumerate(self.face_labels)
            if lb.kind == kind and (kind != "outlet" or lb.index == index)
        ]
        return np.asarray(sel, dtype=np.int64)

    @property
    def edges(self) -> np.ndarray:
        """Unique vertex pairs (sorted) over all tets, shape (n_edges, 2)."""
        if self._edges is None:
            self._build_edges()
        return self._edges

    @property
    def tet_edge_ids(self) -> np.ndarray:
        """Per-tet global edge ids in TET_EDGES order, shape (n_tets, 6)."""
        if self._tet_edge_ids is None:
            self._build_edges()
        return self._tet_edge_ids

    @property
    def face_parent(self) -> np.ndarray:
        """(cell, local_face) pair for each boundary face, shape (n_faces, 2)."""
        if self._face_parent is None:
            raise MeshTopologyError("boundary parents not resolved")
        return self._face_parent

    def _build_edges(self):
        pairs = self.tets[:, TET_EDGES]            # (nt, 6, 2)
        pairs = np.sort(pairs, axis=2).reshape(-1, 2)
        self._edges, inv = np.unique(pairs, axis=0, return_inverse=True)
        self._tet_edge_ids = inv.reshape(self.n_tets, 6)

    def content_hash(self) -> str:
        """Stable identity of geometry, topology and labels."""
        h = hashlib.sha256()
        h.update(self.vertices.tobytes())
        h.update(self.tets.tobytes())
        h.update(self.boundary_faces.tobytes())
        h.update("|".join(str(lb) for lb in self.face_labels).encode())
        return h.hexdigest()

    # -- validation ----------------------------------------------------------

    def _validate(self):
        nv, nt = self.n_vertices, self.n_tets
        if nv < 4 or nt < 1:
            raise MeshTopologyError("mesh needs at least one tetrahedron")
        if self.tets.min(initial=0) < 0 or self.tets.max(initial=-1) >= nv:
            raise MeshFormatError("tet vertex index out of range")
        if self.boundary_faces.size and (
            self.boundary_faces.min() < 0 or self.boundary_faces.max() >= nv
        ):
            raise MeshFormatError("face vertex index out of range")
        for t in range(nt):
            if len(set(self.tets[t])) != 4:
                raise MeshTopologyError(f"tet {t} has repeated vertices")

        used = np.zeros(nv, dtype=bool)
        used[self.tets.ravel()] = True
        if not used.all():
            raise MeshTopologyError(
                f"{int((~used).sum())} vertices are referenced by no tet"
            )

        # Orient all tets positively; reject (numerically) flat cells.
        v = self.vertices
        e = v[self.tets[:, 1:]] - v[self.tets[:, :1]]
        det = np.linalg.det(e)
        edge_len = np.linalg.norm(
            v[self.tets[:, TET_EDGES[:, 1]]] - v[self.tets[:, TET_EDGES[:, 0]]], axis=2
        )
        scale = edge_len.max(axis=1) ** 3
        flat = np.abs(det) <= _VOLUME_REL_TOL * scale
        if flat.any():
            raise DegenerateCellError(
                f"{int(flat.sum())} degenerate (zero-volume) cells, first at "
                f"index {int(np.nonzero(flat)[0][0])}"
            )
        neg = det < 0
        if neg.any():
            self.tets[neg] = self.tets[neg][:, [0, 1, 3, 2]]

        self._check_boundary()

    def _check_boundary(self):
        # Count occurrences of every face triple over all tets.
        tris = self.tets[:, TET_FACES]                      # (nt, 4, 3)
        keys = np.sort(tris.reshape(-1, 3), axis=1)
        uniq, inv, counts = np.unique(
            keys, axis=0, return_inverse=True, return_counts=True
        )
        if counts.max(initial=0) > 2:
            raise MeshTopologyError("non-manifold face shared by more than two tets")

        boundary_mask = counts == 1
        labeled = (
            np.sort(self.boundary_faces, axis=1)
            if self.boundary_faces.size
            else np.empty((0, 3), dtype=np.int64)
        )

        # Map each labeled face to the unique-face table; reject unknown faces.
        uniq_view = {tuple(row): i for i, row in enumerate(uniq)}
        label_ids = np.empty(len(labeled), dtype=np.int64)
        for k, row in enumerate(labeled):
            i = uniq_view.get(tuple(row))
            if i is None:
                raise MeshTopologyError(f"labeled face {tuple(row)} is not a face of any tet")
            if not boundary_mask[i]:
                raise MeshTopologyError(f"labeled face {tuple(row)} is interior")
            label_ids[k] = i
        if len(set(label_ids.tolist())) != len(label_ids):
            raise MeshTopologyError("a boundary face is labeled more than once")
        missing = int(boundary_mask.sum()) - len(label_ids)
        if missing:
            raise MeshTopologyError(f"{missing} boundary faces carry no label")

        kinds = {lb.kind for lb in self.face_labels}
        for need in ("inlet", "wall", "outlet"):
            if need not in kinds:
                raise MeshLabelError(f"missing {need} patch")
        outlet_idx = sorted({lb.index for lb in self.face_labels if lb.kind == "outlet"})
        if outlet_idx != list(range(1, len(outlet_idx) + 1)):
            raise MeshLabelError(
                f"outlet indices must be contiguous from 1, got {outlet_idx}"
            )

        # Resolve the parent tet of each boundary face and canonicalize the
        # stored vertex order to the parent's outward orientation.
        first_owner = np.full(len(uniq), -1, dtype=np.int64)
        local_face = np.full(len(uniq), -1, dtype=np.int64)
        flat_inv = inv.reshape(self.n_tets, 4)
        for t in range(self.n_tets):
            for lf in range(4):
                u = flat_inv[t, lf]
                if first_owner[u] < 0:
                    first_owner[u] = t
                    local_face[u] = lf
        parents = np.stack([first_owner[label_ids], local_face[label_ids]], axis=1)
        self._face_parent = parents
        for k in range(len(labeled)):
            t, lf = parents[k]
            self.boundary_faces[k] = self.tets[t, TET_FACES[lf]]

    # -- geometry cache -------------------------------------------------------

    def geometry_arrays(self):
        """Vectorized per-cell geometry: (J, Jinv, volume, h_shortest, widths)."""
        if self._geom is None:
            v = self.vertices
            J = np.transpose(v[self.tets[:, 1:]] - v[self.tets[:, :1]], (0, 2, 1))
            det = np.linalg.det(J)
            Jinv = np.linalg.inv(J)
            vol = det / 6.0
            edge_vec = v[self.tets[:, TET_EDGES[:, 1]]] - v[self.tets[:, TET_EDGES[:, 0]]]
            h_short = np.linalg.norm(edge_vec, axis=2).min(axis=1)
            pts = v[self.tets]                       # (nt, 4, 3)
            widths = pts.max(axis=1) - pts.min(axis=1)
            self._geom = (J, Jinv, vol, h_short, widths)
        return self._geom

    def boundary_normals_areas(self):
        """Outward unit normals and areas of all boundary faces."""
        p = self.vertices[self.boundary_faces]
        cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        area = 0.5 * np.linalg.norm(cr, axis=1)
        n = cr / np.linalg.norm(cr, axis=1)[:, None]
        return n, area


def element_geometry(mesh: Mesh, cell: int) -> ElementGeometry:
    """Affine map data for one cell; the metric is symmetric positive definite."""
    J, Jinv, vol, h_short, widths = mesh.geometry_arrays()
    Ji = Jinv[cell]
    G = Ji.T @ Ji
    g = Ji.sum(axis=0)
    return ElementGeometry(
        cell=cell,
        jacobian=J[cell].copy(),
        jacobian_inv=Ji.copy(),
        volume=float(vol[cell]),
        metric=G,
        g=g,
        h_shortest=float(h_short[cell]),
        widths=widths[cell].copy(),
    )


def mesh_statistics(mesh: Mesh) -> MeshStats:
    """Counts, cell-volume extremes and boundary-layer heights.

    The height attached to a boundary face is the height of its single
    adjacent tetrahedron above that face (3 V / A).
    """
    _, _, vol, _, _ = mesh.geometry_arrays()
    normals, areas = mesh.boundary_normals_areas()
    parent_cells = mesh.face_parent[:, 0]
    heights = 3.0 * vol[parent_cells] / areas

    counts: dict = {}
    patch_area: dict = {}
    for k, lb in enumerate(mesh.face_labels):
        key = str(lb)
        counts[key] = counts.get(key, 0) + 1
        patch_area[key] = patch_area.get(key, 0.0) + float(areas[k])

    return MeshStats(
        n_vertices=mesh.n_vertices,
        n_tets=mesh.n_tets,
        n_boundary_faces=len(mesh.boundary_faces),
        volume_total=float(vol.sum()),
        volume_max=float(vol.max()),
        volume_mean=float(vol.mean()),
        boundary_height_max=float(heights.max()),
        boundary_height_mean=float((heights * areas).sum() / areas.sum()),
        patch_face_counts=counts,
        patch_areas=patch_area,
    )


# -- refinement ---------------------------------------------------------------

def uniform_refine(mesh: Mesh) -> Mesh:
    """Split every tet into 8 children via edge midpoints.

    The inner octahedron is cut along its shortest diagonal (ties broken by
    diagonal order), which keeps the refinement deterministic and the child
    shapes well conditioned.  Boundary faces inherit their parent labels.
    """
    v = mesh.vertices
    edges = mesh.edges
    mid = 0.5 * (v[edges[:, 0]] + v[edges[:, 1]])
    new_vertices = np.vstack([v, mid])
    nv = mesh.n_vertices

    eid = mesh.tet_edge_ids + nv                     # global midpoint vertex ids
    t = mesh.tets
    # Local midpoint ids in TET_EDGES order: m01 m02 m03 m12 m13 m23
    m01, m02, m03, m12, m13, m23 = (eid[:, k] for k in range(6))

    corners = [
        np.stack([t[:, 0], m01, m02, m03], axis=1),
        np.stack([t[:, 1], m01, m12, m13], axis=1),
        np.stack([t[:, 2], m02, m12, m23], axis=1),
        np.stack([t[:, 3], m03, m13, m23], axis=1),
    ]

    # Octahedron diagonals: (m01,m23), (m02,m13), (m03,m12); pick the shortest.
    diag_ends = np.stack(
        [np.stack([m01, m23], 1), np.stack([m02, m13], 1), np.stack([m03, m12], 1)], axis=1
    )                                                # (nt, 3, 2)
    dvec = new_vertices[diag_ends[:, :, 0]] - new_vertices[diag_ends[:, :, 1]]
    choice = np.argmin(np.linalg.norm(dvec, axis=2), axis=1)

    # Ring of the remaining four midpoints around each diagonal, in edge order.
    rings = np.empty((mesh.n_tets, 3, 4), dtype=np.int64)
    rings[:, 0] = np.stack([m02, m03, m13, m12], axis=1)
    rings[:, 1] = np.stack([m01, m03, m23, m12], axis=1)
    rings[:, 2] = np.stack([m01, m02, m23, m13], axis=1)

    rows = np.arange(mesh.n_tets)
    d0 = diag_ends[rows, choice, 0]
    d1 = diag_ends[rows, choice, 1]
    ring = rings[rows, choice]
    octs = [
        np.stack([d0, d1, ring[:, k], ring[:, (k + 1) % 4]], axis=1) for k in range(4)
    ]

    new_tets = np.concatenate(corners + octs, axis=0)

    # Subdivide labeled boundary faces; midpoints come from the edge table.
    edge_lookup = {}
    for i, (a, b) in enumerate(edges):
        edge_lookup[(int(a), int(b))] = nv + i

    def emid(a, b):
        key = (int(min(a, b)), int(max(a, b)))
        return edge_lookup[key]

    child_faces = []
    child_labels = []
    for k, (a, b, c) in enumerate(mesh.boundary_faces):
        lab = mesh.face_labels[k]
        ab, bc, ca = emid(a, b), emid(b, c), emid(c, a)
        for tri in ((a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)):
            child_faces.append(tri)
            child_labels.append(lab)

    return Mesh(new_vertices, new_tets, np.asarray(child_faces, dtype=np.int64), child_labels)


# -- text I/O ------------------------------------------------------------------

def load_mesh(path) -> Mesh:
    """Read and validate a mesh file (format documented in the module docstring)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = fh.readlines()
    except OSError as exc:
        raise MeshFormatError(f"cannot read mesh file {path}: {exc}") from None

    lines = []
    for num, text in enumerate(raw, start=1):
        body = text.split("#", 1)[0].strip()
        if body:
            lines.append((num, body))

    cursor = 0

    def take(what):
        nonlocal cursor
        if cursor >= len(lines):
            raise MeshFormatError(f"unexpected end of file while reading {what}")
        item = lines[cursor]
        cursor += 1
        return item

    num, header = take("header")
    parts = header.split()
    if len(parts) != 2 or parts[0] != "tetmesh" or parts[1] != "1":
        raise MeshFormatError(f"line {num}: expected header 'tetmesh 1', got {header!r}")

    def block(keyword, width, cast):
        num, head = take(f"'{keyword}' count")
        parts = head.split()
        if len(parts) != 2 or parts[0] != keyword:
            raise MeshFormatError(f"line {num}: expected '{keyword} <count>', got {head!r}")
        try:
            count = int(parts[1])
        except ValueError:
            raise MeshFormatError(f"line {num}: bad count {parts[1]!r}") from None
        rows, extras = [], []
        for _ in range(count):
            num, body = take(f"{keyword} entry")
            cols = body.split()
            if len(cols) < width:
                raise MeshFormatError(f"line {num}: expected {width} fields, got {len(cols)}")
            try:
                rows.append([cast(x) for x in cols[:width]])
            except ValueError:
                raise MeshFormatError(f"line {num}: bad {keyword} entry {body!r}") from None
            extras.append((num, cols[width:]))
        return rows, extras

    verts, extra = block("vertices", 3, float)
    for num, rest in extra:
        if rest:
            raise MeshFormatError(f"line {num}: trailing fields on vertex line")
    tets, extra = block("tets", 4, int)
    for num, rest in extra:
        if rest:
            raise MeshFormatError(f"line {num}: trailing fields on tet line")
    faces, extra = block("faces", 3, int)
    labels = []
    for num, rest in extra:
        if len(rest) != 1:
            raise MeshFormatError(f"line {num}: face line needs exactly one label")
        try:
            labels.append(PatchLabel.parse(rest[0]))
        except MeshLabelError as exc:
            raise MeshFormatError(f"line {num}: {exc}") from None
    if cursor != len(lines):
        num, body = lines[cursor]
        raise MeshFormatError(f"line {num}: unexpected trailing content {body!r}")

    return Mesh(
        np.asarray(verts, dtype=np.float64),
        np.asarray(tets, dtype=np.int64),
        np.asarray(faces, dtype=np.int64).reshape(-1, 3),
        labels,
    )


def save_mesh(mesh: Mesh, path):
    """Write a mesh in the text format accepted by load_mesh."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("tetmesh 1\n")
        fh.write(f"vertices {mesh.n_vertices}\n")
        for x, y, z in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")
        fh.write(f"tets {mesh.n_tets}\n")
        for a, b, c, d in mesh.tets:
            fh.write(f"{a} {b} {c} {d}\n")
        fh.write(f"faces {len(mesh.boundary_faces)}\n")
        for k, (a, b, c) in enumerate(mesh.boundary_faces):
            fh.write(f"{a} {b} {c} {mesh.face_labels[k]}\n")


# -- point location -------------------------------------------------------------

class CellLocator:
    """Uniform-bin accelerator for point-in-cell queries."""

    def __init__(self, mesh: Mesh, bins_per_axis: int | None = None):
        self.mesh = mesh
        pts = mesh.vertices[mesh.tets]               # (nt, 4, 3)
        self.lo = pts.min(axis=1)
        self.hi = pts.max(axis=1)
        dom_lo = self.lo.min(axis=0)
        dom_hi = self.hi.max(axis=0)
        if bins_per_axis is None:
            bins_per_axis = max(2, int(round(mesh.n_tets ** (1.0 / 3.0))))
        self.nb = bins_per_axis
        span = np.where(dom_hi > dom_lo, dom_hi - dom_lo, 1.0)
        self.origin = dom_lo
        self.scale = self.nb / span
        self.buckets: dict = {}
        lo_idx = self._bin_index(self.lo)
        hi_idx = self._bin_index(self.hi)
        for c in range(mesh.n_tets):
            for i in range(lo_idx[c, 0], hi_idx[c, 0] + 1):
                for j in range(lo_idx[c, 1], hi_idx[c, 1] + 1):
                    for k in range(lo_idx[c, 2], hi_idx[c, 2] + 1):
                        self.buckets.setdefault((i, j, k), []).append(c)
        J, Jinv, _, _, _ = mesh.geometry_arrays()
        self._jinv = Jinv
        self._x0 = mesh.vertices[mesh.tets[:, 0]]

    def _bin_index(self, pts):
        idx = np.floor((pts - self.origin) * self.scale).astype(np.int64)
        return np.clip(idx, 0, self.nb - 1)

    def locate(self, points, tol: float = 1e-10):
        """Map points to (cell, barycentric) pairs; cell = -1 when outside."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        cells = np.full(len(points), -1, dtype=np.int64)
        bary = np.zeros((len(points), 4))
        bins = self._bin_index(points)
        for p, pt in enumerate(points):
            cand = self.buckets.get(tuple(bins[p]), ())
            best, best_b, best_m = -1, None, -np.inf
            for c in cand:
                ref = self._jinv[c] @ (pt - self._x0[c])
                b = np.array([1.0 - ref.sum(), ref[0], ref[1], ref[2]])
                m = b.min()
                if m >= -tol and m > best_m:
                    best, best_b, best_m = c, b, m
            if best >= 0:
                cells[p] = best
                bary[p] = best_b
        return cells, bary
