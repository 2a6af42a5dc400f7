"""Mesh container, file format, refinement, geometry and point location."""

import numpy as np
import pytest

from hemoflow.errors import (DegenerateCellError, MeshFormatError,
                             MeshLabelError, MeshTopologyError,
                             ValidationError)
from hemoflow.fixtures import box_channel, make_fixture, pipe, stenosis
from hemoflow.meshing import (CellLocator, Mesh, PatchLabel, element_geometry,
                              load_mesh, mesh_statistics, save_mesh,
                              uniform_refine)

REF_VERTS = np.array([
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
])


def labels_of(*texts):
    return [PatchLabel.parse(t) for t in texts]


def single_tet():
    faces = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])
    labels = labels_of("inlet", "wall", "wall", "outlet:1")
    return Mesh(REF_VERTS.copy(), np.array([[0, 1, 2, 3]]), faces, labels)


class TestElementGeometry:
    def test_reference_tet(self):
        geo = element_geometry(single_tet(), 0)
        assert geo.volume == pytest.approx(1.0 / 6.0, rel=1e-14)
        assert np.allclose(geo.jacobian, np.eye(3))
        # shortest edge of the reference tet is any unit axis edge
        assert geo.h_shortest == pytest.approx(1.0, rel=1e-14)
        assert np.allclose(geo.metric, np.eye(3))
        assert np.allclose(geo.widths, [1.0, 1.0, 1.0])

    def test_scaled_tet(self):
        m = single_tet()
        scaled = Mesh(m.vertices * 2.0, m.tets, m.boundary_faces,
                      list(m.face_labels))
        geo = element_geometry(scaled, 0)
        assert geo.volume == pytest.approx(8.0 / 6.0, rel=1e-14)
        assert geo.h_shortest == pytest.approx(2.0, rel=1e-14)
        # the inverse-map metric scales with 1/h^2
        assert np.allclose(geo.metric, np.eye(3) / 4.0)

    def test_degenerate_raises(self):
        m = single_tet()
        verts = m.vertices.copy()
        verts[3] = verts[0]  # coplanar (vanishing volume)
        with pytest.raises(DegenerateCellError):
            Mesh(verts, m.tets, m.boundary_faces, list(m.face_labels))


class TestMeshContainer:
    def test_counts_and_patches(self):
        m = box_channel(nx=2, ny=2, nz=2, size=(1.0, 1.0, 1.0))
        assert m.n_tets == 2 * 2 * 2 * 6
        assert m.n_vertices == 27
        assert m.n_outlets == 1
        st = mesh_statistics(m)
        assert st.volume_total == pytest.approx(1.0, rel=1e-12)
        assert st.patch_face_counts["inlet"] == 8
        assert st.patch_face_counts["outlet:1"] == 8
        assert st.patch_areas["inlet"] == pytest.approx(1.0, rel=1e-12)

    def test_boundary_normals_outward_and_closed(self):
        m = box_channel(nx=2, ny=2, nz=3)
        normals, areas = m.boundary_normals_areas()
        # closed surface: area-weighted normals sum to zero
        assert np.allclose((normals * areas[:, None]).sum(axis=0), 0.0,
                           atol=1e-15)
        centers = m.vertices[m.boundary_faces].mean(axis=1)
        box_c = m.vertices.mean(axis=0)
        out = np.einsum("fi,fi->f", normals, centers - box_c)
        assert np.all(out > 0.0)

    def test_duplicate_vertex_in_tet_rejected(self):
        m = single_tet()
        with pytest.raises(MeshTopologyError):
            Mesh(m.vertices, np.array([[0, 1, 2, 2]]),
                 m.boundary_faces, list(m.face_labels))

    def test_out_of_range_index_rejected(self):
        m = single_tet()
        with pytest.raises(MeshFormatError):
            Mesh(m.vertices, np.array([[0, 1, 2, 9]]),
                 m.boundary_faces, list(m.face_labels))

    def test_bad_label_rejected(self):
        with pytest.raises(MeshLabelError):
            PatchLabel.parse("outflow")
        with pytest.raises(MeshLabelError):
            PatchLabel.parse("outlet:x")
        with pytest.raises(MeshLabelError):
            PatchLabel("outlet", 0)

    def test_outlet_numbering_must_be_contiguous(self):
        m = single_tet()
        with pytest.raises(MeshLabelError):
            Mesh(m.vertices, m.tets, m.boundary_faces,
                 labels_of("inlet", "wall", "wall", "outlet:2"))

    def test_content_hash_tracks_geometry(self):
        a = single_tet()
        b = single_tet()
        assert a.content_hash() == b.content_hash()
        b.vertices[0, 0] += 1e-9
        assert a.content_hash() != b.content_hash()


class TestFileFormat:
    def test_round_trip(self, tmp_path, pipe_small):
        path = tmp_path / "pipe.tm"
        save_mesh(pipe_small, path)
        back = load_mesh(path)
        assert np.array_equal(back.vertices, pipe_small.vertices)
        assert np.array_equal(back.tets, pipe_small.tets)
        assert np.array_equal(back.boundary_faces, pipe_small.boundary_faces)
        assert list(back.face_labels) == list(pipe_small.face_labels)
        assert back.content_hash() == pipe_small.content_hash()

    def test_comments_and_blank_lines_ignored(self, tmp_path):
        path = tmp_path / "m.tm"
        save_mesh(single_tet(), path)
        text = path.read_text()
        decorated = "# generated\n\n" + text.replace(
            "tets 1", "tets 1  # one cell")
        path.write_text(decorated)
        m = load_mesh(path)
        assert m.n_tets == 1

    def test_missing_file(self, tmp_path):
        with pytest.raises(MeshFormatError):
            load_mesh(tmp_path / "nope.tm")

    def test_bad_header(self, tmp_path):
        p = tmp_path / "m.tm"
        p.write_text("trimesh 1\n")
        with pytest.raises(MeshFormatError, match="header"):
            load_mesh(p)

    def test_error_reports_line_number(self, tmp_path):
        p = tmp_path / "m.tm"
        p.write_text("tetmesh 1\nvertices 1\n0 0 oops\n")
        with pytest.raises(MeshFormatError, match="line 3"):
            load_mesh(p)

    def test_truncated_file(self, tmp_path):
        p = tmp_path / "m.tm"
        p.write_text("tetmesh 1\nvertices 4\n0 0 0\n1 0 0\n")
        with pytest.raises(MeshFormatError):
            load_mesh(p)


class TestRefinement:
    def test_counts_volume_and_labels(self):
        m = box_channel(nx=1, ny=1, nz=2)
        r = uniform_refine(m)
        assert r.n_tets == 8 * m.n_tets
        assert len(r.boundary_faces) == 4 * len(m.boundary_faces)
        s0, s1 = mesh_statistics(m), mesh_statistics(r)
        assert s1.volume_total == pytest.approx(s0.volume_total, rel=1e-12)
        for label, area in s0.patch_areas.items():
            assert s1.patch_areas[label] == pytest.approx(area, rel=1e-12)


    def test_refined_pipe_keeps_outlets(self, pipe_small):
        r = uniform_refine(pipe_small)
        assert r.n_outlets == pipe_small.n_outlets



class TestCellLocator:
    def test_interior_points(self, box_small):
        rng = np.random.default_rng(7)
        bary = rng.dirichlet(np.ones(4), size=40)
        cells = rng.integers(0, box_small.n_tets, size=40)
        pts = np.einsum("pk,pkx->px", bary,
                        box_small.vertices[box_small.tets[cells]])
        found, fbary = CellLocator(box_small).locate(pts)
        assert np.all(found >= 0)
        # reconstruct the points from the returned barycentric coordinates
        rec = np.einsum("pk,pkx->px", fbary,
                        box_small.vertices[box_small.tets[found]])
        assert np.allclose(rec, pts, atol=1e-12)

    def test_outside_points(self, box_small):
        pts = np.array([[10.0, 10.0, 10.0], [-5.0, 0.5, 0.5]])
        found, _ = CellLocator(box_small).locate(pts)
        assert np.all(found == -1)

    def test_vertices_are_found(self, pipe_small):
        found, _ = CellLocator(pipe_small).locate(pipe_small.vertices[:50])
        assert np.all(found >= 0)


class TestFixtures:
    def test_pipe_volume_close_to_cylinder(self):
        m = pipe(radius=0.5, length=2.0, n_rings=6, n_layers=10)
        vol = mesh_statistics(m).volume_total
        assert vol == pytest.approx(np.pi * 0.25 * 2.0, rel=0.01)

    def test_pipe_rim_vertices_on_circle(self):
        m = pipe(radius=0.5, length=1.0, n_rings=3, n_layers=4)
        r = np.hypot(m.vertices[:, 0], m.vertices[:, 1])
        assert r.max() == pytest.approx(0.5, abs=1e-12)

    def test_stenosis_narrows_midsection(self):
        m = stenosis(radius=0.5, length=4.0, n_rings=3, n_layers=12,
                     depth=0.4)
        r = np.hypot(m.vertices[:, 0], m.vertices[:, 1])
        z = m.vertices[:, 2]
        mid = np.abs(z - 2.0) < 0.2
        ends = z < 0.1
        assert r[mid].max() < 0.75 * r[ends].max()

    def test_stenosis_depth_validation(self):
        with pytest.raises(ValidationError):
            stenosis(depth=1.5)

    def test_bifurcation_outlet_counts(self):
        for n in (2, 3):
            m = make_fixture("bifurcation", n_outlets=n, cell=1.0, n_sub=2)
            assert m.n_outlets == n


    def test_make_fixture_unknown_kind(self):
        with pytest.raises(ValidationError):
            make_fixture("torus")

    def test_make_fixture_unknown_parameter(self):
        with pytest.raises(ValidationError):
            make_fixture("pipe", bogus=3)
