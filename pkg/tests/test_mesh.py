import numpy as np
import pytest
from scipy import stats

from oracles import all_close_pairs
from projseg.mesh import (GEODESIC_CUTOFF_FACTOR, MeshError, Mesh,
                          build_pairwise_graph, dual_graph_edges,
                          load_face_labels, load_mesh, mesh_from_arrays,
                          sample_surface, save_face_labels)

CUBE_OBJ = """\
v 0 0 0
v 0 0 1
v 0 1 0
v 0 1 1
v 1 0 0
v 1 0 1
v 1 1 0
v 1 1 1
f 1 2 4
f 1 4 3
f 5 7 8
f 5 8 6
f 1 5 6
f 1 6 2
f 3 4 8
f 3 8 7
f 1 3 7
f 1 7 5
f 2 6 8
f 2 8 4
"""


def _write(tmp_path, text, name="mesh.obj"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadMesh:
    def test_unit_cube(self, tmp_path):
        mesh = load_mesh(_write(tmp_path, CUBE_OBJ))
        assert mesh.num_faces == 12
        assert mesh.num_vertices == 8
        np.testing.assert_allclose(mesh.face_areas.sum(), 6.0, rtol=1e-12)

    def test_duplicate_vertex_welded(self, tmp_path):
        text = CUBE_OBJ + "v 0 0 0\n"  # coincides with vertex 1
        mesh = load_mesh(_write(tmp_path, text))
        assert mesh.num_vertices == 8

    def test_quads_fan_triangulated(self, tmp_path):
        quad = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n"
        mesh = load_mesh(_write(tmp_path, quad))
        assert mesh.num_faces == 2
        assert list(mesh.face_source) == [0, 0]

    def test_zero_area_faces_dropped(self, tmp_path):
        text = CUBE_OBJ + "f 1 1 2\n"
        mesh = load_mesh(_write(tmp_path, text))
        assert mesh.num_faces == 12
        assert (mesh.face_areas > 0).all()

    def test_parse_failure(self, tmp_path):
        with pytest.raises(MeshError):
            load_mesh(_write(tmp_path, "v 0 0\nf 1 2 3\n"))

    def test_empty_after_repair(self, tmp_path):
        with pytest.raises(MeshError):
            load_mesh(_write(tmp_path, "v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(MeshError):
            load_mesh(tmp_path / "nope.obj")

    def test_normals_unit_and_outward(self, tmp_path):
        mesh = load_mesh(_write(tmp_path, CUBE_OBJ))
        np.testing.assert_allclose(np.linalg.norm(mesh.face_normals, axis=1),
                                   1.0, atol=1e-6)
        center = mesh.vertices.mean(axis=0)
        centroids = mesh.face_centroids()
        outward = ((centroids - center) * mesh.face_normals).sum(axis=1)
        assert (outward > 0).all()

    def test_bounding_sphere_contains_vertices(self, small_table):
        mesh, _ = small_table
        center, radius = mesh.bounding_sphere
        d = np.linalg.norm(mesh.vertices - center, axis=1)
        assert (d <= radius * (1 + 1e-6)).all()
        assert radius > 0

    def test_inconsistent_winding_repaired(self, tmp_path):
        lines = CUBE_OBJ.splitlines()
        # flip a couple of faces; orientation repair should undo it
        lines[9] = "f 3 4 1"
        lines[14] = "f 8 4 3"
        mesh = load_mesh(_write(tmp_path, "\n".join(lines) + "\n"))
        center = mesh.vertices.mean(axis=0)
        outward = ((mesh.face_centroids() - center)
                   * mesh.face_normals).sum(axis=1)
        assert (outward > 0).all()


class TestSampleSurface:
    def test_single_triangle(self):
        v = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]])
        mesh = mesh_from_arrays(v, np.array([[0, 1, 2]]), orient=False)
        pts = sample_surface(mesh, 4, seed=0)
        assert (pts.face_ids == 0).all()
        # barycentric check: z = 0, inside the triangle
        assert np.allclose(pts.positions[:, 2], 0)
        assert (pts.positions[:, :2] >= -1e-9).all()
        assert (pts.positions.sum(axis=1) <= 1 + 1e-9).all()

    def test_area_proportional_counts(self):
        v = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 2, 0],
                      [0.0, 0, 1], [3.0, 0, 1], [0.0, 2, 1]])
        mesh = mesh_from_arrays(v, np.array([[0, 1, 2], [3, 4, 5]]),
                                orient=False)
        np.testing.assert_allclose(sorted(mesh.face_areas), [1.0, 3.0])
        n = 4000
        pts = sample_surface(mesh, n, seed=123)
        small = int(np.argmin(mesh.face_areas))
        count = (pts.face_ids == small).sum()
        p = 0.25
        sigma = np.sqrt(n * p * (1 - p))
        assert abs(count - n * p) <= 3 * sigma

    def test_deterministic(self, small_table):
        mesh, _ = small_table
        a = sample_surface(mesh, 64, seed=7)
        b = sample_surface(mesh, 64, seed=7)
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.face_ids, b.face_ids)

    def test_points_on_their_faces(self, small_table):
        mesh, _ = small_table
        pts = sample_surface(mesh, 256, seed=3)
        tri = mesh.vertices[mesh.faces[pts.face_ids]]
        # solve barycentric coordinates and check they are valid
        v0 = tri[:, 1] - tri[:, 0]
        v1 = tri[:, 2] - tri[:, 0]
        w = pts.positions - tri[:, 0]
        d00 = (v0 * v0).sum(1)
        d01 = (v0 * v1).sum(1)
        d11 = (v1 * v1).sum(1)
        d20 = (w * v0).sum(1)
        d21 = (w * v1).sum(1)
        denom = d00 * d11 - d01 * d01
        u = (d11 * d20 - d01 * d21) / denom
        v = (d00 * d21 - d01 * d20) / denom
        assert (u >= -1e-6).all() and (v >= -1e-6).all()
        assert (u + v <= 1 + 1e-6).all()
        resid = tri[:, 0] + u[:, None] * v0 + v[:, None] * v1 - pts.positions
        assert np.abs(resid).max() < 1e-9

    def test_empirical_distribution_matches_areas(self, small_table):
        mesh, _ = small_table
        n = 100_000
        pts = sample_surface(mesh, n, seed=99)
        counts = np.bincount(pts.face_ids, minlength=mesh.num_faces)
        expected = mesh.face_areas / mesh.face_areas.sum() * n
        keep = expected >= 5
        chi2 = stats.chisquare(counts[keep], expected[keep]
                               * counts[keep].sum() / expected[keep].sum())
        assert chi2.pvalue > 1e-3

    def test_preconditions(self, small_table):
        mesh, _ = small_table
        with pytest.raises(ValueError):
            sample_surface(mesh, 0)


def _grid_mesh(n=10):
    xs, ys = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    v = np.stack([xs.ravel(), ys.ravel(), np.zeros((n + 1) ** 2)], axis=1)
    faces = []
    for i in range(n):
        for j in range(n):
            a = i * (n + 1) + j
            b = a + 1
            c = a + n + 1
            d = c + 1
            faces.append([a, b, d])
            faces.append([a, d, c])
    return mesh_from_arrays(v.astype(np.float64), np.asarray(faces),
                            orient=False)


class TestPairwiseGraph:
    def test_coplanar_pair_omega_zero(self):
        v = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0], [1.0, 1, 0]])
        mesh = mesh_from_arrays(v, np.array([[0, 1, 3], [0, 3, 2]]),
                                orient=False)
        g = build_pairwise_graph(mesh)
        assert g.num_adjacency == 1
        np.testing.assert_allclose(g.adjacency_omega, [0.0], atol=1e-12)

    def test_perpendicular_pair_omega_half(self):
        v = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 0, 1],
                      [0.0, 1, 0]])
        # faces share edge (0,1); normals along +y and -z (perpendicular)
        mesh = mesh_from_arrays(v, np.array([[0, 1, 2], [0, 3, 1]]),
                                orient=False)
        g = build_pairwise_graph(mesh)
        assert g.num_adjacency == 1
        np.testing.assert_allclose(g.adjacency_omega, [0.5], atol=1e-12)

    def test_grid_distances_match_heap_dijkstra(self):
        mesh = _grid_mesh(10)
        g = build_pairwise_graph(mesh)
        pairs, weights = dual_graph_edges(mesh)
        cutoff = GEODESIC_CUTOFF_FACTOR * mesh.radius
        expected = all_close_pairs(mesh.num_faces, pairs, weights, cutoff)
        got = {(int(a), int(b)): d
               for (a, b), d in zip(g.distance_pairs, g.distance_values)}
        assert set(got) == set(expected)
        for key, d in expected.items():
            # same normalization on both sides, so equality is exact
            assert got[key] == d / cutoff, key

    def test_pairs_unique_and_in_range(self, small_table):
        mesh, _ = small_table
        g = build_pairwise_graph(mesh)
        for pairs in (g.adjacency_pairs, g.distance_pairs):
            assert (pairs[:, 0] < pairs[:, 1]).all()
            keys = pairs[:, 0].astype(np.int64) * mesh.num_faces + pairs[:, 1]
            assert len(np.unique(keys)) == len(keys)
        assert (g.adjacency_omega >= 0).all()
        assert (g.adjacency_omega <= 1).all()
        assert (g.distance_values >= 0).all()
        assert (g.distance_values <= 1).all()

    def test_distance_cutoff_respected(self, small_table):
        mesh, _ = small_table
        g = build_pairwise_graph(mesh)
        cutoff = GEODESIC_CUTOFF_FACTOR * mesh.radius
        assert (g.distance_values * cutoff < cutoff).all()

    def test_geodesic_metric_properties(self):
        mesh = _grid_mesh(6)
        pairs, weights = dual_graph_edges(mesh)
        cutoff = 1e9
        from oracles import dual_dijkstra
        d0 = dual_dijkstra(mesh.num_faces, pairs, weights, 0, cutoff)
        d5 = dual_dijkstra(mesh.num_faces, pairs, weights, 5, cutoff)
        # symmetry
        assert d0[5] == pytest.approx(d5[0], rel=1e-12)
        # triangle inequality through an intermediate face
        for k in (3, 11, 40):
            assert d0[k] <= d0[5] + d5[k] + 1e-9

    def test_rigid_motion_invariance(self, small_table):
        mesh, _ = small_table
        g0 = build_pairwise_graph(mesh)
        theta = 0.7
        rot = np.array([[np.cos(theta), -np.sin(theta), 0],
                        [np.sin(theta), np.cos(theta), 0],
                        [0, 0, 1.0]])
        moved = mesh_from_arrays(mesh.vertices @ rot.T + np.array([3, -2, 1]),
                                 mesh.faces, orient=False)
        g1 = build_pairwise_graph(moved)
        np.testing.assert_array_equal(g0.adjacency_pairs, g1.adjacency_pairs)
        # arccos amplifies ulp noise near 0 and pi, hence the loose atol
        np.testing.assert_allclose(g0.adjacency_omega, g1.adjacency_omega,
                                   atol=1e-6)
        d0 = {(int(a), int(b)): v for (a, b), v
              in zip(g0.distance_pairs, g0.distance_values)}
        d1 = {(int(a), int(b)): v for (a, b), v
              in zip(g1.distance_pairs, g1.distance_values)}
        assert set(d0) == set(d1)
        for key in d0:
            assert d0[key] == pytest.approx(d1[key], abs=1e-9)

    def test_uniform_scale_invariance(self, small_table):
        mesh, _ = small_table
        g0 = build_pairwise_graph(mesh)
        scaled = mesh_from_arrays(mesh.vertices * 4.2, mesh.faces,
                                  orient=False)
        g1 = build_pairwise_graph(scaled)
        np.testing.assert_allclose(np.sort(g0.distance_values),
                                   np.sort(g1.distance_values), atol=1e-9)


class TestLabelIO:
    def test_roundtrip(self, tmp_path):
        labels = np.array([0, 1, 2, 1, 0], dtype=np.int32)
        save_face_labels(tmp_path / "l.txt", labels)
        loaded = load_face_labels(tmp_path / "l.txt", num_labels=3)
        np.testing.assert_array_equal(labels, loaded)

    def test_range_check(self, tmp_path):
        save_face_labels(tmp_path / "l.txt", [0, 5])
        with pytest.raises(ValueError):
            load_face_labels(tmp_path / "l.txt", num_labels=3)

    def test_source_polygon_expansion(self, tmp_path):
        quad = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n"
        p = tmp_path / "q.obj"
        p.write_text(quad)
        mesh = load_mesh(p)
        save_face_labels(tmp_path / "l.txt", [7])
        labels = load_face_labels(tmp_path / "l.txt", mesh)
        np.testing.assert_array_equal(labels, [7, 7])
