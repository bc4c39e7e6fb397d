import numpy as np
import pytest

from conftest import single_triangle
from oracles import raycast_visible_points
from projseg import synth
from projseg.mesh import mesh_from_arrays, sample_surface
from projseg.render import RenderSettings, camera_for_viewpoint
from projseg.storage import load_viewpoints, save_viewpoints
from projseg.views import (SCALE_FACTORS, Viewpoint, estimate_coverage,
                           fixed_dodecahedron_views, generate_candidates,
                           greedy_select, point_reference_mask, select_views)

SETTINGS = RenderSettings(resolution=96)


class TestGenerateCandidates:
    def test_three_per_point(self, small_table):
        mesh, _ = small_table
        pts = sample_surface(mesh, 50, seed=0)
        cands = generate_candidates(pts, mesh)
        assert len(cands) == 3 * 50
        for s in range(3):
            assert sum(1 for c in cands if c.scale_index == s) == 50

    def test_eye_on_normal_at_scaled_distance(self):
        v = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]])
        mesh = mesh_from_arrays(v, np.array([[0, 1, 2]]), orient=False)
        pts = sample_surface(mesh, 3, seed=1)
        cands = generate_candidates(pts, mesh)
        radius = mesh.radius
        for c in cands:
            k = np.asarray(c.eye) - np.asarray(c.target)
            expected = SCALE_FACTORS[c.scale_index] * radius
            assert np.linalg.norm(k) == pytest.approx(expected, rel=1e-9)
            # direction matches the +z face normal
            np.testing.assert_allclose(k / np.linalg.norm(k), [0, 0, 1],
                                       atol=1e-12)

    def test_empty_points_rejected(self, small_table):
        mesh, _ = small_table
        empty = sample_surface(mesh, 1, seed=0)
        empty = type(empty)(positions=empty.positions[:0],
                            normals=empty.normals[:0],
                            face_ids=empty.face_ids[:0])
        with pytest.raises(ValueError):
            generate_candidates(empty, mesh)


class TestEstimateCoverage:
    def test_single_triangle_full_coverage(self):
        mesh = single_triangle()
        pts = sample_surface(mesh, 16, seed=0)
        # along the face normal, far enough that the frustum holds the
        # whole triangle: every point is visible
        centroid = mesh.face_centroids()[0]
        vp = Viewpoint(eye=centroid + np.array([0, 0, 2.5]) * mesh.radius,
                       target=centroid, scale_index=2)
        cov = estimate_coverage(vp, pts, None, mesh, SETTINGS)
        assert cov == 1.0

    def test_viewpoint_behind_wall_sees_nothing(self):
        # target points on a small patch, a big wall between eye and patch
        v = np.array([
            [-0.5, -0.5, 0.0], [0.5, -0.5, 0.0], [0.0, 0.5, 0.0],   # patch
            [-4.0, -4.0, 1.0], [4.0, -4.0, 1.0], [0.0, 6.0, 1.0],   # wall
        ])
        mesh = mesh_from_arrays(v, np.array([[0, 1, 2], [3, 4, 5]]),
                                orient=False)
        pts_all = sample_surface(mesh, 2000, seed=0)
        keep = pts_all.face_ids == 0
        pts = type(pts_all)(positions=pts_all.positions[keep],
                            normals=pts_all.normals[keep],
                            face_ids=pts_all.face_ids[keep])
        assert pts.count > 5
        vp = Viewpoint(eye=np.array([0.0, 0.0, 2.0]),
                       target=np.array([0.0, 0.0, 0.0]), scale_index=0)
        cov = estimate_coverage(vp, pts, None, mesh, SETTINGS)
        assert cov == 0.0

    def test_sphere_coverage_matches_raycast_oracle(self, small_sphere):
        mesh = small_sphere
        pts = sample_surface(mesh, 128, seed=5)
        rng = np.random.default_rng(3)
        for _ in range(3):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            vp = Viewpoint(eye=mesh.center + d * 2.0 * mesh.radius,
                           target=mesh.center, scale_index=1)
            cov = estimate_coverage(vp, pts, None, mesh, SETTINGS)
            cam = camera_for_viewpoint(vp, mesh, SETTINGS)
            oracle = raycast_visible_points(mesh, cam, pts.positions,
                                            tol=1e-5 * mesh.radius).mean()
            assert cov == pytest.approx(oracle, abs=0.05)

    def test_coverage_restricted_to_uncovered(self, small_sphere):
        mesh = small_sphere
        pts = sample_surface(mesh, 64, seed=1)
        vp = Viewpoint(eye=mesh.center + np.array([0, 0, 2.0]) * mesh.radius,
                       target=mesh.center, scale_index=1)
        refs = point_reference_mask(vp, pts, mesh, SETTINGS)
        uncovered = ~refs  # everything this view sees is already covered
        assert estimate_coverage(vp, pts, uncovered, mesh, SETTINGS) == 0.0


class TestGreedySelect:
    def test_convex_reaches_full_coverage_each_scale(self, small_sphere):
        mesh = small_sphere
        pts = sample_surface(mesh, 96, seed=2)
        vps = select_views(mesh, pts, SETTINGS, coverage_target=1.0,
                           max_per_scale=40)
        np.testing.assert_allclose(vps.covered_fraction_per_scale, 1.0)
        for s in range(3):
            assert sum(1 for v in vps.selected if v.scale_index == s) <= 40

    def test_gains_non_increasing_within_scale(self, small_table):
        mesh, _ = small_table
        pts = sample_surface(mesh, 96, seed=2)
        vps = select_views(mesh, pts, SETTINGS, coverage_target=1.0,
                           max_per_scale=10)
        for s in range(3):
            fracs = [v.coverage * 1.0 for v in vps.selected
                     if v.scale_index == s]
            gains = []
            remaining = 1.0
            for f in fracs:
                gains.append(f * remaining)
                remaining *= (1 - f)
            assert all(gains[i] >= gains[i + 1] - 1e-12
                       for i in range(len(gains) - 1))

    def test_table_counts_match_reported_magnitude(self, small_table):
        mesh, _ = small_table
        pts = sample_surface(mesh, 160, seed=4)
        vps = select_views(mesh, pts, RenderSettings(resolution=128),
                           coverage_target=1.0, max_per_scale=40)
        for s in range(3):
            count = sum(1 for v in vps.selected if v.scale_index == s)
            assert 3 <= count <= 40
        assert vps.covered_fraction_per_scale.min() >= 0.95

    def test_deterministic(self, small_table):
        mesh, _ = small_table
        pts = sample_surface(mesh, 64, seed=3)
        a = select_views(mesh, pts, SETTINGS, max_per_scale=6)
        b = select_views(mesh, pts, SETTINGS, max_per_scale=6)
        assert len(a) == len(b)
        for va, vb in zip(a.selected, b.selected):
            np.testing.assert_array_equal(va.eye, vb.eye)
            assert va.coverage == vb.coverage

    def test_uncovered_set_shrinks_monotonically(self, small_table):
        mesh, _ = small_table
        pts = sample_surface(mesh, 64, seed=3)
        cands = generate_candidates(pts, mesh)
        refmats = {s: np.stack([
            point_reference_mask(c, pts, mesh, SETTINGS)
            for c in cands if c.scale_index == s]) for s in range(3)}
        vps = greedy_select(cands, pts, mesh, SETTINGS, max_per_scale=8)
        for s in range(3):
            chosen = [v for v in vps.selected if v.scale_index == s]
            uncovered = np.ones(pts.count, dtype=bool)
            sizes = [uncovered.sum()]
            for v in chosen:
                idx = next(i for i, c in enumerate(cands)
                           if c.scale_index == s
                           and np.array_equal(c.eye, v.eye))
                scale_local = idx - s * pts.count
                uncovered &= ~refmats[s][scale_local]
                sizes.append(uncovered.sum())
            assert all(sizes[i] >= sizes[i + 1]
                       for i in range(len(sizes) - 1))

    def test_every_point_covered_at_each_scale_on_convex(self, small_sphere):
        mesh = small_sphere
        pts = sample_surface(mesh, 96, seed=7)
        cands = generate_candidates(pts, mesh)
        for s in range(3):
            covered = np.zeros(pts.count, dtype=bool)
            vps = greedy_select([c for c in cands if c.scale_index == s],
                                pts, mesh, SETTINGS, max_per_scale=40)
            for v in vps.selected:
                covered |= point_reference_mask(v, pts, mesh, SETTINGS)
            assert covered.all()


class TestFixedDodecahedron:
    def test_twenty_viewpoints(self, small_table):
        mesh, _ = small_table
        vps = fixed_dodecahedron_views(mesh)
        assert len(vps) == 20

    def test_eyes_equidistant_from_center(self, small_table):
        mesh, _ = small_table
        vps = fixed_dodecahedron_views(mesh)
        center, radius = mesh.bounding_sphere
        d = [np.linalg.norm(v.eye - center) for v in vps.selected]
        np.testing.assert_allclose(d, 1.5 * radius, rtol=1e-9)

    def test_translation_covariance(self, small_table):
        mesh, _ = small_table
        shift = np.array([5.0, -1.0, 2.0])
        moved = mesh_from_arrays(mesh.vertices + shift, mesh.faces,
                                 orient=False)
        a = fixed_dodecahedron_views(mesh)
        b = fixed_dodecahedron_views(moved)
        for va, vb in zip(a.selected, b.selected):
            np.testing.assert_allclose(vb.eye - va.eye, shift, atol=1e-9)


def test_viewpoint_set_json_roundtrip(tmp_path, small_table):
    mesh, _ = small_table
    pts = sample_surface(mesh, 48, seed=0)
    vps = select_views(mesh, pts, SETTINGS, max_per_scale=4)
    save_viewpoints(tmp_path / "vp.json", vps)
    back = load_viewpoints(tmp_path / "vp.json")
    assert len(back) == len(vps)
    np.testing.assert_allclose(back.covered_fraction_per_scale,
                               vps.covered_fraction_per_scale)
    for va, vb in zip(vps.selected, back.selected):
        np.testing.assert_allclose(va.eye, vb.eye)
        assert va.scale_index == vb.scale_index
