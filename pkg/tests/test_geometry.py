import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dhgrasp import kernels
from dhgrasp.geometry import (
    GeometryError,
    PointCloud,
    SpatialIndex,
    TriMesh,
    cast_rays,
    chamfer_distance,
    closest_on_mesh,
    distance_to_surface,
    load_mesh,
    max_pairwise_distance,
    point_in_mesh,
    points_in_mesh,
    ray_mesh_intersect,
    read_dhpc,
    reflect_points,
    reflection_matrix,
    sample_surface,
    save_obj,
    write_dhpc,
)
from dhgrasp.shapes import box, capsule, cylinder, icosphere

coord = st.floats(-0.2, 0.2, allow_nan=False)
vec3 = st.tuples(coord, coord, coord).map(np.array)


def one_triangle():
    return TriMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]))


class TestTriMesh:
    def test_merges_duplicates_and_drops_degenerates(self):
        v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1e-9, 0, 0], [2, 0, 0]], dtype=float)
        f = np.array([[0, 1, 2], [3, 1, 2], [0, 1, 4]])
        m = TriMesh(v, f)
        assert len(m.vertices) == 4
        # [3,1,2] becomes a copy of [0,1,2]; [0,1,4] is collinear and dropped
        assert len(m.faces) == 2
        assert np.all(m.face_areas > 0)

    def test_bad_index(self):
        with pytest.raises(GeometryError):
            TriMesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))

    def test_non_finite(self):
        with pytest.raises(GeometryError):
            TriMesh(np.array([[np.nan, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]))

    def test_watertight_flags(self):
        assert icosphere(1.0, 2).watertight
        assert box().watertight
        assert not one_triangle().watertight

    def test_unit_normals_and_outward(self):
        m = icosphere(1.0, 2)
        c = m.triangles.mean(axis=1)
        assert np.allclose(np.linalg.norm(m.face_normals, axis=1), 1.0)
        assert np.all(np.einsum("ij,ij->i", m.face_normals, c) > 0)


class TestPointCloud:
    def test_rejects_non_unit_normals(self):
        with pytest.raises(GeometryError):
            PointCloud(np.zeros((2, 3)), np.ones((2, 3)))

    def test_rejects_nan(self):
        with pytest.raises(GeometryError):
            PointCloud(np.array([[0, np.inf, 0]]))

    def test_surface_samples_lie_on_mesh(self):
        m = box((0.1, 0.2, 0.3))
        c = sample_surface(m, 500, rng=1)
        assert len(c) == 500
        assert distance_to_surface(c.points, m).max() < 1e-12


class TestInside:
    def test_sphere_oracle(self):
        m = icosphere(1.0, 3)
        rng = np.random.default_rng(0)
        p = rng.uniform(-1.3, 1.3, size=(4000, 3))
        r = np.linalg.norm(p, axis=1)
        # faceting error of a level-3 icosphere is below 0.02
        keep = np.abs(r - 1.0) > 0.02
        assert np.array_equal(points_in_mesh(p[keep], m), r[keep] < 1.0)

    def test_box_oracle(self):
        m = box((2.0, 1.0, 0.5))
        rng = np.random.default_rng(1)
        p = rng.uniform(-1.2, 1.2, size=(3000, 3))
        truth = (np.abs(p[:, 0]) < 1.0) & (np.abs(p[:, 1]) < 0.5) & (np.abs(p[:, 2]) < 0.25)
        assert np.array_equal(points_in_mesh(p, m), truth)

    def test_single_point(self):
        m = icosphere(1.0, 2)
        assert point_in_mesh([0, 0, 0], m)
        assert not point_in_mesh([2, 0, 0], m)

    def test_open_mesh_reports_ambiguous(self):
        res = points_in_mesh(np.array([[0.2, 0.2, 0.0]]), one_triangle(), diagnostics=True)
        assert res.ambiguous == 1
        assert not res.inside[0]

    @given(vec3)
    def test_inside_invariant_under_translation(self, t):
        m = cylinder(0.1, 0.2, 16)
        p = np.random.default_rng(3).uniform(-0.15, 0.15, size=(200, 3))
        a = points_in_mesh(p, m, diagnostics=True)
        b = points_in_mesh(p + t, m.translated(t), diagnostics=True)
        clear = np.abs(a.winding - 0.5) > 1e-6
        assert np.array_equal(a.inside[clear], b.inside[clear])


class TestClosest:
    @pytest.mark.parametrize(
        "p, foot",
        [
            ([0.2, 0.2, 1.0], [0.2, 0.2, 0.0]),  # face interior
            ([-1.0, -1.0, 0.0], [0.0, 0.0, 0.0]),  # vertex region
            ([0.5, -2.0, 0.3], [0.5, 0.0, 0.0]),  # edge region
            ([1.0, 1.0, 0.0], [0.5, 0.5, 0.0]),  # hypotenuse
        ],
    )
    def test_triangle_regions(self, p, foot):
        d, q, f = closest_on_mesh(np.array([p]), one_triangle())
        assert np.allclose(q[0], foot, atol=1e-15)
        assert d[0] == pytest.approx(np.linalg.norm(np.subtract(p, foot)), abs=1e-15)
        assert f[0] == 0

    def test_sphere_distance_oracle(self):
        m = icosphere(1.0, 4)
        p = np.random.default_rng(0).normal(size=(300, 3)) * 2
        d, q, _ = closest_on_mesh(p, m)
        assert np.allclose(d, np.abs(np.linalg.norm(p, axis=1) - 1.0), atol=5e-3)
        assert np.allclose(np.linalg.norm(p - q, axis=1), d)

    @pytest.mark.parametrize("mesh", [icosphere(0.05, 3), capsule(0.03, 0.1, 24, 6), box((0.1, 0.05, 0.02))])
    def test_pruned_equals_brute_force(self, mesh):
        p = np.random.default_rng(5).normal(scale=0.08, size=(400, 3))
        d_fast, q_fast, _ = closest_on_mesh(p, mesh)
        d_all, q_all, _ = kernels.closest_points(p, mesh.vertices, mesh.faces)
        assert np.array_equal(d_fast, d_all)
        assert np.allclose(q_fast, q_all, atol=1e-15)

    def test_cloud_target(self):
        cloud = PointCloud(np.array([[0.0, 0, 0], [1, 0, 0]]))
        assert distance_to_surface([0.9, 0, 0], cloud) == pytest.approx(0.1)
        assert distance_to_surface(np.array([[0.4, 0, 0]]), cloud.points)[0] == pytest.approx(0.4)

    def test_empty_target(self):
        with pytest.raises(GeometryError):
            distance_to_surface([0, 0, 0], np.zeros((0, 3)))

    @given(vec3)
    def test_distance_is_one_lipschitz(self, p):
        m = box((0.1, 0.1, 0.1))
        e = np.array([1e-3, -2e-3, 5e-4])
        d = distance_to_surface(np.stack([p, p + e]), m)
        assert abs(d[0] - d[1]) <= np.linalg.norm(e) + 1e-12


class TestRays:
    def test_sphere_hits(self):
        m = icosphere(1.0, 4)
        dirs = np.random.default_rng(0).normal(size=(200, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pts, face, t = cast_rays(np.zeros(3), dirs, m)
        assert np.all(face >= 0)
        assert np.allclose(t, 1.0, atol=5e-3)
        assert distance_to_surface(pts, m).max() < 1e-12

    def test_miss(self):
        assert ray_mesh_intersect([2, 0, 0], [1, 0, 0], icosphere(1.0, 2)) is None
        pts, face, t = cast_rays(np.array([[2.0, 0, 0]]), np.array([[1.0, 0, 0]]), icosphere(1.0, 2))
        assert face[0] == -1 and np.isinf(t[0]) and np.isnan(pts[0]).all()

    def test_box_first_hit(self):
        hit = ray_mesh_intersect([-5, 0.1, 0.05], [1, 0, 0], box((2.0, 1.0, 1.0)))
        assert hit.t == pytest.approx(4.0)
        assert np.allclose(hit.point, [-1.0, 0.1, 0.05])

    def test_rejects_unnormalized(self):
        with pytest.raises(GeometryError):
            ray_mesh_intersect([0, 0, 0], [2, 0, 0], box())


class TestChamfer:
    def test_identity_zero(self):
        p = np.random.default_rng(0).normal(size=(100, 3))
        assert chamfer_distance(p, p) == 0.0

    def test_symmetric_and_known_value(self):
        a = np.array([[0.0, 0, 0]])
        b = np.array([[3.0, 4, 0]])
        assert chamfer_distance(a, b) == pytest.approx(50.0)
        p = np.random.default_rng(1).normal(size=(50, 3))
        q = np.random.default_rng(2).normal(size=(70, 3))
        assert chamfer_distance(p, q) == pytest.approx(chamfer_distance(q, p))

    def test_empty(self):
        with pytest.raises(GeometryError):
            chamfer_distance(np.zeros((0, 3)), np.zeros((1, 3)))

    @given(st.sampled_from("xyz"))
    def test_reflection_is_involution(self, ax):
        c = sample_surface(box((0.3, 0.2, 0.1)), 100, rng=0)
        twice = reflect_points(reflect_points(c, ax), ax)
        assert np.array_equal(twice.points, c.points)
        assert np.array_equal(twice.normals, c.normals)
        assert np.linalg.det(reflection_matrix(ax)) == -1


def test_spatial_index_matches_brute_force():
    rng = np.random.default_rng(0)
    pts, q = rng.normal(size=(300, 3)), rng.normal(size=(50, 3))
    d, j = SpatialIndex(pts).query(q)
    full = np.linalg.norm(q[:, None] - pts[None], axis=2)
    assert np.array_equal(j, full.argmin(axis=1))
    assert np.allclose(d, full.min(axis=1))


def test_max_pairwise_distance():
    p = np.random.default_rng(0).normal(size=(200, 3))
    full = np.linalg.norm(p[:, None] - p[None], axis=2).max()
    assert max_pairwise_distance(p) == pytest.approx(full)


class TestFiles:
    def test_obj_round_trip(self, tmp_path):
        m = capsule(0.03, 0.1, 12, 3)
        save_obj(tmp_path / "c.obj", m)
        back = load_mesh(tmp_path / "c.obj")
        assert np.allclose(back.vertices, m.vertices, atol=1e-8)
        assert np.array_equal(back.faces, m.faces)

    def test_obj_quads_and_negative_indices(self, tmp_path):
        (tmp_path / "q.obj").write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf -4 -3 -2 -1\n")
        assert len(load_mesh(tmp_path / "q.obj").faces) == 2

    def test_off(self, tmp_path):
        (tmp_path / "t.off").write_text("OFF\n# tetra\n4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n")
        m = load_mesh(tmp_path / "t.off")
        assert m.watertight and len(m.faces) == 4

    def test_bad_format(self, tmp_path):
        (tmp_path / "x.ply").write_text("ply")
        with pytest.raises(GeometryError):
            load_mesh(tmp_path / "x.ply")
        (tmp_path / "e.obj").write_text("# nothing\n")
        with pytest.raises(GeometryError):
            load_mesh(tmp_path / "e.obj")

    def test_dhpc_round_trip(self, tmp_path):
        c = sample_surface(icosphere(0.05, 2), 300, rng=0)
        write_dhpc(tmp_path / "c.dhpc", c)
        back = read_dhpc(tmp_path / "c.dhpc")
        assert np.allclose(back.points, c.points, atol=1e-7)
        assert np.allclose(np.linalg.norm(back.normals, axis=1), 1.0, atol=1e-12)
        write_dhpc(tmp_path / "p.dhpc", PointCloud(c.points))
        assert read_dhpc(tmp_path / "p.dhpc").normals is None

    def test_dhpc_magic(self, tmp_path):
        (tmp_path / "bad.dhpc").write_bytes(b"NOPE")
        with pytest.raises(GeometryError):
            read_dhpc(tmp_path / "bad.dhpc")
