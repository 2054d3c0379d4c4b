import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from vesselforge.mesh import (
    MeshError, TriMesh, icosphere, largest_component, laplacian_residuals, marching_cubes,
    mesh_losses, quality_report, read_obj, remesh_uniform, smooth_minimize, voxelize_by_normal,
    write_obj,
)
from vesselforge.metrics import hausdorff
from vesselforge.volume import VoxelGrid

from shapes import tri_lattice


def ball_grid(radius, n=64):
    g = np.indices((n, n, n)).transpose(1, 2, 3, 0) - (n - 1) / 2
    return VoxelGrid((np.linalg.norm(g, axis=-1) <= radius).astype(float))


def radii(mesh, center=31.5):
    return np.linalg.norm(mesh.vertices - center, axis=1)


@pytest.fixture(scope="module")
def mc_sphere():
    return marching_cubes(ball_grid(20.0))


class TestCore:
    def test_icosphere_counts(self):
        m = icosphere(2)
        assert (m.n_vertices, m.n_faces) == (162, 320)
        assert m.is_watertight() and m.euler_characteristic() == 2
        assert m.volume() > 0

    def test_bad_faces(self):
        with pytest.raises(MeshError):
            TriMesh(np.zeros((3, 3)), [[0, 1, 3]])
        with pytest.raises(MeshError, match="face 0"):
            TriMesh(np.eye(3), [[0, 1, 1]])

    def test_largest_component(self):
        a = icosphere(1)
        b = icosphere(2, center=(10, 0, 0))
        both = TriMesh(np.vstack([a.vertices, b.vertices]), np.vstack([a.faces, b.faces + a.n_vertices]))
        kept = largest_component(both)
        assert kept.n_faces == b.n_faces
        np.testing.assert_allclose(kept.vertices, b.vertices)


class TestMarchingCubes:
    def test_sphere_radii(self, mc_sphere):
        r = radii(mc_sphere)
        assert np.all(np.abs(r - 20.0) <= np.sqrt(3))

    def test_sphere_topology(self, mc_sphere):
        assert mc_sphere.is_watertight()
        assert mc_sphere.euler_characteristic() == 2

    def test_outward_normals(self, mc_sphere):
        assert mc_sphere.volume() > 0
        n = mc_sphere.face_normals
        c = mc_sphere.vertices[mc_sphere.faces].mean(axis=1) - 31.5
        assert np.mean(np.einsum("ij,ij->i", n, c) > 0) > 0.99

    def test_constant_grid_raises(self):
        with pytest.raises(MeshError):
            marching_cubes(VoxelGrid(np.ones((8, 8, 8))))

    def test_spacing_and_origin(self):
        g = ball_grid(6.0, n=20)
        m1 = marching_cubes(g)
        m2 = marching_cubes(VoxelGrid(g.data, spacing=(2.0, 2.0, 2.0), origin=(5.0, 0.0, -1.0)))
        np.testing.assert_allclose(m2.vertices, 2.0 * m1.vertices + [5.0, 0.0, -1.0])


@pytest.mark.slow
class TestRemesh:
    @pytest.fixture(scope="class")
    @classmethod
    def pair(cls):
        src = marching_cubes(ball_grid(23.0))
        return src, remesh_uniform(src, 2500)

    def test_count(self, pair):
        src, out = pair
        assert 9000 < src.n_vertices < 11000
        assert 2250 <= out.n_vertices <= 2750

    def test_more_uniform(self, pair):
        src, out = pair
        cv = lambda m: m.edge_lengths().std() / m.edge_lengths().mean()
        assert cv(out) < cv(src)

    def test_close_to_input(self, pair):
        src, out = pair
        assert hausdorff(src, out) <= 2.0 * src.edge_lengths().mean()

    def test_topology_kept(self, pair):
        out = pair[1]
        assert out.is_watertight() and out.euler_characteristic() == 2 and out.volume() > 0


class TestRemeshErrors:
    def test_open_mesh(self):
        m, _ = tri_lattice()
        with pytest.raises(MeshError):
            remesh_uniform(m, 200)

    def test_small_target(self):
        with pytest.raises(MeshError):
            remesh_uniform(icosphere(3), 99)


class TestLosses:
    def test_flat_plane(self):
        m, boundary = tri_lattice()
        ln, le, _ = mesh_losses(m)
        assert ln == pytest.approx(0.0, abs=1e-12)
        assert le == pytest.approx(0.0, abs=1e-12)
        res = laplacian_residuals(m)
        assert np.abs(res[~boundary]).max() < 1e-12

    def test_equal_edges(self):
        m = TriMesh(np.array([[0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0], [0.5, -np.sqrt(3) / 2, 0]]),
                    [[0, 1, 2], [1, 0, 3]])
        assert mesh_losses(m)[1] == pytest.approx(0.0, abs=1e-15)

    def test_hinge(self):
        m = TriMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float),
                    [[0, 1, 2], [1, 0, 3]])
        assert mesh_losses(m)[0] == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_face_named(self):
        m = TriMesh(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]], float),
                    [[0, 1, 3], [0, 2, 1]])
        with pytest.raises(MeshError, match="face 1"):
            mesh_losses(m)

    @settings(max_examples=20)
    @given(st.floats(-np.pi, np.pi), st.floats(-np.pi, np.pi), st.floats(-np.pi, np.pi),
           st.lists(st.floats(-50, 50), min_size=3, max_size=3))
    def test_rigid_invariance(self, a, b, c, t):
        m = icosphere(2, radius=5.0)
        rot = Rotation.from_euler("xyz", [a, b, c]).as_matrix()
        moved = m.with_vertices(m.vertices @ rot.T + np.asarray(t))
        np.testing.assert_allclose(mesh_losses(moved), mesh_losses(m), atol=1e-9)


class TestSmooth:
    def test_plane_fixed_point(self):
        m, boundary = tri_lattice()
        out = smooth_minimize(m, steps=20, fixed=boundary)
        assert np.abs(out.vertices - m.vertices).max() < 1e-9

    def test_fixed_vertices_do_not_move(self, mc_sphere):
        fixed = mc_sphere.vertices[:, 2] > 40
        out = smooth_minimize(mc_sphere, steps=5, fixed=fixed)
        assert np.array_equal(out.vertices[fixed], mc_sphere.vertices[fixed])

    def test_normal_loss_drops_on_mc_sphere(self, mc_sphere):
        out = smooth_minimize(mc_sphere, steps=30)
        assert mesh_losses(out)[0] < mesh_losses(mc_sphere)[0]

    def test_connectivity_and_loss(self, mc_sphere):
        from vesselforge.mesh.smooth import smoothing_loss
        out = smooth_minimize(mc_sphere, steps=20)
        assert np.array_equal(out.faces, mc_sphere.faces)
        assert out.n_vertices == mc_sphere.n_vertices
        assert smoothing_loss(out) <= smoothing_loss(mc_sphere)

    def test_noisy_sphere_denoised(self):
        rng = np.random.default_rng(5)
        clean = icosphere(4, radius=10.0)
        noisy = clean.with_vertices(clean.vertices + rng.uniform(-0.3, 0.3, clean.vertices.shape))
        out = smooth_minimize(noisy, steps=100)
        dev = lambda m: np.abs(np.linalg.norm(m.vertices, axis=1) - 10.0).max()
        assert dev(out) < dev(noisy)


class TestVoxelize:
    def test_centre_in_far_out(self):
        m = icosphere(3, radius=8.0, center=(15.5, 15.5, 15.5))
        lab = voxelize_by_normal(m, VoxelGrid(np.zeros((32, 32, 32))))
        assert lab.data[15, 15, 15] == 1 and lab.data[16, 16, 16] == 1
        assert lab.data[15, 15, 31] == 0 and lab.data[0, 0, 0] == 0

    def test_volume_close(self):
        m = icosphere(3, radius=8.0, center=(15.5, 15.5, 15.5))
        lab = voxelize_by_normal(m, VoxelGrid(np.zeros((32, 32, 32))))
        assert abs(lab.data.sum() - m.volume()) / m.volume() < 0.05

    def test_inward_mesh_rejected(self):
        m = icosphere(2, radius=5.0, center=(8, 8, 8))
        flipped = TriMesh(m.vertices, m.faces[:, ::-1])
        with pytest.raises(MeshError):
            voxelize_by_normal(flipped, VoxelGrid(np.zeros((16, 16, 16))))


class TestObj:
    def test_round_trip(self, tmp_path, mc_sphere):
        path = tmp_path / "m.obj"
        write_obj(mc_sphere, path)
        back = read_obj(path)
        assert np.array_equal(back.faces, mc_sphere.faces)
        assert np.abs(back.vertices - mc_sphere.vertices).max() < 1e-6

    @pytest.mark.parametrize("face", ["f 0 1 2", "f 1 2 9"])
    def test_bad_index(self, tmp_path, face):
        path = tmp_path / "bad.obj"
        path.write_text(f"v 0 0 0\nv 1 0 0\nv 0 1 0\n{face}\n")
        with pytest.raises(MeshError):
            read_obj(path)

    def test_quad_rejected(self, tmp_path):
        path = tmp_path / "quad.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        with pytest.raises(MeshError, match="non-triangle"):
            read_obj(path)


class TestQuality:
    def test_icosphere(self):
        q = quality_report(icosphere(3))
        assert q.watertight and q.euler_characteristic == 2 and q.self_intersections == 0

    def test_single_triangle(self):
        q = quality_report(TriMesh(np.eye(3), [[0, 1, 2]]))
        assert not q.watertight

    def test_equilateral(self):
        m, _ = tri_lattice()
        assert quality_report(m).min_angle_deg == pytest.approx(60.0, abs=1e-9)

    def test_detects_intersection(self):
        a = icosphere(2, radius=5.0)
        b = icosphere(2, radius=5.0, center=(3.1, 0.37, 0.21))
        both = TriMesh(np.vstack([a.vertices, b.vertices]), np.vstack([a.faces, b.faces + a.n_vertices]))
        assert quality_report(both).self_intersections > 0
