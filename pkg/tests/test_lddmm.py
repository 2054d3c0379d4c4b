import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from vesselforge.lddmm import (
    ChebError, ChebPredictorConfig, DeformLossConfig, FlowConfig, OptimConfig, ScalingGate,
    ShootingError, ShootingState, cheb_predict_momenta, farthest_point_sample, gauss_kernel,
    hamiltonian, hamiltonian_rhs, init_cheb_weights, kernel_matrix, misalignment_energy,
    optimize_momenta, scaling_field, shoot, shoot_and_advect, total_loss, velocity_at,
    write_history_csv, write_state_json,
)
from vesselforge.lddmm.cheb import cheb_vertex_field, zero_cheb_weights
from vesselforge.lddmm.optimize import DeformProblem
from vesselforge.mesh import TriMesh, icosphere, marching_cubes, remesh_uniform
from vesselforge.phantom import Cap, InletOutletSpec, analytic_surface, make_phantom, straight_tube_spec
from vesselforge.volume import VoxelGrid, gradient_magnitude_field

from shapes import tri_lattice


def random_state(rng, n, sigma=5.0, spread=6.0, xi_max=1.0):
    return ShootingState(rng.uniform(-spread, spread, (n, 3)), rng.uniform(-xi_max, xi_max, (n, 3)), sigma)


class TestSampling:
    def test_all(self, rng):
        p = rng.normal(size=(15, 3))
        assert sorted(farthest_point_sample(p, 15)) == list(range(15))

    def test_segment_endpoints(self):
        p = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float)
        assert list(farthest_point_sample(p, 2, start_index=0)) == [0, 2]

    def test_too_many(self):
        with pytest.raises(ValueError):
            farthest_point_sample(np.zeros((3, 3)), 4)

    def test_spread_beats_random(self, rng):
        def min_pair(q):
            d = np.linalg.norm(q[:, None] - q[None], axis=2)
            return d[np.triu_indices(len(q), 1)].min()

        fps, rnd = [], []
        for _ in range(20):
            cloud = rng.uniform(0, 10, (300, 3))
            fps.append(min_pair(cloud[farthest_point_sample(cloud, 30)]))
            rnd.append(min_pair(cloud[rng.choice(300, 30, replace=False)]))
        assert np.mean(fps) >= np.mean(rnd)


class TestKernel:
    def test_values(self):
        assert gauss_kernel([1, 2, 3], [1, 2, 3], 2.0) == 1.0
        assert gauss_kernel([0, 0, 0], [2.0, 0, 0], 2.0) == pytest.approx(math.exp(-1), abs=1e-15)

    def test_matrix(self, rng):
        K = kernel_matrix(rng.normal(size=(20, 3)) * 4, 3.0)
        assert np.abs(K - K.T).max() <= 1e-15
        np.testing.assert_array_equal(np.diag(K), 1.0)

    def test_velocity(self):
        st_ = ShootingState([[0, 0, 0]], [[1, 0, 0]], 2.0)
        np.testing.assert_allclose(velocity_at([0, 0, 0], st_), [[1, 0, 0]])
        np.testing.assert_allclose(velocity_at([0, 2.0, 0], st_), [[math.exp(-1), 0, 0]], atol=1e-15)

    def test_mirror_symmetry(self):
        # mirror plane x = 0; momenta mirrored
        st_ = ShootingState([[-1, 0.3, 0], [1, 0.3, 0]], [[0.4, 0.2, -0.5], [-0.4, 0.2, -0.5]], 2.0)
        v = velocity_at(np.array([[0, 1.0, 2.0], [0, -3, 0.5]]), st_)
        np.testing.assert_allclose(v[:, 0], 0.0, atol=1e-15)

    def test_state_validation(self):
        with pytest.raises(ShootingError):
            ShootingState(np.zeros((2, 3)), np.zeros((3, 3)), 1.0)
        with pytest.raises(ShootingError):
            ShootingState(np.zeros((2, 3)), np.zeros((2, 3)), 0.0)
        with pytest.raises(ShootingError):
            ShootingState(np.zeros((0, 3)), np.zeros((0, 3)), 1.0)
        with pytest.raises(ShootingError):
            ShootingState([[np.nan, 0, 0]], [[0, 0, 0]], 1.0)
        with pytest.raises(ShootingError):
            FlowConfig(steps=0)


class TestHamiltonian:
    def test_single_point(self):
        _, dxi = hamiltonian_rhs(ShootingState([[1, 2, 3]], [[0.5, -1, 2]], 3.0))
        np.testing.assert_array_equal(dxi, 0.0)

    @given(st.integers(0, 2 ** 31 - 1), st.integers(2, 12))
    def test_momentum_rate_sums_to_zero(self, seed, n):
        st_ = random_state(np.random.default_rng(seed), n)
        _, dxi = hamiltonian_rhs(st_)
        assert np.abs(dxi.sum(axis=0)).max() < 1e-12

    def test_rhs_matches_fd_of_h(self, rng):
        st_ = random_state(rng, 6, sigma=4.0)
        ds, dxi = hamiltonian_rhs(st_)
        h = 1e-5
        fd_s = np.zeros_like(dxi)
        fd_xi = np.zeros_like(ds)
        for i in range(6):
            for k in range(3):
                for target, out in ((st_.control_points, fd_s), (st_.momenta, fd_xi)):
                    up, dn = target.copy(), target.copy()
                    up[i, k] += h
                    dn[i, k] -= h
                    if target is st_.control_points:
                        hu = hamiltonian(ShootingState(up, st_.momenta, st_.sigma))
                        hd = hamiltonian(ShootingState(dn, st_.momenta, st_.sigma))
                    else:
                        hu = hamiltonian(ShootingState(st_.control_points, up, st_.sigma))
                        hd = hamiltonian(ShootingState(st_.control_points, dn, st_.sigma))
                    out[i, k] = (hu - hd) / (2 * h)
        assert np.abs(dxi + fd_s).max() / np.abs(dxi).max() < 1e-6
        assert np.abs(ds - fd_xi).max() / np.abs(ds).max() < 1e-6


class TestShooting:
    def test_single_particle_straight_line(self):
        s0, xi = np.array([[1.0, -2.0, 0.5]]), np.array([[0.7, 0.2, -1.1]])
        s1, xi1 = shoot(ShootingState(s0, xi, 2.0))
        assert np.abs(s1 - (s0 + xi)).max() < 1e-12
        assert np.abs(xi1 - xi).max() < 1e-12

    def test_zero_momenta_identity(self):
        mesh = icosphere(2, radius=5.0)
        st_ = ShootingState(mesh.vertices[:10], np.zeros((10, 3)), 3.0)
        out, _ = shoot_and_advect(mesh, st_)
        np.testing.assert_array_equal(out.vertices, mesh.vertices)

    def test_trajectory_length(self, rng):
        mesh = icosphere(1, radius=5.0)
        _, traj = shoot_and_advect(mesh, random_state(rng, 4), flow=FlowConfig(steps=7))
        assert len(traj) == 8

    def test_hamiltonian_drift(self, rng):
        for _ in range(10):
            sigma = rng.uniform(5.0, 10.0)
            st_ = random_state(rng, 10, sigma=sigma, spread=8.0)
            s1, xi1 = shoot(st_)
            h0 = hamiltonian(st_)
            h1 = hamiltonian(ShootingState(s1, xi1, sigma))
            assert abs(h1 - h0) / h0 < 1e-3

    def test_total_momentum_drift(self, rng):
        st_ = random_state(rng, 10, sigma=5.0)
        _, xi1 = shoot(st_)
        assert np.abs(xi1.sum(0) - st_.momenta.sum(0)).max() < 1e-6

    def test_second_order(self, rng):
        st_ = random_state(rng, 5, sigma=3.0, spread=3.0, xi_max=2.0)
        ref, _ = shoot(st_, FlowConfig(steps=2048))
        e1 = np.abs(shoot(st_, FlowConfig(steps=16))[0] - ref).max()
        e2 = np.abs(shoot(st_, FlowConfig(steps=32))[0] - ref).max()
        assert 1.7 <= math.log2(e1 / e2) <= 2.3

    def test_no_face_flips(self, rng):
        mesh = icosphere(3, radius=10.0)
        sigma = 5.0
        idx = farthest_point_sample(mesh.vertices, 40)
        st_ = ShootingState(mesh.vertices[idx], rng.uniform(-sigma / 4, sigma / 4, (40, 3)), sigma)
        out, _ = shoot_and_advect(mesh, st_)
        dots = np.einsum("ij,ij->i", out.face_normals, mesh.face_normals)
        assert dots.min() > 0

    def test_gate_freezes_caps(self, rng):
        mesh = icosphere(2, radius=5.0)
        io = InletOutletSpec((Cap((5.0, 0.0, 0.0), 2.0, (1.0, 0.0, 0.0)),), buffer=1.0)
        gate = ScalingGate(io)
        st_ = ShootingState(mesh.vertices[::8], rng.uniform(-1, 1, (len(mesh.vertices[::8]), 3)), 3.0)
        out, _ = shoot_and_advect(mesh, st_, gate)
        frozen = gate.alpha(mesh.vertices) == 0
        assert frozen.any()
        np.testing.assert_array_equal(out.vertices[frozen], mesh.vertices[frozen])
        assert np.abs(out.vertices[~frozen] - mesh.vertices[~frozen]).max() > 0


class TestGate:
    IO = InletOutletSpec((Cap((0.0, 0.0, 0.0), 2.0, (1.0, 0.0, 0.0)),), buffer=1.5)

    def test_branches(self):
        a = scaling_field([[0, 0, 0], [2.0, 0, 0], [0, 2.0 + 4.5 - 1e-12, 0], [0, 0, 2.0 + 4.5], [20, 0, 0]], self.IO)
        assert a[0] == 0.0 and a[1] == 0.0
        assert a[2] == pytest.approx(1 - math.exp(-4.5), abs=1e-9)
        assert a[3] == 1.0 and a[4] == 1.0

    def test_range_and_minimum(self, rng):
        io = InletOutletSpec((Cap((0.0, 0.0, 0.0), 2.0, (1.0, 0.0, 0.0)),
                              Cap((5.0, 0.0, 0.0), 1.0, (1.0, 0.0, 0.0))), buffer=1.0)
        p = rng.uniform(-5, 10, (500, 3))
        a = scaling_field(p, io)
        assert a.min() >= 0 and a.max() <= 1
        single = [scaling_field(p, InletOutletSpec((c,), buffer=1.0)) for c in io.caps]
        np.testing.assert_array_equal(a, np.minimum(*single))


def ball_field(radius=8.0, n=32):
    g = np.indices((n, n, n)).transpose(1, 2, 3, 0) - (n - 1) / 2
    img = VoxelGrid(400.0 * (np.linalg.norm(g, axis=-1) <= radius))
    from scipy import ndimage
    return gradient_magnitude_field(img.with_data(ndimage.gaussian_filter(img.data, 1.5)))[0]


class TestEnergy:
    def test_constant_field(self):
        pts = np.random.default_rng(0).uniform(2, 8, (100, 3))
        assert misalignment_energy(pts, VoxelGrid(np.full((10, 10, 10), 2.0))) == pytest.approx(-math.log(200), abs=1e-12)

    def test_zero_field_floor(self):
        pts = np.random.default_rng(0).uniform(2, 8, (100, 3))
        assert misalignment_energy(pts, VoxelGrid(np.zeros((10, 10, 10)))) == pytest.approx(-math.log(1e-8))

    def test_ridge_lower_than_displaced(self):
        spec = straight_tube_spec(radius=5.0, noise_sd=0.0, blur_sigma=1.0)
        img, _, _ = make_phantom(spec)
        G = gradient_magnitude_field(img)[0]
        on = analytic_surface(spec)
        off = analytic_surface(straight_tube_spec(radius=7.0, noise_sd=0.0, blur_sigma=1.0))
        # compare per-vertex means so vertex counts do not matter
        e_on = misalignment_energy(on, G) + math.log(on.n_vertices)
        e_off = misalignment_energy(off, G) + math.log(off.n_vertices)
        assert e_on < e_off

    def test_weights(self):
        mesh = icosphere(2, radius=7.0, center=(15.5, 15.5, 15.5))
        G = ball_field()
        total, terms = total_loss(mesh, G, DeformLossConfig(w1=1.5, w2=0.0, w3=0.0, w4=0.0))
        assert total == 1.5 * terms["misalign"]

    def test_flat_plane(self):
        m, _ = tri_lattice()
        m = m.with_vertices(m.vertices + [2.0, 2.0, 4.0])
        G = VoxelGrid(np.full((12, 12, 12), 3.0))
        cfg = DeformLossConfig()
        total, terms = total_loss(m, G, cfg)
        assert terms["normal"] == pytest.approx(0.0, abs=1e-14)
        assert total == pytest.approx(cfg.w1 * terms["misalign"] + cfg.w3 * terms["edge"]
                                      + cfg.w4 * terms["laplacian"], abs=1e-14)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DeformLossConfig(w2=-1.0)
        with pytest.raises(ValueError):
            DeformLossConfig(eps=0.0)


class TestGradients:
    def test_total_loss_gradient_fd(self):
        mesh = remesh_uniform(icosphere(3, radius=6.0, center=(15.5, 15.5, 15.5)), 200)
        assert 180 <= mesh.n_vertices <= 220
        prob = DeformProblem(mesh, ball_field(), n_control=5, sigma=4.0)
        rng = np.random.default_rng(2)
        xi = torch.tensor(rng.uniform(-0.5, 0.5, (5, 3)), requires_grad=True)
        total, _ = prob.loss(xi)
        (g,) = torch.autograd.grad(total, xi)
        h = 1e-4
        base = xi.detach()
        fd = np.zeros((5, 3))
        with torch.no_grad():
            for i in range(5):
                for k in range(3):
                    up, dn = base.clone(), base.clone()
                    up[i, k] += h
                    dn[i, k] -= h
                    fd[i, k] = (float(prob.loss(up)[0]) - float(prob.loss(dn)[0])) / (2 * h)
        err = np.abs(fd - g.numpy()).max() / np.abs(g.numpy()).max()
        assert err < 1e-4


class TestOptimize:
    @pytest.fixture(scope="class")
    @classmethod
    def setup_case(cls):
        spec = straight_tube_spec(radius=5.0, dims=(32, 32, 32), margin=4.0, noise_sd=0.0, blur_sigma=1.0)
        img, label, io = make_phantom(spec)
        G = gradient_magnitude_field(img)[0]
        inner = straight_tube_spec(radius=3.5, dims=(32, 32, 32), margin=4.0)
        _, inner_label, _ = make_phantom(inner)
        mesh = remesh_uniform(marching_cubes(inner_label.with_data(np.pad(inner_label.data, 0))), 400)
        return mesh, G, io

    def test_zero_epochs_identity(self, setup_case):
        mesh, G, io = setup_case
        out, state, hist = optimize_momenta(mesh, G, ScalingGate(io), opt=OptimConfig(epochs=0, n_control=20))
        np.testing.assert_array_equal(out.vertices, mesh.vertices)
        assert hist == [] and np.all(state.momenta == 0)

    def test_short_run(self, setup_case, tmp_path):
        mesh, G, io = setup_case
        gate = ScalingGate(io)
        opt = OptimConfig(epochs=15, n_control=30, lr=0.1)
        out, state, hist = optimize_momenta(mesh, G, gate, opt=opt)
        assert len(hist) == 15
        assert misalignment_energy(out, G) < misalignment_energy(mesh, G)
        frozen = gate.alpha(mesh.vertices) == 0
        assert np.abs(out.vertices[frozen] - mesh.vertices[frozen]).max(initial=0.0) <= 1e-9
        write_history_csv(hist, tmp_path / "loss.csv")
        lines = (tmp_path / "loss.csv").read_text().splitlines()
        assert lines[0] == "epoch,total,misalign,normal,edge,laplacian" and len(lines) == 16
        write_state_json(state, tmp_path / "state.json", gate)
        assert "gate" in (tmp_path / "state.json").read_text()

    def test_init_momenta_shape(self, setup_case):
        mesh, G, _ = setup_case
        with pytest.raises(ShootingError):
            optimize_momenta(mesh, G, opt=OptimConfig(epochs=1, n_control=10), init_momenta=np.zeros((3, 3)))

    def test_default_sigma(self, setup_case):
        mesh, G, _ = setup_case
        prob = DeformProblem(mesh, G, n_control=10)
        assert prob.sigma == pytest.approx(0.05 * mesh.bbox_diagonal())


class TestCheb:
    MESH = icosphere(2, radius=4.0)

    def test_permutation_equivariance(self, rng):
        cfg = ChebPredictorConfig(k_cheb=3, hidden=8)
        w = init_cheb_weights(cfg)
        perm = rng.permutation(self.MESH.n_vertices)
        inv = np.argsort(perm)
        permuted = TriMesh(self.MESH.vertices[perm], inv[self.MESH.faces])
        a = cheb_vertex_field(self.MESH, cfg, w)
        b = cheb_vertex_field(permuted, cfg, w)
        np.testing.assert_allclose(b, a[perm], atol=1e-10)

    def test_order_one_is_linear(self, rng):
        cfg = ChebPredictorConfig(k_cheb=1, hidden=4, activation="none")
        w = init_cheb_weights(cfg)
        out = cheb_vertex_field(self.MESH, cfg, w)
        # a single 3x3 matrix reproduces every vertex
        A, *_ = np.linalg.lstsq(self.MESH.vertices, out, rcond=None)
        np.testing.assert_allclose(self.MESH.vertices @ A, out, atol=1e-10)

    def test_zero_weights(self):
        cfg = ChebPredictorConfig()
        m = cheb_predict_momenta(self.MESH, cfg, zero_cheb_weights(cfg), [0, 5, 9])
        assert m.shape == (3, 3) and np.all(m == 0)
        out, _ = shoot_and_advect(self.MESH, ShootingState(self.MESH.vertices[[0, 5, 9]], m, 2.0))
        np.testing.assert_array_equal(out.vertices, self.MESH.vertices)

    def test_disconnected(self):
        a, b = icosphere(1), icosphere(1, center=(5, 0, 0))
        both = TriMesh(np.vstack([a.vertices, b.vertices]), np.vstack([a.faces, b.faces + a.n_vertices]))
        cfg = ChebPredictorConfig()
        with pytest.raises(ChebError):
            cheb_vertex_field(both, cfg, init_cheb_weights(cfg))

    def test_bad_weights(self):
        cfg = ChebPredictorConfig()
        w = init_cheb_weights(cfg)
        w["out.w"] = np.zeros((2, 2, 2))
        with pytest.raises(ChebError):
            cheb_vertex_field(self.MESH, cfg, w)
        with pytest.raises(ChebError):
            ChebPredictorConfig(k_cheb=0)
