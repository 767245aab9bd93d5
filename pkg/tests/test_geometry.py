import numpy as np
import pytest

from nlostk import geometry
from nlostk.errors import DomainError, InvalidPlaneError


class TestAnglesToPoint:
    def test_on_axis(self):
        assert np.allclose(geometry.angles_to_point(0.0, 0.0, 1.0), [0, 0, 1])

    def test_45_degrees(self):
        # Z = sqrt(2)*(1+1)^(-1/2) = 1, X = Z*tan(45 deg) = 1
        p = geometry.angles_to_point(np.deg2rad(45.0), 0.0, np.sqrt(2.0))
        assert np.allclose(p, [1.0, 0.0, 1.0], atol=1e-12)

    def test_norm_equals_depth(self):
        p = geometry.angles_to_point(np.deg2rad(10.0), np.deg2rad(-5.0), 1.0)
        assert abs(np.linalg.norm(p) - 1.0) < 1e-12

    def test_norm_identity_random(self):
        rng = np.random.default_rng(11)
        th = np.deg2rad(rng.uniform(-40, 40, (500, 2)))
        ell = rng.uniform(0.1, 10.0, 500)
        pts = geometry.angles_to_point(th[:, 0], th[:, 1], ell)
        norms = np.linalg.norm(pts, axis=1)
        assert np.max(np.abs(norms - ell) / ell) < 1e-10

    def test_bad_depth(self):
        with pytest.raises(DomainError):
            geometry.angles_to_point(0.0, 0.0, 0.0)

    def test_angle_at_90_deg(self):
        with pytest.raises(DomainError):
            geometry.angles_to_point(np.pi / 2, 0.0, 1.0)

    def test_inverse(self):
        p = geometry.angles_to_point(0.3, -0.2, 2.0)
        tx, ty = geometry.point_to_angles(p)
        assert abs(tx - 0.3) < 1e-12 and abs(ty + 0.2) < 1e-12


class TestBuildWallFrame:
    def test_axis_aligned(self, z1_plane):
        assert np.allclose(np.abs(z1_plane.basis_z), [0, 0, 1])
        assert abs(z1_plane.basis_x @ z1_plane.basis_z) < 1e-12

    def test_tilted_normal(self):
        # X + Z + 1 = 0 passes through (-1, 0, 0)
        plane = geometry.build_wall_frame((1.0, 0.0, 1.0), (-1.0, 0.0, 0.0))
        assert np.allclose(np.abs(plane.basis_z), np.array([1, 0, 1]) / np.sqrt(2))
        gram = plane.basis @ plane.basis.T
        assert np.abs(gram - np.eye(3)).max() < 1e-9

    def test_right_handed_random(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            W = rng.normal(size=3)
            if np.linalg.norm(W) < 0.05:
                continue
            origin = -W / (W @ W)  # closest point to the origin, on the plane
            plane = geometry.build_wall_frame(W, origin)
            assert np.abs(np.cross(plane.basis_x, plane.basis_y) - plane.basis_z).max() < 1e-9
            gram = plane.basis @ plane.basis.T
            assert np.abs(gram - np.eye(3)).max() < 1e-9

    def test_zero_coefficients(self):
        with pytest.raises(InvalidPlaneError):
            geometry.build_wall_frame((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))

    def test_origin_off_plane(self):
        with pytest.raises(InvalidPlaneError):
            geometry.build_wall_frame((0.0, 0.0, -1.0), (0.0, 0.0, 1.5))

    def test_plane_through_origin_rejected(self):
        with pytest.raises(InvalidPlaneError):
            geometry.build_wall_frame((0.0, 0.0, -2000.0), (0.0, 0.0, 5e-4))

    def test_plane_equation_holds_at_origin(self, z1_plane):
        assert abs(z1_plane.plane_value(z1_plane.origin)) < 1e-9


class TestTransforms:
    def test_frame_origin(self, z1_plane):
        assert np.abs(z1_plane.world_to_wall(z1_plane.origin)).max() < 1e-12

    def test_on_plane_z_zero(self, z1_plane):
        p = np.array([0.27, -0.31, 1.0])
        assert abs(z1_plane.world_to_wall(p)[2]) < 1e-9

    def test_round_trip_random(self):
        rng = np.random.default_rng(7)
        plane = geometry.build_wall_frame((0.2, -0.1, -0.9), (0.0, 0.0, 1.0 / 0.9))
        pts = rng.uniform(-3, 3, (1000, 3))
        back = plane.wall_to_world(plane.world_to_wall(pts))
        assert np.abs(back - pts).max() < 1e-12


class TestProjection:
    def test_fixed_point(self, z1_plane):
        s = np.array([0.1, 0.2, 1.0])
        assert np.abs(geometry.project_onto_plane(z1_plane, s) - s).max() < 1e-12

    def test_axis_aligned_projection(self, z1_plane):
        s = np.array([0.3, -0.2, 1.5])
        assert np.allclose(geometry.project_onto_plane(z1_plane, s), [0.3, -0.2, 1.0])

    def test_on_plane_result(self):
        plane = geometry.build_wall_frame((0.4, 0.3, -1.1), (0.0, 0.0, 1.0 / 1.1))
        rng = np.random.default_rng(3)
        s = rng.uniform(-2, 2, (200, 3))
        proj = geometry.project_onto_plane(plane, s)
        assert np.abs(plane.plane_value(proj)).max() < 1e-9
        # residual parallel to the normal
        resid = s - proj
        cross = np.cross(resid, plane.basis_z)
        assert np.abs(cross).max() < 1e-9

    def test_idempotent(self):
        plane = geometry.build_wall_frame((0.4, 0.3, -1.1), (0.0, 0.0, 1.0 / 1.1))
        s = np.array([0.4, -1.2, 2.2])
        once = geometry.project_onto_plane(plane, s)
        twice = geometry.project_onto_plane(plane, once)
        assert np.array_equal(once, twice)


class TestPlaneIO:
    def test_json_round_trip(self, tmp_path, z1_plane):
        path = tmp_path / "plane.json"
        z1_plane.save(path)
        loaded = geometry.RelayPlane.load(path)
        assert loaded.to_dict() == z1_plane.to_dict()
        assert np.abs(loaded.basis - z1_plane.basis).max() < 1e-12
