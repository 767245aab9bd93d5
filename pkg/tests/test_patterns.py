import numpy as np
import pytest

import nlostk as nk
from nlostk import patterns
from nlostk.errors import DomainError, FormatError
from tests.conftest import small_rig


class TestGrid:
    def test_two_by_two(self):
        pat = patterns.gen_grid(2, 1.0)
        expect = [(-0.5, 0.5), (0.5, 0.5), (-0.5, -0.5), (0.5, -0.5)]
        assert np.allclose(pat.points, expect)

    def test_sixteen_squared(self):
        pat = patterns.gen_grid(16, 0.8)
        assert len(pat) == 256
        xs = np.unique(np.round(pat.points[:, 0], 12))
        assert np.allclose(np.diff(xs), 0.8 / 15)
        assert np.abs(pat.points.mean(axis=0)).max() < 1e-12

    def test_row_major_from_top_left(self):
        pat = patterns.gen_grid(3, 2.0)
        assert np.allclose(pat.points[0], [-1.0, 1.0])
        assert np.allclose(pat.points[1], [0.0, 1.0])
        assert np.allclose(pat.points[3], [-1.0, 0.0])

    def test_spacing_exact(self):
        pat = patterns.gen_grid(7, 0.9)
        grid = pat.points.reshape(7, 7, 2)
        assert np.allclose(np.diff(grid[:, :, 0], axis=1), 0.9 / 6)
        assert np.allclose(np.diff(grid[:, :, 1], axis=0), -0.9 / 6)

    def test_too_small(self):
        with pytest.raises(DomainError):
            patterns.gen_grid(1, 1.0)


class TestCircles:
    def test_reference_configuration(self):
        pat = patterns.gen_circles(4, 8, 0.4)
        assert len(pat) == 32
        radii = np.linalg.norm(pat.points, axis=1).reshape(4, 8)
        for i, r in enumerate([0.1, 0.2, 0.3, 0.4]):
            assert np.abs(radii[i] - r).max() < 1e-12

    def test_hand_values(self):
        pat = patterns.gen_circles(1, 4, 1.0)
        expect = [(0, 1), (1, 0), (0, -1), (-1, 0)]
        assert np.abs(pat.points - expect).max() < 1e-12

    def test_first_point_on_top(self):
        pat = patterns.gen_circles(3, 5, 0.6)
        pts = pat.points.reshape(3, 5, 2)
        assert np.allclose(pts[:, 0, 0], 0.0, atol=1e-12)
        assert np.allclose(pts[:, 0, 1], [0.2, 0.4, 0.6])


class TestPatternContainer:
    def test_duplicates_rejected(self):
        with pytest.raises(DomainError):
            patterns.ScanPattern(points=[[0, 0], [1, 1], [0, 0]], kind="arbitrary", params={})

    def test_region_check(self):
        pat = patterns.gen_grid(4, 1.0)
        pat.check_region((-0.6, 0.6, -0.6, 0.6))
        with pytest.raises(DomainError):
            pat.check_region((-0.4, 0.4, -0.4, 0.4))
        pat.check_region(lambda x, y: x ** 2 + y ** 2 <= 0.51)

    def test_json_round_trip(self, tmp_path):
        pat = patterns.gen_circles(2, 6, 0.3)
        path = tmp_path / "pat.json"
        pat.save(path)
        loaded = patterns.ScanPattern.load(path)
        assert loaded.kind == pat.kind
        assert loaded.params == pat.params
        assert np.array_equal(loaded.points, pat.points)

    def test_csv_round_trip(self, tmp_path):
        pat = patterns.gen_grid(3, 0.5)
        path = tmp_path / "pat.csv"
        patterns.save_pattern_csv(path, pat)
        loaded = patterns.load_pattern_csv(path)
        assert np.array_equal(loaded.points, pat.points)
        assert loaded.kind == "arbitrary"

    def test_spec_strings(self):
        assert len(patterns.parse_pattern_spec("grid:4x0.6")) == 16
        assert len(patterns.parse_pattern_spec("circles:4,8,0.4")) == 32
        with pytest.raises(FormatError):
            patterns.parse_pattern_spec("grid:banana")
        with pytest.raises(FormatError):
            patterns.parse_pattern_spec("hexagons:3")


class TestCompile:
    def test_center_point(self, z1_plane, identity_galvo):
        pat = patterns.ScanPattern(points=[[0.0, 0.0]], kind="arbitrary", params={})
        comp = patterns.compile_pattern(pat, z1_plane, identity_galvo)
        assert comp.ok
        sp = comp.points[0]
        assert np.allclose(sp.xyz, z1_plane.origin)
        assert np.abs(sp.angles).max() < 1e-12

    def test_wall_z_zero_after_ray_cast(self, identity_galvo):
        plane = nk.build_wall_frame((0.15, -0.1, -0.95), (0.0, 0.0, 1 / 0.95))
        pat = patterns.gen_grid(5, 0.5)
        comp = patterns.compile_pattern(pat, plane, identity_galvo)
        for sp in comp.points:
            ell = np.linalg.norm(sp.xyz)
            p = nk.angles_to_point(sp.angles[0], sp.angles[1], ell)
            assert abs(plane.world_to_wall(p)[2]) < 1e-9

    def test_out_of_range_reported_per_point(self, z1_plane):
        narrow = nk.GalvoModel(eps=np.zeros(2), beta=np.eye(2) * 0.12, v_range=5.0)
        # 50 deg requested angle: tan(50 deg) * 1 m is x ~ 1.19 m on a 1 m wall
        pat = patterns.ScanPattern(points=[[0.0, 0.0], [np.tan(np.deg2rad(50)), 0.0]],
                                   kind="arbitrary", params={})
        comp = patterns.compile_pattern(pat, z1_plane, narrow)
        assert not comp.ok
        assert [i for i, _ in comp.out_of_range] == [1]
        assert len(comp.points) == 2  # order preserved, failure carried in report

    def test_closed_loop_through_rig_truth(self):
        # Compile against the true models, re-scan through the rig, fit the
        # plane to the rig's true coordinates, re-project, and compare.
        rig = small_rig(tilt_deg=10.0)
        pat = patterns.gen_grid(16, 0.8)
        comp = patterns.compile_pattern(pat, rig.plane, rig.galvo)
        assert comp.ok
        noise = nk.NoiseModel(jitter=None, bias=0.0, seed=0, poisson=False)
        _, truths = nk.simulate_dataset(rig, None, comp, noise)
        refit, report = nk.fit_plane(np.array([t.s_world for t in truths]))
        assert report.rmse_m < 1e-9
        desired = np.array([p.xyz for p in comp.points])
        rescanned = nk.project_onto_plane(refit, np.array([t.s_world for t in truths]))
        assert np.linalg.norm(rescanned - desired, axis=1).max() < 1e-6

    def test_serpentine_only_permutes_acquisition(self, z1_plane, identity_galvo):
        pat = patterns.gen_grid(3, 0.4)
        comp = patterns.compile_pattern(pat, z1_plane, identity_galvo, serpentine=True)
        assert np.array_equal(np.sort(comp.acq_order), np.arange(9))
        assert np.array_equal(comp.acq_order[:6], [0, 1, 2, 5, 4, 3])
        stored = np.array([p.xy for p in comp.points])
        assert np.array_equal(stored, pat.points)
