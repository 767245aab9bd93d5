import numpy as np
import pytest

import nlostk as nk
from nlostk.errors import DomainError, HistogramOverflowError
from nlostk.transient import TransientHistogram, counts_fwhm_bins
from tests.conftest import small_rig


def single_voxel_volume(depth=0.8):
    vol = nk.VoxelVolume.empty((1, 1, 1), lo=(-0.01, -0.01, depth - 0.005),
                               hi=(0.01, 0.01, depth + 0.005))
    vol.values[0, 0, 0] = 1.0
    return vol


class TestJitterCurve:
    def test_gaussian_only(self):
        params = nk.JitterParams(mu=100.0, sigma=20.0, gamma_w=0.0)
        t = np.linspace(1.0, 400.0, 400)
        curve = nk.jitter_curve(params, t)
        ref = np.exp(-((t - 100.0) ** 2) / (2 * 20.0 ** 2))
        assert np.abs(curve - ref / ref.sum()).max() < 1e-14

    def test_unit_sum(self):
        t = (np.arange(256) + 0.5) * 4.0
        for params in [nk.JitterParams(), nk.JitterParams(gamma_w=0.0),
                       nk.JitterParams(mu=150, sigma=30, kappa0=20, kappa1=5, gamma_w=1.0)]:
            assert abs(nk.jitter_curve(params, t).sum() - 1.0) < 1e-12

    def test_fwhm_100ps(self):
        # sigma = 42.5 ps gives FWHM 2.355 * 42.5 ~ 100 ps
        kern = nk.jitter_kernel(nk.JitterParams(mu=200, sigma=42.5, gamma_w=0.0), 4.0)
        assert abs(counts_fwhm_bins(kern) * 4.0 - 100.0) <= 4.0

    def test_nonpositive_grid_rejected_with_tail(self):
        with pytest.raises(DomainError):
            nk.jitter_curve(nk.JitterParams(), np.array([0.0, 4.0, 8.0]))
        # pure Gaussian does not evaluate the tail; grid may touch zero
        nk.jitter_curve(nk.JitterParams(gamma_w=0.0), np.array([0.0, 4.0, 8.0]))

    def test_non_negative_after_clipping(self):
        params = nk.JitterParams(mu=300, sigma=30, kappa0=400, kappa1=0.5, gamma_w=2.0)
        t = (np.arange(400) + 0.5) * 4.0
        with pytest.warns(UserWarning):
            curve = nk.jitter_curve(params, t)
        assert curve.min() >= 0.0

    def test_kernel_delta_for_none(self):
        assert np.array_equal(nk.jitter_kernel(None, 4.0), [1.0])


class TestRenderClean:
    def test_single_voxel_bin(self, rig):
        h = nk.render_clean_transient(single_voxel_volume(0.8), (0.0, 0.0), rig)
        # round(2*0.8 / (c * 4 ps)) with c = 299 792 458 m/s
        assert np.argmax(h.counts) == 1334
        assert h.counts[1334] == 1.0
        assert h.total() == 1.0

    def test_empty_volume(self, rig):
        vol = nk.VoxelVolume.empty((4, 4, 4), lo=(-0.1, -0.1, 0.5), hi=(0.1, 0.1, 0.9))
        h = nk.render_clean_transient(vol, (0.0, 0.0), rig)
        assert h.total() == 0.0

    def test_counts_conserved(self, rig):
        rng = np.random.default_rng(0)
        vol = nk.VoxelVolume.empty((6, 6, 6), lo=(-0.2, -0.2, 0.5), hi=(0.2, 0.2, 0.9))
        vol.values[:] = rng.random((6, 6, 6))
        h = nk.render_clean_transient(vol, (0.05, -0.1), rig)
        assert abs(h.total() - vol.values.sum()) < 1e-9

    def test_linear_in_albedo(self, rig):
        rng = np.random.default_rng(1)
        lo, hi = (-0.2, -0.2, 0.5), (0.2, 0.2, 0.9)
        a = nk.VoxelVolume(values=rng.random((5, 5, 5)), lo=lo, hi=hi)
        b = nk.VoxelVolume(values=rng.random((5, 5, 5)), lo=lo, hi=hi)
        ab = nk.VoxelVolume(values=a.values + b.values, lo=lo, hi=hi)
        ha = nk.render_clean_transient(a, (0.1, 0.0), rig).counts
        hb = nk.render_clean_transient(b, (0.1, 0.0), rig).counts
        hab = nk.render_clean_transient(ab, (0.1, 0.0), rig).counts
        assert np.abs(hab - (ha + hb)).max() < 1e-12

    def test_monotone_distance(self, rig):
        from nlostk.timebins import distance_to_bin
        d = np.sort(np.random.default_rng(3).uniform(0.3, 1.2, 100))
        bins = distance_to_bin(d, rig.bin_width_ps)
        assert np.all(np.diff(bins) >= 0)

    def test_overflow_names_voxel(self):
        rig = small_rig(num_bins=64)
        with pytest.raises(HistogramOverflowError, match="voxel"):
            nk.render_clean_transient(single_voxel_volume(0.8), (0.0, 0.0), rig)

    def test_attenuation_weights_fall_with_distance(self, rig):
        near = nk.render_clean_transient(single_voxel_volume(0.5), (0.0, 0.0), rig,
                                         attenuation=True).total()
        far = nk.render_clean_transient(single_voxel_volume(1.0), (0.0, 0.0), rig,
                                        attenuation=True).total()
        assert near > far > 0


class TestSpadNoise:
    def test_bias_mean(self):
        clean = TransientHistogram(counts=np.zeros(4096), bin_width_ps=4.0)
        noise = nk.NoiseModel(jitter=None, bias=2.0, seed=9)
        out = nk.apply_spad_noise(clean, noise)
        assert abs(out.counts.mean() - 2.0) < 3.0 * np.sqrt(2.0 / 4096)

    def test_delta_kernel_poisson_mean(self):
        clean = TransientHistogram(counts=np.full(64, 25.0), bin_width_ps=4.0)
        means = []
        for seed in range(100):
            noise = nk.NoiseModel(jitter=None, bias=0.0, seed=seed)
            means.append(nk.apply_spad_noise(clean, noise).counts.mean())
        # CLT bound: sd of the grand mean is sqrt(25 / (64*100))
        assert abs(np.mean(means) - 25.0) < 3.0 * np.sqrt(25.0 / 6400)

    def test_same_seed_identical(self):
        clean = TransientHistogram(counts=np.linspace(0, 30, 256), bin_width_ps=4.0)
        noise = nk.NoiseModel(bias=1.0, seed=123)
        a = nk.apply_spad_noise(clean, noise)
        b = nk.apply_spad_noise(clean, noise)
        assert np.array_equal(a.counts, b.counts)

    def test_expected_counts_conserved(self):
        counts = np.zeros(512)
        counts[100] = 1000.0
        clean = TransientHistogram(counts=counts, bin_width_ps=4.0)
        noise = nk.NoiseModel(bias=0.5, seed=0, poisson=False)
        out = nk.apply_spad_noise(clean, noise)
        assert abs(out.total() - (1000.0 + 0.5 * 512)) < 1e-9

    def test_counts_are_integers(self):
        clean = TransientHistogram(counts=np.full(64, 3.7), bin_width_ps=4.0)
        out = nk.apply_spad_noise(clean, nk.NoiseModel(jitter=None, bias=0.1, seed=4))
        assert out.counts.dtype == np.int64
        assert np.all(out.counts >= 0)


class TestRigCapture:
    def test_empty_scene_gamma_closure(self, rig):
        noise = nk.NoiseModel(bias=0.0, seed=5)
        h, truth = nk.rig_capture(rig, None, (0.5, -0.5), noise)
        est = h.counts.sum()  # all mass is the blurred direct return
        assert abs(est - truth.gamma) < 4.0 * np.sqrt(truth.gamma)

    def test_same_seed_identical(self, rig):
        noise = nk.NoiseModel(bias=1.0, seed=17)
        vol = single_voxel_volume()
        a, _ = nk.rig_capture(rig, vol, (0.2, 0.1), noise)
        b, _ = nk.rig_capture(rig, vol, (0.2, 0.1), noise)
        assert np.array_equal(a.counts, b.counts)

    def test_tilted_wall_los_bins_match_geometry(self):
        from nlostk.timebins import distance_to_bin
        rig = small_rig(tilt_deg=10.0)
        comp = nk.compile_pattern(nk.gen_grid(4, 0.8), rig.plane, rig.galvo)
        noise = nk.NoiseModel(jitter=None, bias=0.0, seed=0, poisson=False)
        for sp in comp.points:
            h, truth = nk.rig_capture(rig, None, sp.voltages, noise)
            expect = int(distance_to_bin(np.linalg.norm(truth.s_world), rig.bin_width_ps))
            assert truth.los_bin == expect
            assert np.argmax(h.counts) == expect

    def test_truth_point_on_plane(self, rig):
        noise = nk.NoiseModel(jitter=None, bias=0.0, seed=0, poisson=False)
        _, truth = nk.rig_capture(rig, None, (1.5, -2.0), noise)
        assert abs(rig.plane.plane_value(truth.s_world)) < 1e-9
        assert abs(truth.s_wall[2]) < 1e-9

    def test_nlos_shifted_by_los_bin(self, rig):
        noise = nk.NoiseModel(jitter=None, bias=0.0, seed=0, poisson=False)
        vol = single_voxel_volume(0.8)
        h, truth = nk.rig_capture(rig, vol, (0.0, 0.0), noise)
        nlos_bins = np.nonzero(h.counts)[0]
        assert truth.los_bin in nlos_bins
        clean = nk.render_clean_transient(vol, truth.s_wall[:2], rig)
        expect = truth.los_bin + np.argmax(clean.counts)
        others = nlos_bins[nlos_bins != truth.los_bin]
        assert list(others) == [expect]

    def test_flat_gamma_override(self):
        rig = small_rig(gamma_fn=lambda s: 123.0)
        noise = nk.NoiseModel(jitter=None, bias=0.0, seed=0, poisson=False)
        _, t1 = nk.rig_capture(rig, None, (0.0, 0.0), noise)
        _, t2 = nk.rig_capture(rig, None, (2.0, 2.0), noise)
        assert t1.gamma == t2.gamma == 123.0


class TestSimulateDataset:
    def test_shape_and_determinism(self, rig):
        comp = nk.compile_pattern(nk.gen_grid(3, 0.5), rig.plane, rig.galvo)
        noise = nk.NoiseModel(bias=1.0, seed=2)
        ds1, truths = nk.simulate_dataset(rig, None, comp, noise)
        ds2, _ = nk.simulate_dataset(rig, None, comp, noise)
        assert ds1.counts.shape == (9, rig.num_bins)
        assert np.array_equal(ds1.counts, ds2.counts)
        assert len(truths) == 9

    def test_threaded_matches_sequential(self, rig):
        comp = nk.compile_pattern(nk.gen_grid(3, 0.5), rig.plane, rig.galvo)
        noise = nk.NoiseModel(bias=1.0, seed=2)
        seq, _ = nk.simulate_dataset(rig, None, comp, noise, threads=1)
        par, _ = nk.simulate_dataset(rig, None, comp, noise, threads=4)
        assert np.array_equal(seq.counts, par.counts)

    def test_doubling_photon_scale_doubles_gamma(self):
        comp_rig = small_rig(photon_scale=2e3)
        comp = nk.compile_pattern(nk.gen_grid(3, 0.5), comp_rig.plane, comp_rig.galvo)
        noise = nk.NoiseModel(jitter=None, bias=0.0, seed=0, poisson=False)
        _, t1 = nk.simulate_dataset(comp_rig, None, comp, noise)
        rig2 = small_rig(photon_scale=4e3)
        _, t2 = nk.simulate_dataset(rig2, None, comp, noise)
        g1 = np.array([t.gamma for t in t1])
        g2 = np.array([t.gamma for t in t2])
        assert np.abs(g2 / g1 - 2.0).max() < 1e-12
