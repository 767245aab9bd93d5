import numpy as np
import pytest

import nlostk as nk
from nlostk import reconstruction as rc
from nlostk.errors import CoverageError, DomainError, StepFailureError

LO = np.array([-0.4, -0.4, 0.5])
HI = np.array([0.4, 0.4, 1.1])


def make_op(n_points=5, dims=(8, 8, 8), num_bins=3072, seed=0, attenuation=False):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-0.3, 0.3, (n_points, 2))
    return rc.ConfocalOperator(points_xy=xy, dims=dims, lo=LO, hi=HI,
                               bin_width_ps=4.0, num_bins=num_bins,
                               attenuation=attenuation)


class TestOperator:
    def test_zero_maps_to_zero(self):
        op = make_op()
        assert op.forward(np.zeros(op.n_voxels)).sum() == 0.0
        assert op.adjoint(np.zeros((op.n_points, op.num_bins))).sum() == 0.0

    def test_single_voxel_column(self):
        op = make_op(n_points=3, dims=(4, 4, 4))
        f = np.zeros(op.n_voxels)
        f[21] = 1.0
        pred = op.forward(f)
        for s in range(op.n_points):
            assert pred[s].sum() == 1.0
            assert pred[s, op.bins[s, 21]] == 1.0

    def test_forward_matches_dense_oracle_exactly(self):
        op = make_op(n_points=3, dims=(4, 4, 4))
        psi = op.dense_matrix()
        rng = np.random.default_rng(1)
        f = rng.integers(0, 10, op.n_voxels).astype(float)  # integer-exact sums
        dense = (psi @ f).reshape(op.n_points, op.num_bins)
        assert np.array_equal(op.forward(f), dense)

    def test_adjoint_matches_dense_oracle_exactly(self):
        op = make_op(n_points=3, dims=(4, 4, 4))
        psi = op.dense_matrix()
        rng = np.random.default_rng(11)
        y = rng.integers(0, 10, (op.n_points, op.num_bins)).astype(float)
        assert np.array_equal(op.adjoint(y), psi.T @ y.reshape(-1))

    def test_adjoint_identity(self):
        op = make_op(n_points=5, dims=(8, 8, 8))
        rng = np.random.default_rng(2)
        f = rng.random(op.n_voxels)
        y = rng.random((op.n_points, op.num_bins))
        lhs = float(np.vdot(op.forward(f), y))
        rhs = float(np.vdot(f, op.adjoint(y)))
        assert abs(lhs - rhs) / abs(lhs) < 1e-9

    def test_adjoint_identity_with_attenuation(self):
        op = make_op(n_points=4, dims=(6, 6, 6), attenuation=True)
        rng = np.random.default_rng(3)
        f = rng.random(op.n_voxels)
        y = rng.random((op.n_points, op.num_bins))
        lhs = float(np.vdot(op.forward(f), y))
        rhs = float(np.vdot(f, op.adjoint(y)))
        assert abs(lhs - rhs) / abs(lhs) < 1e-9

    def test_single_bin_indicator_back_projects_to_shell(self):
        op = make_op(n_points=2, dims=(6, 6, 6))
        target_bin = op.bins[0, 77]
        y = np.zeros((op.n_points, op.num_bins))
        y[0, target_bin] = 1.0
        vol = op.adjoint(y)
        shell = op.bins[0] == target_bin
        assert np.array_equal(vol > 0, shell)

    def test_coverage_error(self):
        with pytest.raises(CoverageError):
            make_op(num_bins=512)

    def test_operator_matches_renderer(self):
        # The simulator's accumulation and the forward model must bin alike.
        rig = nk.default_rig(num_bins=3072)
        vol = nk.VoxelVolume.empty((6, 6, 6), lo=LO, hi=HI)
        vol.values[:] = np.random.default_rng(4).random((6, 6, 6))
        s_xy = (0.12, -0.2)
        h = nk.render_clean_transient(vol, s_xy, rig)
        op = rc.ConfocalOperator(points_xy=[s_xy], dims=(6, 6, 6), lo=LO, hi=HI,
                                 bin_width_ps=rig.bin_width_ps, num_bins=rig.num_bins)
        assert np.array_equal(op.forward(vol.values.reshape(-1))[0], h.counts)


class TestLossGrad:
    def test_tv_constant_volume(self):
        val, grad = rc.tv_value_grad(np.full((5, 5, 5), 3.7))
        assert val == 0.0
        assert np.all(grad == 0.0)

    def test_tv_single_step(self):
        f = np.zeros((4, 1, 1))
        f[2:] = 1.0
        val, grad = rc.tv_value_grad(f)
        assert val == 1.0
        assert grad[1, 0, 0] == -1.0 and grad[2, 0, 0] == 1.0

    def test_gradient_zero_at_perfect_fit(self):
        op = make_op(n_points=3, dims=(4, 4, 4))
        rng = np.random.default_rng(5)
        f = 0.5 + rng.random(op.n_voxels)
        tau = op.forward(f)
        _, grad, _ = rc.loss_grad(f, tau, op, lam=0.0)
        assert np.abs(grad).max() < 1e-6

    def test_gradient_matches_finite_differences(self):
        op = make_op(n_points=3, dims=(4, 4, 4))
        rng = np.random.default_rng(6)
        f = 0.5 + rng.random(op.n_voxels)
        tau = op.forward(0.4 + rng.random(op.n_voxels)) + 0.1
        _, grad, _ = rc.loss_grad(f, tau, op, lam=0.1)
        h = 1e-5
        for i in rng.choice(op.n_voxels, 16, replace=False):
            fp, fm = f.copy(), f.copy()
            fp[i] += h
            fm[i] -= h
            fd = (rc.loss_grad(fp, tau, op, lam=0.1)[0]
                  - rc.loss_grad(fm, tau, op, lam=0.1)[0]) / (2 * h)
            assert abs(fd - grad[i]) / max(abs(fd), 1e-12) < 1e-5

    def test_negative_inputs_rejected(self):
        op = make_op(n_points=2, dims=(4, 4, 4))
        with pytest.raises(DomainError):
            rc.loss_grad(-np.ones(op.n_voxels), np.zeros((2, op.num_bins)), op)
        with pytest.raises(DomainError):
            rc.loss_grad(np.ones(op.n_voxels), -np.ones((2, op.num_bins)), op)

    def test_scale_equivariance_sign_pattern(self):
        # Two-voxel problem: gradient sign pattern at (k f, k tau) should not
        # depend on k when the data term has a scale-free minimizer.
        op = make_op(n_points=3, dims=(2, 1, 1))
        f = np.array([0.8, 1.4])
        tau = op.forward(np.array([0.5, 1.0]))
        signs = []
        for k in [0.5, 1.0, 2.0, 10.0]:
            _, grad, _ = rc.loss_grad(k * f, k * tau, op, lam=0.0)
            signs.append(np.sign(np.round(grad, 12)))
        for s in signs[1:]:
            assert np.array_equal(s, signs[0])


class TestReconstruct:
    def setup_inverse_crime(self, dims=(8, 8, 8), n_points=12, seed=7):
        rng = np.random.default_rng(seed)
        op = make_op(n_points=n_points, dims=dims, seed=seed)
        f_true = np.zeros(op.n_voxels)
        hot = rng.choice(op.n_voxels, 10, replace=False)
        f_true[hot] = rng.uniform(0.5, 1.5, 10)
        tau = op.forward(f_true)
        return op, f_true, tau

    def test_monotone_trace_and_nonnegative(self):
        op, f_true, tau = self.setup_inverse_crime()
        cfg = rc.ReconConfig(dims=op.dims, lo=LO, hi=HI, lam=0.0, max_iters=60)
        res = rc.reconstruct_opt(tau, op, cfg)
        losses = res.loss_trace[:, 0]
        assert np.all(np.diff(losses) <= 0.0)
        assert res.volume.values.min() >= 0.0

    def test_truth_init_is_fixed_point(self):
        op, f_true, tau = self.setup_inverse_crime()
        cfg = rc.ReconConfig(dims=op.dims, lo=LO, hi=HI, lam=0.0, max_iters=15,
                             init=f_true, eps=1e-12)
        res = rc.reconstruct_opt(tau, op, cfg)
        start = res.loss_trace[0, 0]
        assert np.all(res.loss_trace[:, 0] >= start - 1e-6)
        assert np.abs(res.loss_trace[:, 0] - start).max() < 1e-6

    def test_tv_weight_accounted(self):
        op, f_true, tau = self.setup_inverse_crime()
        cfg = rc.ReconConfig(dims=op.dims, lo=LO, hi=HI, lam=0.5, max_iters=25)
        res = rc.reconstruct_opt(tau, op, cfg)
        loss, data, tv, _ = res.loss_trace[-1]
        assert abs((data + tv) - loss) < 1e-9
        assert tv >= 0.0

    def test_step_failure_diagnosed(self):
        op, f_true, tau = self.setup_inverse_crime()
        cfg = rc.ReconConfig(dims=op.dims, lo=LO, hi=HI, init_step=1e30,
                             max_halvings=0, max_iters=5)
        with pytest.raises(StepFailureError):
            rc.reconstruct_opt(tau, op, cfg)

    def test_bp_peaks_at_single_bright_voxel(self):
        op = make_op(n_points=24, dims=(6, 6, 6), seed=9)
        f = np.zeros(op.n_voxels)
        f[111] = 1.0
        vol = rc.reconstruct_bp(op.forward(f), op)
        assert vol.values.reshape(-1).argmax() == 111
        assert vol.values.max() == 1.0

    def test_bp_empty_is_zero(self):
        op = make_op(n_points=3)
        vol = rc.reconstruct_bp(np.zeros((op.n_points, op.num_bins)), op)
        assert vol.values.sum() == 0.0

    def test_bp_correlates_with_sparse_truth(self):
        rng = np.random.default_rng(10)
        rs = []
        for seed in range(5):
            op = make_op(n_points=20, dims=(6, 6, 6), seed=20 + seed)
            f = np.zeros(op.n_voxels)
            f[rng.choice(op.n_voxels, 8, replace=False)] = 1.0
            bp = rc.reconstruct_bp(op.forward(f), op).values.reshape(-1)
            r = np.corrcoef(bp, f)[0, 1]
            rs.append(r)
        assert all(r > 0.3 for r in rs)

    def test_recovers_sparse_scene(self):
        op, f_true, tau = self.setup_inverse_crime(n_points=30)
        cfg = rc.ReconConfig(dims=op.dims, lo=LO, hi=HI, lam=0.0, max_iters=300)
        res = rc.reconstruct_opt(tau, op, cfg)
        rec = res.volume.values.reshape(-1)
        sup_t = f_true > 0
        sup_r = rec >= 0.5 * rec.max()
        iou = (sup_r & sup_t).sum() / (sup_r | sup_t).sum()
        assert iou >= 0.6


class TestOutputs:
    def test_volume_and_trace_files(self, tmp_path):
        op, f_true, tau = TestReconstruct().setup_inverse_crime()
        cfg = rc.ReconConfig(dims=op.dims, lo=LO, hi=HI, max_iters=10)
        res = rc.reconstruct_opt(tau, op, cfg)
        rc.save_loss_trace_csv(tmp_path / "trace.csv", res)
        lines = (tmp_path / "trace.csv").read_text().strip().splitlines()
        assert lines[0] == "iter,loss,data_term,tv_term,step"
        assert len(lines) == len(res.loss_trace) + 1
        rc.save_mip_pgms(res.volume, str(tmp_path / "vol"))
        for axis in "xyz":
            data = (tmp_path / f"vol_mip_{axis}.pgm").read_bytes()
            assert data.startswith(b"P5\n8 8\n255\n")
