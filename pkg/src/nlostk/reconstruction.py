"""Matrix-free confocal forward operator and Poisson+TV reconstruction.

The forward model is linear: each voxel's albedo lands in the time bin of
its round-trip distance from each scan point (shading and occlusion are
taken as unity, matching the data after gamma normalization). The adjoint
scatters measurements back along the same mapping, which is plain
back-projection. Reconstruction minimizes the negative Poisson
log-likelihood plus anisotropic total variation by projected gradient
descent with Armijo backtracking.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import CoverageError, DomainError, StepFailureError
from .pgm import write_pgm
from .scenes import VoxelVolume
from .simulator import _attenuation_weights
from .timebins import distance_to_bin


@dataclass
class ReconConfig:
    """Knobs of the solver; defaults follow the reference pipeline."""

    dims: tuple = (32, 32, 32)
    lo: np.ndarray = field(default_factory=lambda: np.array([-0.4, -0.4, 0.5]))
    hi: np.ndarray = field(default_factory=lambda: np.array([0.4, 0.4, 1.1]))
    lam: float = 0.0              # TV weight
    max_iters: int = 1000
    eps: float = 1e-9             # floor inside ln and the ratio
    attenuation: bool = False
    init: object = "bp"           # "bp" | "zero" | explicit start volume (array)
    init_step: float | None = None  # default 1 / power-method estimate
    backtrack: float = 0.5
    armijo_c: float = 1e-4
    max_halvings: int = 30
    tol: float = 1e-7             # relative loss change ...
    tol_window: int = 10          # ... over this many iterations
    step_growth: float = 1.5      # retry a slightly larger step each iteration

    def __post_init__(self):
        if self.lam < 0:
            raise DomainError("TV weight must be non-negative")
        if self.max_iters < 1:
            raise DomainError("need at least one iteration")
        if self.eps <= 0:
            raise DomainError("epsilon floor must be positive")


class ConfocalOperator:
    """Linear map between a voxel volume and per-point transients.

    Bin indices (and optional shading weights) are precomputed per
    (scan point, voxel) pair. ``forward`` accumulates voxel values into
    bins; ``adjoint`` is its exact transpose. Volumes are handled flattened
    in C order of (nx, ny, nz) arrays.
    """

    def __init__(self, points_xy, dims, lo, hi, bin_width_ps, num_bins,
                 attenuation=False):
        self.dims = tuple(int(d) for d in dims)
        self.lo = np.asarray(lo, float)
        self.hi = np.asarray(hi, float)
        self.bin_width_ps = float(bin_width_ps)
        self.num_bins = int(num_bins)
        self.attenuation = bool(attenuation)
        xy = np.asarray(points_xy, float).reshape(-1, 2)
        self.points = np.column_stack([xy, np.zeros(len(xy))])
        self.n_points = len(xy)
        self.n_voxels = int(np.prod(self.dims))

        vol = VoxelVolume.empty(self.dims, self.lo, self.hi)
        centers = vol.centers_flat()
        bins = np.empty((self.n_points, self.n_voxels), np.int32)
        weights = np.empty((self.n_points, self.n_voxels)) if attenuation else None
        for s in range(self.n_points):
            d = np.linalg.norm(centers - self.points[s], axis=1)
            b = distance_to_bin(d, self.bin_width_ps)
            if b.max() >= self.num_bins:
                raise CoverageError(
                    f"voxel at distance {d.max():.3f} m maps to bin {int(b.max())} "
                    f">= {self.num_bins}; histogram does not cover the volume")
            bins[s] = b
            if attenuation:
                weights[s] = _attenuation_weights(centers, self.points[s])
        self.bins = bins
        self.weights = weights
        # Flattened (point, bin) index for single-call scatter/gather.
        self._flat_bins = (bins + (np.arange(self.n_points, dtype=np.int64)[:, None]
                                   * self.num_bins)).ravel()

    def forward(self, f):
        """Predicted transients, shape (n_points, num_bins); linear in f."""
        flat = np.asarray(f, float).reshape(-1)
        if flat.size != self.n_voxels:
            raise DomainError(f"expected {self.n_voxels} voxel values, got {flat.size}")
        vals = np.tile(flat, self.n_points)
        if self.attenuation:
            vals = vals * self.weights.ravel()
        out = np.bincount(self._flat_bins, weights=vals,
                          minlength=self.n_points * self.num_bins)
        return out.reshape(self.n_points, self.num_bins)

    def adjoint(self, y):
        """Transpose of ``forward``: per-voxel gather of y at the voxel's bins."""
        y = np.asarray(y, float)
        if y.shape != (self.n_points, self.num_bins):
            raise DomainError(f"expected shape {(self.n_points, self.num_bins)}, got {y.shape}")
        gathered = y.ravel()[self._flat_bins].reshape(self.n_points, self.n_voxels)
        if self.attenuation:
            gathered = gathered * self.weights
        return gathered.sum(axis=0)

    def dense_matrix(self):
        """Materialized (n_points*num_bins, n_voxels) matrix; small cases only."""
        total = self.n_points * self.num_bins * self.n_voxels
        if total > 5e7:
            raise DomainError("dense operator too large to materialize")
        psi = np.zeros((self.n_points * self.num_bins, self.n_voxels))
        w = self.weights if self.attenuation else np.ones((self.n_points, self.n_voxels))
        cols = np.arange(self.n_voxels)
        for s in range(self.n_points):
            np.add.at(psi, (s * self.num_bins + self.bins[s], cols), w[s])
        return psi

    def norm_estimate(self, iters=10, seed=0):
        """Power-method estimate of ||Psi^T Psi||."""
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(self.n_voxels)
        v /= np.linalg.norm(v)
        lam = 1.0
        for _ in range(iters):
            w = self.adjoint(self.forward(v))
            lam = np.linalg.norm(w)
            if lam == 0:
                return 1.0
            v = w / lam
        return float(lam)


def tv_value_grad(f3):
    """Anisotropic total variation and a subgradient (forward differences,
    Neumann boundary, sign(0) = 0)."""
    val = 0.0
    grad = np.zeros_like(f3)
    for axis in range(3):
        d = np.diff(f3, axis=axis)
        val += np.abs(d).sum()
        s = np.sign(d)
        head = [slice(None)] * 3
        tail = [slice(None)] * 3
        head[axis] = slice(0, -1)
        tail[axis] = slice(1, None)
        grad[tuple(head)] -= s
        grad[tuple(tail)] += s
    return float(val), grad


def loss_grad(f, tau, op, lam=0.0, eps=1e-9):
    """Negative Poisson log-likelihood (constant term dropped) plus TV.

        loss = sum_i [ (Psi f)_i - tau_i ln((Psi f)_i + eps) ] + lam TV(f)
        grad = Psi^T (1 - tau / (Psi f + eps)) + lam dTV(f)

    Returns (loss, grad_flat, data_term). f and tau must be non-negative.
    """
    f = np.asarray(f, float).reshape(-1)
    tau = np.asarray(tau, float)
    if np.any(f < 0) or np.any(tau < 0):
        raise DomainError("f and tau must be non-negative")
    pred = op.forward(f)
    data, dgrad = _data_loss_grad(pred, tau, op, eps)
    loss = data
    grad = dgrad
    if lam > 0:
        tv, tv_grad = tv_value_grad(f.reshape(op.dims))
        loss = loss + lam * tv
        grad = grad + lam * tv_grad.reshape(-1)
    return loss, grad, data


def _data_loss(pred, tau, eps):
    return float(pred.sum() - (tau * np.log(pred + eps)).sum())


def _data_loss_grad(pred, tau, op, eps):
    loss = _data_loss(pred, tau, eps)
    grad = op.adjoint(1.0 - tau / (pred + eps))
    return loss, grad


@dataclass
class ReconResult:
    volume: VoxelVolume
    loss_trace: np.ndarray       # (iters, 4): loss, data term, tv term, step
    converged: bool
    iterations: int


def reconstruct_bp(tau, op):
    """Back-projection baseline: Psi^T tau, scaled to [0, 1]."""
    vol = op.adjoint(np.asarray(tau, float))
    top = vol.max()
    if top > 0:
        vol = vol / top
    return VoxelVolume(values=vol.reshape(op.dims), lo=op.lo, hi=op.hi)


def reconstruct_opt(tau, op, cfg):
    """Projected gradient descent on the Poisson+TV objective.

    f starts from scale-matched back-projection (or zeros), every iterate is
    clipped to f >= 0, and a step is accepted only under the Armijo
    condition, so the recorded loss trace is non-increasing. Stops at
    ``max_iters`` or when the relative loss change over ``tol_window``
    accepted iterations falls below ``tol``.
    """
    tau = np.asarray(tau, float)
    if tau.shape != (op.n_points, op.num_bins):
        raise DomainError(f"expected tau of shape {(op.n_points, op.num_bins)}")
    if np.any(tau < 0):
        raise DomainError("tau must be non-negative")

    if isinstance(cfg.init, np.ndarray):
        f = np.clip(np.asarray(cfg.init, float).reshape(-1).copy(), 0.0, None)
        if f.size != op.n_voxels:
            raise DomainError(f"init volume has {f.size} voxels, expected {op.n_voxels}")
    elif cfg.init == "zero":
        f = np.zeros(op.n_voxels)
    else:
        f = reconstruct_bp(tau, op).values.reshape(-1).copy()
        pred_total = op.forward(f).sum()
        if pred_total > 0:  # match total predicted counts to the data
            f *= tau.sum() / pred_total

    step = cfg.init_step or 1.0 / max(op.norm_estimate(), 1e-12)
    loss, grad, data = loss_grad(f, tau, op, lam=cfg.lam, eps=cfg.eps)
    tv_term = loss - data
    trace = [(loss, data, tv_term, 0.0)]

    converged = False
    for it in range(1, cfg.max_iters + 1):
        alpha = step * cfg.step_growth
        accepted = False
        for _ in range(cfg.max_halvings + 1):
            f_new = np.clip(f - alpha * grad, 0.0, None)
            decrease = float(grad @ (f - f_new))  # >= 0 for projected steps
            new_loss, new_grad, new_data = loss_grad(f_new, tau, op,
                                                     lam=cfg.lam, eps=cfg.eps)
            if new_loss <= loss - cfg.armijo_c * decrease:
                accepted = True
                break
            alpha *= cfg.backtrack
        if not accepted:
            if it == 1:
                raise StepFailureError(
                    f"no decreasing step at the first iterate (loss {loss:.6g}, "
                    f"|grad| {np.linalg.norm(grad):.3g}, last step {alpha:.3g})")
            converged = True  # stationary to line-search precision
            break
        f, loss, grad, data = f_new, new_loss, new_grad, new_data
        step = alpha
        trace.append((loss, data, loss - data, alpha))

        if len(trace) > cfg.tol_window:
            past = trace[-1 - cfg.tol_window][0]
            if abs(past - loss) <= cfg.tol * max(abs(past), 1.0):
                converged = True
                break

    volume = VoxelVolume(values=f.reshape(op.dims), lo=op.lo, hi=op.hi)
    return ReconResult(volume=volume, loss_trace=np.asarray(trace),
                       converged=converged, iterations=len(trace) - 1)


def save_loss_trace_csv(path, result):
    with open(path, "w", newline="") as f:
        f.write("iter,loss,data_term,tv_term,step\n")
        for i, (loss, data, tv, step) in enumerate(result.loss_trace):
            f.write(f"{i},{float(loss)!r},{float(data)!r},{float(tv)!r},{float(step)!r}\n")


def save_mip_pgms(volume, prefix):
    """Maximum-intensity projections along each axis as PGM previews."""
    for axis, name in enumerate("xyz"):
        write_pgm(f"{prefix}_mip_{name}.pgm", volume.values.max(axis=axis).T)
