"""Virtual confocal capture rig.

Renders clean transients from a hidden voxel scene by accumulating each
voxel's return into the time bin of its round-trip distance, adds the
direct relay-wall return scaled by the per-point strength gamma(s), blurs
with the system's temporal jitter, adds a flat bias, and draws Poisson
counts. The rig keeps its galvo model and wall pose hidden and emits a
per-point truth record so calibration code can be tested blind against it.

All times are picoseconds; bin 0 is the laser emission time.
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import galvo as _galvo
from .errors import DomainError, HistogramOverflowError
from .timebins import distance_to_bin
from .transient import ScanPoint, TransientDataset, TransientHistogram

# Kernel support is truncated where the curve falls below this fraction of
# its peak, then renormalized so convolution conserves expected counts.
_KERNEL_TRUNCATION = 1e-4


@dataclass(frozen=True)
class JitterParams:
    """Temporal impulse response: Gaussian peak plus an exponential-ish tail.

    j(t) = exp(-(t-mu)^2 / (2 sigma^2))
         + gamma_w * t^(-1/2) exp(-(t-mu)^2 / (kappa0 t)) (1 + (t-mu)/(kappa1 t))

    evaluated for t > 0 in picoseconds. The tail factor can go negative for
    t < mu / (1 + kappa1); those samples are clipped to zero since an
    impulse response cannot be negative.
    """

    mu: float = 200.0
    sigma: float = 42.5
    kappa0: float = 50.0
    kappa1: float = 30.0
    gamma_w: float = 0.3

    def __post_init__(self):
        if self.sigma <= 0 or self.kappa0 <= 0 or self.kappa1 == 0 or self.gamma_w < 0:
            raise DomainError("jitter parameters require sigma>0, kappa0>0, kappa1!=0, gamma_w>=0")

    def to_dict(self):
        return {"mu_ps": self.mu, "sigma_ps": self.sigma, "kappa0_ps": self.kappa0,
                "kappa1_ps": self.kappa1, "gamma_w": self.gamma_w}

    @classmethod
    def from_dict(cls, d):
        return cls(mu=float(d["mu_ps"]), sigma=float(d["sigma_ps"]),
                   kappa0=float(d["kappa0_ps"]), kappa1=float(d["kappa1_ps"]),
                   gamma_w=float(d["gamma_w"]))


@dataclass(frozen=True)
class NoiseModel:
    """SPAD noise: jitter blur, flat bias, Poisson counting.

    ``jitter=None`` means a delta impulse response. ``poisson=False`` returns
    the per-bin expectation instead of a draw (the rig's zero-noise mode).
    """

    jitter: JitterParams | None = field(default_factory=JitterParams)
    bias: float = 0.0
    seed: int = 0
    poisson: bool = True

    def __post_init__(self):
        if self.bias < 0:
            raise DomainError("bias must be non-negative")


@dataclass(frozen=True)
class RigConfig:
    """Capture-rig ground truth and histogram layout.

    ``galvo`` and ``plane`` are the hidden true models. ``photon_scale``
    collects the per-pulse photon count, detector area, and solid-angle
    factors into a single count scale; gamma(s) multiplies it by the wall
    albedo squared, the cosine toward the scan head, and the inverse square
    distance. ``area_scale`` is the quadrature weight applied to the hidden
    scene's accumulated return (defaults to the voxel in-plane area), which
    sets the physical direct-to-hidden intensity ratio. ``gamma_fn``
    overrides the gamma profile with an arbitrary function of the world
    coordinates (e.g. a constant for flat-profile tests).
    """

    galvo: _galvo.GalvoModel
    plane: object
    bin_width_ps: float = 4.0
    num_bins: int = 4096
    photon_scale: float = 5e3
    wall_albedo: float = 1.0
    attenuation: bool = False
    area_scale: float | None = None
    gamma_fn: object = None

    def __post_init__(self):
        if self.bin_width_ps <= 0:
            raise DomainError("bin width must be positive")
        if self.num_bins < 16:
            raise DomainError("need at least 16 bins")

    def gamma(self, s_world):
        """Direct-return strength at a world-frame detection point."""
        if self.gamma_fn is not None:
            return float(self.gamma_fn(np.asarray(s_world, float)))
        s = np.asarray(s_world, float)
        r = np.linalg.norm(s)
        cos = float(np.dot(-s / r, self.plane.basis_z))
        return self.photon_scale * self.wall_albedo ** 2 * max(cos, 0.0) / r ** 2


def jitter_curve(params, t, normalize=True):
    """Discrete jitter kernel on the time grid ``t`` (ps).

    Normalized to unit sum over the grid unless ``normalize=False`` (the raw
    curve, Gaussian peak height 1). The exponential-tail term is only defined
    for t > 0; supplying a grid with t <= 0 while gamma_w > 0 raises.
    Negative tail samples are clipped to 0 (a warning reports the clipped
    fraction).
    """
    t = np.asarray(t, float)
    gaus = np.exp(-((t - params.mu) ** 2) / (2.0 * params.sigma ** 2))
    if params.gamma_w > 0:
        if np.any(t <= 0):
            raise DomainError("jitter tail is defined for t > 0 only")
        tail = (t ** -0.5 * np.exp(-((t - params.mu) ** 2) / (params.kappa0 * t))
                * (1.0 + (t - params.mu) / (params.kappa1 * t)))
        clipped = tail < 0
        if np.any(clipped):
            lost = -tail[clipped].sum() / max(tail[~clipped].sum(), 1e-300)
            if lost > 1e-9:  # report only clipping that could matter
                warnings.warn(f"jitter tail clipped at {clipped.sum()} samples "
                              f"({lost:.2e} relative mass)", stacklevel=2)
            tail = np.where(clipped, 0.0, tail)
        curve = gaus + params.gamma_w * tail
    else:
        curve = gaus
    if not normalize:
        return curve
    total = curve.sum()
    if total <= 0:
        raise DomainError("jitter curve vanishes on the supplied grid")
    return curve / total


def jitter_kernel(params, bin_width_ps, max_bins=1 << 17):
    """Unit-sum jitter kernel sampled at bin centers (k + 0.5) * bin_width.

    The grid is extended until the tail falls below the truncation threshold;
    sub-threshold samples are zeroed and the kernel renormalized, so the
    convolution in apply_spad_noise conserves expected counts exactly.
    """
    if params is None:
        return np.array([1.0])
    n = max(16, int(np.ceil((params.mu + 10 * params.sigma) / bin_width_ps)))
    while True:
        t = (np.arange(n) + 0.5) * bin_width_ps
        curve = jitter_curve(params, t)
        if curve[-1] < _KERNEL_TRUNCATION * curve.max() or n >= max_bins:
            break
        n *= 2
    keep = curve >= _KERNEL_TRUNCATION * curve.max()
    curve = np.where(keep, curve, 0.0)
    last = int(np.nonzero(keep)[0][-1])
    curve = curve[: last + 1]
    return curve / curve.sum()


def _attenuation_weights(centers_wall, s_wall):
    """Confocal shading term per voxel: cos^2 at the voxel, cos^2 at the wall,
    inverse fourth power of distance. Voxel normals face the wall origin."""
    d = centers_wall - s_wall
    r = np.linalg.norm(d, axis=-1)
    r = np.maximum(r, 1e-12)
    omega_sp = d / r[..., None]                      # wall -> voxel
    cos_wall = np.clip(omega_sp[..., 2], 0.0, None)  # wall normal is +z
    pnorm = -centers_wall
    pl = np.linalg.norm(pnorm, axis=-1)
    pnorm = pnorm / np.maximum(pl, 1e-12)[..., None]
    cos_vox = np.clip(np.sum(-omega_sp * pnorm, axis=-1), 0.0, None)
    return cos_vox ** 2 * cos_wall ** 2 / r ** 4


def render_clean_transient(volume, s, cfg, attenuation=False):
    """Noise-free hidden-scene transient at one detection point.

    Every voxel with positive albedo contributes its albedo (times the
    shading term if ``attenuation``) to the bin of its round-trip distance
    from the scan point. Bin indices beyond the histogram raise; nothing is
    silently dropped, so the output total equals the accumulated weights.

    ``s`` may be a ScanPoint or wall-frame coordinates (x, y[, 0]).
    """
    s_wall = _as_wall_xy(s)
    counts = np.zeros(cfg.num_bins)
    flat = volume.values.reshape(-1)
    sel = np.nonzero(flat > 0)[0]
    if sel.size == 0:
        return TransientHistogram(counts=counts, bin_width_ps=cfg.bin_width_ps)
    centers = volume.centers_flat()[sel]
    dist = np.linalg.norm(centers - s_wall, axis=1)
    bins = distance_to_bin(dist, cfg.bin_width_ps)
    if np.any(bins >= cfg.num_bins):
        vi = sel[int(np.argmax(bins))]
        raise HistogramOverflowError(
            f"voxel {np.unravel_index(vi, volume.dims)} maps to bin {int(bins.max())} "
            f">= num_bins {cfg.num_bins}; enlarge the histogram"
        )
    weights = flat[sel].astype(float)
    if attenuation:
        weights = weights * _attenuation_weights(centers, s_wall)
    np.add.at(counts, bins, weights)
    return TransientHistogram(counts=counts, bin_width_ps=cfg.bin_width_ps)


def _as_wall_xy(s):
    if isinstance(s, ScanPoint):
        xy = s.xy
    else:
        arr = np.asarray(s, float).reshape(-1)
        xy = arr[:2]
        if arr.size == 3 and abs(arr[2]) > 1e-6:
            raise DomainError("detection point must lie on the relay plane (|z| <= 1e-6 m)")
    return np.array([xy[0], xy[1], 0.0])


def apply_spad_noise(clean, noise, rng=None):
    """Jitter-blur a clean transient, add bias, and draw Poisson counts.

    The expectation of each output bin is the convolved clean value plus the
    bias. With ``noise.poisson=False`` the expectation itself is returned.
    """
    kernel = jitter_kernel(noise.jitter, clean.bin_width_ps)
    if kernel.size > clean.num_bins:
        raise DomainError("jitter kernel does not fit within the histogram")
    lam = np.convolve(clean.counts, kernel)[: clean.num_bins] + noise.bias
    if not noise.poisson:
        return TransientHistogram(counts=lam, bin_width_ps=clean.bin_width_ps, t0_ps=clean.t0_ps)
    rng = np.random.default_rng(noise.seed) if rng is None else rng
    counts = rng.poisson(lam).astype(np.int64)
    return TransientHistogram(counts=counts, bin_width_ps=clean.bin_width_ps, t0_ps=clean.t0_ps)


@dataclass(frozen=True)
class CaptureTruth:
    """Ground truth of one capture, for test assertions only."""

    s_world: np.ndarray
    s_wall: np.ndarray
    gamma: float
    los_bin: int
    nlos_mass: float


def rig_capture(cfg, volume, voltages, noise, rng=None):
    """Simulate one exposure at the given input voltages.

    The hidden galvo model turns voltages into scan angles, the ray meets the
    hidden plane at the true detection point, the direct return of mass
    gamma(s) lands in the bin of its round-trip time, and the hidden-scene
    transient (scaled by gamma(s) and the area quadrature weight, delayed by
    the direct-return time) is added before jitter, bias, and Poisson noise.

    Returns (TransientHistogram, CaptureTruth).
    """
    angles = _galvo.voltages_to_angles(cfg.galvo, np.asarray(voltages, float))
    direction = np.array([np.tan(angles[0]), np.tan(angles[1]), 1.0])
    direction /= np.linalg.norm(direction)
    W = np.array([cfg.plane.wx, cfg.plane.wy, cfg.plane.wz])
    denom = direction @ W
    if denom >= 0:
        raise DomainError("scan ray does not hit the relay plane in front of the rig")
    ell = -1.0 / denom
    s_world = ell * direction
    s_wall = cfg.plane.world_to_wall(s_world)

    gamma = cfg.gamma(s_world)
    los_bin = int(distance_to_bin(ell, cfg.bin_width_ps))
    if los_bin >= cfg.num_bins:
        raise HistogramOverflowError(f"direct return at bin {los_bin} >= {cfg.num_bins}")
    clean = np.zeros(cfg.num_bins)
    clean[los_bin] += gamma

    nlos_mass = 0.0
    if volume is not None and volume.values.any():
        nlos = render_clean_transient(volume, s_wall[:2], cfg, attenuation=cfg.attenuation)
        area = cfg.area_scale
        if area is None:
            area = float(volume.voxel_size[0] * volume.voxel_size[1])
        scaled = gamma * area * nlos.counts
        shifted = np.zeros(cfg.num_bins)
        top = cfg.num_bins - los_bin
        last = int(np.nonzero(nlos.counts)[0][-1]) if nlos.counts.any() else 0
        if last >= top:
            raise HistogramOverflowError(
                f"hidden-scene return at bin {los_bin + last} >= {cfg.num_bins}")
        shifted[los_bin:] = scaled[:top]
        clean += shifted
        nlos_mass = float(scaled.sum())

    hist = apply_spad_noise(
        TransientHistogram(counts=clean, bin_width_ps=cfg.bin_width_ps), noise, rng=rng
    )
    truth = CaptureTruth(s_world=s_world, s_wall=s_wall, gamma=gamma,
                         los_bin=los_bin, nlos_mass=nlos_mass)
    return hist, truth


def simulate_dataset(cfg, volume, compiled, noise, exposure_s=1.0, threads=None):
    """Capture every compiled scan point into a TransientDataset.

    Each point draws from its own generator seeded by (noise.seed, index),
    so the result is independent of scheduling order. Returns
    (TransientDataset, list[CaptureTruth]).
    """
    points = compiled.points if hasattr(compiled, "points") else list(compiled)

    def one(k):
        rng = np.random.default_rng((noise.seed, k))
        return rig_capture(cfg, volume, points[k].voltages, noise, rng=rng)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(len(points))))
    else:
        results = [one(k) for k in range(len(points))]

    counts = np.stack([h.counts for h, _ in results])
    truths = [t for _, t in results]
    ds = TransientDataset(
        points=list(points),
        counts=counts,
        bin_width_ps=cfg.bin_width_ps,
        t0_ps=np.zeros(len(points)),
        meta={
            "exposure_s": exposure_s,
            "seed": noise.seed,
            "bias": noise.bias,
            "time_origin": "laser emission",
        },
    )
    return ds, truths


def default_rig(wall_distance=1.0, tilt_deg=0.0, **kwargs):
    """Reference rig: wall ``wall_distance`` meters ahead, optionally tilted
    about the world Y axis, with a mildly imperfect hidden galvo."""
    from .geometry import build_wall_frame

    tilt = np.deg2rad(tilt_deg)
    # Plane through (0, 0, wall_distance) with normal rotated about Y.
    n = np.array([np.sin(tilt), 0.0, np.cos(tilt)])
    point = np.array([0.0, 0.0, wall_distance])
    d = -n @ point
    if d == 0:
        raise DomainError("wall through the origin is not representable")
    W = n / d
    plane = build_wall_frame(W, point)
    galvo_model = _galvo.GalvoModel(
        eps=np.deg2rad([0.2, -0.1]),
        beta=np.deg2rad([[7.4, 0.12], [-0.08, 7.3]]),
        v_range=5.0,
    )
    return RigConfig(galvo=galvo_model, plane=plane, **kwargs)
