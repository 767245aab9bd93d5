"""Online calibration from the direct-return portion of the data.

Everything here runs on quantities the rig itself measures: the relay plane
is fitted to detection-point coordinates triangulated from scan angles and
peak arrival times, the measurable bounding box follows from the gamma map
and the gating delay, and the system's temporal jitter is fitted to
gamma-normalized direct-return histograms. No auxiliary targets or cameras
are involved.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import transient as _transient
from .errors import (DegenerateFitError, DomainError, EmptyBoxError,
                     InvalidPlaneError, LowSignalError)
from .geometry import angles_to_point, build_wall_frame
from .simulator import JitterParams, jitter_curve
from .timebins import SPEED_OF_LIGHT


@dataclass(frozen=True)
class BoundingBox:
    """Measurable hidden-scene region: scan-region footprint, depth range."""

    width_x: float
    width_y: float
    z_min: float
    z_max: float

    def __post_init__(self):
        if self.width_x <= 0 or self.width_y <= 0:
            raise DomainError("bounding box footprint must be positive")
        if not 0 <= self.z_min < self.z_max:
            raise EmptyBoxError(f"need 0 <= z_min < z_max, got [{self.z_min}, {self.z_max}]")

    @property
    def lo(self):
        return np.array([-self.width_x / 2, -self.width_y / 2, self.z_min])

    @property
    def hi(self):
        return np.array([self.width_x / 2, self.width_y / 2, self.z_max])

    def to_dict(self):
        return {"x_m": [-self.width_x / 2, self.width_x / 2],
                "y_m": [-self.width_y / 2, self.width_y / 2],
                "z_m": [self.z_min, self.z_max]}

    @classmethod
    def from_dict(cls, d):
        return cls(width_x=d["x_m"][1] - d["x_m"][0],
                   width_y=d["y_m"][1] - d["y_m"][0],
                   z_min=d["z_m"][0], z_max=d["z_m"][1])


@dataclass
class PlaneFitReport:
    rmse_m: float
    n_points: int
    refined: bool


def plane_rmse(coeffs, points):
    """Root-mean-square point-to-plane distance for coefficients of
    wx*X + wy*Y + wz*Z + 1 = 0 (the fit's objective, recomputable by tests)."""
    W = np.asarray(coeffs, float)
    pts = np.asarray(points, float)
    num = pts @ W + 1.0
    return float(np.sqrt(np.mean(num ** 2 / (W @ W))))


def fit_plane(points):
    """Fit the relay plane to 3-D detection points.

    The total-least-squares plane (centroid plus smallest principal
    direction) seeds a derivative-free refinement of the point-to-plane RMSE
    in the affine (+1) parameterization; for noiseless data the seed is
    already the minimizer. Returns (RelayPlane, PlaneFitReport) with the wall
    origin at the projected centroid of the points.
    """
    pts = np.asarray(points, float).reshape(-1, 3)
    if pts.shape[0] < 3:
        raise DegenerateFitError("need at least 3 points to fit a plane")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    if svals.size < 3 or svals[1] < 1e-12 * max(svals[0], 1.0):
        raise DegenerateFitError("points are collinear; plane is unconstrained")
    normal = vt[2]
    d = -normal @ centroid
    if abs(d) < 1e-3:
        raise InvalidPlaneError(
            "fitted plane passes within 1 mm of the world origin; "
            "the affine parameterization cannot represent it")
    seed = normal / d

    res = minimize(lambda W: plane_rmse(W, pts), seed, method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 2000})
    best = res.x if plane_rmse(res.x, pts) <= plane_rmse(seed, pts) else seed
    rmse = plane_rmse(best, pts)
    plane = build_wall_frame(best, _project_centroid(best, centroid))
    report = PlaneFitReport(rmse_m=rmse, n_points=pts.shape[0], refined=bool(res.success))
    return plane, report


def _project_centroid(W, centroid):
    W = np.asarray(W, float)
    n = W / np.linalg.norm(W)
    dist = (centroid @ W + 1.0) / np.linalg.norm(W)
    return centroid - dist * n


def points_from_los(ds, refine=True):
    """Triangulate detection-point coordinates from a captured dataset.

    Per point: locate the direct-return peak (optionally parabola-refined),
    convert its arrival time to a one-way depth, and combine with the stored
    scan angles into 3-D world coordinates.
    """
    out = np.zeros((ds.n_points, 3))
    for i in range(ds.n_points):
        peak = _transient.locate_peak(ds.counts[i], refine=refine)
        t_ps = ds.t0_ps[i] + peak * ds.bin_width_ps
        ell = t_ps * 1e-12 * SPEED_OF_LIGHT / 2.0
        if ell <= 0:
            raise DomainError(f"non-positive depth at point {i}; is the data realigned?")
        ax, ay = ds.points[i].angles
        out[i] = angles_to_point(ax, ay, ell)
    return out


def estimate_bbox(scan_width_x, scan_width_y, gmap, bias, t_delay_ps, roundtrip=False):
    """Measurable bounding box from the gamma map and the gating delay.

    The footprint copies the scan region. The near depth is c * t_delay
    (halved when ``roundtrip`` is set, treating the delay as a round-trip
    time). The far depth is where a perfectly diffuse white sphere lit with
    the weakest gamma still clears the bias:  z_max = (2 min(gamma) / (3 b))^(1/4).
    """
    if bias <= 0:
        raise DomainError("bias must be positive to bound the far depth")
    values = np.asarray(gmap.values if hasattr(gmap, "values") else gmap, float)
    if values.size == 0:
        raise DegenerateFitError("gamma map is empty")
    gmin = float(values.min())
    if gmin <= 0:
        raise DegenerateFitError("gamma map has non-positive entries; cannot bound depth")
    z_min = SPEED_OF_LIGHT * t_delay_ps * 1e-12
    if roundtrip:
        z_min /= 2.0
    z_max = (2.0 * gmin / (3.0 * bias)) ** 0.25
    if z_max <= z_min:
        raise EmptyBoxError(f"z_max {z_max:.3f} m <= z_min {z_min:.3f} m; empty box")
    return BoundingBox(width_x=scan_width_x, width_y=scan_width_y, z_min=z_min, z_max=z_max)


@dataclass
class JitterFitResult:
    params: JitterParams
    per_point: list = field(default_factory=list)   # JitterParams per histogram
    traces: list = field(default_factory=list)      # best-so-far loss per histogram
    converged: bool = True


def cross_entropy(params, counts, bin_width_ps, normalize=True):
    """Cross-entropy between a (gamma-normalized) direct-return histogram and
    the jitter curve sampled at bin centers.

    The curve is normalized to a discrete distribution before the log so the
    objective is a proper divergence (Gibbs: minimized when the histogram
    matches the curve); ``normalize=False`` reproduces the raw form.
    """
    counts = np.asarray(counts, float)
    t = (np.arange(counts.size) + 0.5) * bin_width_ps
    curve = jitter_curve(params, t, normalize=normalize)
    weights = counts / max(counts.sum(), 1e-300)
    safe = np.clip(curve, 1e-300, None)
    return float(-(weights * np.log(safe)).sum())


def _restart_inits(init, n_restarts):
    inits = [init]
    if n_restarts > 1:
        k0s = np.geomspace(init.kappa0 / 4, init.kappa0 * 4, n_restarts - 1)
        k1s = np.geomspace(max(abs(init.kappa1) / 4, 1e-3), abs(init.kappa1) * 4,
                           n_restarts - 1)
        sign = 1.0 if init.kappa1 > 0 else -1.0
        for k0, k1 in zip(k0s, k1s):
            inits.append(JitterParams(mu=init.mu, sigma=init.sigma, kappa0=float(k0),
                                      kappa1=float(sign * k1), gamma_w=init.gamma_w))
    return inits


def fit_jitter(ds, init=None, min_counts=1000, n_restarts=5, normalize=True,
               max_evals=4000):
    """Fit the jitter parameters to realigned direct-return histograms.

    ``ds`` is a TransientDataset whose bin 0 is the geometric direct-return
    arrival (realigned), or a list of 1-D count arrays with a shared bin
    width (then pass a dataset-like via TransientDataset). Each histogram is
    fitted independently by a Nelder-Mead search restarted over a log-spaced
    (kappa0, kappa1) ladder; the returned parameters are the per-point
    averages and every trace is non-increasing (best-so-far objective).
    """
    init = init or JitterParams()
    totals = ds.counts.sum(axis=1)
    usable = np.nonzero(totals >= min_counts)[0]
    if usable.size == 0:
        raise LowSignalError(
            f"no histogram reaches {min_counts} counts (best: {totals.max(initial=0):.0f})")

    per_point, traces, converged = [], [], True
    for i in usable:
        params, trace, ok = _fit_one(ds.counts[i], ds.bin_width_ps, init,
                                     n_restarts, normalize, max_evals)
        per_point.append(params)
        traces.append(np.asarray(trace))
        converged &= ok

    avg = JitterParams(
        mu=float(np.mean([p.mu for p in per_point])),
        sigma=float(np.mean([p.sigma for p in per_point])),
        kappa0=float(np.mean([p.kappa0 for p in per_point])),
        kappa1=float(np.mean([p.kappa1 for p in per_point])),
        gamma_w=float(np.mean([p.gamma_w for p in per_point])),
    )
    return JitterFitResult(params=avg, per_point=per_point, traces=traces,
                           converged=converged)


def _fit_one(counts, bin_width_ps, init, n_restarts, normalize, max_evals):
    counts = np.asarray(counts, float)
    trace = []

    def objective(x):
        mu, sigma, kappa0, kappa1, gamma_w = x
        if sigma <= 0 or kappa0 <= 0 or abs(kappa1) < 1e-9 or gamma_w < 0 or mu <= 0:
            return 1e30
        try:
            # The simplex legitimately probes regions where the tail clips;
            # silence the per-evaluation clipping report.
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                val = cross_entropy(JitterParams(mu, sigma, kappa0, kappa1, gamma_w),
                                    counts, bin_width_ps, normalize=normalize)
        except DomainError:
            return 1e30
        if not trace or val < trace[-1]:
            trace.append(val)
        return val

    best_x, best_f = None, np.inf
    evals_per = max(max_evals // n_restarts, 200)
    for start in _restart_inits(init, n_restarts):
        x0 = np.array([start.mu, start.sigma, start.kappa0, start.kappa1, start.gamma_w])
        res = minimize(objective, x0, method="Nelder-Mead",
                       options={"maxfev": evals_per, "xatol": 1e-4, "fatol": 1e-10})
        if res.fun < best_f:
            best_x, best_f = res.x, res.fun
    ok = bool(best_f < 1e30)
    if not ok:
        best_x = np.array([init.mu, init.sigma, init.kappa0, init.kappa1, init.gamma_w])
    params = JitterParams(mu=float(best_x[0]), sigma=float(abs(best_x[1])),
                          kappa0=float(abs(best_x[2])), kappa1=float(best_x[3]),
                          gamma_w=float(max(best_x[4], 0.0)))
    return params, trace, ok


def save_wall_json(path, plane, report):
    payload = plane.to_dict()
    payload.update({
        "basis_x": plane.basis_x.tolist(),
        "basis_y": plane.basis_y.tolist(),
        "basis_z": plane.basis_z.tolist(),
        "rmse_m": report.rmse_m,
        "n_points": report.n_points,
    })
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)


def save_bbox_json(path, bbox):
    with open(path, "w") as f:
        json.dump(bbox.to_dict(), f, indent=2)


def save_jitter_json(path, result):
    payload = result.params.to_dict()
    payload["n_histograms"] = len(result.per_point)
    payload["converged"] = bool(result.converged)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)


def save_jitter_trace_csv(path, result):
    with open(path, "w", newline="") as f:
        f.write("point,eval,loss\n")
        for p, trace in enumerate(result.traces):
            for e, loss in enumerate(trace):
                f.write(f"{p},{e},{float(loss)!r}\n")
