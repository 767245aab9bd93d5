"""Dual-axis galvanometer model and its least-squares calibration.

The scanner is linear over its working range: optical scan angles are an
affine map of the two input voltages,

    theta = eps + beta @ V

with mirror offset angles eps (rad) and a 2x2 coefficient matrix beta
(rad/V). Calibration follows the two-stage procedure of the capture rig:
beta is fitted first by linear regression without an intercept, then eps is
the mean residual between measured and predicted angles. The two-stage fit
reproduces a noiseless generator exactly only when the voltage design has
zero mean; ``joint=True`` switches to a single affine regression that does
not need that assumption.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFitError, FormatError, VoltageRangeError

MAX_SCAN_ANGLE_RAD = np.deg2rad(40.0)  # optical range of the scanner

# Normal equations are used below this condition number, an orthogonal
# (lstsq) solve above it.
_NORMAL_EQ_COND_LIMIT = 1e8


@dataclass(frozen=True)
class GalvoModel:
    """Affine voltage -> angle map with its admissible voltage range."""

    eps: np.ndarray    # (2,) angle offsets, rad
    beta: np.ndarray   # (2, 2) rad/V
    v_range: float = 5.0

    def __post_init__(self):
        eps = np.asarray(self.eps, float).reshape(2)
        beta = np.asarray(self.beta, float).reshape(2, 2)
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "beta", beta)
        if abs(np.linalg.det(beta)) <= 1e-12:
            raise DegenerateFitError("beta matrix is singular (|det| <= 1e-12)")
        if self.v_range <= 0:
            raise DegenerateFitError("admissible voltage range must be positive")
        corners = self.v_range * np.array(
            [[1, 1], [1, -1], [-1, 1], [-1, -1]], float
        )
        worst = np.max(np.abs(eps + corners @ beta.T))
        if worst > MAX_SCAN_ANGLE_RAD + 1e-9:
            raise DegenerateFitError(
                f"model predicts {np.rad2deg(worst):.2f} deg inside +-{self.v_range} V; "
                "optical range is +-40 deg"
            )

    def to_dict(self):
        return {
            "eps_deg": np.rad2deg(self.eps).tolist(),
            "beta_deg_per_volt": np.rad2deg(self.beta).tolist(),
            "v_range": self.v_range,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            eps=np.deg2rad(np.asarray(d["eps_deg"], float)),
            beta=np.deg2rad(np.asarray(d["beta_deg_per_volt"], float)),
            v_range=float(d.get("v_range", 5.0)),
        )

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass
class GalvoFitReport:
    """Residual summary of a calibration run (angles in radians)."""

    n_samples: int
    rms_beta_stage: np.ndarray = field(default_factory=lambda: np.zeros(2))
    rms_final: np.ndarray = field(default_factory=lambda: np.zeros(2))
    joint: bool = False


def voltages_to_angles(model, v):
    """Predicted scan angles for voltage pair(s) v; theta = eps + beta @ V."""
    v = np.asarray(v, float)
    return model.eps + v @ model.beta.T


def angles_to_voltages(model, angles, clip=False):
    """Voltages that command the given scan angles; V = beta^-1 (theta - eps).

    Raises VoltageRangeError when the result leaves the admissible range,
    unless ``clip=True``, which returns the range-clamped voltages instead.
    """
    angles = np.asarray(angles, float)
    if abs(np.linalg.det(model.beta)) <= 1e-12:
        raise DegenerateFitError("beta matrix is singular; cannot invert")
    v = np.linalg.solve(model.beta, (angles - model.eps).T).T
    clamped = np.clip(v, -model.v_range, model.v_range)
    if np.any(np.abs(v) > model.v_range + 1e-12):
        if clip:
            return clamped
        raise VoltageRangeError(np.atleast_1d(v), np.atleast_1d(clamped), model.v_range)
    return v


def fit_galvo(voltages, angles, v_range=5.0, joint=False):
    """Calibrate a GalvoModel from N voltage/angle sample pairs.

    Parameters
    ----------
    voltages : (N, 2) array
        Commanded voltage pairs.
    angles : (N, 2) array
        Measured optical scan angles, radians.
    v_range : float
        Admissible voltage range of the device (symmetric, volts).
    joint : bool
        Fit offsets and matrix in one affine regression instead of the
        two-stage procedure (beta first, eps as mean residual).

    Returns
    -------
    (GalvoModel, GalvoFitReport)
    """
    V = np.asarray(voltages, float).reshape(-1, 2)
    T = np.asarray(angles, float).reshape(-1, 2)
    if V.shape[0] != T.shape[0]:
        raise DegenerateFitError("voltage and angle sample counts differ")
    n = V.shape[0]
    if n < 3:
        raise DegenerateFitError("need at least 3 samples to fit offsets and matrix")
    if np.linalg.matrix_rank(V - V.mean(axis=0), tol=1e-10) < 2:
        raise DegenerateFitError("voltage pairs are collinear; design is rank deficient")

    report = GalvoFitReport(n_samples=n, joint=joint)
    if joint:
        A = np.column_stack([V, np.ones(n)])
        coef = _solve_ls(A, T)           # (3, 2): rows Vx, Vy, 1
        beta = coef[:2].T
        eps = coef[2]
        report.rms_beta_stage = _rms(T - V @ beta.T)
    else:
        beta = _solve_ls(V, T).T         # minimizes (1/N) sum |theta - beta V|^2
        resid = T - V @ beta.T
        report.rms_beta_stage = _rms(resid)
        eps = resid.mean(axis=0)
    report.rms_final = _rms(T - (eps + V @ beta.T))
    return GalvoModel(eps=eps, beta=beta, v_range=v_range), report


def _solve_ls(A, B):
    """Least-squares solve A @ X = B, guarding the normal equations."""
    gram = A.T @ A
    if np.linalg.cond(gram) < _NORMAL_EQ_COND_LIMIT:
        return np.linalg.solve(gram, A.T @ B)
    return np.linalg.lstsq(A, B, rcond=None)[0]


def _rms(resid):
    return np.sqrt(np.mean(resid ** 2, axis=0))


def load_samples_csv(path):
    """Read calibration samples: header vx,vy,theta_x_deg,theta_y_deg."""
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        required = {"vx", "vy", "theta_x_deg", "theta_y_deg"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise FormatError(f"{path}: expected columns {sorted(required)}")
        rows = [
            (float(r["vx"]), float(r["vy"]), float(r["theta_x_deg"]), float(r["theta_y_deg"]))
            for r in reader
        ]
    if not rows:
        raise FormatError(f"{path}: no samples")
    arr = np.asarray(rows, float)
    return arr[:, :2], np.deg2rad(arr[:, 2:])


def save_samples_csv(path, voltages, angles):
    """Write calibration samples in the vx,vy,theta_x_deg,theta_y_deg format."""
    V = np.asarray(voltages, float).reshape(-1, 2)
    T = np.rad2deg(np.asarray(angles, float).reshape(-1, 2))
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["vx", "vy", "theta_x_deg", "theta_y_deg"])
        for (vx, vy), (tx, ty) in zip(V, T):
            writer.writerow([repr(float(vx)), repr(float(vy)),
                             repr(float(tx)), repr(float(ty))])
