"""Relay-wall geometry: plane representation, wall frame, and point transforms.

Two Cartesian frames are used throughout the toolkit. The world frame XYZ has
its origin at the scan head, where the laser enters free space. The wall frame
xyz sits on the relay plane with z along the plane normal, so every detection
point has z = 0 and hidden-scene depth is a positive z.

Points are plain numpy arrays of shape (3,) (or (..., 3) for batches), in
meters. Angles are radians everywhere inside the library; degrees appear only
at file and CLI boundaries.

The plane is stored in the affine form wx*X + wy*Y + wz*Z + 1 = 0. This form
cannot represent planes through the world origin; since the relay wall sits
about a meter from the scan head, construction rejects planes closer than
1 mm to the origin instead of switching to a homogeneous representation.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidPlaneError

# Eq-form coefficient vectors smaller than this describe a plane within 1 mm
# of the world origin, which the affine form cannot represent robustly.
_MIN_ORIGIN_DISTANCE_M = 1e-3

# Below this the in-plane basis formula divides by a vanishing component.
_BASIS_DEGENERACY_EPS = 1e-6


@dataclass(frozen=True)
class RelayPlane:
    """Relay plane with its wall frame.

    Attributes
    ----------
    wx, wy, wz : float
        Affine plane coefficients (1/m): wx*X + wy*Y + wz*Z + 1 = 0.
    origin : ndarray, shape (3,)
        Wall-frame origin, a point on the plane (world coordinates, m).
    basis : ndarray, shape (3, 3)
        Rows are the wall-frame axes x_hat, y_hat, z_hat in world
        coordinates. z_hat is the unit plane normal and always points
        toward the scan head.
    """

    wx: float
    wy: float
    wz: float
    origin: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        w = np.array([self.wx, self.wy, self.wz], float)
        if not np.all(np.isfinite(w)) or np.linalg.norm(w) == 0.0:
            raise InvalidPlaneError("plane coefficients must be finite and not all zero")
        if abs(self.plane_value(self.origin)) > 1e-9:
            raise InvalidPlaneError("origin does not lie on the plane")
        gram = self.basis @ self.basis.T
        if not np.allclose(gram, np.eye(3), atol=1e-9):
            raise InvalidPlaneError("wall frame basis is not orthonormal")

    @property
    def basis_x(self):
        return self.basis[0]

    @property
    def basis_y(self):
        return self.basis[1]

    @property
    def basis_z(self):
        return self.basis[2]

    @property
    def normal(self):
        return self.basis[2]

    def plane_value(self, p):
        """Evaluate wx*X + wy*Y + wz*Z + 1 (zero on the plane)."""
        p = np.asarray(p, float)
        return p @ np.array([self.wx, self.wy, self.wz]) + 1.0

    def world_to_wall(self, p):
        """World coordinates -> wall-frame coordinates."""
        p = np.asarray(p, float)
        return (p - self.origin) @ self.basis.T

    def wall_to_world(self, q):
        """Wall-frame coordinates -> world coordinates."""
        q = np.asarray(q, float)
        return q @ self.basis + self.origin

    def to_dict(self):
        return {
            "wx": self.wx,
            "wy": self.wy,
            "wz": self.wz,
            "origin": [float(v) for v in self.origin],
        }

    @classmethod
    def from_dict(cls, d):
        return build_wall_frame((d["wx"], d["wy"], d["wz"]), np.asarray(d["origin"], float))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def angles_to_point(theta_x, theta_y, ell):
    """3D coordinates of a detection point from scan angles and depth.

    The scan head at the world origin looks down +Z; a ray with scan angles
    (theta_x, theta_y) hits the wall at one-way distance ``ell``:

        X = Z tan(theta_x),  Y = Z tan(theta_y),
        Z = ell * (1 + tan^2 theta_x + tan^2 theta_y)^(-1/2)

    so the returned point's Euclidean norm equals ``ell``. Inputs broadcast.
    """
    theta_x = np.asarray(theta_x, float)
    theta_y = np.asarray(theta_y, float)
    ell = np.asarray(ell, float)
    if np.any(ell <= 0):
        raise DomainError("depth ell must be positive")
    if np.any(np.abs(theta_x) >= np.pi / 2) or np.any(np.abs(theta_y) >= np.pi / 2):
        raise DomainError("scan angles must satisfy |theta| < pi/2")
    tx, ty = np.tan(theta_x), np.tan(theta_y)
    z = ell / np.sqrt(1.0 + tx * tx + ty * ty)
    out = np.stack([z * tx, z * ty, z], axis=-1)
    if not np.all(np.isfinite(out)):
        raise DomainError("non-finite detection point (angle too close to +-90 deg)")
    return out


def point_to_angles(p):
    """Scan angles (theta_x, theta_y) of a world point; inverse of the ray map."""
    p = np.asarray(p, float)
    if np.any(p[..., 2] <= 0):
        raise DomainError("point must be in front of the scan head (Z > 0)")
    return np.arctan2(p[..., 0], p[..., 2]), np.arctan2(p[..., 1], p[..., 2])


def build_wall_frame(plane_coeffs, origin_os):
    """Construct a RelayPlane from raw coefficients and an on-plane origin.

    The coefficients (WX, WY, WZ) of WX*X + WY*Y + WZ*Z + 1 = 0 are rescaled
    by w = |W|^-1 to the unit normal (wx, wy, wz) = w*W, which becomes z_hat.
    x_hat follows the in-plane construction

        x_hat = (wx^-1 X_hat - wz^-1 Z_hat) / sqrt(wx^-2 + wz^-2)

    falling back to the projection of a world axis onto the plane when wx or
    wz vanishes (axis-aligned walls), and y_hat = z_hat x x_hat closes the
    right-handed frame.

    ``origin_os`` must satisfy the plane equation to within 1e-6; it is
    re-projected exactly onto the plane before storing.
    """
    W = np.asarray(plane_coeffs, float)
    if W.shape != (3,):
        raise InvalidPlaneError("expected three plane coefficients")
    norm = np.linalg.norm(W)
    if not np.isfinite(norm) or norm == 0.0:
        raise InvalidPlaneError("plane coefficients must be finite and not all zero")
    w = 1.0 / norm  # distance from the world origin to the plane
    if w < _MIN_ORIGIN_DISTANCE_M:
        raise InvalidPlaneError(
            f"plane passes within {_MIN_ORIGIN_DISTANCE_M * 1e3:.0f} mm of the world "
            "origin; the affine form wx*X + wy*Y + wz*Z + 1 = 0 cannot represent it"
        )
    z_hat = w * W

    origin = np.asarray(origin_os, float)
    if origin.shape != (3,):
        raise InvalidPlaneError("origin must be a 3-vector")
    residual = origin @ W + 1.0
    if abs(residual) * w > 1e-6:
        raise InvalidPlaneError("origin is not on the plane (tolerance 1e-6 m)")
    # Snap exactly onto the plane so the stored invariant holds at 1e-9.
    origin = origin - (origin @ z_hat + w) * z_hat

    wx, wz = z_hat[0], z_hat[2]
    if abs(wx) > _BASIS_DEGENERACY_EPS and abs(wz) > _BASIS_DEGENERACY_EPS:
        x_hat = np.array([1.0 / wx, 0.0, -1.0 / wz])
        x_hat /= np.sqrt(wx ** -2 + wz ** -2)
    else:
        # Degenerate for axis-aligned walls: project a world axis instead.
        seed = np.array([1.0, 0.0, 0.0])
        if abs(seed @ z_hat) > 0.9:
            seed = np.array([0.0, 1.0, 0.0])
        x_hat = seed - (seed @ z_hat) * z_hat
        x_hat /= np.linalg.norm(x_hat)
    y_hat = np.cross(z_hat, x_hat)

    return RelayPlane(
        wx=float(W[0]),
        wy=float(W[1]),
        wz=float(W[2]),
        origin=origin,
        basis=np.vstack([x_hat, y_hat, z_hat]),
    )


def project_onto_plane(plane, s):
    """Orthogonal projection of world point(s) ``s`` onto the relay plane.

    Residuals at round-off level are treated as zero, so points already on
    the plane (including previous projections) are exact fixed points.
    """
    s = np.asarray(s, float)
    z_hat = plane.basis_z
    dist = (s - plane.origin) @ z_hat
    scale = 1.0 + np.abs(s).sum(axis=-1)
    dist = np.where(np.abs(dist) <= 1e-14 * scale, 0.0, dist)
    return s - np.expand_dims(dist, -1) * z_hat
