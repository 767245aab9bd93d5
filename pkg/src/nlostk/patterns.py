"""Detection-point patterns on the relay wall and their galvo compilation.

Patterns are generated in the wall frame (meters, origin at the scan-area
center). ``compile_pattern`` turns wall points into world coordinates, scan
angles, and input voltages for a given plane and galvo model, so a pattern
can be scanned on an arbitrarily posed wall. Point order is preserved
end-to-end; the optional serpentine flag only permutes acquisition order.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import galvo as _galvo
from . import geometry as _geometry
from .errors import DomainError, FormatError, VoltageRangeError

_DUPLICATE_EPS_M = 1e-9


@dataclass(frozen=True)
class ScanPoint:
    """One compiled detection point."""

    xy: np.ndarray        # (2,) wall-frame coordinates, m
    xyz: np.ndarray       # (3,) world coordinates, m
    angles: np.ndarray    # (2,) scan angles, rad
    voltages: np.ndarray  # (2,) commanded voltages, V

    def to_dict(self):
        return {
            "xy_m": [float(v) for v in self.xy],
            "xyz_m": [float(v) for v in self.xyz],
            "voltages": [float(v) for v in self.voltages],
            "angles_deg": [float(v) for v in np.rad2deg(self.angles)],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            xy=np.asarray(d["xy_m"], float),
            xyz=np.asarray(d["xyz_m"], float),
            angles=np.deg2rad(np.asarray(d["angles_deg"], float)),
            voltages=np.asarray(d["voltages"], float),
        )


@dataclass(frozen=True)
class ScanPattern:
    """Ordered wall-frame detection points with provenance."""

    points: np.ndarray  # (N, 2) wall-frame coordinates, m
    kind: str           # "grid" | "circles" | "arbitrary"
    params: dict

    def __post_init__(self):
        pts = np.asarray(self.points, float).reshape(-1, 2)
        object.__setattr__(self, "points", pts)
        if pts.shape[0] == 0:
            raise DomainError("pattern has no points")
        if not np.all(np.isfinite(pts)):
            raise DomainError("pattern contains non-finite coordinates")
        _reject_duplicates(pts)

    def __len__(self):
        return self.points.shape[0]

    def check_region(self, region):
        """Verify every point lies inside a scanning region.

        ``region`` is either (xmin, xmax, ymin, ymax) or a callable
        mask(x, y) -> bool array. Raises DomainError listing offenders.
        """
        x, y = self.points[:, 0], self.points[:, 1]
        if callable(region):
            ok = np.asarray(region(x, y), bool)
        else:
            xmin, xmax, ymin, ymax = region
            ok = (x >= xmin) & (x <= xmax) & (y >= ymin) & (y <= ymax)
        bad = np.nonzero(~ok)[0]
        if bad.size:
            raise DomainError(f"{bad.size} pattern points outside the scanning region "
                              f"(first offenders: {bad[:5].tolist()})")

    def to_dict(self):
        return {
            "kind": self.kind,
            "params": self.params,
            "points_xy_m": [[float(x), float(y)] for x, y in self.points],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(points=np.asarray(d["points_xy_m"], float),
                   kind=d["kind"], params=dict(d.get("params", {})))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass
class CompiledPattern:
    """compile_pattern output: one ScanPoint per pattern point, in order.

    ``out_of_range`` lists (index, clamped_voltages) for points whose exact
    voltages leave the admissible range; their ScanPoint keeps the exact
    (unclamped) values so callers can inspect the failure.
    """

    points: list
    out_of_range: list = field(default_factory=list)
    acq_order: np.ndarray | None = None

    def __len__(self):
        return len(self.points)

    @property
    def ok(self):
        return not self.out_of_range


def _reject_duplicates(pts):
    # O(N log N) duplicate scan via lexicographic sort; duplicates would
    # silently bias per-point statistics downstream.
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    s = pts[order]
    close = np.all(np.abs(np.diff(s, axis=0)) <= _DUPLICATE_EPS_M, axis=1)
    if np.any(close):
        i = int(np.nonzero(close)[0][0])
        a, b = order[i], order[i + 1]
        raise DomainError(f"duplicate pattern points at indices {min(a, b)} and {max(a, b)}")


def gen_grid(n, length):
    """Regular n x n grid over a length x length region, centered on the origin.

    Points run row-major from the top-left corner (-L/2, +L/2): along a row x
    increases in steps of L/(n-1), between rows y decreases by the same step.
    """
    if n < 2:
        raise DomainError("grid needs n >= 2 points per side")
    if length <= 0:
        raise DomainError("grid side length must be positive")
    idx = np.arange(n, dtype=float)
    x = -length / 2.0 + idx / (n - 1) * length
    y = +length / 2.0 - idx / (n - 1) * length
    xx, yy = np.meshgrid(x, y)  # row i fixes y, column j fixes x
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    return ScanPattern(points=pts, kind="grid", params={"n": int(n), "length_m": float(length)})


def gen_circles(n_r, n_phi, radius):
    """Concentric-circle pattern: n_r circles of n_phi points inside ``radius``.

    Circle i (1-based) has radius (i/n_r)*R; each circle starts at the top
    (angle pi/2) and advances clockwise in steps of 2*pi/n_phi. Points are
    emitted circle by circle, innermost first.
    """
    if n_r < 1 or n_phi < 1:
        raise DomainError("need n_r >= 1 circles and n_phi >= 1 points per circle")
    if radius <= 0:
        raise DomainError("pattern radius must be positive")
    i = np.arange(1, n_r + 1, dtype=float)
    j = np.arange(n_phi, dtype=float)
    r = (i / n_r) * radius
    phi = np.pi / 2.0 - j * 2.0 * np.pi / n_phi
    xx = np.outer(r, np.cos(phi))
    yy = np.outer(r, np.sin(phi))
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    return ScanPattern(points=pts, kind="circles",
                       params={"n_r": int(n_r), "n_phi": int(n_phi), "radius_m": float(radius)})


def load_pattern_csv(path):
    """Arbitrary pattern from a CSV of wall-frame coordinates (header x_m,y_m)."""
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"x_m", "y_m"}.issubset(reader.fieldnames):
            raise FormatError(f"{path}: expected columns x_m,y_m")
        pts = [(float(r["x_m"]), float(r["y_m"])) for r in reader]
    if not pts:
        raise FormatError(f"{path}: no points")
    return ScanPattern(points=np.asarray(pts, float), kind="arbitrary",
                       params={"source": str(path)})


def save_pattern_csv(path, pattern):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x_m", "y_m"])
        for x, y in pattern.points:
            writer.writerow([repr(float(x)), repr(float(y))])


def compile_pattern(pattern, plane, galvo, serpentine=False):
    """Compile wall-frame pattern points to world coordinates and voltages.

    Each wall point (x, y) maps to world coordinates through the wall frame,
    to scan angles theta = atan(X/Z), atan(Y/Z), and to voltages through the
    inverse galvo map. Points whose voltages leave the admissible range are
    recorded in the returned report instead of aborting the compilation.
    """
    pts = pattern.points
    wall = np.column_stack([pts, np.zeros(len(pts))])
    world = plane.wall_to_world(wall)
    if np.any(world[:, 2] <= 0):
        raise DomainError("pattern maps behind the scan head (Z <= 0); check the plane")
    tx, ty = _geometry.point_to_angles(world)
    angles = np.column_stack([tx, ty])

    compiled = []
    out_of_range = []
    for k in range(len(pts)):
        try:
            v = _galvo.angles_to_voltages(galvo, angles[k])
        except VoltageRangeError as err:
            out_of_range.append((k, err.clamped))
            v = np.asarray(err.voltages, float)
        compiled.append(ScanPoint(xy=pts[k].copy(), xyz=world[k], angles=angles[k], voltages=v))

    acq = None
    if serpentine and pattern.kind == "grid":
        n = pattern.params["n"]
        acq = np.arange(n * n).reshape(n, n)
        acq[1::2] = acq[1::2, ::-1]
        acq = acq.ravel()
    return CompiledPattern(points=compiled, out_of_range=out_of_range, acq_order=acq)


def parse_pattern_spec(spec):
    """Build a pattern from a CLI spec string.

    Accepted forms: ``grid:NxL`` (N points per side over an LxL region),
    ``circles:NR,NPHI,R``, ``file:points.csv``, or a path to a pattern JSON.
    """
    if spec.startswith("grid:"):
        body = spec[len("grid:"):]
        try:
            n_s, l_s = body.split("x")
            return gen_grid(int(n_s), float(l_s))
        except ValueError as err:
            raise FormatError(f"bad grid spec {spec!r}; expected grid:NxL") from err
    if spec.startswith("circles:"):
        body = spec[len("circles:"):]
        try:
            nr_s, np_s, r_s = body.split(",")
            return gen_circles(int(nr_s), int(np_s), float(r_s))
        except ValueError as err:
            raise FormatError(f"bad circles spec {spec!r}; expected circles:NR,NPHI,R") from err
    if spec.startswith("file:"):
        return load_pattern_csv(spec[len("file:"):])
    if spec.endswith(".csv"):
        return load_pattern_csv(spec)
    if spec.endswith(".json"):
        return ScanPattern.load(spec)
    raise FormatError(f"unrecognized pattern spec {spec!r}")
