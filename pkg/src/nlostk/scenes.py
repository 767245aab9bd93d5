"""Hidden-scene voxel volumes: container, file format, builtin test scenes.

A volume is an axis-aligned albedo grid in the wall frame. On disk it is a
JSON sidecar ({"dims": [nx, ny, nz], "bbox_m": {"x": [lo, hi], ...}}) next to
a raw array of 32-bit little-endian floats in x-fastest order.

Builtin scenes are flat boards at the reference stand-off depth of 0.8 m:
``whiteboard`` (0.6 x 0.4 m), ``s-shape`` (0.6 x 0.6 m), ``checkerboard``
and ``reso-board`` (0.8 x 0.8 m; the latter striped with varying widths).
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FormatError

BUILTIN_SCENES = ("whiteboard", "s-shape", "checkerboard", "reso-board")

# 5x3 stencil of an "S" glyph, top row first.
_S_STENCIL = np.array(
    [
        [1, 1, 1],
        [1, 0, 0],
        [1, 1, 1],
        [0, 0, 1],
        [1, 1, 1],
    ],
    dtype=bool,
)


@dataclass(frozen=True)
class VoxelVolume:
    """Axis-aligned albedo grid in the wall frame.

    ``values[ix, iy, iz]`` is the albedo of the voxel whose center is
    lo + (index + 0.5) * voxel_size along each axis.
    """

    values: np.ndarray  # (nx, ny, nz), >= 0
    lo: np.ndarray      # (3,) bbox lower corner, m
    hi: np.ndarray      # (3,) bbox upper corner, m

    def __post_init__(self):
        values = np.asarray(self.values, float)
        lo = np.asarray(self.lo, float).reshape(3)
        hi = np.asarray(self.hi, float).reshape(3)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if values.ndim != 3 or min(values.shape) < 1:
            raise DomainError("volume needs a 3-D grid with at least one voxel per axis")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise DomainError("albedo values must be finite and non-negative")
        if np.any(hi <= lo):
            raise DomainError("bounding box must have positive extent on every axis")

    @property
    def dims(self):
        return self.values.shape

    @property
    def voxel_size(self):
        return (self.hi - self.lo) / np.asarray(self.dims, float)

    def voxel_centers(self):
        """Voxel center coordinates, shape (nx, ny, nz, 3), wall frame."""
        axes = [
            self.lo[a] + (np.arange(self.dims[a]) + 0.5) * self.voxel_size[a]
            for a in range(3)
        ]
        xx, yy, zz = np.meshgrid(*axes, indexing="ij")
        return np.stack([xx, yy, zz], axis=-1)

    def centers_flat(self):
        """Voxel centers flattened in the array's own (C) order, (P, 3)."""
        return self.voxel_centers().reshape(-1, 3)

    @classmethod
    def empty(cls, dims, lo, hi):
        return cls(values=np.zeros(tuple(int(d) for d in dims)), lo=lo, hi=hi)

    def save(self, prefix):
        """Write ``<prefix>.json`` and ``<prefix>.raw``."""
        meta = {
            "dims": [int(d) for d in self.dims],
            "bbox_m": {
                "x": [float(self.lo[0]), float(self.hi[0])],
                "y": [float(self.lo[1]), float(self.hi[1])],
                "z": [float(self.lo[2]), float(self.hi[2])],
            },
            "data": os.path.basename(str(prefix)) + ".raw",
        }
        with open(f"{prefix}.json", "w") as f:
            json.dump(meta, f, indent=2)
        # x-fastest on disk: transpose so the C-order ravel runs x first
        raw = np.ascontiguousarray(self.values.transpose(2, 1, 0), dtype="<f4")
        raw.tofile(f"{prefix}.raw")

    @classmethod
    def load(cls, path):
        """Load from ``<prefix>.json`` (or the prefix itself)."""
        path = str(path)
        json_path = path if path.endswith(".json") else path + ".json"
        with open(json_path) as f:
            meta = json.load(f)
        try:
            dims = [int(d) for d in meta["dims"]]
            bbox = meta["bbox_m"]
            lo = np.array([bbox["x"][0], bbox["y"][0], bbox["z"][0]], float)
            hi = np.array([bbox["x"][1], bbox["y"][1], bbox["z"][1]], float)
        except (KeyError, IndexError, TypeError) as err:
            raise FormatError(f"{json_path}: bad volume sidecar: {err}") from err
        raw_path = os.path.join(os.path.dirname(json_path), meta.get(
            "data", os.path.basename(json_path)[:-5] + ".raw"))
        raw = np.fromfile(raw_path, dtype="<f4")
        nx, ny, nz = dims
        if raw.size != nx * ny * nz:
            raise FormatError(f"{raw_path}: expected {nx * ny * nz} floats, found {raw.size}")
        values = raw.reshape(nz, ny, nx).transpose(2, 1, 0).astype(float)
        return cls(values=values, lo=lo, hi=hi)


def _board_mask(vol, width, height, depth_m, thickness_vox=1):
    """Indices of a centered width x height board at the given depth."""
    centers = vol.voxel_centers()
    x, y, z = centers[..., 0], centers[..., 1], centers[..., 2]
    iz = int(np.clip(np.round((depth_m - vol.lo[2]) / vol.voxel_size[2] - 0.5),
                     0, vol.dims[2] - 1))
    in_plane = (np.abs(x) <= width / 2) & (np.abs(y) <= height / 2)
    mask = np.zeros(vol.dims, bool)
    for dz in range(thickness_vox):
        k = min(iz + dz, vol.dims[2] - 1)
        mask[:, :, k] = in_plane[:, :, k]
    return mask


def make_scene(name, dims=(64, 64, 64), lo=(-0.4, -0.4, 0.5), hi=(0.4, 0.4, 1.1),
               depth_m=0.8, albedo=1.0):
    """Builtin flat test scenes; see BUILTIN_SCENES for the names."""
    vol = VoxelVolume.empty(dims, np.asarray(lo, float), np.asarray(hi, float))
    values = vol.values
    if name == "whiteboard":
        values[_board_mask(vol, 0.6, 0.4, depth_m)] = albedo
    elif name == "s-shape":
        mask = _board_mask(vol, 0.6, 0.6, depth_m)
        centers = vol.voxel_centers()
        # Map the in-board region onto the 5x3 "S" stencil.
        u = (centers[..., 0] + 0.3) / 0.6          # 0..1 across the board
        v = (0.3 - centers[..., 1]) / 0.6          # 0..1 downward
        col = np.clip((u * 3).astype(int), 0, 2)
        row = np.clip((v * 5).astype(int), 0, 4)
        mask &= _S_STENCIL[row, col]
        values[mask] = albedo
    elif name == "checkerboard":
        mask = _board_mask(vol, 0.8, 0.8, depth_m)
        centers = vol.voxel_centers()
        cell = 0.1  # 8x8 cells over 0.8 m
        ci = np.floor((centers[..., 0] + 0.4) / cell).astype(int)
        cj = np.floor((centers[..., 1] + 0.4) / cell).astype(int)
        mask &= (ci + cj) % 2 == 0
        values[mask] = albedo
    elif name == "reso-board":
        mask = _board_mask(vol, 0.8, 0.8, depth_m)
        centers = vol.voxel_centers()
        x = centers[..., 0] + 0.4  # 0..0.8 across the board
        stripe = np.zeros_like(x, bool)
        # Stripe pairs of growing width: w, gap w, next pair.
        edge = 0.0
        for w in (0.02, 0.04, 0.06, 0.09, 0.12, 0.15):
            stripe |= (x >= edge) & (x < edge + w)
            edge += 2 * w
        mask &= stripe
        values[mask] = albedo
    else:
        raise FormatError(f"unknown builtin scene {name!r}; expected one of {BUILTIN_SCENES}")
    if not values.any():
        raise DomainError(f"scene {name!r} is empty on a {dims} grid; grid too coarse?")
    return VoxelVolume(values=values, lo=vol.lo, hi=vol.hi)
