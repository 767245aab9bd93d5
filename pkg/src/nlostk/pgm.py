"""Minimal binary PGM (P5) writer for quick-look previews."""

import numpy as np


def write_pgm(path, image):
    """Write a 2-D array as 8-bit binary PGM, min-max normalized."""
    img = np.asarray(image, float)
    if img.ndim != 2:
        raise ValueError("PGM preview needs a 2-D array")
    lo, hi = float(img.min()), float(img.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    data = ((img - lo) * scale).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        f.write(data.tobytes())
