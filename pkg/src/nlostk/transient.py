"""Transient containers and direct-return analytics.

A transient is a histogram of photon counts per time bin at one detection
point; a dataset is one histogram per scan point plus the per-point scan
records. This module owns the dataset file container and everything that is
computed from the direct (first-bounce) portion: realignment, the split into
direct/hidden portions, the per-point gamma and MIP maps, and gamma
normalization of the hidden portion.

Container layout (one directory per dataset):
  meta.json        bin_width_ps, num_bins, t0_ps (scalar, or per-point list
                   after realignment), points[], exposure_s, dtype, flags
  histograms.bin   row-major point x bin, little-endian uint32 counts
                   (float32 once enhanced or otherwise real-valued)
"""

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AmbiguousPeakError, DomainError, FormatError, NormalizationError
from .patterns import ScanPoint
from .pgm import write_pgm

_MIN_BINS = 16
_PEAK_DOMINANCE = 5.0  # max/median ratio for an unambiguous direct peak


@dataclass(frozen=True)
class TransientHistogram:
    """Photon counts per time bin; t0_ps is the absolute time of bin 0."""

    counts: np.ndarray
    bin_width_ps: float
    t0_ps: float = 0.0

    def __post_init__(self):
        counts = np.asarray(self.counts)
        object.__setattr__(self, "counts", counts)
        if counts.ndim != 1 or counts.size < _MIN_BINS:
            raise DomainError(f"histogram needs at least {_MIN_BINS} bins")
        if self.bin_width_ps <= 0:
            raise DomainError("bin width must be positive")
        if np.any(counts < 0):
            raise DomainError("counts must be non-negative")

    @property
    def num_bins(self):
        return self.counts.size

    def total(self):
        return float(self.counts.sum())


@dataclass
class TransientDataset:
    """Per-point histograms with shared binning and scan records."""

    points: list            # ScanPoint per row
    counts: np.ndarray      # (n_points, num_bins)
    bin_width_ps: float
    t0_ps: np.ndarray       # (n_points,) absolute time of bin 0, ps
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        self.t0_ps = np.asarray(self.t0_ps, float).reshape(-1)
        if self.counts.ndim != 2:
            raise DomainError("dataset counts must be 2-D (points x bins)")
        if len(self.points) != self.counts.shape[0] or self.t0_ps.size != self.counts.shape[0]:
            raise DomainError("points, counts, and t0 lengths disagree")
        if self.counts.shape[1] < _MIN_BINS:
            raise DomainError(f"histograms need at least {_MIN_BINS} bins")

    @property
    def n_points(self):
        return self.counts.shape[0]

    @property
    def num_bins(self):
        return self.counts.shape[1]

    def histogram(self, i):
        return TransientHistogram(counts=self.counts[i], bin_width_ps=self.bin_width_ps,
                                  t0_ps=float(self.t0_ps[i]))

    def xy(self):
        return np.array([p.xy for p in self.points])


@dataclass
class GammaMap:
    """Per-point direct-return statistic paired with wall coordinates."""

    values: np.ndarray  # (n_points,)
    xy: np.ndarray      # (n_points, 2)
    failed: list = field(default_factory=list)  # indices without a usable peak

    def min_positive(self):
        vals = self.values[self.values > 0]
        return float(vals.min()) if vals.size else 0.0


def find_los_peak(counts, min_ratio=_PEAK_DOMINANCE):
    """Integer bin of the dominant direct-return peak.

    A peak counts as dominant when the maximum is at least ``min_ratio``
    times the median and positive; otherwise AmbiguousPeakError is raised
    and the caller must supply the bin explicitly.
    """
    counts = np.asarray(counts, float)
    peak = int(np.argmax(counts))
    top = counts[peak]
    med = float(np.median(counts))
    if top <= 0 or top < min_ratio * med:
        raise AmbiguousPeakError(
            f"no dominant peak (max {top:g} vs median {med:g}); supply the bin explicitly")
    return peak


def locate_peak(counts, refine=True):
    """Peak bin as a float, optionally refined by a 3-point parabola.

    The fractional offset sharpens the depth estimate below the bin
    quantization limit when the peak is jitter-broadened.
    """
    counts = np.asarray(counts, float)
    k = int(np.argmax(counts))
    if not refine or k == 0 or k == counts.size - 1:
        return float(k)
    y0, y1, y2 = counts[k - 1], counts[k], counts[k + 1]
    denom = y0 - 2.0 * y1 + y2
    if denom >= 0:  # flat or non-concave neighborhood: no refinement
        return float(k)
    return k + 0.5 * (y0 - y2) / denom


def realign(h, los_bin):
    """Shift a histogram so ``los_bin`` becomes bin 0.

    t0 grows by the shifted time, preserving absolute arrival times. Counts
    in bins before ``los_bin`` fall off the left edge and are dropped.
    """
    if not 0 <= los_bin < h.num_bins:
        raise IndexError(f"los_bin {los_bin} outside [0, {h.num_bins})")
    out = np.zeros_like(h.counts)
    out[: h.num_bins - los_bin] = h.counts[los_bin:]
    return TransientHistogram(counts=out, bin_width_ps=h.bin_width_ps,
                              t0_ps=h.t0_ps + los_bin * h.bin_width_ps)


def realign_dataset(ds, los_bins=None):
    """Realign every histogram; default shift is each row's detected peak."""
    if los_bins is None:
        los_bins = [find_los_peak(ds.counts[i]) for i in range(ds.n_points)]
    los_bins = np.asarray(los_bins, int)
    out = np.zeros_like(ds.counts)
    t0 = ds.t0_ps.copy()
    for i, b in enumerate(los_bins):
        if not 0 <= b < ds.num_bins:
            raise IndexError(f"los_bin {b} outside [0, {ds.num_bins}) at point {i}")
        out[i, : ds.num_bins - b] = ds.counts[i, b:]
        t0[i] += b * ds.bin_width_ps
    meta = dict(ds.meta)
    meta["realigned"] = True
    return TransientDataset(points=list(ds.points), counts=out,
                            bin_width_ps=ds.bin_width_ps, t0_ps=t0, meta=meta)


def split_los_nlos(h, window_halfwidth, los_bin=None):
    """Partition a histogram into its direct-return window and the rest.

    Returns (los, nlos): ``los`` keeps counts in
    [peak - w, peak + w] and is zero elsewhere, ``nlos`` is the exact
    complement, so los + nlos reproduces the input bin for bin.
    """
    if window_halfwidth < 0:
        raise DomainError("window halfwidth must be non-negative")
    peak = find_los_peak(h.counts) if los_bin is None else int(los_bin)
    lo = max(0, peak - window_halfwidth)
    hi = min(h.num_bins - 1, peak + window_halfwidth)
    los = np.zeros_like(h.counts)
    los[lo:hi + 1] = h.counts[lo:hi + 1]
    nlos = h.counts - los
    mk = lambda c: TransientHistogram(counts=c, bin_width_ps=h.bin_width_ps, t0_ps=h.t0_ps)
    return mk(los), mk(nlos)


def estimate_bias(counts, lo, hi):
    """Per-bin background estimate: median of the pre-window region.

    Bins after the window may contain hidden-scene returns, so only the
    region before the direct-return window is trusted; when that region is
    too short the median is taken over everything outside [lo, hi].
    """
    if lo >= 8:
        region = counts[:lo]
    else:
        region = np.concatenate([counts[:lo], counts[hi + 1:]])
    return float(np.median(region)) if region.size else 0.0


def gamma_map(ds, window_halfwidth, los_bins=None):
    """Per-point direct-return mass: window sum minus the estimated bias.

    Bias is the median count over bins before the window (scaled by the
    window size before subtraction) and the result is clamped at zero.
    Points without a detectable peak are recorded in ``failed`` with value 0
    instead of aborting the map.
    """
    return _los_statistic(ds, window_halfwidth, los_bins, mode="sum")


def mip_map(ds, window_halfwidth, los_bins=None):
    """Per-point maximum count in the direct-return window, bias-subtracted."""
    return _los_statistic(ds, window_halfwidth, los_bins, mode="max")


def _los_statistic(ds, window_halfwidth, los_bins, mode):
    if window_halfwidth < 0:
        raise DomainError("window halfwidth must be non-negative")
    values = np.zeros(ds.n_points)
    failed = []
    for i in range(ds.n_points):
        row = ds.counts[i]
        try:
            peak = find_los_peak(row) if los_bins is None else int(los_bins[i])
        except AmbiguousPeakError:
            failed.append(i)
            continue
        lo = max(0, peak - window_halfwidth)
        hi = min(ds.num_bins - 1, peak + window_halfwidth)
        bias = estimate_bias(row, lo, hi)
        window = row[lo:hi + 1]
        if mode == "sum":
            values[i] = max(float(window.sum()) - bias * window.size, 0.0)
        else:
            values[i] = max(float(window.max()) - bias, 0.0)
    return GammaMap(values=values, xy=ds.xy(), failed=failed)


def normalize_by_gamma(ds, gmap, floor=1e-3):
    """Divide each histogram by its gamma value, flooring weak points.

    The divisor is max(gamma_i, floor * max(gamma)); points at the floor are
    flagged in meta["floored_points"]. Counts become real-valued.
    """
    if gmap.values.size != ds.n_points:
        raise NormalizationError("gamma map does not cover the dataset")
    gmax = float(gmap.values.max()) if gmap.values.size else 0.0
    if gmax <= 0:
        raise NormalizationError("gamma map is all zero; nothing to normalize by")
    cut = floor * gmax
    divisor = np.maximum(gmap.values, cut)
    floored = np.nonzero(gmap.values < cut)[0].tolist()
    out = ds.counts.astype(float) / divisor[:, None]
    meta = dict(ds.meta)
    meta.update({"normalized": True, "floored_points": floored, "dtype": "f4"})
    return TransientDataset(points=list(ds.points), counts=out,
                            bin_width_ps=ds.bin_width_ps, t0_ps=ds.t0_ps.copy(), meta=meta)


def counts_fwhm_bins(counts):
    """Full width at half maximum of the dominant peak, in bins (interpolated)."""
    counts = np.asarray(counts, float)
    k = int(np.argmax(counts))
    half = counts[k] / 2.0
    if counts[k] <= 0:
        raise DomainError("cannot measure FWHM of an empty histogram")

    def cross(idx_range, direction):
        prev = k
        for i in idx_range:
            if counts[i] < half:
                # linear interpolation between i and the previous bin
                frac = (counts[prev] - half) / max(counts[prev] - counts[i], 1e-300)
                return prev + direction * frac
            prev = i
        return idx_range[-1] if len(idx_range) else k

    left = cross(range(k - 1, -1, -1), -1.0)
    right = cross(range(k + 1, counts.size), +1.0)
    return float(right - left)


def estimate_los_halfwidth(ds, factor=3.0):
    """Direct-window halfwidth from the data: ``factor`` times the FWHM of
    the strongest histogram's peak, at least 3 bins."""
    strongest = int(np.argmax(ds.counts.max(axis=1)))
    fwhm = counts_fwhm_bins(ds.counts[strongest])
    return max(3, int(np.ceil(factor * fwhm)))


def los_halfwidth_from_jitter(jitter, bin_width_ps, factor=3.0):
    """Default direct-window halfwidth: ``factor`` times the FWHM of the
    fitted jitter kernel, in bins. Wide enough for >99% of the broadened
    spike without swallowing near-wall hidden returns."""
    from .simulator import jitter_kernel

    kern = jitter_kernel(jitter, bin_width_ps)
    if kern.size == 1:
        return 3
    return max(3, int(np.ceil(factor * counts_fwhm_bins(kern))))


# ---------------------------------------------------------------------------
# dataset container


def save_dataset(ds, directory):
    """Write meta.json + histograms.bin into ``directory`` (created if needed)."""
    os.makedirs(directory, exist_ok=True)
    counts = np.asarray(ds.counts)
    integral = (np.issubdtype(counts.dtype, np.integer)
                or (np.all(counts >= 0) and np.all(counts == np.round(counts))
                    and counts.max(initial=0) < 2 ** 32))
    enhanced = bool(ds.meta.get("enhanced")) or ds.meta.get("dtype") == "f4"
    dtype = "u4" if integral and not enhanced else "f4"
    t0 = ds.t0_ps
    t0_json = float(t0[0]) if np.all(t0 == t0[0]) else [float(v) for v in t0]
    meta = dict(ds.meta)
    meta.update({
        "bin_width_ps": ds.bin_width_ps,
        "num_bins": int(ds.num_bins),
        "t0_ps": t0_json,
        "dtype": dtype,
        "points": [p.to_dict() for p in ds.points],
    })
    meta.setdefault("exposure_s", 1.0)
    with open(os.path.join(directory, "meta.json"), "w") as f:
        json.dump(meta, f, indent=2)
    arr = counts.astype("<u4" if dtype == "u4" else "<f4")
    arr.tofile(os.path.join(directory, "histograms.bin"))


def load_dataset(directory):
    """Read a dataset container written by save_dataset."""
    meta_path = os.path.join(directory, "meta.json")
    with open(meta_path) as f:
        meta = json.load(f)
    try:
        bin_width = float(meta["bin_width_ps"])
        num_bins = int(meta["num_bins"])
        dtype = meta.get("dtype", "u4")
        points = [ScanPoint.from_dict(d) for d in meta["points"]]
        t0_raw = meta["t0_ps"]
    except (KeyError, TypeError) as err:
        raise FormatError(f"{meta_path}: bad dataset metadata: {err}") from err
    n = len(points)
    t0 = (np.full(n, float(t0_raw)) if np.isscalar(t0_raw)
          else np.asarray(t0_raw, float))
    raw = np.fromfile(os.path.join(directory, "histograms.bin"),
                      dtype="<u4" if dtype == "u4" else "<f4")
    if raw.size != n * num_bins:
        raise FormatError(f"histograms.bin holds {raw.size} values, expected {n * num_bins}")
    counts = raw.reshape(n, num_bins)
    counts = counts.astype(np.int64) if dtype == "u4" else counts.astype(float)
    extra = {k: v for k, v in meta.items()
             if k not in {"bin_width_ps", "num_bins", "t0_ps", "dtype", "points"}}
    extra["dtype"] = dtype
    return TransientDataset(points=points, counts=counts, bin_width_ps=bin_width,
                            t0_ps=t0, meta=extra)


def crop_dataset(ds, num_bins):
    """Keep only the first ``num_bins`` bins of every histogram."""
    if not _MIN_BINS <= num_bins <= ds.num_bins:
        raise DomainError(f"num_bins must be in [{_MIN_BINS}, {ds.num_bins}]")
    return replace(ds, counts=ds.counts[:, :num_bins].copy(),
                   points=list(ds.points), t0_ps=ds.t0_ps.copy(), meta=dict(ds.meta))


# ---------------------------------------------------------------------------
# gamma/MIP map output


def write_gamma_csv(gmap, path):
    """CSV rows: point index, wall x, wall y, value."""
    with open(path, "w", newline="") as f:
        f.write("index,x_m,y_m,value\n")
        for i, ((x, y), v) in enumerate(zip(gmap.xy, gmap.values)):
            f.write(f"{i},{float(x)!r},{float(y)!r},{float(v)!r}\n")


def load_gamma_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 4:
        raise FormatError(f"{path}: expected 4 columns (index,x_m,y_m,value)")
    return GammaMap(values=data[:, 3], xy=data[:, 1:3])


def write_gamma_pgm(gmap, path, grid_n=None):
    """8-bit preview for grid patterns (min-max normalized, row-major)."""
    n = grid_n or int(round(np.sqrt(gmap.values.size)))
    if n * n != gmap.values.size:
        raise DomainError(f"{gmap.values.size} points is not a square grid; pass grid_n")
    img = gmap.values.reshape(n, n)
    write_pgm(path, img)
