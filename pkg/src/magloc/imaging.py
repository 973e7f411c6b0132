"""1D-to-2D encodings of magnetic time-series windows.

Four transforms turn a scalar window into a square image:

    recurrence plot    RP_ij   = 1 - d_ij / max(d)          in [0, 1]
    summation field    GASF_ij = cos(theta_i + theta_j)     in [-1, 1]
    difference field   GADF_ij = sin(theta_i - theta_j)     in [-1, 1]
    transition field   MTF_ij  = W[bin(v_i), bin(v_j)]      in [0, 1]

where theta = arccos of the window rescaled into [-1, 1] and W is the
row-stochastic quantile-bin transition matrix of the window. Images are
optionally resampled to a fixed side with bilinear interpolation.

Degenerate constant windows are defined to keep outputs in range: RP becomes
all ones (zero distance everywhere is maximal recurrence), the rescaled
values become zero (theta = pi/2), and W rows without outgoing transitions
are uniform.

The pairwise-distance and resize inner loops are hot; both have numba and
pure-numpy variants selected via ``magloc.backend``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .backend import njit
from .errors import AlignmentError, DataError

DEFAULT_WINDOW_S = 7.0
DEFAULT_STEP_S = 1.0
DEFAULT_IMAGE_SIDE = 32
DEFAULT_MTF_BINS = 8
DEFAULT_RP_METRIC = "canberra"

RP_METRICS = ("euclidean", "canberra", "cityblock", "chebyshev")
TRANSFORMS = ("rp", "gasf", "gadf", "mtf")
AXES = ("x", "y", "z")

# Full channel order; a layout of N takes the first N entries.
CHANNEL_ORDER = tuple((tf, ax) for tf in TRANSFORMS for ax in AXES)
CHANNEL_LAYOUTS = (1, 3, 9, 12)


@dataclass(frozen=True)
class WindowSegment:
    """One sliding-window cut of a scalar series."""

    values: np.ndarray
    t_start: float
    t_end: float
    anchor_pos: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if self.values.ndim != 1 or len(self.values) < 2:
            raise DataError("window segment needs a 1-D series of length >= 2")
        if not np.all(np.isfinite(self.values)):
            raise DataError("window segment contains non-finite values")


@dataclass(frozen=True)
class WindowImageStack:
    """N stacked transform images for one window, plus its channel tags."""

    channels: np.ndarray  # (N, S, S)
    channel_layout: tuple[tuple[str, str], ...]
    t_start: float
    t_end: float
    anchor_pos: tuple[float, float] | None = None

    def __post_init__(self):
        if self.channels.ndim != 3 or self.channels.shape[1] != self.channels.shape[2]:
            raise DataError("channel stack must be (N, S, S)")
        if len(self.channel_layout) != self.channels.shape[0]:
            raise DataError("channel tags do not match channel count")


def sliding_windows(values, rate: float, size_s: float = DEFAULT_WINDOW_S,
                    step_s: float = DEFAULT_STEP_S, t0: float = 0.0,
                    pos=None) -> list[WindowSegment]:
    """Cut a uniform-rate scalar series into overlapping fixed-size windows.

    Window k covers samples ``[k*step_n, k*step_n + size_n)`` with
    ``size_n = floor(size_s * rate)`` and ``step_n = floor(step_s * rate)``;
    a trailing partial window is dropped. When per-sample positions are
    given, each window is anchored at the position of its last sample.
    """
    if size_s <= 0 or step_s <= 0:
        raise DataError("window size and step must be positive")
    values = np.asarray(values, dtype=np.float64)
    size_n = int(np.floor(size_s * rate))
    step_n = int(np.floor(step_s * rate))
    if size_n < 2:
        raise DataError(f"window of {size_s}s at {rate}Hz has {size_n} samples; need >= 2")
    if step_n < 1:
        raise DataError(f"step of {step_s}s at {rate}Hz is below one sample")
    n = len(values)
    out = []
    for start in range(0, n - size_n + 1, step_n):
        end = start + size_n  # exclusive
        anchor = None
        if pos is not None:
            anchor = (float(pos[end - 1][0]), float(pos[end - 1][1]))
        out.append(WindowSegment(
            values=values[start:end],
            t_start=t0 + start / rate,
            t_end=t0 + (end - 1) / rate,
            anchor_pos=anchor,
        ))
    return out


def window_count(n_samples: int, rate: float, size_s: float, step_s: float) -> int:
    size_n = int(np.floor(size_s * rate))
    step_n = int(np.floor(step_s * rate))
    if n_samples < size_n:
        return 0
    return (n_samples - size_n) // step_n + 1


# ---------------------------------------------------------------------------
# pairwise distances (hot kernel, dual backend)

_METRIC_IDS = {"euclidean": 0, "cityblock": 0, "chebyshev": 0, "canberra": 1}


def _pairwise_numpy(values: np.ndarray, metric_id: int) -> np.ndarray:
    diff = np.abs(values[:, None] - values[None, :])
    if metric_id == 0:
        return diff
    den = np.abs(values)[:, None] + np.abs(values)[None, :]
    out = np.zeros_like(diff)
    np.divide(diff, den, out=out, where=den > 0.0)
    return out


@njit(cache=True)
def _pairwise_jit(values, metric_id):
    m = values.shape[0]
    out = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            d = abs(values[i] - values[j])
            if metric_id == 1:
                den = abs(values[i]) + abs(values[j])
                out[i, j] = d / den if den > 0.0 else 0.0
            else:
                out[i, j] = d
    return out


_pairwise = backend.select(_pairwise_jit, _pairwise_numpy)


def pairwise_distances(values, metric: str = DEFAULT_RP_METRIC) -> np.ndarray:
    """Full m x m distance matrix of a scalar series under the named metric.

    On scalar samples euclidean, cityblock, and chebyshev all reduce to
    |v_i - v_j|; canberra divides by |v_i| + |v_j| with 0/0 defined as 0.
    """
    if metric not in _METRIC_IDS:
        raise DataError(f"unsupported RP metric {metric!r}; choose from {RP_METRICS}")
    values = np.ascontiguousarray(values, dtype=np.float64)
    return _pairwise(values, _METRIC_IDS[metric])


# ---------------------------------------------------------------------------
# bilinear resize (hot kernel, dual backend)

def _resize_numpy(img: np.ndarray, side: int) -> np.ndarray:
    m = img.shape[0]
    scale = (m - 1) / (side - 1)
    s = np.arange(side) * scale
    i0 = np.minimum(s.astype(np.int64), m - 2)
    f = s - i0
    y0, fy = i0[:, None], f[:, None]
    x0, fx = i0[None, :], f[None, :]
    v00 = img[i0][:, i0]
    v01 = img[i0][:, i0 + 1]
    v10 = img[i0 + 1][:, i0]
    v11 = img[i0 + 1][:, i0 + 1]
    return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11)


@njit(cache=True)
def _resize_jit(img, side):
    m = img.shape[0]
    out = np.empty((side, side))
    scale = (m - 1) / (side - 1)
    for i in range(side):
        sy = i * scale
        y0 = int(sy)
        if y0 > m - 2:
            y0 = m - 2
        fy = sy - y0
        for j in range(side):
            sx = j * scale
            x0 = int(sx)
            if x0 > m - 2:
                x0 = m - 2
            fx = sx - x0
            out[i, j] = (1.0 - fy) * ((1.0 - fx) * img[y0, x0] + fx * img[y0, x0 + 1]) \
                + fy * ((1.0 - fx) * img[y0 + 1, x0] + fx * img[y0 + 1, x0 + 1])
    return out


_resize = backend.select(_resize_jit, _resize_numpy)


def resize(image, side: int) -> np.ndarray:
    """Bilinear square resize with corner alignment; identity when side == m.

    Output values are convex combinations of input pixels, so they stay
    within the input's [min, max] range.
    """
    image = np.ascontiguousarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise DataError(f"resize expects a square image, got {image.shape}")
    m = image.shape[0]
    if m < 2 or side < 2:
        raise DataError("resize needs input and output sides >= 2")
    if side == m:
        return image.copy()
    return _resize(image, side)


def _maybe_resize(img: np.ndarray, side: int | None) -> np.ndarray:
    return img if side is None else resize(img, side)


# ---------------------------------------------------------------------------
# transforms

def recurrence_plot(seg, metric: str = DEFAULT_RP_METRIC,
                    image_side: int | None = None) -> np.ndarray:
    """Distance-normalized recurrence image of one window.

    RP_ij = 1 - d_ij / max(d); for a constant window (max distance zero)
    the image is all ones. Symmetric with unit diagonal before any resize.
    """
    values = seg.values if isinstance(seg, WindowSegment) else np.asarray(seg, dtype=np.float64)
    d = pairwise_distances(values, metric)
    dmax = d.max()
    rp = np.ones_like(d) if dmax == 0.0 else 1.0 - d / dmax
    return _maybe_resize(rp, image_side)


def gaf_rescale(seg) -> tuple[np.ndarray, np.ndarray]:
    """Rescale a window into [-1, 1] and map it to polar angles.

    vtilde_i = ((v_i - max V) + (v_i - min V)) / (max V - min V),
    theta_i = arccos(vtilde_i). A constant window maps to vtilde = 0,
    theta = pi/2.
    """
    values = seg.values if isinstance(seg, WindowSegment) else np.asarray(seg, dtype=np.float64)
    vmax, vmin = values.max(), values.min()
    if vmax == vmin:
        vt = np.zeros_like(values)
    else:
        # stays in [-1, 1] even in floating point: |(v-max)+(v-min)| <= max-min
        vt = ((values - vmax) + (values - vmin)) / (vmax - vmin)
    return vt, np.arccos(vt)


def gasf(seg, image_side: int | None = None) -> np.ndarray:
    """Summation field cos(theta_i + theta_j); symmetric, in [-1, 1]."""
    _, theta = gaf_rescale(seg)
    img = np.cos(theta[:, None] + theta[None, :])
    return _maybe_resize(img, image_side)


def gadf(seg, image_side: int | None = None) -> np.ndarray:
    """Difference field sin(theta_i - theta_j); antisymmetric, zero diagonal."""
    _, theta = gaf_rescale(seg)
    img = np.sin(theta[:, None] - theta[None, :])
    return _maybe_resize(img, image_side)


def mtf_bins(values: np.ndarray, q_bins: int) -> np.ndarray:
    """Assign each sample to a quantile bin in [0, q_bins).

    Bin edges are the empirical quantiles at fractions k/Q; a value equal
    to an edge goes to the lower bin.
    """
    edges = np.quantile(values, np.arange(1, q_bins) / q_bins)
    return np.searchsorted(edges, values, side="left")


def mtf_transition_matrix(bins: np.ndarray, q_bins: int) -> np.ndarray:
    """Row-stochastic first-order transition matrix of the bin sequence.

    Rows without outgoing transitions are filled uniformly with 1/Q.
    """
    w = np.zeros((q_bins, q_bins))
    np.add.at(w, (bins[:-1], bins[1:]), 1.0)
    row_sums = w.sum(axis=1)
    empty = row_sums == 0.0
    w[~empty] /= row_sums[~empty, None]
    w[empty] = 1.0 / q_bins
    return w


def mtf(seg, q_bins: int = DEFAULT_MTF_BINS, image_side: int | None = None) -> np.ndarray:
    """Transition-probability image MTF_ij = W[bin(v_i), bin(v_j)]."""
    values = seg.values if isinstance(seg, WindowSegment) else np.asarray(seg, dtype=np.float64)
    if q_bins < 2:
        raise DataError(f"mtf needs at least 2 quantile bins, got {q_bins}")
    bins = mtf_bins(values, q_bins)
    w = mtf_transition_matrix(bins, q_bins)
    img = w[bins[:, None], bins[None, :]]
    return _maybe_resize(img, image_side)


_TRANSFORM_FNS = {
    "rp": lambda seg, metric, q_bins, side: recurrence_plot(seg, metric, side),
    "gasf": lambda seg, metric, q_bins, side: gasf(seg, side),
    "gadf": lambda seg, metric, q_bins, side: gadf(seg, side),
    "mtf": lambda seg, metric, q_bins, side: mtf(seg, q_bins, side),
}


def channel_tags(layout: int) -> tuple[tuple[str, str], ...]:
    if layout not in CHANNEL_LAYOUTS:
        raise DataError(f"channel layout must be one of {CHANNEL_LAYOUTS}, got {layout}")
    return CHANNEL_ORDER[:layout]


def stack_channels(windows_per_axis: dict, layout: int = 12,
                   image_side: int = DEFAULT_IMAGE_SIDE,
                   metric: str = DEFAULT_RP_METRIC,
                   q_bins: int = DEFAULT_MTF_BINS) -> list[WindowImageStack]:
    """Build the N-channel image stack sequence for time-aligned axis windows.

    ``windows_per_axis`` maps axis names ('x', 'y', 'z') to equal-length
    lists of :class:`WindowSegment`; window k of every axis must cover the
    same time span. Channels follow :data:`CHANNEL_ORDER` truncated to
    ``layout``: RP on x for N=1, RP on x/y/z for N=3, RP+GASF+GADF for
    N=9, all four transforms for N=12.
    """
    tags = channel_tags(layout)
    axes_needed = sorted({ax for _, ax in tags})
    for ax in axes_needed:
        if ax not in windows_per_axis:
            raise AlignmentError(f"layout {layout} needs axis {ax!r} windows")
    counts = {ax: len(windows_per_axis[ax]) for ax in axes_needed}
    if len(set(counts.values())) != 1:
        raise AlignmentError(f"per-axis window counts differ: {counts}")
    n_windows = counts[axes_needed[0]]
    ref_axis = axes_needed[0]
    stacks = []
    for k in range(n_windows):
        ref = windows_per_axis[ref_axis][k]
        for ax in axes_needed:
            seg = windows_per_axis[ax][k]
            if abs(seg.t_start - ref.t_start) > 1e-9 or abs(seg.t_end - ref.t_end) > 1e-9:
                raise AlignmentError(
                    f"window {k}: axis {ax!r} spans [{seg.t_start}, {seg.t_end}], "
                    f"axis {ref_axis!r} spans [{ref.t_start}, {ref.t_end}]")
        channels = np.stack([
            _TRANSFORM_FNS[tf](windows_per_axis[ax][k], metric, q_bins, image_side)
            for tf, ax in tags
        ])
        stacks.append(WindowImageStack(
            channels=channels,
            channel_layout=tags,
            t_start=ref.t_start,
            t_end=ref.t_end,
            anchor_pos=ref.anchor_pos,
        ))
    return stacks


# documented output ranges, used by the image dump and its tests
TRANSFORM_RANGES = {"rp": (0.0, 1.0), "gasf": (-1.0, 1.0), "gadf": (-1.0, 1.0), "mtf": (0.0, 1.0)}
