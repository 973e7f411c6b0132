"""Magnetic map gridding and landmark extraction.

A gridded map of mean field magnitude is searched for strict local extrema
against occupied 8-neighborhoods, the hits are grouped by single-linkage
clustering (extrema of noisy or fluctuating anomalies come in small
clusters), and clusters too close to the map's mean intensity are dropped.
Surviving clusters become integer-labelled landmarks; windows are labelled
by their euclidean-nearest landmark.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .errors import DataError, EmptyMapError, SelectionError
from .ingest import Dataset, project

DEFAULT_RESOLUTION_M = 1.0
DEFAULT_LINK_DISTANCE_M = 2.0


@dataclass
class MagneticMap:
    """Mean field magnitude on a uniform grid.

    Cell (ix, iy) covers [origin_x + ix*res, origin_x + (ix+1)*res) x
    [origin_y + iy*res, ...); ``mean`` is only meaningful where
    ``count > 0``.
    """

    resolution: float
    origin: tuple[float, float]
    mean: np.ndarray  # (nx, ny)
    count: np.ndarray  # (nx, ny)
    bounds: tuple[float, float, float, float]  # x_min, y_min, x_max, y_max

    @property
    def occupied(self) -> np.ndarray:
        return self.count > 0

    def cell_center(self, ix, iy) -> tuple[float, float]:
        return (self.origin[0] + (np.asarray(ix) + 0.5) * self.resolution,
                self.origin[1] + (np.asarray(iy) + 0.5) * self.resolution)

    def mean_intensity(self) -> float:
        return float(self.mean[self.occupied].mean())

    def std_intensity(self) -> float:
        return float(self.mean[self.occupied].std())


@dataclass(frozen=True)
class ExtremumCandidate:
    pos: tuple[float, float]
    intensity: float
    polarity: str  # "min" | "max"


@dataclass(frozen=True)
class LandmarkCluster:
    pos: tuple[float, float]
    intensity: float
    polarity: str
    size: int


@dataclass(frozen=True)
class Landmark:
    id: int
    pos: tuple[float, float]
    intensity: float
    polarity: str


def build_map(dataset: Dataset, resolution: float = DEFAULT_RESOLUTION_M) -> MagneticMap:
    """Grid the train trials into per-cell mean field magnitude.

    Every trial must carry ground-truth positions; each cell averages the
    xyz magnitudes of the samples that fall in it.
    """
    if resolution <= 0:
        raise DataError(f"map resolution must be positive, got {resolution}")
    xs, ys, mags = [], [], []
    for trial in dataset:
        if trial.pos is None:
            raise DataError(f"trial {trial.id}: map building needs ground-truth positions")
        xs.append(trial.pos[:, 0])
        ys.append(trial.pos[:, 1])
        mags.append(project(trial.m, "xyz"))
    if not xs:
        raise EmptyMapError("no trials to build a map from")
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    mag = np.concatenate(mags)
    if x.size == 0:
        raise EmptyMapError("no positioned samples")

    ox = np.floor(x.min() / resolution) * resolution
    oy = np.floor(y.min() / resolution) * resolution
    ix = np.floor((x - ox) / resolution).astype(np.int64)
    iy = np.floor((y - oy) / resolution).astype(np.int64)
    nx, ny = int(ix.max()) + 1, int(iy.max()) + 1

    total = np.zeros((nx, ny))
    count = np.zeros((nx, ny), dtype=np.int64)
    np.add.at(total, (ix, iy), mag)
    np.add.at(count, (ix, iy), 1)
    mean = np.zeros_like(total)
    np.divide(total, count, out=mean, where=count > 0)
    return MagneticMap(
        resolution=resolution,
        origin=(float(ox), float(oy)),
        mean=mean,
        count=count,
        bounds=(float(x.min()), float(y.min()), float(x.max()), float(y.max())),
    )


def detect_extrema(mag_map: MagneticMap) -> list[ExtremumCandidate]:
    """Strict local extrema of occupied cells against occupied 8-neighbors.

    Isolated occupied cells (no occupied neighbor at all) are not
    candidates; a strict comparison against an empty neighborhood would be
    vacuous.
    """
    occ = mag_map.occupied
    if not occ.any():
        raise EmptyMapError("magnetic map has no occupied cells")
    mean = mag_map.mean
    nx, ny = mean.shape
    out = []
    for ix in range(nx):
        for iy in range(ny):
            if not occ[ix, iy]:
                continue
            v = mean[ix, iy]
            is_max = is_min = True
            n_neighbors = 0
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    if dx == 0 and dy == 0:
                        continue
                    jx, jy = ix + dx, iy + dy
                    if 0 <= jx < nx and 0 <= jy < ny and occ[jx, jy]:
                        n_neighbors += 1
                        w = mean[jx, jy]
                        if v <= w:
                            is_max = False
                        if v >= w:
                            is_min = False
            if n_neighbors == 0:
                continue
            if is_max or is_min:
                cx, cy = mag_map.cell_center(ix, iy)
                out.append(ExtremumCandidate(
                    pos=(float(cx), float(cy)),
                    intensity=float(v),
                    polarity="max" if is_max else "min",
                ))
    return out


def refine_candidates(candidates: list[ExtremumCandidate],
                      link_distance: float = DEFAULT_LINK_DISTANCE_M) -> list[LandmarkCluster]:
    """Group candidates by single-linkage clustering cut at ``link_distance``.

    Minima and maxima are clustered separately. Each cluster collapses to
    its intensity-weighted centroid and its most extreme intensity.
    """
    if link_distance <= 0:
        raise DataError(f"link distance must be positive, got {link_distance}")
    clusters = []
    for polarity in ("max", "min"):
        group = [c for c in candidates if c.polarity == polarity]
        if not group:
            continue
        pts = np.array([c.pos for c in group])
        vals = np.array([c.intensity for c in group])
        if len(group) == 1:
            labels = np.array([1])
        else:
            z = linkage(pts, method="single")
            labels = fcluster(z, t=link_distance, criterion="distance")
        for lab in np.unique(labels):
            sel = labels == lab
            w = np.abs(vals[sel])
            if w.sum() == 0:
                w = np.ones_like(w)
            centroid = (pts[sel] * w[:, None]).sum(axis=0) / w.sum()
            extreme = vals[sel].max() if polarity == "max" else vals[sel].min()
            clusters.append(LandmarkCluster(
                pos=(float(centroid[0]), float(centroid[1])),
                intensity=float(extreme),
                polarity=polarity,
                size=int(sel.sum()),
            ))
    return clusters


def select_landmarks(clusters: list[LandmarkCluster], map_mean: float,
                     threshold: float) -> list[Landmark]:
    """Keep clusters whose intensity deviates from the map mean by >= threshold.

    Ids are contiguous from 0, assigned in (x, y) order for determinism.
    Raises :class:`SelectionError` when nothing survives.
    """
    if threshold < 0:
        raise DataError(f"selection threshold must be >= 0, got {threshold}")
    kept = [c for c in clusters if abs(c.intensity - map_mean) >= threshold]
    if not kept:
        raise SelectionError(
            f"no landmark cluster deviates from the map mean by >= {threshold} uT")
    kept.sort(key=lambda c: c.pos)
    return [Landmark(id=i, pos=c.pos, intensity=c.intensity, polarity=c.polarity)
            for i, c in enumerate(kept)]


def find_landmarks(dataset: Dataset, resolution: float = DEFAULT_RESOLUTION_M,
                   link_distance: float = DEFAULT_LINK_DISTANCE_M,
                   threshold: float | None = None) -> tuple[MagneticMap, list[Landmark]]:
    """Full map -> extrema -> clusters -> selection chain.

    ``threshold=None`` uses one standard deviation of the occupied-cell
    intensities.
    """
    mag_map = build_map(dataset, resolution)
    cands = detect_extrema(mag_map)
    clusters = refine_candidates(cands, link_distance)
    if threshold is None:
        threshold = mag_map.std_intensity()
    marks = select_landmarks(clusters, mag_map.mean_intensity(), threshold)
    return mag_map, marks


def label_windows(anchors, landmarks: list[Landmark]) -> np.ndarray:
    """Label each anchor with the id of its euclidean-nearest landmark.

    ``anchors`` is an (n, 2) array or a list of objects with
    ``anchor_pos``. Distance ties go to the lowest landmark id.
    """
    if not landmarks:
        raise DataError("cannot label windows without landmarks")
    if not isinstance(anchors, np.ndarray):
        pts = []
        for s in anchors:
            if s.anchor_pos is None:
                raise DataError("window without anchor position cannot be labelled")
            pts.append(s.anchor_pos)
        anchors = np.asarray(pts, dtype=np.float64)
    lm = np.array([l.pos for l in landmarks])  # ordered by id
    d2 = ((anchors[:, None, :] - lm[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)  # first minimum = lowest id on ties


def map_to_csv(mag_map: MagneticMap, path) -> None:
    """Occupied cells as CSV rows (cell_x, cell_y, mean, count)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell_x", "cell_y", "mean", "count"])
        nx, ny = mag_map.mean.shape
        for ix in range(nx):
            for iy in range(ny):
                if mag_map.count[ix, iy] > 0:
                    cx, cy = mag_map.cell_center(ix, iy)
                    writer.writerow([repr(float(cx)), repr(float(cy)),
                                     repr(float(mag_map.mean[ix, iy])),
                                     int(mag_map.count[ix, iy])])


def landmarks_to_csv(landmarks: list[Landmark], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "x", "y", "intensity", "polarity"])
        for lm in landmarks:
            writer.writerow([lm.id, repr(lm.pos[0]), repr(lm.pos[1]),
                             repr(lm.intensity), lm.polarity])


def load_landmarks_csv(path) -> list[Landmark]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(Landmark(
                id=int(row["id"]),
                pos=(float(row["x"]), float(row["y"])),
                intensity=float(row["intensity"]),
                polarity=row["polarity"],
            ))
    out.sort(key=lambda lm: lm.id)
    return out
