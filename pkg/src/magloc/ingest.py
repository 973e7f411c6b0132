"""Sensor log ingestion, synchronization, and frame conversion.

Canonical trial file format (UTF-8 CSV, '.' decimal separator, header row):

    t,mx,my,mz,yaw,pitch,roll[,px,py]

with ``t`` in seconds, magnetic components in microtesla, angles in radians
and optional ground-truth positions in meters. Two dataset adapters convert
foreign formats into the same raw streams; their column mappings are
documented in the README and in :func:`load_trial`.

All angles follow the phone convention: yaw about +z, pitch about +x, roll
about +y, applied intrinsically in that order (see :func:`rotate_to_global`).
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, EmptyTrialError, ParseError, SyncError

DEFAULT_RATE_HZ = 50.0

FORMATS = ("csv-canonical", "magpie", "ipin-getsensordata")


@dataclass(frozen=True)
class MagSample:
    """One magnetometer reading: timestamp plus 3-vector in microtesla."""

    t: float
    m: tuple[float, float, float]
    frame: str = "local"


@dataclass(frozen=True)
class OrientationSample:
    """One orientation reading: (yaw, pitch, roll) in radians."""

    t: float
    angles: tuple[float, float, float]


@dataclass(frozen=True)
class RawStreams:
    """Unsynchronized per-sensor streams as read from a file."""

    mag_t: np.ndarray
    mag: np.ndarray  # (n, 3)
    ori_t: np.ndarray | None = None
    ori: np.ndarray | None = None  # (n, 3) yaw, pitch, roll
    pos_t: np.ndarray | None = None
    pos: np.ndarray | None = None  # (n, 2)
    orientation_source: str = "columns"


@dataclass
class Trial:
    """One synchronized trial on a uniform clock.

    Arrays are row-aligned: ``m[i]`` (and ``pos[i]``, ``angles[i]`` when
    present) belong to timestamp ``t[i]``. Instances are treated as
    immutable once built; all pipeline operations return new Trials.
    """

    id: str
    t: np.ndarray
    m: np.ndarray
    angles: np.ndarray | None = None
    pos: np.ndarray | None = None
    source: str = "human"
    rate: float = DEFAULT_RATE_HZ
    frame: str = "local"
    orientation_source: str = "columns"

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.m = np.asarray(self.m, dtype=np.float64)
        if self.m.shape != (len(self.t), 3):
            raise DataError(f"trial {self.id}: m shape {self.m.shape} != ({len(self.t)}, 3)")
        if not np.all(np.isfinite(self.t)) or not np.all(np.isfinite(self.m)):
            raise DataError(f"trial {self.id}: non-finite samples")
        if self.angles is not None:
            self.angles = np.asarray(self.angles, dtype=np.float64)
            if self.angles.shape != (len(self.t), 3):
                raise DataError(f"trial {self.id}: angles shape mismatch")
        if self.pos is not None:
            self.pos = np.asarray(self.pos, dtype=np.float64)
            if self.pos.shape != (len(self.t), 2):
                raise DataError(f"trial {self.id}: positions length != samples length")
        if len(self.t) >= 2:
            dt = np.diff(self.t)
            if dt.min() <= 0:
                raise DataError(f"trial {self.id}: timestamps not strictly increasing")
            if np.max(np.abs(dt - 1.0 / self.rate)) > 1e-9:
                raise DataError(f"trial {self.id}: non-uniform sample spacing")

    def __len__(self):
        return len(self.t)

    @property
    def has_positions(self) -> bool:
        return self.pos is not None

    def sample(self, i: int) -> MagSample:
        return MagSample(float(self.t[i]), tuple(self.m[i]), self.frame)


@dataclass
class Dataset:
    trials: list[Trial]
    split: str = "train"

    def __post_init__(self):
        ids = [tr.id for tr in self.trials]
        if len(set(ids)) != len(ids):
            raise DataError(f"duplicate trial ids in {self.split} dataset")

    def __len__(self):
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)


def _parse_float(token, path, line_no, col_name):
    try:
        return float(token)
    except (TypeError, ValueError):
        raise ParseError(path, line_no, f"non-numeric value {token!r} for field {col_name}") from None


def _read_canonical(path) -> RawStreams:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyTrialError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        base = ["t", "mx", "my", "mz", "yaw", "pitch", "roll"]
        if header[: len(base)] != base:
            raise ParseError(path, 1, f"unexpected header {header!r}")
        has_pos = header[len(base):] == ["px", "py"]
        if not has_pos and len(header) != len(base):
            raise ParseError(path, 1, f"unexpected trailing columns {header[len(base):]!r}")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise ParseError(path, line_no, f"expected {len(header)} fields, got {len(row)}")
            rows.append([_parse_float(tok, path, line_no, name) for tok, name in zip(row, header)])
    if not rows:
        raise EmptyTrialError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=np.float64)
    pos_t = pos = None
    if has_pos:
        pos_t, pos = arr[:, 0], arr[:, 7:9]
    return RawStreams(
        mag_t=arr[:, 0], mag=arr[:, 1:4],
        ori_t=arr[:, 0], ori=arr[:, 4:7],
        pos_t=pos_t, pos=pos,
    )


# MagPIE-style trial files: one whitespace- or comma-separated row per sample.
# Column layouts are distinguished by count:
#   10: t  ax ay az  gx gy gz  mx my mz
#   12: 10 + px py
#   13: 10 + yaw pitch roll
#   15: 10 + yaw pitch roll + px py
# The IMU columns are accepted but unused (orientation reconstruction from raw
# IMU is out of scope); when the angle columns are absent the trial is flagged
# orientation_source="absent" and treated as already global-frame.
_MAGPIE_LAYOUTS = {10: (False, False), 12: (False, True), 13: (True, False), 15: (True, True)}


def _read_magpie(path) -> RawStreams:
    rows = []
    ncols = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            toks = line.replace(",", " ").split()
            if ncols is None:
                ncols = len(toks)
                if ncols not in _MAGPIE_LAYOUTS:
                    raise ParseError(path, line_no, f"unsupported magpie column count {ncols}")
            elif len(toks) != ncols:
                raise ParseError(path, line_no, f"expected {ncols} fields, got {len(toks)}")
            rows.append([_parse_float(t, path, line_no, f"col{i}") for i, t in enumerate(toks)])
    if not rows:
        raise EmptyTrialError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=np.float64)
    has_ori, has_pos = _MAGPIE_LAYOUTS[ncols]
    t = arr[:, 0]
    mag = arr[:, 7:10]
    col = 10
    ori_t = ori = None
    if has_ori:
        ori_t, ori = t, arr[:, col:col + 3]
        col += 3
    pos_t = pos = None
    if has_pos:
        pos_t, pos = t, arr[:, col:col + 2]
    return RawStreams(
        mag_t=t, mag=mag, ori_t=ori_t, ori=ori, pos_t=pos_t, pos=pos,
        orientation_source="columns" if has_ori else "absent",
    )


# GetSensorData-style logs: ';'-separated records tagged by sensor, '%' comments.
#   MAGN;t;mx;my;mz[;...]          magnetometer, microtesla
#   AHRS;t;pitch;roll;yaw[;...]    orientation, degrees
#   POSI;t;x;y[;...]               ground truth, meters
def _read_ipin(path) -> RawStreams:
    mag_rows, ori_rows, pos_rows = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("%"):
                continue
            toks = line.split(";")
            tag = toks[0].strip().upper()
            if tag == "MAGN":
                if len(toks) < 5:
                    raise ParseError(path, line_no, "MAGN record needs t;mx;my;mz")
                mag_rows.append([_parse_float(toks[i], path, line_no, n)
                                 for i, n in ((1, "t"), (2, "mx"), (3, "my"), (4, "mz"))])
            elif tag == "AHRS":
                if len(toks) < 5:
                    raise ParseError(path, line_no, "AHRS record needs t;pitch;roll;yaw")
                t, pitch, roll, yaw = (_parse_float(toks[i], path, line_no, n)
                                       for i, n in ((1, "t"), (2, "pitch"), (3, "roll"), (4, "yaw")))
                ori_rows.append([t, math.radians(yaw), math.radians(pitch), math.radians(roll)])
            elif tag == "POSI":
                if len(toks) < 4:
                    raise ParseError(path, line_no, "POSI record needs t;x;y")
                pos_rows.append([_parse_float(toks[i], path, line_no, n)
                                 for i, n in ((1, "t"), (2, "x"), (3, "y"))])
            # unknown tags (ACCE, GYRO, WIFI, ...) are skipped
    if not mag_rows:
        raise EmptyTrialError(f"{path}: no MAGN records")
    mag = np.asarray(mag_rows, dtype=np.float64)
    ori = np.asarray(ori_rows, dtype=np.float64) if ori_rows else None
    pos = np.asarray(pos_rows, dtype=np.float64) if pos_rows else None
    return RawStreams(
        mag_t=mag[:, 0], mag=mag[:, 1:4],
        ori_t=ori[:, 0] if ori is not None else None,
        ori=ori[:, 1:4] if ori is not None else None,
        pos_t=pos[:, 0] if pos is not None else None,
        pos=pos[:, 1:3] if pos is not None else None,
        orientation_source="columns" if ori_rows else "absent",
    )


_READERS = {
    "csv-canonical": _read_canonical,
    "magpie": _read_magpie,
    "ipin-getsensordata": _read_ipin,
}


def load_trial(path, format: str = "csv-canonical") -> RawStreams:
    """Read one trial file into unsynchronized raw streams.

    ``format`` is one of ``csv-canonical``, ``magpie``,
    ``ipin-getsensordata``; see the module docstring and README for the
    column mappings. Raises :class:`ParseError` (with line number) on
    malformed rows and :class:`EmptyTrialError` on files without samples.
    """
    if format not in _READERS:
        raise DataError(f"unknown trial format {format!r}")
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    return _READERS[format](path)


def _check_stream(t, what):
    t = np.asarray(t, dtype=np.float64)
    if len(t) < 2:
        raise SyncError(f"{what} stream has fewer than 2 samples")
    if np.any(np.diff(t) < 0):
        raise SyncError(f"{what} stream timestamps are not non-decreasing")
    return t


def _wrap_pi(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def synchronize(streams: RawStreams, rate: float = DEFAULT_RATE_HZ,
                trial_id: str = "trial", source: str = "human") -> Trial:
    """Resample all streams onto one uniform clock by linear interpolation.

    The output clock spans the intersection of the stream time ranges at
    ``rate`` Hz. Orientation angles are unwrapped before interpolation so
    tracks crossing the +-pi boundary stay continuous; ground truth is
    interpolated identically to the sensor channels.
    """
    if rate <= 0:
        raise SyncError(f"rate must be positive, got {rate}")
    mag_t = _check_stream(streams.mag_t, "magnetometer")
    t0, t1 = mag_t[0], mag_t[-1]
    pieces = [("orientation", streams.ori_t), ("position", streams.pos_t)]
    for what, st in pieces:
        if st is not None:
            st = _check_stream(st, what)
            t0, t1 = max(t0, st[0]), min(t1, st[-1])
    if t1 < t0:
        raise SyncError(f"stream time ranges do not overlap ({t0} > {t1})")
    n = int(np.floor((t1 - t0) * rate + 1e-9)) + 1
    t = t0 + np.arange(n) / rate

    m = np.column_stack([np.interp(t, mag_t, streams.mag[:, j]) for j in range(3)])
    angles = None
    if streams.ori is not None:
        unwrapped = np.unwrap(streams.ori, axis=0)
        angles = np.column_stack([np.interp(t, streams.ori_t, unwrapped[:, j]) for j in range(3)])
        angles[:, 0] = _wrap_pi(angles[:, 0])  # yaw
        angles[:, 2] = _wrap_pi(angles[:, 2])  # roll
    pos = None
    if streams.pos is not None:
        pos = np.column_stack([np.interp(t, streams.pos_t, streams.pos[:, j]) for j in range(2)])

    frame = "local"
    if streams.orientation_source == "absent":
        frame = "global"  # no angles to apply; readings taken as given
    return Trial(id=trial_id, t=t, m=m, angles=angles, pos=pos, source=source,
                 rate=rate, frame=frame, orientation_source=streams.orientation_source)


def rotation_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Local-to-global rotation R = Rz(yaw) @ Rx(pitch) @ Ry(roll).

    Axis conventions (right-handed, angles in radians):

        Rz(a) = [[cos a, -sin a, 0], [sin a, cos a, 0], [0, 0, 1]]
        Rx(a) = [[1, 0, 0], [0, cos a, -sin a], [0, sin a, cos a]]
        Ry(a) = [[cos a, 0, sin a], [0, 1, 0], [-sin a, 0, cos a]]

    so yaw=pi/2 maps the local +x axis onto global +y.
    """
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    ry = np.array([[cr, 0.0, sr], [0.0, 1.0, 0.0], [-sr, 0.0, cr]])
    return rz @ rx @ ry


def rotate_to_global(m, angles):
    """Rotate local-frame magnetic vector(s) into the global frame.

    ``m`` may be a single 3-vector or an (n, 3) array; ``angles`` the
    matching (yaw, pitch, roll) triple(s). Pure rotation: the 2-norm of
    every sample is preserved.
    """
    m = np.asarray(m, dtype=np.float64)
    angles = np.asarray(angles, dtype=np.float64)
    if m.ndim == 1:
        return rotation_matrix(*angles) @ m
    yaw, pitch, roll = angles[:, 0], angles[:, 1], angles[:, 2]
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    # rows of R = Rz @ Rx @ Ry, expanded
    r00 = cy * cr - sy * sp * sr
    r01 = -sy * cp
    r02 = cy * sr + sy * sp * cr
    r10 = sy * cr + cy * sp * sr
    r11 = cy * cp
    r12 = sy * sr - cy * sp * cr
    r20 = -cp * sr
    r21 = sp
    r22 = cp * cr
    x, y, z = m[:, 0], m[:, 1], m[:, 2]
    return np.column_stack([
        r00 * x + r01 * y + r02 * z,
        r10 * x + r11 * y + r12 * z,
        r20 * x + r21 * y + r22 * z,
    ])


def trial_to_global(trial: Trial) -> Trial:
    """Return the trial with all magnetic samples rotated into the global frame."""
    if trial.frame == "global":
        return trial
    if trial.angles is None:
        raise DataError(f"trial {trial.id}: local frame but no orientation angles")
    return replace(trial, m=rotate_to_global(trial.m, trial.angles), frame="global")


_PROJECTIONS = ("x", "y", "z", "xy", "xyz")


def project(m, mode: str = "xyz"):
    """Project 3-vector(s) onto a named component or root-sum-square magnitude."""
    m = np.asarray(m, dtype=np.float64)
    if mode == "x":
        return m[..., 0]
    if mode == "y":
        return m[..., 1]
    if mode == "z":
        return m[..., 2]
    if mode == "xy":
        return np.sqrt(m[..., 0] ** 2 + m[..., 1] ** 2)
    if mode == "xyz":
        return np.sqrt(m[..., 0] ** 2 + m[..., 1] ** 2 + m[..., 2] ** 2)
    raise DataError(f"unknown projection mode {mode!r}; expected one of {_PROJECTIONS}")


def reverse_augment(trial: Trial) -> Trial:
    """Time-reverse a trial, keeping the same uniform clock.

    Samples, angles, and positions are reversed; timestamps are re-emitted
    unchanged (t[k] stays t[0] + k/rate). The id gets a ``-rev`` suffix,
    applied as a toggle so reversing twice restores the original id.
    """
    new_id = trial.id[:-4] if trial.id.endswith("-rev") else trial.id + "-rev"
    return replace(
        trial,
        id=new_id,
        m=trial.m[::-1].copy(),
        angles=None if trial.angles is None else trial.angles[::-1].copy(),
        pos=None if trial.pos is None else trial.pos[::-1].copy(),
    )


def write_canonical_csv(trial: Trial, path) -> None:
    """Write a trial in the canonical CSV format (angles default to zero)."""
    angles = trial.angles if trial.angles is not None else np.zeros((len(trial), 3))
    header = ["t", "mx", "my", "mz", "yaw", "pitch", "roll"]
    if trial.pos is not None:
        header += ["px", "py"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(trial)):
            row = [repr(float(v)) for v in (trial.t[i], *trial.m[i], *angles[i])]
            if trial.pos is not None:
                row += [repr(float(v)) for v in trial.pos[i]]
            writer.writerow(row)


def load_dataset(directory, split: str = "train", format: str = "csv-canonical",
                 rate: float = DEFAULT_RATE_HZ, source: str = "human") -> Dataset:
    """Load every trial file under ``directory`` (sorted by name) as one Dataset."""
    if not os.path.isdir(directory):
        raise DataError(f"no such trial directory: {directory}")
    names = sorted(fn for fn in os.listdir(directory) if not fn.startswith("."))
    trials = []
    for fn in names:
        p = os.path.join(directory, fn)
        if not os.path.isfile(p):
            continue
        streams = load_trial(p, format=format)
        trial_id = os.path.splitext(fn)[0]
        trials.append(synchronize(streams, rate=rate, trial_id=trial_id, source=source))
    if not trials:
        raise EmptyTrialError(f"no trial files under {directory}")
    return Dataset(trials=trials, split=split)
