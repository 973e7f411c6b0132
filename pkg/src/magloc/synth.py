"""Synthetic ground truth: dipole anomaly fields, trajectories, footprints.

Anomalies are point dipoles below the sensor plane; the field at a 2-D
position is the fixed background vector plus each dipole's contribution
at the sensor height. Trajectories are constant-speed piecewise-linear
paths. A robot footprint distorts the true field by a rigid rotation, a
constant bias, and an optional position-dependent sinusoidal gain.

Scenario generators build the corridor / ambiguity / two-robot datasets
used by the CLI and the acceptance suite. All randomness is seeded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, SingularFieldError
from .ingest import Trial

DEFAULT_BACKGROUND_UT = (22.0, 5.0, -42.0)  # arbitrary mid-latitude-like vector


@dataclass(frozen=True)
class AnomalySpec:
    """Point dipole at ``center`` on the floor, ``height`` meters below
    the sensor plane. ``moment`` carries the field scale (microtesla at
    1 m, up to geometry factors)."""

    center: tuple[float, float]
    moment: tuple[float, float, float]
    height: float = 1.0

    def __post_init__(self):
        if not np.linalg.norm(self.moment) > 0:
            raise ConfigError("anomaly moment must be non-zero")
        if not self.height > 0:
            raise ConfigError(f"anomaly height must be positive, got {self.height}")


@dataclass(frozen=True)
class FootprintSpec:
    """Per-robot sensor distortion: m -> gain(pos) * sat(R m) + bias.

    ``sat`` is a per-axis cubic soft compression,
    v * (1 - sat_strength * (v / sat_scale)^2), the kind of range
    nonlinearity a magnetometer develops near full scale. It acts in
    field space, so it is the same everywhere on the map; it stays
    monotonic for |v| < sat_scale / sqrt(3 * sat_strength).
    ``sat_strength = 0`` disables it, ``gain_amp = 0`` disables the
    position-dependent gain. The gain varies sinusoidally along
    ``gain_dir`` with spatial period ``gain_wavelength``.
    """

    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    angle: float = 0.0
    bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    sat_strength: float = 0.0
    sat_scale: float = 60.0
    gain_amp: float = 0.0
    gain_wavelength: float = 10.0
    gain_dir: tuple[float, float] = (1.0, 0.0)
    gain_phase: float = 0.0

    def __post_init__(self):
        n = np.linalg.norm(self.axis)
        if not math.isclose(n, 1.0, rel_tol=1e-9, abs_tol=1e-9):
            raise ConfigError(f"rotation axis must be unit-norm, got |axis| = {n}")
        if self.sat_strength < 0:
            raise ConfigError(f"saturation strength must be >= 0, got {self.sat_strength}")
        if self.sat_strength > 0 and self.sat_scale <= 0:
            raise ConfigError("saturation scale must be positive")
        if not 0.0 <= self.gain_amp < 1.0:
            raise ConfigError(f"gain amplitude must be in [0, 1), got {self.gain_amp}")
        if self.gain_amp > 0 and self.gain_wavelength <= 0:
            raise ConfigError("gain wavelength must be positive")

    def rotation_matrix(self) -> np.ndarray:
        return rotation_about_axis(np.asarray(self.axis), self.angle)

    def saturate(self, v: np.ndarray) -> np.ndarray:
        if self.sat_strength == 0.0:
            return v
        return v * (1.0 - self.sat_strength * (v / self.sat_scale) ** 2)

    def gain(self, pos: np.ndarray) -> np.ndarray:
        if self.gain_amp == 0.0:
            return np.ones(pos.shape[:-1])
        d = np.asarray(self.gain_dir, dtype=np.float64)
        s = pos @ d
        return 1.0 + self.gain_amp * np.sin(
            2.0 * np.pi * s / self.gain_wavelength + self.gain_phase)

    def apply(self, m: np.ndarray, pos: np.ndarray) -> np.ndarray:
        out = self.saturate(m @ self.rotation_matrix().T)
        out = out * self.gain(pos)[..., None]
        return out + np.asarray(self.bias, dtype=np.float64)


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for a unit axis."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    kx = np.array([[0.0, -k[2], k[1]],
                   [k[2], 0.0, -k[0]],
                   [-k[1], k[0], 0.0]])
    c, s = np.cos(angle), np.sin(angle)
    return c * np.eye(3) + s * kx + (1.0 - c) * np.outer(k, k)


def field_at(anomalies, background, pos) -> np.ndarray:
    """Background plus dipole terms at 2-D position(s) on the sensor plane.

    ``pos`` is (..., 2); the result is (..., 3). Raises
    :class:`SingularFieldError` within 1e-9 m of a dipole source.
    """
    pos = np.asarray(pos, dtype=np.float64)
    if pos.shape[-1] != 2:
        raise DataError(f"positions must have a trailing dimension of 2, got {pos.shape}")
    if not np.all(np.isfinite(pos)):
        raise DataError("non-finite position passed to field evaluation")
    out = np.broadcast_to(np.asarray(background, dtype=np.float64),
                          pos.shape[:-1] + (3,)).copy()
    for an in anomalies:
        rvec = np.empty(pos.shape[:-1] + (3,))
        rvec[..., 0] = pos[..., 0] - an.center[0]
        rvec[..., 1] = pos[..., 1] - an.center[1]
        rvec[..., 2] = an.height
        r = np.sqrt((rvec * rvec).sum(axis=-1))
        if np.any(r < 1e-9):
            raise SingularFieldError(
                f"field evaluated within 1e-9 m of dipole at {an.center}")
        rhat = rvec / r[..., None]
        m = np.asarray(an.moment, dtype=np.float64)
        mdotr = rhat @ m
        out += (3.0 * rhat * mdotr[..., None] - m) / (r ** 3)[..., None]
    return out


def gen_trajectory(waypoints, speed: float, rate: float):
    """Constant-speed piecewise-linear path sampled at ``rate``.

    Returns (t, pos) with t[0] = 0. Duplicate consecutive waypoints are a
    degenerate segment and rejected.
    """
    wp = np.asarray(waypoints, dtype=np.float64)
    if wp.ndim != 2 or wp.shape[1] != 2 or wp.shape[0] < 2:
        raise DataError(f"need >= 2 waypoints of shape (k, 2), got {wp.shape}")
    if speed <= 0 or rate <= 0:
        raise DataError(f"speed and rate must be positive, got {speed}, {rate}")
    seg = np.linalg.norm(np.diff(wp, axis=0), axis=1)
    if np.any(seg == 0):
        raise DataError("duplicate consecutive waypoints make a degenerate segment")
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = float(cum[-1])
    n = int(np.floor(total / speed * rate + 1e-9)) + 1
    t = np.arange(n) / rate
    s = np.minimum(t * speed, total)
    pos = np.column_stack([np.interp(s, cum, wp[:, 0]), np.interp(s, cum, wp[:, 1])])
    return t, pos


def sample_trial(trial_id: str, anomalies, path, background=DEFAULT_BACKGROUND_UT,
                 footprint: FootprintSpec | None = None, noise_sigma: float = 0.0,
                 seed: int = 0, source: str = "synth") -> Trial:
    """Measured trial along a positioned path, deterministic per seed.

    ``path`` is the (t, pos) pair from :func:`gen_trajectory`. The
    measured field is footprint(true field) plus iid gaussian noise; the
    trial carries ground truth and is already in the global frame.
    """
    t, pos = path
    t = np.asarray(t, dtype=np.float64)
    pos = np.asarray(pos, dtype=np.float64)
    if len(t) != len(pos):
        raise DataError("path times and positions differ in length")
    if len(t) < 2:
        raise DataError("path must have at least two samples")
    m = field_at(anomalies, background, pos)
    if footprint is not None:
        m = footprint.apply(m, pos)
    if noise_sigma < 0:
        raise DataError(f"noise sigma must be >= 0, got {noise_sigma}")
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        m = m + rng.normal(0.0, noise_sigma, size=m.shape)
    rate = 1.0 / float(t[1] - t[0])
    return Trial(id=trial_id, t=t, m=m, angles=None, pos=pos,
                 source=source, rate=rate, frame="global")


# ---------------------------------------------------------------------------
# scenario generators


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    rate: float = 10.0
    speed: float = 1.0
    noise_sigma: float = 0.2
    n_train: int = 6
    n_val: int = 1
    n_test: int = 3
    reverse_augment: bool = False
    background: tuple[float, float, float] = DEFAULT_BACKGROUND_UT


def _corridor_anomalies() -> list[AnomalySpec]:
    # four well-separated aligned dipoles: clean magnitude bumps
    return [
        AnomalySpec(center=(6.0, 0.5), moment=(0.0, 0.0, -28.0), height=1.0),
        AnomalySpec(center=(15.0, -0.5), moment=(0.0, 0.0, -24.0), height=1.0),
        AnomalySpec(center=(24.0, 0.5), moment=(0.0, 0.0, -30.0), height=1.0),
        AnomalySpec(center=(33.0, -0.5), moment=(0.0, 0.0, -26.0), height=1.0),
    ]


def _passes(prefix: str, count: int, anomalies, cfg: ScenarioConfig, seed0: int,
            length: float = 40.0, offsets=(-1.0, 0.0, 1.0),
            footprint: FootprintSpec | None = None) -> list[Trial]:
    out = []
    for i in range(count):
        y = offsets[i % len(offsets)]
        path = gen_trajectory([(0.0, y), (length, y)], cfg.speed, cfg.rate)
        trial = sample_trial(f"{prefix}{i:02d}", anomalies, path,
                            background=cfg.background, footprint=footprint,
                            noise_sigma=cfg.noise_sigma, seed=seed0 + i)
        out.append(trial)
    return out


def scenario_corridor(cfg: ScenarioConfig = ScenarioConfig()) -> dict[str, list[Trial]]:
    """Straight 40 m corridor with four distinct anomalies; passes at three
    lateral offsets so the gridded map is two-dimensional."""
    from .ingest import reverse_augment
    anomalies = _corridor_anomalies()
    base = cfg.seed * 100000
    splits = {
        "train": _passes("corridor-train-", cfg.n_train, anomalies, cfg, base),
        "val": _passes("corridor-val-", cfg.n_val, anomalies, cfg, base + 1000),
        "test": _passes("corridor-test-", cfg.n_test, anomalies, cfg, base + 2000),
    }
    if cfg.reverse_augment:
        splits["train"] = splits["train"] + [reverse_augment(tr) for tr in splits["train"]]
    return splits


def corridor_anomalies() -> list[AnomalySpec]:
    """The corridor scenario's planted anomalies, for oracle checks."""
    return _corridor_anomalies()


def _ambiguity_anomalies() -> list[AnomalySpec]:
    # Two identical clusters far apart (s = 6 and s = 34): indistinguishable
    # from any single window. A second pair (s = 16 and s = 24) shares its
    # x-axis field profile exactly (moments chosen so m_y*dy + m_z*h match)
    # but differs on y and z, so single-axis layouts cannot separate it.
    ident = [(0.0, 0.0, -25.0), (0.0, 0.0, 15.0)]
    return [
        AnomalySpec(center=(6.0, 1.0), moment=ident[0], height=1.0),
        AnomalySpec(center=(7.5, 1.0), moment=ident[1], height=1.0),
        AnomalySpec(center=(34.0, 1.0), moment=ident[0], height=1.0),
        AnomalySpec(center=(35.5, 1.0), moment=ident[1], height=1.0),
        # Bx depends on the moment only through m_y*dy + m_z*h (m_x = 0 for
        # both). The path runs at y = 0 so dy = -1, h = 1: both moments give
        # 20, hence identical Bx profiles, while By picks up an extra
        # m_y/r^3 from the second.
        AnomalySpec(center=(16.0, 1.0), moment=(0.0, 0.0, 20.0), height=1.0),
        AnomalySpec(center=(24.0, 1.0), moment=(0.0, -10.0, 10.0), height=1.0),
    ]


def scenario_ambiguity(cfg: ScenarioConfig = ScenarioConfig()) -> dict[str, list[Trial]]:
    """Corridor whose ends carry identical anomaly clusters plus a middle
    pair distinguishable only on the y/z axes. All passes run forward at
    y = 0 so the x-profile degeneracy of the middle pair is exact."""
    from .ingest import reverse_augment
    anomalies = _ambiguity_anomalies()
    base = cfg.seed * 100000
    splits = {
        "train": _passes("ambig-train-", cfg.n_train, anomalies, cfg, base,
                         offsets=(0.0,)),
        "val": _passes("ambig-val-", cfg.n_val, anomalies, cfg, base + 1000,
                       offsets=(0.0,)),
        "test": _passes("ambig-test-", cfg.n_test, anomalies, cfg, base + 2000,
                        offsets=(0.0,)),
    }
    if cfg.reverse_augment:
        splits["train"] = splits["train"] + [reverse_augment(tr) for tr in splits["train"]]
    return splits


def ambiguity_anomalies() -> list[AnomalySpec]:
    return _ambiguity_anomalies()


def default_nonlinear_footprint() -> FootprintSpec:
    """Second robot's distortion in the two-robot scenario: a large
    rotation, a bias the rotation cannot absorb, and a slow
    position-dependent gain that keeps the warp nonlinear.

    The bias equals the rotated image of 0.15x the ambient field, i.e.
    in the robot's own frame it runs along the field it measures, so a
    rotation fitted on raw (uncentered) pairs stays unbiased; the gain
    wavelength is long against the window span, so each window sees a
    near-constant gain.
    """
    axis = (1.0 / math.sqrt(3.0),) * 3
    # bias = R @ (0.15 * background), R = 75 deg about (1,1,1)/sqrt(3)
    return FootprintSpec(axis=axis, angle=math.radians(75.0),
                         bias=(-3.6334, 4.9919, -3.6085),
                         gain_amp=0.02, gain_wavelength=40.0, gain_dir=(1.0, 0.0),
                         gain_phase=0.7)


def scenario_two_robot(cfg: ScenarioConfig = ScenarioConfig(),
                       footprint: FootprintSpec | None = None) -> dict[str, list[Trial]]:
    """Robot 1 maps the corridor cleanly; robot 2 drives the same corridor
    with a distorted sensor. Robot 2's trials are the alignment targets."""
    if footprint is None:
        footprint = default_nonlinear_footprint()
    # The first anomaly sits inside the leading common segment and is the
    # strongest, so the alignment pairs bracket the field range the rest
    # of the corridor produces; the others keep diverse moment directions
    # (distinguishable window shapes survive the per-window image
    # normalization, amplitude largely does not) at amplitudes within the
    # range the leading one covers.
    anomalies = [
        AnomalySpec(center=(1.0, 0.8), moment=(0.0, 0.0, -26.0), height=1.0),
        AnomalySpec(center=(10.0, -0.6), moment=(4.0, 0.0, -10.0), height=0.9),
        AnomalySpec(center=(17.0, 0.5), moment=(0.0, -3.0, 12.0), height=1.1),
        AnomalySpec(center=(23.0, -0.8), moment=(0.0, 0.0, -14.0), height=1.0),
        AnomalySpec(center=(30.0, 0.7), moment=(-3.5, 2.5, -11.0), height=0.9),
        AnomalySpec(center=(36.0, -0.5), moment=(0.0, 0.0, 12.0), height=1.2),
    ]
    from .ingest import reverse_augment
    base = cfg.seed * 100000
    splits = {
        "robot1/train": _passes("r1-train-", cfg.n_train, anomalies, cfg, base),
        "robot1/test": _passes("r1-test-", max(cfg.n_test - 1, 1), anomalies, cfg,
                               base + 1000),
        "robot2/test": _passes("r2-test-", cfg.n_test + 1, anomalies, cfg,
                               base + 2000, footprint=footprint),
    }
    if cfg.reverse_augment:
        splits["robot1/train"] = splits["robot1/train"] + [
            reverse_augment(tr) for tr in splits["robot1/train"]]
    return splits


SCENARIOS = {
    "corridor": scenario_corridor,
    "ambiguity": scenario_ambiguity,
    "two_robot": scenario_two_robot,
}


def generate_scenario(name: str, cfg: ScenarioConfig) -> dict[str, list[Trial]]:
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}, expected one of {sorted(SCENARIOS)}")
    return SCENARIOS[name](cfg)
