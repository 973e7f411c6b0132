"""Simulator checks: dipole field law, trajectories, footprints, scenarios."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from magloc import synth
from magloc.errors import ConfigError, DataError, SingularFieldError
from magloc.synth import (AnomalySpec, FootprintSpec, ScenarioConfig, field_at,
                          gen_trajectory, rotation_about_axis, sample_trial)

# ---------------------------------------------------------------------------
# dipole field


def ref_dipole(center, moment, height, px, py):
    rx, ry, rz = px - center[0], py - center[1], height
    r = (rx * rx + ry * ry + rz * rz) ** 0.5
    rhat = np.array([rx, ry, rz]) / r
    m = np.asarray(moment, dtype=np.float64)
    return (3.0 * rhat * float(rhat @ m) - m) / r ** 3


def test_field_matches_reference(rng):
    anomalies = [
        AnomalySpec(center=(2.0, 1.0), moment=(5.0, -3.0, 20.0), height=1.2),
        AnomalySpec(center=(-4.0, 0.5), moment=(0.0, 0.0, -15.0), height=0.8),
    ]
    bg = np.array([22.0, 5.0, -42.0])
    for _ in range(50):
        p = rng.uniform(-10, 10, 2)
        expect = bg + sum(ref_dipole(a.center, a.moment, a.height, *p)
                          for a in anomalies)
        got = field_at(anomalies, bg, p)
        np.testing.assert_allclose(got, expect, atol=1e-12)


def test_field_directly_overhead():
    # at zero horizontal offset: B = (-mx, -my, 2 mz) / h^3
    a = AnomalySpec(center=(0.0, 0.0), moment=(4.0, -6.0, 10.0), height=2.0)
    got = field_at([a], (0.0, 0.0, 0.0), (0.0, 0.0))
    np.testing.assert_allclose(got, np.array([-4.0, 6.0, 20.0]) / 8.0, atol=1e-12)


def test_field_inverse_cube_scaling():
    a1 = AnomalySpec(center=(0.0, 0.0), moment=(0.0, 0.0, 8.0), height=1.0)
    a2 = AnomalySpec(center=(0.0, 0.0), moment=(0.0, 0.0, 8.0), height=2.0)
    b1 = field_at([a1], (0, 0, 0), (0.0, 0.0))
    b2 = field_at([a2], (0, 0, 0), (0.0, 0.0))
    np.testing.assert_allclose(b2, b1 / 8.0, atol=1e-12)


def test_field_mirror_symmetry():
    # vertical moment: Bx is odd in dx, Bz even
    a = AnomalySpec(center=(0.0, 0.0), moment=(0.0, 0.0, 12.0), height=1.0)
    bg = np.zeros(3)
    left = field_at([a], bg, (-1.5, 0.0))
    right = field_at([a], bg, (1.5, 0.0))
    assert left[0] == pytest.approx(-right[0], abs=1e-12)
    assert left[2] == pytest.approx(right[2], abs=1e-12)


def test_field_broadcasts_over_grids():
    a = AnomalySpec(center=(0.0, 0.0), moment=(0.0, 0.0, 5.0))
    pts = np.stack(np.meshgrid(np.linspace(-2, 2, 5), np.linspace(-2, 2, 4)), axis=-1)
    out = field_at([a], (1.0, 2.0, 3.0), pts)
    assert out.shape == (4, 5, 3)
    np.testing.assert_allclose(out[2, 1], field_at([a], (1.0, 2.0, 3.0), pts[2, 1]))


def test_field_singularity_and_validation():
    a = AnomalySpec(center=(0.0, 0.0), moment=(0.0, 0.0, 5.0), height=1e-12)
    with pytest.raises(SingularFieldError):
        field_at([a], np.zeros(3), (0.0, 0.0))
    with pytest.raises(DataError):
        field_at([a], np.zeros(3), np.array([1.0, 2.0, 3.0]))
    with pytest.raises(DataError):
        field_at([a], np.zeros(3), np.array([np.nan, 0.0]))


def test_anomaly_spec_validation():
    with pytest.raises(ConfigError):
        AnomalySpec(center=(0, 0), moment=(0.0, 0.0, 0.0))
    with pytest.raises(ConfigError):
        AnomalySpec(center=(0, 0), moment=(0, 0, 1), height=0.0)


# ---------------------------------------------------------------------------
# trajectories and trials


def test_trajectory_sample_count_and_spacing():
    t, pos = gen_trajectory([(0.0, 0.0), (50.0, 0.0)], speed=1.0, rate=10.0)
    assert len(t) == 501
    np.testing.assert_allclose(np.diff(t), 0.1, atol=1e-12)
    np.testing.assert_allclose(pos[0], [0.0, 0.0])
    np.testing.assert_allclose(pos[-1], [50.0, 0.0])
    np.testing.assert_allclose(pos[123], [12.3, 0.0], atol=1e-9)


def test_trajectory_multi_segment_corners():
    t, pos = gen_trajectory([(0, 0), (3, 0), (3, 4)], speed=1.0, rate=2.0)
    # total length 7 m -> 15 samples; corner hit exactly at s=3
    assert len(t) == 15
    np.testing.assert_allclose(pos[6], [3.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(pos[-1], [3.0, 4.0], atol=1e-12)
    # constant speed: consecutive points 0.5 m apart throughout
    np.testing.assert_allclose(np.linalg.norm(np.diff(pos, axis=0), axis=1), 0.5,
                               atol=1e-9)


def test_trajectory_validation():
    with pytest.raises(DataError):
        gen_trajectory([(0, 0)], speed=1.0, rate=10.0)
    with pytest.raises(DataError):
        gen_trajectory([(0, 0), (0, 0), (1, 0)], speed=1.0, rate=10.0)
    with pytest.raises(DataError):
        gen_trajectory([(0, 0), (1, 0)], speed=0.0, rate=10.0)


def test_sample_trial_deterministic_and_noisy():
    a = [AnomalySpec(center=(5.0, 0.0), moment=(0, 0, 20.0))]
    path = gen_trajectory([(0, 0), (10, 0)], speed=1.0, rate=10.0)
    t1 = sample_trial("s", a, path, noise_sigma=0.3, seed=7)
    t2 = sample_trial("s", a, path, noise_sigma=0.3, seed=7)
    np.testing.assert_array_equal(t1.m, t2.m)
    t3 = sample_trial("s", a, path, noise_sigma=0.3, seed=8)
    assert not np.array_equal(t1.m, t3.m)
    clean = sample_trial("s", a, path, noise_sigma=0.0)
    resid = t1.m - clean.m
    assert 0.2 < resid.std() < 0.4
    assert clean.frame == "global" and clean.rate == pytest.approx(10.0)
    assert clean.source == "synth"
    with pytest.raises(DataError):
        sample_trial("s", a, path, noise_sigma=-1.0)


# ---------------------------------------------------------------------------
# footprints


def test_rotation_about_axis_matches_scipy(rng):
    for _ in range(25):
        axis = rng.normal(0, 1, 3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(-np.pi, np.pi)
        ref = Rotation.from_rotvec(angle * axis).as_matrix()
        np.testing.assert_allclose(rotation_about_axis(axis, angle), ref, atol=1e-12)


def test_footprint_identity_default():
    fp = FootprintSpec()
    m = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    pos = np.zeros((2, 2))
    np.testing.assert_allclose(fp.apply(m, pos), m, atol=1e-15)


def test_footprint_rotation_bias_composition(rng):
    axis = np.array([0.0, 0.0, 1.0])
    fp = FootprintSpec(axis=tuple(axis), angle=np.pi / 2, bias=(1.0, -2.0, 0.5))
    m = rng.normal(0, 10, (6, 3))
    pos = rng.uniform(-5, 5, (6, 2))
    R = fp.rotation_matrix()
    np.testing.assert_allclose(fp.apply(m, pos), m @ R.T + np.array([1.0, -2.0, 0.5]),
                               atol=1e-12)
    # z rotation by 90 degrees sends x to y
    np.testing.assert_allclose(R @ np.array([1.0, 0, 0]), [0, 1, 0], atol=1e-12)


def test_footprint_gain_is_positionwise(rng):
    fp = FootprintSpec(gain_amp=0.2, gain_wavelength=8.0, gain_dir=(1.0, 0.0),
                       gain_phase=0.0)
    # gain = 1 + amp * sin(2 pi x / wavelength): 0, quarter, three-quarter period
    pos = np.array([[0.0, 0.0], [2.0, 0.0], [6.0, 0.0]])
    g = fp.gain(pos)
    assert g.shape == (3,)
    assert np.all(g > 0)
    np.testing.assert_allclose(g, [1.0, 1.2, 0.8], atol=1e-12)
    m = np.tile(np.array([10.0, 0.0, 0.0]), (3, 1))
    np.testing.assert_allclose(fp.apply(m, pos)[:, 0], 10.0 * g, atol=1e-12)


def test_footprint_validation():
    with pytest.raises(ConfigError):
        FootprintSpec(gain_amp=1.0)
    with pytest.raises(ConfigError):
        FootprintSpec(axis=(0.0, 0.0, 0.0))


def test_default_nonlinear_footprint_is_invertible_scale():
    fp = synth.default_nonlinear_footprint()
    # gain stays strictly positive (amp < 1), so the warp never collapses
    pos = np.column_stack([np.linspace(0, 40, 200), np.zeros(200)])
    g = fp.gain(pos)
    assert np.all(g > 0)
    assert g.min() < 1.0 < g.max()
    R = fp.rotation_matrix()
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)


# ---------------------------------------------------------------------------
# scenarios


def test_scenario_registry():
    assert set(synth.SCENARIOS) == {"corridor", "ambiguity", "two_robot"}
    with pytest.raises(ConfigError):
        synth.generate_scenario("hallway", ScenarioConfig())


def _tiny_cfg(**kw):
    base = dict(seed=0, rate=10.0, speed=1.0, noise_sigma=0.1,
                n_train=2, n_val=1, n_test=1)
    base.update(kw)
    return ScenarioConfig(**base)


def test_scenario_corridor_structure():
    splits = synth.scenario_corridor(_tiny_cfg())
    assert set(splits) == {"train", "val", "test"}
    assert [len(splits[k]) for k in ("train", "val", "test")] == [2, 1, 1]
    ids = [tr.id for split in splits.values() for tr in split]
    assert len(set(ids)) == len(ids)
    for tr in splits["train"]:
        assert tr.has_positions and tr.frame == "global"
        assert tr.rate == pytest.approx(10.0)


def test_scenario_determinism():
    a = synth.scenario_corridor(_tiny_cfg())
    b = synth.scenario_corridor(_tiny_cfg())
    for k in a:
        for ta, tb in zip(a[k], b[k]):
            np.testing.assert_array_equal(ta.m, tb.m)
            np.testing.assert_array_equal(ta.pos, tb.pos)
    c = synth.scenario_corridor(_tiny_cfg(seed=99))
    assert not np.array_equal(a["train"][0].m, c["train"][0].m)


def test_scenario_corridor_reverse_augment():
    plain = synth.scenario_corridor(_tiny_cfg())
    aug = synth.scenario_corridor(_tiny_cfg(reverse_augment=True))
    assert len(aug["train"]) == 2 * len(plain["train"])
    # reversed twins only in train; evaluation splits stay untouched
    assert len(aug["test"]) == len(plain["test"])
    rev_ids = [tr.id for tr in aug["train"] if tr.id.endswith("-rev")]
    assert len(rev_ids) == len(plain["train"])


def test_scenario_ambiguity_has_identical_end_clusters():
    anomalies = synth.ambiguity_anomalies()
    xs = sorted(a.center[0] for a in anomalies)
    left = [a for a in anomalies if a.center[0] < 12.0]
    right = [a for a in anomalies if a.center[0] > 28.0]
    assert len(left) == len(right) >= 2
    shift = min(a.center[0] for a in right) - min(a.center[0] for a in left)
    # the right cluster is an exact translate of the left one
    for a in sorted(left, key=lambda a: a.center[0]):
        twin = [b for b in right
                if b.center[0] == pytest.approx(a.center[0] + shift)]
        assert len(twin) == 1
        assert twin[0].center[1] == a.center[1]
        assert twin[0].moment == a.moment and twin[0].height == a.height
    # in isolation the clusters generate identical field tracks, and the
    # middle anomalies perturb the ends by less than the scenario noise, so
    # single windows genuinely cannot tell the two passes apart
    bg = synth.DEFAULT_BACKGROUND_UT
    s = np.linspace(0.0, 8.0, 60)
    track = np.column_stack([s, np.zeros_like(s)])
    first = field_at(left, bg, track + [2.0, 0.0])
    second = field_at(right, bg, track + [2.0 + shift, 0.0])
    np.testing.assert_allclose(first, second, atol=1e-12)
    full_first = field_at(anomalies, bg, track + [2.0, 0.0])
    full_second = field_at(anomalies, bg, track + [2.0 + shift, 0.0])
    assert np.abs(full_first - full_second).max() < 0.2
    assert xs[0] > 0.0  # all sources inside the corridor span


def test_scenario_two_robot_structure():
    splits = synth.scenario_two_robot(_tiny_cfg())
    assert set(splits) == {"robot1/train", "robot1/test", "robot2/test"}
    r1 = splits["robot1/train"][0]
    r2 = splits["robot2/test"][0]
    assert r1.has_positions and r2.has_positions
    # the footprint visibly distorts robot2's measurements
    fp = synth.default_nonlinear_footprint()
    assert fp.angle != 0.0
    assert np.linalg.norm(fp.bias) > 1.0
