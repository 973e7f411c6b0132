"""Pairing, rotation fitting, and field-map alignment checks.

The rotation fit gets two independent oracles: exact recovery of a known
rotation, and a dense axis-angle grid search over SO(3) that the SVD
solution must dominate in the least-squares objective.
"""

import numpy as np
import pytest

from conftest import make_trial
from magloc import alignment as al
from magloc.alignment import (AlignmentPair, AlignmentTransform, DeepFitConfig,
                              alignment_report, apply_alignment,
                              build_alignment_set, common_segment, fit_deep,
                              fit_linear, identity_transform, load_transform,
                              rms_residual, save_transform)
from magloc.errors import (AlignmentError, AlignmentSetError, ConfigError,
                           RankError)
from magloc.synth import rotation_about_axis


def random_rotation(rng):
    axis = rng.normal(0, 1, 3)
    axis /= np.linalg.norm(axis)
    return rotation_about_axis(axis, rng.uniform(-np.pi, np.pi))


def pairs_from(src, dst):
    zero = (0.0, 0.0)
    return [AlignmentPair(tuple(s), tuple(d), zero, zero) for s, d in zip(src, dst)]


# ---------------------------------------------------------------------------
# pairing vs exhaustive oracle


def ref_knn_unique(d1_pos, d2_pos, k, eps):
    """Brute-force restatement of the pairing rule: for every test point,
    its k nearest train points within eps are candidates; candidates are
    consumed greedily by ascending distance, each side used at most once."""
    cand = []
    for j, p2 in enumerate(d2_pos):
        d = np.linalg.norm(d1_pos - p2, axis=1)
        order = np.argsort(d, kind="stable")[: min(k, len(d1_pos))]
        for i in order:
            if d[i] < eps:
                cand.append((float(d[i]), j, int(i)))
    cand.sort()
    used1, used2, out = set(), set(), []
    for dist, j, i in cand:
        if i in used1 or j in used2:
            continue
        used1.add(i)
        used2.add(j)
        out.append((j, i))
    return out


def test_build_alignment_set_matches_oracle(rng):
    for trial in range(30):
        n1 = int(rng.integers(3, 50))
        n2 = int(rng.integers(3, 50))
        d1_pos = rng.uniform(0, 10, (n1, 2))
        d2_pos = rng.uniform(0, 10, (n2, 2))
        d1_m = rng.normal(0, 30, (n1, 3))
        d2_m = rng.normal(0, 30, (n2, 3))
        k = int(rng.integers(1, 5))
        eps = float(rng.uniform(0.3, 2.0))
        expect = ref_knn_unique(d1_pos, d2_pos, k, eps)
        try:
            pairs = build_alignment_set(d1_pos, d1_m, d2_pos, d2_m, k=k, eps=eps)
        except AlignmentSetError:
            assert expect == []
            continue
        got = []
        for p in pairs:
            j = int(np.where((d2_pos == p.pos_src).all(axis=1))[0][0])
            i = int(np.where((d1_pos == p.pos_dst).all(axis=1))[0][0])
            got.append((j, i))
        assert got == expect, f"trial {trial}: k={k} eps={eps}"
        # src fields come from d2, dst fields from d1
        for (j, i), p in zip(got, pairs):
            np.testing.assert_array_equal(p.m_src, d2_m[j])
            np.testing.assert_array_equal(p.m_dst, d1_m[i])


def test_build_alignment_set_one_to_one(rng):
    d1 = rng.uniform(0, 5, (40, 2))
    d2 = rng.uniform(0, 5, (60, 2))
    pairs = build_alignment_set(d1, np.zeros((40, 3)), d2, np.zeros((60, 3)),
                                k=3, eps=1.0)
    srcs = [p.pos_src for p in pairs]
    dsts = [p.pos_dst for p in pairs]
    assert len(set(srcs)) == len(srcs)
    assert len(set(dsts)) == len(dsts)


def test_build_alignment_set_gate_and_errors(rng):
    d1 = np.array([[0.0, 0.0]])
    d2 = np.array([[5.0, 0.0]])
    m = np.zeros((1, 3))
    with pytest.raises(AlignmentSetError):
        build_alignment_set(d1, m, d2, m, k=3, eps=0.5)
    with pytest.raises(ConfigError):
        build_alignment_set(d1, m, d2, m, k=0, eps=0.5)
    with pytest.raises(ConfigError):
        build_alignment_set(d1, m, d2, m, k=3, eps=0.0)
    with pytest.raises(AlignmentSetError):
        build_alignment_set(np.zeros((0, 2)), np.zeros((0, 3)), d2, m)


# ---------------------------------------------------------------------------
# rotation fit


def test_fit_linear_recovers_known_rotation(rng):
    for _ in range(10):
        R = random_rotation(rng)
        src = rng.normal(0, 25, (200, 3))
        g = fit_linear(pairs_from(src, src @ R.T))
        assert np.abs(g.matrix - R).max() < 1e-9
        assert rms_residual(pairs_from(src, src @ R.T), g) < 1e-9


def test_fit_linear_noisy_residual(rng):
    R = random_rotation(rng)
    src = rng.normal(0, 25, (200, 3))
    dst = src @ R.T + rng.normal(0, 0.1, (200, 3))
    g = fit_linear(pairs_from(src, dst))
    assert rms_residual(pairs_from(src, dst), g) < 0.3


def fib_axes(n):
    # evenly spread directions on the sphere (golden-angle spiral)
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + 5 ** 0.5) * i
    return np.column_stack([np.sin(phi) * np.cos(theta),
                            np.sin(phi) * np.sin(theta), np.cos(phi)])


def test_fit_linear_dominates_grid_search(rng):
    # the fitted R maximizes tr(R H); a dense axis-angle sweep over SO(3)
    # must never beat it, and must come close (grid resolution ~4 degrees)
    src = rng.normal(0, 10, (40, 3))
    R_true = random_rotation(rng)
    dst = src @ R_true.T + rng.normal(0, 2.0, (40, 3))  # heavy noise
    H = src.T @ dst
    g = fit_linear(pairs_from(src, dst))
    fitted_trace = float(np.trace(g.matrix @ H))
    best = -np.inf
    for axis in fib_axes(150):
        for ang in np.linspace(0.0, np.pi, 46):
            Rg = rotation_about_axis(axis, ang)
            best = max(best, float(np.trace(Rg @ H)))
    assert fitted_trace >= best - 1e-9
    assert fitted_trace >= best * 0.999


def test_fit_linear_never_returns_reflection(rng):
    # mirrored targets tempt the unconstrained optimum into det = -1
    src = rng.normal(0, 10, (50, 3))
    dst = src.copy()
    dst[:, 2] *= -1.0
    g = fit_linear(pairs_from(src, dst))
    assert np.linalg.det(g.matrix) == pytest.approx(1.0, abs=1e-9)


def test_fit_linear_rank_errors(rng):
    src = np.outer(rng.normal(0, 1, 30), np.array([1.0, 2.0, -1.0]))
    dst = src @ random_rotation(rng).T
    with pytest.raises(RankError):
        fit_linear(pairs_from(src, dst))
    with pytest.raises(RankError):
        fit_linear(pairs_from(np.zeros((2, 3)), np.zeros((2, 3))))
    with pytest.raises(ConfigError):
        fit_linear(pairs_from(np.eye(3), np.eye(3)), constrain="rigid")


def test_fit_affine_recovers_matrix_plus_offset(rng):
    A = rng.normal(0, 1, (3, 3))
    b = rng.normal(0, 5, 3)
    src = rng.normal(0, 10, (100, 3))
    g = fit_linear(pairs_from(src, src @ A.T + b), constrain="affine")
    assert g.kind == "affine"
    np.testing.assert_allclose(g.matrix, A, atol=1e-9)
    np.testing.assert_allclose(g.bias, b, atol=1e-8)
    np.testing.assert_allclose(g.apply(src), src @ A.T + b, atol=1e-8)


def test_transform_validation():
    with pytest.raises(AlignmentError):
        AlignmentTransform(kind="linear", matrix=np.eye(3) * 2.0)
    with pytest.raises(AlignmentError):
        AlignmentTransform(kind="linear", matrix=None)
    with pytest.raises(AlignmentError):
        AlignmentTransform(kind="warp")
    ident = identity_transform()
    v = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(ident.apply(v), v)
    assert ident.apply(v).ndim == 1  # 1-D in, 1-D out


# ---------------------------------------------------------------------------
# deep fit


def test_fit_deep_learns_componentwise_warp(rng):
    # smooth nonlinear distortion a rotation cannot express
    src = rng.normal(0, 12.0, (400, 3))
    dst = np.column_stack([
        src[:, 0] + 0.02 * src[:, 1] ** 2,
        1.1 * src[:, 1] - 3.0,
        src[:, 2] + 4.0 * np.tanh(src[:, 0] / 10.0),
    ])
    pairs = pairs_from(src, dst)
    lin = fit_linear(pairs)
    deep = fit_deep(pairs, DeepFitConfig(epochs=1000, seed=0))
    assert rms_residual(pairs, deep) < 0.5 * rms_residual(pairs, lin)


def test_fit_deep_requires_enough_pairs(rng):
    src = rng.normal(0, 1, (8, 3))
    with pytest.raises(ConfigError):
        fit_deep(pairs_from(src, src), DeepFitConfig(batch_size=32))


def test_alignment_report_structure(rng):
    R = random_rotation(rng)
    src = rng.normal(0, 10, (50, 3))
    pairs = pairs_from(src, src @ R.T)
    g = fit_linear(pairs)
    rep = alignment_report(pairs, {"linear": g})
    assert rep["pairs"] == 50
    assert rep["rms_before"] == pytest.approx(rms_residual(pairs))
    assert rep["rms_after"]["linear"] < 1e-9


# ---------------------------------------------------------------------------
# trial splitting and application


def test_common_segment_split():
    tr = make_trial(n=100, rate=10.0)
    seg_pos, seg_m, rest = common_segment(tr, fraction=0.05)
    assert len(seg_pos) == 5 and len(seg_m) == 5
    assert len(rest) == 95
    np.testing.assert_array_equal(seg_m, tr.m[:5])
    np.testing.assert_array_equal(rest.m, tr.m[5:])
    # floor of two samples even for tiny fractions
    seg_pos, _, _ = common_segment(tr, fraction=0.001)
    assert len(seg_pos) == 2
    with pytest.raises(ConfigError):
        common_segment(tr, fraction=1.5)
    with pytest.raises(AlignmentSetError):
        common_segment(make_trial(with_pos=False), fraction=0.05)


def test_apply_alignment_to_trial(rng):
    tr = make_trial(n=50, rate=10.0)
    R = random_rotation(rng)
    g = AlignmentTransform(kind="linear", matrix=R)
    out = apply_alignment(g, tr)
    np.testing.assert_allclose(out.m, tr.m @ R.T, atol=1e-12)
    np.testing.assert_array_equal(out.pos, tr.pos)
    assert out.id == tr.id


# ---------------------------------------------------------------------------
# serialization


def test_save_load_linear_transform(tmp_path, rng):
    R = random_rotation(rng)
    g = AlignmentTransform(kind="linear", matrix=R)
    p = tmp_path / "lin.transform"
    save_transform(p, g)
    back = load_transform(p)
    assert back.kind == "linear"
    np.testing.assert_array_equal(back.matrix, R)


def test_save_load_affine_transform(tmp_path, rng):
    g = AlignmentTransform(kind="affine", matrix=rng.normal(0, 1, (3, 3)),
                           bias=rng.normal(0, 1, 3))
    p = tmp_path / "aff.transform"
    save_transform(p, g)
    back = load_transform(p)
    np.testing.assert_array_equal(back.matrix, g.matrix)
    np.testing.assert_array_equal(back.bias, g.bias)


def test_save_load_deep_transform(tmp_path, rng):
    src = rng.normal(0, 10, (64, 3))
    dst = src * 1.2 + 3.0
    g = fit_deep(pairs_from(src, dst), DeepFitConfig(epochs=20, seed=1))
    p = tmp_path / "deep.transform"
    save_transform(p, g)
    back = load_transform(p)
    probe = rng.normal(0, 10, (10, 3))
    np.testing.assert_allclose(back.apply(probe), g.apply(probe), atol=1e-12)
    with pytest.raises(AlignmentError):
        save_transform(tmp_path / "id.transform", identity_transform())
