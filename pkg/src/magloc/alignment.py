"""Cross-robot sensor alignment.

Two robots reading the same field report different vectors because each
carries its own electromagnetic footprint. From position-paired samples
of a shared track segment this module fits a map g from the test robot's
measurement space into the train robot's:

* linear: the least-squares rotation (orthogonal Procrustes via SVD,
  determinant corrected to +1), optionally relaxed to an unconstrained
  affine fit for ablation;
* deep: a small ReLU MLP (3 -> h -> h -> 3) trained with SGD and a cyclic
  learning rate on the mean euclidean mismatch.

Pairs come from greedy unique nearest-neighbor matching on positions
within a distance gate.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import (AlignmentError, AlignmentSetError, ConfigError, RankError,
                     TrainingError)
from .ingest import Trial
from .nn import FC, SGD, CyclicLR, Network, Output
from .nn.serialize import load_model, save_model

DEFAULT_K = 3
DEFAULT_EPS_M = 0.5
DEFAULT_SPLIT_FRACTION = 0.05


@dataclass(frozen=True)
class AlignmentPair:
    m_src: tuple[float, float, float]
    m_dst: tuple[float, float, float]
    pos_src: tuple[float, float]
    pos_dst: tuple[float, float]


def _pairs_to_arrays(pairs) -> tuple[np.ndarray, np.ndarray]:
    src = np.array([p.m_src for p in pairs], dtype=np.float64)
    dst = np.array([p.m_dst for p in pairs], dtype=np.float64)
    return src, dst


def build_alignment_set(d1_pos, d1_m, d2_pos, d2_m, k: int = DEFAULT_K,
                        eps: float = DEFAULT_EPS_M) -> list[AlignmentPair]:
    """Pair test-robot samples (D2) with train-robot samples (D1).

    Candidates are the k nearest D1 positions of each D2 position within
    ``eps`` meters; matching is greedy by ascending distance and consumes
    both sides, so no sample appears in two pairs. Raises
    :class:`AlignmentSetError` when nothing pairs up.
    """
    if k < 1:
        raise ConfigError(f"neighbor count must be >= 1, got {k}")
    if eps <= 0:
        raise ConfigError(f"distance gate must be positive, got {eps}")
    d1_pos = np.asarray(d1_pos, dtype=np.float64)
    d2_pos = np.asarray(d2_pos, dtype=np.float64)
    d1_m = np.asarray(d1_m, dtype=np.float64)
    d2_m = np.asarray(d2_m, dtype=np.float64)
    if d1_pos.ndim != 2 or d1_pos.shape[1] != 2 or d2_pos.ndim != 2 or d2_pos.shape[1] != 2:
        raise AlignmentSetError("positions must be (n, 2) arrays")
    if len(d1_pos) == 0 or len(d2_pos) == 0:
        raise AlignmentSetError("cannot build alignment pairs from empty data")

    tree = cKDTree(d1_pos)
    kq = min(k, len(d1_pos))
    dist, idx = tree.query(d2_pos, k=kq)
    dist = np.atleast_2d(dist.T).T  # (n2, kq) even when kq == 1
    idx = np.atleast_2d(idx.T).T
    cand = []
    for j in range(len(d2_pos)):
        for c in range(kq):
            if dist[j, c] < eps:
                cand.append((float(dist[j, c]), j, int(idx[j, c])))
    # ascending distance; index tie-break keeps the order deterministic
    cand.sort()
    used1: set[int] = set()
    used2: set[int] = set()
    pairs = []
    for d, j, i in cand:
        if i in used1 or j in used2:
            continue
        used1.add(i)
        used2.add(j)
        pairs.append(AlignmentPair(
            m_src=tuple(d2_m[j]), m_dst=tuple(d1_m[i]),
            pos_src=tuple(d2_pos[j]), pos_dst=tuple(d1_pos[i])))
    if not pairs:
        raise AlignmentSetError(f"no position pairs within {eps} m")
    return pairs


@dataclass
class AlignmentTransform:
    """Fitted map from test-robot field space to train-robot field space.

    kind 'linear' carries a rotation matrix, 'affine' a free matrix plus
    offset, 'deep' an MLP with its input/output standardization.
    """

    kind: str
    matrix: np.ndarray | None = None
    bias: np.ndarray | None = None
    network: Network | None = None
    norm: dict | None = None

    def __post_init__(self):
        if self.kind == "linear":
            r = self.matrix
            if r is None or r.shape != (3, 3):
                raise AlignmentError("linear transform needs a 3x3 matrix")
            if np.abs(r.T @ r - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
                raise AlignmentError("linear transform matrix is not a proper rotation")
        elif self.kind == "affine":
            if self.matrix is None or self.matrix.shape != (3, 3):
                raise AlignmentError("affine transform needs a 3x3 matrix")
            if self.bias is None:
                self.bias = np.zeros(3)
        elif self.kind == "deep":
            if self.network is None or self.norm is None:
                raise AlignmentError("deep transform needs a network and its scaling")
        elif self.kind != "identity":
            raise AlignmentError(f"unknown transform kind {self.kind!r}")

    def apply(self, m: np.ndarray) -> np.ndarray:
        m = np.asarray(m, dtype=np.float64)
        squeeze = m.ndim == 1
        m2 = np.atleast_2d(m)
        if self.kind == "identity":
            out = m2.copy()
        elif self.kind in ("linear", "affine"):
            out = m2 @ self.matrix.T
            if self.kind == "affine":
                out = out + self.bias
        else:
            x = (m2 - self.norm["src_mean"]) / self.norm["src_std"]
            y = self.network.forward(x)
            out = y * self.norm["dst_std"] + self.norm["dst_mean"]
        return out[0] if squeeze else out


def identity_transform() -> AlignmentTransform:
    return AlignmentTransform(kind="identity")


def fit_linear(pairs, constrain: str = "so3") -> AlignmentTransform:
    """Best-fit rotation src -> dst in the least-squares sense.

    ``constrain='affine'`` drops the rotation constraint and solves a free
    matrix-plus-offset least squares instead (ablation only). Collinear
    pair sets leave the rotation underdetermined and raise
    :class:`RankError`.
    """
    if constrain not in ("so3", "affine"):
        raise ConfigError(f"constrain must be 'so3' or 'affine', got {constrain!r}")
    src, dst = _pairs_to_arrays(pairs)
    if len(src) < 3:
        raise RankError(f"need >= 3 pairs to fit a rotation, got {len(src)}")
    if constrain == "affine":
        a = np.column_stack([src, np.ones(len(src))])
        coef, _, rank, _ = np.linalg.lstsq(a, dst, rcond=None)
        if rank < 4:
            raise RankError("pair set is degenerate for an affine fit")
        return AlignmentTransform(kind="affine", matrix=coef[:3].T.copy(),
                                  bias=coef[3].copy())
    h = src.T @ dst
    u, s, vt = np.linalg.svd(h)
    if s[1] <= 1e-9 * max(s[0], 1e-30):
        raise RankError("pairs are collinear; rotation is underdetermined")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return AlignmentTransform(kind="linear", matrix=r)


@dataclass(frozen=True)
class DeepFitConfig:
    epochs: int = 5000
    batch_size: int = 32
    base_lr: float = 1e-4
    max_lr: float = 1e-3
    lr_step_size: int = 100
    hidden: int = 64
    seed: int = 0


def _mean_norm_loss(pred: np.ndarray, target: np.ndarray):
    diff = pred - target
    norms = np.sqrt((diff * diff).sum(axis=1))
    grad = np.zeros_like(diff)
    nz = norms > 1e-12
    grad[nz] = diff[nz] / (norms[nz, None] * len(diff))
    return float(norms.mean()), grad


def fit_deep(pairs, cfg: DeepFitConfig = DeepFitConfig()) -> AlignmentTransform:
    """MLP fit of the src -> dst field map.

    Inputs and targets are standardized per component (stored with the
    transform); training is plain SGD over shuffled minibatches with the
    triangular cyclic schedule, minimizing the mean euclidean mismatch.
    """
    src, dst = _pairs_to_arrays(pairs)
    n = len(src)
    if n < cfg.batch_size:
        raise ConfigError(f"need at least batch_size={cfg.batch_size} pairs, got {n}")
    norm = {
        "src_mean": src.mean(axis=0), "src_std": np.maximum(src.std(axis=0), 1e-6),
        "dst_mean": dst.mean(axis=0), "dst_std": np.maximum(dst.std(axis=0), 1e-6),
    }
    x = (src - norm["src_mean"]) / norm["src_std"]
    y = (dst - norm["dst_mean"]) / norm["dst_std"]

    net = Network((FC(cfg.hidden, "relu"), FC(cfg.hidden, "relu"), Output(3)),
                  input_shape=(3,), seed=cfg.seed)
    sched = CyclicLR(base_lr=cfg.base_lr, max_lr=cfg.max_lr, step_size=cfg.lr_step_size)
    opt = SGD(net, sched)
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            sel = order[lo:lo + cfg.batch_size]
            pred = net.forward(x[sel])
            loss, dpred = _mean_norm_loss(pred, y[sel])
            if not np.isfinite(loss):
                raise TrainingError("alignment MLP diverged (non-finite loss)")
            net.backward(dpred)
            opt.step()
    return AlignmentTransform(kind="deep", network=net, norm=norm)


def apply_alignment(transform: AlignmentTransform, trial: Trial) -> Trial:
    """New trial with every field vector mapped through the transform."""
    return replace(trial, m=transform.apply(trial.m))


def rms_residual(pairs, transform: AlignmentTransform | None = None) -> float:
    """RMS of ||g(m_src) - m_dst|| over the pairs; identity g when None."""
    src, dst = _pairs_to_arrays(pairs)
    mapped = src if transform is None else transform.apply(src)
    return float(np.sqrt(((mapped - dst) ** 2).sum(axis=1).mean()))


def alignment_report(pairs, transforms: dict[str, AlignmentTransform]) -> dict:
    """Residual summary: unaligned baseline plus one row per fitted kind."""
    rows = {"none": rms_residual(pairs)}
    for name, g in transforms.items():
        rows[name] = rms_residual(pairs, g)
    return {"pairs": len(pairs), "rms_before": rows["none"],
            "rms_after": {k: v for k, v in rows.items() if k != "none"}}


def common_segment(trial: Trial, fraction: float = DEFAULT_SPLIT_FRACTION):
    """First ``fraction`` of a trial by time: the held-out alignment part.

    Returns (segment positions, segment fields, remainder trial).
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"alignment fraction must be in (0, 1), got {fraction}")
    if trial.pos is None:
        raise AlignmentSetError(f"trial {trial.id} has no positions for alignment")
    n = max(int(np.ceil(len(trial) * fraction)), 2)
    rest = replace(trial, t=trial.t[n:], m=trial.m[n:],
                   angles=None if trial.angles is None else trial.angles[n:],
                   pos=trial.pos[n:])
    return trial.pos[:n].copy(), trial.m[:n].copy(), rest


def save_transform(path, transform: AlignmentTransform) -> None:
    if transform.kind == "linear":
        save_model(path, "alignment_linear", (), (3,), {"matrix": transform.matrix})
    elif transform.kind == "affine":
        save_model(path, "alignment_affine", (), (3,),
                   {"matrix": transform.matrix, "bias": transform.bias})
    elif transform.kind == "deep":
        save_model(path, "alignment_deep", transform.network.specs, (3,),
                   transform.network.params(),
                   meta={k: v for k, v in transform.norm.items()})
    else:
        raise AlignmentError(f"cannot save transform of kind {transform.kind!r}")


def load_transform(path) -> AlignmentTransform:
    mf = load_model(path)
    if mf.kind == "alignment_linear":
        return AlignmentTransform(kind="linear", matrix=mf.params["matrix"])
    if mf.kind == "alignment_affine":
        return AlignmentTransform(kind="affine", matrix=mf.params["matrix"],
                                  bias=mf.params["bias"])
    if mf.kind == "alignment_deep":
        norm = {k: np.asarray(v, dtype=np.float64) for k, v in mf.meta.items()}
        return AlignmentTransform(kind="deep", network=mf.build_network(), norm=norm)
    raise AlignmentError(f"{path}: not an alignment transform (kind {mf.kind!r})")
