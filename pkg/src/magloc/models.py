"""The three pipeline models: landmark classifier, window-wise position
regressor, and the sequence regressor with positional context.

All three share a small convolutional trunk over the stacked transform
channels. The classifier and the feed-forward (FN) regressor score each
window independently. The sequence (RNN) regressor concatenates the
window embedding with the previous position estimate, runs a GRU over a
sliding context of the last W windows (state reset at the context start),
and regresses the current position; training replaces the fed-back
estimate by ground truth with probability p_teach (decaying linearly to
zero) and perturbs the start position with gaussian noise so inference
from a coarse start estimate is in-distribution.

Position targets are standardized per coordinate; the scaling lives in
the model file. Reported training-curve losses are in meters (squared
meters for MSE) after undoing the scaling.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import (ConfigError, DataError, EvalError, InferenceError,
                     TrainingError)
from .imaging import WindowImageStack
from .nn import FC, GRU, Conv2D, Flatten, MaxPool, Output
from .nn.losses import LOSSES, loss_fn, softmax
from .nn.network import Network
from .nn.optim import SGD, CyclicLR
from .nn.serialize import load_model as _load_model_file
from .nn.serialize import save_model as _save_model_file

log = logging.getLogger(__name__)

MODEL_KINDS = ("classifier", "fn_regressor", "rnn_regressor")

DEFAULT_CONTEXT_WINDOW = 15  # points of positional context kept by the RNN
DEFAULT_START_NOISE_STD_M = 3.0
DEFAULT_P_TEACH = 0.5


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "mse"
    epochs: int = 60
    batch_size: int = 32
    seed: int = 0
    base_lr: float = 1e-4
    max_lr: float = 1e-3
    lr_step_size: int = 100
    momentum: float = 0.0
    huber_delta: float = 1.0
    p_teach: float = DEFAULT_P_TEACH
    p_teach_decay: bool = True
    start_noise_std: float = DEFAULT_START_NOISE_STD_M
    context_window: int = DEFAULT_CONTEXT_WINDOW

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}, expected one of {LOSSES}")
        if not 0.0 <= self.p_teach <= 1.0:
            raise ConfigError(f"p_teach must be in [0, 1], got {self.p_teach}")
        if self.start_noise_std < 0:
            raise ConfigError(f"start noise std must be >= 0, got {self.start_noise_std}")
        if self.context_window < 1:
            raise ConfigError(f"context window must be >= 1, got {self.context_window}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch size must be >= 1")

    def schedule(self) -> CyclicLR:
        return CyclicLR(self.base_lr, self.max_lr, self.lr_step_size)


@dataclass(frozen=True)
class PositionEstimate:
    t: float
    pos: tuple[float, float]
    source: str

    def __post_init__(self):
        if not (np.isfinite(self.pos[0]) and np.isfinite(self.pos[1])):
            raise DataError(f"non-finite position estimate at t={self.t}")


@dataclass
class Model:
    kind: str
    network: Network
    meta: dict

    def save(self, path) -> None:
        _save_model_file(path, self.kind, self.network.specs,
                         self.network.input_shape, self.network.params(), self.meta)

    @classmethod
    def load(cls, path) -> "Model":
        mf = _load_model_file(path)
        if mf.kind not in MODEL_KINDS:
            raise DataError(f"{path}: not a pipeline model (kind {mf.kind!r})")
        return cls(kind=mf.kind, network=mf.build_network(), meta=mf.meta)


def classifier_spec(n_classes: int, conv_channels=(32, 64), fc_dim: int = 256):
    """Two conv blocks for the embedding, two FC layers for the scores."""
    c1, c2 = conv_channels
    return (Conv2D(c1), MaxPool(2), Conv2D(c2), MaxPool(2), Flatten(),
            FC(fc_dim), Output(n_classes))


def fn_regressor_spec(conv_channels=(32, 64), fc_dim: int = 256):
    c1, c2 = conv_channels
    return (Conv2D(c1), MaxPool(2), Conv2D(c2), MaxPool(2), Flatten(),
            FC(fc_dim), Output(2))


def rnn_regressor_spec(conv_channels=(32, 64), embed_dim: int = 64,
                       hidden_dim: int = 128, gru_layers: int = 2):
    """Conv trunk to an embedding; GRU over embedding + previous position."""
    c1, c2 = conv_channels
    return (Conv2D(c1), MaxPool(2), Conv2D(c2), MaxPool(2), Flatten(),
            FC(embed_dim), GRU(hidden_dim, gru_layers, extra_inputs=2), Output(2))


def _stack_tensor(stacks: list[WindowImageStack]) -> np.ndarray:
    if not stacks:
        raise DataError("no image stacks given")
    n = stacks[0].channels.shape[0]
    side = stacks[0].channels.shape[1]
    for s in stacks:
        if s.channels.shape != (n, side, side):
            raise DataError(f"inconsistent stack shapes: {s.channels.shape} vs {(n, side, side)}")
    return np.stack([s.channels for s in stacks])


def _anchors(stacks: list[WindowImageStack]) -> np.ndarray:
    pts = []
    for s in stacks:
        if s.anchor_pos is None:
            raise DataError("training stacks need anchor positions")
        pts.append(s.anchor_pos)
    return np.asarray(pts, dtype=np.float64)


def _pos_scaling(anchors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = anchors.mean(axis=0)
    std = np.maximum(anchors.std(axis=0), 1e-6)
    return mean, std


def _base_meta(stacks: list[WindowImageStack], cfg: TrainConfig) -> dict:
    s0 = stacks[0]
    return {
        "n_channels": int(s0.channels.shape[0]),
        "image_side": int(s0.channels.shape[1]),
        "channel_layout": [list(tag) for tag in s0.channel_layout],
        "loss": cfg.loss,
        "seed": cfg.seed,
    }


def train_classifier(stacks: list[WindowImageStack], labels, spec=None,
                     cfg: TrainConfig = TrainConfig(loss="cross_entropy"),
                     landmark_positions=None) -> Model:
    """Minibatch cross-entropy training of the landmark classifier.

    ``landmark_positions`` (index = label) travels in the model metadata
    so prediction can emit positions, not just labels.
    """
    x = _stack_tensor(stacks)
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (len(stacks),):
        raise DataError(f"labels shape {y.shape} does not match {len(stacks)} stacks")
    classes = np.unique(y)
    if len(classes) < 2:
        raise TrainingError(f"need >= 2 classes to train a classifier, got {len(classes)}")
    n_classes = int(y.max()) + 1
    if cfg.loss != "cross_entropy":
        raise ConfigError(f"classifier trains with cross_entropy, got {cfg.loss!r}")
    if spec is None:
        spec = classifier_spec(n_classes)
    net = Network(spec, input_shape=x.shape[1:], seed=cfg.seed)
    opt = SGD(net, cfg.schedule(), cfg.momentum)
    lfn = loss_fn("cross_entropy")
    rng = np.random.default_rng(cfg.seed)
    curve = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(x))
        total, seen = 0.0, 0
        for lo in range(0, len(x), cfg.batch_size):
            sel = order[lo:lo + cfg.batch_size]
            logits = net.forward(x[sel])
            loss, dlogits = lfn(logits, y[sel])
            if not np.isfinite(loss):
                raise TrainingError("classifier training diverged")
            net.backward(dlogits)
            opt.step()
            total += loss * len(sel)
            seen += len(sel)
        curve.append(total / seen)
    meta = _base_meta(stacks, cfg)
    meta["n_classes"] = n_classes
    meta["curve"] = curve
    if landmark_positions is not None:
        lm = np.asarray(landmark_positions, dtype=np.float64)
        if lm.shape != (n_classes, 2):
            raise DataError(f"landmark positions shape {lm.shape} != ({n_classes}, 2)")
        meta["landmark_positions"] = lm.tolist()
    return Model(kind="classifier", network=net, meta=meta)


def train_regressor_fn(stacks: list[WindowImageStack], spec=None,
                       cfg: TrainConfig = TrainConfig()) -> Model:
    """Window-wise position regression with MSE/MAE/Huber loss."""
    if cfg.loss == "cross_entropy":
        raise ConfigError("cross_entropy is not a regression loss")
    x = _stack_tensor(stacks)
    anchors = _anchors(stacks)
    mean, std = _pos_scaling(anchors)
    yn = (anchors - mean) / std
    if spec is None:
        spec = fn_regressor_spec()
    net = Network(spec, input_shape=x.shape[1:], seed=cfg.seed)
    if net.output_dim != 2:
        raise ConfigError(f"regressor output must be 2-D, got {net.output_dim}")
    opt = SGD(net, cfg.schedule(), cfg.momentum)
    lfn = loss_fn(cfg.loss, cfg.huber_delta)
    metric = loss_fn(cfg.loss, cfg.huber_delta)
    rng = np.random.default_rng(cfg.seed)
    curve = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(x))
        total, seen = 0.0, 0
        for lo in range(0, len(x), cfg.batch_size):
            sel = order[lo:lo + cfg.batch_size]
            pred = net.forward(x[sel])
            loss, dpred = lfn(pred, yn[sel])
            if not np.isfinite(loss):
                raise TrainingError("regressor training diverged")
            net.backward(dpred)
            opt.step()
            # curve in meters: undo the target scaling
            m_loss, _ = metric(pred * std + mean, anchors[sel])
            total += m_loss * len(sel)
            seen += len(sel)
        curve.append(total / seen)
    meta = _base_meta(stacks, cfg)
    meta["pos_mean"] = mean.tolist()
    meta["pos_std"] = std.tolist()
    meta["curve"] = curve
    return Model(kind="fn_regressor", network=net, meta=meta)


def _check_trial_stacks(trial_stacks) -> list[list[WindowImageStack]]:
    kept = []
    for i, stacks in enumerate(trial_stacks):
        if not stacks:
            log.warning("trial %d has no windows; skipping", i)
            continue
        ends = [s.t_end for s in stacks]
        if any(b <= a for a, b in zip(ends, ends[1:])):
            raise DataError(f"trial {i}: windows are not in time order")
        kept.append(list(stacks))
    if not kept:
        raise DataError("no non-empty trials to train on")
    return kept


def _rollout(net: Network, embs: np.ndarray, prev_norm: np.ndarray, t: int,
             w: int) -> np.ndarray:
    """Prediction for step t from the last w windows, state reset at the
    context start. Returns the normalized (2,) position."""
    gru = net.gru
    lo = max(0, t - w + 1)
    h = gru.init_state(1)
    for s in range(lo, t + 1):
        x = np.concatenate([embs[s], prev_norm[s]])[None, :]
        h = gru.step(x, h)
    return net.head(h[-1])[0]


def train_regressor_rnn(trial_stacks, spec=None,
                        cfg: TrainConfig = TrainConfig(epochs=300)) -> Model:
    """Sequence training over whole trials.

    Per trial and epoch: embed every window once; roll the context window
    forward to fix the fed-back previous-position inputs (ground truth
    with the teacher-forcing probability, else the model's own detached
    prediction); then recompute all steps as one padded batch for the
    gradient pass. One optimizer step per trial.
    """
    if cfg.loss == "cross_entropy":
        raise ConfigError("cross_entropy is not a regression loss")
    trials = _check_trial_stacks(trial_stacks)
    all_stacks = [s for stacks in trials for s in stacks]
    anchors_all = _anchors(all_stacks)
    mean, std = _pos_scaling(anchors_all)
    if spec is None:
        spec = rnn_regressor_spec()
    x0 = _stack_tensor(trials[0])
    net = Network(spec, input_shape=x0.shape[1:], seed=cfg.seed)
    if not net.recurrent:
        raise ConfigError("rnn_regressor needs a GRU layer in its spec")
    embed_dim = net.layers[net.gru_index].in_dim - 2
    opt = SGD(net, cfg.schedule(), cfg.momentum)
    lfn = loss_fn(cfg.loss, cfg.huber_delta)
    metric = loss_fn(cfg.loss, cfg.huber_delta)
    rng = np.random.default_rng(cfg.seed)
    w = cfg.context_window

    xs = [_stack_tensor(stacks) for stacks in trials]
    gts = [_anchors(stacks) for stacks in trials]
    gts_norm = [(g - mean) / std for g in gts]

    curve = []
    for epoch in range(cfg.epochs):
        if cfg.p_teach_decay and cfg.epochs > 1:
            p_teach = cfg.p_teach * (1.0 - epoch / (cfg.epochs - 1))
        else:
            p_teach = cfg.p_teach
        total, seen = 0.0, 0
        for x, gt, gtn in zip(xs, gts, gts_norm):
            t_steps = len(x)
            embs = net.embed(x)  # (T, E); conv caches reused by the backward pass

            # fix the previous-position inputs for every step
            prev_norm = np.empty((t_steps, 2))
            start = gt[0] + rng.normal(0.0, cfg.start_noise_std, size=2)
            prev_norm[0] = (start - mean) / std
            for t in range(t_steps - 1):
                # random() < 1.0 always holds, so p_teach=1 never rolls out
                if rng.random() < p_teach:
                    prev_norm[t + 1] = gtn[t]
                else:
                    prev_norm[t + 1] = _rollout(net, embs, prev_norm, t, w)

            # padded right-aligned context block: column t covers steps
            # (t - W + 1 .. t), inactive slots masked out
            xseq = np.zeros((w, t_steps, embed_dim + 2))
            active = np.zeros((w, t_steps), dtype=bool)
            for t in range(t_steps):
                lo = max(0, t - w + 1)
                for k, s in enumerate(range(lo, t + 1), start=w - (t - lo + 1)):
                    xseq[k, t, :embed_dim] = embs[s]
                    xseq[k, t, embed_dim:] = prev_norm[s]
                    active[k, t] = True
            h_last = net.gru.forward(xseq, active)
            pred_n = net.head(h_last)
            loss, dpred = lfn(pred_n, gtn)
            if not np.isfinite(loss):
                raise TrainingError("sequence regressor diverged")
            dh = net.head_backward(dpred)
            dxseq = net.gru.backward(dh)
            demb = np.zeros_like(embs)
            for t in range(t_steps):
                lo = max(0, t - w + 1)
                for k, s in enumerate(range(lo, t + 1), start=w - (t - lo + 1)):
                    demb[s] += dxseq[k, t, :embed_dim]
            net.embed_backward(demb)
            opt.step()
            m_loss, _ = metric(pred_n * std + mean, gt)
            total += m_loss * t_steps
            seen += t_steps
        curve.append(total / seen)
    meta = _base_meta(all_stacks, cfg)
    meta["pos_mean"] = mean.tolist()
    meta["pos_std"] = std.tolist()
    meta["context_window"] = w
    meta["start_noise_std"] = cfg.start_noise_std
    meta["p_teach"] = cfg.p_teach
    meta["p_teach_decay"] = cfg.p_teach_decay
    meta["curve"] = curve
    return Model(kind="rnn_regressor", network=net, meta=meta)


def predict_positions(model: Model, stacks: list[WindowImageStack]) -> list[PositionEstimate]:
    """Window-wise predictions for the classifier / FN regressor."""
    if model.kind == "rnn_regressor":
        raise InferenceError("sequence model needs predict_sequence with a start estimate")
    x = _stack_tensor(stacks)
    if x.shape[1:] != model.network.input_shape:
        raise ConfigError(f"stack shape {x.shape[1:]} does not match model "
                          f"input {model.network.input_shape}")
    out = model.network.forward(x)
    if model.kind == "classifier":
        if "landmark_positions" not in model.meta:
            raise InferenceError("classifier has no landmark positions in metadata")
        lm = np.asarray(model.meta["landmark_positions"], dtype=np.float64)
        labels = out.argmax(axis=1)
        pos = lm[labels]
    else:
        mean = np.asarray(model.meta["pos_mean"])
        std = np.asarray(model.meta["pos_std"])
        pos = out * std + mean
    return [PositionEstimate(t=float(s.t_end), pos=(float(p[0]), float(p[1])),
                             source=model.kind)
            for s, p in zip(stacks, pos)]


def predict_labels(model: Model, stacks: list[WindowImageStack]) -> np.ndarray:
    if model.kind != "classifier":
        raise InferenceError(f"predict_labels needs a classifier, got {model.kind}")
    x = _stack_tensor(stacks)
    return model.network.forward(x).argmax(axis=1)


def predict_proba(model: Model, stacks: list[WindowImageStack]) -> np.ndarray:
    if model.kind != "classifier":
        raise InferenceError(f"predict_proba needs a classifier, got {model.kind}")
    x = _stack_tensor(stacks)
    return softmax(model.network.forward(x))


def predict_sequence(model: Model, stacks: list[WindowImageStack],
                     start_estimate) -> list[PositionEstimate]:
    """Autoregressive rollout of the sequence model over one trial.

    ``start_estimate`` is the (possibly noisy) position at the first
    window; every later step feeds back the model's own prediction.
    """
    if model.kind != "rnn_regressor":
        raise InferenceError(f"predict_sequence needs an rnn_regressor, got {model.kind}")
    if start_estimate is None:
        raise InferenceError("sequence prediction needs a start estimate")
    if not stacks:
        raise DataError("no windows to predict on")
    net = model.network
    x = _stack_tensor(stacks)
    if x.shape[1:] != net.input_shape:
        raise ConfigError(f"stack shape {x.shape[1:]} does not match model "
                          f"input {net.input_shape}")
    mean = np.asarray(model.meta["pos_mean"])
    std = np.asarray(model.meta["pos_std"])
    w = int(model.meta["context_window"])
    embed_dim = net.layers[net.gru_index].in_dim - 2
    embs = net.embed(x)
    prev_norm = np.empty((len(stacks), 2))
    prev_norm[0] = (np.asarray(start_estimate, dtype=np.float64) - mean) / std
    preds = np.empty((len(stacks), 2))
    for t in range(len(stacks)):
        preds[t] = _rollout(net, embs, prev_norm, t, w)
        if t + 1 < len(stacks):
            prev_norm[t + 1] = preds[t]
    pos = preds * std + mean
    return [PositionEstimate(t=float(s.t_end), pos=(float(p[0]), float(p[1])),
                             source="rnn_regressor")
            for s, p in zip(stacks, pos)]


def evaluate(estimates, ground_truth) -> float:
    """Mean euclidean distance between estimates and ground truth."""
    if len(estimates) != len(ground_truth):
        raise EvalError(f"{len(estimates)} estimates vs {len(ground_truth)} "
                        "ground-truth points")
    if len(estimates) == 0:
        raise EvalError("nothing to evaluate")
    pred = np.array([e.pos if isinstance(e, PositionEstimate) else e
                     for e in estimates], dtype=np.float64)
    gt = np.asarray(ground_truth, dtype=np.float64)
    return float(np.linalg.norm(pred - gt, axis=1).mean())


def estimates_to_csv(path, rows) -> None:
    """Prediction CSV: rows of (trial_id, estimate, gt_pos or None)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial_id", "t", "x_pred", "y_pred", "x_gt", "y_gt"])
        for trial_id, est, gt in rows:
            gx, gy = ("", "") if gt is None else (repr(float(gt[0])), repr(float(gt[1])))
            writer.writerow([trial_id, repr(est.t), repr(est.pos[0]),
                             repr(est.pos[1]), gx, gy])


def load_estimates_csv(path):
    """Inverse of estimates_to_csv: list of (trial_id, estimate, gt or None)."""
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            gt = None
            if row["x_gt"] != "" and row["y_gt"] != "":
                gt = (float(row["x_gt"]), float(row["y_gt"]))
            est = PositionEstimate(t=float(row["t"]),
                                   pos=(float(row["x_pred"]), float(row["y_pred"])),
                                   source="file")
            out.append((row["trial_id"], est, gt))
    return out


def metrics_json(per_trial: dict[str, float]) -> str:
    """Canonical metrics serialization: stable key order, repr floats."""
    errs = list(per_trial.values())
    payload = {
        "mean_error_m": float(np.mean(errs)) if errs else None,
        "per_trial": {k: float(v) for k, v in sorted(per_trial.items())},
    }
    return json.dumps(payload, sort_keys=True, indent=2)
