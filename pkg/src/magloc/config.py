"""Key-value pipeline configuration.

One flat text file drives every CLI command: ``section.key = value``
lines, ``#`` comments, blank lines ignored. Unknown keys are rejected so
typos fail loudly. Command-line ``--set section.key=value`` overrides
win over the file, which wins over the defaults baked in here (these
match the module-level defaults documented in each module).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError


def _to_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _to_threshold(raw: str):
    if raw.strip().lower() == "auto":
        return None
    return float(raw)


@dataclass
class PipelineConfig:
    # ingestion
    ingest_format: str = "csv-canonical"  # csv-canonical | magpie | ipin-getsensordata
    rate: float = 10.0                 # Hz, shared by ingest and synth
    # windowing
    window_size_s: float = 7.0
    window_step_s: float = 1.0
    # imaging
    layout: int = 12                   # stacked channels: 1 | 3 | 9 | 12
    image_side: int = 32
    metric: str = "canberra"
    mtf_bins: int = 8
    # landmarks
    resolution: float = 1.0
    link_distance: float = 2.0
    threshold: float | None = None     # None = one std of cell intensities
    # model
    model_kind: str = "fn_regressor"
    loss: str = "mse"
    epochs: int = 60
    batch_size: int = 32
    seed: int = 0
    base_lr: float = 1e-4
    max_lr: float = 1e-3
    lr_step_size: int = 100
    momentum: float = 0.0
    huber_delta: float = 1.0
    p_teach: float = 0.5
    p_teach_decay: bool = True
    start_noise_std: float = 3.0
    context_window: int = 15
    conv1: int = 32
    conv2: int = 64
    fc_dim: int = 256
    embed_dim: int = 64
    hidden_dim: int = 128
    gru_layers: int = 2
    # alignment
    align_k: int = 3
    align_eps: float = 0.5
    align_kind: str = "all"            # linear | deep | affine | all
    align_fraction: float = 0.05
    align_hidden: int = 64
    align_epochs: int = 5000
    align_batch_size: int = 32
    align_seed: int = 0
    # synth
    scenario: str = "corridor"
    synth_seed: int = 0
    speed: float = 1.0
    noise_sigma: float = 0.2
    n_train: int = 6
    n_val: int = 1
    n_test: int = 3
    reverse_augment: bool = False


# config-file key -> (dataclass field, converter)
SCHEMA = {
    "ingest.format": ("ingest_format", str),
    "ingest.rate": ("rate", float),
    "window.size_s": ("window_size_s", float),
    "window.step_s": ("window_step_s", float),
    "imaging.layout": ("layout", int),
    "imaging.image_side": ("image_side", int),
    "imaging.metric": ("metric", str),
    "imaging.mtf_bins": ("mtf_bins", int),
    "landmarks.resolution": ("resolution", float),
    "landmarks.link_distance": ("link_distance", float),
    "landmarks.threshold": ("threshold", _to_threshold),
    "model.kind": ("model_kind", str),
    "model.loss": ("loss", str),
    "model.epochs": ("epochs", int),
    "model.batch_size": ("batch_size", int),
    "model.seed": ("seed", int),
    "model.base_lr": ("base_lr", float),
    "model.max_lr": ("max_lr", float),
    "model.lr_step_size": ("lr_step_size", int),
    "model.momentum": ("momentum", float),
    "model.huber_delta": ("huber_delta", float),
    "model.p_teach": ("p_teach", float),
    "model.p_teach_decay": ("p_teach_decay", _to_bool),
    "model.start_noise_std": ("start_noise_std", float),
    "model.context_window": ("context_window", int),
    "model.conv1": ("conv1", int),
    "model.conv2": ("conv2", int),
    "model.fc_dim": ("fc_dim", int),
    "model.embed_dim": ("embed_dim", int),
    "model.hidden_dim": ("hidden_dim", int),
    "model.gru_layers": ("gru_layers", int),
    "align.k": ("align_k", int),
    "align.eps": ("align_eps", float),
    "align.kind": ("align_kind", str),
    "align.fraction": ("align_fraction", float),
    "align.hidden": ("align_hidden", int),
    "align.epochs": ("align_epochs", int),
    "align.batch_size": ("align_batch_size", int),
    "align.seed": ("align_seed", int),
    "synth.scenario": ("scenario", str),
    "synth.seed": ("synth_seed", int),
    "synth.speed": ("speed", float),
    "synth.noise_sigma": ("noise_sigma", float),
    "synth.n_train": ("n_train", int),
    "synth.n_val": ("n_val", int),
    "synth.n_test": ("n_test", int),
    "synth.reverse_augment": ("reverse_augment", _to_bool),
}

_FIELD_NAMES = {f.name for f in fields(PipelineConfig)}
assert all(f in _FIELD_NAMES for f, _ in SCHEMA.values())


def _apply(cfg: PipelineConfig, key: str, raw: str, where: str) -> None:
    if key not in SCHEMA:
        raise ConfigError(f"{where}: unknown config key {key!r}")
    field_name, conv = SCHEMA[key]
    try:
        setattr(cfg, field_name, conv(raw.strip()))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: bad value for {key}: {exc}") from None


def load_config(path=None, overrides=()) -> PipelineConfig:
    """Defaults, then the file (if given), then key=value overrides."""
    cfg = PipelineConfig()
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                body = line.split("#", 1)[0].strip()
                if not body:
                    continue
                if "=" not in body:
                    raise ConfigError(f"{path}:{line_no}: expected key = value, got {body!r}")
                key, raw = body.split("=", 1)
                _apply(cfg, key.strip(), raw, f"{path}:{line_no}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        _apply(cfg, key.strip(), raw, "--set")
    _validate(cfg)
    return cfg


def _validate(cfg: PipelineConfig) -> None:
    from .imaging import CHANNEL_LAYOUTS, RP_METRICS
    if cfg.ingest_format not in ("csv-canonical", "magpie", "ipin-getsensordata"):
        raise ConfigError(f"unknown ingest format {cfg.ingest_format!r}")
    if cfg.layout not in CHANNEL_LAYOUTS:
        raise ConfigError(f"channel layout must be one of {CHANNEL_LAYOUTS}, got {cfg.layout}")
    if cfg.metric not in RP_METRICS:
        raise ConfigError(f"unknown distance metric {cfg.metric!r}")
    if cfg.model_kind not in ("classifier", "fn_regressor", "rnn_regressor"):
        raise ConfigError(f"unknown model kind {cfg.model_kind!r}")
    if cfg.align_kind not in ("linear", "deep", "affine", "all"):
        raise ConfigError(f"unknown alignment kind {cfg.align_kind!r}")
    if cfg.rate <= 0:
        raise ConfigError(f"rate must be positive, got {cfg.rate}")
    if not 0.0 < cfg.align_fraction < 1.0:
        raise ConfigError(f"alignment fraction must be in (0, 1), got {cfg.align_fraction}")


def train_config(cfg: PipelineConfig) -> "TrainConfig":
    from .models import TrainConfig
    loss = "cross_entropy" if cfg.model_kind == "classifier" else cfg.loss
    return TrainConfig(
        loss=loss, epochs=cfg.epochs, batch_size=cfg.batch_size, seed=cfg.seed,
        base_lr=cfg.base_lr, max_lr=cfg.max_lr, lr_step_size=cfg.lr_step_size,
        momentum=cfg.momentum, huber_delta=cfg.huber_delta, p_teach=cfg.p_teach,
        p_teach_decay=cfg.p_teach_decay, start_noise_std=cfg.start_noise_std,
        context_window=cfg.context_window)


def scenario_config(cfg: PipelineConfig) -> "ScenarioConfig":
    from .synth import ScenarioConfig
    return ScenarioConfig(
        seed=cfg.synth_seed, rate=cfg.rate, speed=cfg.speed,
        noise_sigma=cfg.noise_sigma, n_train=cfg.n_train, n_val=cfg.n_val,
        n_test=cfg.n_test, reverse_augment=cfg.reverse_augment)


def write_config(cfg: PipelineConfig, path) -> None:
    """Dump every key in schema order; a round-trip fixture for tests."""
    lines = []
    for key, (field_name, _) in SCHEMA.items():
        val = getattr(cfg, field_name)
        if val is None:
            val = "auto"
        lines.append(f"{key} = {val}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
