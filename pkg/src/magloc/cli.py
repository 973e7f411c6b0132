"""Command-line pipeline harness.

Subcommands cover the full round trip on disk:

    synth      scenario config -> canonical CSV trials in split directories
    transform  trial CSVs -> per-trial window stacks (.npy) + manifest.csv
    landmarks  trial CSVs -> map.csv + landmarks.csv
    train      stacks (+ landmarks for the classifier) -> model file + curve CSV
    predict    model + stacks -> prediction CSV
    eval       prediction CSV -> metrics JSON
    align      robot1 + robot2 trials -> transform files + residual report
    bench      kernel timing table (numba vs numpy)

One config file drives everything; ``--set section.key=value`` overrides
single keys. Exit codes: 0 ok, 1 usage/config, 2 data, 3 numerical.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from collections import defaultdict

import numpy as np

from . import bench as bench_mod
from .alignment import (AlignmentTransform, alignment_report, apply_alignment,
                        build_alignment_set, common_segment, DeepFitConfig,
                        fit_deep, fit_linear, save_transform)
from .config import PipelineConfig, load_config, scenario_config, train_config
from .errors import ConfigError, DataError, InferenceError, MaglocError, NumericalError
from .imaging import (TRANSFORM_RANGES, WindowImageStack, channel_tags,
                      sliding_windows, stack_channels)
from .ingest import Dataset, load_dataset, trial_to_global, write_canonical_csv
from .landmarks import (find_landmarks, label_windows, landmarks_to_csv,
                        load_landmarks_csv, map_to_csv)
from .models import (Model, estimates_to_csv, evaluate, load_estimates_csv,
                     metrics_json, predict_positions, predict_sequence,
                     train_classifier, train_regressor_fn, train_regressor_rnn,
                     classifier_spec, fn_regressor_spec, rnn_regressor_spec)
from .synth import generate_scenario


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _build_parser() -> _Parser:
    p = _Parser(prog="magloc",
                description="magnetic-field indoor localization pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key-value config file")
        sp.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key")

    sp = sub.add_parser("synth", help="generate a synthetic scenario")
    common(sp)
    sp.add_argument("--out", required=True, help="output dataset directory")

    sp = sub.add_parser("transform", help="encode trials into image stacks")
    common(sp)
    sp.add_argument("--data", required=True, help="directory of trial CSVs")
    sp.add_argument("--out", required=True, help="output stack directory")
    sp.add_argument("--dump", choices=["pgm", "png"],
                    help="also write channel images for inspection")
    sp.add_argument("--dump-limit", type=int, default=4,
                    help="max windows dumped per trial (default 4)")

    sp = sub.add_parser("landmarks", help="grid the map and extract landmarks")
    common(sp)
    sp.add_argument("--data", required=True, help="directory of positioned trial CSVs")
    sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("train", help="train the configured model on stacks")
    common(sp)
    sp.add_argument("--stacks", required=True, help="stack directory from transform")
    sp.add_argument("--out", required=True, help="model file to write")
    sp.add_argument("--landmarks", help="landmarks.csv (classifier only)")

    sp = sub.add_parser("predict", help="run a model over stacks")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--stacks", required=True)
    sp.add_argument("--out", required=True, help="prediction CSV")
    sp.add_argument("--start-seed", type=int, default=0,
                    help="seed for the noisy start estimates (sequence model)")

    sp = sub.add_parser("eval", help="mean localization error of predictions")
    sp.add_argument("--pred", required=True, help="prediction CSV with ground truth")
    sp.add_argument("--out", required=True, help="metrics JSON")

    sp = sub.add_parser("align", help="fit cross-robot field transforms")
    common(sp)
    sp.add_argument("--train-data", required=True,
                    help="reference robot trial directory")
    sp.add_argument("--test-data", required=True,
                    help="trial directory of the robot to align")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--apply", action="store_true",
                    help="also write aligned copies of the remaining test data")

    sp = sub.add_parser("bench", help="time the jitted kernels vs numpy")
    sp.add_argument("--repeats", type=int, default=5)
    return p


# ---------------------------------------------------------------------------
# helpers


def _load_split(cfg: PipelineConfig, directory, split="train") -> Dataset:
    ds = load_dataset(directory, split=split, format=cfg.ingest_format, rate=cfg.rate)
    trials = [trial_to_global(tr) if tr.frame == "local" else tr for tr in ds]
    return Dataset(trials=trials, split=split)


def _trial_stacks(cfg: PipelineConfig, trial) -> list[WindowImageStack]:
    per_axis = {}
    for i, axis in enumerate("xyz"):
        per_axis[axis] = sliding_windows(
            trial.m[:, i], rate=cfg.rate, size_s=cfg.window_size_s,
            step_s=cfg.window_step_s, t0=float(trial.t[0]), pos=trial.pos)
    return stack_channels(per_axis, layout=cfg.layout, image_side=cfg.image_side,
                          metric=cfg.metric, q_bins=cfg.mtf_bins)


def _dump_images(stacks, trial_id, out_dir, kind, limit) -> None:
    for wi, stack in enumerate(stacks[:limit]):
        for (transform, axis), img in zip(stack.channel_layout, stack.channels):
            lo, hi = TRANSFORM_RANGES[transform]
            scaled = np.clip((img - lo) / (hi - lo), 0.0, 1.0)
            gray = (scaled * 255.0 + 0.5).astype(np.uint8)
            name = f"{trial_id}_w{wi:03d}_{transform}_{axis}.{kind}"
            path = os.path.join(out_dir, name)
            if kind == "pgm":
                with open(path, "wb") as fh:
                    fh.write(f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode())
                    fh.write(gray.tobytes())
            else:
                from PIL import Image
                Image.fromarray(gray, mode="L").save(path)


def _write_stacks(out_dir, trial_id, stacks) -> list[list]:
    arr = np.stack([s.channels for s in stacks])
    fname = f"{trial_id}.npy"
    np.save(os.path.join(out_dir, fname), arr)
    rows = []
    for wi, s in enumerate(stacks):
        x, y = ("", "") if s.anchor_pos is None else (repr(s.anchor_pos[0]),
                                                      repr(s.anchor_pos[1]))
        rows.append([trial_id, wi, repr(s.t_start), repr(s.t_end), x, y, fname])
    return rows


def _read_stacks(cfg: PipelineConfig, stacks_dir):
    """Manifest + npy files -> ordered {trial_id: [WindowImageStack]}."""
    manifest = os.path.join(stacks_dir, "manifest.csv")
    if not os.path.exists(manifest):
        raise DataError(f"{stacks_dir}: no manifest.csv (run transform first)")
    import csv as _csv
    per_trial: dict[str, list] = defaultdict(list)
    arrays: dict[str, np.ndarray] = {}
    with open(manifest, "r", encoding="utf-8", newline="") as fh:
        for row in _csv.DictReader(fh):
            tid = row["trial_id"]
            if row["file"] not in arrays:
                arrays[row["file"]] = np.load(os.path.join(stacks_dir, row["file"]))
            arr = arrays[row["file"]]
            wi = int(row["window_index"])
            anchor = None
            if row["x"] != "" and row["y"] != "":
                anchor = (float(row["x"]), float(row["y"]))
            per_trial[tid].append(WindowImageStack(
                channels=arr[wi], channel_layout=channel_tags(cfg.layout),
                t_start=float(row["t_start"]), t_end=float(row["t_end"]),
                anchor_pos=anchor))
    if not per_trial:
        raise DataError(f"{manifest}: empty manifest")
    for tid, stacks in per_trial.items():
        n = stacks[0].channels.shape[0]
        if n != cfg.layout:
            raise ConfigError(f"stacks in {stacks_dir} have {n} channels but "
                              f"config says imaging.layout = {cfg.layout}")
    return dict(per_trial)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    cfg = load_config(args.config, args.overrides)
    splits = generate_scenario(cfg.scenario, scenario_config(cfg))
    for rel, trials in splits.items():
        out = os.path.join(args.out, rel)
        os.makedirs(out, exist_ok=True)
        for trial in trials:
            write_canonical_csv(trial, os.path.join(out, f"{trial.id}.csv"))
    total = sum(len(v) for v in splits.values())
    print(f"wrote {total} trials under {args.out} "
          f"({', '.join(sorted(splits))})")
    return 0


def cmd_transform(args) -> int:
    cfg = load_config(args.config, args.overrides)
    ds = _load_split(cfg, args.data)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for trial in ds:
        stacks = _trial_stacks(cfg, trial)
        rows.extend(_write_stacks(args.out, trial.id, stacks))
        if args.dump:
            _dump_images(stacks, trial.id, args.out, args.dump, args.dump_limit)
    import csv as _csv
    with open(os.path.join(args.out, "manifest.csv"), "w", encoding="utf-8",
              newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["trial_id", "window_index", "t_start", "t_end", "x", "y", "file"])
        w.writerows(rows)
    print(f"wrote {len(rows)} window stacks for {len(ds)} trials to {args.out}")
    return 0


def cmd_landmarks(args) -> int:
    cfg = load_config(args.config, args.overrides)
    ds = _load_split(cfg, args.data)
    mag_map, marks = find_landmarks(ds, resolution=cfg.resolution,
                                    link_distance=cfg.link_distance,
                                    threshold=cfg.threshold)
    os.makedirs(args.out, exist_ok=True)
    map_to_csv(mag_map, os.path.join(args.out, "map.csv"))
    landmarks_to_csv(marks, os.path.join(args.out, "landmarks.csv"))
    print(f"{len(marks)} landmarks from a "
          f"{mag_map.mean.shape[0]}x{mag_map.mean.shape[1]} cell map")
    return 0


def _model_spec(cfg: PipelineConfig, n_classes=None):
    conv = (cfg.conv1, cfg.conv2)
    if cfg.model_kind == "classifier":
        return classifier_spec(n_classes, conv, cfg.fc_dim)
    if cfg.model_kind == "fn_regressor":
        return fn_regressor_spec(conv, cfg.fc_dim)
    return rnn_regressor_spec(conv, cfg.embed_dim, cfg.hidden_dim, cfg.gru_layers)


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.overrides)
    per_trial = _read_stacks(cfg, args.stacks)
    tcfg = train_config(cfg)
    if cfg.model_kind == "classifier":
        if not args.landmarks:
            raise ConfigError("classifier training needs --landmarks")
        marks = load_landmarks_csv(args.landmarks)
        stacks = [s for stacks in per_trial.values() for s in stacks]
        labels = label_windows(stacks, marks)
        model = train_classifier(stacks, labels,
                                 spec=_model_spec(cfg, len(marks)), cfg=tcfg,
                                 landmark_positions=[m.pos for m in marks])
    elif cfg.model_kind == "fn_regressor":
        stacks = [s for stacks in per_trial.values() for s in stacks]
        model = train_regressor_fn(stacks, spec=_model_spec(cfg), cfg=tcfg)
    else:
        model = train_regressor_rnn(list(per_trial.values()),
                                    spec=_model_spec(cfg), cfg=tcfg)
    model.save(args.out)
    curve_path = args.out + ".curve.csv"
    with open(curve_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for e, v in enumerate(model.meta["curve"]):
            fh.write(f"{e},{repr(v)}\n")
    print(f"trained {model.kind} ({model.network.n_params()} parameters), "
          f"final epoch loss {model.meta['curve'][-1]:.6g}; "
          f"model -> {args.out}, curve -> {curve_path}")
    return 0


def cmd_predict(args) -> int:
    cfg = load_config(args.config, args.overrides)
    model = Model.load(args.model)
    if int(model.meta.get("n_channels", cfg.layout)) != cfg.layout:
        raise ConfigError(f"model was trained on {model.meta['n_channels']} channels "
                          f"but config says imaging.layout = {cfg.layout}")
    per_trial = _read_stacks(cfg, args.stacks)
    rng = np.random.default_rng(args.start_seed)
    rows = []
    for tid in sorted(per_trial):
        stacks = per_trial[tid]
        if model.kind == "rnn_regressor":
            if stacks[0].anchor_pos is None:
                raise InferenceError(
                    f"trial {tid}: sequence prediction needs a start estimate; "
                    "stacks carry no ground truth to derive one from")
            sigma = float(model.meta.get("start_noise_std", 0.0))
            start = np.asarray(stacks[0].anchor_pos) + rng.normal(0.0, sigma, 2)
            ests = predict_sequence(model, stacks, start)
        else:
            ests = predict_positions(model, stacks)
        for s, e in zip(stacks, ests):
            rows.append((tid, e, s.anchor_pos))
    estimates_to_csv(args.out, rows)
    print(f"wrote {len(rows)} predictions to {args.out}")
    return 0


def cmd_eval(args) -> int:
    entries = load_estimates_csv(args.pred)
    per_trial_pred = defaultdict(list)
    per_trial_gt = defaultdict(list)
    for tid, est, gt in entries:
        if gt is None:
            raise DataError(f"{args.pred}: trial {tid} rows lack ground truth")
        per_trial_pred[tid].append(est)
        per_trial_gt[tid].append(gt)
    per_trial = {tid: evaluate(per_trial_pred[tid], per_trial_gt[tid])
                 for tid in per_trial_pred}
    payload = metrics_json(per_trial)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(payload + "\n")
    mean = json.loads(payload)["mean_error_m"]
    print(f"mean localization error: {mean:.3f} m over {len(per_trial)} trials")
    return 0


def cmd_align(args) -> int:
    cfg = load_config(args.config, args.overrides)
    ref = _load_split(cfg, args.train_data)
    tgt = _load_split(cfg, args.test_data, split="test")
    d1_pos = np.concatenate([tr.pos for tr in ref])
    d1_m = np.concatenate([tr.m for tr in ref])
    seg_pos, seg_m, remainders = [], [], []
    for trial in tgt:
        pos, m, rest = common_segment(trial, cfg.align_fraction)
        seg_pos.append(pos)
        seg_m.append(m)
        remainders.append(rest)
    pairs = build_alignment_set(d1_pos, d1_m, np.concatenate(seg_pos),
                                np.concatenate(seg_m), k=cfg.align_k,
                                eps=cfg.align_eps)
    kinds = ("linear", "deep") if cfg.align_kind == "all" else (cfg.align_kind,)
    os.makedirs(args.out, exist_ok=True)
    transforms: dict[str, AlignmentTransform] = {}
    for kind in kinds:
        if kind == "linear":
            transforms[kind] = fit_linear(pairs)
        elif kind == "affine":
            transforms[kind] = fit_linear(pairs, constrain="affine")
        else:
            transforms[kind] = fit_deep(pairs, DeepFitConfig(
                epochs=cfg.align_epochs, batch_size=cfg.align_batch_size,
                base_lr=cfg.base_lr, max_lr=cfg.max_lr,
                lr_step_size=cfg.lr_step_size, hidden=cfg.align_hidden,
                seed=cfg.align_seed))
        save_transform(os.path.join(args.out, f"{kind}.transform"), transforms[kind])
    report = alignment_report(pairs, transforms)
    with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(report, sort_keys=True, indent=2) + "\n")
    if args.apply:
        for kind, g in transforms.items():
            adir = os.path.join(args.out, f"aligned_{kind}")
            os.makedirs(adir, exist_ok=True)
            for trial in remainders:
                write_canonical_csv(apply_alignment(g, trial),
                                    os.path.join(adir, f"{trial.id}.csv"))
    lines = ", ".join(f"{k}: {v:.3f}" for k, v in report["rms_after"].items())
    print(f"{report['pairs']} pairs; rms before {report['rms_before']:.3f} uT; "
          f"after {lines}")
    return 0


def cmd_bench(args) -> int:
    return bench_mod.main(repeats=args.repeats)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "synth": cmd_synth, "transform": cmd_transform,
        "landmarks": cmd_landmarks, "train": cmd_train,
        "predict": cmd_predict, "eval": cmd_eval,
        "align": cmd_align, "bench": cmd_bench,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except MaglocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
