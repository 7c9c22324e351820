"""Command-line front end: synth / train / eval / predict / gradcheck.

A run is described by an optional JSON config file plus flags; flags take
precedence over file values.  Path-level problems caught while validating
the run description (missing directories, unknown keys, inconsistent
tasks) are configuration errors; problems inside data files surface as
data errors; divergence and gradient-check failures are numerical errors.
The process exit code encodes the class: 0 success, 2 configuration,
3 data, 4 numerical.

Config file schema (all sections optional)::

    {
      "task": "va" | "expr" | "au",
      "data_dir": "...", "out_dir": "...", "seed": 0,
      "fold": 0,                      # validation fold, or explicit lists:
      "train_videos": ["id", ...], "val_videos": ["id", ...],
      "segmentation": {"window": 300, "stride": 200},
      "model": {"tcn": {...}, "encoder": {...}, "head": {...},
                "dropout": 0.3, "use_tcn": true, "use_encoder": true,
                "dtype": "float32"},
      "optim": {"epochs": 10, "lr": 3e-5, ...}
    }

``model.feature_dim`` and ``model.task`` are not accepted: the feature
dimension is read from the data and the task is a top-level field.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datamodel import FrameLabels, TaskKind, VideoRecord, output_dim
from .errors import ConfigError, DataError, NumericalError
from .gradcheck import GRADCHECK_TOLERANCE, run_gradcheck
from .io import (generate_synthetic, load_checkpoint, load_dataset, load_features,
                 save_annotations, save_dataset)
from .model import (EncoderSettings, HeadSettings, ModelConfig, PipelineModel,
                    TcnSettings)
from .objectives import decisions_from_outputs
from .optim import OptimConfig
from .segmentation import SegmentationConfig
from .trainer import evaluate_model, fold_split, predict_video, train

_TOP_KEYS = {"task", "data_dir", "out_dir", "seed", "fold", "train_videos",
             "val_videos", "segmentation", "model", "optim"}
_MODEL_KEYS = {"tcn", "encoder", "head", "dropout", "use_tcn", "use_encoder", "dtype"}


@dataclass
class RunConfig:
    """Validated description of one command invocation."""

    task: TaskKind
    data_dir: Path | None = None
    out_dir: Path | None = None
    seed: int = 0
    fold: int | None = None
    train_videos: list[str] | None = None
    val_videos: list[str] | None = None
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    model_settings: dict = field(default_factory=dict)
    optim: OptimConfig | None = None

    def model_config(self, feature_dim: int) -> ModelConfig:
        settings = dict(self.model_settings)
        try:
            if "tcn" in settings:
                tcn = dict(settings["tcn"])
                if "dilations" in tcn:
                    tcn["dilations"] = tuple(tcn["dilations"])
                settings["tcn"] = TcnSettings(**tcn)
            if "encoder" in settings:
                settings["encoder"] = EncoderSettings(**settings["encoder"])
            if "head" in settings:
                settings["head"] = HeadSettings(**settings["head"])
            return ModelConfig(feature_dim=feature_dim, task=self.task, **settings)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid model settings: {exc}") from exc


def _load_config_file(path: Path) -> dict:
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    model_section = raw.get("model", {})
    if not isinstance(model_section, dict):
        raise ConfigError("config key 'model' must be an object")
    bad = set(model_section) - _MODEL_KEYS
    if bad:
        raise ConfigError(
            f"unknown model settings: {', '.join(sorted(bad))} "
            "(feature_dim comes from the data, task is a top-level key)"
        )
    return raw


def _build_run_config(args, need_data: bool, need_out: bool,
                      epochs_required: bool) -> RunConfig:
    raw = _load_config_file(Path(args.config)) if getattr(args, "config", None) else {}

    def pick(flag_name, key, default=None):
        flag = getattr(args, flag_name, None)
        if flag is not None:
            return flag
        return raw.get(key, default)

    task_name = pick("task", "task")
    if task_name is None:
        raise ConfigError("no task given (flag --task or config key 'task')")
    try:
        task = TaskKind.from_string(str(task_name))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    seg_section = dict(raw.get("segmentation", {}))
    if getattr(args, "window", None) is not None:
        seg_section["window"] = args.window
    if getattr(args, "stride", None) is not None:
        seg_section["stride"] = args.stride
    try:
        segmentation = SegmentationConfig(**seg_section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid segmentation settings: {exc}") from exc

    seed = int(pick("seed", "seed", 0))

    model_settings = dict(raw.get("model", {}))
    if getattr(args, "no_tcn", False):
        model_settings["use_tcn"] = False
    if getattr(args, "no_encoder", False):
        model_settings["use_encoder"] = False

    optim = None
    optim_section = dict(raw.get("optim", {}))
    for flag_name, key in (("epochs", "epochs"), ("lr", "lr"),
                           ("batch_size", "batch_size"),
                           ("warmup_epochs", "warmup_epochs")):
        value = getattr(args, flag_name, None)
        if value is not None:
            optim_section[key] = value
    if optim_section or epochs_required:
        if "epochs" not in optim_section:
            raise ConfigError("no epoch count given (flag --epochs or config "
                              "key 'optim.epochs')")
        optim_section.setdefault("seed", seed)
        try:
            optim = OptimConfig(**optim_section)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid optimizer settings: {exc}") from exc

    data_dir = pick("data", "data_dir")
    if data_dir is None and need_data:
        raise ConfigError("no data directory given (flag --data or config "
                          "key 'data_dir')")
    if data_dir is not None:
        data_dir = Path(data_dir)
        if not data_dir.is_dir():
            raise ConfigError(f"data directory {data_dir} does not exist")

    out_dir = pick("out", "out_dir")
    if out_dir is None and need_out:
        raise ConfigError("no output directory given (flag --out or config "
                          "key 'out_dir')")

    fold = pick("fold", "fold")
    train_list = raw.get("train_videos")
    val_list = raw.get("val_videos")
    if (train_list is None) != (val_list is None):
        raise ConfigError("train_videos and val_videos must be given together")
    if fold is not None and train_list is not None:
        raise ConfigError("give either a fold index or explicit video lists, "
                          "not both")

    return RunConfig(
        task=task,
        data_dir=data_dir,
        out_dir=None if out_dir is None else Path(out_dir),
        seed=seed,
        fold=None if fold is None else int(fold),
        train_videos=train_list,
        val_videos=val_list,
        segmentation=segmentation,
        model_settings=model_settings,
        optim=optim,
    )


def _split_videos(run: RunConfig, videos):
    if run.train_videos is not None:
        by_id = {v.video_id: v for v in videos}
        for name in run.train_videos + run.val_videos:
            if name not in by_id:
                raise ConfigError(f"video id {name!r} from the split lists is "
                                  "not in the dataset")
        overlap = set(run.train_videos) & set(run.val_videos)
        if overlap:
            raise ConfigError(f"videos in both splits: {', '.join(sorted(overlap))}")
        return ([by_id[n] for n in run.train_videos],
                [by_id[n] for n in run.val_videos])
    fold = 0 if run.fold is None else run.fold
    try:
        train_videos, val_videos = fold_split(videos, fold)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return train_videos, val_videos


def _model_from_checkpoint(ckpt) -> PipelineModel:
    model = PipelineModel.initialize(ckpt.model_config, seed=0)
    model.load_state_arrays(ckpt.params)
    return model


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    try:
        task = TaskKind.from_string(args.task)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if min(args.videos, args.frames, args.dim) < 1:
        raise ConfigError("--videos, --frames and --dim must all be >= 1")
    videos = generate_synthetic(task, args.videos, args.frames, args.dim, args.seed)
    out = Path(args.out)
    save_dataset(videos, out)
    print(f"wrote {len(videos)} {task.value} videos "
          f"({args.frames} frames x {args.dim} dims) to {out}")
    return 0


def _cmd_train(args) -> int:
    run = _build_run_config(args, need_data=True, need_out=True,
                            epochs_required=True)
    videos = load_dataset(run.data_dir, run.task)
    train_videos, val_videos = _split_videos(run, videos)
    if not train_videos or not val_videos:
        raise ConfigError("both train and validation splits must be non-empty; "
                          "pick a different fold or explicit lists")
    if run.optim.warmup_epochs >= run.optim.epochs:
        raise ConfigError("warmup_epochs must be smaller than epochs")

    feature_dim = train_videos[0].feature_dim
    model_config = run.model_config(feature_dim)
    model = PipelineModel.initialize(model_config, seed=run.seed)

    resume = getattr(args, "resume", None)
    if resume is not None:
        resume = Path(resume)
        if not resume.is_file():
            raise ConfigError(f"resume checkpoint {resume} does not exist")
        ckpt = load_checkpoint(resume)
        if ckpt.model_config != model_config:
            raise ConfigError("checkpoint/config mismatch: the resume checkpoint "
                              "was written with different model settings")

    result = train(model, train_videos, val_videos, run.optim, run.segmentation,
                   out_dir=run.out_dir, resume_from=resume)
    for record in result.history:
        print(record.format_line())
    print(f"best val_metric {result.best_metric!r} at epoch {result.best_epoch} "
          f"(checkpoints in {run.out_dir})")
    return 0


def _segmentation_from(args, section: dict) -> SegmentationConfig:
    """Window/stride from a config-file section with flag overrides."""
    merged = dict(section)
    if getattr(args, "window", None) is not None:
        merged["window"] = args.window
    if getattr(args, "stride", None) is not None:
        merged["stride"] = args.stride
    try:
        return SegmentationConfig(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid segmentation settings: {exc}") from exc


def _cmd_eval(args) -> int:
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.is_file():
        raise ConfigError(f"checkpoint {ckpt_path} does not exist")
    ckpt = load_checkpoint(ckpt_path)
    raw = _load_config_file(Path(args.config)) if args.config else {}

    requested = args.task if args.task is not None else raw.get("task")
    if requested is not None:
        try:
            requested = TaskKind.from_string(str(requested))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if requested is not ckpt.model_config.task:
            raise ConfigError(
                f"task mismatch: checkpoint was trained for "
                f"{ckpt.model_config.task.value}, requested {requested.value}"
            )

    data_dir = args.data if args.data is not None else raw.get("data_dir")
    if data_dir is None:
        raise ConfigError("no data directory given (flag --data or config "
                          "key 'data_dir')")
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise ConfigError(f"data directory {data_dir} does not exist")

    segmentation = _segmentation_from(args, raw.get("segmentation", {}))
    videos = load_dataset(data_dir, ckpt.model_config.task)
    if getattr(args, "fold", None) is not None:
        _, videos = fold_split(videos, args.fold)
        if not videos:
            raise ConfigError(f"fold {args.fold} holds no videos in this dataset")

    model = _model_from_checkpoint(ckpt)
    report = evaluate_model(model, videos, segmentation)
    table = report.format_table()
    print(table)
    if getattr(args, "out", None) is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(table + "\n", encoding="ascii")
        record = json.dumps(report.to_dict(), sort_keys=True)
        (out / "report.json").write_text(record + "\n", encoding="ascii")
    return 0


def _placeholder_labels(task: TaskKind, n: int) -> FrameLabels:
    """All-valid zero labels, used when predicting from bare feature files."""
    if task is TaskKind.VA:
        values = np.zeros((n, 2), dtype=np.float64)
    elif task is TaskKind.EXPR:
        values = np.zeros(n, dtype=np.int64)
    else:
        values = np.zeros((n, output_dim(task)), dtype=np.int64)
    return FrameLabels(task=task, values=values, valid=np.ones(n, dtype=bool))


def _cmd_predict(args) -> int:
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.is_file():
        raise ConfigError(f"checkpoint {ckpt_path} does not exist")
    ckpt = load_checkpoint(ckpt_path)
    task = ckpt.model_config.task

    feature_root = Path(args.features)
    if (feature_root / "features").is_dir():
        feature_root = feature_root / "features"
    if not feature_root.is_dir():
        raise ConfigError(f"feature directory {feature_root} does not exist")
    paths = sorted(feature_root.glob("*.feat"))
    if not paths:
        raise DataError(f"{feature_root}: no .feat files found")

    segmentation = _segmentation_from(args, {})
    model = _model_from_checkpoint(ckpt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in paths:
        features = load_features(path)
        if features.shape[0] < 1:
            raise DataError(f"{path}: video has no frames")
        if features.shape[1] != ckpt.model_config.feature_dim:
            raise DataError(f"{path}: {features.shape[1]} feature dims, checkpoint "
                            f"expects {ckpt.model_config.feature_dim}")
        n = features.shape[0]
        video = VideoRecord(video_id=path.stem, features=features,
                            labels=_placeholder_labels(task, n))
        merged = predict_video(model, video, segmentation)
        decisions = decisions_from_outputs(task, merged)
        predicted = FrameLabels(task=task, values=decisions,
                                valid=np.ones(n, dtype=bool))
        save_annotations(out / f"{path.stem}.txt", predicted)
    print(f"wrote predictions for {len(paths)} videos to {out}")
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_gradcheck(seed=args.seed)
    worst_name, worst = None, -1.0
    for name, err in results.items():
        print(f"{name}: max relative error {err:.3e}")
        if err > worst:
            worst_name, worst = name, err
    if worst > GRADCHECK_TOLERANCE:
        raise NumericalError(
            f"gradcheck failed: {worst_name} at {worst:.3e} exceeds "
            f"{GRADCHECK_TOLERANCE:.0e}"
        )
    print(f"all {len(results)} checks within {GRADCHECK_TOLERANCE:.0e}")
    return 0


# --------------------------------------------------------------------------
# argument parsing and dispatch
# --------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="affectseq",
        description="Continuous emotion recognition over precomputed "
                    "per-frame features.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="emit a synthetic dataset")
    p.add_argument("--task", required=True, help="va, expr or au")
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.add_argument("--videos", type=int, default=20)
    p.add_argument("--frames", type=int, default=600)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model and write checkpoints")
    p.add_argument("--config", help="JSON run config file")
    p.add_argument("--task")
    p.add_argument("--data", help="dataset directory (features/ + annotations/)")
    p.add_argument("--out", help="output directory for checkpoints and history")
    p.add_argument("--fold", type=int, help="validation fold index (default 0)")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--warmup-epochs", type=int, dest="warmup_epochs")
    p.add_argument("--window", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--no-tcn", action="store_true", dest="no_tcn",
                   help="ablation: replace the TCN with a linear projection")
    p.add_argument("--no-encoder", action="store_true", dest="no_encoder",
                   help="ablation: skip the transformer encoder")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint against a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--config", help="JSON run config file")
    p.add_argument("--task", help="guard: must match the checkpoint task")
    p.add_argument("--fold", type=int, help="score only this fold's videos")
    p.add_argument("--window", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--out", help="directory for report.txt / report.json")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="write per-frame predictions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True,
                   help="feature directory or dataset root")
    p.add_argument("--out", required=True, help="directory for prediction files")
    p.add_argument("--window", type=int)
    p.add_argument("--stride", type=int)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of every "
                                         "primitive and the composed pipeline")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


def run() -> None:
    raise SystemExit(main(sys.argv[1:]))
