"""Continuous emotion recognition over precomputed per-frame features.

The package covers the full pipeline: overlapping-window segmentation, a
tape-based reverse-mode autodiff engine, a TCN plus transformer encoder
stack with per-task heads, CCC / cross-entropy / logit-space BCE losses,
AdamW training with a cosine warmup schedule, CCC and macro-F1
evaluation, binary feature and checkpoint formats, a synthetic dataset
generator, and a command-line front end.
"""

from . import autodiff
from .datamodel import (ACTION_UNITS, EXPRESSION_CLASSES, FrameLabels, Segment,
                        TaskKind, VideoRecord, output_dim)
from .errors import ConfigError, DataError, NumericalError
from .gradcheck import GRADCHECK_TOLERANCE, run_gradcheck
from .io import (Checkpoint, SyntheticReadout, apply_readout,
                 causal_moving_average, generate_synthetic, load_annotations,
                 load_checkpoint, load_dataset, load_features, load_video,
                 save_annotations, save_checkpoint, save_dataset, save_features,
                 shuffle_labels, synthetic_readout)
from .model import (EncoderSettings, HeadSettings, ModelConfig, PipelineModel,
                    TcnSettings, parameter_count, sinusoidal_positions)
from .objectives import (EvalReport, binary_f1, ccc, decisions_from_outputs,
                         loss_au, loss_expr, loss_va, macro_f1_multiclass,
                         macro_f1_multilabel, report_from_frames, task_loss)
from .optim import AdamW, OptimConfig, lr_schedule
from .segmentation import (SegmentationConfig, merge_predictions,
                           nominal_segment_count, segment_dataset, split)
from .trainer import (EpochRecord, TrainResult, evaluate_model, fold_of,
                      fold_split, predict_video, train)

__version__ = "0.1.0"

__all__ = [
    "ACTION_UNITS", "AdamW", "Checkpoint", "ConfigError", "DataError",
    "EXPRESSION_CLASSES", "EncoderSettings", "EpochRecord", "EvalReport",
    "FrameLabels", "GRADCHECK_TOLERANCE", "HeadSettings", "ModelConfig",
    "NumericalError", "OptimConfig", "PipelineModel", "Segment",
    "SegmentationConfig", "SyntheticReadout", "TaskKind", "TcnSettings",
    "TrainResult", "VideoRecord", "apply_readout", "autodiff", "binary_f1",
    "causal_moving_average", "ccc", "decisions_from_outputs", "evaluate_model",
    "fold_of", "fold_split", "generate_synthetic", "load_annotations",
    "load_checkpoint", "load_dataset", "load_features", "load_video",
    "loss_au", "loss_expr", "loss_va", "lr_schedule", "macro_f1_multiclass",
    "macro_f1_multilabel", "merge_predictions", "nominal_segment_count",
    "output_dim", "parameter_count", "predict_video", "report_from_frames",
    "run_gradcheck", "save_annotations", "save_checkpoint", "save_dataset",
    "save_features", "segment_dataset", "shuffle_labels", "sinusoidal_positions",
    "split", "synthetic_readout", "task_loss", "train",
]
