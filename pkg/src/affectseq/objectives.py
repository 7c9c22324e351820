"""Task losses and evaluation metrics, all mask-aware.

Statistics use population (1/N) normalization throughout, so the
concordance correlation coefficient is scale-free and stays in [-1, 1].
The loss functions operate on autodiff tensors and ignore masked frames
completely: perturbing predictions at invalid positions changes neither
values nor gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from .autodiff import Tensor
from .datamodel import ACTION_UNITS, EXPRESSION_CLASSES, TaskKind

#: Below this, the CCC denominator counts as degenerate and the CCC is 0.
CCC_DENOMINATOR_FLOOR = 1e-12


def ccc(x, y, valid=None) -> float:
    """Concordance correlation coefficient between two sequences.

    Single-pass implementation: means, variances, and the co-moment are
    accumulated incrementally over the valid pairs.

    Args:
        x, y: 1-D numeric sequences of equal length.
        valid: Optional boolean mask selecting the pairs to use.

    Returns:
        ``2*cov / (var_x + var_y + (mean_x - mean_y)^2)`` in [-1, 1];
        0.0 when the denominator is degenerate (both sequences constant
        and equal).

    Raises:
        ValueError: on fewer than 2 valid pairs.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("ccc expects two 1-D sequences of equal length")
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        x = x[valid]
        y = y[valid]
    if x.shape[0] < 2:
        raise ValueError("ccc needs at least 2 valid pairs")

    mean_x = mean_y = 0.0
    m2_x = m2_y = co = 0.0
    count = 0
    for xi, yi in zip(x.tolist(), y.tolist()):
        count += 1
        dx = xi - mean_x
        mean_x += dx / count
        dy = yi - mean_y
        mean_y += dy / count
        m2_x += dx * (xi - mean_x)
        m2_y += dy * (yi - mean_y)
        co += dx * (yi - mean_y)

    var_x = m2_x / count
    var_y = m2_y / count
    cov = co / count
    denom = var_x + var_y + (mean_x - mean_y) ** 2
    if denom < CCC_DENOMINATOR_FLOOR:
        return 0.0
    return 2.0 * cov / denom


def _ccc_graph(pred: Tensor, target: np.ndarray) -> Tensor | float:
    """Differentiable CCC of a predicted column against a constant target."""
    target_t = ad.as_tensor(target, like=pred)
    mean_p = pred.mean()
    mean_t = ad.as_tensor(float(target.mean()), like=pred)
    centered_p = pred - mean_p
    centered_t = target_t - mean_t
    var_p = (centered_p * centered_p).mean()
    var_t = (centered_t * centered_t).mean()
    cov = (centered_p * centered_t).mean()
    gap = mean_p - mean_t
    denom = var_p + var_t + gap * gap
    if float(denom.data) < CCC_DENOMINATOR_FLOOR:
        return 0.0
    return (2.0 * cov) / denom


def loss_va(pred: Tensor, target: np.ndarray, valid: np.ndarray) -> Tensor:
    """1 minus the mean CCC of the valence and arousal dimensions.

    Computed over the valid frames of the batch; gradients flow through the
    means, variances, and covariance.  A degenerate dimension contributes
    CCC = 0, i.e. loss 1, with no gradient.
    """
    pred, target, valid = _flatten_masked(pred, target, valid, expected_dim=2)
    if valid.sum() < 2:
        raise ValueError("loss_va needs at least 2 valid frames")
    idx = np.flatnonzero(valid)
    pred_v = pred[idx]
    target_v = np.asarray(target, dtype=np.float64)[idx]

    total = None
    for dim in range(2):
        term = _ccc_graph(pred_v[:, dim], target_v[:, dim])
        total = term if total is None else total + term
    if isinstance(total, float):  # both dimensions degenerate
        return ad.as_tensor(1.0 - total / 2.0, like=pred)
    return 1.0 - total * 0.5


def loss_expr(logits: Tensor, target_class: np.ndarray, valid: np.ndarray) -> Tensor:
    """Multiclass cross-entropy over valid frames (mean of -log p_true)."""
    logits, target_class, valid = _flatten_masked(
        logits, target_class, valid, expected_dim=len(EXPRESSION_CLASSES)
    )
    if not valid.any():
        raise ValueError("loss_expr needs at least 1 valid frame")
    idx = np.flatnonzero(valid)
    sub = logits[idx]
    classes = np.asarray(target_class, dtype=np.int64)[idx]

    # log-softmax via a detached max shift: log p = x - m - log(sum(exp(x - m)))
    shift = sub.data.max(axis=1, keepdims=True)
    log_norm = ad.log(ad.exp(sub - shift).sum(axis=1, keepdims=True)) + shift
    true_logit = sub[np.arange(idx.shape[0]), classes]
    return (log_norm.reshape((-1,)) - true_logit).mean()


def loss_au(logits: Tensor, target: np.ndarray, valid: np.ndarray) -> Tensor:
    """Logit-space binary cross-entropy averaged over valid frame-unit pairs.

    Uses the combined stable form ``max(x, 0) - x*y + log(1 + exp(-|x|))``,
    which stays finite even for extreme logits.
    """
    logits, target, valid = _flatten_masked(logits, target, valid, expected_dim=len(ACTION_UNITS))
    if not valid.any():
        raise ValueError("loss_au needs at least 1 valid frame")
    idx = np.flatnonzero(valid)
    sub = logits[idx]
    y = ad.as_tensor(np.asarray(target, dtype=np.float64)[idx], like=logits)
    return (ad.relu(sub) - sub * y + ad.log(1.0 + ad.exp(-ad.absolute(sub)))).mean()


def task_loss(task: TaskKind, pred: Tensor, values: np.ndarray, valid: np.ndarray) -> Tensor:
    """Dispatch to the task's loss; inputs may carry batch/window axes."""
    if task is TaskKind.VA:
        return loss_va(pred, values, valid)
    if task is TaskKind.EXPR:
        return loss_expr(pred, values, valid)
    return loss_au(pred, values, valid)


def _flatten_masked(pred: Tensor, values: np.ndarray, valid: np.ndarray, expected_dim: int):
    """Collapse leading batch/window axes to (N, d) predictions plus masks."""
    if pred.shape[-1] != expected_dim:
        raise ValueError(f"expected predictions with last dim {expected_dim}, got {pred.shape}")
    n = pred.size // expected_dim
    pred = pred.reshape((n, expected_dim))
    values = np.asarray(values)
    # VA/AU labels carry a per-frame vector, EXPR a bare class index
    if values.size == n * expected_dim:
        values = values.reshape(n, expected_dim)
    else:
        values = values.reshape(n)
    valid = np.asarray(valid, dtype=bool).reshape(n)
    return pred, values, valid


# ---------------------------------------------------------------------------
# evaluation metrics
# ---------------------------------------------------------------------------

def binary_f1(pred, target) -> float:
    """F1 of the positive class, with the 0/0 := 0 convention."""
    pred = np.asarray(pred, dtype=bool)
    target = np.asarray(target, dtype=bool)
    tp = int(np.sum(pred & target))
    fp = int(np.sum(pred & ~target))
    fn = int(np.sum(~pred & target))
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 0.0
    return 2.0 * tp / denom


def macro_f1_multiclass(pred_class, target_class, valid=None, num_classes: int = 8):
    """Per-class one-vs-rest F1 and their unweighted mean.

    Classes absent from both predictions and targets score 0 by convention
    and still count toward the macro mean.
    """
    pred_class = np.asarray(pred_class, dtype=np.int64)
    target_class = np.asarray(target_class, dtype=np.int64)
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        pred_class = pred_class[valid]
        target_class = target_class[valid]
    per_class = [
        binary_f1(pred_class == c, target_class == c) for c in range(num_classes)
    ]
    return per_class, float(np.mean(per_class))


def macro_f1_multilabel(pred, target, valid=None):
    """Per-unit binary F1 over ``(N, units)`` indicator matrices, plus mean."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        pred = pred[valid]
        target = target[valid]
    per_unit = [
        binary_f1(pred[:, j], target[:, j]) for j in range(pred.shape[1])
    ]
    return per_unit, float(np.mean(per_unit))


def decisions_from_outputs(task: TaskKind, outputs: np.ndarray) -> np.ndarray:
    """Turn merged raw outputs into final per-frame predictions.

    VA outputs pass through unchanged; EXPR takes the argmax class; AU
    thresholds the per-unit sigmoid at 0.5.
    """
    outputs = np.asarray(outputs)
    if task is TaskKind.VA:
        return outputs
    if task is TaskKind.EXPR:
        return outputs.argmax(axis=1)
    return (expit(outputs) >= 0.5).astype(np.int64)


@dataclass(frozen=True)
class EvalReport:
    """Per-task metric bundle over a set of videos.

    VA runs carry the two CCCs and their mean; EXPR/AU runs carry per-class
    F1 scores and the macro mean.  ``n_valid`` counts the frames that
    entered the metric.
    """

    task: TaskKind
    n_valid: int
    ccc_valence: float | None = None
    ccc_arousal: float | None = None
    mean_ccc: float | None = None
    per_class_f1: tuple[float, ...] | None = None
    macro_f1: float | None = None

    @property
    def primary_metric(self) -> float:
        """The model-selection scalar: mean CCC for VA, macro F1 otherwise."""
        return self.mean_ccc if self.task is TaskKind.VA else self.macro_f1

    def to_dict(self) -> dict:
        out = {"task": self.task.value, "n_valid": self.n_valid}
        if self.task is TaskKind.VA:
            out.update(
                ccc_valence=self.ccc_valence,
                ccc_arousal=self.ccc_arousal,
                mean_ccc=self.mean_ccc,
            )
        else:
            names = (
                EXPRESSION_CLASSES
                if self.task is TaskKind.EXPR
                else tuple(f"au{u}" for u in ACTION_UNITS)
            )
            out["per_class_f1"] = dict(zip(names, self.per_class_f1))
            out["macro_f1"] = self.macro_f1
        return out

    def format_table(self) -> str:
        lines = [f"task: {self.task.value}", f"valid frames: {self.n_valid}"]
        if self.task is TaskKind.VA:
            lines += [
                f"ccc_valence: {self.ccc_valence:.6f}",
                f"ccc_arousal: {self.ccc_arousal:.6f}",
                f"mean_ccc: {self.mean_ccc:.6f}",
            ]
        else:
            names = (
                EXPRESSION_CLASSES
                if self.task is TaskKind.EXPR
                else tuple(f"au{u}" for u in ACTION_UNITS)
            )
            for name, score in zip(names, self.per_class_f1):
                lines.append(f"f1[{name}]: {score:.6f}")
            lines.append(f"macro_f1: {self.macro_f1:.6f}")
        return "\n".join(lines)


def report_from_frames(task: TaskKind, outputs: np.ndarray, values: np.ndarray,
                       valid: np.ndarray) -> EvalReport:
    """Score merged per-frame outputs against reference labels.

    Args:
        task: Which task the outputs belong to.
        outputs: ``(N, output_dim)`` raw merged model outputs.
        values: Reference label array as stored in ``FrameLabels``.
        valid: ``(N,)`` mask of frames to score.
    """
    valid = np.asarray(valid, dtype=bool)
    n_valid = int(valid.sum())
    if task is TaskKind.VA:
        ccc_v = ccc(outputs[:, 0], values[:, 0], valid)
        ccc_a = ccc(outputs[:, 1], values[:, 1], valid)
        return EvalReport(
            task=task,
            n_valid=n_valid,
            ccc_valence=ccc_v,
            ccc_arousal=ccc_a,
            mean_ccc=(ccc_v + ccc_a) / 2.0,
        )
    decisions = decisions_from_outputs(task, outputs)
    if task is TaskKind.EXPR:
        per_class, macro = macro_f1_multiclass(
            decisions, values, valid, num_classes=len(EXPRESSION_CLASSES)
        )
    else:
        per_class, macro = macro_f1_multilabel(decisions, values, valid)
    return EvalReport(
        task=task, n_valid=n_valid, per_class_f1=tuple(per_class), macro_f1=macro
    )
