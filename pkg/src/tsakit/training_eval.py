"""Multi-task training loop, classification metrics, and evaluation reports.

Training minimizes weighted cross-entropy on both stability verdicts plus
squared error on both signed margins plus the gate balance penalty, with
adaptive-moment gradient descent. Validation joint accuracy (both verdicts
correct on a sample) drives early stopping and best-checkpoint retention.
Everything is seeded and single-threaded, so a fixed configuration
reproduces the training log and the checkpoint bit for bit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff_nn import (
    TASKS,
    ModelConfig,
    ModelOutput,
    StabilityModel,
    Tensor,
    load_balance_loss,
)

logger = logging.getLogger(__name__)

STABLE_CLASS = 1  # index into the 2-class logits; class 0 is unstable


# ---------------------------------------------------------------------------
# Classification and regression metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = actual, columns = predicted, index 0 = stable."""

    n00: int
    n01: int
    n10: int
    n11: int

    @property
    def total(self) -> int:
        return self.n00 + self.n01 + self.n10 + self.n11


def confusion(labels, predictions) -> ConfusionMatrix:
    """Count verdict agreement; True means stable on both sides."""
    labels = np.asarray(labels, dtype=bool)
    predictions = np.asarray(predictions, dtype=bool)
    if labels.shape != predictions.shape or labels.ndim != 1:
        raise ValueError("labels and predictions must be equal-length vectors")
    n00 = int(np.sum(labels & predictions))
    n01 = int(np.sum(labels & ~predictions))
    n10 = int(np.sum(~labels & predictions))
    n11 = int(np.sum(~labels & ~predictions))
    return ConfusionMatrix(n00=n00, n01=n01, n10=n10, n11=n11)


@dataclass(frozen=True)
class Metrics:
    """Accuracy, missed detection rate, false positive rate, G-mean.

    A rate whose denominator is empty is None, never silently zero: a test
    set with no unstable samples has no defined missed-detection rate.
    """

    accuracy: float
    mdr: float | None
    fpr: float | None
    g_mean: float | None


def metrics(cm: ConfusionMatrix) -> Metrics:
    if cm.total == 0:
        raise ValueError("metrics of an empty confusion matrix")
    if min(cm.n00, cm.n01, cm.n10, cm.n11) < 0:
        raise ValueError("confusion counts must be nonnegative")
    accuracy = (cm.n00 + cm.n11) / cm.total
    actual_unstable = cm.n10 + cm.n11
    actual_stable = cm.n00 + cm.n01
    mdr = cm.n10 / actual_unstable if actual_unstable else None
    fpr = cm.n01 / actual_stable if actual_stable else None
    if actual_stable and actual_unstable:
        g_mean = math.sqrt((cm.n00 / actual_stable) * (cm.n11 / actual_unstable))
    else:
        g_mean = None
    return Metrics(accuracy=accuracy, mdr=mdr, fpr=fpr, g_mean=g_mean)


def regression_metrics(targets, predictions) -> tuple[float, float]:
    """Population MSE and MAE."""
    targets = np.asarray(targets, dtype=float)
    predictions = np.asarray(predictions, dtype=float)
    if targets.shape != predictions.shape or targets.ndim != 1:
        raise ValueError("targets and predictions must be equal-length vectors")
    if targets.size == 0:
        raise ValueError("regression metrics of an empty batch")
    diff = predictions - targets
    return float(np.mean(diff**2)), float(np.mean(np.abs(diff)))


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossWeights:
    lambda_cls: float = 1.0
    lambda_reg: float = 1.0
    alpha_balance: float = 0.01

    def validate(self) -> None:
        if min(self.lambda_cls, self.lambda_reg, self.alpha_balance) < 0.0:
            raise ValueError("loss weights must be nonnegative")


def multitask_loss(outputs: ModelOutput, targets: dict, weights: LossWeights):
    """Weighted sum of both task families plus the balance penalty.

    targets carries "tas_cls"/"tvs_cls" as integer class vectors (1 =
    stable) and "tas_reg"/"tvs_reg" as float vectors in [-1, 1]. Returns the
    scalar loss tensor and a float breakdown for logging.
    """
    weights.validate()
    ce_tas = outputs.tas_logits.cross_entropy_logits(targets["tas_cls"])
    ce_tvs = outputs.tvs_logits.cross_entropy_logits(targets["tvs_cls"])
    reg_tas = ((outputs.tas_margin_hat.reshape(-1) - np.asarray(targets["tas_reg"], dtype=float)) ** 2).mean()
    reg_tvs = ((outputs.tvs_margin_hat.reshape(-1) - np.asarray(targets["tvs_reg"], dtype=float)) ** 2).mean()
    gates = Tensor.stack([outputs.gate_weights[t] for t in TASKS])
    balance = load_balance_loss(gates)
    total = (
        weights.lambda_cls * (ce_tas + ce_tvs)
        + weights.lambda_reg * (reg_tas + reg_tvs)
        + weights.alpha_balance * balance
    )
    parts = {
        "cls": float(ce_tas.data) + float(ce_tvs.data),
        "reg": float(reg_tas.data) + float(reg_tvs.data),
        "balance": float(balance.data),
        "total": float(total.data),
    }
    return total, parts


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


class Adam:
    """Adaptive-moment gradient descent over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0.0:
            raise ValueError("learning rate must be positive")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.t += 1
        for name, p in self.params.items():
            if p.grad is None:
                raise RuntimeError(f"parameter {name} has no gradient")
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g**2
            m_hat = self.m[name] / (1.0 - self.beta1**self.t)
            v_hat = self.v[name] / (1.0 - self.beta2**self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Loop settings. Early stopping triggers once joint validation accuracy
    reaches accuracy_threshold; with mse_threshold set, the worse of the two
    validation regression errors must also be at or below it, which keeps the
    margin heads training after classification saturates on small splits."""

    epochs: int = 200
    batch_size: int = 16
    learning_rate: float = 1e-3
    lambda_cls: float = 1.0
    lambda_reg: float = 1.0
    alpha_balance: float = 0.01
    accuracy_threshold: float = 0.95
    mse_threshold: float | None = None
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError("need at least one epoch")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if self.learning_rate <= 0.0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.accuracy_threshold <= 1.0:
            raise ValueError("accuracy threshold must lie in [0, 1]")
        if self.mse_threshold is not None and self.mse_threshold <= 0.0:
            raise ValueError("mse threshold must be positive when set")
        LossWeights(self.lambda_cls, self.lambda_reg, self.alpha_balance).validate()

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_cls, self.lambda_reg, self.alpha_balance)


@dataclass
class TrainResult:
    model: StabilityModel
    log_rows: list[dict]
    best_epoch: int
    best_val_joint: float
    stopped_early: bool
    aborted: bool


def _arrays_from_samples(samples):
    features = np.stack([np.asarray(s.features, dtype=float) for s in samples])
    adjacency = np.stack([np.asarray(s.adjacency, dtype=float) for s in samples])
    targets = {
        "tas_cls": np.array([int(s.tas_stable) for s in samples]),
        "tvs_cls": np.array([int(s.tvs_stable) for s in samples]),
        "tas_reg": np.array([s.tas_signed for s in samples], dtype=float),
        "tvs_reg": np.array([s.tvs_signed for s in samples], dtype=float),
    }
    return features, adjacency, targets


def predict(model: StabilityModel, features, adjacency, batch_size: int = 64) -> dict:
    """Forward in chunks; bool verdicts, float margins, gate weights per task."""
    n = features.shape[0]
    chunks = []
    for lo in range(0, n, batch_size):
        out = model.forward(features[lo : lo + batch_size], adjacency[lo : lo + batch_size])
        chunks.append(out)
    return {
        "tas_stable": np.concatenate(
            [c.tas_logits.data.argmax(axis=1) == STABLE_CLASS for c in chunks]
        ),
        "tvs_stable": np.concatenate(
            [c.tvs_logits.data.argmax(axis=1) == STABLE_CLASS for c in chunks]
        ),
        "tas_margin": np.concatenate([c.tas_margin_hat.data[:, 0] for c in chunks]),
        "tvs_margin": np.concatenate([c.tvs_margin_hat.data[:, 0] for c in chunks]),
        "gates": {
            task: np.concatenate([c.gate_weights[task].data for c in chunks])
            for task in TASKS
        },
    }


def _snapshot(model: StabilityModel) -> dict:
    return {name: p.data.copy() for name, p in model.params.items()}


def _restore(model: StabilityModel, snapshot: dict) -> None:
    for name, p in model.params.items():
        p.data = snapshot[name].copy()


def train(samples, split, config: TrainConfig, model_config: ModelConfig | None = None) -> TrainResult:
    """Fit the model on the train split, early-stopping on validation.

    The best-validation parameters are retained: after the loop the returned
    model carries the weights of the epoch with the highest joint validation
    accuracy, accuracy ties broken by the lower validation regression error
    (remaining ties keep the earlier epoch). A non-finite loss aborts the
    run with those same last-good weights and the aborted flag set.
    """
    config.validate()
    if len(split.train_ids) == 0 or len(split.val_ids) == 0:
        raise ValueError("training needs nonempty train and validation splits")
    features, adjacency, targets = _arrays_from_samples(samples)
    if model_config is None:
        model_config = ModelConfig(in_dim=features.shape[-1], seed=config.seed)
    elif model_config.in_dim != features.shape[-1]:
        raise ValueError("model input dim does not match the sample features")
    model = StabilityModel(model_config)
    optimizer = Adam(model.params, lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    weights = config.loss_weights

    train_ids = np.asarray(split.train_ids)
    val_ids = np.asarray(split.val_ids)
    val_feat, val_adj = features[val_ids], adjacency[val_ids]
    val_cls = {k: targets[k][val_ids] for k in ("tas_cls", "tvs_cls")}
    val_reg = {k: targets[k][val_ids] for k in ("tas_reg", "tvs_reg")}

    best = _snapshot(model)
    best_joint = -1.0
    best_mse = np.inf
    best_epoch = 0
    log_rows: list[dict] = []
    stopped_early = False
    aborted = False

    for epoch in range(1, config.epochs + 1):
        order = train_ids[rng.permutation(len(train_ids))]
        batch_losses = []
        for lo in range(0, len(order), config.batch_size):
            ids = order[lo : lo + config.batch_size]
            out = model.forward(features[ids], adjacency[ids])
            batch_targets = {k: v[ids] for k, v in targets.items()}
            loss, parts = multitask_loss(out, batch_targets, weights)
            if not np.isfinite(parts["total"]):
                logger.error(
                    "non-finite loss at epoch %d (batch at %d); restoring the "
                    "best checkpoint and aborting", epoch, lo,
                )
                aborted = True
                break
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            batch_losses.append(parts["total"])
        if aborted:
            break

        val_pred = predict(model, val_feat, val_adj)
        acc_tas = float(np.mean(val_pred["tas_stable"] == val_cls["tas_cls"].astype(bool)))
        acc_tvs = float(np.mean(val_pred["tvs_stable"] == val_cls["tvs_cls"].astype(bool)))
        joint = float(
            np.mean(
                (val_pred["tas_stable"] == val_cls["tas_cls"].astype(bool))
                & (val_pred["tvs_stable"] == val_cls["tvs_cls"].astype(bool))
            )
        )
        val_mse = max(
            regression_metrics(val_reg["tas_reg"], val_pred["tas_margin"])[0],
            regression_metrics(val_reg["tvs_reg"], val_pred["tvs_margin"])[0],
        )
        gates = np.stack([val_pred["gates"][t] for t in TASKS])
        importance = gates.sum(axis=(0, 1))
        balance = float(importance.var() / importance.mean() ** 2)
        utilization = gates.mean(axis=(0, 1))
        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(batch_losses)),
            "val_acc_tas": acc_tas,
            "val_acc_tvs": acc_tvs,
            "val_joint_acc": joint,
            "balance_loss": balance,
        }
        for e, u in enumerate(utilization):
            row[f"expert_util_{e}"] = float(u)
        log_rows.append(row)
        if joint > best_joint or (joint == best_joint and val_mse < best_mse):
            best_joint = joint
            best_mse = val_mse
            best_epoch = epoch
            best = _snapshot(model)
        if joint >= config.accuracy_threshold and (
            config.mse_threshold is None or val_mse <= config.mse_threshold
        ):
            stopped_early = True
            break

    _restore(model, best)
    return TrainResult(
        model=model,
        log_rows=log_rows,
        best_epoch=best_epoch,
        best_val_joint=best_joint,
        stopped_early=stopped_early,
        aborted=aborted,
    )


def write_training_log(rows: list[dict], path: str | Path) -> None:
    if not rows:
        raise ValueError("refusing to write an empty training log")
    columns = list(rows[0].keys())
    lines = [",".join(columns)]
    for row in rows:
        cells = []
        for c in columns:
            v = row[c]
            cells.append(str(v) if isinstance(v, int) else f"{v:.10g}")
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    tas: Metrics
    tvs: Metrics
    tas_mse: float
    tas_mae: float
    tvs_mse: float
    tvs_mae: float
    mean_margin_tas: float | None  # predicted margin averaged over stable samples
    mean_margin_tvs: float | None
    expert_utilization: dict = field(default_factory=dict)  # task -> (N,) array
    n_samples: int = 0


def evaluate(model: StabilityModel, samples, ids) -> EvalReport:
    """Full report over the given sample indices.

    Mean margins average the predicted margin over the samples whose
    reference label is stable for that criterion; with no stable samples the
    average is None.
    """
    ids = np.asarray(ids)
    if ids.size == 0:
        raise ValueError("evaluation needs at least one sample")
    subset = [samples[i] for i in ids]
    features, adjacency, targets = _arrays_from_samples(subset)
    pred = predict(model, features, adjacency)
    tas_actual = targets["tas_cls"].astype(bool)
    tvs_actual = targets["tvs_cls"].astype(bool)
    tas_m = metrics(confusion(tas_actual, pred["tas_stable"]))
    tvs_m = metrics(confusion(tvs_actual, pred["tvs_stable"]))
    tas_mse, tas_mae = regression_metrics(targets["tas_reg"], pred["tas_margin"])
    tvs_mse, tvs_mae = regression_metrics(targets["tvs_reg"], pred["tvs_margin"])
    mm_tas = float(pred["tas_margin"][tas_actual].mean()) if tas_actual.any() else None
    mm_tvs = float(pred["tvs_margin"][tvs_actual].mean()) if tvs_actual.any() else None
    utilization = {task: pred["gates"][task].mean(axis=0) for task in TASKS}
    return EvalReport(
        tas=tas_m,
        tvs=tvs_m,
        tas_mse=tas_mse,
        tas_mae=tas_mae,
        tvs_mse=tvs_mse,
        tvs_mae=tvs_mae,
        mean_margin_tas=mm_tas,
        mean_margin_tvs=mm_tvs,
        expert_utilization=utilization,
        n_samples=int(ids.size),
    )


def _fmt(value) -> str:
    return "undefined" if value is None else f"{value:.6f}"


def format_report(report: EvalReport) -> str:
    lines = [f"samples: {report.n_samples}"]
    for name, m in (("TAS", report.tas), ("TVS", report.tvs)):
        lines.append(
            f"{name}: A={_fmt(m.accuracy)} MDR={_fmt(m.mdr)} "
            f"FPR={_fmt(m.fpr)} G={_fmt(m.g_mean)}"
        )
    lines.append(f"TAS margin: MSE={report.tas_mse:.6g} MAE={report.tas_mae:.6g}")
    lines.append(f"TVS margin: MSE={report.tvs_mse:.6g} MAE={report.tvs_mae:.6g}")
    lines.append(
        f"mean margin (stable samples): TAS={_fmt(report.mean_margin_tas)} "
        f"TVS={_fmt(report.mean_margin_tvs)}"
    )
    for task, util in report.expert_utilization.items():
        cells = " ".join(f"{u:.4f}" for u in util)
        lines.append(f"expert utilization {task}: {cells}")
    return "\n".join(lines)


def report_to_csv(report: EvalReport, path: str | Path) -> None:
    cells = {
        "n_samples": report.n_samples,
        "tas_accuracy": report.tas.accuracy,
        "tas_mdr": report.tas.mdr,
        "tas_fpr": report.tas.fpr,
        "tas_g": report.tas.g_mean,
        "tvs_accuracy": report.tvs.accuracy,
        "tvs_mdr": report.tvs.mdr,
        "tvs_fpr": report.tvs.fpr,
        "tvs_g": report.tvs.g_mean,
        "tas_mse": report.tas_mse,
        "tas_mae": report.tas_mae,
        "tvs_mse": report.tvs_mse,
        "tvs_mae": report.tvs_mae,
        "mean_margin_tas": report.mean_margin_tas,
        "mean_margin_tvs": report.mean_margin_tvs,
    }
    header = ",".join(cells)
    values = ",".join(
        "undefined" if v is None else (str(v) if isinstance(v, int) else f"{v:.10g}")
        for v in cells.values()
    )
    Path(path).write_text(header + "\n" + values + "\n")
