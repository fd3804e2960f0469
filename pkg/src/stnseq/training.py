"""Sequence loss, the per-digit error metric, and the training loop."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_model
from .dataset import SequenceDataset
from .layers import softmax_xent
from .models import SequenceModel, predict
from .optim import RMSprop

DIVERGENCE_FACTOR = 10.0
DIVERGENCE_PATIENCE = 3


def sequence_loss(logits, labels):
    """Cross-entropy summed over sequence positions, averaged over the batch.

    logits is [T, N, K]; labels is [N, T]. Returns (loss, grad_logits).
    """
    t_steps, n, _ = logits.shape
    if labels.shape != (n, t_steps):
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    total = 0.0
    grads = np.empty_like(logits)
    for t in range(t_steps):
        loss_t, grads[t] = softmax_xent(logits[t], labels[:, t])
        total += loss_t
    return total, grads


def per_digit_error(predictions, labels) -> float:
    """Fraction of sequence positions whose predicted digit is wrong.

    predictions is [T, N]; labels is [N, T].
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.T.shape:
        raise ValueError(f"predictions {predictions.shape} vs labels {labels.shape}")
    return float(np.mean(predictions != labels.T))


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_error: float
    seconds: float


@dataclass
class TrainReport:
    config: dict
    seed: int
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1
    best_val_error: float = float("inf")
    stopped_reason: str = ""

    def deterministic_fields(self):
        """Everything except wall time, for reproducibility comparisons."""
        return {
            "config": self.config,
            "seed": self.seed,
            "epochs": [(e.epoch, e.train_loss, e.val_error) for e in self.epochs],
            "best_epoch": self.best_epoch,
            "best_val_error": self.best_val_error,
            "stopped_reason": self.stopped_reason,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "train_loss", "val_error", "seconds"])
            for e in self.epochs:
                w.writerow([e.epoch, f"{e.train_loss:.10g}", f"{e.val_error:.10g}", f"{e.seconds:.3f}"])


class TrainingDiverged(RuntimeError):
    def __init__(self, report: TrainReport):
        super().__init__(
            f"training loss exceeded {DIVERGENCE_FACTOR}x its initial value for "
            f"{DIVERGENCE_PATIENCE} consecutive epochs"
        )
        self.report = report


@dataclass
class TrainSettings:
    lr: float = 1e-3
    rho: float = 0.9
    eps: float = 1e-6
    clip_norm: float | None = 10.0
    batch_size: int = 256
    max_epochs: int = 100
    patience: int = 10
    shuffle_seed: int = 0

    def to_dict(self):
        return dict(self.__dict__)


def evaluate(model: SequenceModel, data: SequenceDataset, batch_size: int = 256):
    """Per-digit error plus one confusion matrix per sequence position."""
    t_steps = model.config.seq_len
    confusions = np.zeros((t_steps, 10, 10), dtype=np.int64)
    wrong = 0
    total = 0
    for x, y in data.batches(batch_size, shuffle_seed=None):
        out = model.forward(x, train=False)
        pred = predict(out.logits)  # [T, n]
        for t in range(t_steps):
            np.add.at(confusions[t], (y[:, t], pred[t]), 1)
        wrong += int((pred != y.T).sum())
        total += pred.size
    return wrong / total, confusions


def train(
    model: SequenceModel,
    train_data: SequenceDataset,
    val_data: SequenceDataset,
    settings: TrainSettings,
    checkpoint_path=None,
    log=None,
) -> TrainReport:
    """Epochs of seeded shuffled batches with best-checkpoint selection.

    Keeps the checkpoint with the lowest validation per-digit error, stops
    after ``patience`` epochs without improvement, and aborts (with the partial
    report attached) if the loss stays above 10x its initial value for 3
    consecutive epochs.
    """
    params = model.params()
    opt = RMSprop(
        params, lr=settings.lr, rho=settings.rho, eps=settings.eps, clip_norm=settings.clip_norm
    )
    report = TrainReport(config=settings.to_dict(), seed=settings.shuffle_seed)
    initial_loss = None
    diverged_streak = 0
    since_best = 0

    for epoch in range(1, settings.max_epochs + 1):
        t0 = time.perf_counter()
        losses = []
        for x, y in train_data.batches(
            settings.batch_size, shuffle_seed=settings.shuffle_seed * 100003 + epoch
        ):
            out = model.forward(x, train=True)
            loss, grad_logits = sequence_loss(out.logits, y)
            losses.append(loss)
            model.zero_grads()
            model.backward(grad_logits)
            opt.step(params, model.grads())
        train_loss = float(np.mean(losses))
        val_error, _ = evaluate(model, val_data, settings.batch_size)
        seconds = time.perf_counter() - t0
        report.epochs.append(EpochStats(epoch, train_loss, val_error, seconds))
        if log:
            log(f"epoch {epoch:3d}  train_loss {train_loss:.4f}  val_error {val_error:.4f}  {seconds:.1f}s")

        if initial_loss is None:
            initial_loss = train_loss
        if train_loss > DIVERGENCE_FACTOR * initial_loss:
            diverged_streak += 1
            if diverged_streak >= DIVERGENCE_PATIENCE:
                report.stopped_reason = "diverged"
                raise TrainingDiverged(report)
        else:
            diverged_streak = 0

        if val_error < report.best_val_error:
            report.best_val_error = val_error
            report.best_epoch = epoch
            since_best = 0
            if checkpoint_path is not None:
                save_model(checkpoint_path, model)
        else:
            since_best += 1
            if since_best >= settings.patience:
                report.stopped_reason = "early_stop"
                return report
    report.stopped_reason = report.stopped_reason or "max_epochs"
    return report
