"""Training loop, evaluation and metrics logging."""

from __future__ import annotations

import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from attngen import autodiff as ad
from attngen.checkpoint import ModelCheckpoint, load_into, snapshot
from attngen.dataio import (
    STREAM_DROPOUT,
    STREAM_RANDOM_MASK,
    DatasetSplit,
    make_batches,
    stack,
)
from attngen.errors import ConfigError, DataError, NumericalError
from attngen.model import AttnGenModel, attngen_loss
from attngen.rng import Xoshiro256pp

log = logging.getLogger(__name__)

METRICS_HEADER = "epoch,train_loss,train_ce,train_kl,train_acc,val_loss,val_acc,grad_norm,seconds"


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    weight_decay: float = 1e-4
    kl_weight: float = 0.1
    alpha: float = 0.1
    max_epochs: int = 50
    patience: int = 10
    clip_norm: float = 1.0
    seed: int = 42
    precision: str = "float32"
    mask_mode: str = "attention"
    log_wall_time: bool = False

    def resolved(self) -> "TrainConfig":
        """Validated copy; the KL weight is forced to 0 when nothing is masked."""
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be at least 1")
        if not 0 <= self.alpha <= 1:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.kl_weight < 0:
            raise ConfigError("kl_weight must be nonnegative")
        if self.mask_mode not in ("attention", "random"):
            raise ConfigError(f"mask_mode must be 'attention' or 'random', got {self.mask_mode!r}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.alpha == 0:
            return replace(self, kl_weight=0.0)
        return replace(self)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_ce: float
    train_kl: float
    train_acc: float
    val_loss: float
    val_acc: float
    grad_norm: float
    seconds: float

    def csv_row(self, wall_time=False):
        seconds = self.seconds if wall_time else 0.0
        values = [self.train_loss, self.train_ce, self.train_kl, self.train_acc,
                  self.val_loss, self.val_acc, self.grad_norm, seconds]
        return ",".join([str(self.epoch)] + [repr(float(v)) for v in values])


@dataclass
class EvalResult:
    accuracy: float
    correct: np.ndarray        # per-sequence 0/1 indicators
    probabilities: np.ndarray  # (N, classes)
    loss: float

    @property
    def mean_probabilities(self):
        return self.probabilities.mean(axis=0)

    def indicator_std(self, ddof=1):
        """Std of the 0/1 correctness indicators (sample std by default)."""
        if len(self.correct) <= ddof:
            return 0.0
        return float(np.std(self.correct.astype(np.float64), ddof=ddof))


@dataclass
class TrainResult:
    checkpoint: ModelCheckpoint
    history: list
    batch_losses: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    config: TrainConfig = None

    @property
    def best_val_acc(self):
        return self.checkpoint.best_val_acc

    @property
    def epochs_run(self):
        return len(self.history)

    def convergence_epoch(self, fraction=0.99):
        return convergence_epoch(self.history, fraction)


def predict(logits):
    """Argmax over classes; equal logits resolve to class 0."""
    return np.argmax(logits, axis=1)


def evaluate(model: AttnGenModel, sequences, batch_size=256) -> EvalResult:
    """Eval-mode accuracy, per-sequence indicators, probabilities and mean CE."""
    if isinstance(sequences, tuple):
        tokens, labels = sequences
    else:
        tokens, labels = stack(list(sequences))
    if len(tokens) == 0:
        raise DataError("evaluate() needs at least one sequence")
    logits = model.predict_logits(tokens, batch_size=batch_size).astype(np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    correct = (predict(logits) == labels).astype(np.int64)
    return EvalResult(
        accuracy=float(correct.mean()),
        correct=correct,
        probabilities=np.exp(logp),
        loss=float(-logp[np.arange(len(labels)), labels].mean()),
    )


def rising_streak(values):
    """Length of the run of strict increases ending at the last value."""
    streak = 0
    for prev, cur in zip(values[-2::-1], values[::-1]):
        if cur > prev:
            streak += 1
        else:
            break
    return streak


def convergence_epoch(history, fraction=0.99):
    """First epoch whose val accuracy reaches ``fraction`` of the best one."""
    if not history:
        return None
    best = max(m.val_acc for m in history)
    for m in history:
        if m.val_acc >= fraction * best:
            return m.epoch
    return None


def train(model: AttnGenModel, split: DatasetSplit, cfg: TrainConfig = None, sink=None,
          stability_window=3) -> TrainResult:
    """Mini-batch training with masking, KL consistency and early stopping.

    After every epoch the full validation set is scored; the best epoch
    (strictly higher val accuracy) is kept and restored into ``model`` at the
    end. ``sink`` receives each EpochMetrics as it is produced.
    """
    cfg = (cfg or TrainConfig()).resolved()
    if not split.train or not split.validation:
        raise DataError("training needs nonempty train and validation splits")
    params = model.parameters()
    dropout_rng = Xoshiro256pp.from_keys(cfg.seed, STREAM_DROPOUT)
    mask_rng = Xoshiro256pp.from_keys(cfg.seed, STREAM_RANDOM_MASK)

    history, batch_losses, warnings = [], [], []
    best, best_acc, stale = None, -math.inf, 0
    warned_streak = False
    for epoch in range(1, cfg.max_epochs + 1):
        started = time.perf_counter()
        sums = np.zeros(5)  # loss, ce, kl, correct, grad-norm
        seen = 0
        batches = make_batches(split.train, cfg.batch_size, cfg.seed, epoch)
        for b, (tokens, labels) in enumerate(batches, start=1):
            res = attngen_loss(model, tokens, labels, alpha=cfg.alpha, kl_weight=cfg.kl_weight,
                               mode="train", rng=dropout_rng, mask_mode=cfg.mask_mode,
                               mask_rng=mask_rng)
            loss = float(res.loss.item())
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite loss {loss} at epoch {epoch}, batch {b}")
            res.loss.backward()
            norm = ad.clip_grad_norm(params, cfg.clip_norm)
            ad.adam_step(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
            model.zero_grad()
            n = len(labels)
            batch_losses.append(loss)
            sums += [loss * n, res.ce * n, res.kl * n, (predict(res.logits) == labels).sum(), norm]
            seen += n
        val = evaluate(model, split.validation)
        metrics = EpochMetrics(
            epoch=epoch,
            train_loss=sums[0] / seen,
            train_ce=sums[1] / seen,
            train_kl=sums[2] / seen,
            train_acc=sums[3] / seen,
            val_loss=val.loss,
            val_acc=val.accuracy,
            grad_norm=sums[4] / len(batches),
            seconds=time.perf_counter() - started,
        )
        history.append(metrics)
        if sink is not None:
            sink(metrics)
        log.info("epoch %d loss %.4f val_acc %.4f", epoch, metrics.train_loss, metrics.val_acc)

        streak = rising_streak([m.val_loss for m in history])
        if streak >= stability_window and not warned_streak:
            msg = (f"instability: validation loss rose for {streak} consecutive epochs "
                   f"(epoch {epoch}, alpha={cfg.alpha})")
            log.warning(msg)
            warnings.append(msg)
            warned_streak = True
        elif streak == 0:
            warned_streak = False

        if val.accuracy > best_acc:
            best_acc, stale = val.accuracy, 0
            best = snapshot(model, {
                **{f"train.{k}": v for k, v in asdict(cfg).items()},
                "epoch": epoch,
                "best_val_acc": float(val.accuracy),
                "rng.dropout": ",".join(f"{w:016x}" for w in dropout_rng.get_state()),
                "rng.mask": ",".join(f"{w:016x}" for w in mask_rng.get_state()),
            })
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    load_into(model, best)
    return TrainResult(best, history, batch_losses, warnings, cfg)


class MetricsWriter:
    """Metrics sink that renders the CSV log; rows are flushed by ``write``."""

    def __init__(self, wall_time=False):
        self.wall_time = wall_time
        self.rows = []

    def __call__(self, metrics: EpochMetrics):
        self.rows.append(metrics)

    def render(self):
        buf = io.StringIO()
        buf.write(METRICS_HEADER + "\n")
        for m in self.rows:
            buf.write(m.csv_row(self.wall_time) + "\n")
        return buf.getvalue()

    def write(self, path):
        Path(path).write_text(self.render(), encoding="utf-8", newline="\n")
