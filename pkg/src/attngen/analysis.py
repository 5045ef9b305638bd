"""Post-hoc saliency: gradient importance, occlusion curves and the ablation suite."""

from __future__ import annotations

import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from attngen import autodiff as ad
from attngen.dataio import STREAM_OCCLUSION, stack
from attngen.errors import AttnGenError, ParseError
from attngen.model import AttnGenConfig, AttnGenModel, init_model
from attngen.rng import Xoshiro256pp
from attngen.trainer import TrainConfig, TrainResult, evaluate, train

log = logging.getLogger(__name__)

CURVE_HEADER = "m,mean_acc,std,drop,order"
DEFAULT_SCHEDULE = (0, 1, 5, 10, 25, 50, 100, 150, 200)


@dataclass
class ImportanceProfile:
    values: np.ndarray  # (L,) L2 norms of d(target)/d(embedding_i)

    @property
    def ranking(self):
        """Positions by descending importance, ties by ascending position."""
        return np.argsort(-self.values, kind="stable")


def gradient_importance_batch(model: AttnGenModel, tokens, batch_size=128) -> np.ndarray:
    """(N, L) gradient-norm importance for every sequence in ``tokens``.

    The scalar differentiated for each sequence is the logit of its own
    predicted class. Eval mode keeps rows independent, so a batch-summed
    target yields per-row gradients. Parameter gradients are restored
    afterwards.
    """
    tokens = np.asarray(tokens)
    saved = {name: p.grad for name, p in model.params.items()}
    out = np.zeros(tokens.shape, dtype=np.float64)
    try:
        for start in range(0, len(tokens), batch_size):
            chunk = tokens[start:start + batch_size]
            emb = model.embed(chunk).retain_grad()
            logits = model.head(emb, mode="eval")
            pred = np.argmax(logits.data, axis=1)
            selector = np.zeros_like(logits.data)
            selector[np.arange(len(chunk)), pred] = 1
            (logits * selector).sum().backward()
            out[start:start + len(chunk)] = np.linalg.norm(emb.grad.astype(np.float64), axis=2)
    finally:
        for name, p in model.params.items():
            p.grad = saved[name]
    return out


def gradient_importance(model: AttnGenModel, tokens) -> ImportanceProfile:
    tokens = np.asarray(tokens).reshape(1, -1)
    return ImportanceProfile(gradient_importance_batch(model, tokens)[0])


def occlusion_order(importance, order, seed=42):
    """(N, L) position order in which each sequence gets occluded."""
    importance = np.asarray(importance)
    if order == "high":
        return np.argsort(-importance, axis=1, kind="stable")
    if order == "low":
        return np.argsort(importance, axis=1, kind="stable")
    if order == "random":
        n, length = importance.shape
        return np.stack([Xoshiro256pp.from_keys(seed, STREAM_OCCLUSION, i).permutation(length)
                         for i in range(n)])
    raise ValueError(f"order must be high, low or random, got {order!r}")


@dataclass
class CurveRow:
    m: int
    mean_acc: float  # percent
    std: float       # percent, sample std of the 0/100 indicators
    drop: float      # percentage points below the m=0 row


@dataclass
class PerturbationCurve:
    order: str
    rows: list = field(default_factory=list)

    def means(self):
        return np.array([r.mean_acc for r in self.rows])

    def row(self, m):
        for r in self.rows:
            if r.m == m:
                return r
        raise KeyError(m)

    def to_csv(self):
        buf = io.StringIO()
        buf.write(CURVE_HEADER + "\n")
        for r in self.rows:
            buf.write(f"{r.m},{r.mean_acc!r},{r.std!r},{r.drop!r},{self.order}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        lines = text.strip("\n").split("\n")
        if not lines or lines[0] != CURVE_HEADER:
            raise ParseError(f"missing '{CURVE_HEADER}' header", line=1)
        rows, order = [], None
        for lineno, line in enumerate(lines[1:], start=2):
            parts = line.split(",")
            if len(parts) != 5:
                raise ParseError("expected 5 fields", line=lineno)
            if order is not None and parts[4] != order:
                raise ParseError("mixed orders in one curve file", line=lineno)
            order = parts[4]
            rows.append(CurveRow(int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3])))
        return cls(order or "high", rows)


def perturbation_curve(model: AttnGenModel, tokens, labels, schedule=DEFAULT_SCHEDULE,
                       order="high", seed=42, importance=None) -> PerturbationCurve:
    """Accuracy as the top-m positions (per ``order``) are replaced by pad.

    Ranking is computed once per sequence on the unmasked input.
    """
    tokens = np.asarray(tokens)
    labels = np.asarray(labels)
    length = tokens.shape[1]
    schedule = [int(m) for m in schedule]
    bad = [m for m in schedule if not 0 <= m <= length]
    if bad:
        raise ValueError(f"schedule value {bad[0]} outside [0, {length}]")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be strictly increasing")
    if order in ("high", "low") and importance is None:
        importance = gradient_importance_batch(model, tokens)
    if importance is None:
        importance = np.zeros(tokens.shape)
    ranks = occlusion_order(importance, order, seed)
    curve = PerturbationCurve(order)
    base = None
    for m in schedule:
        masked = tokens.copy()
        if m:
            np.put_along_axis(masked, ranks[:, :m], 0, axis=1)
        res = evaluate(model, (masked, labels))
        mean = 100.0 * res.accuracy
        if base is None:
            base = mean if m == 0 else 100.0 * evaluate(model, (tokens, labels)).accuracy
        curve.rows.append(CurveRow(m, mean, 100.0 * res.indicator_std(ddof=1), base - mean))
    return curve


def top_k_in_span(importance, spans, k=8):
    """Mean fraction of each row's top-k positions inside its [start, end) span.

    Rows without a span (start < 0) are skipped.
    """
    fractions = []
    for values, (start, end) in zip(np.asarray(importance), spans):
        if start < 0:
            continue
        top = np.argsort(-values, kind="stable")[:k]
        fractions.append(np.mean((top >= start) & (top < end)))
    return float(np.mean(fractions)) if fractions else float("nan")


ABLATION_ARMS = (
    ("Full", "attention", True, True),
    ("RandomMask+KL", "random", True, True),
    ("AttentionNoKL", "attention", True, False),
    ("Baseline", "attention", False, False),
)


@dataclass
class AblationRecord:
    label: str
    alpha: float
    kl_weight: float
    mask_mode: str
    val_acc: float = float("nan")
    epochs: int = 0
    convergence_epoch: int = None
    error: str = None
    result: TrainResult = field(default=None, repr=False)


def ablation_configs(base: TrainConfig, alpha=0.10):
    """The four arm configurations sharing seed and schedule with ``base``."""
    kl = base.kl_weight if base.kl_weight > 0 else 0.1
    arms = []
    for label, mode, masked, with_kl in ABLATION_ARMS:
        cfg = replace(base, alpha=alpha if masked else 0.0, kl_weight=kl if with_kl else 0.0,
                      mask_mode=mode)
        arms.append((label, cfg))
    return arms


def run_arm(split, model_config: AttnGenConfig, cfg: TrainConfig) -> TrainResult:
    with ad.precision(cfg.precision):
        model = init_model(model_config, cfg.seed)
        return train(model, split, cfg)


def ablation_suite(split, model_config: AttnGenConfig = None, base: TrainConfig = None,
                   alpha=0.10, threads=None):
    """Train the four ablation arms and collect their best val accuracies.

    A failing arm is recorded with its error and the rest still run. With
    ``threads > 1`` (default: ``ATTNGEN_THREADS``) arms run in worker
    processes; results do not depend on the worker count.
    """
    model_config = model_config or AttnGenConfig()
    base = base or TrainConfig()
    threads = threads or int(os.environ.get("ATTNGEN_THREADS", "1"))
    arms = ablation_configs(base, alpha)
    records = [AblationRecord(label, cfg.alpha, cfg.kl_weight, cfg.mask_mode) for label, cfg in arms]

    if threads > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(arms))) as pool:
            futures = [pool.submit(run_arm, split, model_config, cfg) for _, cfg in arms]
            outcomes = []
            for fut in futures:
                try:
                    outcomes.append(fut.result())
                except AttnGenError as exc:
                    outcomes.append(exc)
    else:
        outcomes = []
        for _, cfg in arms:
            try:
                outcomes.append(run_arm(split, model_config, cfg))
            except AttnGenError as exc:
                outcomes.append(exc)

    for record, outcome in zip(records, outcomes):
        if isinstance(outcome, Exception):
            log.error("ablation arm %s failed: %s", record.label, outcome)
            record.error = str(outcome)
            continue
        record.result = outcome
        record.val_acc = outcome.best_val_acc
        record.epochs = outcome.epochs_run
        record.convergence_epoch = outcome.convergence_epoch()
    return records


def ablation_csv(records):
    buf = io.StringIO()
    buf.write("label,alpha,lambda,mask_mode,val_acc,epochs,convergence_epoch,error\n")
    for r in records:
        conv = "" if r.convergence_epoch is None else r.convergence_epoch
        err = "" if r.error is None else r.error.replace(",", ";").replace("\n", " ")
        buf.write(f"{r.label},{r.alpha!r},{r.kl_weight!r},{r.mask_mode},{r.val_acc!r},{r.epochs},{conv},{err}\n")
    return buf.getvalue()


def write_text(path, text):
    Path(path).write_text(text, encoding="utf-8", newline="\n")
