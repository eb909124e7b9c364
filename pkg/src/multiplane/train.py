"""SGD training loop, metrics, and cross-validation orchestration."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .data import Volume, augment, make_folds
from .losses import LossConfig, ce_loss, lambda_effective, slc_loss, total_loss
from .model import ModelConfig, ModelParams, init_model, model_forward


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 3
    lr_initial: float = 0.005
    lr_decay: float = 0.5
    lr_decay_every: int = 20
    momentum: float = 0.0
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    seed: int = 0
    folds: int = 5
    use_augment: bool = True
    augment_flip: bool = True
    select_best: bool = False  # per-epoch validation for checkpoint selection

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr_initial <= 0 or self.lr_decay <= 0:
            raise ValueError("learning rates must be positive")


@dataclass
class EpochLog:
    epoch: int
    loss: float
    lambda_eff: float
    lr: float
    train_acc: float


@dataclass
class Metrics:
    tp: int
    tn: int
    fp: int
    fn: int
    acc: Optional[float]
    sen: Optional[float]
    spe: Optional[float]
    f1: Optional[float]
    auc: Optional[float]


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """lr_initial halved (by lr_decay) every lr_decay_every epochs, 1-based."""
    if epoch < 1:
        raise ValueError("epoch is 1-based")
    return cfg.lr_initial * cfg.lr_decay ** ((epoch - 1) // cfg.lr_decay_every)


def auc(scores: Sequence[float], labels: Sequence[int]) -> Optional[float]:
    """Rank-statistic AUC (Mann-Whitney, ties credited 0.5); None if one class."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j < len(scores) and sorted_scores[j] == sorted_scores[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j - 1) + 1.0  # average 1-based rank
        i = j
    rank_sum_pos = ranks[labels == 1].sum()
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def compute_metrics(scores: Sequence[float], labels: Sequence[int]) -> Metrics:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    preds = (scores > 0.5).astype(int)
    tp = int(((preds == 1) & (labels == 1)).sum())
    tn = int(((preds == 0) & (labels == 0)).sum())
    fp = int(((preds == 1) & (labels == 0)).sum())
    fn = int(((preds == 0) & (labels == 1)).sum())

    def ratio(num, den):
        return num / den if den else None

    return Metrics(
        tp,
        tn,
        fp,
        fn,
        acc=ratio(tp + tn, len(labels)),
        sen=ratio(tp, tp + fn),
        spe=ratio(tn, tn + fp),
        f1=ratio(2 * tp, 2 * tp + fp + fn),
        auc=auc(scores, labels),
    )


def predict_scores(params: ModelParams, volumes: Sequence[Volume]) -> np.ndarray:
    """Class-1 probabilities per subject, computed without the tape."""
    out = np.empty(len(volumes))
    with T.no_grad():
        for i, vol in enumerate(volumes):
            logits = model_forward(vol.voxels, params).global_logits.data
            shifted = logits - logits.max()
            e = np.exp(shifted)
            out[i] = e[1] / e.sum()
    return out


def evaluate(params: ModelParams, volumes: Sequence[Volume]) -> Metrics:
    scores = predict_scores(params, volumes)
    return compute_metrics(scores, [v.label for v in volumes])


def _clone_params(params: ModelParams) -> ModelParams:
    clone = copy.deepcopy(params)
    for p in clone.parameters():
        p.zero_grad()
    return clone


def train_fold(
    train_set: Sequence[Volume],
    cfg: TrainConfig,
    init: Optional[ModelParams] = None,
    init_seed: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    val_set: Optional[Sequence[Volume]] = None,
    stop_when: Optional[Callable[[EpochLog], bool]] = None,
) -> tuple[ModelParams, list[EpochLog]]:
    """Train one model by plain SGD with the step-decayed schedule.

    Deterministic given cfg.seed (or the supplied rng). When
    cfg.select_best and a val_set are given, the returned parameters are
    the epoch snapshot with the highest validation accuracy (ties broken
    by lower training loss); otherwise the final-epoch parameters.
    `stop_when` may end training early once its epoch-log predicate holds.
    """
    if not train_set:
        raise ValueError("empty training set")
    rng = rng or np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7EA1]))
    if init is not None:
        params = _clone_params(init)
    else:
        params = init_model(cfg.model, cfg.seed if init_seed is None else init_seed)
    tensors = params.parameters()
    velocity = [np.zeros_like(p.data) for p in tensors] if cfg.momentum else None

    logs: list[EpochLog] = []
    best: tuple[float, float, ModelParams] | None = None
    for epoch in range(1, cfg.epochs + 1):
        lr = lr_at(epoch, cfg)
        lam = lambda_effective(epoch, cfg.loss)
        order = rng.permutation(len(train_set))
        epoch_loss = 0.0
        correct = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_set[i] for i in order[start : start + cfg.batch_size]]
            for p in tensors:
                p.zero_grad()
            # The batch loss is a mean of per-subject terms, so each subject's
            # graph is backpropagated on its own (scaled by 1/B) and freed
            # before the next forward; a joint graph over the batch would hold
            # several volumes' worth of convolution buffers at once.
            loss_val = 0.0
            for vol in batch:
                v = augment(vol, rng, flip=cfg.augment_flip) if cfg.use_augment else vol
                try:
                    out = model_forward(v.voxels, params)
                except ValueError as e:
                    # overflowed activations trip the spline domain check
                    # before the loss itself goes non-finite
                    if "non-finite" in str(e):
                        raise DivergenceError(epoch) from None
                    raise
                p1 = T.slice_channels(T.softmax(out.global_logits, axis=0), 1, 2)
                ce = ce_loss(p1, [vol.label])
                slc = slc_loss(out.patch_weights, out.patch_logits, vol.label)
                loss = T.mul(total_loss(ce, slc, epoch, cfg.loss), 1.0 / len(batch))
                if (out.global_logits.data[1] > out.global_logits.data[0]) == bool(vol.label):
                    correct += 1
                T.backward(loss)
                loss_val += loss.item()
            if not np.isfinite(loss_val):
                raise DivergenceError(epoch)
            if velocity is None:
                for p in tensors:
                    if p.grad is not None:
                        p.data -= lr * p.grad
            else:
                for p, v in zip(tensors, velocity):
                    if p.grad is not None:
                        v *= cfg.momentum
                        v += p.grad
                        p.data -= lr * v
            epoch_loss += loss_val * len(batch)
        epoch_loss /= len(train_set)
        rec = EpochLog(epoch, epoch_loss, lam, lr, correct / len(train_set))
        logs.append(rec)
        if cfg.select_best and val_set:
            acc = evaluate(params, val_set).acc or 0.0
            if best is None or (acc, -epoch_loss) > (best[0], -best[1]):
                best = (acc, epoch_loss, _clone_params(params))
        if stop_when is not None and stop_when(rec):
            break
    if best is not None:
        params = best[2]
    return params, logs


def format_epoch_log(logs: Sequence[EpochLog]) -> str:
    return "".join(f"{r.epoch}\t{r.loss:.10g}\t{r.lambda_eff:.10g}\t{r.lr:.10g}\n" for r in logs)


def format_metrics_report(rows: list[tuple[str, Metrics]]) -> str:
    def fmt(x):
        return "NA" if x is None else f"{x:.6f}"

    lines = ["fold\tacc\tsen\tspe\tf1\tauc"]
    for name, m in rows:
        lines.append(
            f"{name}\t{fmt(m.acc)}\t{fmt(m.sen)}\t{fmt(m.spe)}\t{fmt(m.f1)}\t{fmt(m.auc)}"
        )
    return "\n".join(lines) + "\n"


def mean_metrics(per_fold: Sequence[Metrics]) -> Metrics:
    def mean_of(vals):
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    return Metrics(
        tp=sum(m.tp for m in per_fold),
        tn=sum(m.tn for m in per_fold),
        fp=sum(m.fp for m in per_fold),
        fn=sum(m.fn for m in per_fold),
        acc=mean_of([m.acc for m in per_fold]),
        sen=mean_of([m.sen for m in per_fold]),
        spe=mean_of([m.spe for m in per_fold]),
        f1=mean_of([m.f1 for m in per_fold]),
        auc=mean_of([m.auc for m in per_fold]),
    )


@dataclass
class CVResult:
    per_fold: list[Metrics]
    mean: Metrics
    fold_params: list[ModelParams]
    fold_logs: list[list[EpochLog]]


def cross_validate(
    dataset: Sequence[Volume],
    cfg: TrainConfig,
    transfer_from: Optional[Sequence[ModelParams]] = None,
) -> CVResult:
    """k-fold CV; with transfer candidates, fine-tunes each and keeps the best.

    Train/test subject sets are asserted disjoint for every fold. Each
    fold trains on an independent RNG stream derived from the master seed.
    """
    if transfer_from:
        results = [_cv_once(dataset, cfg, init) for init in transfer_from]
        return max(results, key=lambda r: r.mean.acc or 0.0)
    return _cv_once(dataset, cfg, None)


def _cv_once(dataset, cfg: TrainConfig, init: Optional[ModelParams]) -> CVResult:
    plan = make_folds(list(dataset), k=cfg.folds, seed=cfg.seed)
    by_id = {v.subject_id: v for v in dataset}
    per_fold: list[Metrics] = []
    fold_params: list[ModelParams] = []
    fold_logs: list[list[EpochLog]] = []
    for fold in range(plan.k):
        test_ids = set(plan.fold_ids(fold))
        train_ids = set(by_id) - test_ids
        assert not (train_ids & test_ids), "fold leakage: train/test sets overlap"
        train_set = [by_id[s] for s in sorted(train_ids)]
        test_set = [by_id[s] for s in sorted(test_ids)]
        seq = np.random.SeedSequence([cfg.seed, 0x7EA1, fold])
        rng = np.random.default_rng(seq)
        init_seed = int(np.random.SeedSequence([cfg.seed, 0x1417, fold]).generate_state(1)[0])
        params, logs = train_fold(
            train_set,
            cfg,
            init=init,
            init_seed=init_seed,
            rng=rng,
            val_set=test_set if cfg.select_best else None,
        )
        per_fold.append(evaluate(params, test_set))
        fold_params.append(params)
        fold_logs.append(logs)
    return CVResult(per_fold, mean_metrics(per_fold), fold_params, fold_logs)
