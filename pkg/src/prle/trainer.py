"""Training with stochastic primary-region masking.

Per epoch every example is visited once, in dataset order. For each example
the generator first draws u ~ U[0, 1); if u < p a mask ratio alpha is drawn
uniformly from (lo, hi] and the example is replaced by its masked counterpart
(weighted by gamma in the loss), otherwise the original is used.
"""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import detector
from .detector import DetectorParams
from .exploitation import mask_image, rank_pixels, select_top_alpha
from .fusion import to_binary_mask


@dataclass(frozen=True)
class TrainConfig:
    p: float = 0.5
    gamma: float = 1.0
    alpha_range: tuple = (0.0, 1.0)
    learning_rate: float = 1.0
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    prle_enabled: bool = True
    channels: int = 4
    # train only the final linear layer
    freeze_conv: bool = False

    def validate(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        lo, hi = self.alpha_range
        if not 0.0 <= lo < hi <= 1.0:
            raise ValueError(f"alpha_range must be a sub-interval of (0, 1], got {self.alpha_range}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0 or self.batch_size < 1 or self.channels < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and channels >= 1 required")


@dataclass(frozen=True)
class Decision:
    masked: bool
    alpha: float = None

    @property
    def q(self):
        return 0 if self.masked else 1


ORIGINAL = Decision(False)


@dataclass
class EpochStats:
    epoch: int
    risk: float
    frac_augmented: float
    train_acc: float
    eval_metrics: dict = field(default_factory=dict)  # name -> (acc, auc)

    @property
    def eval_acc(self):
        return next(iter(self.eval_metrics.values()), (math.nan, math.nan))[0]

    @property
    def eval_auc(self):
        return next(iter(self.eval_metrics.values()), (math.nan, math.nan))[1]


def sample_augmentation(rng, p, alpha_range=(0.0, 1.0)):
    if rng.random() < p:
        lo, hi = alpha_range
        # 1 - U[0, 1) lies in (0, 1], so alpha lies in (lo, hi]
        alpha = lo + (hi - lo) * (1.0 - rng.random())
        return Decision(True, alpha)
    return ORIGINAL


def empirical_risk(params, dataset):
    """Mean binary cross-entropy over the dataset."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    scores = detector.predict(params, dataset.images)
    return float(np.mean(detector.bce_loss(scores, dataset.labels)))


def augmented_input(image, ranked, mask, decision):
    if not decision.masked:
        return image
    return mask_image(image, select_top_alpha(ranked, decision.alpha), mask)


def regularized_risk_term(params, example, decision, gamma, fused=None):
    """Per-sample objective: plain loss if original, gamma * loss on the masked image otherwise."""
    if not decision.masked:
        score = detector.forward(params, example.image).score
        return float(detector.bce_loss(score, example.label))
    if fused is None:
        raise ValueError("a masked decision needs the example's fused map")
    masked = augmented_input(example.image, rank_pixels(fused), to_binary_mask(fused), decision)
    score = detector.forward(params, masked).score
    return float(gamma * detector.bce_loss(score, example.label))


def roc_auc(scores, labels):
    """Mann-Whitney AUC; tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def evaluate(params, dataset):
    """(accuracy at 0.5, AUC); AUC is None for a single-class dataset."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    scores = detector.predict(params, dataset.images)
    acc = float(np.mean((scores >= 0.5) == (dataset.labels == 1)))
    try:
        auc = roc_auc(scores, dataset.labels)
    except ValueError:
        auc = None
    return acc, auc


class _Prepared:
    """Rankings and binary masks of the frozen fused maps, computed once."""

    def __init__(self, fused_maps):
        self.ranked = [rank_pixels(f) for f in fused_maps]
        self.masks = [to_binary_mask(f) for f in fused_maps]


def train_epoch(params, dataset, fused_maps, cfg, rng, epoch=0, eval_sets=None, _prepared=None):
    """One pass of mini-batch gradient descent; returns (new params, EpochStats)."""
    p = cfg.p if cfg.prle_enabled else 0.0
    n = len(dataset)
    if p > 0:
        if fused_maps is None or len(fused_maps) != n:
            raise ValueError("one fused map per training example is required")
        prep = _prepared or _Prepared(fused_maps)

    images = dataset.images
    inputs = images.copy() if p > 0 else images
    weights = np.ones(n)
    n_aug = 0
    if p > 0:
        for i in range(n):
            d = sample_augmentation(rng, p, cfg.alpha_range)
            if d.masked:
                inputs[i] = augmented_input(images[i], prep.ranked[i], prep.masks[i], d)
                weights[i] = cfg.gamma
                n_aug += 1

    params = params.copy()
    risk_sum = 0.0
    n_correct = 0
    for start in range(0, n, cfg.batch_size):
        sl = slice(start, start + cfg.batch_size)
        labels = dataset.labels[sl]
        loss, grads, scores = detector.batch_gradients(params, inputs[sl], labels, weights[sl])
        risk_sum += loss * len(labels)
        n_correct += int(np.sum((scores >= 0.5) == (labels == 1)))
        if not cfg.freeze_conv:
            params.conv_weights -= cfg.learning_rate * grads.conv_weights
            params.conv_bias -= cfg.learning_rate * grads.conv_bias
        params.linear_weights -= cfg.learning_rate * grads.linear_weights
        params.linear_bias -= cfg.learning_rate * grads.linear_bias

    # running accuracy on the inputs actually seen, before each batch update
    train_acc = n_correct / n
    metrics = {name: evaluate(params, ds) for name, ds in (eval_sets or {}).items()}
    stats = EpochStats(epoch, risk_sum / n, n_aug / n, train_acc, metrics)
    return params, stats


def fit(cfg, dataset, eval_sets=None, fused_maps=None, init=None):
    """Train a detector from scratch for cfg.epochs epochs.

    ``fused_maps`` are the frozen static maps (one per example); they are
    required when PRLE is enabled with p > 0.
    """
    cfg.validate()
    params = init.copy() if init is not None else DetectorParams.init(
        cfg.channels, cfg.seed, dataset.images.shape[-1]
    )
    rng = np.random.default_rng(cfg.seed)
    prepared = None
    if cfg.prle_enabled and cfg.p > 0:
        if fused_maps is None or len(fused_maps) != len(dataset):
            raise ValueError("one fused map per training example is required")
        prepared = _Prepared(fused_maps)
    history = []
    for epoch in range(cfg.epochs):
        params, stats = train_epoch(
            params, dataset, fused_maps, cfg, rng, epoch, eval_sets, _prepared=prepared
        )
        history.append(stats)
    return params, history


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return repr(float(x))


def stats_to_csv(history):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "risk", "frac_augmented", "train_acc", "eval_acc", "eval_auc"])
    for s in history:
        writer.writerow(
            [s.epoch, _fmt(s.risk), _fmt(s.frac_augmented), _fmt(s.train_acc), _fmt(s.eval_acc), _fmt(s.eval_auc)]
        )
    return buf.getvalue()
