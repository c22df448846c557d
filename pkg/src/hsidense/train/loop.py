"""Class-weighted training of one fold and crop-averaged region decisions."""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .. import models, ops
from ..errors import ConfigurationError
from ..hsi import Label
from ..preprocess.patches import augment
from ..tensor import backward, no_grad
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

WEIGHTING_MODES = ("inverse", "none")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 300
    batch_size: int = 20
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weighting: str = "inverse"
    balanced_sampling: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigurationError("train.iterations must be >= 1", key="train.iterations")
        if self.batch_size < 1:
            raise ConfigurationError("train.batch must be >= 1", key="train.batch")
        if not self.lr > 0:
            raise ConfigurationError("train.lr must be > 0", key="train.lr")
        if self.weighting not in WEIGHTING_MODES:
            raise ConfigurationError(f"train.weighting must be one of {WEIGHTING_MODES}", key="train.weighting")


@dataclass
class TrainingTrace:
    losses: list = field(default_factory=list)
    class_counts: tuple = (0, 0)
    class_weights: tuple = (1.0, 1.0)
    validation_loss: float = None

    def to_dict(self):
        return {
            "losses": list(self.losses),
            "class_counts": list(self.class_counts),
            "class_weights": list(self.class_weights),
            "validation_loss": self.validation_loss,
        }


def class_weights(counts):
    """Inverse-frequency weights ``N / (2 * N_c)`` for (healthy, tumor) counts."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.shape != (2,):
        raise ConfigurationError("class counts must be (healthy, tumor)")
    if np.any(counts <= 0):
        missing = [Label(i).name.lower() for i in range(2) if counts[i] <= 0]
        raise ConfigurationError(f"class absent from training data: {', '.join(missing)}")
    return counts.sum() / (2.0 * counts)


class _BatchSampler:
    """Epoch-style shuffled sampling, or class-balanced draws with replacement."""

    def __init__(self, labels, batch_size, balanced, rng):
        self.labels = np.asarray(labels)
        self.batch_size = batch_size
        self.balanced = balanced
        self.rng = rng
        self.queue = np.zeros(0, dtype=np.int64)
        self.by_class = [np.flatnonzero(self.labels == c) for c in (0, 1)]

    def next(self):
        if self.balanced:
            half = self.batch_size // 2
            picks = [self.rng.choice(self.by_class[0], half), self.rng.choice(self.by_class[1], self.batch_size - half)]
            return np.concatenate(picks)
        while self.queue.size < self.batch_size:
            self.queue = np.concatenate([self.queue, self.rng.permutation(self.labels.size)])
        out, self.queue = self.queue[: self.batch_size], self.queue[self.batch_size:]
        return out


def batch_loss(model, crops, labels, weights, training=True, buffers=None):
    x = models.prepare_input(model.spec, crops)
    logits = models.forward(model, x, training=training, buffers=buffers)
    return ops.softmax_cross_entropy(logits, labels, weights)


def train_fold(sources, spec, cfg=TrainConfig(), validation=None):
    """Train a fresh model on augmented crops of ``sources`` (training-mode patches).

    Runs exactly ``cfg.iterations`` Adam steps and returns the final
    parameters with a per-step loss trace. ``validation`` (ordered patches)
    only contributes a recorded loss.
    """
    sources = list(sources)
    if not sources:
        raise ConfigurationError("empty training patch set")
    labels = np.array([int(p.label) for p in sources], dtype=np.int64)
    counts = (int(np.count_nonzero(labels == 0)), int(np.count_nonzero(labels == 1)))
    weights = class_weights(counts) if cfg.weighting == "inverse" else np.ones(2)
    if cfg.weighting == "none" and min(counts) == 0:
        raise ConfigurationError(f"class absent from training data: counts {counts}")
    rng = np.random.default_rng(cfg.seed)
    sampler = _BatchSampler(labels, cfg.batch_size, cfg.balanced_sampling, rng)
    model = models.build(spec)
    state = AdamState()
    trace = TrainingTrace(class_counts=counts, class_weights=tuple(float(w) for w in weights))
    for _ in range(cfg.iterations):
        idx = sampler.next()
        crops = np.stack([augment(sources[i].data, rng, spec.patch_size) for i in idx])
        loss = batch_loss(model, crops, labels[idx], weights)
        backward(loss)
        grads = {name: p.grad for name, p in model.params.items()}
        adam_step(model.params, grads, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        for p in model.params.values():
            p.zero_grad()
        trace.losses.append(loss.item())
    if validation:
        trace.validation_loss = validation_loss(model, validation, weights)
    return model, trace


def validation_loss(model, patches, weights, chunk=64):
    """Eval-mode weighted loss over ordered crops, computed in chunks."""
    total = []
    with no_grad():
        for i in range(0, len(patches), chunk):
            part = patches[i:i + chunk]
            labels = np.array([int(p.label) for p in part])
            loss = batch_loss(model, np.stack([p.data for p in part]), labels, weights, training=False)
            total.append(loss.item() * len(part))
    return math.fsum(total) / len(patches)


def crop_probabilities(model, patches):
    """Tumor probability of every crop, eval mode."""
    if not patches:
        return np.zeros(0)
    x = models.prepare_input(model.spec, np.stack([p.data for p in patches]))
    return models.predict_proba(model, x)[:, int(Label.TUMOR)]


def average_probability(probs):
    """Correctly rounded mean, so the result does not depend on crop order."""
    return math.fsum(float(p) for p in probs) / len(probs)


def classify_region(model, patches, threshold=0.5):
    """Mean tumor probability over a region's crops and the hard label.

    Returns ``None`` when no crop is available (region unevaluable).
    """
    if not patches:
        return None
    prob = average_probability(crop_probabilities(model, patches))
    return prob, Label.TUMOR if prob >= threshold else Label.HEALTHY
