"""Loss, hard-example filtering, learning-rate schedule, SGD and the
training loop.

The schedule is the poly decay lr_i * (1 - iter/max_iter)^power with an
exponential warmup lr_max * factor^(1 - iter/warmup) for the first
iterations; lr_max is pinned to the poly value at the warmup boundary so
the curve is continuous there.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import IGNORE_LABEL, SegBatch, stack_batch
from .tensor import Tensor, backward, from_op

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Non-finite loss or gradient; the step was aborted."""


# ---------------------------------------------------------------------------
# learning-rate schedule


@dataclass
class LRSchedule:
    lr_i: float = 2.5e-2
    power: float = 0.9
    max_iter: int = 1000
    warmup_iters: int = 0
    warmup_factor: float = 0.1
    lr_max: float = field(init=False)

    def __post_init__(self):
        if not (0.0 < self.warmup_factor <= 1.0):
            raise ValueError(f"warmup_factor must be in (0, 1], got {self.warmup_factor}")
        if not (0 <= self.warmup_iters < self.max_iter):
            raise ValueError(f"need 0 <= warmup_iters < max_iter, got {self.warmup_iters}/{self.max_iter}")
        # continuity: the warmup tops out exactly at the poly value
        self.lr_max = self.lr_i * (1.0 - self.warmup_iters / self.max_iter) ** self.power


def lr_at(iteration, schedule):
    """Learning rate at an iteration; past max_iter the rate clamps to 0."""
    if iteration > schedule.max_iter:
        return 0.0
    if iteration < schedule.warmup_iters:
        return schedule.lr_max * schedule.warmup_factor ** (1.0 - iteration / schedule.warmup_iters)
    return schedule.lr_i * (1.0 - iteration / schedule.max_iter) ** schedule.power


# ---------------------------------------------------------------------------
# loss


def per_pixel_ce(logits_data, labels, ignore_label=IGNORE_LABEL):
    """Per-pixel cross-entropy and true-class probability from raw logits.

    Returns (loss_map, true_prob, valid) as N x H x W arrays; entries at
    ignored pixels are zero loss / probability one / invalid.
    """
    n, k, h, w = logits_data.shape
    valid = labels != ignore_label
    safe_labels = np.where(valid, labels, 0)
    m = logits_data.max(axis=1)
    lse = np.log(np.exp(logits_data - m[:, None]).sum(axis=1)) + m
    true_logit = np.take_along_axis(logits_data, safe_labels[:, None], axis=1)[:, 0]
    loss_map = np.where(valid, lse - true_logit, 0.0)
    true_prob = np.where(valid, np.exp(-loss_map), 1.0)
    return loss_map, true_prob, valid


def softmax_cross_entropy(logits, labels, ignore_label=IGNORE_LABEL, keep_mask=None):
    """Mean cross-entropy over scored pixels, differentiable w.r.t. logits.

    ``keep_mask`` (N x H x W bool) restricts scoring further, e.g. to the
    hard pixels chosen by OHEM. Ignored pixels contribute zero loss and
    exactly zero gradient. If nothing is scored the loss is 0 with zero
    gradient (logged as a warning).
    """
    if labels.shape != (logits.data.shape[0],) + logits.data.shape[2:]:
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.data.shape}")
    loss_map, true_prob, valid = per_pixel_ce(logits.data, labels, ignore_label)
    scored = valid if keep_mask is None else (valid & keep_mask)
    count = int(scored.sum())
    if count == 0:
        log.warning("softmax_cross_entropy: every pixel ignored; loss defined as 0")
        out = np.asarray(0.0, dtype=logits.data.dtype)

        def backward_zero(g):
            return (np.zeros_like(logits.data),)

        return from_op(out, (logits,), backward_zero, "softmax_cross_entropy"), loss_map, true_prob

    out = np.asarray(loss_map[scored].sum() / count, dtype=logits.data.dtype)
    logits_data = logits.data
    safe_labels = np.where(valid, labels, 0)

    def backward_fn(g):
        m = logits_data.max(axis=1, keepdims=True)
        e = np.exp(logits_data - m)
        soft = e / e.sum(axis=1, keepdims=True)
        onehot_idx = safe_labels[:, None]
        np.put_along_axis(soft, onehot_idx, np.take_along_axis(soft, onehot_idx, axis=1) - 1.0, axis=1)
        soft *= (scored[:, None] / count)
        return (soft * g,)

    return from_op(out, (logits,), backward_fn, "softmax_cross_entropy"), loss_map, true_prob


def ohem_filter(per_pixel_loss, probabilities, threshold, min_kept, valid=None):
    """Keep pixels whose true-class probability is below the threshold; if
    fewer than ``min_kept`` qualify, keep the ``min_kept`` highest-loss valid
    pixels instead (ties broken by flat index)."""
    if min_kept < 1:
        raise ValueError(f"min_kept must be >= 1, got {min_kept}")
    if valid is None:
        valid = np.ones(per_pixel_loss.shape, dtype=bool)
    hard = valid & (probabilities < threshold)
    if int(hard.sum()) >= min_kept:
        return hard
    k = min(min_kept, int(valid.sum()))
    if k == 0:
        return np.zeros_like(valid)
    flat = np.where(valid, per_pixel_loss, -np.inf).ravel()
    order = np.argsort(-flat, kind="stable")[:k]
    mask = np.zeros(flat.shape, dtype=bool)
    mask[order] = True
    return mask.reshape(per_pixel_loss.shape)


# ---------------------------------------------------------------------------
# optimizer


class SGD:
    """Momentum SGD: v <- momentum*v + grad + weight_decay*param, then
    param <- param - lr*v. Decay skips biases and BN beta."""

    def __init__(self, model, momentum=0.9, weight_decay=1e-4):
        self.model = model
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {}

    @staticmethod
    def _decays(name):
        return not (name.endswith(".bias") or name.endswith(".beta"))

    def step(self, lr):
        params = [(name, p) for name, p in self.model.named_parameters() if p.grad is not None]
        # validate all gradients before touching anything, so an aborted
        # step leaves the parameters intact
        for name, p in params:
            if not np.all(np.isfinite(p.grad)):
                raise TrainingDiverged(f"non-finite gradient for parameter {name!r}")
        for name, p in params:
            g = p.grad
            if self.weight_decay and self._decays(name):
                g = g + self.weight_decay * p.data
            v = self.velocity.get(name)
            v = g if v is None else self.momentum * v + g
            self.velocity[name] = v
            p.data = p.data - lr * v


# ---------------------------------------------------------------------------
# augmentation


@dataclass
class TrainConfig:
    batch_size: int = 4
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_i: float = 2.5e-2
    power: float = 0.9
    warmup_factor: float = 0.1
    warmup_iters: int = 0
    max_iter: int = 500
    ohem_enabled: bool = True
    ohem_threshold: float = 0.7
    ohem_min_kept_fraction: float = 1.0 / 16.0
    flip_p: float = 0.5
    scales: tuple = (0.5, 1.0, 1.25, 1.5, 1.75)
    crop_h: int = 64
    crop_w: int = 64
    color_jitter: bool = True
    seed: int = 0

    def schedule(self):
        return LRSchedule(lr_i=self.lr_i, power=self.power, max_iter=self.max_iter,
                          warmup_iters=self.warmup_iters, warmup_factor=self.warmup_factor)


def hflip_sample(image, label):
    return np.ascontiguousarray(image[:, :, ::-1]), np.ascontiguousarray(label[:, ::-1])


def _nearest_axis(in_size, out_size):
    idx = np.floor((np.arange(out_size) + 0.5) * (in_size / out_size)).astype(np.int64)
    return np.clip(idx, 0, in_size - 1)


def _scale_sample(image, label, s):
    _, h, w = image.shape
    nh, nw = max(1, int(round(h * s))), max(1, int(round(w * s)))
    if (nh, nw) == (h, w):
        return image, label
    img = kernels.bilinear_forward(image[None].astype(np.float32), nh, nw)[0]
    yi = _nearest_axis(h, nh)
    xi = _nearest_axis(w, nw)
    lab = label[yi][:, xi]
    return img, lab


def _crop_or_pad(image, label, crop_h, crop_w, rng):
    _, h, w = image.shape
    if h < crop_h or w < crop_w:
        ph, pw = max(h, crop_h), max(w, crop_w)
        img = np.zeros((image.shape[0], ph, pw), dtype=image.dtype)
        lab = np.full((ph, pw), IGNORE_LABEL, dtype=label.dtype)
        img[:, :h, :w] = image
        lab[:h, :w] = label
        image, label, h, w = img, lab, ph, pw
    oy = int(rng.integers(0, h - crop_h + 1))
    ox = int(rng.integers(0, w - crop_w + 1))
    return (np.ascontiguousarray(image[:, oy:oy + crop_h, ox:ox + crop_w]),
            np.ascontiguousarray(label[oy:oy + crop_h, ox:ox + crop_w]))


def _jitter(image, rng):
    brightness = rng.uniform(0.75, 1.25)
    contrast = rng.uniform(0.75, 1.25)
    img = image * brightness
    mean = img.mean()
    return np.clip((img - mean) * contrast + mean, 0.0, 1.0).astype(np.float32)


def augment(batch, config, rng):
    """Random scale, crop (padding images with 0 and labels with the ignore
    value), horizontal flip, then color jitter on the image only. Geometric
    transforms apply identically to image and label; label resampling is
    nearest-neighbor so no class ids are fabricated."""
    images, labels = [], []
    for i in range(batch.images.shape[0]):
        img, lab = batch.images[i], batch.labels[i]
        s = float(config.scales[int(rng.integers(0, len(config.scales)))])
        img, lab = _scale_sample(img, lab, s)
        img, lab = _crop_or_pad(img, lab, config.crop_h, config.crop_w, rng)
        if rng.random() < config.flip_p:
            img, lab = hflip_sample(img, lab)
        if config.color_jitter:
            img = _jitter(img, rng)
        images.append(img)
        labels.append(lab)
    return SegBatch(images=np.stack(images).astype(np.float32),
                    labels=np.stack(labels).astype(np.int32))


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainRecord:
    iteration: int
    lr: float
    loss: float


def format_log_row(record):
    return f"{record.iteration},{record.lr:.12g},{record.loss:.12g}"


def train_loop(model, dataset, config, log_file=None, on_divergence_save=None):
    """Run the SGD loop over a list of SegItems; returns the per-iteration
    records. ``log_file`` (a text handle) receives `iter,lr,loss` CSV rows.
    On a non-finite loss or gradient the step is aborted, the still-intact
    parameters are handed to ``on_divergence_save`` and TrainingDiverged is
    raised."""
    if not dataset:
        raise ValueError("train_loop needs a non-empty dataset")
    schedule = config.schedule()
    opt = SGD(model, momentum=config.momentum, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    records = []
    if log_file is not None:
        log_file.write("iter,lr,loss\n")

    for it in range(config.max_iter):
        idx = rng.integers(0, len(dataset), size=config.batch_size)
        batch = stack_batch([dataset[i] for i in idx])
        batch = augment(batch, config, rng)

        logits = model(Tensor(batch.images), training=True)
        keep = None
        if config.ohem_enabled:
            loss_map, true_prob, valid = per_pixel_ce(logits.data, batch.labels)
            n_valid = int(valid.sum())
            if n_valid:
                min_kept = max(1, int(n_valid * config.ohem_min_kept_fraction))
                keep = ohem_filter(loss_map, true_prob, config.ohem_threshold, min_kept, valid)
        loss_t, _, _ = softmax_cross_entropy(logits, batch.labels, keep_mask=keep)
        loss = float(loss_t.data)
        if not math.isfinite(loss):
            if on_divergence_save is not None:
                on_divergence_save(model)
            raise TrainingDiverged(f"non-finite loss {loss!r} at iteration {it}")

        model.zero_grad()
        backward(loss_t)
        lr = lr_at(it, schedule)
        try:
            opt.step(lr)
        except TrainingDiverged:
            if on_divergence_save is not None:
                on_divergence_save(model)
            raise
        record = TrainRecord(iteration=it, lr=lr, loss=loss)
        records.append(record)
        if log_file is not None:
            log_file.write(format_log_row(record) + "\n")
    return records
