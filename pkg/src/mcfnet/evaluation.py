"""Confusion-matrix metrics, inference-speed measurement and model
parameter / multiply-accumulate accounting."""

import time
from dataclasses import dataclass

import numpy as np

from . import profiling
from .data import IGNORE_LABEL, load_directory_dataset  # re-export for callers
from .tensor import Tensor

__all__ = [
    "MetricError", "ConfusionMatrix", "miou", "pixel_accuracy",
    "fps_benchmark", "count_params", "count_macs", "count_params_flops",
    "BenchReport", "load_directory_dataset",
]


class MetricError(ValueError):
    pass


class ConfusionMatrix:
    """counts[i][j] = pixels of true class i predicted as class j."""

    def __init__(self, num_classes):
        if num_classes < 2:
            raise MetricError(f"need at least 2 classes, got {num_classes}")
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, prediction, labels, ignore_label=IGNORE_LABEL):
        prediction = np.asarray(prediction)
        labels = np.asarray(labels)
        if prediction.shape != labels.shape:
            raise MetricError(f"prediction {prediction.shape} vs labels {labels.shape}")
        n = self.num_classes
        scored = labels != ignore_label
        if np.any(prediction[scored] >= n) or np.any(prediction[scored] < 0):
            raise MetricError(f"prediction contains class ids outside [0, {n})")
        if np.any((labels[scored] >= n) | (labels[scored] < 0)):
            raise MetricError(f"labels contain class ids outside [0, {n}) other than ignore")
        flat = n * labels[scored].astype(np.int64) + prediction[scored].astype(np.int64)
        self.counts += np.bincount(flat, minlength=n * n).reshape(n, n)
        return self

    def merge(self, other):
        if other.num_classes != self.num_classes:
            raise MetricError("cannot merge confusion matrices of different sizes")
        self.counts += other.counts
        return self

    def total_scored(self):
        return int(self.counts.sum())


def pixel_accuracy(cm):
    total = cm.counts.sum()
    if total == 0:
        raise MetricError("no scored pixels")
    return float(np.diag(cm.counts).sum() / total)


def miou(cm, exclude_background=False):
    """Mean IoU over classes plus the per-class vector (NaN marks classes
    absent from both prediction and ground truth, which are excluded from
    the mean). ``exclude_background`` drops class 0 from the mean."""
    counts = cm.counts.astype(np.float64)
    inter = np.diag(counts)
    union = counts.sum(axis=1) + counts.sum(axis=0) - inter
    per_class = np.full(cm.num_classes, np.nan)
    present = union > 0
    per_class[present] = inter[present] / union[present]
    scored = present.copy()
    if exclude_background:
        scored[0] = False
    if not scored.any():
        raise MetricError("mIoU undefined: every class denominator is zero")
    return float(per_class[scored].mean()), per_class


@dataclass
class BenchReport:
    model: str
    resolution: str
    params: int
    macs: int
    miou: float
    fps: float
    per_class: tuple = ()

    def csv_row(self):
        return f"{self.model},{self.resolution},{self.params},{self.macs},{self.miou:.6g},{self.fps:.6g}"

    @staticmethod
    def csv_header():
        return "model,resolution,params,macs,miou,fps"


def fps_benchmark(model, resolution, warmup_runs=5, timed_runs=20, seed=0):
    """Eval-mode forward throughput on a fixed random input at batch 1.

    Returns (fps, mean seconds per frame, standard deviation of seconds).
    """
    if timed_runs < 1:
        raise ValueError(f"timed_runs must be >= 1, got {timed_runs}")
    h, w = resolution
    rng = np.random.default_rng(seed)
    x = Tensor(rng.random((1, model.config.input_channels, h, w), dtype=np.float32))
    for _ in range(warmup_runs):
        model(x, training=False)
    times = []
    for _ in range(timed_runs):
        t0 = time.perf_counter()
        model(x, training=False)
        times.append(time.perf_counter() - t0)
    times = np.asarray(times)
    return timed_runs / float(times.sum()), float(times.mean()), float(times.std())


def count_params(model):
    """Trainable parameter count; running statistics are not parameters."""
    return model.num_parameters()


def count_macs(model, resolution):
    """Multiply-accumulates of one eval-mode forward at the resolution,
    accumulated from the per-op closed forms as the ops execute."""
    h, w = resolution
    x = Tensor(np.zeros((1, model.config.input_channels, h, w), dtype=np.float32))
    with profiling.counting_macs() as counter:
        model(x, training=False)
    return counter.total


def count_params_flops(model, resolution):
    return count_params(model), count_macs(model, resolution)
