"""Synthetic segmentation data and on-disk dataset IO.

Images are generated in 8-bit color and carried as float32 in [0, 1], so a
PNG write/read round-trip is bit-exact. Labels are integer class maps; 255
is reserved as the ignore value and never produced by the generator.
"""

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image


IGNORE_LABEL = 255


@dataclass
class SegItem:
    image: np.ndarray  # 3 x H x W float32 in [0, 1]
    label: np.ndarray  # H x W int32 in [0, num_classes) or 255


@dataclass
class SegBatch:
    images: np.ndarray  # N x 3 x H x W float32
    labels: np.ndarray  # N x H x W int32


@dataclass
class SynthDatasetSpec:
    num_images: int = 8
    image_size: int = 64
    num_classes: int = 4
    shapes_min: int = 3
    shapes_max: int = 6
    seed: int = 0


def class_palette(num_classes):
    """Distinct 8-bit RGB anchors per class; class 0 is the dark background."""
    base = [
        (40, 40, 40), (225, 60, 60), (60, 205, 60), (60, 90, 225),
        (230, 200, 50), (200, 60, 220), (50, 210, 210), (240, 140, 40),
    ]
    colors = list(base)
    step = 0
    while len(colors) < num_classes:
        step += 1
        colors.append(((37 * step + 120) % 256, (89 * step + 40) % 256, (151 * step + 200) % 256))
    return np.array(colors[:num_classes], dtype=np.float64)


def generate_synthetic_dataset(spec):
    """Axis-aligned rectangles and disks of class-coded colors over a noisy
    background; labels are the exact painted masks. Deterministic per spec."""
    if spec.num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {spec.num_classes}")
    rng = np.random.default_rng(spec.seed)
    palette = class_palette(spec.num_classes)
    size = spec.image_size
    yy, xx = np.mgrid[0:size, 0:size]
    items = []
    shape_counter = 0
    for _ in range(spec.num_images):
        img = np.empty((size, size, 3), dtype=np.float64)
        img[:] = palette[0]
        img += rng.normal(0.0, 3.0, size=img.shape)
        label = np.zeros((size, size), dtype=np.int32)
        n_shapes = int(rng.integers(spec.shapes_min, spec.shapes_max + 1))
        for _ in range(n_shapes):
            # cycle classes so every class appears even in tiny datasets
            cls = 1 + shape_counter % (spec.num_classes - 1)
            shape_counter += 1
            cy, cx = rng.integers(0, size, size=2)
            extent = int(rng.integers(size // 5, size // 3 + 1))
            if rng.integers(2) == 0:
                mask = (np.abs(yy - cy) <= extent) & (np.abs(xx - cx) <= extent)
            else:
                mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= extent ** 2
            color = palette[cls] + rng.integers(-12, 13, size=3)
            img[mask] = color + rng.normal(0.0, 2.0, size=(int(mask.sum()), 3))
            label[mask] = cls
        img8 = np.clip(np.rint(img), 0, 255).astype(np.uint8)
        image = (img8.astype(np.float32) / 255.0).transpose(2, 0, 1)
        items.append(SegItem(image=np.ascontiguousarray(image), label=label))
    return items


def stack_batch(items):
    return SegBatch(
        images=np.stack([it.image for it in items]).astype(np.float32),
        labels=np.stack([it.label for it in items]).astype(np.int32),
    )


def image_to_png(image):
    return Image.fromarray(
        np.clip(np.rint(image.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8), mode="RGB")


def write_directory_dataset(items, path):
    """Write `<stem>_img.png` / `<stem>_lab.png` pairs; stems are zero-padded
    indices so lexicographic order is generation order."""
    os.makedirs(path, exist_ok=True)
    for i, item in enumerate(items):
        stem = f"{i:04d}"
        image_to_png(item.image).save(os.path.join(path, f"{stem}_img.png"))
        Image.fromarray(item.label.astype(np.uint8), mode="L").save(
            os.path.join(path, f"{stem}_lab.png"))


class DatasetError(ValueError):
    """Malformed on-disk dataset (unpaired or mismatched files)."""


def load_directory_dataset(path):
    """Load `<stem>_img.png` / `<stem>_lab.png` pairs in lexicographic stem
    order. Label value 255 loads verbatim."""
    names = sorted(os.listdir(path))
    stems_img = {n[:-8] for n in names if n.endswith("_img.png")}
    stems_lab = {n[:-8] for n in names if n.endswith("_lab.png")}
    problems = [f"{s}: missing label" for s in sorted(stems_img - stems_lab)]
    problems += [f"{s}: missing image" for s in sorted(stems_lab - stems_img)]
    items = []
    for stem in sorted(stems_img & stems_lab):
        img = Image.open(os.path.join(path, f"{stem}_img.png")).convert("RGB")
        lab = Image.open(os.path.join(path, f"{stem}_lab.png")).convert("L")
        if img.size != lab.size:
            problems.append(f"{stem}: image {img.size} vs label {lab.size}")
            continue
        image = np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 255.0
        label = np.asarray(lab, dtype=np.int32)
        items.append(SegItem(image=np.ascontiguousarray(image), label=label))
    if problems:
        raise DatasetError("bad dataset entries: " + "; ".join(problems))
    return items
