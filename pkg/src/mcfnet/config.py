"""Flat `key = value` run configuration with a fixed schema.

Lines hold one dotted key each; `#` starts a comment. Unknown keys are
rejected. Command-line `--set key=value` overrides apply after the file,
and the env var MCF_SEED overrides the seed last.
"""

import os

from .data import SynthDatasetSpec
from .network import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _parse_bool(raw):
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _parse_int(raw):
    try:
        return int(raw.strip())
    except ValueError:
        raise ConfigError(f"expected an integer, got {raw!r}") from None


def _parse_float(raw):
    try:
        return float(raw.strip())
    except ValueError:
        raise ConfigError(f"expected a number, got {raw!r}") from None


def _parse_int_list(raw):
    return tuple(_parse_int(v) for v in raw.split(","))


def _parse_float_list(raw):
    return tuple(_parse_float(v) for v in raw.split(","))


SCHEMA = {
    "seed": (_parse_int, 0),
    "model.num_classes": (_parse_int, 19),
    "model.input_channels": (_parse_int, 3),
    "model.spatial_widths": (_parse_int_list, (64, 64, 128)),
    "model.backbone_stage_widths": (_parse_int_list, (64, 128, 256, 512)),
    "model.backbone_blocks_per_stage": (_parse_int_list, (2, 2, 2, 2)),
    "model.c_f": (_parse_int, 128),
    "model.c_g": (_parse_int, 128),
    "model.r": (_parse_int, 4),
    "model.use_lgate": (_parse_bool, True),
    "model.use_cffm": (_parse_bool, True),
    "model.use_cfrm": (_parse_bool, True),
    "model.cffm_prose_variant": (_parse_bool, False),
    "train.batch_size": (_parse_int, 4),
    "train.momentum": (_parse_float, 0.9),
    "train.weight_decay": (_parse_float, 1e-4),
    "train.lr_i": (_parse_float, 2.5e-2),
    "train.power": (_parse_float, 0.9),
    "train.warmup_factor": (_parse_float, 0.1),
    "train.warmup_iters": (_parse_int, 0),
    "train.max_iter": (_parse_int, 500),
    "train.ohem.enabled": (_parse_bool, True),
    "train.ohem.threshold": (_parse_float, 0.7),
    "train.ohem.min_kept_fraction": (_parse_float, 1.0 / 16.0),
    "train.aug.flip_p": (_parse_float, 0.5),
    "train.aug.scales": (_parse_float_list, (0.5, 1.0, 1.25, 1.5, 1.75)),
    "train.aug.crop_h": (_parse_int, 64),
    "train.aug.crop_w": (_parse_int, 64),
    "train.aug.color_jitter": (_parse_bool, True),
    "data.num_images": (_parse_int, 8),
    "data.image_size": (_parse_int, 64),
    "data.shapes_min": (_parse_int, 3),
    "data.shapes_max": (_parse_int, 6),
}


class RunConfig:
    def __init__(self, values):
        self.values = values

    def __getitem__(self, key):
        return self.values[key]

    def model_config(self):
        v = self.values
        return ModelConfig(
            num_classes=v["model.num_classes"],
            input_channels=v["model.input_channels"],
            spatial_widths=v["model.spatial_widths"],
            backbone_stage_widths=v["model.backbone_stage_widths"],
            backbone_blocks_per_stage=v["model.backbone_blocks_per_stage"],
            c_f=v["model.c_f"],
            c_g=v["model.c_g"],
            r=v["model.r"],
            use_lgate=v["model.use_lgate"],
            use_cffm=v["model.use_cffm"],
            use_cfrm=v["model.use_cfrm"],
            cffm_prose_variant=v["model.cffm_prose_variant"],
            seed=v["seed"],
        )

    def train_config(self):
        v = self.values
        return TrainConfig(
            batch_size=v["train.batch_size"],
            momentum=v["train.momentum"],
            weight_decay=v["train.weight_decay"],
            lr_i=v["train.lr_i"],
            power=v["train.power"],
            warmup_factor=v["train.warmup_factor"],
            warmup_iters=v["train.warmup_iters"],
            max_iter=v["train.max_iter"],
            ohem_enabled=v["train.ohem.enabled"],
            ohem_threshold=v["train.ohem.threshold"],
            ohem_min_kept_fraction=v["train.ohem.min_kept_fraction"],
            flip_p=v["train.aug.flip_p"],
            scales=v["train.aug.scales"],
            crop_h=v["train.aug.crop_h"],
            crop_w=v["train.aug.crop_w"],
            color_jitter=v["train.aug.color_jitter"],
            seed=v["seed"],
        )

    def synth_spec(self):
        v = self.values
        return SynthDatasetSpec(
            num_images=v["data.num_images"],
            image_size=v["data.image_size"],
            num_classes=v["model.num_classes"],
            shapes_min=v["data.shapes_min"],
            shapes_max=v["data.shapes_max"],
            seed=v["seed"],
        )


def _apply(values, key, raw, origin):
    key = key.strip()
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r} ({origin})")
    parser, _ = SCHEMA[key]
    try:
        values[key] = parser(raw)
    except ConfigError as exc:
        raise ConfigError(f"{key} ({origin}): {exc}") from None


def load_config(path=None, overrides=(), env=os.environ):
    """Defaults, then the config file, then --set overrides, then MCF_SEED."""
    values = {key: default for key, (_, default) in SCHEMA.items()}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected `key = value`, got {line!r}")
                key, raw = line.split("=", 1)
                _apply(values, key, raw, f"{path}:{lineno}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _apply(values, key, raw, "--set")
    if env.get("MCF_SEED"):
        try:
            values["seed"] = int(env["MCF_SEED"])
        except ValueError:
            raise ConfigError(f"MCF_SEED must be an integer, got {env['MCF_SEED']!r}") from None
    return RunConfig(values)
