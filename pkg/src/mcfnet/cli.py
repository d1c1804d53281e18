"""Command-line entry point: train / eval / infer / bench / params.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure
(missing files, malformed inputs). Subcommands never mutate their inputs.
"""

import argparse
import os
import sys
import time

import numpy as np
from PIL import Image

from . import checkpoint as ckpt
from . import evaluation as ev
from .config import ConfigError, load_config
from .data import generate_synthetic_dataset, load_directory_dataset, stack_batch, \
    write_directory_dataset
from .network import MCFNet, ModelConfigError
from .tensor import Tensor
from .training import TrainingDiverged, train_loop

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _build_parser():
    parser = _Parser(prog="mcfnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on the synthetic dataset from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="run")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="evaluation report CSV (appended)")
    p.add_argument("--per-class", default=None, help="per-class IoU CSV")
    p.add_argument("--name", default="mcfnet")

    p = sub.add_parser("infer", help="predict a class-indexed PNG for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("bench", help="measure inference FPS at a resolution")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--res", required=True, metavar="HxW")
    p.add_argument("--out", default=None, help="report CSV to append to")
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--name", default="mcfnet")

    p = sub.add_parser("params", help="print parameter and MAC counts for a config")
    p.add_argument("--config", required=True)
    p.add_argument("--res", default=None, metavar="HxW")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    return parser


def _parse_res(raw):
    try:
        h, w = raw.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise ConfigError(f"--res expects HxW, got {raw!r}") from None


def _append_report(path, report):
    new = not os.path.exists(path)
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        if new:
            fh.write(ev.BenchReport.csv_header() + "\n")
        fh.write(report.csv_row() + "\n")


def _cmd_train(args):
    cfg = load_config(args.config, args.set)
    model = MCFNet(cfg.model_config())
    dataset = generate_synthetic_dataset(cfg.synth_spec())
    os.makedirs(args.out, exist_ok=True)
    write_directory_dataset(dataset, os.path.join(args.out, "dataset"))

    ckpt_path = os.path.join(args.out, "checkpoint.mcf")
    with open(os.path.join(args.out, "train_log.csv"), "w", encoding="utf-8", newline="\n") as log:
        records = train_loop(
            model, dataset, cfg.train_config(), log_file=log,
            on_divergence_save=lambda m: ckpt.save_checkpoint(m, os.path.join(args.out, "last_good.mcf")))
    ckpt.save_checkpoint(model, ckpt_path)
    print(f"trained {len(records)} iterations, final loss {records[-1].loss:.6g}")
    print(f"checkpoint {ckpt_path}")
    return 0


def _eval_model(model, items, name):
    cm = ev.ConfusionMatrix(model.config.num_classes)
    total_s = 0.0
    for item in items:
        batch = stack_batch([item])
        t0 = time.perf_counter()
        logits = model(Tensor(batch.images), training=False)
        total_s += time.perf_counter() - t0
        pred = logits.data.argmax(axis=1).astype(np.int32)
        cm.update(pred, batch.labels)
    mean_iou, per_class = ev.miou(cm)
    h, w = items[0].image.shape[1], items[0].image.shape[2]
    params, macs = ev.count_params_flops(model, (h, w))
    report = ev.BenchReport(
        model=name, resolution=f"{h}x{w}", params=params, macs=macs,
        miou=mean_iou, fps=len(items) / total_s, per_class=tuple(per_class))
    return report, ev.pixel_accuracy(cm)


def _cmd_eval(args):
    model = ckpt.load_checkpoint(args.checkpoint)
    items = load_directory_dataset(args.data)
    if not items:
        print(f"eval: no image/label pairs under {args.data}", file=sys.stderr)
        return RUNTIME_ERROR
    report, acc = _eval_model(model, items, args.name)
    print(f"pixel_accuracy {acc:.6g}")
    print(f"miou {report.miou:.6g}")
    if args.out:
        _append_report(args.out, report)
    if args.per_class:
        with open(args.per_class, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("class,iou\n")
            for i, v in enumerate(report.per_class):
                fh.write(f"{i},{v:.6g}\n")
    return 0


def _cmd_infer(args):
    model = ckpt.load_checkpoint(args.checkpoint)
    img = Image.open(args.image).convert("RGB")
    image = np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 255.0
    logits = model(Tensor(image[None]), training=False)
    pred = logits.data.argmax(axis=1)[0].astype(np.uint8)
    Image.fromarray(pred, mode="L").save(args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_bench(args):
    model = ckpt.load_checkpoint(args.checkpoint)
    res = _parse_res(args.res)
    fps, mean_s, std_s = ev.fps_benchmark(model, res, args.warmup, args.runs)
    params, macs = ev.count_params_flops(model, res)
    report = ev.BenchReport(model=args.name, resolution=f"{res[0]}x{res[1]}",
                            params=params, macs=macs, miou=float("nan"), fps=fps)
    print(f"fps {fps:.6g} (mean {mean_s * 1e3:.4g} ms, std {std_s * 1e3:.4g} ms)")
    if args.out:
        _append_report(args.out, report)
    return 0


def _cmd_params(args):
    cfg = load_config(args.config, args.set)
    model = MCFNet(cfg.model_config())
    size = cfg["data.image_size"]
    res = _parse_res(args.res) if args.res else (size, size)
    params, macs = ev.count_params_flops(model, res)
    print(f"params {params}")
    print(f"macs {macs}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "infer": _cmd_infer,
    "bench": _cmd_bench,
    "params": _cmd_params,
}


def run(argv):
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"mcfnet: config error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except FileNotFoundError as exc:
        print(f"mcfnet: missing file: {exc.filename}", file=sys.stderr)
        return RUNTIME_ERROR
    except (ckpt.CheckpointError, ModelConfigError, TrainingDiverged, OSError, ValueError) as exc:
        print(f"mcfnet: error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


def main():
    return run(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
