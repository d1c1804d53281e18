"""Binary checkpoint format.

Layout (all integers little-endian):
  magic "MCF1" | format version u32 | entry count u32
  per entry: name length u16 | UTF-8 name | rank u8 | extents u32 each |
             raw float32 little-endian values

Entries cover the model configuration (under the reserved ``cfg.`` prefix,
encoded as small float arrays), every trainable parameter, and the BN
running statistics (``*.running_mean`` / ``*.running_var``). A checkpoint
therefore rebuilds the model on its own.
"""

import struct

import numpy as np

from .network import MCFNet, ModelConfig

MAGIC = b"MCF1"
FORMAT_VERSION = 1

_CFG_PREFIX = "cfg."
_BUFFER_SUFFIXES = (".running_mean", ".running_var")


class CheckpointError(Exception):
    """Base class for checkpoint load failures."""


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class UnknownParameterError(CheckpointError):
    pass


def is_buffer_entry(name):
    return name.endswith(_BUFFER_SUFFIXES)


def is_config_entry(name):
    return name.startswith(_CFG_PREFIX)


def _config_entries(cfg):
    def arr(values):
        return np.asarray(values, dtype=np.float32)

    return [
        ("cfg.num_classes", arr([cfg.num_classes])),
        ("cfg.input_channels", arr([cfg.input_channels])),
        ("cfg.spatial_widths", arr(cfg.spatial_widths)),
        ("cfg.backbone_stage_widths", arr(cfg.backbone_stage_widths)),
        ("cfg.backbone_blocks_per_stage", arr(cfg.backbone_blocks_per_stage)),
        ("cfg.c_f", arr([cfg.c_f])),
        ("cfg.c_g", arr([cfg.c_g])),
        ("cfg.r", arr([cfg.r])),
        ("cfg.toggles", arr([cfg.use_lgate, cfg.use_cffm, cfg.use_cfrm, cfg.cffm_prose_variant])),
        # u32 seed split into exact-in-float32 16-bit halves
        ("cfg.seed", arr([cfg.seed // 65536, cfg.seed % 65536])),
    ]


def _config_from_entries(entries):
    def ints(name):
        if name not in entries:
            raise CheckpointError(f"checkpoint lacks config entry {name!r}")
        return [int(round(float(v))) for v in entries[name]]

    toggles = ints("cfg.toggles")
    seed_hi, seed_lo = ints("cfg.seed")
    return ModelConfig(
        num_classes=ints("cfg.num_classes")[0],
        input_channels=ints("cfg.input_channels")[0],
        spatial_widths=tuple(ints("cfg.spatial_widths")),
        backbone_stage_widths=tuple(ints("cfg.backbone_stage_widths")),
        backbone_blocks_per_stage=tuple(ints("cfg.backbone_blocks_per_stage")),
        c_f=ints("cfg.c_f")[0],
        c_g=ints("cfg.c_g")[0],
        r=ints("cfg.r")[0],
        use_lgate=bool(toggles[0]),
        use_cffm=bool(toggles[1]),
        use_cfrm=bool(toggles[2]),
        cffm_prose_variant=bool(toggles[3]),
        seed=seed_hi * 65536 + seed_lo,
    )


def state_entries(model):
    """All serialized (name, float32 array) pairs in write order."""
    entries = list(_config_entries(model.config))
    entries.extend((name, p.data) for name, p in model.named_parameters())
    entries.extend((name, arr) for name, arr in model.named_buffers())
    return entries


def _encode_entry(name, array):
    name_b = name.encode("utf-8")
    arr = np.ascontiguousarray(array, dtype="<f4")
    head = struct.pack("<H", len(name_b)) + name_b + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def save_checkpoint(model, path):
    entries = state_entries(model)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(entries)))
        for name, array in entries:
            fh.write(_encode_entry(name, array))


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise CheckpointTruncatedError(f"checkpoint truncated while reading {what}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out


def read_entries(path):
    """Decode the raw (name, array) entries of a checkpoint file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointMagicError(f"{path}: bad magic, not a checkpoint file")
    version, count = struct.unpack("<II", r.take(8, "header"))
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    entries = []
    for _ in range(count):
        (name_len,) = struct.unpack("<H", r.take(2, "name length"))
        name = r.take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", r.take(1, f"rank of {name!r}"))
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank, f"extents of {name!r}"))
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = np.frombuffer(r.take(4 * size, f"values of {name!r}"), dtype="<f4")
        entries.append((name, data.reshape(shape).copy()))
    if r.pos != len(blob):
        raise CheckpointTruncatedError(f"{path}: {len(blob) - r.pos} trailing bytes after last entry")
    return entries


def load_checkpoint(path):
    """Rebuild the model a checkpoint describes and restore all state."""
    entries = dict(read_entries(path))
    cfg = _config_from_entries({k: v for k, v in entries.items() if is_config_entry(k)})
    model = MCFNet(cfg)

    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    for name, array in entries.items():
        if is_config_entry(name):
            continue
        if name in params:
            p = params.pop(name)
            if array.shape != p.data.shape:
                raise CheckpointError(f"{name!r}: shape {array.shape} does not match model {p.data.shape}")
            p.data = np.ascontiguousarray(array, dtype=np.float32)
        elif name in buffers:
            buffers.pop(name)[:] = array
        else:
            raise UnknownParameterError(f"checkpoint entry {name!r} is not a model parameter")
    if params or buffers:
        missing = sorted(list(params) + list(buffers))
        raise CheckpointError(f"checkpoint missing parameters: {', '.join(missing)}")
    return model
