"""SKPF checkpoint format (version 1) and seeded random model generation.

Layout, all little-endian::

    magic      4 bytes  b"SKPF"
    version    u16
    config     6 x u32 (vocab_size, d_model, n_layers, n_heads, d_ff, max_seq_len),
               u8 norm_placement (0 post, 1 pre), f64 layernorm_eps
    metadata   u32 length + UTF-8 JSON (init scheme, seed, training notes)
    count      u32 number of tensors
    directory  per tensor: u16 name length, name, u8 ndim, ndim x u32 dims, u64 offset
    payloads   f32 row-major, at the directory offsets
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import Model, ModelConfig, tensor_shapes

MAGIC = b"SKPF"
VERSION = 1
INIT_STD = 0.02

_PLACEMENTS = ("post", "pre")
_CONFIG = struct.Struct("<6IBd")


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class InconsistentCheckpointError(CheckpointError):
    pass


def encode_checkpoint(model: Model) -> bytes:
    cfg = model.config
    tensors = model.named_tensors()
    meta = json.dumps(model.metadata or {}, sort_keys=True).encode("utf-8")

    head = bytearray()
    head += MAGIC
    head += struct.pack("<H", VERSION)
    head += _CONFIG.pack(
        cfg.vocab_size, cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.d_ff, cfg.max_seq_len,
        _PLACEMENTS.index(cfg.norm_placement), cfg.layernorm_eps,
    )
    head += struct.pack("<I", len(meta)) + meta
    head += struct.pack("<I", len(tensors))

    dir_size = sum(2 + len(name.encode()) + 1 + 4 * t.ndim + 8 for name, t in tensors.items())
    offset = len(head) + dir_size
    directory = bytearray()
    payloads = bytearray()
    for name, t in tensors.items():
        raw = name.encode("utf-8")
        directory += struct.pack("<H", len(raw)) + raw
        directory += struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape)
        directory += struct.pack("<Q", offset)
        data = np.ascontiguousarray(t, dtype="<f4").tobytes()
        payloads += data
        offset += len(data)
    return bytes(head + directory + payloads)


def save(model: Model, path) -> None:
    Path(path).write_bytes(encode_checkpoint(model))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedCheckpointError(f"unexpected end of file at byte {self.pos} (wanted {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def decode_checkpoint(buf: bytes) -> Model:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise BadMagicError("not an SKPF checkpoint")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version}")
    vocab, d_model, n_layers, n_heads, d_ff, max_seq, placement, eps = r.unpack(_CONFIG.format)
    if placement >= len(_PLACEMENTS):
        raise InconsistentCheckpointError(f"unknown norm placement byte {placement}")
    try:
        cfg = ModelConfig(vocab, d_model, n_layers, n_heads, d_ff, max_seq, _PLACEMENTS[placement], eps)
    except ValueError as e:
        raise InconsistentCheckpointError(f"invalid config block: {e}") from None
    (meta_len,) = r.unpack("<I")
    metadata = json.loads(r.take(meta_len).decode("utf-8"))
    (count,) = r.unpack("<I")

    expected = tensor_shapes(cfg)
    entries = []
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}I")
        (offset,) = r.unpack("<Q")
        entries.append((name, dims, offset))
    header_end = r.pos

    tensors: dict[str, np.ndarray] = {}
    spans = []
    for name, dims, offset in entries:
        if name in tensors:
            raise InconsistentCheckpointError(f"tensor {name} appears twice")
        if name not in expected:
            raise InconsistentCheckpointError(f"unexpected tensor {name}")
        if tuple(dims) != expected[name]:
            raise InconsistentCheckpointError(f"{name}: dims {dims} disagree with config {expected[name]}")
        nbytes = 4 * int(np.prod(dims, dtype=np.int64))
        if offset < header_end:
            raise InconsistentCheckpointError(f"{name}: payload offset {offset} overlaps the header")
        if offset + nbytes > len(buf):
            raise TruncatedCheckpointError(f"{name}: payload [{offset}, {offset + nbytes}) beyond end of file")
        spans.append((offset, offset + nbytes, name))
        tensors[name] = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=offset).reshape(dims).astype(np.float32)
    spans.sort()
    for (_, end, a), (start, _, b) in zip(spans, spans[1:]):
        if start < end:
            raise InconsistentCheckpointError(f"payloads of {a} and {b} overlap")
    missing = set(expected) - set(tensors)
    if missing:
        raise InconsistentCheckpointError(f"missing tensors: {sorted(missing)}")
    return Model.from_named(cfg, tensors, metadata)


def load(path) -> Model:
    return decode_checkpoint(Path(path).read_bytes())


def generate_random_model(cfg: ModelConfig, seed: int) -> Model:
    """Gaussian(0, 0.02) matrices, zero biases, unit norm gains; deterministic in (cfg, seed)."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in tensor_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("_g"):
            tensors[name] = np.ones(shape, dtype=np.float32)
        elif leaf.startswith("b") or leaf.endswith("_b"):
            tensors[name] = np.zeros(shape, dtype=np.float32)
        else:
            tensors[name] = rng.normal(0.0, INIT_STD, size=shape).astype(np.float32)
    metadata = {"init": "gaussian", "init_std": INIT_STD, "seed": seed}
    return Model.from_named(cfg, tensors, metadata)
