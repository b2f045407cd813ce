"""Bit-exact binary checkpoints for model weights.

Byte layout (normative, documented in full in docs/checkpoint-format.md):

    magic        8 bytes, ASCII "SKIPFUS1"
    header_len   u32 LE
    header       UTF-8 key=value lines: every config field plus dtype
    n_tensors    u32 LE
    directory    per tensor: name_len u32 LE, name UTF-8,
                 rows u64 LE, cols u64 LE, offset u64 LE
    payload      tensors in directory order, row-major, little-endian

Offsets are relative to the payload start, strictly increasing and
non-overlapping. Tensor names are E, U and blk{i}.{Q,K,V,P,M,O}; matrices a
reduced form eliminates are simply absent. Saving as f64 and loading back
reproduces every float bit-exactly; f32 rounds to nearest-even on save and
widens losslessly on load.
"""

from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np

from .config import ModelConfig, ReducedForm, Topology, config_from_lines, config_to_lines
from .errors import (
    BadMagic,
    CorruptHeader,
    InconsistentForm,
    IoFailure,
    ShapeMismatch,
    SkipfuseError,
    TruncatedPayload,
)
from .model import BlockWeights, ModelWeights, block_layout, validate_model

MAGIC = b"SKIPFUS1"
DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_BLOCK_TENSOR = re.compile(r"^blk(\d+)\.(Q|K|V|P|M|O)$")
_FIELD_ORDER = ("Q", "K", "V", "P", "M", "O")


def tensor_entries(model: ModelWeights) -> list[tuple[str, np.ndarray]]:
    """(name, matrix) pairs in canonical checkpoint order."""
    entries = [("E", model.E)]
    for i, block in enumerate(model.blocks):
        for name in _FIELD_ORDER:
            arr = getattr(block, name)
            if arr is not None:
                entries.append((f"blk{i}.{name}", arr))
    entries.append(("U", model.U))
    return entries


def save(model: ModelWeights, dtype: str, path: str | Path) -> None:
    """Write a checkpoint. dtype is 'f32' or 'f64'."""
    if dtype not in DTYPES:
        raise ValueError(f"dtype must be one of {sorted(DTYPES)}, got {dtype!r}")
    validate_model(model)
    np_dtype = DTYPES[dtype]

    header = "\n".join(config_to_lines(model.config) + [f"dtype={dtype}"]) + "\n"
    header_bytes = header.encode("utf-8")

    entries = tensor_entries(model)
    directory = bytearray()
    payload = bytearray()
    directory += struct.pack("<I", len(entries))
    for name, arr in entries:
        name_bytes = name.encode("utf-8")
        directory += struct.pack("<I", len(name_bytes))
        directory += name_bytes
        directory += struct.pack("<QQQ", arr.shape[0], arr.shape[1], len(payload))
        payload += arr.astype(np_dtype).tobytes()

    blob = MAGIC + struct.pack("<I", len(header_bytes)) + header_bytes \
        + bytes(directory) + bytes(payload)
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


class _Reader:
    """Bounds-checked cursor over the checkpoint bytes."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptHeader(f"file ends inside {what}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]


def _parse_header(text: bytes) -> tuple[ModelConfig, str]:
    try:
        decoded = text.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorruptHeader(f"header is not valid UTF-8: {exc}") from exc
    config_lines, dtype = [], None
    for line in decoded.splitlines():
        if line.startswith("dtype="):
            if dtype is not None:
                raise CorruptHeader("duplicate dtype line in header")
            dtype = line.partition("=")[2].strip()
        else:
            config_lines.append(line)
    if dtype is None:
        raise CorruptHeader("header is missing the dtype line")
    if dtype not in DTYPES:
        raise CorruptHeader(f"unsupported dtype {dtype!r}")
    try:
        config = config_from_lines(config_lines, source="<header>")
    except SkipfuseError as exc:
        raise CorruptHeader(f"bad config in header: {exc}") from exc
    return config, dtype


def _expected_tensors(config: ModelConfig):
    """(required, optional) name -> shape maps implied by the config."""
    d = config.d
    required = {
        "E": (config.vocab_size, d),
        "U": (d, config.vocab_size),
    }
    optional = {}
    layout = block_layout(config)
    p_optional = (
        config.topology is Topology.PARALLEL
        and config.reduced_form is not ReducedForm.FULL
    )
    for i in range(config.n_layers):
        for name, shape in layout.items():
            if shape is not None:
                required[f"blk{i}.{name}"] = shape
            elif name == "P" and p_optional:
                optional[f"blk{i}.P"] = (d, d)
    return required, optional


def load(path: str | Path) -> ModelWeights:
    """Read and validate a checkpoint, widening f32 payloads to f64."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc

    if len(buf) < len(MAGIC) or buf[:len(MAGIC)] != MAGIC:
        raise BadMagic(f"{path}: not a skipfuse checkpoint (bad magic)")
    reader = _Reader(buf)
    reader.pos = len(MAGIC)
    header_len = reader.u32("header length")
    config, dtype = _parse_header(reader.take(header_len, "header"))
    np_dtype = DTYPES[dtype]

    n_tensors = reader.u32("tensor count")
    entries = []
    seen = set()
    for _ in range(n_tensors):
        name_len = reader.u32("tensor name length")
        name_bytes = reader.take(name_len, "tensor name")
        try:
            name = name_bytes.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptHeader(f"tensor name is not valid UTF-8: {exc}") from exc
        rows = reader.u64(f"rows of {name}")
        cols = reader.u64(f"cols of {name}")
        offset = reader.u64(f"offset of {name}")
        if name in seen:
            raise CorruptHeader(f"duplicate tensor {name!r} in directory")
        seen.add(name)
        entries.append((name, rows, cols, offset))

    required, optional = _expected_tensors(config)
    for name, rows, cols, _ in entries:
        if name in required:
            expected = required.pop(name)
        elif name in optional:
            expected = optional.pop(name)
        else:
            match = _BLOCK_TENSOR.match(name)
            if match and int(match.group(1)) < config.n_layers:
                raise InconsistentForm(
                    f"tensor {name!r} is not allowed in form "
                    f"{config.reduced_form.value}"
                )
            raise CorruptHeader(f"unexpected tensor {name!r} in directory")
        if (rows, cols) != expected:
            raise ShapeMismatch(
                f"tensor {name!r} is {rows}x{cols}, config implies "
                f"{expected[0]}x{expected[1]}"
            )
    if required:
        missing = ", ".join(sorted(required))
        raise InconsistentForm(f"directory is missing tensors: {missing}")

    payload_start = reader.pos
    payload_len = len(buf) - payload_start
    item = np_dtype.itemsize
    cursor = 0
    arrays: dict[str, np.ndarray] = {}
    for name, rows, cols, offset in entries:
        if offset != cursor:
            raise CorruptHeader(
                f"tensor {name!r} offset {offset} is not contiguous "
                f"(expected {cursor})"
            )
        nbytes = rows * cols * item
        if offset + nbytes > payload_len:
            raise TruncatedPayload(
                f"payload ends inside tensor {name!r}: needs "
                f"{offset + nbytes} bytes, has {payload_len}"
            )
        flat = np.frombuffer(buf, dtype=np_dtype, count=rows * cols,
                             offset=payload_start + offset)
        arrays[name] = flat.astype(np.float64).reshape(rows, cols)
        cursor += nbytes
    if cursor != payload_len:
        # every shortfall was caught per tensor, so this is trailing junk
        raise CorruptHeader(
            f"{payload_len - cursor} trailing bytes after the payload"
        )

    blocks = []
    for i in range(config.n_layers):
        blocks.append(BlockWeights(**{
            name: arrays.get(f"blk{i}.{name}") for name in _FIELD_ORDER
        }))
    return ModelWeights(config=config, E=arrays["E"], blocks=blocks, U=arrays["U"])
