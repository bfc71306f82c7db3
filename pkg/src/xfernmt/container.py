"""Versioned binary container for model snapshots.

Layout:  8-byte magic ``XNMTBLK\\x31``, a little-endian uint64 header length,
a UTF-8 JSON header, then the raw payload.  The header carries the model
kind, its config, both vocabularies, and a directory of named arrays (one
entry per parameter array, grouped by block name prefix) with byte offsets
and per-array CRC32 checksums.  Payload values are little-endian IEEE-754
32-bit floats regardless of the in-memory precision.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .errors import ChecksumError, MissingBlockError, TruncatedError, VersionError
from .ioutil import atomic_write_bytes

MAGIC = b"XNMTBLK1"

REQUIRED_BLOCKS = {
    "seq2seq": (
        "source_embeddings",
        "source_rnn",
        "target_rnn",
        "target_attention",
        "target_input_embeddings",
        "target_output_embeddings",
    ),
    "lm": (
        "target_rnn",
        "target_input_embeddings",
        "target_output_embeddings",
    ),
}


def write_container(
    path: str,
    kind: str,
    config: dict,
    vocabs: dict,
    blocks: dict[str, dict[str, np.ndarray]],
) -> None:
    """Serialize named blocks of arrays plus metadata to ``path``."""
    if kind not in REQUIRED_BLOCKS:
        raise ValueError(f"unknown model kind {kind!r}")
    directory = []
    chunks = []
    offset = 0
    for block in sorted(blocks):
        for name in sorted(blocks[block]):
            arr = np.ascontiguousarray(blocks[block][name], dtype="<f4")
            raw = arr.tobytes()
            directory.append(
                {
                    "name": f"{block}/{name}",
                    "shape": list(arr.shape),
                    "offset": offset,
                    "nbytes": len(raw),
                    "crc32": zlib.crc32(raw),
                }
            )
            chunks.append(raw)
            offset += len(raw)
    header = json.dumps(
        {"kind": kind, "config": config, "vocabs": vocabs, "arrays": directory},
        ensure_ascii=False,
    ).encode("utf-8")
    payload = b"".join(
        [MAGIC, struct.pack("<Q", len(header)), header] + chunks
    )
    atomic_write_bytes(path, payload)


def read_container(path: str) -> tuple[str, dict, dict, dict[str, dict[str, np.ndarray]]]:
    """Read a snapshot; returns (kind, config, vocabs, blocks)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(MAGIC) + 8:
        raise TruncatedError(f"{path}: file too short to be a model snapshot")
    if raw[: len(MAGIC)] != MAGIC:
        raise VersionError(
            f"{path}: bad magic {raw[:len(MAGIC)]!r}, expected {MAGIC!r} (unknown format version?)"
        )
    (header_len,) = struct.unpack_from("<Q", raw, len(MAGIC))
    header_end = len(MAGIC) + 8 + header_len
    if len(raw) < header_end:
        raise TruncatedError(f"{path}: header truncated")
    header = json.loads(raw[len(MAGIC) + 8 : header_end].decode("utf-8"))
    kind = header["kind"]
    if kind not in REQUIRED_BLOCKS:
        raise VersionError(f"{path}: unknown model kind {kind!r}")
    blocks: dict[str, dict[str, np.ndarray]] = {}
    for entry in header["arrays"]:
        start = header_end + entry["offset"]
        stop = start + entry["nbytes"]
        if stop > len(raw):
            raise TruncatedError(f"{path}: payload truncated at array {entry['name']}")
        chunk = raw[start:stop]
        if zlib.crc32(chunk) != entry["crc32"]:
            raise ChecksumError(f"{path}: checksum failure in array {entry['name']}")
        arr = np.frombuffer(chunk, dtype="<f4").reshape(entry["shape"]).copy()
        block, _, name = entry["name"].partition("/")
        blocks.setdefault(block, {})[name] = arr
    for block in REQUIRED_BLOCKS[kind]:
        if block not in blocks:
            raise MissingBlockError(f"{path}: snapshot is missing parameter block {block!r}")
    return kind, header["config"], header["vocabs"], blocks
