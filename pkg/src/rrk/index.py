"""On-disk embedding index (magic "RRKIDX1") and its size model.

Layout, all little-endian:
  7 bytes   magic b"RRKIDX1", 1 byte version (1)
  u64 n_docs, u32 l, u32 d_model, u8 dtype (1 = 32-bit float)
  doc-id table: n_docs entries of u32 length + UTF-8 bytes, sorted by id
  payload: n_docs * l * d_model float32 values, row-major, in table order
  footer: 16-byte config hash + u64 seed (provenance; readers that stop
          after the payload lose nothing but the provenance check)

Embeddings are stored single-precision; write->read round-trips are
bit-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"RRKIDX1"
VERSION = 1
HEADER_BYTES = len(MAGIC) + 1 + 8 + 4 + 4 + 1
FOOTER_BYTES = 16 + 8
DEFAULT_ID_BYTES = 16


@dataclass
class EmbeddingIndex:
    """In-memory view of an index: sorted doc ids over an (n, l, d) array."""

    doc_ids: list[str]
    embeddings: np.ndarray  # (n_docs, l, d_model) float32
    config_hash: str = "0" * 32
    seed: int = 0

    def __post_init__(self):
        self._row: dict[str, int] = {d: i for i, d in enumerate(self.doc_ids)}

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)

    @property
    def l_memory(self) -> int:
        return self.embeddings.shape[1]

    @property
    def d_model(self) -> int:
        return self.embeddings.shape[2]

    def lookup(self, doc_id: str) -> np.ndarray:
        row = self._row.get(doc_id)
        if row is None:
            raise KeyError(f"doc_id {doc_id!r} not in index")
        return self.embeddings[row]

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._row


def build_embedding_index(
    items: list[tuple[str, np.ndarray]],
    config_hash: str = "0" * 32,
    seed: int = 0,
) -> EmbeddingIndex:
    """Assemble an index from (doc_id, (l, d) float array) pairs."""
    if not items:
        raise ValueError("cannot build an index with no documents")
    ids = [doc_id for doc_id, _ in items]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate doc_id in index build")
    items = sorted(items, key=lambda p: p[0])
    embeddings = np.stack([e for _, e in items]).astype(np.float32)
    return EmbeddingIndex([d for d, _ in items], embeddings, config_hash, seed)


def save_index(index: EmbeddingIndex, path: str | Path) -> None:
    emb = np.ascontiguousarray(index.embeddings, dtype="<f4")
    n, l, d = emb.shape
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", VERSION))
        f.write(struct.pack("<QIIB", n, l, d, 1))
        for doc_id in index.doc_ids:
            encoded = doc_id.encode()
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
        f.write(emb.tobytes())
        f.write(bytes.fromhex(index.config_hash)[:16].ljust(16, b"\0"))
        f.write(struct.pack("<Q", index.seed))


def load_index(path: str | Path) -> EmbeddingIndex:
    with open(path, "rb") as f:
        data = f.read()
    if data[:7] != MAGIC:
        raise ValueError(f"{path}: not an index file (bad magic)")
    version = data[7]
    if version != VERSION:
        raise ValueError(f"{path}: unsupported index version {version}")
    off = 8
    n, l, d, dtype_code = struct.unpack_from("<QIIB", data, off)
    off += 17
    if dtype_code != 1:
        raise ValueError(f"{path}: unsupported dtype code {dtype_code}")
    doc_ids: list[str] = []
    for _ in range(n):
        (id_len,) = struct.unpack_from("<I", data, off)
        off += 4
        doc_ids.append(data[off : off + id_len].decode())
        off += id_len
    payload = n * l * d * 4
    emb = np.frombuffer(data, dtype="<f4", count=n * l * d, offset=off).reshape(n, l, d).copy()
    off += payload
    config_hash = data[off : off + 16].hex()
    (seed,) = struct.unpack_from("<Q", data, off + 16)
    return EmbeddingIndex(doc_ids, emb, config_hash, seed)


def index_payload_bytes(n_docs: int, l: int, d_model: int, bytes_per_value: int) -> int:
    """Embedding payload only: n_docs * l * d_model * bytes_per_value."""
    if min(n_docs, l, d_model, bytes_per_value) < 1:
        raise ValueError("index size arguments must all be >= 1")
    return n_docs * l * d_model * bytes_per_value


def index_size(
    n_docs: int,
    l: int,
    d_model: int,
    bytes_per_value: int,
    id_bytes: int = DEFAULT_ID_BYTES,
) -> int:
    """Total file size model: payload + header + id-table overhead + footer."""
    payload = index_payload_bytes(n_docs, l, d_model, bytes_per_value)
    id_table = n_docs * (4 + id_bytes)
    return payload + HEADER_BYTES + id_table + FOOTER_BYTES
