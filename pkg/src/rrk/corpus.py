"""Byte-level vocabulary, tokenization, and corpus/query ingestion.

Token ids 0..255 are raw UTF-8 bytes, so tokenization is exact and
reversible. Special ids sit above the byte range: pad, eos, sep, then the
reserved memory-token ids used by the compressor.

Supported corpus encodings:
- JSONL: one {"doc_id": str, "text": str} object per line
  (queries: {"query_id": str, "text": str})
- TSV:   doc_id<TAB>text, one record per line
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

N_BYTE_UNITS = 256


@dataclass(frozen=True)
class Vocabulary:
    """Dense id space: 256 byte units, pad/eos/sep, then l memory tokens."""

    l_memory: int = 8

    @property
    def pad_id(self) -> int:
        return N_BYTE_UNITS

    @property
    def eos_id(self) -> int:
        return N_BYTE_UNITS + 1

    @property
    def sep_id(self) -> int:
        return N_BYTE_UNITS + 2

    @property
    def memory_token_ids(self) -> list[int]:
        base = N_BYTE_UNITS + 3
        return list(range(base, base + self.l_memory))

    @property
    def vocab_size(self) -> int:
        return N_BYTE_UNITS + 3 + self.l_memory

    def special_ids(self) -> set[int]:
        return {self.pad_id, self.eos_id, self.sep_id, *self.memory_token_ids}


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    tokens: tuple[int, ...] = field(default=())


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str
    tokens: tuple[int, ...] = field(default=())


def build_vocab(corpus: list[Document], l_memory: int = 8) -> Vocabulary:
    """Byte-level vocabulary over a non-empty corpus.

    The id layout does not depend on corpus content (all 256 byte units are
    always present), so two builds over the same corpus are identical.
    """
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    if l_memory < 1:
        raise ValueError(f"l_memory must be >= 1, got {l_memory}")
    return Vocabulary(l_memory=l_memory)


def tokenize(text: str, vocab: Vocabulary | None = None) -> tuple[int, ...]:
    """UTF-8 bytes as ids in [0, 256). Never emits special ids."""
    return tuple(text.encode("utf-8"))


def detokenize(tokens, vocab: Vocabulary | None = None) -> str:
    """Inverse of tokenize. Rejects special/out-of-range ids."""
    for t in tokens:
        if not 0 <= t < N_BYTE_UNITS:
            raise ValueError(f"token id {t} is not a byte unit; cannot detokenize")
    return bytes(tokens).decode("utf-8")


def make_document(doc_id: str, text: str) -> Document:
    return Document(doc_id=doc_id, text=text, tokens=tokenize(text))


def make_query(query_id: str, text: str) -> Query:
    return Query(query_id=query_id, text=text, tokens=tokenize(text))


def truncate_query(query: Query, budget: int) -> Query:
    """Drop tail tokens beyond the budget (head tokens are kept)."""
    if len(query.tokens) <= budget:
        return query
    return Query(query_id=query.query_id, text=query.text, tokens=query.tokens[:budget])


def _iter_nonempty_lines(path: str | Path):
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            yield line_no, line


def _load_records(path: str | Path, fmt: str, id_key: str) -> list[tuple[str, str]]:
    path = Path(path)
    if fmt == "auto":
        fmt = "tsv" if path.suffix.lower() == ".tsv" else "jsonl"
    records: list[tuple[str, str]] = []
    seen: set[str] = set()
    for line_no, line in _iter_nonempty_lines(path):
        if fmt == "jsonl":
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{line_no}: malformed JSON: {e}") from e
            if not isinstance(obj, dict) or id_key not in obj or "text" not in obj:
                raise ValueError(
                    f"{path}:{line_no}: expected object with '{id_key}' and 'text'"
                )
            rid, text = str(obj[id_key]), str(obj["text"])
        elif fmt == "tsv":
            if "\t" not in line:
                raise ValueError(f"{path}:{line_no}: expected '{id_key}<TAB>text'")
            rid, text = line.split("\t", 1)
        else:
            raise ValueError(f"unknown corpus format {fmt!r}")
        if not rid:
            raise ValueError(f"{path}:{line_no}: empty {id_key}")
        if rid in seen:
            raise ValueError(f"{path}:{line_no}: duplicate {id_key} {rid!r}")
        seen.add(rid)
        records.append((rid, text))
    return records


def load_corpus(path: str | Path, fmt: str = "auto") -> list[Document]:
    """Load documents with tokens populated. Errors carry line numbers."""
    return [make_document(rid, text) for rid, text in _load_records(path, fmt, "doc_id")]


def load_queries(path: str | Path, fmt: str = "auto") -> list[Query]:
    return [make_query(rid, text) for rid, text in _load_records(path, fmt, "query_id")]


def write_corpus_jsonl(docs: list[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for d in docs:
            f.write(json.dumps({"doc_id": d.doc_id, "text": d.text}) + "\n")


def write_queries_jsonl(queries: list[Query], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for q in queries:
            f.write(json.dumps({"query_id": q.query_id, "text": q.text}) + "\n")
