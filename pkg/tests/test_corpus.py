"""Byte tokenizer, vocabulary layout, and corpus loaders."""

import numpy as np
import pytest

from rrk.corpus import (
    Vocabulary,
    build_vocab,
    detokenize,
    load_corpus,
    load_queries,
    make_document,
    make_query,
    tokenize,
    truncate_query,
    write_corpus_jsonl,
)


@pytest.fixture
def tiny_corpus():
    return [make_document("d1", "hello world"), make_document("d2", "bonjour")]


class TestVocabulary:
    def test_size_is_bytes_plus_specials(self, tiny_corpus):
        vocab = build_vocab(tiny_corpus, l_memory=8)
        assert vocab.vocab_size == 256 + 3 + 8 == 267

    def test_special_ids_distinct_and_outside_byte_range(self, tiny_corpus):
        vocab = build_vocab(tiny_corpus, l_memory=8)
        specials = [vocab.pad_id, vocab.eos_id, vocab.sep_id, *vocab.memory_token_ids]
        assert len(set(specials)) == len(specials)
        assert all(s >= 256 for s in specials)
        assert len(vocab.memory_token_ids) == 8

    def test_same_corpus_same_vocab(self, tiny_corpus):
        assert build_vocab(tiny_corpus) == build_vocab(tiny_corpus)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError, match="empty corpus"):
            build_vocab([])

    def test_ids_dense(self, tiny_corpus):
        vocab = build_vocab(tiny_corpus, l_memory=3)
        assert sorted([*range(256), vocab.pad_id, vocab.eos_id, vocab.sep_id,
                       *vocab.memory_token_ids]) == list(range(vocab.vocab_size))


class TestTokenize:
    def test_empty_string(self):
        assert tokenize("") == ()

    def test_ascii_bytes(self):
        assert tokenize("ab") == (ord("a"), ord("b"))

    def test_round_trip_random_utf8(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            codepoints = rng.integers(1, 0x10000, size=rng.integers(0, 40))
            text = "".join(chr(c) for c in codepoints if chr(c).isprintable())
            assert detokenize(tokenize(text)) == text

    def test_never_emits_special_ids(self):
        vocab = Vocabulary()
        tokens = tokenize("قطة cat 猫" * 10)
        assert not set(tokens) & vocab.special_ids()

    def test_detokenize_rejects_special_ids(self):
        vocab = Vocabulary()
        with pytest.raises(ValueError, match="not a byte unit"):
            detokenize([vocab.pad_id])

    def test_query_truncation_keeps_head(self):
        q = make_query("q1", "abcdefgh")
        assert truncate_query(q, 3).tokens == tokenize("abc")
        assert truncate_query(q, 99) is q


class TestLoaders:
    def test_jsonl_two_lines(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text('{"doc_id": "a", "text": "x"}\n{"doc_id": "b", "text": "y"}\n')
        docs = load_corpus(p)
        assert [d.doc_id for d in docs] == ["a", "b"]
        assert docs[0].tokens == tokenize("x")

    def test_duplicate_doc_id_rejected(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text('{"doc_id": "a", "text": "x"}\n{"doc_id": "a", "text": "y"}\n')
        with pytest.raises(ValueError, match="duplicate"):
            load_corpus(p)

    def test_malformed_line_reports_line_number(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text('{"doc_id": "a", "text": "x"}\nnot json\n')
        with pytest.raises(ValueError, match=":2"):
            load_corpus(p)

    def test_tsv_and_jsonl_equivalent(self, tmp_path):
        rows = [("a", "steel mill"), ("b", "river delta")]
        jsonl, tsv = tmp_path / "c.jsonl", tmp_path / "c.tsv"
        write_corpus_jsonl([make_document(i, t) for i, t in rows], jsonl)
        tsv.write_text("".join(f"{i}\t{t}\n" for i, t in rows))
        assert load_corpus(jsonl) == load_corpus(tsv)

    def test_query_loader(self, tmp_path):
        p = tmp_path / "q.jsonl"
        p.write_text('{"query_id": "q1", "text": "find me"}\n')
        assert load_queries(p)[0].tokens == tokenize("find me")
