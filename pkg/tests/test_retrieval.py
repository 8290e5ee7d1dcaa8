"""Retriever backends: lexical oracle ranking, clamping, and the HTTP client."""

from __future__ import annotations

import json

import pytest

from conftest import StubRetrieverServer, TEST_CORPUS
from ragtree.errors import DatasetError
from ragtree.retrieval import (
    HttpRetrieverBackend,
    LexicalRetriever,
    RetrievalRequest,
    load_corpus_jsonl,
)


class TestRequestValidation:
    def test_empty_query_rejected(self):
        with pytest.raises(ValueError):
            RetrievalRequest(query="")

    def test_zero_top_k_rejected(self):
        with pytest.raises(ValueError):
            RetrievalRequest(query="q", top_k=0)


class TestLexical:
    def test_title_match_ranks_first(self):
        retriever = LexicalRetriever(TEST_CORPUS)
        docs = retriever.retrieve(RetrievalRequest(query="gamma", top_k=3))
        # hand-computed: "gamma" appears only in the gamma doc; the zero-score
        # tie breaks by insertion order
        assert docs[0].title == "gamma"
        assert [d.score for d in docs] == [1.0, 0.0, 0.0]
        assert docs[1].title == "alpha"

    def test_overlap_count_hand_computed(self):
        retriever = LexicalRetriever(TEST_CORPUS)
        docs = retriever.retrieve(RetrievalRequest(query="alpha beta letter", top_k=3))
        # alpha doc holds {alpha, letter}; beta doc holds {beta, alpha}; gamma doc holds {beta}
        assert [(d.title, d.score) for d in docs] == [
            ("alpha", 2.0),
            ("beta", 2.0),
            ("gamma", 1.0),
        ]

    def test_top_k_clamps_to_corpus_size(self):
        retriever = LexicalRetriever(TEST_CORPUS[:2])
        docs = retriever.retrieve(RetrievalRequest(query="alpha", top_k=3))
        assert len(docs) == 2

    def test_empty_corpus_returns_empty(self):
        retriever = LexicalRetriever([])
        assert retriever.retrieve(RetrievalRequest(query="anything", top_k=3)) == []

    def test_scores_non_increasing_and_deterministic(self):
        retriever = LexicalRetriever(TEST_CORPUS)
        first = retriever.retrieve(RetrievalRequest(query="greek alphabet", top_k=3))
        second = retriever.retrieve(RetrievalRequest(query="greek alphabet", top_k=3))
        assert [d.title for d in first] == [d.title for d in second]
        scores = [d.score for d in first]
        assert scores == sorted(scores, reverse=True)

    def test_ties_break_by_insertion_order(self):
        retriever = LexicalRetriever([("one", "same text"), ("two", "same text")])
        docs = retriever.retrieve(RetrievalRequest(query="same", top_k=2))
        assert [d.title for d in docs] == ["one", "two"]


class TestHttpRetriever:
    def test_round_trip_against_stub(self):
        server = StubRetrieverServer(LexicalRetriever(TEST_CORPUS))
        try:
            backend = HttpRetrieverBackend(base_url=server.base_url)
            docs = backend.retrieve(RetrievalRequest(query="gamma", top_k=2))
            assert len(docs) == 2
            assert docs[0].title == "gamma"
            assert docs[0].score >= docs[1].score
        finally:
            server.close()


class TestCorpusLoader:
    def test_load_and_skip_blank_lines(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        path.write_text(
            json.dumps({"title": "t1", "text": "body one"})
            + "\n\n"
            + json.dumps({"title": "t2", "text": "body two"})
            + "\n",
            encoding="utf-8",
        )
        corpus = load_corpus_jsonl(str(path))
        assert corpus == [("t1", "body one"), ("t2", "body two")]

    def test_missing_text_field_reports_line(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        path.write_text('{"title": "t"}\n', encoding="utf-8")
        with pytest.raises(DatasetError) as excinfo:
            load_corpus_jsonl(str(path))
        assert excinfo.value.line == 1

    def test_missing_file(self):
        with pytest.raises(DatasetError):
            load_corpus_jsonl("/nonexistent/corpus.jsonl")
