"""Retriever backends: an HTTP client for a dense-retrieval service and an
in-memory lexical index used as an auditable test oracle."""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Protocol, Sequence, Tuple

import requests

from .errors import BackendUnavailable, ConfigurationError, DatasetError
from .metrics import normalize_answer
from .types import Document


@dataclass(frozen=True)
class RetrievalRequest:
    query: str
    top_k: int = 3

    def __post_init__(self):
        if not self.query:
            raise ValueError("query must be non-empty")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")


class RetrieverBackend(Protocol):
    def retrieve(self, request: RetrievalRequest) -> List[Document]: ...


class HttpRetrieverBackend:
    """POSTs ``{base_url}/retrieve`` with ``{"query", "top_k"}``.

    Expects ``{"docs": [{"title", "text", "score"}, ...]}`` ordered by
    descending score.
    """

    def __init__(
        self,
        base_url: str,
        timeout: float = 30.0,
        max_retries: int = 3,
        backoff_s: float = 0.25,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self._local = threading.local()

    def _session(self) -> requests.Session:
        if not hasattr(self._local, "session"):
            self._local.session = requests.Session()
        return self._local.session

    def retrieve(self, request: RetrievalRequest) -> List[Document]:
        payload = {"query": request.query, "top_k": request.top_k}
        url = f"{self.base_url}/retrieve"
        last_error = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._session().post(url, json=payload, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = exc
            else:
                if resp.status_code < 300:
                    return self._parse_body(resp, request.top_k)
                if 400 <= resp.status_code < 500:
                    raise ConfigurationError(
                        f"retriever rejected request ({resp.status_code}): {resp.text[:500]}"
                    )
                last_error = BackendUnavailable(f"retriever returned {resp.status_code}")
            if attempt < self.max_retries:
                time.sleep(self.backoff_s * (2**attempt))
        raise BackendUnavailable(
            f"retriever unreachable after {self.max_retries + 1} attempts: {last_error}"
        )

    @staticmethod
    def _parse_body(resp: requests.Response, top_k: int) -> List[Document]:
        try:
            docs = resp.json()["docs"]
            parsed = [
                Document(title=d.get("title", ""), text=d["text"], score=float(d.get("score", 0.0)))
                for d in docs
            ]
        except (ValueError, KeyError, TypeError) as exc:
            raise BackendUnavailable(f"malformed retriever response body: {exc}")
        return parsed[:top_k]


class LexicalRetriever:
    """Scores documents by how many distinct normalized query tokens they contain.

    Ties break by corpus insertion order. This is a deliberately simple,
    hand-checkable ranking for tests and demos, not a retrieval-quality claim.
    """

    def __init__(self, corpus: Sequence[Tuple[str, str]]):
        self._docs = []
        for title, text in corpus:
            tokens = frozenset(normalize_answer(f"{title} {text}").split())
            self._docs.append((title, text, tokens))

    def __len__(self) -> int:
        return len(self._docs)

    def retrieve(self, request: RetrievalRequest) -> List[Document]:
        query_tokens = set(normalize_answer(request.query).split())
        scored = []
        for index, (title, text, tokens) in enumerate(self._docs):
            score = float(len(query_tokens & tokens))
            scored.append((-score, index, title, text, score))
        scored.sort()
        return [
            Document(title=title, text=text, score=score)
            for (_neg, _index, title, text, score) in scored[: request.top_k]
        ]


def load_corpus_jsonl(path: str) -> List[Tuple[str, str]]:
    """Load a lexical corpus: one ``{"title", "text"}`` JSON object per line."""
    corpus: List[Tuple[str, str]] = []
    file_path = Path(path)
    if not file_path.is_file():
        raise DatasetError(f"corpus file not found: {path}")
    with file_path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                corpus.append((obj.get("title", ""), obj["text"]))
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetError(f"bad corpus record ({exc})", line=line_no)
    return corpus
