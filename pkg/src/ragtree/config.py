"""Run configuration, dataset loading, and backend construction.

The config file is JSON and round-trips losslessly through
``RunConfig.from_dict`` / ``to_dict``. CLI flags override individual fields.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from .engine import ExpansionConfig
from .errors import ConfigurationError, DatasetError
from .history import DEFAULT_TEMPLATE, HistoryTemplate
from .policy import HttpPolicyBackend, PolicyBackend, RoutedPolicyBackend
from .retrieval import HttpRetrieverBackend, LexicalRetriever, RetrieverBackend, load_corpus_jsonl
from .templates import PromptTemplateSet, load_templates
from .types import Question


@dataclass(frozen=True)
class PolicySettings:
    kind: str = "http"  # "http" | "scripted"
    base_url: str = "http://127.0.0.1:8000/v1"
    model: str = "policy-model"
    auth_env: str = "RAGTREE_POLICY_TOKEN"
    timeout: float = 60.0
    max_retries: int = 3
    backoff_s: float = 0.25
    # Optional second endpoint serving self-knowledge answers (the trainee model).
    self_answer_base_url: Optional[str] = None
    self_answer_model: Optional[str] = None
    # Scripted-backend knobs (deterministic fixture; used by bench and demos).
    scripted_profile: str = "bench"
    scripted_rollout_searches: Optional[int] = None
    scripted_terminate_after: Optional[int] = None


@dataclass(frozen=True)
class RetrieverSettings:
    kind: str = "http"  # "http" | "lexical"
    base_url: str = "http://127.0.0.1:8001"
    corpus_path: Optional[str] = None
    timeout: float = 30.0
    max_retries: int = 3
    backoff_s: float = 0.25


@dataclass(frozen=True)
class PathSettings:
    dataset: Optional[str] = None
    templates_dir: Optional[str] = None
    output_dir: str = "runs"


@dataclass(frozen=True)
class RunConfig:
    expansion: ExpansionConfig = field(default_factory=ExpansionConfig)
    policy: PolicySettings = field(default_factory=PolicySettings)
    retriever: RetrieverSettings = field(default_factory=RetrieverSettings)
    paths: PathSettings = field(default_factory=PathSettings)
    concurrency: int = 1
    resume: bool = True
    doc_char_budget: int = 1500

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, record: dict) -> "RunConfig":
        known = {"expansion", "policy", "retriever", "paths", "concurrency", "resume", "doc_char_budget"}
        unknown = set(record) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(
            expansion=ExpansionConfig(**record.get("expansion", {})),
            policy=PolicySettings(**record.get("policy", {})),
            retriever=RetrieverSettings(**record.get("retriever", {})),
            paths=PathSettings(**record.get("paths", {})),
            concurrency=record.get("concurrency", 1),
            resume=record.get("resume", True),
            doc_char_budget=record.get("doc_char_budget", 1500),
        )

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        try:
            record = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}")
        except ValueError as exc:
            raise ConfigurationError(f"config {path} is not valid JSON: {exc}")
        config = cls.from_dict(record)
        config.validate_paths()
        return config

    def validate_paths(self) -> None:
        for label, value in (
            ("paths.dataset", self.paths.dataset),
            ("paths.templates_dir", self.paths.templates_dir),
            ("retriever.corpus_path", self.retriever.corpus_path),
        ):
            if value is not None and not Path(value).exists():
                raise ConfigurationError(f"{label} does not exist: {value}")

    def history_template(self) -> HistoryTemplate:
        if self.doc_char_budget == DEFAULT_TEMPLATE.doc_char_budget:
            return DEFAULT_TEMPLATE
        from dataclasses import replace

        return replace(DEFAULT_TEMPLATE, doc_char_budget=self.doc_char_budget)


def load_dataset(path: str) -> List[Question]:
    """Parse a question file: one ``{"id", "question", "golden_answers"}`` per line."""
    file_path = Path(path)
    if not file_path.is_file():
        raise DatasetError(f"dataset file not found: {path}")
    questions: List[Question] = []
    seen: Dict[str, int] = {}
    with file_path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except ValueError as exc:
                raise DatasetError(f"invalid JSON ({exc})", line=line_no)
            if not isinstance(record, dict):
                raise DatasetError("record is not an object", line=line_no)
            missing = [k for k in ("id", "question", "golden_answers") if k not in record]
            if missing:
                raise DatasetError(f"missing fields: {missing}", line=line_no)
            qid = str(record["id"])
            if qid in seen:
                raise DatasetError(
                    f"duplicate question id {qid!r} (first seen on line {seen[qid]})", line=line_no
                )
            seen[qid] = line_no
            golds = record["golden_answers"]
            if not isinstance(golds, list) or not golds or any(not str(g).strip() for g in golds):
                raise DatasetError("golden_answers must be a non-empty list of non-empty strings", line=line_no)
            try:
                questions.append(
                    Question(id=qid, text=str(record["question"]), gold_answers=tuple(str(g) for g in golds))
                )
            except ValueError as exc:
                raise DatasetError(str(exc), line=line_no)
    return questions


def build_policy_backend(config: RunConfig, questions: Optional[List[Question]] = None) -> PolicyBackend:
    settings = config.policy
    if settings.kind == "http":
        default = HttpPolicyBackend(
            base_url=settings.base_url,
            model=settings.model,
            auth_env=settings.auth_env,
            timeout=settings.timeout,
            max_retries=settings.max_retries,
            backoff_s=settings.backoff_s,
        )
        if settings.self_answer_base_url:
            trainee = HttpPolicyBackend(
                base_url=settings.self_answer_base_url,
                model=settings.self_answer_model or settings.model,
                auth_env=settings.auth_env,
                timeout=settings.timeout,
                max_retries=settings.max_retries,
                backoff_s=settings.backoff_s,
            )
            return RoutedPolicyBackend(default=default, self_answer=trainee)
        return default
    if settings.kind == "scripted":
        from .scripted import make_bench_policy

        gold = {q.text: q.gold_answers[0] for q in questions or []}
        rollout_searches = settings.scripted_rollout_searches
        if rollout_searches is None:
            rollout_searches = config.expansion.t_max - 1
        return make_bench_policy(
            gold,
            rollout_searches=rollout_searches,
            terminate_after=settings.scripted_terminate_after,
        )
    raise ConfigurationError(f"unknown policy backend kind {settings.kind!r}")


def build_retriever_backend(config: RunConfig) -> RetrieverBackend:
    settings = config.retriever
    if settings.kind == "http":
        return HttpRetrieverBackend(
            base_url=settings.base_url,
            timeout=settings.timeout,
            max_retries=settings.max_retries,
            backoff_s=settings.backoff_s,
        )
    if settings.kind == "lexical":
        if settings.corpus_path:
            corpus = load_corpus_jsonl(settings.corpus_path)
        else:
            from .scripted import BENCH_CORPUS

            corpus = BENCH_CORPUS
        return LexicalRetriever(corpus)
    raise ConfigurationError(f"unknown retriever backend kind {settings.kind!r}")


def build_templates(config: RunConfig) -> PromptTemplateSet:
    return load_templates(config.paths.templates_dir)
