"""Batch expansion over a question set with resumable snapshots and a manifest."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

from .engine import TreeBuilder
from .errors import NodeExpansionFailed, RagTreeError
from .snapshot import (
    SCHEMA_VERSION,
    build_result_to_dict,
    failure_to_dict,
    save_snapshot,
)
from .types import Question


def snapshot_path(output_dir: str, question_id: str) -> Path:
    safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in question_id)
    return Path(output_dir) / f"{safe}.json"


def _snapshot_is_valid(path: Path, question_id: str) -> bool:
    try:
        record = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError):
        return False
    return (
        record.get("schema_version") == SCHEMA_VERSION
        and record.get("question", {}).get("id") == question_id
    )


_LEDGER_KEYS = ("policy_calls", "rollout_calls", "finalize_calls", "retrieval_calls", "nodes_expanded")


@dataclass
class ManifestItem:
    question_id: str
    status: str  # "ok" | "failed" | "skipped"
    snapshot: str
    error: Optional[str] = None
    ledger: Optional[dict] = None


@dataclass
class Manifest:
    items: List[ManifestItem] = field(default_factory=list)

    @property
    def counts(self) -> dict:
        summary = {"ok": 0, "failed": 0, "skipped": 0}
        for item in self.items:
            summary[item.status] += 1
        return summary

    @property
    def hard_failures(self) -> int:
        return self.counts["failed"]

    @property
    def ledger_totals(self) -> dict:
        totals = {key: 0 for key in _LEDGER_KEYS}
        for item in self.items:
            if item.ledger:
                for key in _LEDGER_KEYS:
                    totals[key] += item.ledger.get(key, 0)
        return totals

    def to_dict(self) -> dict:
        return {
            "counts": self.counts,
            "ledger_totals": self.ledger_totals,
            "items": [
                {
                    "id": item.question_id,
                    "status": item.status,
                    "snapshot": item.snapshot,
                    "error": item.error,
                    "ledger": item.ledger,
                }
                for item in self.items
            ],
        }

    def save(self, path: str) -> None:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(
            json.dumps(self.to_dict(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )


def expand_batch(
    questions: Sequence[Question],
    builder_factory: Callable[[], TreeBuilder],
    output_dir: str,
    resume: bool = True,
    concurrency: int = 1,
    on_progress: Optional[Callable[[str, str], None]] = None,
) -> Manifest:
    """Expand every question, writing one snapshot per question plus a manifest.

    With ``resume`` enabled, questions whose snapshot already exists and
    validates are skipped without touching any backend. Each worker uses its
    own builder, so backends only need to be shareable, not the tree state.
    """
    Path(output_dir).mkdir(parents=True, exist_ok=True)
    manifest = Manifest()

    pending: List[Question] = []
    for question in questions:
        path = snapshot_path(output_dir, question.id)
        if resume and path.exists() and _snapshot_is_valid(path, question.id):
            manifest.items.append(ManifestItem(question.id, "skipped", str(path)))
            if on_progress:
                on_progress(question.id, "skipped")
        else:
            pending.append(question)

    def expand_one(question: Question) -> ManifestItem:
        path = snapshot_path(output_dir, question.id)
        builder = builder_factory()
        try:
            result = builder.build_tree(question)
        except NodeExpansionFailed as exc:
            save_snapshot(
                failure_to_dict(question, builder.config, exc.layer, exc.reason), str(path)
            )
            return ManifestItem(question.id, "failed", str(path), error=str(exc))
        except RagTreeError as exc:
            return ManifestItem(question.id, "failed", str(path), error=str(exc))
        save_snapshot(build_result_to_dict(result), str(path))
        counters = {key: getattr(result.ledger, key) for key in _LEDGER_KEYS}
        return ManifestItem(question.id, "ok", str(path), ledger=counters)

    if concurrency > 1 and len(pending) > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            done = list(pool.map(expand_one, pending))
    else:
        done = [expand_one(q) for q in pending]

    for item in done:
        manifest.items.append(item)
        if on_progress:
            on_progress(item.question_id, item.status)

    # Manifest order follows the input dataset order exactly.
    order = {q.id: i for i, q in enumerate(questions)}
    manifest.items.sort(key=lambda item: order[item.question_id])
    manifest.save(str(Path(output_dir) / "manifest.json"))
    return manifest
