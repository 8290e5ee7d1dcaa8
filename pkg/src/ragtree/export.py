"""Training-data extraction from tree snapshots.

SFT examples slice the retained chain at its retrieval steps: each input is
the serialized prefix through a retrieval's documents, each output continues
through the next retrieval's sub-query (documents are injected by the live
retriever at inference time) or through the final answer. DPO pairs come from
the candidate sets generated before pruning: same-kind execution siblings and
opposing decision branches that were both scored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from .engine import Candidate, ChainRecord, TreeNode
from .errors import ExportError
from .history import DEFAULT_TEMPLATE, HistoryTemplate, render_chain, serialize_state
from .snapshot import Snapshot
from .types import Step

SFT_STRATEGIES = ("retained", "most", "least")


@dataclass(frozen=True)
class SftExample:
    question_id: str
    segment_index: int
    input: str
    output: str

    def to_dict(self) -> dict:
        return {
            "id": self.question_id,
            "segment": self.segment_index,
            "input": self.input,
            "output": self.output,
        }


@dataclass(frozen=True)
class DpoPair:
    question_id: str
    layer: int
    pair_type: str  # "execution" | "decision"
    prompt: str
    chosen: str
    rejected: str
    chosen_reward: float
    rejected_reward: float

    def to_dict(self) -> dict:
        return {
            "id": self.question_id,
            "layer": self.layer,
            "pair_type": self.pair_type,
            "prompt": self.prompt,
            "chosen": self.chosen,
            "rejected": self.rejected,
            "chosen_reward": self.chosen_reward,
            "rejected_reward": self.rejected_reward,
        }


def extract_chain(snapshot: Snapshot) -> Tuple[Tuple[Step, ...], str]:
    """The retained root-to-leaf path of a snapshot as a flat step list plus answer."""
    if snapshot.failure is not None:
        raise ExportError(
            f"snapshot for question {snapshot.question.id!r} records a failure: "
            f"{snapshot.failure.get('reason')}"
        )
    trunk = snapshot.trunk
    if trunk is None or trunk.final_state is None or trunk.final_answer is None:
        raise ExportError(f"snapshot for question {snapshot.question.id!r} has no terminal chain")
    return trunk.final_state.steps, trunk.final_answer


def _select_chain(
    snapshot: Snapshot, strategy: str, min_final_score: float
) -> Optional[ChainRecord]:
    if strategy not in SFT_STRATEGIES:
        raise ExportError(f"unknown SFT strategy {strategy!r}; expected one of {SFT_STRATEGIES}")
    if strategy == "retained":
        extract_chain(snapshot)  # validates terminality
        trunk = snapshot.trunk
        return trunk if trunk.final_score > min_final_score else None

    if snapshot.strategy != "no_pruning":
        raise ExportError(
            f"SFT strategy {strategy!r} needs alternative complete chains; "
            f"snapshot was built with the {snapshot.strategy!r} strategy"
        )
    complete = [
        c
        for c in snapshot.chains
        if c.final_answer is not None and c.final_state is not None
        and c.final_score > min_final_score
    ]
    if not complete:
        return None
    best = max(c.final_score for c in complete)
    contenders = [c for c in complete if c.final_score == best]
    key = (lambda c: (-c.retrieval_steps(), c.chain_id)) if strategy == "most" else (
        lambda c: (c.retrieval_steps(), c.chain_id)
    )
    return sorted(contenders, key=key)[0]


def segment_chain(
    chain: ChainRecord, question_id: str, template: HistoryTemplate = DEFAULT_TEMPLATE
) -> List[SftExample]:
    """Slice a terminal chain into SFT input/output segments at retrieval steps."""
    text, marks, final_start = render_chain(chain.final_state, template)
    first_step_start = marks[0].start if marks else final_start
    retrievals = [m for m in marks if m.is_retrieval]

    examples: List[SftExample] = []
    input_end = first_step_start  # segment 0 input: the question block
    for index, mark in enumerate(retrievals):
        examples.append(
            SftExample(
                question_id=question_id,
                segment_index=index,
                input=text[:input_end],
                output=text[input_end : mark.after_sub_query],
            )
        )
        input_end = mark.end
    examples.append(
        SftExample(
            question_id=question_id,
            segment_index=len(retrievals),
            input=text[:input_end],
            output=text[input_end:],
        )
    )
    return examples


def export_sft(
    snapshot: Snapshot,
    strategy: str = "retained",
    min_final_score: float = 0.0,
    template: HistoryTemplate = DEFAULT_TEMPLATE,
) -> List[SftExample]:
    """SFT examples for one snapshot; empty when no chain clears the score filter."""
    chain = _select_chain(snapshot, strategy, min_final_score)
    if chain is None:
        return []
    return segment_chain(chain, snapshot.question.id, template)


# ----------------------------------------------------------------------- DPO


def _retained_candidate(candidates: Sequence[Candidate]) -> Optional[Candidate]:
    for candidate in candidates:
        if candidate.retained:
            return candidate
    return None


def _best_candidate(candidates: Sequence[Candidate]) -> Optional[Candidate]:
    best = None
    for candidate in candidates:
        if best is None or candidate.reward > best.reward:
            best = candidate
    return best


def _resolution_text(kind: str, candidate: Candidate, template: HistoryTemplate) -> str:
    if kind == "self_answer":
        return template.self_answer_block.format(answer=candidate.content)
    return template.sub_query_line.format(sub_query=candidate.content)


def _node_pairs(
    node: TreeNode,
    question_id: str,
    margin: float,
    template: HistoryTemplate,
    chain_final_score: float,
) -> List[DpoPair]:
    pairs: List[DpoPair] = []
    state_prefix = serialize_state(node.state, template)
    chosen_sub_question = _retained_candidate(node.sub_question_candidates)
    resolution_prefix = None
    if chosen_sub_question is not None:
        resolution_prefix = state_prefix + template.step_header.format(
            index=node.layer, sub_question=chosen_sub_question.content
        )

    # Execution pairs: the retained candidate against each same-kind sibling.
    for kind in ("sub_question", "self_answer", "sub_query"):
        candidates = node.candidates_of(kind)
        retained = _retained_candidate(candidates)
        if retained is None:
            continue
        prefix = state_prefix if kind == "sub_question" else resolution_prefix
        if prefix is None:
            continue
        for sibling in candidates:
            if sibling is retained:
                continue
            if retained.reward - sibling.reward >= margin:
                pairs.append(
                    DpoPair(
                        question_id=question_id,
                        layer=node.layer,
                        pair_type="execution",
                        prompt=prefix,
                        chosen=retained.content,
                        rejected=sibling.content,
                        chosen_reward=retained.reward,
                        rejected_reward=sibling.reward,
                    )
                )

    # Retrieval decision pair: both resolution branches scored at this node.
    best_sa = _best_candidate(node.self_answer_candidates)
    best_sq = _best_candidate(node.sub_query_candidates)
    if best_sa is not None and best_sq is not None and resolution_prefix is not None:
        # Equal rewards prefer the cheaper self-answer branch.
        if best_sa.reward >= best_sq.reward:
            winner, winner_kind = best_sa, "self_answer"
            loser, loser_kind = best_sq, "sub_query"
        else:
            winner, winner_kind = best_sq, "sub_query"
            loser, loser_kind = best_sa, "self_answer"
        if winner.reward - loser.reward >= margin:
            pairs.append(
                DpoPair(
                    question_id=question_id,
                    layer=node.layer,
                    pair_type="decision",
                    prompt=resolution_prefix,
                    chosen=_resolution_text(winner_kind, winner, template),
                    rejected=_resolution_text(loser_kind, loser, template),
                    chosen_reward=winner.reward,
                    rejected_reward=loser.reward,
                )
            )

    # Termination decision pair: both outcomes scored.
    terminate_side: Optional[Tuple[str, float]] = None
    if node.terminate_probe is not None:
        terminate_side = node.terminate_probe
    elif node.terminal_answer is not None and node.sub_question_candidates:
        terminate_side = (node.terminal_answer, chain_final_score)
    continue_side = _retained_candidate(node.sub_question_candidates) or _best_candidate(
        node.sub_question_candidates
    )
    if terminate_side is not None and continue_side is not None:
        terminate_text = template.final_answer_block.format(answer=terminate_side[0])
        continue_text = template.step_header.format(
            index=node.layer, sub_question=continue_side.content
        )
        if terminate_side[1] >= continue_side.reward:
            chosen_text, chosen_reward = terminate_text, terminate_side[1]
            rejected_text, rejected_reward = continue_text, continue_side.reward
        else:
            chosen_text, chosen_reward = continue_text, continue_side.reward
            rejected_text, rejected_reward = terminate_text, terminate_side[1]
        if chosen_reward - rejected_reward >= margin:
            pairs.append(
                DpoPair(
                    question_id=question_id,
                    layer=node.layer,
                    pair_type="decision",
                    prompt=state_prefix,
                    chosen=chosen_text,
                    rejected=rejected_text,
                    chosen_reward=chosen_reward,
                    rejected_reward=rejected_reward,
                )
            )
    return pairs


def export_dpo(
    snapshot: Snapshot,
    margin: float = 0.1,
    template: HistoryTemplate = DEFAULT_TEMPLATE,
) -> List[DpoPair]:
    """All preference pairs of a snapshot, deterministically ordered and deduplicated.

    Deviation chains of no-pruning snapshots contribute only their fork-onward
    nodes; prefix nodes are memoryless re-derivations of the trunk and would
    duplicate its pairs.
    """
    if margin < 0:
        raise ExportError("margin must be >= 0")
    if snapshot.failure is not None:
        return []
    pairs: List[DpoPair] = []
    seen = set()
    for chain in snapshot.chains:
        nodes = chain.nodes if chain.fork_layer == 0 else chain.nodes[chain.fork_layer - 1 :]
        for node in nodes:
            for pair in _node_pairs(
                node, snapshot.question.id, margin, template, chain.final_score
            ):
                key = (pair.layer, pair.pair_type, pair.prompt, pair.chosen, pair.rejected)
                if key not in seen:
                    seen.add(key)
                    pairs.append(pair)
    return pairs


# --------------------------------------------------------------------- writers


def _write_jsonl(records: Sequence[dict], path: str) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n")


def write_sft_jsonl(examples: Sequence[SftExample], path: str) -> None:
    _write_jsonl([e.to_dict() for e in examples], path)


def write_dpo_jsonl(pairs: Sequence[DpoPair], path: str) -> None:
    _write_jsonl([p.to_dict() for p in pairs], path)
