"""Prompt templates for the five policy roles.

Templates are plain UTF-8 text with ``{question}`` and ``{iter_history}``
placeholders, substituted verbatim (no format-string escaping, since rendered
content may itself contain braces). Defaults ship with the package; a
directory of per-role ``.txt`` files can override them.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import ConfigurationError


class PolicyRole(str, Enum):
    TERMINATION = "termination_decision"
    SUB_QUESTION = "sub_question"
    SELF_ANSWER = "self_answer"
    SUB_QUERY = "sub_query"
    ROLLOUT = "rollout"


# Which placeholders each role's template must carry.
_PLACEHOLDERS = {
    PolicyRole.TERMINATION: ("{question}", "{iter_history}"),
    PolicyRole.SUB_QUESTION: ("{question}",),
    PolicyRole.SELF_ANSWER: ("{question}",),
    PolicyRole.SUB_QUERY: ("{question}",),
    PolicyRole.ROLLOUT: ("{question}", "{iter_history}"),
}


@dataclass(frozen=True)
class PromptTemplateSet:
    termination_decision: str
    sub_question: str
    self_answer: str
    sub_query: str
    rollout: str

    def __post_init__(self):
        for role in PolicyRole:
            text = self.template_for(role)
            for placeholder in _PLACEHOLDERS[role]:
                if placeholder not in text:
                    raise ConfigurationError(
                        f"template {role.value!r} is missing placeholder {placeholder}"
                    )

    def template_for(self, role: PolicyRole) -> str:
        return getattr(self, role.value)

    def render(self, role: PolicyRole, question: str, iter_history: str = "") -> str:
        """Substitute placeholders; the result contains no placeholder residue."""
        text = self.template_for(role)
        text = text.replace("{question}", question)
        text = text.replace("{iter_history}", iter_history)
        return text


def load_default_templates() -> PromptTemplateSet:
    pkg = resources.files(__package__) / "prompts"
    return PromptTemplateSet(
        **{role.value: (pkg / f"{role.value}.txt").read_text(encoding="utf-8") for role in PolicyRole}
    )


def load_templates(directory: Optional[str] = None) -> PromptTemplateSet:
    """Load templates from ``directory`` (one ``<role>.txt`` per role), or defaults."""
    if directory is None:
        return load_default_templates()
    base = Path(directory)
    texts = {}
    for role in PolicyRole:
        path = base / f"{role.value}.txt"
        if not path.is_file():
            raise ConfigurationError(f"missing template file: {path}")
        texts[role.value] = path.read_text(encoding="utf-8")
    return PromptTemplateSet(**texts)
