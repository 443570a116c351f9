"""Prompt-based attribute mining.

Templates like ``"a face with [MASK] eyes"`` are sent to a text-infill
backend; the predicted fill words, composed with the category keyword,
become candidate attribute texts ("blue eyes", ...). Mining is advisory:
it writes candidate files for human curation and never edits a hierarchy.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

from .embedding import BackendError
from .hierarchy import MAX_ATTRIBUTE_WORDS

MASK_SLOT = "[MASK]"
KEYWORD_SLOT = "[X]"

_WORD_OK = re.compile(r"^[a-z0-9][a-z0-9' -]*$")


@dataclass(frozen=True)
class MiningPrompt:
    """A template with one mask slot and one keyword slot."""

    template: str
    keyword: str

    def __post_init__(self) -> None:
        if self.template.count(MASK_SLOT) != 1:
            raise ValueError(
                f"template {self.template!r} must contain exactly one {MASK_SLOT}"
            )
        if self.template.count(KEYWORD_SLOT) != 1:
            raise ValueError(
                f"template {self.template!r} must contain exactly one {KEYWORD_SLOT}"
            )
        if not self.keyword or self.keyword != self.keyword.strip().lower():
            raise ValueError(f"keyword {self.keyword!r} must be a lowercase noun")

    def render(self) -> str:
        """The prompt sent to the infill backend; keeps the single mask token."""
        return self.template.replace(KEYWORD_SLOT, self.keyword)


class TextInfillBackend(Protocol):
    """Predicts fill words for the mask token of a prompt, best first."""

    def infill(self, prompt: str, top_k: int) -> list[str]: ...


class StubInfillBackend:
    """Fixed answers per keyword, for tests and offline runs."""

    def __init__(self, answers: dict[str, list[str]]):
        self.answers = answers

    def infill(self, prompt: str, top_k: int) -> list[str]:
        for keyword, words in self.answers.items():
            if keyword in prompt:
                return words[:top_k]
        return []


class MaskedLMInfillBackend:
    """Masked-language-model infilling via transformers (optional extra)."""

    def __init__(self, model_name: str = "bert-base-uncased"):
        try:
            from transformers import pipeline
        except ImportError as exc:
            raise BackendError(
                "transformers is not installed; install the 'lm' extra"
            ) from exc
        try:
            self._pipe = pipeline("fill-mask", model=model_name)
        except Exception as exc:
            raise BackendError(f"cannot load masked LM {model_name!r}: {exc}") from exc
        self._mask_token = self._pipe.tokenizer.mask_token

    def infill(self, prompt: str, top_k: int) -> list[str]:
        prompt = prompt.replace(MASK_SLOT, self._mask_token)
        results = self._pipe(prompt, top_k=top_k)
        return [r["token_str"].strip().lower() for r in results]


@dataclass(frozen=True)
class MiningResult:
    template: str
    keyword: str
    candidates: tuple[str, ...]

    def to_json_dict(self) -> dict:
        return {
            "template": self.template,
            "keyword": self.keyword,
            "candidates": list(self.candidates),
        }


def _compose(word: str, keyword: str) -> str | None:
    word = word.strip().lower()
    if not word or not _WORD_OK.match(word):
        return None
    text = f"{word} {keyword}"
    if len(text.split()) > MAX_ATTRIBUTE_WORDS:
        return None
    return text


def mine_attributes(
    prompts: Sequence[MiningPrompt],
    infiller: TextInfillBackend,
    top_k: int = 10,
) -> list[MiningResult]:
    """Collect candidate attribute texts per prompt, deduplicated and lowercased."""
    if top_k < 1:
        raise ValueError("top_k must be at least 1")
    results = []
    for prompt in prompts:
        words = infiller.infill(prompt.render(), top_k)
        seen: set[str] = set()
        candidates: list[str] = []
        for word in words:
            text = _compose(word, prompt.keyword)
            if text is not None and text not in seen:
                seen.add(text)
                candidates.append(text)
        results.append(
            MiningResult(
                template=prompt.template,
                keyword=prompt.keyword,
                candidates=tuple(candidates),
            )
        )
    return results


def write_mining_results(results: Sequence[MiningResult], path: str | Path) -> None:
    """One JSON record per (prompt, keyword), in JSON-lines form."""
    with open(path, "w", encoding="utf-8") as fh:
        for result in results:
            fh.write(json.dumps(result.to_json_dict(), sort_keys=True) + "\n")
