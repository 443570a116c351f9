"""Resolve a command's category by sentence-plausibility scoring.

Each candidate category fills the template ``"[Y] is a kind of [X]"`` and a
language-model scorer rates the sentence's perplexity; the lowest-perplexity
candidate wins. Perplexity here is the exponentiated mean negative token
log-likelihood. Manual overrides bypass the scorer entirely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

from .embedding import BackendError

COMMAND_SLOT = "[Y]"
CATEGORY_SLOT = "[X]"
DEFAULT_TEMPLATE = "[Y] is a kind of [X]"


@dataclass(frozen=True)
class CategoryQuery:
    command: str
    candidates: tuple[str, ...]
    template: str = DEFAULT_TEMPLATE

    def __post_init__(self) -> None:
        if not self.command or not self.command.strip():
            raise ValueError("command text must be non-empty")
        if self.template.count(COMMAND_SLOT) != 1 or self.template.count(CATEGORY_SLOT) != 1:
            raise ValueError(
                f"template {self.template!r} must contain {COMMAND_SLOT} and "
                f"{CATEGORY_SLOT} exactly once each"
            )

    def render(self, candidate: str) -> str:
        return self.template.replace(COMMAND_SLOT, self.command).replace(
            CATEGORY_SLOT, candidate
        )


class SentenceScorer(Protocol):
    """Assigns a perplexity to a sentence; lower means more plausible."""

    def perplexity(self, sentence: str) -> float: ...


class StubSentenceScorer:
    """Fixed perplexities per substring, for tests and offline runs."""

    def __init__(self, scores: dict[str, float], default: float = 100.0):
        self.scores = scores
        self.default = default

    def perplexity(self, sentence: str) -> float:
        for needle, value in self.scores.items():
            if needle in sentence:
                return value
        return self.default


class MaskedLMSentenceScorer:
    """Pseudo-perplexity from a masked LM: mask each token in turn, average
    the negative log-likelihood of the true token, exponentiate."""

    def __init__(self, model_name: str = "bert-base-uncased"):
        try:
            import torch
            from transformers import AutoModelForMaskedLM, AutoTokenizer
        except ImportError as exc:
            raise BackendError(
                "transformers is not installed; install the 'lm' extra"
            ) from exc
        try:
            self._tokenizer = AutoTokenizer.from_pretrained(model_name)
            self._model = AutoModelForMaskedLM.from_pretrained(model_name)
            self._model.eval()
        except Exception as exc:
            raise BackendError(f"cannot load masked LM {model_name!r}: {exc}") from exc
        self._torch = torch

    def perplexity(self, sentence: str) -> float:
        torch = self._torch
        encoding = self._tokenizer(sentence, return_tensors="pt")
        input_ids = encoding["input_ids"][0]
        log_likelihoods = []
        with torch.no_grad():
            for position in range(1, input_ids.shape[0] - 1):  # skip special tokens
                masked = input_ids.clone()
                true_id = int(masked[position])
                masked[position] = self._tokenizer.mask_token_id
                logits = self._model(masked.unsqueeze(0)).logits[0, position]
                log_probs = torch.log_softmax(logits, dim=-1)
                log_likelihoods.append(float(log_probs[true_id]))
        if not log_likelihoods:
            raise BackendError(f"sentence {sentence!r} produced no scorable tokens")
        return math.exp(-sum(log_likelihoods) / len(log_likelihoods))


@dataclass(frozen=True)
class CategoryMatch:
    command: str
    category: str
    perplexities: dict[str, float]
    tied: bool = False
    overridden: bool = False

    def to_json_dict(self) -> dict:
        return {
            "command": self.command,
            "category": self.category,
            "perplexities": dict(self.perplexities),
            "tied": self.tied,
            "overridden": self.overridden,
        }


def find_category(
    query: CategoryQuery,
    scorer: SentenceScorer,
    overrides: dict[str, str] | None = None,
) -> CategoryMatch:
    """Pick the candidate whose filled-in sentence scores lowest.

    Ties go to the lexicographically first candidate and are flagged.
    An override pins the command's category without invoking the scorer.
    """
    if overrides and query.command in overrides:
        return CategoryMatch(
            command=query.command,
            category=overrides[query.command],
            perplexities={},
            overridden=True,
        )
    if not query.candidates:
        raise ValueError("no candidate categories to score")
    table = {c: float(scorer.perplexity(query.render(c))) for c in query.candidates}
    best_value = min(table.values())
    winners = sorted(c for c, v in table.items() if v == best_value)
    return CategoryMatch(
        command=query.command,
        category=winners[0],
        perplexities=table,
        tied=len(winners) > 1,
    )
